"""Safe controller synthesis for partially unknown systems via learned
symbolic abstractions."""

from .abstraction import (
    FiniteSystem,
    SymbolicModel,
    UpdateLog,
    build_full,
    check_asr_finite,
    finite_system_of,
    lazy_update,
    load_model,
    save_model,
    successor_interval,
)
from .bench import CONFIGS, acc_config, toy1d_config, toy2d_config
from .explore import ExplorationRun, RunConfig, run, safe_explore, select_input
from .gp import (
    Dataset,
    GpPosterior,
    IntervalCache,
    SeKernel,
    continuity_constant,
    global_bound,
    make_rkhs_function,
)
from .plant import PLANTS, Plant, make_acc_plant, make_toy1d_plant, make_toy2d_plant
from .synthesis import (
    GameTrace,
    SafetyController,
    load_controller,
    pre,
    pre_incremental,
    refine_at,
    safety_game,
    save_controller,
)
from .tsys import (
    IndexBox,
    Lattice,
    SafeSet,
    StateSet,
    box_members,
    interior,
    lattice_points_of_set,
)

__version__ = "0.1.0"
