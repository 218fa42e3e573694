"""Cruise-control benchmark geometry and the full-resolution run."""

import numpy as np
import pytest

from safeabs.bench import (
    ACC_EXCLUSION_FLIPPED,
    ACC_EXCLUSION_LITERAL,
    acc_config,
    acc_margin_check,
)
from safeabs.errors import ConfigError
from safeabs.explore import _Setup
from safeabs.tsys import SafeSet

from conftest import winning_counts


class TestAccGeometry:
    def test_input_lattice_has_eleven_points(self):
        setup = _Setup(acc_config())
        assert setup.input_lattice.size == 11
        np.testing.assert_allclose(
            setup.input_lattice.points()[:, 0], np.arange(-5, 6) * 0.2
        )

    def test_working_box_inflates_lead_speed_band(self):
        cfg = acc_config()
        assert cfg.state_box[0] == (18.0 - cfg.eps, 25.0 + cfg.eps)
        assert cfg.state_box[1:] == cfg.strict_box[1:]
        # The eps-interior of the working box recovers the full strict band
        # in dimension 0, so no lead-speed state is lost to the shrink.
        setup = _Setup(cfg)
        pts = setup.q0.points()
        assert pts[:, 0].min() == pytest.approx(18.0)
        assert pts[:, 0].max() == pytest.approx(25.0)

    def test_flipped_exclusion_contains_initial_state(self):
        x0 = np.array([20.0, 20.0, 60.0])
        flipped = SafeSet(acc_config().strict_box, ACC_EXCLUSION_FLIPPED)
        literal = SafeSet(acc_config().strict_box, ACC_EXCLUSION_LITERAL)
        assert flipped.contains(x0)
        assert not literal.contains(x0)
        with pytest.raises(ConfigError):
            acc_config(literal_exclusion=True).validate()

    def test_envelope_only_on_lead_speed(self):
        setup = _Setup(acc_config())
        assert setup.plant.envelope[0] is not None
        assert setup.plant.envelope[1] is None and setup.plant.envelope[2] is None
        np.testing.assert_array_equal(setup.learn_dims, [False, True, True])

    def test_conservative_bound_margin(self):
        check = acc_margin_check()
        assert check["ok"]
        covered = check["d_max"] > 0
        assert np.all(check["global_bound"][covered] >= 2.0 * check["d_max"][covered])

    def test_state_counts_reported(self, capsys):
        # Diagnostic, not asserted: safe lattice state counts at full
        # resolution under both exclusion readings.
        for literal in (False, True):
            cfg = acc_config(literal_exclusion=literal)
            excl = ACC_EXCLUSION_LITERAL if literal else ACC_EXCLUSION_FLIPPED
            from safeabs.tsys import Lattice, lattice_points_of_set

            lat = Lattice(cfg.eta_x, [b[0] for b in cfg.state_box],
                          [b[1] for b in cfg.state_box])
            n = len(lattice_points_of_set(lat, SafeSet(cfg.state_box, excl)))
            print(f"safe lattice states (eta_x=0.5, "
                  f"{'literal' if literal else 'flipped'} exclusion): {n}")
        assert True


class TestAccRun:
    def test_full_resolution_run(self, acc_run):
        res = acc_run
        assert res.termination == "converged"
        wins = winning_counts(res)
        assert all(b >= a for a, b in zip(wins, wins[1:]))
        assert wins[-1] > wins[0]
        strict = SafeSet(res.config.strict_box, res.config.exclusions)
        assert np.all(strict.contains(res.trajectory_x))

    def test_lead_speed_stays_in_envelope(self, acc_run):
        x1 = acc_run.trajectory_x[:, 0]
        assert np.all((x1 >= 19.0 - 1e-9) & (x1 <= 21.0 + 1e-9))

    def test_transition_counts_reported(self, acc_run, capsys):
        # Diagnostic, not asserted: per-batch transition totals.
        for rec in acc_run.records:
            print(f"batch {rec.n}: winning={rec.winning} "
                  f"transitions={rec.transitions}")
        assert acc_run.records[-1].transitions > 0
