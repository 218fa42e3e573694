"""Command-line interface: run / inspect / verify / report."""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import struct
import sys

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import numpy as np

from . import abstraction, artifacts, synthesis
from .bench import CONFIGS
from .errors import (
    ConfigError,
    InitialSetInfeasibleError,
    FormatError,
    SafeAbsError,
)
from .explore import RunConfig, run as run_loop
from .report import write_report
from .tsys import BoxCounter

_ACC_GEOMETRY_KEYS = (
    "eta_x", "eta_u", "eps", "t_exp", "rho", "lazy", "incremental_pre",
    "max_batches", "literal_exclusion",
)


def _tuplize(name: str, value):
    if name in ("state_box", "strict_box"):
        return tuple(tuple(float(v) for v in row) for row in value)
    if name == "exclusions":
        return tuple((tuple(float(v) for v in a), float(b)) for a, b in value)
    if name in ("lambdas", "bounds", "initial"):
        return tuple(float(v) for v in value)
    return value


def load_config(path: str) -> RunConfig:
    """Build a run configuration from a TOML file over benchmark defaults."""
    if os.path.exists(path):
        with open(path, "rb") as fh:
            try:
                data = tomllib.load(fh)
            except tomllib.TOMLDecodeError as exc:
                raise ConfigError(f"cannot parse {path}: {exc}") from exc
    elif path in CONFIGS:
        data = {"system": path}
    else:
        raise ConfigError(f"config file {path!r} not found")
    schema = data.pop("schema", 1)
    if schema != 1:
        raise ConfigError(f"unsupported config schema {schema!r}")
    if "system" not in data:
        raise ConfigError("config must name a system")
    system = data.pop("system")
    if system not in CONFIGS:
        raise ConfigError(f"unknown system {system!r}")
    field_names = {f.name for f in dataclasses.fields(RunConfig)}
    allowed = field_names | {"literal_exclusion"}
    unknown = set(data) - allowed
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    if system == "acc":
        geo = {k: data.pop(k) for k in _ACC_GEOMETRY_KEYS if k in data}
        cfg = CONFIGS[system](seed=int(data.pop("seed", 0)), **geo)
        if data:
            cfg = dataclasses.replace(cfg, **{k: _tuplize(k, v) for k, v in data.items()})
    else:
        data.pop("literal_exclusion", None)
        cfg = CONFIGS[system](**{k: _tuplize(k, v) for k, v in data.items()})
    cfg.validate()
    return cfg


def _onoff(value: str) -> bool:
    if value not in ("on", "off"):
        raise argparse.ArgumentTypeError("expected 'on' or 'off'")
    return value == "on"


def cmd_run(args) -> int:
    try:
        cfg = load_config(args.config)
        overrides = {}
        if args.seed is not None:
            overrides["seed"] = args.seed
        if args.threads is not None:
            overrides["threads"] = args.threads
        if args.lazy is not None:
            overrides["lazy"] = args.lazy
        if args.incremental_pre is not None:
            overrides["incremental_pre"] = args.incremental_pre
        if args.max_batches is not None:
            overrides["max_batches"] = args.max_batches
        if overrides:
            cfg = dataclasses.replace(cfg, **overrides)
        cfg.validate()
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    try:
        result = run_loop(cfg)
    except InitialSetInfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return 3
    artifacts.write_run(result, args.out)
    print(
        f"{cfg.system}: {result.termination} after {len(result.records) - 1} batches, "
        f"winning={len(result.controller.winning)}, artifacts in {args.out}"
    )
    return 0 if result.termination == "converged" else 2


def _inspect_binary(path: str) -> dict:
    with open(path, "rb") as fh:
        magic = fh.read(4)
    if magic == b"SABM":
        m = abstraction.load_model(path)
        return {
            "kind": "model",
            "batch": m.batch,
            "eps": m.eps,
            "eta_x": m.state_lattice.eta,
            "lattice_points": m.state_lattice.size,
            "safe_states": len(m.safe),
            "inputs": m.input_lattice.size,
            "transitions": m.n_transitions(),
        }
    if magic == b"SABC":
        c = synthesis.load_controller(path)
        return {
            "kind": "controller",
            "eps": c.eps,
            "eta_x": c.state_lattice.eta,
            "lattice_points": c.state_lattice.size,
            "inputs": c.input_lattice.size,
            "winning": len(c.winning),
        }
    raise FormatError(f"unrecognized magic {magic!r} in {path}")


def cmd_inspect(args) -> int:
    try:
        if os.path.isdir(args.artifact):
            info = artifacts.read_summary(os.path.join(args.artifact, "summary.json"))
        else:
            info = _inspect_binary(args.artifact)
        print(json.dumps(info, indent=2, sort_keys=True))
        return 0
    except (OSError, SafeAbsError, json.JSONDecodeError) as exc:
        print(f"inspect error: {exc}", file=sys.stderr)
        return 1


def verify_run(out_dir: str) -> list:
    """Consistency checks over stored artifacts; returns failure messages."""
    failures = []
    summary = artifacts.read_summary(os.path.join(out_dir, "summary.json"))
    strict = artifacts.strict_safe_set(summary)
    traj = artifacts.read_trajectory(os.path.join(out_dir, "trajectory.csv"))
    bad = np.count_nonzero(~strict.contains(traj["x"]))
    if bad:
        failures.append(f"trajectory: {bad} states outside the safe set")

    ctrl = synthesis.load_controller(os.path.join(out_dir, "controller.bin"))
    model = abstraction.load_model(os.path.join(out_dir, "model.bin"))
    flats = ctrl.winning.flats()
    if len(flats):
        if not np.all(np.any(ctrl.admissible[flats], axis=1)):
            failures.append("controller: winning state without admissible input")
        counter = BoxCounter(model.state_lattice, ctrl.winning.mask)
        lat_lo = np.asarray(model.state_lattice.lo_idx)
        for j in range(model.n_inputs):
            idx = flats[ctrl.admissible[flats, j]]
            if not len(idx):
                continue
            if not np.all(model.enabled[idx, j]):
                failures.append(f"controller: admissible but disabled input {j}")
                continue
            blo = model.box_lo[idx, j] - lat_lo
            bhi = model.box_hi[idx, j] - lat_lo
            card = np.prod(bhi - blo + 1, axis=-1)
            if not np.all(counter.counts(blo, bhi) == card):
                failures.append(f"controller: successor box escapes winning set (input {j})")

    mdir = os.path.join(out_dir, "models")
    if os.path.isdir(mdir):
        paths = sorted(
            (p for p in os.listdir(mdir) if p.startswith("model_")),
            key=lambda p: int(p.split("_")[1].split(".")[0]),
        )
        prev = None
        for p in paths:
            cur = abstraction.load_model(os.path.join(mdir, p))
            if prev is not None:
                if np.any(prev.enabled & ~cur.enabled):
                    failures.append(f"{p}: previously enabled input became disabled")
                both = prev.enabled & cur.enabled
                if np.any(both):
                    s, u = np.nonzero(both)
                    ok = np.all(cur.box_lo[s, u] >= prev.box_lo[s, u]) and np.all(
                        cur.box_hi[s, u] <= prev.box_hi[s, u]
                    )
                    if not ok:
                        failures.append(f"{p}: successor box grew across batches")
            prev = cur
    return failures


def cmd_verify(args) -> int:
    try:
        failures = verify_run(args.out)
    except (OSError, SafeAbsError, json.JSONDecodeError) as exc:
        print(f"verify error: {exc}", file=sys.stderr)
        return 1
    if failures:
        for msg in failures:
            print(f"FAIL {msg}")
        return 4
    print("ok")
    return 0


def cmd_report(args) -> int:
    try:
        written = write_report(args.out)
    except (OSError, SafeAbsError, json.JSONDecodeError) as exc:
        print(f"report error: {exc}", file=sys.stderr)
        return 1
    for p in written:
        print(p)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="safeabs",
        description="Safe controller synthesis with learned symbolic abstractions",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="execute a learning run and write artifacts")
    p.add_argument("--config", required=True, help="TOML config file or builtin system name")
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", default="out", help="artifact directory")
    p.add_argument("--threads", type=int, default=None)
    p.add_argument("--lazy", type=_onoff, default=None, metavar="{on,off}")
    p.add_argument("--incremental-pre", type=_onoff, default=None, metavar="{on,off}")
    p.add_argument("--max-batches", type=int, default=None)
    p.set_defaults(fn=cmd_run)

    p = sub.add_parser("inspect", help="describe a stored artifact")
    p.add_argument("artifact", help="run directory, model.bin, or controller.bin")
    p.set_defaults(fn=cmd_inspect)

    p = sub.add_parser("verify", help="re-check invariants of stored artifacts")
    p.add_argument("--out", default="out", help="artifact directory")
    p.set_defaults(fn=cmd_verify)

    p = sub.add_parser("report", help="render per-batch table and figures")
    p.add_argument("--out", default="out", help="artifact directory")
    p.set_defaults(fn=cmd_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
