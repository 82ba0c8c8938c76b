"""
Command line:  nslab forward|invert|experiment <name> --config <file> --out <dir>

Configs are flat ``key = value`` files.  Exit codes: 0 success (including a
breakdown finding), 2 invalid config, 3 numerical failure, 4 fit diverged.
"""
from __future__ import annotations

import argparse
import configparser
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .experiments import (
    run_claim1,
    run_remark1,
    run_roundtrip,
    run_smoothness_probe,
    run_transparent_sweep,
)
from .forward_scattering import (
    IntegrationFailure,
    MatchFailure,
    born_phase_shift,
    phase_shifts,
    read_shifts_csv,
    write_shifts_csv,
)
from .numerics_core import FitStepFailed, InvalidArgument, SingularSystem
from .ns_engine import (
    BasicEquationNotSolvable,
    CoefficientSet,
    ReconstructionImpossible,
    fit_coefficients,
    ns_phase_shifts,
    reconstruct_potential,
    solvability_scan,
)
from .potential_model import NotInL11, catalog, weighted_moment
from .reporting import config_hash, header_line, write_json

log = logging.getLogger("nslab")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC, EXIT_FIT = 0, 2, 3, 4


class ConfigError(ValueError):
    pass


class FitDiverged(RuntimeError):
    pass


NUMERIC_ERRORS = (IntegrationFailure, MatchFailure, SingularSystem, BasicEquationNotSolvable,
                  ReconstructionImpossible, ArithmeticError)

FORWARD_KEYS = {"potential.kind": "exponential", "potential.params": "", "L": "10",
                "match_radius": "30", "r_max": ""}
INVERT_KEYS = {"mode": "fit", "target.file": "", "target.potential": "", "target.params": "",
               "target.coefficients": "", "target.L": "", "L": "4", "c.file": "", "c": "",
               "r_grid.max": "20", "r_grid.step": "0.02", "n_nodes.policy": "default",
               "match_radius": "30", "max_nfev": "200"}
EXPERIMENT_KEYS = {
    "remark1": {"c": "0", "c.file": "", "R_max": "60", "r_step": "0.05"},
    "claim1": {"potential.kind": "exponential", "potential.params": "depth=1, range=1",
               "outputs": "0; 0.1; 0.3; 0.6", "r_grid.max": "30", "r_grid.step": "0.02"},
    "transparent": {"c0_values": "0, -0.5, -1", "R_max": "60", "scan_step": "0.1",
                    "L_shifts": "4", "match_radius": "30"},
    "roundtrip": {"c": "0.2", "c.file": "", "L": "0", "match_radius": "30", "r_step": "0.02"},
    "smoothness": {"potential.kind": "truncated-exponential", "potential.params": "depth=1, a=3",
                   "L": "8", "match_radius": "30", "r_step": "0.02"},
}
NODE_POLICIES = {"default": 1, "double": 2}


# -- config ----------------------------------------------------------------

def load_config(path, allowed: dict) -> dict:
    parser = configparser.ConfigParser(delimiters=("=",), comment_prefixes=("#", ";"),
                                       inline_comment_prefixes=("#",), interpolation=None)
    parser.optionxform = str
    try:
        text = Path(path).read_text()
        parser.read_string("[run]\n" + text)
    except (OSError, configparser.Error) as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    raw = dict(parser["run"])
    unknown = sorted(set(raw) - set(allowed))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = dict(allowed)
    cfg.update({k: v.strip() for k, v in raw.items()})
    return cfg


def snapshot_text(command: str, cfg: dict) -> str:
    lines = [f"# command = {command}"] + [f"{k} = {cfg[k]}" for k in sorted(cfg)]
    return "\n".join(lines) + "\n"


def _float(cfg, key, positive=False):
    try:
        x = float(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} must be a number, got {cfg[key]!r}") from None
    if not math.isfinite(x) or (positive and x <= 0):
        raise ConfigError(f"{key} must be finite{' and > 0' if positive else ''}")
    return x


def _int(cfg, key, minimum=0):
    try:
        x = int(cfg[key])
    except ValueError:
        raise ConfigError(f"{key} must be an integer, got {cfg[key]!r}") from None
    if x < minimum:
        raise ConfigError(f"{key} must be >= {minimum}")
    return x


def _floats(text, key):
    try:
        vals = [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise ConfigError(f"{key}: expected comma-separated numbers, got {text!r}") from None
    if not vals or not all(map(math.isfinite, vals)):
        raise ConfigError(f"{key}: expected finite numbers")
    return vals


def parse_params(text: str) -> dict:
    """'depth=0.02, range=1' -> {'depth': 0.02, 'range': 1.0}"""
    out = {}
    for item in filter(None, (t.strip() for t in text.split(","))):
        name, sep, val = item.partition("=")
        if not sep:
            raise ConfigError(f"potential parameter {item!r} is not name=value")
        try:
            out[name.strip()] = float(val)
        except ValueError:
            raise ConfigError(f"potential parameter {name.strip()!r} is not a number") from None
    return out


def _potential(cfg, kind_key, params_key):
    try:
        return catalog(cfg[kind_key], **parse_params(cfg[params_key]))
    except (InvalidArgument, NotInL11) as exc:
        raise ConfigError(str(exc)) from None


def _coefficients(cfg, key="c", file_key="c.file"):
    if cfg.get(file_key):
        try:
            return CoefficientSet.from_csv(cfg[file_key])
        except (OSError, InvalidArgument) as exc:
            raise ConfigError(f"{file_key}: {exc}") from None
    return CoefficientSet(_floats(cfg[key], key))


# -- commands ----------------------------------------------------------------

def _prepare(out_dir, command, cfg):
    snap = snapshot_text(command, cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    (out / "config_snapshot.ini").write_text(snap)
    return out, snap, header_line(snap)


def cmd_forward(cfg: dict, out_dir) -> int:
    q = _potential(cfg, "potential.kind", "potential.params")
    L = _int(cfg, "L")
    R = _float(cfg, "match_radius", positive=True)
    r_max = _float(cfg, "r_max", positive=True) if cfg["r_max"] else None
    if R <= 2.0:
        raise ConfigError("match_radius must exceed 2")
    shifts = phase_shifts(q, L, R)
    born = [born_phase_shift(q, l, r_max) for l in range(L + 1)]
    out, snap, header = _prepare(out_dir, "forward", cfg)
    write_shifts_csv(shifts, out / "shifts.csv", header, extra={"born_delta": born})
    write_json(out / "forward.json", {
        "header": header, "config": snap, "config_sha256": config_hash(snap),
        "potential": q.describe(), "L": L, "match_radius": R,
        "deltas": shifts.deltas, "jost_magnitudes": shifts.jost_magnitudes, "born_deltas": born,
        "max_jost_magnitude": float(np.max(shifts.jost_magnitudes)),
    })
    return EXIT_OK


def _invert_target(cfg, L, R):
    n_src = sum(bool(cfg[k]) for k in ("target.file", "target.potential", "target.coefficients"))
    if n_src != 1:
        raise ConfigError("fit mode needs exactly one of target.file, target.potential, target.coefficients")
    L_t = _int(cfg, "target.L") if cfg["target.L"] else L
    if cfg["target.file"]:
        try:
            target = read_shifts_csv(cfg["target.file"], R)
        except (OSError, InvalidArgument, ValueError) as exc:
            raise ConfigError(f"target.file: {exc}") from None
        if target.L < L:
            raise ConfigError(f"target.file has {target.L + 1} partial waves, L = {L} needs {L + 1}")
        return target
    if cfg["target.potential"]:
        return phase_shifts(_potential(cfg, "target.potential", "target.params"), L_t, R)
    return ns_phase_shifts(CoefficientSet(_floats(cfg["target.coefficients"], "target.coefficients")), L_t, R)


def cmd_invert(cfg: dict, out_dir) -> int:
    mode = cfg["mode"]
    if mode not in ("fit", "direct"):
        raise ConfigError(f"mode must be fit or direct, got {mode!r}")
    if cfg["n_nodes.policy"] not in NODE_POLICIES:
        raise ConfigError(f"n_nodes.policy must be one of {sorted(NODE_POLICIES)}")
    n_factor = NODE_POLICIES[cfg["n_nodes.policy"]]
    L = _int(cfg, "L")
    R = _float(cfg, "match_radius", positive=True)
    r_max = _float(cfg, "r_grid.max", positive=True)
    step = _float(cfg, "r_grid.step", positive=True)
    if r_max < 3 * step:
        raise ConfigError("r_grid.max must cover at least three grid steps")
    extra = {"mode": mode}
    if mode == "direct":
        if not (cfg["c.file"] or cfg["c"]):
            raise ConfigError("direct mode needs c.file or c")
        c = _coefficients(cfg)
    else:
        target = _invert_target(cfg, L, R)
        try:
            c = fit_coefficients(target, L, match_radius=R, max_nfev=_int(cfg, "max_nfev", 1))
        except FitStepFailed as exc:
            raise FitDiverged(str(exc)) from exc
        extra["fit"] = dict(c.meta)
        extra["target_deltas"] = target.deltas.tolist()
    out, snap, header = _prepare(out_dir, "invert", cfg)
    c.to_csv(out / "coefficients.csv", header)
    extra.update({"config": snap, "config_sha256": config_hash(snap)})
    try:
        res = reconstruct_potential(c, r_max=r_max, step=step, n_factor=n_factor)
    except ReconstructionImpossible as exc:
        write_json(out / "reconstruction.json", {
            "header": header, "verdict": "breakdown", "partial": True, "detail": str(exc),
            "breakdown_radius": solvability_scan(c, 3 * step, step / 10), "c": c.c, **extra})
        return EXIT_OK
    extra["breakdown_radius"] = res.solvability.first_breakdown_radius
    res.write(out / "reconstruction.csv", out / "reconstruction.json", header, extra)
    return EXIT_OK


def cmd_experiment(name: str, cfg: dict, out_dir) -> int:
    # validate everything before any file is written
    if name in ("remark1", "roundtrip"):
        c = _coefficients(cfg)
    if name in ("claim1", "smoothness"):
        q = _potential(cfg, "potential.kind", "potential.params")
    if name == "remark1":
        args = (c, _float(cfg, "R_max", True), _float(cfg, "r_step", True))
        run = run_remark1
    elif name == "claim1":
        sets = [CoefficientSet(_floats(t, "outputs")) for t in cfg["outputs"].split(";") if t.strip()]
        r_max, step = _float(cfg, "r_grid.max", True), _float(cfg, "r_grid.step", True)
        if abs(weighted_moment(q).Q) <= 1e-10:
            raise ConfigError("claim1 needs a target with nonzero moment")
        outputs = []
        for cs in sets:
            try:
                outputs.append(reconstruct_potential(cs, r_max=r_max, step=step))
            except ReconstructionImpossible as exc:
                log.warning("skipping output %s: %s", cs.c.tolist(), exc)
        args = (q, outputs)
        run = run_claim1
    elif name == "transparent":
        args = (_floats(cfg["c0_values"], "c0_values"), _float(cfg, "R_max", True),
                _float(cfg, "scan_step", True), _int(cfg, "L_shifts"), _float(cfg, "match_radius", True))
        run = run_transparent_sweep
    elif name == "roundtrip":
        args = (c, _int(cfg, "L"), _float(cfg, "match_radius", True), _float(cfg, "r_step", True))
        run = run_roundtrip
    elif name == "smoothness":
        args = (q, _int(cfg, "L"), _float(cfg, "match_radius", True), _float(cfg, "r_step", True))
        run = run_smoothness_probe
    else:  # pragma: no cover - guarded in main
        raise ConfigError(f"unknown experiment {name!r}")
    out, snap, header = _prepare(out_dir, f"experiment {name}", cfg)
    rep = run(*args, out_dir=out, header=header)
    rep.inputs["config"] = snap
    rep.inputs["config_sha256"] = config_hash(snap)
    rep.write(out)
    log.info("%s: verdict %s", name, rep.verdict)
    return EXIT_OK


# -- entry point ---------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="nslab", description="Fixed-energy Newton-Sabatier inversion lab")
    p.add_argument("--version", action="version", version=f"nslab {__version__}")
    sub = p.add_subparsers(dest="command", required=True)
    for name in ("forward", "invert"):
        s = sub.add_parser(name)
        s.add_argument("--config", required=True)
        s.add_argument("--out", required=True)
    s = sub.add_parser("experiment")
    s.add_argument("name")
    s.add_argument("--config", required=True)
    s.add_argument("--out", required=True)
    p.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "forward":
            return cmd_forward(load_config(args.config, FORWARD_KEYS), args.out)
        if args.command == "invert":
            return cmd_invert(load_config(args.config, INVERT_KEYS), args.out)
        if args.name not in EXPERIMENT_KEYS:
            raise ConfigError(f"unknown experiment {args.name!r}; known: {', '.join(EXPERIMENT_KEYS)}")
        return cmd_experiment(args.name, load_config(args.config, EXPERIMENT_KEYS[args.name]), args.out)
    except (ConfigError, InvalidArgument, NotInL11) as exc:
        print(f"nslab: invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except FitDiverged as exc:
        print(f"nslab: fit_coefficients diverged: {exc}", file=sys.stderr)
        return EXIT_FIT
    except NUMERIC_ERRORS as exc:
        print(f"nslab: numerical failure in {args.command}: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_NUMERIC


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
