"""Command-line front end: ``stokes-lab <subcommand> [flags]``.

Exit code 0 means success.  A mathematical gate refusing the run gives 2;
computational errors and bad input give 1.
"""
from __future__ import annotations

import argparse
import logging
import sys
import warnings
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import (
    ExperimentReport,
    GateError,
    cell_weight_measures,
    condition_s,
    convergence_experiment,
    dirac_convergence_experiment,
    green_decay_experiment,
    infsup_experiment,
    manufactured_solution,
    stability_experiment,
)
from .fem_spaces import ElementPair
from .mesh import mesh_hierarchy, read_mesh, refine_times, shape_metrics, th_mesh_ok
from .solver import SolverError
from .weights import (
    Natterer,
    as_distance_power,
    estimate_ap_constant,
    natterer_integral_ratio,
    parse_weight,
)

log = logging.getLogger("stokes_lab")

SUBCOMMANDS = ("mesh-info", "weights-diag", "convergence", "stability", "infsup", "dirac", "green")

DEFAULTS = {
    "pair": "th",
    "pattern": "criss-cross",
    "levels": 4,
    "n0": 2,
    "weight": None,
    "p": 2.0,
    "alpha": 1.0,
    "z": "0.5,0.5",
    "force": "1,0",
    "lam": 0.1,
    "kappa": 2.0,
    "degree": 6,
    "seed": 0,
    "solution": "smooth_curl",
    "force_gates": False,
    "out": "results",
    "mesh_file": None,
}

_TYPES = {"levels": int, "n0": int, "degree": int, "seed": int, "p": float, "alpha": float,
          "lam": float, "kappa": float}


class ConfigError(ValueError):
    """Malformed configuration file or value."""


def _coerce(key: str, value):
    if value is None:
        return None
    if key == "force_gates":
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    if key in _TYPES:
        try:
            return _TYPES[key](value)
        except (TypeError, ValueError):
            raise ConfigError(f"{key}: expected {_TYPES[key].__name__}, got {value!r}") from None
    return str(value)


def load_config(path) -> dict:
    """Read ``key = value`` lines; ``#`` starts a comment.

    Keys use the flag names with ``-`` or ``_``.  A repeated key keeps its
    last value and emits a warning.  Malformed lines raise ``ConfigError``
    naming the line number.
    """
    cfg: dict = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value', got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        key = key.replace("-", "_")
        if not key or key not in DEFAULTS:
            raise ConfigError(f"{path}:{lineno}: unknown key {key!r}")
        if key in cfg:
            warnings.warn(f"{path}:{lineno}: duplicate key {key!r}, last value wins", stacklevel=2)
        try:
            cfg[key] = _coerce(key, value)
        except ConfigError as exc:
            raise ConfigError(f"{path}:{lineno}: {exc}") from None
    return cfg


def _parse_point(s: str) -> tuple[float, float]:
    try:
        x, y = (float(t) for t in str(s).split(","))
    except ValueError:
        raise ConfigError(f"expected 'x,y', got {s!r}") from None
    return x, y


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="stokes-lab", description="Stokes finite elements in weighted spaces.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        # default=None everywhere so the config file can fill in what the flags leave unset
        p.add_argument("--pair", choices=["mini", "th", "taylor-hood"], default=None)
        p.add_argument("--pattern", choices=["right", "criss-cross"], default=None)
        p.add_argument("--levels", type=int, default=None)
        p.add_argument("--n0", type=int, default=None, help="cells per side of the coarsest mesh")
        p.add_argument("--mesh-file", default=None, help="coarsest mesh from a file instead of --pattern")
        p.add_argument("--weight", default=None, help="dist:x,y:alpha | natterer:x,y:kappa[:h] | conj:<spec>:p")
        p.add_argument("--p", type=float, default=None)
        p.add_argument("--alpha", type=float, default=None)
        p.add_argument("--z", default=None, help="point x,y")
        p.add_argument("--force", default=None, help="Dirac force vector F1,F2")
        p.add_argument("--lam", type=float, default=None)
        p.add_argument("--kappa", type=float, default=None)
        p.add_argument("--degree", type=int, default=None, help="quadrature degree")
        p.add_argument("--solution", choices=["smooth_curl", "stokeslet"], default=None)
        p.add_argument("--force-gates", action="store_true", default=None)
        p.add_argument("--out", default=None)
        p.add_argument("--seed", type=int, default=None)
        p.add_argument("--config", default=None)
    return ap


def effective_config(args: argparse.Namespace) -> dict:
    """Defaults, then the config file, then explicit flags."""
    cfg = dict(DEFAULTS)
    if args.config:
        cfg.update(load_config(args.config))
    for key in DEFAULTS:
        v = getattr(args, key, None)
        if v is not None:
            cfg[key] = _coerce(key, v)
    if cfg["levels"] < 1 or cfg["n0"] < 1:
        raise ConfigError("levels and n0 must be positive")
    cfg["pair"] = ElementPair.parse(cfg["pair"]).value
    return cfg


def _meshes(cfg):
    if cfg["mesh_file"]:
        base = read_mesh(cfg["mesh_file"])
        return [refine_times(base, k) for k in range(cfg["levels"])]
    return mesh_hierarchy(cfg["pattern"], cfg["n0"], cfg["levels"])


def _weight(cfg, h=None):
    return None if cfg["weight"] is None else parse_weight(cfg["weight"], h=h)


def _mesh_info(cfg) -> ExperimentReport:
    rep = ExperimentReport("mesh_info", cfg, eoc_of=[])
    for k, m in enumerate(_meshes(cfg)):
        ratio_h, ratio_r = shape_metrics(m)
        rep.add_row(k, m.h, m.n_vertices, cells=m.n_cells, edges=len(m.edges), h_ratio=ratio_h,
                    shape_ratio=ratio_r, th_ok=int(th_mesh_ok(m)))
    return rep


def _weights_diag(cfg) -> ExperimentReport:
    meshes = _meshes(cfg)
    w = _weight(cfg, h=meshes[0].h)
    if w is None:
        raise ConfigError("weights-diag needs --weight")
    rep = ExperimentReport("weights_diag", cfg, eoc_of=[])
    gate = condition_s(w, cfg["p"], meshes[0].domain or (0.0, 1.0, 0.0, 1.0))
    rep.meta["condition_s"] = {"ok": gate.ok, "reason": gate.reason}
    red = as_distance_power(w)
    if red is not None:
        rep.meta["distance_exponent"] = red[1]
    try:
        rep.meta["ap_constant"] = estimate_ap_constant(w, cfg["p"])
    except ArithmeticError as exc:
        rep.meta["ap_constant"] = None
        rep.meta["ap_error"] = str(exc)
    if isinstance(w, Natterer):
        ratios = natterer_integral_ratio(cfg["lam"], w.kappa, meshes, ys=[w.y])
        for k, (m, r) in enumerate(zip(meshes, ratios)):
            rep.add_row(k, m.h, m.n_vertices, natterer_ratio=r)
    else:
        for k, m in enumerate(meshes):
            wT = cell_weight_measures(m, w, cfg["degree"])
            rep.add_row(k, m.h, m.n_vertices, w_max_cell=float(wT.max()), w_min_cell=float(wT.min()),
                        w_total=float(wT.sum()))
    return rep


def _run(cfg) -> ExperimentReport:
    cmd = cfg["command"]
    # the output location is not part of the experiment; leaving it out keeps reruns byte-identical
    cfg = {k: v for k, v in cfg.items() if k != "out"}
    if cmd == "mesh-info":
        return _mesh_info(cfg)
    if cmd == "weights-diag":
        return _weights_diag(cfg)
    meshes = _meshes(cfg)
    pair, deg = cfg["pair"], cfg["degree"]
    z = _parse_point(cfg["z"])
    if cmd == "convergence":
        return convergence_experiment(manufactured_solution(cfg["solution"], z=z), pair, meshes, deg, config=cfg)
    if cmd == "stability":
        w = _weight(cfg)
        return stability_experiment(manufactured_solution(cfg["solution"], z=z), pair, w, cfg["p"], meshes,
                                    force=cfg["force_gates"], config=cfg)
    if cmd == "infsup":
        w = _weight(cfg)
        if w is not None:
            gate = condition_s(w, 2.0, meshes[0].domain or (0.0, 1.0, 0.0, 1.0))
            if not gate and not cfg["force_gates"]:
                raise GateError(f"condition (S) fails: {gate.reason}")
        return infsup_experiment(pair, meshes, w, config=cfg)
    if cmd == "dirac":
        F = _parse_point(cfg["force"])
        return dirac_convergence_experiment([(z, F)], pair, cfg["alpha"], meshes, force=cfg["force_gates"],
                                            config=cfg, degree=deg)
    if cmd == "green":
        return green_decay_experiment(pair, [z], 0, 0, cfg["lam"], cfg["kappa"], meshes, config=cfg, degree=deg)
    raise ConfigError(f"unknown subcommand {cmd!r}")  # pragma: no cover


def main(argv=None) -> int:
    """Entry point of the ``stokes-lab`` console script."""
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s")
    args = build_parser().parse_args(argv)
    try:
        cfg = effective_config(args)
        cfg["command"] = args.command
        np.random.seed(cfg["seed"])
        rep = _run(cfg)
        paths = rep.write(cfg["out"])
    except GateError as exc:
        print(f"gate refused: {exc}", file=sys.stderr)
        return 2
    except (ConfigError, SolverError, ArithmeticError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    print(rep.summary())
    eocs = {c: rep.eoc(c) for c in rep.eoc_of}
    for c, v in eocs.items():
        print(f"EOC {c}: " + ", ".join("-" if e is None else f"{e:.3f}" for e in v))
    for key in ("condition_s", "ap_constant", "rho_max", "rho_variation"):
        if key in rep.meta:
            print(f"{key}: {rep.meta[key]}")
    print("wrote " + ", ".join(str(p) for p in paths))
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
