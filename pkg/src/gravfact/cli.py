"""Batch runner: ``gravfact verify`` and ``gravfact list-checks``.

Exit codes: 0 every row passes, 1 some row fails, 2 config error,
3 unsupported suite/background combination, 4 file system error.
"""

from __future__ import annotations

import argparse
import copy
import fnmatch
import hashlib
import json
import platform
import sys
import time
from pathlib import Path

import numpy as np
import scipy

from . import __version__
from . import causal as CA
from . import complex as C
from . import geometry as G
from . import green as GR
from . import observables as O
from .errors import ConfigParse, GravfactError, IOFailure, UnsupportedCombination
from .reports import Report, Row

SUITES = ("geometry", "causal", "complex", "green", "observables")
EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_UNSUPPORTED, EXIT_IO = 0, 1, 2, 3, 4

CONSTRUCTORS = {
    "minkowski": G.minkowski,
    "torus_slab": G.torus_slab,
    "schwarzschild": G.schwarzschild,
    "mannheim": G.mannheim,
    "mannheim_kazanas": G.mannheim_kazanas,
}

DEFAULT_CONFIG = {
    "suites": ["all"],
    "seed": 0,
    "modeCutoff": 64,
    "density": CA.DEFAULT_DENSITY,
    "spacetimes": {
        "minkowski4": {"type": "minkowski", "dim": 4},
        "schwarzschild": {"type": "schwarzschild", "mass": 1.0},
        "mannheim_kazanas": {"type": "mannheim_kazanas", "beta": 1.0, "gamma": 0.05},
        "slab2": {"type": "torus_slab", "dim": 2, "t_interval": [-1.0, 4.0]},
        "slab4": {"type": "torus_slab", "dim": 4, "t_interval": [-1.0, 4.0]},
    },
    "backgrounds": {
        "geometry": ["schwarzschild", "mannheim_kazanas"],
        "complex": ["minkowski4", "schwarzschild"],
        "green": ["slab2"],
        "observables": ["slab4"],
    },
    "models": {"minkowski4": ["gr", "conformal"], "schwarzschild": ["gr"]},
    "samplePoints": {"geometry": 10, "causal": 1000, "complex": 4, "green": 30},
    "trials": {"complex": 3, "complexPairing": 1, "green": 3, "observables": 20, "cauchy": 3, "tau": 2,
               "naturality": 4},
    "tolerances": {},
}

# (id pattern, anchor): every row id emitted by a suite matches exactly one entry
CATALOG = [
    ("geometry.riemann.fd_oracle.*", "curvature of the background"),
    ("geometry.kretschmann.*", "curvature of the background"),
    ("geometry.ricci_flat.*", "vacuum Einstein equation"),
    ("geometry.weyl.conformal_weight0", "conformal invariance of the Weyl tensor"),
    ("geometry.bach.conformal_weight_minus2", "conformal weight of the Bach tensor"),
    ("geometry.bach.vanishes.*", "Bach equation"),
    ("geometry.bach.linearized_fd_order", "linearized Bach equation"),
    ("geometry.linearized_ricci.fd_oracle", "linearized Ricci operator"),
    ("causal.disjointness.*", "causal disjointness of diamonds"),
    ("causal.time_order.*", "time-orderable tuples"),
    ("causal.refinement.*", "refinement of an open cover by diamonds"),
    ("complex.q_squared.*", C.ANCHORS["q_squared"]),
    ("complex.qww.*", C.ANCHORS["qww"]),
    ("complex.p_identification.*", C.ANCHORS["p_identification"]),
    ("complex.w_selfadjoint.*", C.ANCHORS["w_selfadjoint"]),
    ("complex.pairing_compat.*", C.ANCHORS["pairing_compat"]),
    ("complex.conformal.rho_dual.*", C.ANCHORS["rho_dual"]),
    ("complex.conformal.rho_closed_form.*", C.ANCHORS["rho"]),
    ("complex.conformal.ker_bach.*", C.ANCHORS["ker_bach"]),
    ("complex.conformal.chain_map.*", C.ANCHORS["chain_map"]),
    ("green.inverse.*", "Green operators invert P"),
    ("green.support.*", "support of the Green operators"),
    ("green.propagator_symmetry.*", "(anti)symmetry of the propagators"),
    ("green.homotopy.*", "Green homotopies trivialise the inclusion"),
    ("observables.tau.*.symmetry", "the three Poisson pairings"),
    ("observables.tau.dirac_boundary", "Q-boundary of the symmetric propagator pairing is the shifted pairing"),
    ("observables.q_squared.*", "Q squares to zero on observables"),
    ("observables.naturality.*", "naturality of pairings, witnesses and Green operators"),
    ("observables.einstein_causality.*", "Einstein causality of the propagator bracket"),
    ("observables.cauchy.*", "Cauchy constancy through the time-slice reduction"),
    ("observables.prefactorization.*", "prefactorization algebra structure maps"),
    ("observables.time_ordered.*", "time-ordered products commute with Q"),
    ("*.error", "suite aborted with an error"),
]


def catalog_anchor(check_id: str) -> str | None:
    for pattern, anchor in CATALOG:
        if fnmatch.fnmatchcase(check_id, pattern):
            return anchor
    return None


# -- config --------------------------------------------------------------------------------

def _merge(base: dict, over: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in over.items():
        if k in ("spacetimes", "models") and isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k].update(copy.deepcopy(v))  # entries replace same-named defaults whole
        elif isinstance(v, dict) and isinstance(out.get(k), dict) and k != "tolerances":
            out[k] = _merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def load_config(path=None, seed: int | None = None) -> dict:
    """Defaults overlaid with the JSON file at ``path``; raises ConfigParse."""
    user = {}
    if path is not None:
        try:
            text = Path(path).read_text()
        except OSError as e:
            raise ConfigParse(f"cannot read config {path}: {e}") from e
        try:
            user = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigParse(f"{path}: {e}") from e
        if not isinstance(user, dict):
            raise ConfigParse("the config must be a JSON object")
    unknown = set(user) - set(DEFAULT_CONFIG) - {"output"}
    if unknown:
        raise ConfigParse(f"unknown config keys {sorted(unknown)}")
    cfg = _merge(DEFAULT_CONFIG, user)
    if seed is not None:
        cfg["seed"] = seed
    validate_config(cfg)
    return cfg


def _require(cond, msg):
    if not cond:
        raise ConfigParse(msg)


def validate_config(cfg: dict) -> None:
    suites = cfg["suites"]
    _require(isinstance(suites, list) and suites, "suites must be a non-empty list")
    _require(all(s in SUITES + ("all",) for s in suites), f"suites must be drawn from {SUITES + ('all',)}")
    _require(isinstance(cfg["seed"], int) and not isinstance(cfg["seed"], bool), "seed must be an integer")
    _require(isinstance(cfg["modeCutoff"], int) and cfg["modeCutoff"] > 0, "modeCutoff must be a positive integer")
    _require(isinstance(cfg["density"], int) and cfg["density"] > 0, "density must be a positive integer")
    for name, spec in cfg["spacetimes"].items():
        _require(isinstance(spec, dict) and spec.get("type") in CONSTRUCTORS,
                 f"spacetime {name!r} needs a type from {sorted(CONSTRUCTORS)}")
        build_spacetime(name, spec)
    for suite, names in cfg["backgrounds"].items():
        _require(suite in SUITES, f"backgrounds: unknown suite {suite!r}")
        _require(isinstance(names, list), f"backgrounds.{suite} must be a list")
        for n in names:
            _require(n in cfg["spacetimes"], f"backgrounds.{suite}: spacetime {n!r} is not defined")
    _require(isinstance(cfg["models"], dict), "models must map complex backgrounds to model lists")
    for name, models in cfg["models"].items():
        _require(isinstance(models, list) and set(models) <= {"gr", "conformal"},
                 f"models.{name} must be a list drawn from gr, conformal")
    for key in ("samplePoints", "trials"):
        for k, v in cfg[key].items():
            _require(isinstance(v, int) and v > 0, f"{key}.{k} must be a positive integer")
    for k, v in cfg["tolerances"].items():
        _require(isinstance(v, (int, float)) and not isinstance(v, bool) and v >= 0,
                 f"tolerance override {k!r} must be a non-negative number")


def build_spacetime(name: str, spec: dict) -> G.Spacetime:
    params = {k: v for k, v in spec.items() if k != "type"}
    for k in ("t_interval",):
        if k in params:
            params[k] = tuple(params[k])
    try:
        return CONSTRUCTORS[spec["type"]](**params)
    except TypeError as e:
        raise ConfigParse(f"spacetime {name!r}: {e}") from e
    except GravfactError as e:
        raise ConfigParse(f"spacetime {name!r}: {e}") from e


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()


def selected_suites(cfg: dict, suite: str | None = None) -> list:
    names = [suite] if suite else cfg["suites"]
    if "all" in names:
        return list(SUITES)
    return [s for s in SUITES if s in names]


# -- suites --------------------------------------------------------------------------------

def _backgrounds(cfg, suite):
    return {n: build_spacetime(n, cfg["spacetimes"][n]) for n in cfg["backgrounds"].get(suite, [])}


def models_for(cfg: dict, name: str) -> list:
    return cfg["models"].get(name, ["gr"])


def check_combinations(cfg: dict, suites) -> None:
    """Refuse suite/background pairs the suites cannot handle, before anything runs."""
    for suite in suites:
        for name, st in _backgrounds(cfg, suite).items():
            if suite == "green" and (st.chart != "torus_slab" or st.dim != 2):
                raise UnsupportedCombination(f"green suite needs a 1+1 flat torus slab, not {name!r}")
            if suite == "observables" and (st.chart != "torus_slab" or st.dim != 4):
                raise UnsupportedCombination(f"observables suite needs a 3+1 flat torus slab, not {name!r}")
            if suite in ("geometry", "complex") and st.dim != 4:
                raise UnsupportedCombination(f"{suite} suite needs a four-dimensional background, not {name!r}")
            if suite == "complex" and "conformal" in models_for(cfg, name) and not st.claims.conformally_flat:
                raise UnsupportedCombination(f"conformal model needs a conformally flat background, not {name!r}")


def run_suite(suite: str, cfg: dict) -> list:
    seed, sp, tr = cfg["seed"], cfg["samplePoints"], cfg["trials"]
    bgs = _backgrounds(cfg, suite)
    if suite == "geometry":
        return G.verify_geometry(seed, sp.get("geometry", 10), bgs)
    if suite == "causal":
        return CA.verify_causal(sp.get("causal", 1000), seed, cfg["density"])
    if suite == "complex":
        rows = []
        for name, st in bgs.items():
            flat = st.chart == "minkowski_box"
            checks = C.ALL_CHECKS if flat else ("q_squared", "qww", "p_identification")
            if "gr" in models_for(cfg, name):
                rows += C.verify_complex("gr", st, tr.get("complex", 3), seed, points=sp.get("complex", 4),
                                         pairing_trials=tr.get("complexPairing", 1), checks=checks)
            if "conformal" in models_for(cfg, name):
                rows += C.verify_complex("conformal", st, 1, seed)
        return rows
    if suite == "green":
        rows = []
        for st in bgs.values():
            rows += GR.verify_green(tr.get("green", 3), seed, cfg["modeCutoff"], st, points=sp.get("green", 30))
        return rows
    if suite == "observables":
        rows = []
        for st in bgs.values():
            rows += O.verify_observables(tr.get("observables", 20), seed, tr.get("cauchy", 3), tr.get("tau", 2),
                                         tr.get("naturality", 4), st, cfg["modeCutoff"])
        return rows
    raise ValueError(suite)


def versions() -> dict:
    return {"gravfact": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def make_report(suite: str, cfg: dict, tol_scale: float = 1.0) -> Report:
    t0 = time.perf_counter()
    try:
        rows = run_suite(suite, cfg)
    except UnsupportedCombination:
        raise
    except GravfactError as e:
        # keep going with the other suites; the failure is recorded as a row
        rows = [Row(f"{suite}.error", f"{type(e).__name__}: {e}", "suite aborted with an error", float("nan"), 0.0)]
    rep = Report(suite, rows)
    rep.apply_overrides(cfg["tolerances"], tol_scale)
    rep.metadata = {"seed": cfg["seed"], "config_hash": config_hash(cfg), "versions": versions(),
                    "tol_scale": tol_scale, "wall_time_s": round(time.perf_counter() - t0, 3)}
    if suite == "causal":
        rep.metadata["density"] = cfg["density"]
    if suite in ("green", "observables"):
        rep.metadata["mode_cutoff"] = cfg["modeCutoff"]
    return rep


def normalized(report: dict) -> dict:
    """The report without its timing, for determinism comparisons."""
    out = copy.deepcopy(report)
    out.get("metadata", {}).pop("wall_time_s", None)
    return out


def write_report(rep: Report, out: Path) -> Path:
    try:
        out.mkdir(parents=True, exist_ok=True)
        path = out / f"{rep.suite}.json"
        path.write_text(rep.to_json() + "\n")
    except OSError as e:
        raise IOFailure(f"cannot write report to {out}: {e}") from e
    return path


def verify(cfg: dict, out, suite: str | None = None, tol_scale: float = 1.0, log=print) -> int:
    out = Path(out)
    suites = selected_suites(cfg, suite)
    check_combinations(cfg, suites)
    if out.exists() and not out.is_dir():
        raise IOFailure(f"{out} exists and is not a directory")
    ok = True
    for s in suites:
        rep = make_report(s, cfg, tol_scale)
        path = write_report(rep, out)
        log(f"{rep.summary()}  ->  {path}")
        for r in rep.failing():
            log(f"  FAIL {r.id}: residual {r.residual:.3e} > {r.tolerance:.1e} x {r.scale:.3e}")
        ok &= rep.passed
    return EXIT_OK if ok else EXIT_FAIL


# -- entry point ----------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gravfact", description="Identity checks for linearized gravity field theories.")
    sub = p.add_subparsers(dest="command", required=True)
    v = sub.add_parser("verify", help="run verification suites and write JSON reports")
    v.add_argument("--suite", default=None, choices=SUITES + ("all",), help="suite to run (default: from config)")
    v.add_argument("--config", default=None, help="JSON config file overlaid on the defaults")
    v.add_argument("--out", default=None, help="directory for the reports (default: config 'output' or ./reports)")
    v.add_argument("--seed", type=int, default=None, help="override the config seed")
    v.add_argument("--tol-scale", type=float, default=1.0, help="multiply every tolerance")
    sub.add_parser("list-checks", help="print the check catalog with anchors")
    sub.add_parser("default-config", help="print the default config as JSON")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    if args.command == "list-checks":
        width = max(len(p) for p, _ in CATALOG)
        for pattern, anchor in CATALOG:
            print(f"{pattern:<{width}}  {anchor}")
        return EXIT_OK
    if args.command == "default-config":
        print(json.dumps(DEFAULT_CONFIG, indent=2))
        return EXIT_OK
    try:
        if not args.tol_scale > 0:
            raise ConfigParse("--tol-scale must be positive")
        cfg = load_config(args.config, args.seed)
        out = args.out or cfg.get("output") or "reports"
        return verify(cfg, out, args.suite, args.tol_scale)
    except ConfigParse as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except UnsupportedCombination as e:
        print(f"unsupported: {e}", file=sys.stderr)
        return EXIT_UNSUPPORTED
    except IOFailure as e:
        print(f"io error: {e}", file=sys.stderr)
        return EXIT_IO


if __name__ == "__main__":
    sys.exit(main())
