"""Command line experiment runner.

``repulsion run EXPERIMENT [--config PATH] [--seed U64] [--out DIR]
[--workers N] [--experiment NAME] [--d D]``

Each run writes ``data.csv``, ``summary.json`` and ``manifest.json`` into the
output directory, all at once after the experiment finishes.  Exit codes:
0 pass, 1 the experiment ran but failed its predicate, 2 invalid config,
3 non-finite values during the run.
"""
from __future__ import annotations

import argparse
import copy
import csv
import hashlib
import io
import json
import math
import os
import platform
import shutil
import sys
import tempfile
import time
from pathlib import Path

import numpy as np

from . import __version__
from .couplings import (check_aux_ordering, check_box_monotonicity, check_eps1_monotonicity,
                        check_eps2_rotated, check_infinite_comparison, check_initial_monotonicity,
                        check_law_identity, check_penalized_convergence)
from .dynamics import InitialLaw, NumericalError, SimConfig, initial_sample
from .estimators import estimate_heights, fit_growth, gap_coefficient, height_ratio, variance_check
from .gibbs import stationarity_test
from .heatkernel import (c2_constant, extrapolate_log_rate, green_constant, heat_integral, log_rate_2d,
                         return_probability, variance_bound)
from .noise import NoiseStream
from .penalty import PenaltyParams

SCHEMA_VERSION = 1
EXPERIMENTS = ("growth", "coupling", "stationarity", "variance", "kernel", "convergence")
EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_NUMERIC = 0, 1, 2, 3

# lattice Green function of the discrete-time simple random walk on Z^3 at 0
G_SRW_3D = 1.5163860591519780
COUPLING_CHECKS = ("box", "infinite", "initial", "eps1", "eps2", "aux", "law")

SIM_KEYS = ("d", "N", "dt", "T", "scheme", "penalty", "init", "boundary")
TOP_KEYS = ("schema_version", "experiment", "seed", "replicas", "times", "sim", "params", "output")

DEFAULTS = {
    "kernel": {
        "replicas": 1, "times": [1.0, 10.0, 100.0], "sim": None,
        "params": {"d": 3, "extrapolation_times": [1e3, 1e4, 1e5], "tolerance": 1e-4,
                   "rate_tolerance": 0.02},
    },
    "growth": {
        "replicas": 4, "times": [4.0, 6.0, 8.0, 10.0, 12.0, 14.0, 16.0],
        "sim": {"d": 3, "N": 16, "dt": 1 / 24, "T": 16.0},
        "params": {"stride": None, "margin": None, "block": None, "check_horizon": True,
                   "window": None, "slope_band": [0.5, 2.0], "ratio_band": [1.9, 2.9]},
    },
    "coupling": {
        "replicas": 50, "times": [1.0, 10.0],
        "sim": {"d": 1, "N": 2, "dt": 0.0125, "T": 1.0, "init": {"sigma1": 0.5, "sigma2": 0.5}},
        "params": {"checks": list(COUPLING_CHECKS), "N_big": None, "factor": 4,
                   "penalty": {"eps1": 0.1, "eps2": 0.1, "delta": 0.01},
                   "eps1_values": [0.2, 0.1, 0.05], "eps2_values": [0.2, 0.1, 0.05],
                   "every": 1, "tolerance": 1e-8, "kernel": "euler", "law_replicas": 10000,
                   "law_N": 8},
    },
    "stationarity": {
        "replicas": 1, "times": [],
        "sim": {"d": 1, "N": 0, "dt": 1e-3, "T": 1.0, "scheme": "fold"},
        "params": {"variant": "reflected", "burn_in": 1000, "samples": 10**6, "tolerance": 0.02},
    },
    "variance": {
        "replicas": 1000, "times": [1.0],
        "sim": {"d": 3, "N": 4, "dt": 1 / 24, "T": 1.0},
        "params": {"z": 3.0},
    },
    "convergence": {
        "replicas": 2000, "times": [1.0],
        "sim": {"d": 1, "N": 1, "dt": 0.01, "T": 1.0, "scheme": "smoothed",
                "penalty": {"eps1": 0.125, "eps2": 0.125, "delta": 0.0125}},
        "params": {"k": [3, 4, 5, 6, 7, 8, 9, 10], "delta_ratio": 0.1, "dt_factor": 0.125,
                   "tolerance": 0.05},
    },
}


class ConfigError(ValueError):
    pass


def _check_keys(obj, allowed, where):
    if not isinstance(obj, dict):
        raise ConfigError(f"{where} must be an object")
    extra = sorted(set(obj) - set(allowed))
    if extra:
        raise ConfigError(f"unknown field(s) in {where}: {', '.join(extra)}")


def _penalty(obj, where):
    if obj is None:
        return None
    _check_keys(obj, ("eps1", "eps2", "delta"), where)
    try:
        return PenaltyParams(float(obj["eps1"]), float(obj["eps2"]),
                             None if obj.get("delta") is None else float(obj["delta"]))
    except KeyError as exc:
        raise ConfigError(f"{where} needs {exc.args[0]}") from None


def build_sim(obj) -> SimConfig:
    _check_keys(obj, SIM_KEYS, "sim")
    try:
        init = obj.get("init") or {}
        _check_keys(init, ("sigma1", "sigma2"), "sim.init")
        return SimConfig(
            d=int(obj["d"]), N=int(obj["N"]), dt=float(obj["dt"]), T=float(obj["T"]),
            scheme=obj.get("scheme", "reflected"), penalty=_penalty(obj.get("penalty"), "sim.penalty"),
            init=InitialLaw(float(init.get("sigma1", 0.0)), float(init.get("sigma2", 0.0))),
            boundary=tuple(float(b) for b in obj.get("boundary", (0.0, 0.0))))
    except KeyError as exc:
        raise ConfigError(f"sim needs {exc.args[0]}") from None


def resolve_config(raw: dict | None, experiment=None, seed=None, d=None) -> dict:
    """Merge a raw config with experiment defaults and flag overrides."""
    raw = {} if raw is None else copy.deepcopy(raw)
    _check_keys(raw, TOP_KEYS, "config")
    version = raw.get("schema_version", SCHEMA_VERSION)
    if version != SCHEMA_VERSION:
        raise ConfigError(f"unsupported schema_version {version} (expected {SCHEMA_VERSION})")
    exp = experiment or raw.get("experiment")
    if exp not in EXPERIMENTS:
        raise ConfigError(f"experiment must be one of {', '.join(EXPERIMENTS)}, got {exp!r}")
    base = DEFAULTS[exp]
    params = dict(base["params"])
    user_params = raw.get("params") or {}
    _check_keys(user_params, params.keys(), "params")
    params.update(user_params)
    sim = raw.get("sim", base["sim"])
    if sim is not None:
        if base["sim"] is None:
            raise ConfigError(f"experiment {exp!r} takes no sim block")
        merged = dict(base["sim"]) if raw.get("sim") is None else {}
        merged.update(sim)
        sim = merged
    if d is not None:
        if exp == "kernel":
            params["d"] = int(d)
        elif sim is not None:
            sim["d"] = int(d)
    out = {
        "schema_version": SCHEMA_VERSION,
        "experiment": exp,
        "seed": int(raw.get("seed", 0) if seed is None else seed),
        "replicas": int(raw.get("replicas", base["replicas"])),
        "times": [float(t) for t in raw.get("times", base["times"])],
        "sim": sim,
        "params": params,
    }
    if not 0 <= out["seed"] < 2**64:
        raise ConfigError("seed must be an unsigned 64-bit integer")
    if out["replicas"] < 1:
        raise ConfigError("replicas must be positive")
    if "output" in raw:
        out["output"] = raw["output"]
    return out


def config_hash(cfg: dict) -> str:
    body = {k: v for k, v in cfg.items() if k != "output"}
    return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()


def _csv_bytes(header, rows) -> bytes:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue().encode("utf-8")


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (np.bool_, bool)):
        return bool(x)
    if isinstance(x, (np.integer,)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        return x if math.isfinite(x) else None
    return x


# experiments: each returns (passed, csv header, csv rows, summary dict)

def _run_kernel(cfg, workers):
    p = cfg["params"]
    d = int(p["d"])
    if d < 1:
        raise ConfigError("dimension must be positive")
    rows = []
    for t in cfg["times"]:
        rows.append(("return_probability", d, t, float(return_probability(t, d))))
        rows.append(("heat_integral", d, t, heat_integral(t, d)))
        rows.append(("variance_bound", d, t, variance_bound(t, d)))
    summary = {"d": d}
    passed = True
    if d >= 3:
        c1 = green_constant(d)
        rows.append(("C1", d, math.inf, c1))
        rows.append(("C2", d, math.inf, c2_constant(d)))
        summary.update(C1=c1, C2=c2_constant(d))
        if d == 3:
            target = G_SRW_3D / 12.0
            summary.update(target=target, error=abs(c1 - target))
            passed = abs(c1 - target) <= p["tolerance"]
    elif d == 2:
        rate = extrapolate_log_rate(tuple(p["extrapolation_times"]))
        rows.append(("C1_rate", d, math.inf, rate))
        rel = abs(rate / log_rate_2d() - 1)
        summary.update(C1_rate=rate, target=log_rate_2d(), relative_error=rel, C2=c2_constant(2))
        passed = rel <= p["rate_tolerance"]
    return passed, ("quantity", "d", "t", "value"), rows, summary


def _run_growth(cfg, workers):
    p = cfg["params"]
    sim = build_sim(cfg["sim"])
    hs = estimate_heights(sim, cfg["times"], cfg["replicas"], stride=p["stride"], seed=cfg["seed"],
                          margin=p["margin"], block=p["block"], check_horizon=p["check_horizon"],
                          workers=workers)
    window = tuple(p["window"]) if p["window"] else None
    T = float(hs.times[-1])
    summary = {"n_sites": hs.n_sites, "replicas": hs.replicas}
    passed = True
    if sim.d >= 2:
        c1 = green_constant(sim.d) if sim.d >= 3 else log_rate_2d()
        lo, hi = p["slope_band"]
        for layer, target in ((1, c1 / 2), (2, c2_constant(sim.d) / 2)):
            f = fit_growth(hs, layer, window=window, target=target)
            summary[f"layer{layer}"] = {"slope": f.slope, "slope_stderr": f.slope_stderr, "target": target,
                                        "ratio_to_target": f.ratio_to_target, "window": list(f.window)}
            passed &= lo <= f.ratio_to_target <= hi
        _, gc, gse = gap_coefficient(hs)
        summary["gap_coefficient"] = gc
        summary["gap_coefficient_stderr"] = gse
        passed &= bool(np.all(gc > 0)) and bool(gc[-1] > gc[0])
    r = height_ratio(hs, T)
    summary["ratio_at_Tmax"] = r.ratio
    summary["ratio_stderr"] = r.stderr
    summary["ratio_flagged"] = r.flagged
    lo, hi = p["ratio_band"]
    passed &= (not r.flagged) and lo <= r.ratio <= hi
    header = ("time", "layer", "mean", "stderr", "n_replicas", "n_sites")
    return passed, header, list(hs.rows()), summary


def _run_variance(cfg, workers):
    sim = build_sim(cfg["sim"])
    rep = variance_check(sim, cfg["times"], cfg["replicas"], seed=cfg["seed"], z=cfg["params"]["z"],
                         workers=workers)
    rows = []
    for i, t in enumerate(rep.times):
        for layer in (1, 2):
            rows.append((float(t), layer, rep.var[i, layer - 1], rep.stderr[i, layer - 1],
                         float(rep.bound[i]), float(rep.margin[i, layer - 1])))
    summary = {"min_margin": float(rep.margin.min()), "replicas": rep.replicas}
    return rep.passed, ("time", "layer", "var", "stderr", "bound", "margin"), rows, summary


def _run_stationarity(cfg, workers):
    p = cfg["params"]
    sim = build_sim(cfg["sim"])
    rep = stationarity_test(sim, p["variant"], burn_in=int(p["burn_in"]), samples=int(p["samples"]),
                            seed=cfg["seed"], tolerance=p["tolerance"])
    rows = [(k, v, rep.samples) for k, v in rep.ks.items()]
    summary = {"ks": rep.ks, "max_ks": rep.max_ks, "flagged": rep.flagged, "dt": rep.dt,
               "moments": {k: list(v) for k, v in rep.moments.items()}}
    return rep.passed, ("marginal", "ks", "samples"), rows, summary


def _ordered_pair(sim: SimConfig, seed: int):
    box = sim.box
    lo = initial_sample(box, InitialLaw(0.3, 0.3), NoiseStream(seed, 0))
    hi = initial_sample(box, InitialLaw(0.3, 0.3), NoiseStream(seed, 1))
    return (lo.phi1, lo.phi2), (lo.phi1 + hi.phi1, lo.phi2 + hi.phi1 + hi.phi2)


def _coupling_plan(cfg):
    """Validate every derived configuration before anything runs."""
    p = cfg["params"]
    sim = build_sim(cfg["sim"])
    checks = list(p["checks"])
    bad = sorted(set(checks) - set(COUPLING_CHECKS))
    if bad:
        raise ConfigError(f"unknown coupling check(s): {', '.join(bad)}")
    pen = _penalty(p["penalty"], "params.penalty")
    plan = []
    R, seed, tol, every = cfg["replicas"], cfg["seed"], float(p["tolerance"]), int(p["every"])
    if "box" in checks:
        N_big = p["N_big"] if p["N_big"] is not None else 2 * sim.N
        plan.append(("box_monotonicity", lambda: check_box_monotonicity(sim, N_big, seed, R, every, tol)))
    if "infinite" in checks:
        if sim.T > (max(p["factor"] * sim.N, p["factor"])) ** 2 / 8:
            raise ConfigError("horizon too long for the full-lattice proxy")
        plan.append(("infinite_comparison",
                     lambda: check_infinite_comparison(sim, p["factor"], seed, R, every, tol)))
    if "initial" in checks:
        sm = sim.with_(scheme="smoothed", penalty=pen)
        lo, hi = _ordered_pair(sm, seed)
        plan.append(("initial_monotonicity",
                     lambda: check_initial_monotonicity(sm, lo, hi, seed, R, every, tol, p["kernel"])))
    if "eps1" in checks:
        pc = sim.with_(scheme="penalized", penalty=PenaltyParams(max(p["eps1_values"]), pen.eps2, pen.delta))
        for e in p["eps1_values"]:
            pc.with_(penalty=PenaltyParams(e, pen.eps2, pen.delta))
        plan.append(("eps1_monotonicity",
                     lambda: check_eps1_monotonicity(pc, p["eps1_values"], seed, R, every, tol)))
    if "eps2" in checks:
        rc = sim.with_(scheme="rotated", penalty=PenaltyParams(pen.eps1, max(p["eps2_values"]), pen.delta))
        for e in p["eps2_values"]:
            rc.with_(penalty=PenaltyParams(pen.eps1, e, pen.delta))
        plan.append(("eps2_rotated", lambda: check_eps2_rotated(rc, p["eps2_values"], seed, R, every, tol)))
    if "aux" in checks:
        plan.append(("aux_ordering", lambda: check_aux_ordering(sim, seed, R, every, tol)))
    if "law" in checks:
        T = max(cfg["times"])
        lc = sim.with_(N=int(p["law_N"]), T=max(T, sim.T), init=InitialLaw())
        plan.append(("law_identity",
                     lambda: check_law_identity(lc, cfg["times"], seed, int(p["law_replicas"]))))
    return plan


def _run_coupling(cfg, workers):
    plan = _coupling_plan(cfg)
    rows, summary, passed = [], {}, True
    for name, fn in plan:
        rep = fn()
        if name == "law_identity":
            zmax = max(abs(z) for z in rep.z_mean + rep.z_var)
            rows.append((name, cfg["seed"], zmax, 3.0, rep.passed))
            summary[name] = {"z_mean": rep.z_mean, "z_var": rep.z_var, "times": rep.times,
                             "var_gap": rep.var_gap, "var_rho": rep.var_rho, "pass": rep.passed}
        else:
            r = rep.row(cfg["seed"])
            rows.append((name, r["seed"], r["max_violation"], r["tolerance"], r["pass"]))
            summary[name] = {"max_violation": rep.max_violation, "violation_rate": rep.violation_rate,
                             "samples": rep.samples, "pass": rep.passed, **rep.details}
        passed &= rep.passed
    return passed, ("experiment", "seed", "max_violation", "tolerance", "pass"), rows, summary


def _run_convergence(cfg, workers):
    p = cfg["params"]
    sim = build_sim(cfg["sim"])
    if sim.scheme not in ("penalized", "smoothed"):
        raise ConfigError("convergence needs scheme 'penalized' or 'smoothed'")
    params = [PenaltyParams(2.0**-k, 2.0**-k, p["delta_ratio"] * 2.0**-k) for k in p["k"]]
    rep = check_penalized_convergence(sim, params, cfg["seed"], cfg["replicas"], p["dt_factor"])
    rows = [(k, q.eps1, q.delta, dt, m, s, l2)
            for k, q, dt, m, s, l2 in zip(p["k"], params, rep.dts, rep.mean_sq, rep.stderr_sq, rep.l2)]
    ok_trend = rep.decreasing()
    summary = {"mean_sq": rep.mean_sq, "stderr_sq": rep.stderr_sq, "rms": rep.l2,
               "decreasing": ok_trend, "final_mean_sq": rep.mean_sq[-1], "final_rms": rep.l2[-1],
               "tolerance": p["tolerance"]}
    passed = ok_trend and rep.mean_sq[-1] < p["tolerance"]
    return passed, ("k", "eps", "delta", "dt", "mean_sq", "stderr_sq", "rms"), rows, summary


RUNNERS = {
    "kernel": _run_kernel,
    "growth": _run_growth,
    "variance": _run_variance,
    "stationarity": _run_stationarity,
    "coupling": _run_coupling,
    "convergence": _run_convergence,
}


def _validate(cfg):
    if cfg["sim"] is not None:
        build_sim(cfg["sim"])
    if cfg["experiment"] == "coupling":
        _coupling_plan(cfg)


def _commit(out: Path, files: dict) -> None:
    out.mkdir(parents=True, exist_ok=True)
    tmp = Path(tempfile.mkdtemp(prefix=".partial-", dir=out))
    try:
        for name, data in files.items():
            (tmp / name).write_bytes(data)
        for name in files:
            os.replace(tmp / name, out / name)
    finally:
        shutil.rmtree(tmp, ignore_errors=True)


def _versions():
    import numba
    import scipy
    return {"repulsion": __version__, "python": platform.python_version(), "numpy": np.__version__,
            "scipy": scipy.__version__, "numba": numba.__version__}


def run(cfg: dict, out: Path, workers: int = 1, stream=sys.stdout) -> int:
    """Execute a resolved config; returns the exit code."""
    try:
        _validate(cfg)
    except ValueError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    start = time.perf_counter()
    try:
        passed, header, rows, summary = RUNNERS[cfg["experiment"]](cfg, workers)
    except NumericalError as exc:
        print(f"numerical failure: {exc} (replica {exc.replica}, site {exc.site}, step {exc.step})",
              file=sys.stderr)
        return EXIT_NUMERIC
    except ValueError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    elapsed = time.perf_counter() - start
    data = _csv_bytes(header, rows)
    summary = {"experiment": cfg["experiment"], "seed": cfg["seed"], "pass": bool(passed),
               "runtime_seconds": elapsed, **summary}
    summary_b = (json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n").encode()
    manifest = {"schema_version": SCHEMA_VERSION, "experiment": cfg["experiment"], "seed": cfg["seed"],
                "config_sha256": config_hash(cfg), "config": cfg, "versions": _versions(),
                "files": {"data.csv": hashlib.sha256(data).hexdigest()}}
    manifest_b = (json.dumps(_jsonable(manifest), indent=2, sort_keys=True) + "\n").encode()
    _commit(out, {"data.csv": data, "summary.json": summary_b, "manifest.json": manifest_b})
    print(json.dumps(_jsonable(summary), sort_keys=True), file=stream)
    return EXIT_PASS if passed else EXIT_FAIL


def _parser():
    ap = argparse.ArgumentParser(prog="repulsion", description="Two-layer repulsion experiments.")
    sub = ap.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run one experiment")
    r.add_argument("name", nargs="?", choices=EXPERIMENTS, help="experiment (overrides the config)")
    r.add_argument("--config", type=Path, help="JSON config file")
    r.add_argument("--seed", type=int, help="unsigned 64-bit seed (overrides the config)")
    r.add_argument("--out", type=Path, help="output directory")
    r.add_argument("--workers", type=int, default=1, help="worker processes for replica batches")
    r.add_argument("--experiment", choices=EXPERIMENTS, help="experiment (overrides the config)")
    r.add_argument("--d", type=int, help="dimension (kernel: the lattice; others: sim.d)")
    return ap


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        raw = None
        if args.config is not None:
            try:
                raw = json.loads(args.config.read_text(encoding="utf-8"))
            except (OSError, json.JSONDecodeError) as exc:
                raise ConfigError(f"cannot read {args.config}: {exc}") from None
        cfg = resolve_config(raw, args.experiment or args.name, args.seed, args.d)
    except ValueError as exc:
        print(f"invalid config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.workers < 1:
        print("invalid config: --workers must be positive", file=sys.stderr)
        return EXIT_CONFIG
    out = args.out or Path(cfg.get("output") or Path("results") / cfg["experiment"])
    return run(cfg, Path(out), args.workers)


if __name__ == "__main__":
    sys.exit(main())
