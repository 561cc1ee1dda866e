"""Command-line entry point.

Exit codes: 0 success, 1 an embedded assertion failed, 2 input or config
error, 3 internal error.
"""
import argparse
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from ._parallel import set_default_threads
from .clt import CltReport
from .densities import density_constants, density_from_dict
from .entropy import DEFAULT_FLOOR, EntropyConfig, entropy_estimate, entropy_estimate_modified
from .exceptions import InputError, MppError
from .experiments import ExperimentConfig, run_experiment
from .io import (load_json, read_sample, write_dict_rows, write_json, write_sample, write_table)
from .kde import (DEFAULT_R0, KdeConfig, bound_report, build_index, fallback_bandwidth_density,
                  kde_evaluate, optimal_density_bandwidth_for)
from .kernels import make_kernel
from .manifold import get_manifold
from .point_process import BoxWindow, simulate_mpp
from .rng import substream

log = logging.getLogger("mppentropy")

SUBCOMMANDS = ("simulate", "estimate-density", "estimate-entropy", "clt", "experiment", "audit")


def packaged_config(name):
    ref = resources.files("mppentropy") / "configs" / f"{name}.json"
    if not ref.is_file():
        raise InputError(f"no packaged config named {name!r}")
    return json.loads(ref.read_text(encoding="utf-8"))


def packaged_config_names():
    root = resources.files("mppentropy") / "configs"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


# config access with field-level diagnostics ------------------------------------------

def _field(cfg, key, conv=None, default=KeyError):
    if key not in cfg:
        if default is KeyError:
            raise InputError(f"config field {key!r} is required")
        return default
    val = cfg[key]
    if conv is None:
        return val
    try:
        return conv(val)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config field {key!r}: {exc}") from None


def _window(cfg, key, d=None, default=KeyError):
    spec = _field(cfg, key, default=default)
    if spec is None:
        return None
    try:
        return BoxWindow.from_dict(spec, d)
    except (TypeError, ValueError) as exc:
        raise InputError(f"config field {key!r}: {exc}") from None


def _resolve_path(base, value):
    p = Path(value)
    return p if p.is_absolute() else (base / p)


def _load_config(args, required=True):
    if args.config is None:
        if required:
            raise InputError("--config is required for this subcommand")
        return {}, Path.cwd()
    cfg = load_json(args.config)
    if not isinstance(cfg, dict):
        raise InputError(f"{args.config}: top-level JSON value must be an object")
    return cfg, Path(args.config).resolve().parent


def _seed(args, cfg):
    if args.seed is not None:
        return args.seed
    return _field(cfg, "seed", int, 0)


def _bandwidth(cfg, M, K, density, intensity, vol_kde, r0):
    spec = _field(cfg, "bandwidth", default="fallback")
    if spec == "fallback":
        return fallback_bandwidth_density(vol_kde, M.dim)
    if spec == "optimal":
        if density is None:
            raise InputError("bandwidth 'optimal' needs the true density in the config")
        return optimal_density_bandwidth_for((M, K), density_constants(density), intensity,
                                             vol_kde, r0)
    try:
        return float(spec)
    except (TypeError, ValueError):
        raise InputError("config field 'bandwidth' must be a number, 'fallback' or 'optimal'") from None


# subcommands -------------------------------------------------------------------------

def cmd_simulate(args):
    cfg, _ = _load_config(args)
    M = get_manifold(_field(cfg, "manifold", str))
    density = density_from_dict(_field(cfg, "density", dict), M.tag)
    d = _field(cfg, "d", int, None)
    window = _window(cfg, "window", d)
    intensity = _field(cfg, "intensity", float)
    seed = _seed(args, cfg)
    rep = _field(cfg, "replication", int, 0)
    sample = simulate_mpp(intensity, window, density, seed, rep)
    path = write_sample(sample, Path(args.out) / "sample.csv", {"density": density.to_dict()})
    log.info("wrote %d points to %s", sample.n, path)
    return 0


def _eta_points(cfg, M, seed):
    spec = _field(cfg, "eta", default={"grid": 16})
    if isinstance(spec, dict) and "grid" in spec:
        return M.quadrature_grid(int(spec["grid"]))[0]
    if isinstance(spec, dict) and "random" in spec:
        return M.sample_uniform(substream(seed, "eta"), int(spec["random"]))
    try:
        return M.as_points(np.asarray(spec, dtype=float).reshape(-1, M.n_coords))
    except ValueError as exc:
        raise InputError(f"config field 'eta': {exc}") from None


def cmd_estimate_density(args):
    cfg, base = _load_config(args)
    sample = read_sample(_resolve_path(base, _field(cfg, "sample", str)))
    M = sample.manifold
    K = make_kernel(_field(cfg, "kernel", str, "epanechnikov"), M.dim)
    density = density_from_dict(cfg["density"], M.tag) if cfg.get("density") else None
    win = _window(cfg, "kde_window", sample.window.dim, None) or sample.window
    r0 = _field(cfg, "r0", float, DEFAULT_R0)
    b = _bandwidth(cfg, M, K, density, sample.intensity, win.volume, r0)
    kcfg = KdeConfig(K, b, sample.intensity, win, M, r0)
    sub = sample.restrict(win)
    eta = _eta_points(cfg, M, _seed(args, cfg))
    fhat = np.atleast_1d(kde_evaluate(sub, kcfg, eta, index=build_index(sub, kcfg)))
    ftrue = density.pdf(eta) if density is not None else [None] * len(eta)
    header = [f"eta{i + 1}" for i in range(M.n_coords)] + ["f_hat", "f_true"]
    rows = [list(e) + [f, t] for e, f, t in zip(eta, fhat, ftrue)]
    out = Path(args.out)
    write_table(out / "density.csv", header, rows)
    report = {"config": kcfg.to_dict(), "n_points": sub.n, "n_eta": len(eta)}
    if density is not None:
        report["bound_report"] = bound_report(kcfg, density_constants(density)).to_dict()
    write_json(out / "density_report.json", report)
    return 0


def cmd_estimate_entropy(args):
    cfg, base = _load_config(args)
    sample = read_sample(_resolve_path(base, _field(cfg, "sample", str)))
    M = sample.manifold
    d = sample.window.dim
    K = make_kernel(_field(cfg, "kernel", str, "epanechnikov"), M.dim)
    density = density_from_dict(cfg["density"], M.tag) if cfg.get("density") else None
    Bp = _window(cfg, "kde_window", d)
    B = _window(cfg, "window", d)
    r0 = _field(cfg, "r0", float, DEFAULT_R0)
    b = _bandwidth(cfg, M, K, density, sample.intensity, Bp.volume, r0)
    ecfg = EntropyConfig(B, KdeConfig(K, b, sample.intensity, Bp, M, r0),
                         _field(cfg, "floor", float, DEFAULT_FLOOR),
                         _field(cfg, "leave_one_out", bool, False))
    star = cfg.get("sample_star")
    if star:
        est = entropy_estimate_modified(sample, read_sample(_resolve_path(base, star)), ecfg)
    else:
        est = entropy_estimate(sample, ecfg)
    out = est.to_dict()
    out["config"] = ecfg.to_dict()
    out["estimator"] = "modified" if star else "plug_in"
    if density is not None:
        out["bound_report"] = bound_report(ecfg.kde, density_constants(density), B.volume).to_dict()
    write_json(Path(args.out) / "entropy.json", out)
    log.info("entropy estimate %.6f from %d points", est.value, est.n_points)
    return 0


def _experiment_config(cfg, args, default_kind=None):
    cfg = dict(cfg)
    if default_kind and "experiment" not in cfg:
        cfg["experiment"] = default_kind
    if args.seed is not None:
        cfg["seed"] = args.seed
    try:
        return ExperimentConfig.from_dict(cfg)
    except TypeError as exc:
        raise InputError(f"experiment config: {exc}") from None


def _write_experiment(res, out):
    out = Path(out)
    write_json(out / "result.json", res.to_json_dict())
    flat = [{k: v for k, v in r.items()} for r in res.rows]
    write_dict_rows(out / "rows.csv", flat)
    if res.clt:
        qq = []
        for rung in res.clt["rungs"]:
            qq += [[rung["rung"], t, e] for t, e in zip(rung["qq_theoretical"], rung["qq_empirical"])]
        write_table(out / "qq.csv", ["rung", "theoretical", "empirical"], qq)
    write_json(out / "timing.json", {"wall_clock_seconds": res.wall_clock})


def _report_assertions(res):
    for name, ok in res.assertions.items():
        log.warning("%s %s: %s", res.experiment, name, "PASS" if ok else "FAIL")
    return 0 if res.passed else 1


def _run(ecfg, args):
    """run_experiment, saving finished rows to partial_rows.csv on failure."""
    try:
        return run_experiment(ecfg, threads=args.threads)
    except MppError as exc:
        rows = getattr(exc, "partial_rows", None)
        if rows:
            write_dict_rows(Path(args.out) / "partial_rows.csv", rows)
        raise


def cmd_experiment(args):
    cfg, _ = _load_config(args)
    res = _run(_experiment_config(cfg, args), args)
    _write_experiment(res, args.out)
    return _report_assertions(res)


def cmd_clt(args):
    cfg, _ = _load_config(args)
    ecfg = _experiment_config(cfg, args, "CltEntropy")
    if ecfg.experiment not in ("CltEntropy", "CltSynthetic"):
        raise InputError("clt needs a CltEntropy or CltSynthetic config")
    res = _run(ecfg, args)
    out = Path(args.out)
    _write_experiment(res, out)
    z_rows, reports = [], []
    for row, rung in zip(res.rows, res.clt["rungs"]):
        z = np.asarray(rung["standardized"])
        z_rows += [[rung["rung"], r, v] for r, v in enumerate(z)]
        if ecfg.experiment == "CltEntropy":
            rep = CltReport(z, row["ks_distance"], row["rate_bound"], row["sigma_n"], row["m"],
                            row["window"], row["kde_window"],
                            {"random_sum_bound": row["random_sum_bound"]})
        else:
            rep = CltReport(z, row["ks_distance"], row["random_sum_bound"],
                            float(np.sqrt(row["limit_variance"])), row["m"], row["side"] ** row["d"],
                            0.0, {"limit_variance": row["limit_variance"]})
        reports.append({"rung": row["rung"], **rep.summary()})
        write_table(out / f"qq_rung{row['rung']}.csv", ["theoretical", "empirical"],
                    list(zip(rung["qq_theoretical"], rung["qq_empirical"])))
    write_table(out / "standardized.csv", ["rung", "replication", "z"], z_rows)
    write_json(out / "clt_report.json", {"rungs": reports, "assertions": res.assertions,
                                         "passed": res.passed})
    return _report_assertions(res)


def cmd_audit(args):
    cfg, _ = _load_config(args, required=False)
    if not cfg:
        cfg = packaged_config("audit")
    res = run_experiment(_experiment_config(cfg, args, "KernelAudit"), threads=args.threads)
    out = Path(args.out)
    write_json(out / "audit.json", res.to_json_dict())
    write_dict_rows(out / "audit.csv", res.rows)
    return _report_assertions(res)


COMMANDS = {
    "simulate": cmd_simulate,
    "estimate-density": cmd_estimate_density,
    "estimate-entropy": cmd_estimate_entropy,
    "clt": cmd_clt,
    "experiment": cmd_experiment,
    "audit": cmd_audit,
}


def _u64(text):
    v = int(text, 0)
    if not 0 <= v < 2 ** 64:
        raise argparse.ArgumentTypeError("seed must be an unsigned 64-bit integer")
    return v


def build_parser():
    ap = argparse.ArgumentParser(prog="mppentropy",
                                 description="Mark density and entropy estimation for Poisson "
                                             "marked point processes with manifold marks.")
    ap.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--out", default=".", help="output directory")
        p.add_argument("--seed", type=_u64, help="master seed, overrides the config")
        p.add_argument("--threads", type=int, default=0, help="worker threads, 0 = all cores")
        p.add_argument("-v", "--verbose", action="count", default=0)
    return ap


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging.basicConfig(level=level, format="%(levelname)s %(message)s", stream=sys.stderr)
    if args.threads < 0:
        log.error("--threads must be nonnegative")
        return 2
    set_default_threads(args.threads)
    t0 = time.perf_counter()
    try:
        code = COMMANDS[args.command](args)
    except MppError as exc:
        log.error("%s: %s", type(exc).__name__, exc)
        return exc.exit_code
    except Exception as exc:  # noqa: BLE001
        log.error("internal error: %r", exc, exc_info=args.verbose > 1)
        return 3
    log.info("%s finished in %.2fs", args.command, time.perf_counter() - t0)
    return code


if __name__ == "__main__":
    sys.exit(main())
