"""Acceptance suite: each criterion prints one PASS/FAIL line.

The packaged configs are run through the command-line entry point exactly as
a user would run them.  Runs are cached per module, so each suite executes
once (plus once more, with a different thread count, for the determinism
criterion).
"""
import json
import math
import time
from pathlib import Path

import pytest

from mppentropy.cli import main, packaged_config
from mppentropy.densities import VonMisesFisher, density_constants
from mppentropy.entropy import entropy_l2_bound, optimal_bandwidth_entropy
from mppentropy.kde import c_theta, l2_bound, optimal_bandwidth_density
from mppentropy.kernels import make_kernel
from mppentropy.manifold import get_manifold, unit_ball_volume

from conftest import ACCEPTANCE_LINES

COMMAND = {"audit": "audit", "clt_entropy": "clt", "clt_synthetic_d1": "clt",
           "clt_synthetic_d2": "clt"}
RESULT_FILE = {"audit": "audit.json"}


class Runs:
    def __init__(self, root):
        self.root = Path(root)
        self.cache = {}

    def get(self, name, threads=1):
        key = (name, threads)
        if key not in self.cache:
            out = self.root / f"{name}-t{threads}"
            cfg = self.root / f"{name}.json"
            cfg.write_text(json.dumps(packaged_config(name)))
            t0 = time.perf_counter()
            code = main([COMMAND.get(name, "experiment"), "--config", str(cfg), "--out", str(out),
                         "--threads", str(threads)])
            secs = time.perf_counter() - t0
            res = json.loads((out / RESULT_FILE.get(name, "result.json")).read_text())
            self.cache[key] = {"code": code, "out": out, "seconds": secs, "result": res}
        return self.cache[key]


@pytest.fixture(scope="module")
def runs(tmp_path_factory):
    return Runs(tmp_path_factory.mktemp("acceptance"))


def report(n, ok, detail):
    line = f"criterion {n}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def test_criterion_1_kernel_audit(runs):
    r = runs.get("audit")
    s = r["result"]["summary"]
    ok = (s["max_unit_integral_error"] < 1e-4 and s["max_volume_identity_error"] < 1e-4
          and s["max_roundtrip_error"] < 1e-9 and r["code"] == 0 and r["seconds"] < 60)
    report(1, ok, f"{s['combinations']} combinations, unit {s['max_unit_integral_error']:.2e}, "
                  f"volume {s['max_volume_identity_error']:.2e}, "
                  f"round-trip {s['max_roundtrip_error']:.2e}, {r['seconds']:.1f}s")


def test_criterion_2_kde_bias_rate(runs):
    r = runs.get("kde_bias")
    rows = r["result"]["rows"]
    slope = r["result"]["summary"].get("bias_slope")
    c2 = density_constants(VonMisesFisher("sphere2", [0, 0, 1.0], 2.0))["C2"]
    k2 = make_kernel("epanechnikov", 2).K2
    within = [abs(x["bias"][0]) <= x["b"] ** 2 * c2 * k2 + 3 * x["probe_se"][0] for x in rows]
    ok = slope is not None and 1.6 <= slope <= 2.4 and all(within) and r["seconds"] < 300
    oracle = r["result"]["summary"].get("expected_bias_slope")
    report(2, ok, f"MC bias slope {slope:.3f} (quadrature expected-bias slope {oracle:.3f}), "
                  f"within bound {sum(within)}/{len(within)}, {r['seconds']:.1f}s")


def test_criterion_3_kde_variance(runs):
    r = runs.get("kde_variance")
    rows = r["result"]["rows"]
    rel = max(max(x["variance_rel_error"]) for x in rows)
    l2_ok = all(x["l2_error"] <= x["l2_bound"] for x in rows)
    n_eta = len(rows[0]["variance_rel_error"])
    ok = (rel <= 0.15 and l2_ok and n_eta == 5
          and r["result"]["config"]["replications"] == 2000 and r["seconds"] < 300)
    report(3, ok, f"max variance rel error {rel:.3f} at {n_eta} probes, "
                  f"L2 within bound at every rung: {l2_ok}, {r['seconds']:.1f}s")


def test_criterion_4_optimal_bandwidths():
    t0 = time.perf_counter()
    M = get_manifold("sphere2")
    K = make_kernel("epanechnikov", 2)
    c = density_constants(VonMisesFisher("sphere2", [0, 0, 1.0], 2.0))
    ct = c_theta(M, 1.0)
    p, lam, V, om = 2, 50.0, M.total_volume, unit_ball_volume(2)

    def dens_bound(b, vol):
        return l2_bound(ct, om, K.K0, lam, vol, b, p, c["C2"], K.K2, V)

    def ent_bterms(b, vB, vBp):
        const = 3 * (4 / (lam ** 2 * vBp) + c["L1"] / (lam * vB))
        return entropy_l2_bound(K.K0, ct, V, lam, vB, vBp, b, p, c["L1"], c["L2"]) - const

    def rel_deriv(f, b):
        h = 6e-6 * b
        return abs((f(b + h) - f(b - h)) / (2 * h)) * b / f(b)

    bd = optimal_bandwidth_density(p, ct, om, K.K0, c["C2"], K.K2, V, lam, 100.0)
    be = optimal_bandwidth_entropy(p, K.K0, ct, V, c["L2"], lam, 1e4, 1e2)
    rd = rel_deriv(lambda b: dens_bound(b, 100.0), bd)
    re = rel_deriv(lambda b: ent_bterms(b, 1e4, 1e2), be)
    hd = optimal_bandwidth_density(p, ct, om, K.K0, c["C2"], K.K2, V, lam, 100.0 * 2 ** (p + 4)) / bd
    he = optimal_bandwidth_entropy(p, K.K0, ct, V, c["L2"], lam, 1e4 * 2 ** (p + 2), 1e2) / be
    secs = time.perf_counter() - t0
    ok = rd < 1e-8 and re < 1e-8 and abs(hd - 0.5) < 1e-15 and abs(he - 0.5) < 1e-15 and secs < 1
    report(4, ok, f"relative derivative density {rd:.1e}, entropy {re:.1e}; "
                  f"homogeneity ratios {hd!r}, {he!r}; {secs:.3f}s")


def _entropy_suite(r, truth_check):
    rows = r["result"]["rows"]
    errs = [x["abs_error"] for x in rows]
    decreasing = all(b < a for a, b in zip(errs, errs[1:]))
    within = all(x["abs_error"] <= x["sqrt_l2_bound"] + 3 * x["se"] for x in rows)
    return decreasing and within and errs[-1] < 0.05 and truth_check, errs


def test_criterion_5_entropy_consistency(runs):
    u = runs.get("entropy_uniform")
    v = runs.get("entropy_vmf")
    u_truth = abs(u["result"]["summary"]["true_entropy"] - math.log(4 * math.pi)) < 1e-12
    gap = v["result"]["summary"]["closed_form_gap"]
    ok_u, eu = _entropy_suite(u, u_truth)
    ok_v, ev = _entropy_suite(v, gap < 1e-5)
    secs = u["seconds"] + v["seconds"]
    ok = ok_u and ok_v and secs < 600
    report(5, ok, "uniform errors " + ", ".join(f"{e:.4f}" for e in eu)
           + "; vMF errors " + ", ".join(f"{e:.4f}" for e in ev)
           + f"; truth gap {gap:.1e}; {secs:.1f}s")


def test_criterion_6_limit_variance(runs):
    parts, ok = [], True
    for name in ("clt_synthetic_d1", "clt_synthetic_d2"):
        r = runs.get(name)
        row = r["result"]["rows"][0]
        rel = abs(row["mc_variance_per_volume"] / row["limit_variance"] - 1)
        ok = ok and rel <= 0.10 and r["result"]["config"]["replications"] == 1000 and r["seconds"] < 180
        parts.append(f"d={row['d']} p={row['side']:.0f} rel {rel:.3f} ({r['seconds']:.1f}s)")
    report(6, ok, "; ".join(parts))


def test_criterion_7_synthetic_clt(runs):
    parts, ok = [], True
    for name in ("clt_synthetic_d1", "clt_synthetic_d2"):
        r = runs.get(name)
        row = r["result"]["rows"][0]
        ok = (ok and row["clt_replications"] == 500 and row["ks_distance"] < 0.08
              and abs(row["mean"]) <= 0.134 and abs(row["variance"] - 1) <= 0.19 and r["seconds"] < 180)
        parts.append(f"d={row['d']} KS {row['ks_distance']:.3f} mean {row['mean']:+.3f} "
                     f"var {row['variance']:.3f}")
    report(7, ok, "; ".join(parts))


def test_criterion_8_entropy_clt(runs):
    r = runs.get("clt_entropy")
    rows = r["result"]["rows"]
    ks = [x["ks_distance"] for x in rows]
    m3 = [x["third_moment_surrogate"] for x in rows]
    slope = r["result"]["summary"]["rate_bound_slope"]
    ok = (all(k < 0.10 for k in ks) and ks[-1] <= ks[0] + 0.02
          and all(x["sigma_sq"] > 0 for x in rows) and max(m3) <= 2 * min(m3)
          and abs(slope + 0.5) <= 0.05 and [x["m"] for x in rows] == [2, 3, 4]
          and r["seconds"] < 900)
    report(8, ok, "KS " + ", ".join(f"{k:.3f}" for k in ks)
           + f"; sigma^2 min {min(x['sigma_sq'] for x in rows):.3g}"
           + f"; E|log f|^3 ratio {max(m3) / min(m3):.3f}; rate slope {slope:.4f}; "
           + f"{r['seconds']:.1f}s")


SUITES = ["audit", "kde_bias", "kde_variance", "entropy_uniform", "entropy_vmf",
          "clt_synthetic_d1", "clt_synthetic_d2", "clt_entropy"]


def test_criterion_9_determinism(runs):
    diffs = []
    for name in SUITES:
        a = runs.get(name, threads=1)["out"]
        b = runs.get(name, threads=2)["out"]
        files = sorted(p.name for p in a.iterdir() if p.name != "timing.json")
        if files != sorted(p.name for p in b.iterdir() if p.name != "timing.json"):
            diffs.append(f"{name}: file sets differ")
            continue
        diffs += [f"{name}/{f}" for f in files if (a / f).read_bytes() != (b / f).read_bytes()]
    report(9, not diffs, f"{len(SUITES)} suites rerun with 2 threads; "
                         + ("all outputs byte-identical" if not diffs else "differ: " + ", ".join(diffs)))
