import numpy as np
import pytest
from scipy.stats import poisson

from mppentropy.densities import UniformDensity, VonMisesFisher, density_constants
from mppentropy.entropy import (EntropyConfig, _expected_log_count_ratio, entropy_estimate,
                                entropy_estimate_modified, entropy_l2_bound, estimate_e_log_fhat,
                                lagged_covariance, mu_hat, optimal_bandwidth_entropy,
                                sigma_n_estimate)
from mppentropy.exceptions import DegenerateError, InputError
from mppentropy.kde import KdeConfig, c_theta, fallback_bandwidth_density, kde_naive
from mppentropy.kernels import make_kernel
from mppentropy.manifold import get_manifold
from mppentropy.point_process import BoxWindow, MppSample, simulate_mpp

S2 = get_manifold("sphere2")
EPA = make_kernel("epanechnikov", 2)
UNI = UniformDensity("sphere2")
VMF = VonMisesFisher("sphere2", [0, 0, 1.0], 2.0)


def ecfg(vol_B, vol_Bp, b, lam, d=1, loo=False):
    B = BoxWindow.cube_of_volume(vol_B, d)
    Bp = BoxWindow.cube_of_volume(vol_Bp, d)
    return EntropyConfig(B, KdeConfig(EPA, b, lam, Bp, S2), leave_one_out=loo)


def manual_estimate(sample, cfg, points=None):
    """-1/(lambda |B|) sum log f_hat_{B'+Y_i}(xi_i) with the naive KDE."""
    pts = sample if points is None else points
    total = 0.0
    for y, xi in zip(pts.locations, pts.marks):
        if cfg.window.contains(y[None])[0]:
            total += np.log(kde_naive(sample, cfg.kde, xi, shift=y))
    return -total / (cfg.kde.intensity * cfg.window.volume)


@pytest.mark.parametrize("d", [1, 2])
def test_plug_in_matches_manual_formula(d):
    cfg = ecfg(9.0 if d == 2 else 6.0, 1.0, 0.9, 20.0, d)
    s = simulate_mpp(20.0, cfg.dilated_window, VMF, 4)
    est = entropy_estimate(s, cfg)
    assert est.value == pytest.approx(manual_estimate(s, cfg), rel=1e-12)
    assert est.n_points == int(cfg.window.contains(s.locations).sum())
    assert est.diagnostics["floored_count"] == 0


def test_modified_matches_manual_formula():
    cfg = ecfg(6.0, 1.0, 1.4, 40.0)
    psi = simulate_mpp(40.0, cfg.dilated_window, VMF, 5)
    star = simulate_mpp(40.0, cfg.window, VMF, 5, role="star")
    est = entropy_estimate_modified(psi, star, cfg)
    assert est.diagnostics["floored_count"] == 0
    assert est.value == pytest.approx(manual_estimate(psi, cfg, star), rel=1e-12)


def test_leave_one_out_drops_self_term():
    cfg = ecfg(4.0, 1.0, 0.9, 20.0, loo=True)
    s = simulate_mpp(20.0, cfg.dilated_window, VMF, 6)
    incl = entropy_estimate(s, ecfg(4.0, 1.0, 0.9, 20.0))
    excl = entropy_estimate(s, cfg)
    self_term = EPA.K0 * cfg.kde.scale / EPA.normalization
    sel = cfg.window.contains(s.locations)
    fh_in = np.exp(incl.terms)
    np.testing.assert_allclose(np.exp(excl.terms), fh_in - self_term, rtol=1e-10, atol=1e-14)
    assert sel.sum() == excl.n_points


def test_empty_windows_give_zero():
    cfg = ecfg(4.0, 1.0, 0.9, 20.0)
    win = cfg.dilated_window
    empty = MppSample(np.zeros((0, 1)), np.zeros((0, 3)), 20.0, win, S2)
    assert entropy_estimate(empty, cfg).value == 0.0
    psi = simulate_mpp(20.0, win, VMF, 1)
    star = MppSample(np.zeros((0, 1)), np.zeros((0, 3)), 20.0, cfg.window, S2)
    assert entropy_estimate_modified(psi, star, cfg).value == 0.0


def test_window_checks():
    with pytest.raises(InputError):
        ecfg(1.0, 4.0, 0.9, 20.0)
    cfg = ecfg(4.0, 1.0, 0.9, 20.0)
    s = simulate_mpp(20.0, cfg.window, VMF, 1)
    with pytest.raises(InputError):
        entropy_estimate(s, cfg)


def test_mu_hat_normalization():
    B = BoxWindow((10.0,))
    empty = MppSample(np.zeros((0, 1)), np.zeros((0, 3)), 3.0, B, S2)
    assert mu_hat(empty, B, -2.0, 3.0) == 0.0
    loc = (np.arange(30) + 0.5)[:, None] / 3.0
    marks = np.tile([0, 0, 1.0], (30, 1))
    full = MppSample(loc, marks, 3.0, B, S2)
    assert mu_hat(full, B, -2.0, 3.0) == pytest.approx(2.0)
    assert mu_hat(full, B, -np.log(4 * np.pi), 3.0) == pytest.approx(np.log(4 * np.pi))


def test_expected_log_count_ratio_oracle():
    for mean in (3.0, 50.0, 400.0):
        n = np.arange(1, int(mean * 10) + 200)
        direct = float(np.sum(poisson.pmf(n, mean) * np.log(n / mean)))
        assert _expected_log_count_ratio(mean) == pytest.approx(direct, abs=1e-13)


def test_uniform_estimates_and_count_regression():
    """lambda=50, |B_n|=400, |B'|=100, 200 replications: both estimators near
    log 4 pi, and the modified estimator regresses on the count with slope
    close to -E log f_hat."""
    lam = 50.0
    b = fallback_bandwidth_density(100.0, 2)
    cfg = ecfg(400.0, 100.0, b, lam)
    plug, mod, count = [], [], []
    for r in range(200):
        psi = simulate_mpp(lam, cfg.dilated_window, UNI, 31, r)
        star = simulate_mpp(lam, cfg.window, UNI, 31, r, role="star")
        plug.append(entropy_estimate(psi, cfg).value)
        mod.append(entropy_estimate_modified(psi, star, cfg).value)
        count.append(star.n / (lam * cfg.window.volume))
    H = np.log(4 * np.pi)
    assert abs(np.mean(plug) - H) < 0.05
    assert abs(np.mean(mod) - H) < 0.05
    x, y = np.array(count), np.array(mod)
    A = np.vstack([x, np.ones_like(x)]).T
    coef, res, *_ = np.linalg.lstsq(A, y, rcond=None)
    resid = y - A @ coef
    se = np.sqrt(resid.var(ddof=2) / np.sum((x - x.mean()) ** 2))
    elog = estimate_e_log_fhat(UNI, cfg, 1000, 32, method="rb")["mean"]
    assert abs(coef[0] - (-elog)) <= 3 * se


def test_e_log_fhat_uniform_consistent():
    cfg = ecfg(800.0, 400.0, fallback_bandwidth_density(400.0, 2), 50.0)
    est = estimate_e_log_fhat(UNI, cfg, 400, 7, method="mc")
    assert abs(est["mean"] + np.log(4 * np.pi)) <= 3 * est["se"]


def test_e_log_fhat_se_scaling_and_reproducibility():
    cfg = ecfg(20.0, 4.0, 1.0, 50.0)
    a = estimate_e_log_fhat(VMF, cfg, 400, 8, method="mc")
    b = estimate_e_log_fhat(VMF, cfg, 800, 9, method="mc")
    assert a["se"] / b["se"] == pytest.approx(np.sqrt(2), rel=0.15)
    again = estimate_e_log_fhat(VMF, cfg, 400, 8, method="mc")
    assert a == again
    rb1 = estimate_e_log_fhat(VMF, cfg, 200, 8, method="rb")
    rb2 = estimate_e_log_fhat(VMF, cfg, 200, 8, method="rb", threads=2)
    assert rb1 == rb2


def test_rb_and_mc_agree():
    cfg = ecfg(20.0, 4.0, 1.5, 50.0)
    mc = estimate_e_log_fhat(VMF, cfg, 2000, 10, method="mc")
    rb = estimate_e_log_fhat(VMF, cfg, 1000, 11, method="rb")
    assert rb["se"] < mc["se"] / 5
    assert abs(mc["mean"] - rb["mean"]) <= 3 * np.hypot(mc["se"], rb["se"])


def test_lagged_covariance_structure():
    cfg = ecfg(20.0, 2.0, 1.5, 50.0)
    far = lagged_covariance(VMF, cfg, [2.5], 1000, 12, resolution=8)
    assert abs(far["cov"]) <= 3 * far["se"]
    zero = lagged_covariance(VMF, cfg, [0.0], 1000, 13, resolution=8)
    half = lagged_covariance(VMF, cfg, [1.0], 1000, 14, resolution=8)
    assert zero["cov"] >= half["cov"] - 3 * np.hypot(zero["se"], half["se"])
    assert half["cov"] > far["cov"]


def test_sigma_positive_for_vmf():
    cfg = ecfg(20.0, 2.0, 1.5, 50.0)
    out = sigma_n_estimate(VMF, cfg, 400, lag_grid_size=3, seed=15, resolution=8)
    assert out["sigma_sq"] > 0
    c = out["components"]
    assert out["sigma_sq"] == pytest.approx(c["var_term"] + c["cov_term"])
    assert c["cov_integral"] > 0
    with pytest.raises(InputError):
        sigma_n_estimate(VMF, cfg, 100)


# bound and bandwidth ---------------------------------------------------------------

def test_entropy_bound_arithmetic():
    K0, Ct, vol = 2 / np.pi, 1.1884, 4 * np.pi
    L1, L2 = 4.9, 2.149
    lam, vB, vBp, b = 50.0, 1e4, 1e2, 0.3
    expected = 3 * (8 * K0 * Ct * vol / (lam ** 2 * vB * vBp * b ** 2) + 4 / (lam ** 2 * vBp)
                    + 32 * b ** 2 * L2 + L1 / (lam * vB))
    assert entropy_l2_bound(K0, Ct, vol, lam, vB, vBp, b, 2, L1, L2) == pytest.approx(expected, rel=1e-14)
    no_l2 = 3 * (8 * K0 * Ct * vol / (lam ** 2 * vB * vBp * b ** 2) + 4 / (lam ** 2 * vBp) + L1 / (lam * vB))
    assert entropy_l2_bound(K0, Ct, vol, lam, vB, vBp, b, 2, L1, 0.0) == pytest.approx(no_l2, rel=1e-14)


def test_entropy_bound_vanishes_along_optimal_schedule():
    c = density_constants(VMF)
    Ct = c_theta(S2, np.pi / 2)
    vals = []
    for k in range(6):
        vB, vBp = 100.0 * 4 ** k, 10.0 * 4 ** k
        b = optimal_bandwidth_entropy(2, EPA.K0, Ct, 4 * np.pi, c["L2"], 50.0, vB, vBp)
        vals.append(entropy_l2_bound(EPA.K0, Ct, 4 * np.pi, 50.0, vB, vBp, b, 2, c["L1"], c["L2"]))
    assert np.all(np.diff(vals) < 0) and vals[-1] < vals[0] / 50
    assert 0 < vals[0] < np.inf


def test_optimal_entropy_bandwidth_stationary_and_homogeneous():
    c = density_constants(VMF)
    Ct = c_theta(S2, 1.0)
    args = (2, EPA.K0, Ct, 4 * np.pi, c["L2"], 50.0, 1e4, 1e2)
    b = optimal_bandwidth_entropy(*args)
    expected = (2 * EPA.K0 * Ct * 4 * np.pi / (8 * c["L2"] * 50.0 ** 2 * 1e6)) ** 0.25
    assert b == pytest.approx(expected, rel=1e-14)

    def e(x):
        return entropy_l2_bound(EPA.K0, Ct, 4 * np.pi, 50.0, 1e4, 1e2, x, 2, c["L1"], c["L2"])

    def bterms(x):
        return e(x) - 3 * (4 / (50.0 ** 2 * 1e2) + c["L1"] / (50.0 * 1e4))

    h = 6e-6 * b
    deriv = (bterms(b + h) - bterms(b - h)) / (2 * h)
    assert abs(deriv) * b < 1e-8 * bterms(b)
    scaled = optimal_bandwidth_entropy(2, EPA.K0, Ct, 4 * np.pi, c["L2"], 50.0, 1e4 * 2 ** 4, 1e2)
    assert scaled == pytest.approx(b / 2, rel=1e-14)
    with pytest.raises(DegenerateError) as exc:
        optimal_bandwidth_entropy(2, EPA.K0, Ct, 4 * np.pi, 0.0, 50.0, 1e4, 1e2)
    assert exc.value.fallback == pytest.approx(1e6 ** -0.25)
