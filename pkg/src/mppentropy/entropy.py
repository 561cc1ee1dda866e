"""Plug-in differential entropy of the mark law and its CLT ingredients.

Each sample point contributes log f_hat(xi_i), where f_hat is built from the
points of a copy of the estimation window B' translated to Y_i.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy.stats import poisson

from ._engine import MarkIndex
from ._parallel import ordered_map
from .densities import true_entropy  # noqa: F401  (re-exported)
from .exceptions import DegenerateError, InputError
from .kde import KdeConfig
from .point_process import BoxWindow, MppSample, simulate_mpp
from .rng import substream

DEFAULT_FLOOR = float(np.exp(-40.0))


@dataclass(frozen=True)
class EntropyConfig:
    """window is B_n (where summands are taken), kde.window is B' (the
    estimation window, translated to each summand's location)."""
    window: BoxWindow
    kde: KdeConfig
    floor: float = DEFAULT_FLOOR
    leave_one_out: bool = False

    def __post_init__(self):
        w = BoxWindow.from_dict(self.window)
        object.__setattr__(self, "window", w)
        if w.dim != self.kde.window.dim:
            raise InputError("B_n and B' have different dimensions")
        if not w.contains_window(self.kde.window):
            raise InputError("the estimation window B' must lie inside B_n")
        if not self.floor > 0:
            raise InputError("log floor must be positive")

    @property
    def kde_window(self):
        return self.kde.window

    @property
    def dilated_window(self):
        return self.window.dilate(self.kde.window)

    def to_dict(self):
        return {"window": self.window.to_dict(), "kde": self.kde.to_dict(),
                "floor": self.floor, "leave_one_out": self.leave_one_out}


@dataclass
class EntropyEstimate:
    value: float
    n_points: int
    terms: np.ndarray
    diagnostics: dict = field(default_factory=dict)

    def to_dict(self, include_terms=False):
        out = {"value": self.value, "n_points": self.n_points, "diagnostics": dict(self.diagnostics)}
        if include_terms:
            out["terms"] = [float(t) for t in self.terms]
        return out


def _log_floor(fhat, floor):
    low = fhat < floor
    return np.log(np.where(low, floor, fhat)), int(low.sum())


def _translated_log_fhat(psi, query_loc, query_marks, cfg, index=None, exclude=None):
    kde = cfg.kde
    index = index or MarkIndex(psi, kde.window.sides, kde.bandwidth)
    lower = kde.window.lower + query_loc
    s = index.sums(query_marks, lower, kde.window.sides, kde.bandwidth, kde.kernel, exclude)
    fhat = s * kde.scale
    logs, floored = _log_floor(fhat, cfg.floor)
    return logs, fhat, floored


def _finish(logs, fhat, floored, cfg):
    lam = cfg.kde.intensity
    value = -float(np.sum(logs)) / (lam * cfg.window.volume)
    diag = {"floored_count": floored,
            "min_fhat": float(fhat.min()) if len(fhat) else float("nan")}
    return EntropyEstimate(value, int(len(logs)), logs, diag)


def _check_dilation(sample, cfg):
    if sample.manifold != cfg.kde.manifold:
        raise InputError("sample and configuration use different manifolds")
    if not sample.window.contains_window(cfg.dilated_window):
        raise InputError("sample window does not cover B_n dilated by B'; simulate on the dilation")


def entropy_estimate(sample: MppSample, cfg: EntropyConfig, index=None) -> EntropyEstimate:
    _check_dilation(sample, cfg)
    sel = np.flatnonzero(cfg.window.contains(sample.locations)) if sample.n else np.zeros(0, int)
    excl = sel if cfg.leave_one_out else None
    logs, fhat, floored = _translated_log_fhat(sample, sample.locations[sel], sample.marks[sel],
                                               cfg, index, excl)
    return _finish(logs, fhat, floored, cfg)


def entropy_estimate_modified(psi: MppSample, psi_star: MppSample, cfg: EntropyConfig,
                              index=None) -> EntropyEstimate:
    """Summands at the points of psi_star, f_hat built from psi."""
    _check_dilation(psi, cfg)
    if psi_star.manifold != psi.manifold:
        raise InputError("the two samples use different manifolds")
    if not psi_star.window.contains_window(cfg.window):
        raise InputError("the independent copy must cover B_n")
    sel = cfg.window.contains(psi_star.locations) if psi_star.n else np.zeros(0, bool)
    logs, fhat, floored = _translated_log_fhat(psi, psi_star.locations[sel], psi_star.marks[sel],
                                               cfg, index)
    return _finish(logs, fhat, floored, cfg)


def mu_hat(psi_star: MppSample, window: BoxWindow, e_log_fhat, intensity):
    """Centering -N*(B_n) / (lambda |B_n|) * E log f_hat."""
    window = BoxWindow.from_dict(window)
    count = int(window.contains(psi_star.locations).sum()) if psi_star.n else 0
    return -count / (float(intensity) * window.volume) * float(e_log_fhat)


# Monte Carlo over independent copies of the estimation window ---------------------

@dataclass
class WindowField:
    """Per replication and window: g = E_xi log f_hat, h = E_xi log^2 f_hat,
    c3 = E_xi |log f_hat|^3 and the point count of the window."""
    g: np.ndarray
    h: np.ndarray
    c3: np.ndarray
    counts: np.ndarray
    floored: int
    offsets: np.ndarray


def window_field(density, cfg: EntropyConfig, offsets, R, seed, mark_integration="quadrature",
                 resolution=12, marks_per_window=1, batch=128, threads=None, role="window-field"):
    """Simulate R independent clusters of translated estimation windows.

    offsets (n_off, d) are window positions inside one cluster.  With
    mark_integration="quadrature" the mark expectation inside each window is
    a quadrature over a Haar-randomly rotated grid (an unbiased estimate of
    the integral against f); with "sample" it is the mean over
    marks_per_window fresh marks drawn from f.
    """
    kde = cfg.kde
    M = kde.manifold
    offsets = np.atleast_2d(np.asarray(offsets, dtype=float))
    d = kde.window.dim
    if offsets.shape[1] != d:
        raise InputError("offsets must have one column per location dimension")
    offsets = offsets - offsets.min(axis=0)
    sides = np.array(kde.window.sides)
    extent = offsets.max(axis=0) + sides
    n_off = len(offsets)
    if mark_integration == "quadrature":
        grid, gw = M.quadrature_grid(resolution)
        nq = len(gw)
    elif mark_integration == "sample":
        nq = int(marks_per_window)
    else:
        raise InputError("mark_integration must be 'quadrature' or 'sample'")
    nb = int(np.ceil(R / batch))

    def run(bi):
        r0 = bi * batch
        nr = min(batch, R - r0)
        win = BoxWindow((extent[0] * nr,) + tuple(extent[1:]))
        psi = simulate_mpp(kde.intensity, win, density, seed, bi, role)
        rng = substream(seed, role, bi, "marks")
        index = MarkIndex(psi, sides, kde.bandwidth)
        lower = np.zeros((nr, n_off, d))
        lower[:, :, :] = offsets[None]
        lower[:, :, 0] += extent[0] * np.arange(nr)[:, None]
        q_lower = np.repeat(lower.reshape(-1, d), nq, axis=0)
        if mark_integration == "quadrature":
            pts = M.random_isometries(rng, nr * n_off, grid).reshape(-1, M.n_coords)
            wts = np.tile(gw, nr * n_off) * density.pdf(pts)
        else:
            pts = density.sample(rng, nr * n_off * nq)
            wts = np.full(len(pts), 1.0 / nq)
        s = index.sums(pts, q_lower, sides, kde.bandwidth, kde.kernel)
        logs, fl = _log_floor(s * kde.scale, cfg.floor)
        wl = (wts * logs).reshape(nr, n_off, nq)
        g = wl.sum(axis=2)
        h = (wl * logs.reshape(nr, n_off, nq)).sum(axis=2)
        c3 = (wts * np.abs(logs) ** 3).reshape(nr, n_off, nq).sum(axis=2)
        counts = np.zeros((nr, n_off), np.int64)
        if psi.n:
            y = psi.locations
            rep = np.minimum((y[:, 0] // extent[0]).astype(np.int64), nr - 1)
            for a in range(n_off):
                lo = lower[rep, a, :]
                ins = np.all((y >= lo) & (y < lo + sides), axis=1)
                counts[:, a] = np.bincount(rep[ins], minlength=nr)
        return g, h, c3, counts, fl

    parts = ordered_map(run, range(nb), threads)
    return WindowField(np.concatenate([p[0] for p in parts]), np.concatenate([p[1] for p in parts]),
                       np.concatenate([p[2] for p in parts]), np.concatenate([p[3] for p in parts]),
                       int(sum(p[4] for p in parts)), offsets)


def _expected_log_count_ratio(mean):
    """E[log(N / mean); N >= 1] for N ~ Poisson(mean)."""
    sd = np.sqrt(mean)
    lo = max(1, int(np.floor(mean - 14 * sd)))
    hi = int(np.ceil(mean + 14 * sd)) + 20
    n = np.arange(lo, hi + 1)
    return float(np.sum(poisson.pmf(n, mean) * np.log(n / mean)))


def estimate_e_log_fhat(density, cfg: EntropyConfig, R, seed, method="mc", resolution=12,
                        marks_per_window=1, threads=None):
    """E log f_hat_{B'}(xi_0) over fresh (sample, mark) pairs.

    method "mc": mean of log f_hat at marks_per_window independent marks per
    replication.  method "rb": the mark is integrated out on a randomly rotated
    quadrature grid and the window count enters as a control variate whose
    Poisson expectation is exact.
    """
    R = int(R)
    if R < 100:
        raise InputError("need at least 100 replications")
    d = cfg.kde.window.dim
    origin = np.zeros((1, d))
    if method == "mc":
        wf = window_field(density, cfg, origin, R, seed, "sample", marks_per_window=marks_per_window,
                          threads=threads, role="e-log-fhat")
        x = wf.g[:, 0]
        return {"mean": float(x.mean()), "se": float(x.std(ddof=1) / np.sqrt(R)),
                "R": R, "method": method, "floored_count": wf.floored}
    if method != "rb":
        raise InputError("method must be 'mc' or 'rb'")
    wf = window_field(density, cfg, origin, R, seed, "quadrature", resolution=resolution,
                      threads=threads, role="e-log-fhat")
    mean_n = cfg.kde.intensity * cfg.kde.window.volume
    n = wf.counts[:, 0]
    cv = np.where(n > 0, np.log(np.maximum(n, 1) / mean_n), 0.0)
    x = wf.g[:, 0] - cv
    mean = float(x.mean()) + _expected_log_count_ratio(mean_n)
    return {"mean": mean, "se": float(x.std(ddof=1) / np.sqrt(R)), "R": R, "method": method,
            "floored_count": wf.floored}


def lag_covariances(wf: WindowField, pairs):
    """Covariance estimate and standard error for each (a, b) window pair."""
    gbar = wf.g.mean()
    out = []
    for a, b in pairs:
        prod = (wf.g[:, a] - gbar) * (wf.g[:, b] - gbar)
        out.append((float(prod.mean()), float(prod.std(ddof=1) / np.sqrt(len(prod)))))
    return out


def lagged_covariance(density, cfg: EntropyConfig, lag, R, seed, resolution=12, threads=None):
    """Cov(log f_hat_{B'}(xi), log f_hat_{B'+lag}(xi')) with independent marks."""
    lag = np.asarray(lag, dtype=float).reshape(1, -1)
    offsets = np.concatenate([np.zeros_like(lag), lag])
    wf = window_field(density, cfg, offsets, R, seed, resolution=resolution, threads=threads,
                      role="lagged-cov")
    (cov, se), = lag_covariances(wf, [(0, 1)])
    return {"cov": cov, "se": se}


def sigma_n_estimate(density, cfg: EntropyConfig, R, lag_grid_size=5, seed=0, resolution=12,
                     mark_integration="quadrature", threads=None):
    """lambda Var(log f_hat(xi_0)) + lambda^2 int Cov(...) over R^d.

    The covariance vanishes once the two windows stop overlapping, so the
    integral runs over (-s, s)^d with s the side of B'.  Windows sit on a
    lattice of spacing s / lag_grid_size; every lattice lag is estimated from
    all window pairs realizing it, and the integral is the lattice sum times
    the cell volume.
    """
    R = int(R)
    if R < 200:
        raise InputError("need at least 200 replications")
    L = int(lag_grid_size)
    if L < 1:
        raise InputError("lag_grid_size must be positive")
    kde = cfg.kde
    d = kde.window.dim
    sides = np.array(kde.window.sides)
    step = sides / L
    n_w = 2 * L - 1
    ks = np.stack(np.meshgrid(*[np.arange(n_w)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    wf = window_field(density, cfg, ks * step, R, seed, mark_integration, resolution=resolution,
                      threads=threads, role="sigma-n")
    lam = kde.intensity
    gbar = float(wf.g.mean())
    var = float(wf.h.mean()) - gbar ** 2
    lookup = {tuple(k): i for i, k in enumerate(ks)}
    lags = np.stack(np.meshgrid(*[np.arange(-(L - 1), L)] * d, indexing="ij"), axis=-1).reshape(-1, d)
    cov = {}
    for j in lags:
        key = tuple(j)
        neg = tuple(-j)
        if neg in cov:
            cov[key] = cov[neg]
            continue
        pairs = [(lookup[tuple(k)], lookup[tuple(k + j)]) for k in ks if tuple(k + j) in lookup]
        a = np.array([p[0] for p in pairs])
        b = np.array([p[1] for p in pairs])
        prod = (wf.g[:, a] - gbar) * (wf.g[:, b] - gbar)
        cov[key] = float(prod.mean())
    cell = float(np.prod(step))
    cov_integral = cell * sum(cov.values())
    sigma_sq = lam * var + lam ** 2 * cov_integral
    components = {
        "var_log_fhat": var,
        "cov_integral": cov_integral,
        "var_term": lam * var,
        "cov_term": lam ** 2 * cov_integral,
        "cov_at_zero": cov[(0,) * d],
        "e_log_fhat": gbar,
        "e_abs_log_fhat_cubed": float(wf.c3.mean()),
        "floored_count": wf.floored,
        "lag_step": step.tolist(),
    }
    if not sigma_sq > 0:
        raise DegenerateError(f"estimated sigma_n^2 = {sigma_sq:.4g} is not positive; "
                              "increase R or the window sizes")
    return {"sigma_sq": float(sigma_sq), "components": components}


# bound and bandwidth -----------------------------------------------------------

def entropy_l2_bound(K0, C_theta, volume, intensity, vol_B, vol_Bp, b, p, L1, L2):
    lam = float(intensity)
    return 3.0 * (8.0 * K0 * C_theta * volume / (lam ** 2 * vol_B * vol_Bp * b ** p)
                  + 4.0 / (lam ** 2 * vol_Bp)
                  + 32.0 * b ** 2 * L2
                  + L1 / (lam * vol_B))


def optimal_bandwidth_entropy(p, K0, C_theta, volume, L2, intensity, vol_B, vol_Bp):
    if L2 <= 0:
        raise DegenerateError("L2 = 0: the entropy bound has no interior minimum",
                              fallback=(vol_B * vol_Bp) ** (-1.0 / (p + 2)))
    # exact minimiser of the b-terms 24 A b^-p + 96 L2 b^2: b^(p+2) = p A / (8 L2)
    return (p * K0 * C_theta * volume
            / (8.0 * L2 * intensity ** 2 * vol_B * vol_Bp)) ** (1.0 / (p + 2))
