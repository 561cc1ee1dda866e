"""Kernel density estimation of the mark density from a window of a sample,
with the accompanying bias/variance/L2 bound calculators and bandwidth rules.
"""
from dataclasses import dataclass

import numpy as np

from ._engine import MarkIndex
from .exceptions import DegenerateError, InputError
from .kernels import KernelProfile, make_kernel
from .manifold import Manifold, get_manifold, unit_ball_volume
from .point_process import BoxWindow, MppSample

DEFAULT_R0 = np.pi / 2


@dataclass(frozen=True)
class KdeConfig:
    kernel: KernelProfile
    bandwidth: float
    intensity: float
    window: BoxWindow
    manifold: Manifold
    r0: float = DEFAULT_R0

    def __post_init__(self):
        M = get_manifold(self.manifold)
        object.__setattr__(self, "manifold", M)
        if isinstance(self.kernel, str):
            object.__setattr__(self, "kernel", make_kernel(self.kernel, M.dim))
        if self.kernel.dim != M.dim:
            raise InputError("kernel dimension differs from the manifold dimension")
        b, r0 = float(self.bandwidth), float(self.r0)
        if not 0 < b < r0 < M.injectivity_radius:
            raise InputError(f"need 0 < b < r0 < pi, got b={b}, r0={r0}")
        if not self.intensity > 0:
            raise InputError("intensity must be positive")
        object.__setattr__(self, "bandwidth", b)
        object.__setattr__(self, "r0", r0)
        object.__setattr__(self, "intensity", float(self.intensity))
        object.__setattr__(self, "window", BoxWindow.from_dict(self.window))

    @property
    def p(self):
        return self.manifold.dim

    @property
    def scale(self):
        """c / (lambda |B'| b^p): turns a sum of unnormalized profiles into f_hat."""
        return self.kernel.normalization / (self.intensity * self.window.volume
                                            * self.bandwidth ** self.p)

    def with_bandwidth(self, b):
        return KdeConfig(self.kernel, b, self.intensity, self.window, self.manifold, self.r0)

    def to_dict(self):
        return {"kernel": self.kernel.name, "bandwidth": self.bandwidth, "intensity": self.intensity,
                "window": self.window.to_dict(), "manifold": self.manifold.tag, "r0": self.r0}


def fn_weight(cfg: KdeConfig, eta, xi):
    """K(d(eta, xi)/b) / (b^p theta_eta(xi)), zero outside the b-ball."""
    M = cfg.manifold
    r = np.asarray(M.distance(eta, xi), dtype=float)
    b = cfg.bandwidth
    out = np.zeros(r.shape)
    near = r < b
    if np.any(near):
        eta_b, xi_b = np.broadcast_arrays(M.as_points(eta), M.as_points(xi))
        th = M.volume_density(eta_b[near], xi_b[near])
        out[near] = cfg.kernel.evaluate(r[near] / b) / (b ** cfg.p * th)
    return out if out.ndim else float(out)


def _check_points(cfg, eta):
    M = cfg.manifold
    eta = M.as_points(eta)
    single = eta.ndim == 1
    return eta.reshape(-1, M.n_coords), single


def build_index(sample: MppSample, cfg: KdeConfig) -> MarkIndex:
    return MarkIndex(sample, cfg.window.sides, cfg.bandwidth)


def kde_evaluate(sample: MppSample, cfg: KdeConfig, eta, index=None):
    """f_hat(eta) from the sample points in cfg.window."""
    if sample.manifold != cfg.manifold:
        raise InputError("sample and configuration use different manifolds")
    if not sample.window.contains_window(cfg.window):
        raise InputError("estimation window is not inside the sample window")
    pts, single = _check_points(cfg, eta)
    index = index or build_index(sample, cfg)
    s = index.sums(pts, cfg.window.lower, cfg.window.sides, cfg.bandwidth, cfg.kernel)
    out = s * cfg.scale
    return float(out[0]) if single else out


def kde_translated(sample: MppSample, cfg: KdeConfig, shift, eta, index=None):
    """f_hat on the shifted window cfg.window + shift."""
    win = cfg.window.translate(shift)
    if not sample.window.contains_window(win, tol=0.0):
        raise InputError("translated window leaves the sample window; dilate the simulation window")
    pts, single = _check_points(cfg, eta)
    index = index or build_index(sample, cfg)
    s = index.sums(pts, win.lower, cfg.window.sides, cfg.bandwidth, cfg.kernel)
    out = s * cfg.scale
    return float(out[0]) if single else out


def kde_naive(sample: MppSample, cfg: KdeConfig, eta, shift=None):
    """Direct O(N) sum, used as a reference for the indexed engine."""
    win = cfg.window if shift is None else cfg.window.translate(shift)
    pts, single = _check_points(cfg, eta)
    inside = win.contains(sample.locations) if sample.n else np.zeros(0, bool)
    marks = sample.marks[inside]
    out = np.zeros(len(pts))
    for i, e in enumerate(pts):
        if len(marks):
            out[i] = fn_weight(cfg, np.broadcast_to(e, marks.shape), marks).sum()
    out /= cfg.intensity * cfg.window.volume
    return float(out[0]) if single else out


# bounds and bandwidths ---------------------------------------------------------

def c_theta(M, r0):
    """sup of 1/theta over balls of radius r0."""
    M = get_manifold(M)
    r0 = float(r0)
    if not 0 < r0 < M.injectivity_radius:
        raise InputError("r0 must lie in (0, injectivity radius)")
    if M.is_flat or M.dim == 1:
        return 1.0
    return float((r0 / np.sin(r0)) ** (M.dim - 1))


def bias_bound(b, C2, K2):
    return float(b) ** 2 * float(C2) * float(K2)


def variance_bound(C_theta, omega_p, K0, intensity, vol_kde, b, p):
    return C_theta * omega_p * K0 ** 2 / (intensity * vol_kde * b ** p)


def l2_bound(C_theta, omega_p, K0, intensity, vol_kde, b, p, C2, K2, volume):
    return (variance_bound(C_theta, omega_p, K0, intensity, vol_kde, b, p)
            + b ** 4 * C2 ** 2 * K2 ** 2 * volume)


def optimal_bandwidth_density(p, C_theta, omega_p, K0, C2, K2, volume, intensity, vol_kde):
    if C2 <= 0:
        raise DegenerateError("C2 = 0: the L2 bound has no interior minimum",
                              fallback=fallback_bandwidth_density(vol_kde, p))
    return (p * C_theta * omega_p * K0 ** 2
            / (4.0 * C2 ** 2 * K2 ** 2 * volume * intensity * vol_kde)) ** (1.0 / (p + 4))


def fallback_bandwidth_density(vol_kde, p):
    return float(vol_kde) ** (-1.0 / (p + 4))


def as_consistency_schedule(delta, n, p=2, d=1):
    """Bandwidth b_n = n^{-(1+delta)/4} / log(n+1) together with the smallest
    cube [0, s)^d of integer side s such that b_n^p s^d > n^{1+delta}."""
    if not delta > 0:
        raise InputError("delta must be positive")
    n = int(n)
    if n < 1:
        raise InputError("n must be a positive integer")
    b = n ** (-(1.0 + delta) / 4.0) / np.log(n + 1.0)
    target = n ** (1.0 + delta)
    side = max(1, int(np.floor((target / b ** p) ** (1.0 / d))))
    while b ** p * float(side) ** d <= target:
        side += 1
    while side > 1 and b ** p * float(side - 1) ** d > target:
        side -= 1
    return {"b": float(b), "side": float(side), "volume": float(side) ** d}


@dataclass(frozen=True)
class BoundReport:
    bias_bound: float
    variance_bound: float
    l2_bound: float
    entropy_l2_bound: float
    inputs: dict

    def to_dict(self):
        return {"bias_bound": self.bias_bound, "variance_bound": self.variance_bound,
                "l2_bound": self.l2_bound, "entropy_l2_bound": self.entropy_l2_bound,
                "inputs": dict(self.inputs)}


def bound_report(cfg: KdeConfig, constants, vol_entropy=None):
    """All bounds for one configuration; constants as from density_constants."""
    from .entropy import entropy_l2_bound

    M, K = cfg.manifold, cfg.kernel
    p, b = M.dim, cfg.bandwidth
    ct = c_theta(M, cfg.r0)
    om = unit_ball_volume(p)
    vb = variance_bound(ct, om, K.K0, cfg.intensity, cfg.window.volume, b, p)
    l2 = l2_bound(ct, om, K.K0, cfg.intensity, cfg.window.volume, b, p,
                  constants["C2"], K.K2, M.total_volume)
    ent = float("nan")
    if vol_entropy is not None:
        ent = entropy_l2_bound(K.K0, ct, M.total_volume, cfg.intensity, vol_entropy,
                               cfg.window.volume, b, p, constants["L1"], constants["L2"])
    inputs = {"C_theta": ct, "C2": constants["C2"], "K0": K.K0, "K2": K.K2,
              "volume": M.total_volume, "intensity": cfg.intensity,
              "vol_B": vol_entropy, "vol_Bprime": cfg.window.volume, "b": b, "p": p,
              "L1": constants.get("L1"), "L2": constants.get("L2")}
    return BoundReport(bias_bound(b, constants["C2"], K.K2), vb, l2, ent, inputs)


def optimal_density_bandwidth_for(cfg_like, constants, intensity, vol_kde, r0=DEFAULT_R0):
    """Convenience: optimal (or fallback) density bandwidth for a manifold/kernel pair."""
    M, K = cfg_like
    p = M.dim
    try:
        return optimal_bandwidth_density(p, c_theta(M, r0), unit_ball_volume(p), K.K0,
                                         constants["C2"], K.K2, M.total_volume,
                                         intensity, vol_kde)
    except DegenerateError as err:
        return err.fallback
