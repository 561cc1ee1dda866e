"""Normal approximation for sums of m-dependent fields over Poisson points:
Berry-Esseen type bounds, block sums, limiting variances, standardized
statistics, and a synthetic m-dependent field with known covariance.
"""
from dataclasses import dataclass, field

import numpy as np

from .exceptions import DegenerateError, InputError
from .point_process import BoxWindow


def chen_shao_bound(m, q, d, var_sum, sum_abs_q_moments):
    if not var_sum > 0:
        raise InputError("variance of the sum must be positive")
    if not 2 < q <= 3:
        raise InputError("q must lie in (2, 3]")
    return 75.0 * (10.0 * m + 1.0) ** ((q - 1.0) * d) * var_sum ** (-q / 2.0) * sum_abs_q_moments


def random_sum_bound(m_n, q, d, vol_B, sigma_n, block_q_moment):
    if not sigma_n > 0:
        raise InputError("sigma_n must be positive")
    if not 2 < q <= 3:
        raise InputError("q must lie in (2, 3]")
    return 75.0 * (10.0 * m_n + 11.0) ** ((q - 1.0) * d) * vol_B * sigma_n ** (-q) * block_q_moment


def block_sums(locations, values, side):
    """Sums of values over the unit cubes j + [0,1)^d covering [0, side)^d.

    Returns an array of shape (side,)*d indexed by the lattice point j.
    """
    y = np.asarray(locations, dtype=float)
    x = np.asarray(values, dtype=float)
    side = int(side)
    if y.ndim != 2:
        raise InputError("locations must be an (n, d) array")
    d = y.shape[1]
    if len(x) != len(y):
        raise InputError("one value per location is required")
    if len(y) and (np.any(y < 0) or np.any(y >= side)):
        raise InputError("locations outside the lattice cover [0, side)^d")
    j = np.floor(y).astype(np.int64)
    flat = np.ravel_multi_index(j.T, (side,) * d) if len(y) else np.zeros(0, np.int64)
    out = np.bincount(flat, weights=x, minlength=side ** d)
    return out.reshape((side,) * d)


def limit_variance(intensity, e_x0_sq, cov_integral):
    if e_x0_sq < 0:
        raise InputError("second moment must be nonnegative")
    lam = float(intensity)
    val = lam * float(e_x0_sq) + lam ** 2 * float(cov_integral)
    if not val > 0:
        raise DegenerateError(f"limiting variance {val:.4g} is not positive")
    return val


def standardized_statistic(e_star, mu_hat, sigma_n, vol_B, intensity=1.0):
    """lambda * sqrt(|B_n|) (E* - mu) / sigma_n.

    With intensity = 1 this is sqrt(|B_n|)(E* - mu)/sigma_n.  The summands
    of E* are divided by lambda |B_n|, so the factor lambda is what makes the
    result unit-variance when sigma_n^2 is the per-unit-volume variance of
    the undivided sum.
    """
    if not sigma_n > 0:
        raise InputError("sigma_n must be positive")
    return float(intensity) * np.sqrt(vol_B) * (np.asarray(e_star) - mu_hat) / sigma_n


def clt_rate_bound(a, intensity, vol_Bp, vol_B, d):
    if not a > 0:
        raise InputError("a must be positive")
    lam = float(intensity)
    return (600.0 * a * lam * (1.0 + lam ** 2 + lam ** 3)
            * (10.0 * vol_Bp ** (1.0 / d) + 11.0) ** (2 * d) / np.sqrt(vol_B))


@dataclass
class CltReport:
    standardized_samples: np.ndarray
    ks_distance: float
    berry_esseen_bound: float
    sigma_n: float
    m_n: float
    vol_B: float
    vol_Bp: float
    extra: dict = field(default_factory=dict)

    def summary(self):
        z = np.asarray(self.standardized_samples)
        return {"ks_distance": self.ks_distance, "berry_esseen_bound": self.berry_esseen_bound,
                "sigma_n": self.sigma_n, "m_n": self.m_n, "vol_B": self.vol_B,
                "vol_Bp": self.vol_Bp, "n_samples": int(len(z)),
                "mean": float(z.mean()), "variance": float(z.var(ddof=1)), **self.extra}


# synthetic m-dependent field ---------------------------------------------------

INNOVATIONS = ("normal", "uniform", "exponential")


@dataclass(frozen=True)
class MovingAverageField:
    """X_y = w^{-d/2} sum of the i.i.d. standardized innovations of the unit
    cells of a randomly shifted lattice lying in y + [0, w)^d.

    Values at points farther apart than w in sup-norm share no innovation,
    so the field is w-dependent; E X = 0, E X^2 = 1 and the covariance at
    lag h is prod_k (1 - |h_k| / w)_+, whose integral is w^d.
    """
    width: int
    d: int
    innovation: str = "normal"

    def __post_init__(self):
        if int(self.width) != self.width or self.width < 1:
            raise InputError("moving-average width must be a positive integer")
        if self.innovation not in INNOVATIONS:
            raise InputError(f"innovation law must be one of {INNOVATIONS}")

    @property
    def m(self):
        return float(self.width)

    @property
    def cov_integral(self):
        return float(self.width) ** self.d

    def e_x0_sq(self):
        return 1.0

    def _innovations(self, rng, shape):
        if self.innovation == "normal":
            return rng.standard_normal(shape)
        if self.innovation == "uniform":
            return rng.uniform(-np.sqrt(3.0), np.sqrt(3.0), shape)
        return rng.standard_exponential(shape) - 1.0

    def sample(self, rng, locations, side):
        """Field values at locations in [0, side)^d."""
        y = np.asarray(locations, dtype=float)
        w, d = int(self.width), self.d
        shift = rng.random(d)
        n_cells = int(np.ceil(side)) + w + 1
        eps = self._innovations(rng, (n_cells,) * d)
        # integral image for box sums over w^d blocks of cells
        S = eps
        for ax in range(d):
            S = np.cumsum(S, axis=ax)
        S = np.pad(S, [(1, 0)] * d)
        # cells c with c + shift in y + [0, w)^d, i.e. c = k0..k0+w-1 where
        # k0 = ceil(y - shift); offset by one so indices stay nonnegative
        k0 = np.ceil(y - shift).astype(np.int64) + 1
        total = np.zeros(len(y))
        for corner in range(2 ** d):
            idx = []
            sign = 1.0
            for ax in range(d):
                hi = (corner >> ax) & 1
                idx.append(k0[:, ax] + (w if hi else 0))
                if not hi:
                    sign = -sign
            total += sign * S[tuple(idx)]
        return total / w ** (d / 2.0)


def synthetic_random_sums(fld: MovingAverageField, intensity, side, R, seed, role="synthetic"):
    """R independent Poisson random sums sum_{y in Pi cap [0,side)^d} X_y."""
    from .rng import stream

    out = np.empty(R)
    vol = float(side) ** fld.d
    for r in range(R):
        rng = stream(seed, r, role)
        n = rng.poisson(intensity * vol)
        y = rng.random((n, fld.d)) * side
        out[r] = fld.sample(rng, y, side).sum()
    return out


def third_moment_block(fld: MovingAverageField, intensity, R, seed):
    """Monte Carlo E|sum over the unit cube of X_y|^3 for the synthetic field."""
    from .rng import stream

    vals = np.empty(R)
    for r in range(R):
        rng = stream(seed, r, "block-moment")
        n = rng.poisson(intensity)
        y = rng.random((n, fld.d))
        vals[r] = abs(fld.sample(rng, y, 1.0).sum()) ** 3
    return float(vals.mean())


def unit_window(side, d):
    return BoxWindow.cube(side, d)
