"""scikit-learn style front ends for the density and entropy estimators.

Both estimators accept either an MppSample or an (n, d + k) array whose first
d columns are locations and last k columns are mark coordinates; arrays also
need intensity and window parameters.
"""
import numpy as np
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from .entropy import DEFAULT_FLOOR, EntropyConfig, entropy_estimate
from .exceptions import InputError
from .kde import DEFAULT_R0, KdeConfig, build_index, fallback_bandwidth_density, kde_evaluate
from .kernels import make_kernel
from .manifold import get_manifold
from .point_process import BoxWindow, MppSample


def check_sample(X, manifold=None, intensity=None, window=None, location_dim=None):
    """Coerce X to an MppSample and check it against the given manifold."""
    if isinstance(X, MppSample):
        if manifold is not None and get_manifold(manifold) != X.manifold:
            raise InputError("sample manifold differs from the estimator manifold")
        return X
    if manifold is None or intensity is None or window is None:
        raise InputError("array input needs manifold, intensity and window")
    M = get_manifold(manifold)
    X = np.asarray(X, dtype=float)
    if X.ndim != 2:
        raise InputError("X must be a 2-d array of locations followed by marks")
    if not np.all(np.isfinite(X)):
        raise InputError("X contains non-finite values")
    if location_dim is None:
        location_dim = X.shape[1] - M.n_coords
    win = BoxWindow.from_dict(window, location_dim)
    d = win.dim
    if X.shape[1] != d + M.n_coords:
        raise InputError(f"X needs {d} location and {M.n_coords} mark columns, got {X.shape[1]}")
    return MppSample(X[:, :d], X[:, d:], intensity, win, M)


def check_marks(eta, manifold):
    M = get_manifold(manifold)
    eta = np.asarray(eta, dtype=float)
    if M.n_coords == 1 and eta.ndim == 1:
        eta = eta[:, None]
    eta = np.atleast_2d(eta)
    if eta.shape[1] != M.n_coords:
        raise InputError(f"marks on {M.tag} need {M.n_coords} coordinates")
    return M.as_points(eta)


def _kde_window(sample, kde_window):
    if kde_window is None:
        return sample.window
    return BoxWindow.from_dict(kde_window, sample.window.dim)


class ManifoldKernelDensity(BaseEstimator):
    """Kernel estimate of the mark density from the points of one window.

    bandwidth is a float or "fallback", the rule |B'|^{-1/(p+4)} that needs
    no knowledge of the true density.
    """

    def __init__(self, manifold="sphere2", kernel="epanechnikov", bandwidth="fallback",
                 intensity=None, window=None, kde_window=None, r0=DEFAULT_R0):
        self.manifold = manifold
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.intensity = intensity
        self.window = window
        self.kde_window = kde_window
        self.r0 = r0

    def fit(self, X, y=None):
        sample = check_sample(X, self.manifold, self.intensity, self.window)
        M = sample.manifold
        win = _kde_window(sample, self.kde_window)
        if not sample.window.contains_window(win):
            raise InputError("kde_window must lie inside the sample window")
        if self.bandwidth == "fallback":
            b = fallback_bandwidth_density(win.volume, M.dim)
        else:
            b = float(self.bandwidth)
        self.config_ = KdeConfig(make_kernel(self.kernel, M.dim), b, sample.intensity, win, M,
                                 self.r0)
        self.sample_ = sample.restrict(win)
        self.index_ = build_index(self.sample_, self.config_)
        self.bandwidth_ = b
        self.n_points_ = self.sample_.n
        return self

    def density(self, eta):
        check_is_fitted(self, "config_")
        eta = check_marks(eta, self.config_.manifold)
        return np.atleast_1d(kde_evaluate(self.sample_, self.config_, eta, index=self.index_))

    predict = density

    def score_samples(self, eta):
        with np.errstate(divide="ignore"):
            return np.log(self.density(eta))

    def score(self, eta, y=None):
        return float(np.mean(self.score_samples(eta)))


class MarkEntropyEstimator(BaseEstimator):
    """Plug-in entropy of the mark law.

    Summands are taken over the points in window (B_n); each uses the kernel
    estimate from kde_window (B') translated to the summand's location.  If
    window is None it is the largest box at the sample origin whose dilation
    by B' still fits in the sample window.
    """

    def __init__(self, manifold="sphere2", kernel="epanechnikov", bandwidth="fallback",
                 intensity=None, sample_window=None, window=None, kde_window=1.0,
                 floor=DEFAULT_FLOOR, leave_one_out=False, r0=DEFAULT_R0):
        self.manifold = manifold
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.intensity = intensity
        self.sample_window = sample_window
        self.window = window
        self.kde_window = kde_window
        self.floor = floor
        self.leave_one_out = leave_one_out
        self.r0 = r0

    def _windows(self, sample):
        d = sample.window.dim
        Bp = BoxWindow.from_dict(self.kde_window, d)
        if self.window is None:
            sides = np.array(sample.window.sides) - np.array(Bp.sides)
            if np.any(sides <= 0):
                raise InputError("sample window too small for the estimation window")
            B = BoxWindow(tuple(sides), tuple(sample.window.lower - Bp.lower))
        else:
            B = BoxWindow.from_dict(self.window, d)
        return B, Bp

    def fit(self, X, y=None):
        sample = check_sample(X, self.manifold, self.intensity, self.sample_window)
        M = sample.manifold
        B, Bp = self._windows(sample)
        if self.bandwidth == "fallback":
            b = fallback_bandwidth_density(Bp.volume, M.dim)
        else:
            b = float(self.bandwidth)
        kcfg = KdeConfig(make_kernel(self.kernel, M.dim), b, sample.intensity, Bp, M, self.r0)
        self.config_ = EntropyConfig(B, kcfg, float(self.floor), bool(self.leave_one_out))
        est = entropy_estimate(sample, self.config_)
        self.entropy_ = est.value
        self.n_points_ = est.n_points
        self.diagnostics_ = dict(est.diagnostics)
        self.terms_ = est.terms
        self.bandwidth_ = b
        return self

    def transform(self, X=None):
        """Per-point log density estimates of the fitted summands."""
        check_is_fitted(self, "terms_")
        return np.asarray(self.terms_)[:, None]

    def score(self, X=None, y=None):
        check_is_fitted(self, "entropy_")
        return float(self.entropy_)
