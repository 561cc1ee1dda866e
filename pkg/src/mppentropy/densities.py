"""Mark distributions on the supported manifolds and their analytic constants."""
import numpy as np
from scipy.optimize import minimize
from scipy.special import ive

from .exceptions import AccuracyError, InputError, InternalError
from .manifold import TWO_PI, get_manifold

MAX_KAPPA = 50.0
_REJECTION_CAP = 10 ** 6


class MarkDensity:
    """Base class: a density f with respect to the Riemannian volume."""

    family = "base"

    def __init__(self, manifold):
        self.manifold = get_manifold(manifold)

    def pdf(self, x):
        raise NotImplementedError

    def logpdf(self, x):
        return np.log(self.pdf(x))

    def gradient(self, x):
        """Riemannian gradient: angle partials on flat manifolds,
        ambient tangent vectors on spheres."""
        raise NotImplementedError

    def grad_norm(self, x):
        return np.linalg.norm(self.gradient(x), axis=-1)

    def sample(self, rng, n):
        raise NotImplementedError

    def to_dict(self):
        raise NotImplementedError

    def __repr__(self):
        return f"{type(self).__name__}({self.to_dict()})"


class UniformDensity(MarkDensity):
    family = "uniform"

    def pdf(self, x):
        x = self.manifold.as_points(x)
        return np.full(x.shape[:-1], 1.0 / self.manifold.total_volume)

    def gradient(self, x):
        x = self.manifold.as_points(x)
        k = self.manifold.n_coords
        return np.zeros(x.shape[:-1] + (k,))

    def sample(self, rng, n):
        return self.manifold.sample_uniform(rng, n)

    def to_dict(self):
        return {"family": "uniform", "manifold": self.manifold.tag}


def _sphere_vmf_log_norm(p, kappa):
    # log of kappa^(q/2-1) / ((2 pi)^(q/2) I_{q/2-1}(kappa)), q = p + 1
    q = p + 1
    nu = q / 2.0 - 1.0
    return (nu * np.log(kappa) - (q / 2.0) * np.log(TWO_PI)
            - (np.log(ive(nu, kappa)) + kappa))


class VonMisesFisher(MarkDensity):
    """exp(kappa * cos d(mu, x)) up to normalization.

    On the torus this is the product of two von Mises laws with a common
    concentration.
    """
    family = "vmf"

    def __init__(self, manifold, mean, kappa):
        super().__init__(manifold)
        kappa = float(kappa)
        if not 0.0 < kappa <= MAX_KAPPA:
            raise InputError(f"kappa must lie in (0, {MAX_KAPPA}]")
        self.kappa = kappa
        M = self.manifold
        if M.kind == "sphere":
            mu = np.asarray(mean, dtype=float)
            if mu.shape != (M.dim + 1,):
                raise InputError("vMF mean has the wrong dimension")
            mu = mu / np.linalg.norm(mu)
            self.log_norm = _sphere_vmf_log_norm(M.dim, kappa)
        else:
            mu = M.as_points(mean).reshape(M.n_coords)
            self.log_norm = -M.n_coords * (np.log(TWO_PI) + np.log(ive(0, kappa)) + kappa)
        self.mean = mu

    def _cos_terms(self, x):
        x = self.manifold.as_points(x)
        if self.manifold.kind == "sphere":
            return x, x @ self.mean
        return x, np.cos(x - self.mean).sum(axis=-1)

    def logpdf(self, x):
        _, c = self._cos_terms(x)
        return self.log_norm + self.kappa * c

    def pdf(self, x):
        return np.exp(self.logpdf(x))

    def gradient(self, x):
        x, c = self._cos_terms(x)
        f = np.exp(self.log_norm + self.kappa * c)
        if self.manifold.kind == "sphere":
            t = x @ self.mean
            g = self.mean - t[..., None] * x
        else:
            g = -np.sin(x - self.mean)
        return self.kappa * f[..., None] * g

    @property
    def sup(self):
        return np.exp(self.log_norm + self.kappa * self._max_cos)

    @property
    def _max_cos(self):
        return 1.0 if self.manifold.kind == "sphere" else float(self.manifold.n_coords)

    def sample(self, rng, n):
        # rejection from the uniform law; acceptance exp(kappa (c - cmax))
        M = self.manifold
        out = np.empty((n, M.n_coords))
        filled = 0
        rate = max(np.exp(self.log_norm + self.kappa * self._max_cos) * M.total_volume, 1.0)
        rounds = 0
        while filled < n:
            need = n - filled
            batch = int(min(need * rate * 1.1 + 64, 4_000_000))
            prop = M.sample_uniform(rng, batch)
            _, c = self._cos_terms(prop)
            u = rng.random(batch)
            keep = prop[u < np.exp(self.kappa * (c - self._max_cos))]
            take = min(len(keep), need)
            out[filled:filled + take] = keep[:take]
            filled += take
            rounds += 1
            if rounds * batch > _REJECTION_CAP * max(n, 1):
                raise InternalError("vMF rejection sampler exceeded its retry cap")
        return out

    def to_dict(self):
        mean = self.mean.tolist()
        if self.manifold.kind == "circle":
            mean = float(self.mean[0])
        return {"family": "vmf", "manifold": self.manifold.tag, "mean": mean, "kappa": self.kappa}


class WrappedNormalCircle(MarkDensity):
    """Normal law wrapped onto the circle; rho = exp(-sigma^2/2) in (0, 1)."""
    family = "wrapped_normal"

    def __init__(self, mean, rho, manifold="circle"):
        super().__init__(manifold)
        if self.manifold.kind != "circle":
            raise InputError("wrapped normal is defined on the circle only")
        rho = float(rho)
        if not 0.0 < rho < 1.0:
            raise InputError("rho must lie in (0, 1)")
        self.mean = float(np.mod(mean, TWO_PI))
        self.rho = rho
        self.sigma = np.sqrt(-2.0 * np.log(rho))
        self._k = np.arange(-int(np.ceil(6 * self.sigma / TWO_PI)) - 3,
                            int(np.ceil(6 * self.sigma / TWO_PI)) + 4)

    def _terms(self, x):
        x = self.manifold.as_points(x)[..., 0]
        z = (x[..., None] - self.mean + TWO_PI * self._k) / self.sigma
        return z, np.exp(-0.5 * z * z) / (self.sigma * np.sqrt(TWO_PI))

    def pdf(self, x):
        _, t = self._terms(x)
        return t.sum(axis=-1)

    def gradient(self, x):
        z, t = self._terms(x)
        return (-(z * t).sum(axis=-1) / self.sigma)[..., None]

    def sample(self, rng, n):
        return np.mod(self.mean + self.sigma * rng.standard_normal((n, 1)), TWO_PI)

    def to_dict(self):
        return {"family": "wrapped_normal", "manifold": "circle", "mean": self.mean, "rho": self.rho}


class MixtureVMF(MarkDensity):
    family = "mixture_vmf"

    def __init__(self, manifold, components, weights):
        super().__init__(manifold)
        comps = [c if isinstance(c, VonMisesFisher) else VonMisesFisher(manifold, c["mean"], c["kappa"])
                 for c in components]
        w = np.asarray(weights, dtype=float)
        if len(comps) == 0 or w.shape != (len(comps),) or np.any(w <= 0):
            raise InputError("mixture needs positive weights, one per component")
        self.components = comps
        self.weights = w / w.sum()

    def pdf(self, x):
        return sum(w * c.pdf(x) for w, c in zip(self.weights, self.components))

    def gradient(self, x):
        return sum(w * c.gradient(x) for w, c in zip(self.weights, self.components))

    def sample(self, rng, n):
        counts = rng.multinomial(n, self.weights)
        parts = [c.sample(rng, k) for c, k in zip(self.components, counts)]
        out = np.concatenate(parts, axis=0)
        return out[rng.permutation(n)]

    def to_dict(self):
        return {"family": "mixture_vmf", "manifold": self.manifold.tag,
                "weights": self.weights.tolist(),
                "components": [{"mean": c.to_dict()["mean"], "kappa": c.kappa} for c in self.components]}


def density_from_dict(spec, manifold=None) -> MarkDensity:
    spec = dict(spec)
    tag = spec.get("manifold", manifold)
    if tag is None:
        raise InputError("density config needs a manifold")
    if manifold is not None and get_manifold(tag) != get_manifold(manifold):
        raise InputError("density manifold does not match the configured manifold")
    fam = str(spec.get("family", "")).lower()
    try:
        if fam == "uniform":
            return UniformDensity(tag)
        if fam in ("vmf", "vonmisesfisher", "von_mises_fisher"):
            return VonMisesFisher(tag, spec["mean"], spec["kappa"])
        if fam in ("wrapped_normal", "wrappednormalcircle"):
            return WrappedNormalCircle(spec["mean"], spec["rho"], tag)
        if fam in ("mixture_vmf", "mixturevmf"):
            return MixtureVMF(tag, spec["components"], spec["weights"])
    except KeyError as exc:
        raise InputError(f"density spec missing field {exc.args[0]!r}") from None
    raise InputError(f"unknown density family {fam!r}")


def sample_mark(density, rng, n=1):
    return density.sample(rng, n)


# constants -------------------------------------------------------------------

DEFAULT_RESOLUTIONS = {"circle": (256, 512), "torus": (96, 192), "sphere": (64, 128)}
_S3_RESOLUTIONS = (24, 40)


def _resolutions(M):
    if M.kind == "sphere" and M.dim == 3:
        return _S3_RESOLUTIONS
    if M.kind == "sphere" and M.dim == 1:
        return DEFAULT_RESOLUTIONS["circle"]
    return DEFAULT_RESOLUTIONS[M.kind]


def integrate(density, fn, resolutions=None, rtol=1e-4, atol=1e-12):
    """int fn(x) dv by quadrature at two resolutions; raises if they disagree."""
    M = density.manifold
    vals = []
    for res in resolutions or _resolutions(M):
        pts, w = M.quadrature_grid(res)
        vals.append(float(np.dot(w, fn(pts))))
    lo, hi = vals[0], vals[-1]
    if abs(hi - lo) > rtol * abs(hi) + atol:
        raise AccuracyError(f"quadrature refinement disagreement {abs(hi - lo):.3e}")
    return hi


def hessian_norm(density, x, h=1e-3):
    """Spectral norm of the Hessian of f o exp_x at 0, by central differences."""
    M = density.manifold
    x = M.as_points(x)
    p = M.dim
    n = x.shape[0]
    f0 = density.pdf(x)
    Hs = np.empty((n, p, p))
    eye = np.eye(p) * h
    base = x

    def f_at(v):
        return density.pdf(M.exp(base, np.broadcast_to(v, (n, p))))

    for i in range(p):
        Hs[:, i, i] = (f_at(eye[i]) - 2.0 * f0 + f_at(-eye[i])) / (h * h)
        for j in range(i + 1, p):
            val = (f_at(eye[i] + eye[j]) - f_at(eye[i] - eye[j])
                   - f_at(-eye[i] + eye[j]) + f_at(-eye[i] - eye[j])) / (4 * h * h)
            Hs[:, i, j] = Hs[:, j, i] = val
    return np.abs(np.linalg.eigvalsh(Hs)).max(axis=-1)


def _refine_extremum(density, x0, sign):
    M = density.manifold

    def obj(v):
        return sign * float(density.pdf(M.exp(x0, v)))

    res = minimize(obj, np.zeros(M.dim), method="Nelder-Mead",
                   options={"xatol": 1e-10, "fatol": 1e-14, "maxiter": 2000})
    return sign * min(res.fun, obj(np.zeros(M.dim)))


def density_constants(density, resolutions=None):
    """C2, L1, L2, c0, sup_f for a mark density."""
    M = density.manifold

    def f_log2(x):
        f = density.pdf(x)
        return f * np.log(f) ** 2

    def grad_ratio(x):
        return density.grad_norm(x) ** 2 / density.pdf(x)

    L1 = integrate(density, f_log2, resolutions)
    L2 = integrate(density, grad_ratio, resolutions, atol=1e-10)
    mass = integrate(density, density.pdf, resolutions)
    if abs(mass - 1.0) > 1e-6:
        raise AccuracyError(f"density integrates to {mass:.8f}")
    res = (resolutions or _resolutions(M))[0]
    pts, _ = M.quadrature_grid(res)
    f = density.pdf(pts)
    if np.ptp(f) == 0.0:
        c0 = sup = float(f[0])
        C2 = 0.0
    else:
        c0 = float(min(f.min(), _refine_extremum(density, pts[np.argmin(f)], 1.0)))
        sup = float(max(f.max(), _refine_extremum(density, pts[np.argmax(f)], -1.0)))
        C2 = 1.1 * float(hessian_norm(density, pts).max())
    if c0 <= 0:
        raise InputError("density is not bounded away from zero")
    return {"C2": C2, "L1": L1, "L2": L2, "c0": c0, "sup_f": sup}


def true_entropy(density, resolutions=None):
    """-int f log f dv, two quadrature resolutions agreeing within 1e-5."""
    def flogf(x):
        return density.pdf(x) * density.logpdf(x)

    return -integrate(density, flogf, resolutions, rtol=0.0, atol=1e-5)


def vmf_sphere2_entropy(kappa):
    """Closed-form entropy of the von Mises-Fisher law on S^2."""
    k = float(kappa)
    return 1.0 - k / np.tanh(k) - np.log(k / (4.0 * np.pi * np.sinh(k)))

