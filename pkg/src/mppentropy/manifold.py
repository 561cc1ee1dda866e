"""Compact manifolds used as mark spaces: circle, flat torus, unit spheres.

Points are stored as arrays whose last axis holds the coordinates: one angle
for the circle, two angles for the torus, a unit vector in R^{p+1} for S^p.
Tangent vectors are given by their p components in an orthonormal frame at
the base point (normal coordinates).
"""
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
from scipy.special import gamma

from .exceptions import DomainError, InputError

TWO_PI = 2.0 * np.pi
UNIT_TOL = 1e-12
_NORM_TOL = 1e-9


def unit_ball_volume(p):
    """Lebesgue volume of the unit ball in R^p."""
    return np.pi ** (p / 2.0) / gamma(p / 2.0 + 1.0)


def sphere_area(p):
    """Surface area of the unit sphere S^p in R^{p+1}."""
    return 2.0 * np.pi ** ((p + 1) / 2.0) / gamma((p + 1) / 2.0)


def _wrap(delta):
    # representative of delta in [-pi, pi)
    return np.mod(delta + np.pi, TWO_PI) - np.pi


def _sinc(r):
    r = np.asarray(r, dtype=float)
    small = np.abs(r) < 1e-4
    safe = np.where(small, 1.0, r)
    r2 = r * r
    return np.where(small, 1.0 - r2 / 6.0 + r2 * r2 / 120.0, np.sin(safe) / safe)


def householder_frame(x):
    """Orthogonal matrices H with H[..., :, -1] = +-x.

    The first p columns of H span the tangent space at x.  The reflection
    vector is chosen away from cancellation, so the frame is stable
    everywhere (it flips across the equator x_p = 0, which is harmless).
    """
    x = np.asarray(x, dtype=float)
    n = x.shape[-1]
    s = np.where(x[..., -1] >= 0, 1.0, -1.0)
    v = x.copy()
    v[..., -1] += s
    vv = np.einsum("...i,...i->...", v, v)
    H = np.eye(n) - 2.0 * v[..., :, None] * v[..., None, :] / vv[..., None, None]
    return H


@dataclass(frozen=True)
class Manifold:
    """A compact boundaryless Riemannian manifold.

    kind is one of "circle", "torus", "sphere"; dim is the intrinsic
    dimension p.
    """
    kind: str
    dim: int

    def __post_init__(self):
        ok = ((self.kind == "circle" and self.dim == 1)
              or (self.kind == "torus" and self.dim == 2)
              or (self.kind == "sphere" and self.dim in (1, 2, 3)))
        if not ok:
            raise InputError(f"unsupported manifold {self.kind}/{self.dim}")

    # descriptors -------------------------------------------------------
    @property
    def tag(self):
        if self.kind == "circle":
            return "circle"
        if self.kind == "torus":
            return "torus2"
        return f"sphere{self.dim}"

    @property
    def injectivity_radius(self):
        return np.pi

    @property
    def total_volume(self):
        if self.kind == "circle":
            return TWO_PI
        if self.kind == "torus":
            return TWO_PI ** 2
        return sphere_area(self.dim)

    @property
    def diameter(self):
        return np.pi * np.sqrt(2.0) if self.kind == "torus" else np.pi

    @property
    def n_coords(self):
        """Length of the stored coordinate vector."""
        if self.kind == "circle":
            return 1
        if self.kind == "torus":
            return 2
        return self.dim + 1

    @property
    def embed_dim(self):
        """Length of the unit-circle/unit-sphere embedding used for distances."""
        return 2 * self.n_coords if self.kind in ("circle", "torus") else self.dim + 1

    @property
    def is_flat(self):
        return self.kind != "sphere"

    # point handling ----------------------------------------------------
    def as_points(self, x):
        """Validate and canonicalize points; returns float array (..., n_coords)."""
        x = np.asarray(x, dtype=float)
        if self.kind == "circle":
            if x.ndim == 0:
                x = x[None]
            elif x.shape[-1] != 1:
                x = x[..., None]
        if x.ndim == 0 or x.shape[-1] != self.n_coords:
            raise InputError(f"{self.tag} points need {self.n_coords} coordinates, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise InputError("non-finite coordinates")
        if self.kind == "sphere":
            nrm = np.linalg.norm(x, axis=-1)
            if np.any(np.abs(nrm - 1.0) > _NORM_TOL):
                raise InputError("sphere points must have unit norm")
            # renormalize only when needed, so the map is idempotent bitwise
            fix = np.abs(nrm - 1.0) > 1e-15
            if np.any(fix):
                x = np.where(fix[..., None], x / nrm[..., None], x)
            return x
        return np.mod(x, TWO_PI)

    def embed(self, x):
        """Map points to unit vectors (angles become cos/sin pairs)."""
        x = self.as_points(x)
        if self.kind == "sphere":
            return x
        out = np.empty(x.shape[:-1] + (2 * x.shape[-1],))
        out[..., 0::2] = np.cos(x)
        out[..., 1::2] = np.sin(x)
        return out

    # geometry ----------------------------------------------------------
    def distance(self, a, b):
        a = self.as_points(a)
        b = self.as_points(b)
        if self.kind == "sphere":
            # 2*atan2(|a-b|, |a+b|) is accurate at every separation
            return 2.0 * np.arctan2(np.linalg.norm(a - b, axis=-1),
                                    np.linalg.norm(a + b, axis=-1))
        d = np.abs(_wrap(a - b))
        return np.sqrt(np.sum(d * d, axis=-1))

    def tangent_basis(self, base):
        """Ambient orthonormal tangent frame at base, shape (..., p, p+1).

        Only meaningful for spheres; flat manifolds use the angle axes.
        """
        if self.kind != "sphere":
            raise InputError("tangent_basis is defined for spheres only")
        base = self.as_points(base)
        H = householder_frame(base)
        return np.swapaxes(H[..., :, :-1], -1, -2)

    def exp(self, base, v):
        base = self.as_points(base)
        v = np.asarray(v, dtype=float)
        if self.dim == 1 and v.ndim == 0:
            v = v[None]
        if v.shape[-1] != self.dim:
            raise InputError(f"tangent components must have length {self.dim}")
        r = np.linalg.norm(v, axis=-1)
        if np.any(r >= self.injectivity_radius):
            raise DomainError("tangent vector norm reaches the injectivity radius")
        if self.kind != "sphere":
            return np.mod(base + v, TWO_PI)
        E = self.tangent_basis(base)
        amb = np.einsum("...i,...ij->...j", v, E)
        out = np.cos(r)[..., None] * base + _sinc(r)[..., None] * amb
        return out / np.linalg.norm(out, axis=-1, keepdims=True)

    def log(self, base, target):
        base = self.as_points(base)
        target = self.as_points(target)
        r = self.distance(base, target)
        if np.any(r >= self.injectivity_radius - 1e-6):
            raise DomainError("target at or beyond the injectivity radius")
        if self.kind != "sphere":
            return _wrap(target - base)
        c = np.einsum("...i,...i->...", base, target)
        w = target - c[..., None] * base
        amb = w / _sinc(r)[..., None]
        E = self.tangent_basis(base)
        return np.einsum("...ij,...j->...i", E, amb)

    def volume_density(self, eta, nu):
        """theta_eta(nu): 1 on flat manifolds, (sin r / r)^(p-1) on S^p."""
        r = self.distance(eta, nu)
        if np.any(r >= self.injectivity_radius):
            raise DomainError("volume density undefined at the cut locus")
        if self.is_flat or self.dim == 1:
            return np.ones_like(r)
        return _sinc(r) ** (self.dim - 1)

    def sample_uniform(self, rng, n):
        if self.kind == "sphere":
            z = rng.standard_normal((n, self.dim + 1))
            return z / np.linalg.norm(z, axis=1, keepdims=True)
        return rng.uniform(0.0, TWO_PI, size=(n, self.n_coords))

    def random_isometries(self, rng, count, points):
        """Apply `count` independent Haar-random isometries to one point set;
        returns an array (count, len(points), n_coords)."""
        points = np.asarray(points, dtype=float)
        if self.kind == "sphere":
            n = self.dim + 1
            q, rr = np.linalg.qr(rng.standard_normal((count, n, n)))
            q = q * np.sign(np.diagonal(rr, axis1=1, axis2=2))[:, None, :]
            return np.einsum("kij,mj->kmi", q, points)
        shift = rng.uniform(0.0, TWO_PI, size=(count, 1, self.n_coords))
        return np.mod(points[None] + shift, TWO_PI)

    # quadrature --------------------------------------------------------
    def quadrature_grid(self, resolution):
        """Global product rule: (points, weights) with sum(weights) = volume."""
        n = int(resolution)
        if n < 8 or n > 4096:
            raise InputError("quadrature resolution must lie in [8, 4096]")
        pts, w = _global_grid(self.kind, self.dim, n)
        return pts.copy(), w.copy()

    def cap_quadrature(self, center, radius, resolution=48):
        """Product rule on the closed geodesic ball B(center, radius).

        Integrands of the form g(d(center, .)) that are smooth in the radial
        variable converge spectrally, unlike on a global grid.
        """
        center = self.as_points(center)
        if center.ndim != 1:
            raise InputError("cap_quadrature takes a single center")
        radius = float(radius)
        if not 0.0 < radius <= self.injectivity_radius:
            raise InputError("cap radius must lie in (0, pi]")
        n = int(resolution)
        x, wx = np.polynomial.legendre.leggauss(n)
        if self.kind == "circle" or (self.kind == "sphere" and self.dim == 1):
            s = radius * x
            w = radius * wx
            if self.kind == "circle":
                return np.mod(center + s[:, None], TWO_PI), w
            return self.exp(np.broadcast_to(center, (n, 2)), s[:, None]), w
        if self.kind == "torus":
            r = 0.5 * radius * (x + 1.0)
            wr = 0.5 * radius * wx * r
            phi = TWO_PI * np.arange(2 * n) / (2 * n)
            R, P = np.meshgrid(r, phi, indexing="ij")
            pts = center + np.stack([R * np.cos(P), R * np.sin(P)], axis=-1).reshape(-1, 2)
            w = np.repeat(wr, 2 * n) * (TWO_PI / (2 * n))
            return np.mod(pts, TWO_PI), w
        H = householder_frame(center)
        sgn = H[:, -1] @ center
        if self.dim == 2:
            t = 0.5 * (1.0 - np.cos(radius)) * x + 0.5 * (1.0 + np.cos(radius))
            wt = 0.5 * (1.0 - np.cos(radius)) * wx
            phi = TWO_PI * np.arange(2 * n) / (2 * n)
            T, P = np.meshgrid(t, phi, indexing="ij")
            S = np.sqrt(np.clip(1.0 - T * T, 0.0, None))
            local = np.stack([S * np.cos(P), S * np.sin(P), sgn * T], axis=-1).reshape(-1, 3)
            w = np.repeat(wt, 2 * n) * (TWO_PI / (2 * n))
        else:
            psi = 0.5 * radius * (x + 1.0)
            wpsi = 0.5 * radius * wx * np.sin(psi) ** 2
            dirs, wd = _global_grid("sphere", 2, max(8, n // 2))
            local = np.concatenate([
                np.sin(psi)[:, None, None] * dirs[None, :, :],
                sgn * np.cos(psi)[:, None, None] * np.ones((1, len(wd), 1)),
            ], axis=-1).reshape(-1, 4)
            w = (wpsi[:, None] * wd[None, :]).ravel()
        pts = local @ H.T
        return pts / np.linalg.norm(pts, axis=1, keepdims=True), w


@lru_cache(maxsize=32)
def _global_grid(kind, dim, n):
    if kind == "circle":
        return (TWO_PI * np.arange(n) / n)[:, None], np.full(n, TWO_PI / n)
    if kind == "torus":
        a = TWO_PI * np.arange(n) / n
        A, B = np.meshgrid(a, a, indexing="ij")
        return np.stack([A.ravel(), B.ravel()], axis=1), np.full(n * n, (TWO_PI / n) ** 2)
    if dim == 1:
        a = TWO_PI * np.arange(n) / n
        return np.stack([np.cos(a), np.sin(a)], axis=1), np.full(n, TWO_PI / n)
    x, wx = np.polynomial.legendre.leggauss(n)
    if dim == 2:
        phi = TWO_PI * np.arange(2 * n) / (2 * n)
        T, P = np.meshgrid(x, phi, indexing="ij")
        S = np.sqrt(1.0 - T * T)
        pts = np.stack([S * np.cos(P), S * np.sin(P), T], axis=-1).reshape(-1, 3)
        return pts, np.repeat(wx, 2 * n) * (TWO_PI / (2 * n))
    # S^3 in Hopf coordinates, u = sin^2(eta): dV = du dxi1 dxi2 / 2
    u = 0.5 * (x + 1.0)
    wu = 0.5 * wx
    m = 2 * n
    xi = TWO_PI * np.arange(m) / m
    U, X1, X2 = np.meshgrid(u, xi, xi, indexing="ij")
    su, cu = np.sqrt(U), np.sqrt(1.0 - U)
    pts = np.stack([su * np.cos(X1), su * np.sin(X1), cu * np.cos(X2), cu * np.sin(X2)],
                   axis=-1).reshape(-1, 4)
    w = np.repeat(wu, m * m) * 0.5 * (TWO_PI / m) ** 2
    return pts, w


_TAGS = {
    "circle": ("circle", 1),
    "torus2": ("torus", 2),
    "sphere1": ("sphere", 1),
    "sphere2": ("sphere", 2),
    "sphere3": ("sphere", 3),
}


def get_manifold(tag) -> Manifold:
    if isinstance(tag, Manifold):
        return tag
    try:
        kind, dim = _TAGS[str(tag).lower()]
    except KeyError:
        raise InputError(f"unknown manifold tag {tag!r}; expected one of {sorted(_TAGS)}") from None
    return Manifold(kind, dim)


# functional interface ------------------------------------------------------

def geodesic_distance(M, a, b):
    return get_manifold(M).distance(a, b)


def exp_map(M, base, v):
    return get_manifold(M).exp(base, v)


def log_map(M, base, target):
    return get_manifold(M).log(base, target)


def volume_density(M, eta, nu):
    return get_manifold(M).volume_density(eta, nu)


def sample_uniform(M, rng, n=1):
    return get_manifold(M).sample_uniform(rng, n)


def quadrature_grid(M, resolution):
    return get_manifold(M).quadrature_grid(resolution)


def cap_quadrature(M, center, radius, resolution=48):
    return get_manifold(M).cap_quadrature(center, radius, resolution)
