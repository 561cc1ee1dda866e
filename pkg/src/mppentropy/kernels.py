"""Radial compact-support kernel profiles on R^p.

A profile k on [0, 1] is normalized to K = c*k with p*omega_p*int_0^1 K(r) r^(p-1) dr = 1.
All offered profiles are powers of (1 - r^2), so the radial integrals are
Beta functions: int_0^1 (1-r^2)^a r^(s-1) dr = B(s/2, a+1) / 2.
"""
from dataclasses import dataclass

import numpy as np
from scipy.special import beta

from .exceptions import InputError
from .manifold import unit_ball_volume

# name -> exponent a in (1 - r^2)^a; integer codes are used by the compiled engine
PROFILES = {"uniform": 0, "epanechnikov": 1, "triweight": 3}
KERNEL_CODES = {"uniform": 0, "epanechnikov": 1, "triweight": 2}


def _radial_integral(a, s):
    return 0.5 * beta(s / 2.0, a + 1.0)


@dataclass(frozen=True)
class KernelProfile:
    name: str
    dim: int
    normalization: float
    K0: float
    K2: float

    @property
    def code(self):
        return KERNEL_CODES[self.name]

    @property
    def exponent(self):
        return PROFILES[self.name]

    def profile(self, r):
        """Unnormalized k(r), zero outside [0, 1]."""
        r = np.asarray(r, dtype=float)
        inside = r <= 1.0
        if self.exponent == 0:
            return inside.astype(float)
        return np.where(inside, np.clip(1.0 - r * r, 0.0, None) ** self.exponent, 0.0)

    def evaluate(self, r):
        r = np.asarray(r, dtype=float)
        if np.any(r < 0) or np.any(np.isnan(r)):
            raise InputError("kernel argument must be nonnegative")
        return self.normalization * self.profile(r)

    __call__ = evaluate

    def moment(self, order):
        """p*omega_p*int_0^1 K(r) r^(p-1+order) dr for order in {0, 2}."""
        if order not in (0, 2):
            raise InputError("only moments of order 0 and 2 are defined")
        p = self.dim
        return (self.normalization * p * unit_ball_volume(p)
                * _radial_integral(self.exponent, p + order))


def make_kernel(name, p) -> KernelProfile:
    name = str(name).lower()
    if name not in PROFILES:
        raise InputError(f"unknown kernel {name!r}; expected one of {sorted(PROFILES)}")
    if int(p) != p or p not in (1, 2, 3):
        raise InputError("kernel dimension must be 1, 2 or 3")
    p = int(p)
    a = PROFILES[name]
    mass = p * unit_ball_volume(p) * _radial_integral(a, p)
    c = 1.0 / mass
    K2 = c * p * unit_ball_volume(p) * _radial_integral(a, p + 2)
    return KernelProfile(name=name, dim=p, normalization=float(c), K0=float(c), K2=float(K2))


def evaluate(K: KernelProfile, r):
    return K.evaluate(r)


def moment(K: KernelProfile, order):
    return K.moment(order)
