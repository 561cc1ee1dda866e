"""Homogeneous Poisson marked point processes on box windows."""
from dataclasses import dataclass, field

import numpy as np

from .densities import MarkDensity
from .exceptions import InputError, ResourceError
from .manifold import Manifold, get_manifold
from .rng import stream

MAX_EXPECTED_POINTS = 1e9


@dataclass(frozen=True)
class BoxWindow:
    """Half-open box [origin, origin + sides) in R^d."""
    sides: tuple
    origin: tuple = None

    def __post_init__(self):
        sides = tuple(float(s) for s in np.atleast_1d(self.sides))
        origin = (0.0,) * len(sides) if self.origin is None else tuple(
            float(o) for o in np.atleast_1d(self.origin))
        if len(origin) != len(sides) or len(sides) == 0:
            raise InputError("window origin and sides must have the same length")
        if not all(np.isfinite(sides)) or min(sides) <= 0:
            raise InputError("window side lengths must be positive")
        if not all(np.isfinite(origin)):
            raise InputError("window origin must be finite")
        object.__setattr__(self, "sides", sides)
        object.__setattr__(self, "origin", origin)

    @classmethod
    def cube(cls, side, d, origin=None):
        return cls((float(side),) * d, origin)

    @classmethod
    def cube_of_volume(cls, volume, d, origin=None):
        return cls.cube(float(volume) ** (1.0 / d), d, origin)

    @property
    def dim(self):
        return len(self.sides)

    @property
    def volume(self):
        return float(np.prod(self.sides))

    @property
    def lower(self):
        return np.array(self.origin)

    @property
    def upper(self):
        return np.array(self.origin) + np.array(self.sides)

    def contains(self, y):
        y = np.asarray(y, dtype=float)
        return np.all((y >= self.lower) & (y < self.upper), axis=-1)

    def contains_window(self, other, tol=1e-12):
        return bool(np.all(other.lower >= self.lower - tol) and np.all(other.upper <= self.upper + tol))

    def translate(self, y):
        return BoxWindow(self.sides, tuple(np.array(self.origin) + np.asarray(y, dtype=float)))

    def dilate(self, other):
        """Minkowski sum of two boxes."""
        return BoxWindow(tuple(np.array(self.sides) + np.array(other.sides)),
                         tuple(np.array(self.origin) + np.array(other.origin)))

    def to_dict(self):
        return {"origin": list(self.origin), "sides": list(self.sides)}

    @classmethod
    def from_dict(cls, spec, d=None):
        if isinstance(spec, BoxWindow):
            return spec
        if isinstance(spec, (int, float)):
            if d is None:
                raise InputError("a window given by its volume needs the dimension d")
            return cls.cube_of_volume(spec, d)
        try:
            return cls(tuple(spec["sides"]), spec.get("origin"))
        except (KeyError, TypeError):
            raise InputError(f"bad window spec {spec!r}") from None


@dataclass(frozen=True, eq=False)
class MppSample:
    locations: np.ndarray
    marks: np.ndarray
    intensity: float
    window: BoxWindow
    manifold: Manifold
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        loc = np.asarray(self.locations, dtype=float).reshape(-1, self.window.dim)
        M = get_manifold(self.manifold)
        marks = np.asarray(self.marks, dtype=float).reshape(-1, M.n_coords)
        if len(loc) != len(marks):
            raise InputError("locations and marks differ in length")
        if len(loc) and not np.all(self.window.contains(loc)):
            raise InputError("sample locations lie outside the window")
        if len(marks):
            marks = M.as_points(marks)
        if not self.intensity > 0:
            raise InputError("intensity must be positive")
        loc.setflags(write=False)
        marks.setflags(write=False)
        object.__setattr__(self, "locations", loc)
        object.__setattr__(self, "marks", marks)
        object.__setattr__(self, "manifold", M)
        object.__setattr__(self, "intensity", float(self.intensity))

    @property
    def n(self):
        return len(self.locations)

    def __len__(self):
        return self.n

    def restrict(self, sub):
        return restrict(self, sub)


def simulate_mpp(intensity, window, density: MarkDensity, seed, replication=0, role="psi"):
    """One realization of a Poisson MPP with i.i.d. marks."""
    if not intensity > 0:
        raise InputError("intensity must be positive")
    window = BoxWindow.from_dict(window)
    mean = float(intensity) * window.volume
    if mean > MAX_EXPECTED_POINTS:
        raise ResourceError(f"expected point count {mean:.3g} exceeds the guard")
    rng = stream(seed, replication, role)
    n = int(rng.poisson(mean))
    loc = window.lower + rng.random((n, window.dim)) * np.array(window.sides)
    # guard the half-open upper face against rounding
    loc = np.minimum(loc, np.nextafter(window.upper, -np.inf))
    marks = density.sample(rng, n)
    return MppSample(loc, marks, intensity, window, density.manifold, int(seed),
                     {"replication": int(replication), "role": str(role)})


def restrict(sample: MppSample, sub: BoxWindow) -> MppSample:
    sub = BoxWindow.from_dict(sub)
    if sub.dim != sample.window.dim or not sample.window.contains_window(sub):
        raise InputError("sub-window is not contained in the sample window")
    keep = sub.contains(sample.locations) if sample.n else np.zeros(0, bool)
    return MppSample(sample.locations[keep], sample.marks[keep], sample.intensity, sub,
                     sample.manifold, sample.seed, dict(sample.meta))
