"""Counter-based random streams keyed by (seed, replication, role).

Every random quantity in the package is drawn from a stream obtained here,
so two roles (e.g. a sample and its independent copy) never share bits and
any replication can be regenerated on its own.
"""
import zlib

import numpy as np

_MASK64 = (1 << 64) - 1


def role_id(role) -> int:
    if isinstance(role, (int, np.integer)):
        return int(role)
    return zlib.crc32(str(role).encode("utf-8"))


def stream(seed, replication=0, role="main") -> np.random.Generator:
    """Philox generator for one (seed, replication, role) triple."""
    seed = int(seed)
    if seed < 0:
        raise ValueError("seed must be nonnegative")
    ss = np.random.SeedSequence(entropy=seed & _MASK64,
                                spawn_key=(int(replication), role_id(role)))
    return np.random.Generator(np.random.Philox(ss))


def substream(seed, *keys) -> np.random.Generator:
    """Stream keyed by an arbitrary tuple of ints/strings."""
    ss = np.random.SeedSequence(entropy=int(seed) & _MASK64,
                                spawn_key=tuple(role_id(k) for k in keys))
    return np.random.Generator(np.random.Philox(ss))
