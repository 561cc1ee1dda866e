"""Compiled kernel-sum engine.

Sums K(d(eta_q, xi_j)/b) / theta_eta_q(xi_j) over the sample points whose
location falls into a per-query box.  Points are bucketed by location on a
grid whose cells are the query box split SUBDIV times per axis, then (on
spheres, when a bandwidth hint is given) by bands of two embedding
coordinates, and sorted by a scalar mark key inside each bucket.  Bands and
key prune all marks outside a slab around the query mark before any
distance is computed.

The grid is anchored at the origin of R^d, so the visiting order of any
given pair depends only on the pair itself; deleting points therefore never
changes the floating-point sum of the remaining terms.
"""
import math

import numpy as np
from numba import njit

from .manifold import TWO_PI

KIND_SPHERE = 0  # unit vectors (spheres, and circles via cos/sin)
KIND_TORUS = 1   # two cos/sin pairs


@njit(cache=True, nogil=True, inline="always")
def _lower_bound(a, lo, hi, x):
    """First index in [lo, hi) with a[i] >= x."""
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] < x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True, inline="always")
def _upper_bound(a, lo, hi, x):
    """First index in [lo, hi) with a[i] > x."""
    while lo < hi:
        mid = (lo + hi) >> 1
        if a[mid] <= x:
            lo = mid + 1
        else:
            hi = mid
    return lo


@njit(cache=True, nogil=True)
def _kernel_sums(loc, emb, key, orig, cell_start, cmin, ncell, cs, nband,
                 qemb, qkey, qblo, qbhi, qlo, wside, excl,
                 b, kcode, p, kind, wrap, band, out):
    d = loc.shape[1]
    k_emb = emb.shape[1]
    nq = qemb.shape[0]
    cosb = math.cos(b)
    lo_c = np.empty(d, np.int64)
    hi_c = np.empty(d, np.int64)
    idx = np.empty(d, np.int64)
    klo = np.empty(2)
    khi = np.empty(2)
    for q in range(nq):
        acc = 0.0
        empty = False
        for k in range(d):
            a = int(math.floor(qlo[q, k] / cs[k])) - cmin[k]
            c = int(math.floor((qlo[q, k] + wside[k]) / cs[k])) - cmin[k]
            if a < 0:
                a = 0
            if c > ncell[k] - 1:
                c = ncell[k] - 1
            if a > c:
                empty = True
            lo_c[k] = a
            hi_c[k] = c
            idx[k] = a
        if empty:
            out[q] = 0.0
            continue
        # mark-key intervals
        kq = qkey[q]
        nint = 1
        if wrap:
            if band >= math.pi:
                klo[0] = -1.0
                khi[0] = 7.0
            elif kq - band < 0.0:
                nint = 2
                klo[0] = kq - band + TWO_PI
                khi[0] = 7.0
                klo[1] = -1.0
                khi[1] = kq + band
            elif kq + band >= TWO_PI:
                nint = 2
                klo[0] = kq - band
                khi[0] = 7.0
                klo[1] = -1.0
                khi[1] = kq + band - TWO_PI
            else:
                klo[0] = kq - band
                khi[0] = kq + band
        else:
            klo[0] = kq - band
            khi[0] = kq + band
        while True:
            flat = 0
            interior = True
            for k in range(d):
                flat = flat * ncell[k] + idx[k]
                c_lo = (idx[k] + cmin[k]) * cs[k]
                eps = 1e-9 * (abs(c_lo) + cs[k])
                if c_lo - eps < qlo[q, k] or c_lo + cs[k] + eps >= qlo[q, k] + wside[k]:
                    interior = False
            for z0 in range(qblo[q, 0], qbhi[q, 0] + 1):
                for z1 in range(qblo[q, 1], qbhi[q, 1] + 1):
                    bucket = (flat * nband[0] + z0) * nband[1] + z1
                    s = cell_start[bucket]
                    e = cell_start[bucket + 1]
                    if e > s:
                        for t in range(nint):
                            j0 = _lower_bound(key, s, e, klo[t])
                            j1 = _upper_bound(key, s, e, khi[t])
                            for j in range(j0, j1):
                                if orig[j] == excl[q]:
                                    continue
                                inside = True
                                for k in range(d):
                                    if interior:
                                        break
                                    y = loc[j, k]
                                    if y < qlo[q, k] or y >= qlo[q, k] + wside[k]:
                                        inside = False
                                        break
                                if not inside:
                                    continue
                                if kind == KIND_SPHERE:
                                    dot = 0.0
                                    for i in range(k_emb):
                                        dot += emb[j, i] * qemb[q, i]
                                    if dot < cosb - 1e-12:
                                        continue
                                    dm = 0.0
                                    dp = 0.0
                                    for i in range(k_emb):
                                        u = emb[j, i] - qemb[q, i]
                                        v = emb[j, i] + qemb[q, i]
                                        dm += u * u
                                        dp += v * v
                                    r = 2.0 * math.atan2(math.sqrt(dm), math.sqrt(dp))
                                else:
                                    r2 = 0.0
                                    far = False
                                    for h in range(2):
                                        i0 = 2 * h
                                        dot = emb[j, i0] * qemb[q, i0] + emb[j, i0 + 1] * qemb[q, i0 + 1]
                                        if dot < cosb - 1e-12:
                                            far = True
                                            break
                                        u0 = emb[j, i0] - qemb[q, i0]
                                        u1 = emb[j, i0 + 1] - qemb[q, i0 + 1]
                                        v0 = emb[j, i0] + qemb[q, i0]
                                        v1 = emb[j, i0 + 1] + qemb[q, i0 + 1]
                                        rh = 2.0 * math.atan2(math.sqrt(u0 * u0 + u1 * u1),
                                                              math.sqrt(v0 * v0 + v1 * v1))
                                        r2 += rh * rh
                                    if far:
                                        continue
                                    r = math.sqrt(r2)
                                if r >= b:
                                    continue
                                u = r / b
                                w = 1.0 - u * u
                                if kcode == 0:
                                    kv = 1.0
                                elif kcode == 1:
                                    kv = w
                                else:
                                    kv = w * w * w
                                if kind == KIND_SPHERE and p > 1:
                                    if r < 1e-4:
                                        sc = 1.0 - r * r / 6.0 + r * r * r * r / 120.0
                                    else:
                                        # |a - b| |a + b| = 2 sin r for unit vectors
                                        sc = 0.5 * math.sqrt(dm * dp) / r
                                    if p == 2:
                                        th = sc
                                    elif p == 3:
                                        th = sc * sc
                                    else:
                                        th = sc ** (p - 1)
                                    acc += kv / th
                                else:
                                    acc += kv
            # odometer step over the touched cells
            k = d - 1
            while k >= 0:
                idx[k] += 1
                if idx[k] <= hi_c[k]:
                    break
                idx[k] = lo_c[k]
                k -= 1
            if k < 0:
                break
        out[q] = acc


SUBDIV = 2  # location cells per query-box side


class MarkIndex:
    """Location grid plus in-cell mark ordering for one sample.

    cell_sides is the largest query box; bandwidth is an optional hint that
    enables the mark bands on spheres of dimension two or more.  Any query
    bandwidth stays valid, the hint only tunes the pruning.
    """

    def __init__(self, sample, cell_sides, bandwidth=None):
        M = sample.manifold
        self.manifold = M
        self.window = sample.window
        qs = np.asarray(cell_sides, dtype=float).reshape(-1)
        if qs.shape != (sample.window.dim,) or np.any(qs <= 0):
            raise ValueError("cell sides must match the location dimension")
        self.max_query = qs
        cs = qs / SUBDIV
        self.cell_sides = cs
        lo = np.floor(sample.window.lower / cs).astype(np.int64)
        hi = np.floor(sample.window.upper / cs).astype(np.int64)
        self.cmin = lo
        self.ncell = hi - lo + 1
        self.kind = KIND_TORUS if M.kind == "torus" else KIND_SPHERE
        self.wrap = M.kind in ("circle", "torus")
        self.nband = np.ones(2, np.int64)
        if bandwidth is not None and not self.wrap and M.embed_dim >= 3:
            self.nband[:] = int(min(64, max(1, math.ceil(1.5 / self.band(bandwidth)))))
        loc = sample.locations
        emb = M.embed(sample.marks) if sample.n else np.zeros((0, M.embed_dim))
        key = self._key(sample.marks, emb)
        cells = np.floor(loc / cs).astype(np.int64) - lo if sample.n else np.zeros((0, len(cs)), np.int64)
        flat = np.zeros(len(loc), np.int64)
        for k in range(len(cs)):
            flat = flat * self.ncell[k] + cells[:, k]
        bands = self._bands(emb)
        flat = (flat * self.nband[0] + bands[:, 0]) * self.nband[1] + bands[:, 1]
        order = np.lexsort((key, flat))
        nbuckets = int(np.prod(self.ncell)) * int(np.prod(self.nband))
        counts = np.bincount(flat, minlength=nbuckets)
        self.cell_start = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
        self.loc = np.ascontiguousarray(loc[order])
        self.emb = np.ascontiguousarray(emb[order])
        self.key = np.ascontiguousarray(key[order])
        self.orig = order.astype(np.int64)

    def _banded(self):
        return self.nband[0] > 1

    def _bands(self, emb, offset=0.0):
        if not self._banded():
            return np.zeros((len(emb), 2), np.int64)
        z = (emb[:, :2] + offset + 1.0) * (self.nband / 2.0)
        return np.clip(np.floor(z), 0, self.nband - 1).astype(np.int64)

    def _key(self, marks, emb):
        if self._banded():
            return np.ascontiguousarray(emb[:, 2], dtype=float)
        return mark_key(self.manifold, marks, emb)

    def band(self, b):
        if self.wrap:
            return float(b)
        return 2.0 * math.sin(min(b, math.pi) / 2.0) + 1e-12

    def sums(self, q_marks, q_lower, window_sides, b, kernel, exclude=None):
        """Per-query sums of k(d/b)/theta with the unnormalized profile k."""
        M = self.manifold
        q_marks = M.as_points(q_marks).reshape(-1, M.n_coords)
        nq = len(q_marks)
        qemb = np.ascontiguousarray(M.embed(q_marks)) if nq else np.zeros((0, M.embed_dim))
        qkey = self._key(q_marks, qemb)
        qlo = np.ascontiguousarray(np.broadcast_to(np.asarray(q_lower, dtype=float),
                                                   (nq, len(self.cell_sides))))
        ws = np.asarray(window_sides, dtype=float).reshape(-1)
        if np.any(ws > self.max_query * (1 + 1e-12)):
            raise ValueError("query box larger than the index cells")
        excl = np.full(nq, -1, np.int64) if exclude is None else np.asarray(exclude, np.int64)
        out = np.zeros(nq)
        if nq == 0:
            return out
        band = self.band(b)
        # visit queries in grid order for cache locality; each sum is independent
        c = np.floor(qlo / self.cell_sides).astype(np.int64)
        perm = np.lexsort((qkey,) + tuple(c[:, k] for k in range(c.shape[1] - 1, -1, -1)))
        qemb, qkey, qlo, excl = qemb[perm], qkey[perm], qlo[perm], excl[perm]
        blo = self._bands(qemb, -band)
        bhi = self._bands(qemb, band)
        tmp = np.zeros(nq)
        _kernel_sums(self.loc, self.emb, self.key, self.orig, self.cell_start,
                     self.cmin, self.ncell, self.cell_sides, self.nband,
                     np.ascontiguousarray(qemb), np.ascontiguousarray(qkey), blo, bhi,
                     np.ascontiguousarray(qlo), ws, np.ascontiguousarray(excl),
                     float(b), int(kernel.code), int(M.dim), int(self.kind),
                     bool(self.wrap), band, tmp)
        out[perm] = tmp
        return out


def mark_key(M, marks, emb):
    if len(marks) == 0:
        return np.zeros(0)
    if M.kind in ("circle", "torus"):
        return np.ascontiguousarray(marks[:, 0], dtype=float)
    return np.ascontiguousarray(emb[:, 0], dtype=float)
