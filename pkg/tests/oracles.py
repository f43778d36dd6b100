"""Slow, obviously-correct reference implementations used as test oracles.

None of these import the package's kernels.
"""

from __future__ import annotations

import itertools
import math
import struct
from collections import deque

import numpy as np


def brute_force_distance(mask: np.ndarray) -> np.ndarray:
    """Distance from every voxel to the nearest set voxel, by exhaustive search."""
    pts = np.argwhere(mask).astype(np.float64)
    grid = np.indices(mask.shape).reshape(3, -1).T.astype(np.float64)
    d2 = ((grid[:, None, :] - pts[None, :, :]) ** 2).sum(axis=2).min(axis=1)
    return np.sqrt(d2).reshape(mask.shape)


def brute_force_min_distance(a: np.ndarray, b: np.ndarray) -> float:
    pa = np.argwhere(a).astype(np.float64)
    pb = np.argwhere(b).astype(np.float64)
    return math.sqrt(min(float(((p - pb) ** 2).sum(axis=1).min()) for p in pa))


def neighbour_offsets(connectivity: int):
    out = []
    for d in itertools.product((-1, 0, 1), repeat=3):
        nz = sum(1 for c in d if c)
        if nz == 0:
            continue
        if (connectivity == 6 and nz == 1) or (connectivity == 18 and nz <= 2) or connectivity == 26:
            out.append(d)
    return out


def flood_fill_components(mask: np.ndarray, connectivity: int) -> list:
    """Components as sets of voxel tuples, by breadth-first search."""
    seen = np.zeros(mask.shape, dtype=bool)
    offs = neighbour_offsets(connectivity)
    comps = []
    for start in map(tuple, np.argwhere(mask)):
        if seen[start]:
            continue
        seen[start] = True
        comp, queue = set(), deque([start])
        while queue:
            p = queue.popleft()
            comp.add(p)
            for d in offs:
                q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
                if all(0 <= q[i] < mask.shape[i] for i in range(3)) and mask[q] and not seen[q]:
                    seen[q] = True
                    queue.append(q)
        comps.append(comp)
    return comps


def naive_ssim_map(x: np.ndarray, y: np.ndarray, L: float, k1=0.01, k2=0.03, sigma=1.5, radius=5):
    """Per-voxel SSIM straight from the definition, two-pass moments."""
    c1, c2 = (k1 * L) ** 2, (k2 * L) ** 2
    out = np.empty(x.shape)
    nx, ny, nz = x.shape
    for i, j, k in itertools.product(range(nx), range(ny), range(nz)):
        sl = (slice(max(i - radius, 0), min(i + radius + 1, nx)),
              slice(max(j - radius, 0), min(j + radius + 1, ny)),
              slice(max(k - radius, 0), min(k + radius + 1, nz)))
        gi, gj, gk = np.meshgrid(np.arange(sl[0].start, sl[0].stop) - i,
                                 np.arange(sl[1].start, sl[1].stop) - j,
                                 np.arange(sl[2].start, sl[2].stop) - k, indexing="ij")
        w = np.exp(-(gi ** 2 + gj ** 2 + gk ** 2) / (2 * sigma ** 2))
        w /= w.sum()
        a, b = x[sl], y[sl]
        mx, my = (w * a).sum(), (w * b).sum()
        vx = (w * (a - mx) ** 2).sum()
        vy = (w * (b - my) ** 2).sum()
        cxy = (w * (a - mx) * (b - my)).sum()
        out[i, j, k] = ((2 * mx * my + c1) * (2 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
    return out


def naive_mse(x, y, mask) -> float:
    total, n = 0.0, 0
    for idx in zip(*np.nonzero(mask)):
        total += (float(x[idx]) - float(y[idx])) ** 2
        n += 1
    return total / n


def midranks(values, higher_better=False):
    """Average ranks (1 = best) by sorting and grouping equal values."""
    keyed = sorted(range(len(values)), key=lambda i: -values[i] if higher_better else values[i])
    ranks = [0.0] * len(values)
    pos = 0
    while pos < len(keyed):
        end = pos
        while end + 1 < len(keyed) and values[keyed[end + 1]] == values[keyed[pos]]:
            end += 1
        avg = (pos + 1 + end + 1) / 2.0
        for q in range(pos, end + 1):
            ranks[keyed[q]] = avg
        pos = end + 1
    return ranks


def naive_leaderboard(teams, cases, scores, missing):
    """Recompute the rank-sum ordering from scratch.

    ``scores[(team, case)] = (ssim, psnr, mse)``; missing pairs tie for the
    bottom places.
    """
    teams = sorted(teams)
    metric_ranks = []
    for m, higher in ((0, True), (1, True), (2, False)):
        totals = {t: 0.0 for t in teams}
        for c in cases:
            present = [t for t in teams if (t, c) not in missing]
            absent = [t for t in teams if (t, c) in missing]
            r = midranks([scores[(t, c)][m] for t in present], higher)
            for t, rv in zip(present, r):
                totals[t] += rv
            for t in absent:
                totals[t] += len(present) + (len(absent) + 1) / 2.0
        mr = midranks([totals[t] for t in teams])
        metric_ranks.append(dict(zip(teams, mr)))
    final = {t: metric_ranks[0][t] + metric_ranks[1][t] + metric_ranks[2][t] for t in teams}
    order = sorted(teams, key=lambda t: (final[t], metric_ranks[0][t], t))
    return metric_ranks, final, order


def dense_laplace_solve(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Assemble the 6-neighbour system voxel by voxel and solve it densely."""
    pts = [tuple(p) for p in np.argwhere(mask)]
    index = {p: n for n, p in enumerate(pts)}
    A = np.zeros((len(pts), len(pts)))
    b = np.zeros(len(pts))
    for n, p in enumerate(pts):
        for d in ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1)):
            q = (p[0] + d[0], p[1] + d[1], p[2] + d[2])
            if not all(0 <= q[i] < mask.shape[i] for i in range(3)):
                continue
            A[n, n] += 1
            if q in index:
                A[n, index[q]] -= 1
            else:
                b[n] += values[q]
    x = np.linalg.solve(A, b)
    out = values.astype(np.float64).copy()
    for n, p in enumerate(pts):
        out[p] = x[n]
    return out


def nifti_header_bytes(dims, datatype, bitpix, pixdim=(1.0, 1.0, 1.0), endian="<",
                       scl_slope=0.0, scl_inter=0.0, sform=None, qform=None, magic=b"n+1\x00",
                       vox_offset=352.0):
    """Build a 348-byte NIfTI-1 header field by field from the public layout."""
    e = endian
    h = bytearray(348)
    struct.pack_into(e + "i", h, 0, 348)
    dim = [len(dims), *dims] + [1] * (7 - len(dims))
    struct.pack_into(e + "8h", h, 40, *dim)
    struct.pack_into(e + "h", h, 70, datatype)
    struct.pack_into(e + "h", h, 72, bitpix)
    qfac = 1.0
    if qform is not None:
        qfac = qform.get("qfac", 1.0)
    struct.pack_into(e + "8f", h, 76, qfac, *pixdim, 0, 0, 0, 0)
    struct.pack_into(e + "f", h, 108, vox_offset)
    struct.pack_into(e + "f", h, 112, scl_slope)
    struct.pack_into(e + "f", h, 116, scl_inter)
    if qform is not None:
        struct.pack_into(e + "h", h, 252, qform.get("code", 1))
        struct.pack_into(e + "3f", h, 256, *qform["quat"])
        struct.pack_into(e + "3f", h, 268, *qform["offset"])
    if sform is not None:
        struct.pack_into(e + "h", h, 254, 1)
        struct.pack_into(e + "4f", h, 280, *sform[0])
        struct.pack_into(e + "4f", h, 296, *sform[1])
        struct.pack_into(e + "4f", h, 312, *sform[2])
    h[344:348] = magic
    return bytes(h)
