"""3D voxel-grid kernels: components, exact EDT, dilation, shape transforms."""

from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np
from scipy import ndimage

from .errors import DimsMismatch, EmptyMask

_STRUCTURE_RANK = {6: 1, 18: 2, 26: 3}


@dataclass(frozen=True, eq=False)
class MaskShape:
    """A translation-free voxel shape: integer offsets around the rounded centroid."""

    offsets: np.ndarray
    source_case: str = ""

    @property
    def size(self) -> int:
        return int(len(self.offsets))

    @classmethod
    def from_coords(cls, coords, source_case: str = "") -> "MaskShape":
        coords = _canonical(np.asarray(coords, dtype=np.int64).reshape(-1, 3))
        if len(coords) == 0:
            return cls(coords, source_case)
        centre = np.rint(coords.mean(axis=0)).astype(np.int64)
        return cls(coords - centre, source_case)

    def same_voxels(self, other: "MaskShape") -> bool:
        return self.offsets.shape == other.offsets.shape and bool(np.all(self.offsets == other.offsets))


def _canonical(offsets: np.ndarray) -> np.ndarray:
    """Unique rows in lexicographic (x, y, z) order."""
    if len(offsets) == 0:
        return offsets.reshape(0, 3)
    return np.unique(offsets, axis=0)


def _require_nonempty(mask: np.ndarray, what: str = "mask") -> None:
    if not mask.any():
        raise EmptyMask(f"{what} is empty")


def _require_same_dims(a: np.ndarray, b: np.ndarray) -> None:
    if a.shape != b.shape:
        raise DimsMismatch(f"dims {a.shape} != {b.shape}")


# ---------------------------------------------------------------------------
# connected components


def label_components(mask: np.ndarray, connectivity: int = 26):
    """scipy labelling under 6/18/26 adjacency; returns (labels, count)."""
    if connectivity not in _STRUCTURE_RANK:
        raise ValueError(f"connectivity must be 6, 18 or 26, got {connectivity}")
    structure = ndimage.generate_binary_structure(3, _STRUCTURE_RANK[connectivity])
    return ndimage.label(np.asarray(mask, dtype=bool), structure=structure)


def connected_components(mask: np.ndarray, connectivity: int = 26, source_case: str = "") -> list:
    """Split ``mask`` into maximal connected pieces as centroid-normalised shapes.

    Ordered by size (largest first), then by each piece's lexicographically
    smallest voxel.
    """
    labels, n = label_components(mask, connectivity)
    if n == 0:
        return []
    coords = np.argwhere(labels)  # C order scan -> lexicographic (x, y, z)
    ids = labels[tuple(coords.T)]
    order = np.argsort(ids, kind="stable")
    coords, ids = coords[order], ids[order]
    splits = np.flatnonzero(np.diff(ids)) + 1
    groups = np.split(coords, splits)
    # each group is still lexicographically sorted, so group[0] is its minimal voxel
    groups.sort(key=lambda g: (-len(g), tuple(g[0])))
    return [MaskShape.from_coords(g, source_case) for g in groups]


# ---------------------------------------------------------------------------
# exact Euclidean distance transform (Felzenszwalb-Huttenlocher lower envelope)


@numba.njit(cache=True)
def _envelope_1d(f, out, v, z):
    n = f.shape[0]
    inf = np.inf
    k = -1
    for q in range(n):
        fq = f[q]
        if fq == inf:
            continue
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -inf
            z[1] = inf
            continue
        s = 0.0
        while k >= 0:
            p = v[k]
            s = ((fq + q * q) - (f[p] + p * p)) / (2.0 * q - 2.0 * p)
            if s <= z[k]:
                k -= 1
            else:
                break
        if k < 0:
            k = 0
            v[0] = q
            z[0] = -inf
            z[1] = inf
        else:
            k += 1
            v[k] = q
            z[k] = s
            z[k + 1] = inf
    if k < 0:
        for q in range(n):
            out[q] = inf
        return
    k = 0
    for q in range(n):
        while z[k + 1] < q:
            k += 1
        p = v[k]
        out[q] = (q - p) * (q - p) + f[p]


@numba.njit(cache=True)
def _squared_edt(grid):
    nx, ny, nz = grid.shape
    n = max(nx, max(ny, nz))
    f = np.empty(n)
    out = np.empty(n)
    v = np.empty(n, dtype=np.int64)
    z = np.empty(n + 1)
    for j in range(ny):
        for k in range(nz):
            for i in range(nx):
                f[i] = grid[i, j, k]
            _envelope_1d(f[:nx], out[:nx], v, z)
            for i in range(nx):
                grid[i, j, k] = out[i]
    for i in range(nx):
        for k in range(nz):
            for j in range(ny):
                f[j] = grid[i, j, k]
            _envelope_1d(f[:ny], out[:ny], v, z)
            for j in range(ny):
                grid[i, j, k] = out[j]
    for i in range(nx):
        for j in range(ny):
            for k in range(nz):
                f[k] = grid[i, j, k]
            _envelope_1d(f[:nz], out[:nz], v, z)
            for k in range(nz):
                grid[i, j, k] = out[k]
    return grid


def squared_distance_transform(mask: np.ndarray) -> np.ndarray:
    """Squared voxel distance to the nearest set voxel (exact integers as float64)."""
    mask = np.asarray(mask, dtype=bool)
    _require_nonempty(mask)
    grid = np.where(mask, 0.0, np.inf)
    return _squared_edt(grid)


def distance_transform(mask: np.ndarray) -> np.ndarray:
    """Exact Euclidean distance (voxel units) from each voxel to the nearest set voxel."""
    return np.sqrt(squared_distance_transform(mask))


# ---------------------------------------------------------------------------
# morphology and queries


def dilate(mask: np.ndarray, radius: float) -> np.ndarray:
    """Ball dilation: every voxel within Euclidean ``radius`` of the mask."""
    if radius < 0:
        raise ValueError("radius must be nonnegative")
    mask = np.asarray(mask, dtype=bool)
    _require_nonempty(mask)
    if radius == 0:
        return mask.copy()
    return squared_distance_transform(mask) <= float(radius) ** 2


def overlap_fraction(mask: np.ndarray, region: np.ndarray) -> float:
    """Share of ``mask`` voxels that also lie in ``region``."""
    _require_same_dims(mask, region)
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise EmptyMask("mask is empty")
    return np.count_nonzero(mask & region) / n


def min_distance(a: np.ndarray, b: np.ndarray) -> float:
    _require_same_dims(a, b)
    _require_nonempty(a, "first mask")
    return float(np.sqrt(squared_distance_transform(b)[a].min()))


# ---------------------------------------------------------------------------
# shape transforms


def mirror(shape: MaskShape, axes) -> MaskShape:
    signs = np.where(np.asarray(axes, dtype=bool), -1, 1)
    if not (signs < 0).any():
        return shape
    return MaskShape.from_coords(shape.offsets * signs, shape.source_case)


def rotation_matrix(angle_xy: float, angle_yz: float) -> np.ndarray:
    """X-Y plane rotation followed by Y-Z plane rotation (degrees)."""
    a, b = np.deg2rad(angle_xy), np.deg2rad(angle_yz)
    ca, sa, cb, sb = np.cos(a), np.sin(a), np.cos(b), np.sin(b)
    rot_xy = np.array([[ca, -sa, 0.0], [sa, ca, 0.0], [0.0, 0.0, 1.0]])
    rot_yz = np.array([[1.0, 0.0, 0.0], [0.0, cb, -sb], [0.0, sb, cb]])
    return rot_yz @ rot_xy


def rotate(shape: MaskShape, angle_xy: float, angle_yz: float) -> MaskShape:
    """Rotate offsets about the origin and snap to the nearest voxel.

    Offsets that land on the same voxel merge, so the size can drop.
    """
    if not (np.isfinite(angle_xy) and np.isfinite(angle_yz)):
        raise ValueError("rotation angles must be finite")
    if angle_xy % 360 == 0 and angle_yz % 360 == 0:
        return shape
    rotated = shape.offsets @ rotation_matrix(angle_xy, angle_yz).T
    return MaskShape(_canonical(np.rint(rotated).astype(np.int64)), shape.source_case)


def place(shape: MaskShape, center, dims):
    """Stamp ``shape`` with its origin at ``center``; returns (mask, clipped_count)."""
    dims = tuple(int(d) for d in dims)
    coords = shape.offsets + np.asarray(center, dtype=np.int64)
    inside = np.all((coords >= 0) & (coords < np.asarray(dims)), axis=1)
    mask = np.zeros(dims, dtype=bool)
    kept = coords[inside]
    mask[kept[:, 0], kept[:, 1], kept[:, 2]] = True
    return mask, int(len(coords) - len(kept))
