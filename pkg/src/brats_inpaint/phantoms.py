"""Synthetic brain phantoms: ellipsoidal T1 volumes with blob-shaped tumours."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .mask_pipeline import case_rng
from .volume_io import CaseRecord, Volume, _write_bytes, case_paths, encode_nifti, save_case


def _ellipsoid(dims, centre, radii):
    grid = np.indices(dims, dtype=np.float64)
    r = sum(((grid[i] - centre[i]) / radii[i]) ** 2 for i in range(3))
    return r


def make_phantom(case_id: str, seed: int = 0, dims=(64, 64, 64)):
    """One phantom case and its multi-label tumour annotation (labels 1, 2, 4).

    Intensities vary smoothly with depth and carry mild noise; the tumour
    is a union of spheres plus a small satellite that is below the
    pool-size threshold.
    """
    rng = case_rng(seed, case_id, stream=10_000)
    dims = tuple(dims)
    centre = np.array(dims) / 2.0 - 0.5
    radii = np.array(dims) * rng.uniform(0.38, 0.44, size=3)
    rho = _ellipsoid(dims, centre, radii)
    brain = rho <= 1.0

    grid = np.indices(dims, dtype=np.float64)
    t1 = 80.0 + 40.0 * (1.0 - rho) + 8.0 * np.sin(grid[0] / 3.0) * np.cos(grid[1] / 4.0)
    t1 += rng.normal(0.0, 2.0, size=dims)
    t1 = np.where(brain, np.clip(t1, 1.0, None), 0.0).astype(np.float32).astype(np.float64)

    labels = np.zeros(dims, dtype=np.uint8)
    # tumour centre somewhere in one half of the brain, well inside it
    direction = rng.normal(size=3)
    direction /= np.linalg.norm(direction)
    tc = centre + direction * radii * rng.uniform(0.2, 0.45)
    size = rng.uniform(5.5, 10.0)
    dist = np.sqrt(((grid - tc[:, None, None, None]) ** 2).sum(axis=0))
    labels[dist <= size] = 2
    lobe = tc + rng.normal(size=3) * size * 0.5
    dist2 = np.sqrt(((grid - lobe[:, None, None, None]) ** 2).sum(axis=0))
    labels[(dist2 <= size * 0.7) & brain] = 1
    labels[dist <= size * 0.5] = 4
    # small satellite, too small to join the pool
    sat = tc - direction * radii * 0.6
    dist3 = np.sqrt(((grid - sat[:, None, None, None]) ** 2).sum(axis=0))
    labels[(dist3 <= 2.5) & brain] = 1
    labels[~brain] = 0

    vol = Volume(t1, spacing=(1.0, 1.0, 1.0))
    return CaseRecord(case_id, vol, labels != 0), labels


def write_phantom_dataset(out_dir, n_cases: int = 10, seed: int = 0, dims=(64, 64, 64)) -> list:
    """Write ``n_cases`` phantoms in the case-directory layout; returns the ids."""
    out_dir = Path(out_dir)
    ids = []
    for i in range(n_cases):
        case_id = f"Phantom-{i:05d}"
        case, labels = make_phantom(case_id, seed, dims)
        save_case(case, out_dir)
        # keep the multi-label annotation on disk, as a real segmentation would be
        blob = encode_nifti(labels, case.t1.spacing, case.t1.affine, np.uint8)
        _write_bytes(blob, case_paths(out_dir, case_id)["tumor"], True)
        ids.append(case_id)
    return ids
