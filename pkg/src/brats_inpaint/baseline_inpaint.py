"""Harmonic infill: solve the 6-neighbour Laplace equation inside the mask.

Known voxels next to the mask act as Dirichlet data. Faces on the grid
border are zero-flux, which amounts to dropping out-of-grid neighbours from
the stencil.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import spsolve_triangular

from . import grid_ops
from .errors import BratsInpaintError, EmptyMask, NoBoundary, NotConverged
from .mask_pipeline import map_cases, _WORKER_STATE
from .volume_io import INFERENCE_SUFFIX, Volume, list_cases, read_mask, read_volume, write_volume

log = logging.getLogger(__name__)

METHODS = ("conjugate_gradient", "gauss_seidel")

_NEIGHBOURS = ((1, 0, 0), (-1, 0, 0), (0, 1, 0), (0, -1, 0), (0, 0, 1), (0, 0, -1))


@dataclass
class SolverConfig:
    tolerance: float = 1e-6
    max_iterations: int = 10_000
    method: str = "conjugate_gradient"

    def __post_init__(self):
        if not self.tolerance > 0:
            raise ValueError("tolerance must be positive")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")
        if self.method not in METHODS:
            raise ValueError(f"method must be one of {METHODS}")


@dataclass
class LaplaceSystem:
    """Sparse system ``A x = b`` over the masked voxels (C-order numbering)."""

    A: sparse.csr_matrix
    b: np.ndarray
    degree: np.ndarray
    coords: np.ndarray
    component: np.ndarray  # 6-connected component id per unknown
    boundary_min: np.ndarray  # per component
    boundary_max: np.ndarray


def assemble(values: np.ndarray, mask: np.ndarray) -> LaplaceSystem:
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        raise EmptyMask("inpainting mask is empty")
    dims = np.array(mask.shape)
    coords = np.argwhere(mask)
    n = len(coords)
    index = np.full(mask.shape, -1, dtype=np.int64)
    index[tuple(coords.T)] = np.arange(n)

    labels, ncomp = grid_ops.label_components(mask, 6)
    comp = labels[tuple(coords.T)] - 1
    bmin = np.full(ncomp, np.inf)
    bmax = np.full(ncomp, -np.inf)

    degree = np.zeros(n)
    b = np.zeros(n)
    rows, cols = [], []
    for step in _NEIGHBOURS:
        nb = coords + step
        ok = np.all((nb >= 0) & (nb < dims), axis=1)
        degree += ok
        src = np.flatnonzero(ok)
        nbi = index[tuple(nb[src].T)]
        unknown = nbi >= 0
        rows.append(src[unknown])
        cols.append(nbi[unknown])
        known_src = src[~unknown]
        kv = values[tuple(nb[known_src].T)]
        np.add.at(b, known_src, kv)
        np.minimum.at(bmin, comp[known_src], kv)
        np.maximum.at(bmax, comp[known_src], kv)

    if np.any(np.isinf(bmin)):
        raise NoBoundary(f"{int(np.sum(np.isinf(bmin)))} mask component(s) have no known neighbour")
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    off = sparse.csr_matrix((-np.ones(len(rows)), (rows, cols)), shape=(n, n))
    A = (sparse.diags(degree) + off).tocsr()
    return LaplaceSystem(A, b, degree, coords, comp, bmin, bmax)


def max_residual(system: LaplaceSystem, x: np.ndarray) -> float:
    """Largest |x_p - mean of neighbours| over the unknowns."""
    return float(np.max(np.abs(system.b - system.A @ x) / system.degree))


def _scale(system: LaplaceSystem) -> float:
    span = float(system.boundary_max.max() - system.boundary_min.min())
    return span if span > 0 else 1.0


def _initial_guess(system: LaplaceSystem) -> np.ndarray:
    mid = 0.5 * (system.boundary_min + system.boundary_max)
    return mid[system.component].astype(np.float64)


def _conjugate_gradient(system: LaplaceSystem, x, target, max_iter):
    """Jacobi-preconditioned CG; returns (x, iterations, residual)."""
    A, b, inv_d = system.A, system.b, 1.0 / system.degree
    r = b - A @ x
    res = float(np.max(np.abs(r) * inv_d))
    if res <= target:
        return x, 0, res
    z = r * inv_d
    p = z.copy()
    rz = float(r @ z)
    for it in range(1, max_iter + 1):
        Ap = A @ p
        alpha = rz / float(p @ Ap)
        x = x + alpha * p
        r = r - alpha * Ap
        res = float(np.max(np.abs(r) * inv_d))
        if res <= target:
            # confirm against the true residual, not the recurrence
            res = max_residual(system, x)
            if res <= target:
                return x, it, res
            r = b - A @ x
        z = r * inv_d
        rz_new = float(r @ z)
        p = z + (rz_new / rz) * p
        rz = rz_new
    return x, max_iter, max_residual(system, x)


def _gauss_seidel(system: LaplaceSystem, x, target, max_iter):
    """Lexicographic Gauss-Seidel sweeps: (D + L) x_new = b - U x_old."""
    lower = sparse.tril(system.A, format="csr")
    upper = sparse.triu(system.A, k=1, format="csr")
    res = max_residual(system, x)
    if res <= target:
        return x, 0, res
    for it in range(1, max_iter + 1):
        x = spsolve_triangular(lower, system.b - upper @ x, lower=True)
        res = max_residual(system, x)
        if res <= target:
            return x, it, res
    return x, max_iter, res


def solve(values: np.ndarray, mask: np.ndarray, cfg: SolverConfig = SolverConfig()):
    """Harmonic infill of ``values`` under ``mask``.

    Returns (filled array, info dict). Raises NotConverged with the partial
    array attached when the residual stays above tolerance.
    """
    values = np.asarray(values, dtype=np.float64)
    system = assemble(values, mask)
    target = cfg.tolerance * _scale(system)
    x0 = _initial_guess(system)
    runner = _conjugate_gradient if cfg.method == "conjugate_gradient" else _gauss_seidel
    x, iterations, res = runner(system, x0, target, cfg.max_iterations)

    out = values.copy()
    out[tuple(system.coords.T)] = x
    info = {"iterations": int(iterations), "max_residual": float(res), "method": cfg.method,
            "relative_residual": float(res / _scale(system))}
    if res > target:
        raise NotConverged(f"residual {res:.3g} above target {target:.3g} after {iterations} iterations",
                           out, iterations, res)
    return out, info


def diffusion_inpaint(voided: Volume, mask: np.ndarray, cfg: SolverConfig = SolverConfig()) -> Volume:
    filled, _ = solve(voided.data, mask, cfg)
    return voided.with_data(filled)


# ---------------------------------------------------------------------------
# dataset runner


def _case_mask(case_dir: Path, case_id: str) -> np.ndarray:
    mask = read_mask(case_dir / f"{case_id}-mask-unhealthy.nii.gz")
    for extra in sorted(case_dir.glob(f"{case_id}-mask-healthy*.nii.gz")):
        mask |= read_mask(extra)
    return mask


def _baseline_one(case_id: str) -> dict:
    st = _WORKER_STATE
    case_dir = Path(st["input_dir"]) / case_id
    out_path = Path(st["output_dir"]) / f"{case_id}{INFERENCE_SUFFIX}"
    try:
        voided = read_volume(case_dir / f"{case_id}-t1n-voided.nii.gz")
        mask = _case_mask(case_dir, case_id)
        try:
            filled, info = solve(voided.data, mask, st["cfg"])
        except NotConverged as exc:
            write_volume(voided.with_data(exc.result), out_path)
            return {"case_id": case_id, "failure": {
                "case_id": case_id, "error": "NotConverged", "message": str(exc),
                "iterations": exc.iterations, "max_residual": exc.max_residual}}
        write_volume(voided.with_data(filled), out_path)
        return {"case_id": case_id, **info}
    except (BratsInpaintError, OSError) as exc:
        return {"case_id": case_id, "failure": {"case_id": case_id, "error": type(exc).__name__,
                                                "message": str(exc)}}


def run_baseline(dataset_dir, output_dir, cfg: SolverConfig = SolverConfig(), jobs: int = 1) -> dict:
    """Infill every voided case under ``dataset_dir``; writes predictions and ``summary.json``."""
    case_ids = [c for c in list_cases(dataset_dir)
                if (Path(dataset_dir) / c / f"{c}-t1n-voided.nii.gz").exists()]
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    results = map_cases(_baseline_one, case_ids, jobs, _init, (cfg, str(dataset_dir), str(output_dir)))
    summary = {
        "solver": {"tolerance": cfg.tolerance, "max_iterations": cfg.max_iterations, "method": cfg.method},
        "cases": [r for r in results if "failure" not in r],
        "failures": [r["failure"] for r in results if "failure" in r],
    }
    (output_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _init(cfg, input_dir, output_dir):
    _WORKER_STATE.update(cfg=cfg, input_dir=input_dir, output_dir=output_dir)
