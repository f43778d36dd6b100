"""Healthy-mask synthesis, voiding, and dataset assembly.

A healthy mask is a real tumour shape moved into tissue far from the case's
own tumour: pick a pool shape of "opposite" size, mirror and rotate it, drop
it at the better of two random brain voxels, and retry until it keeps its
distance from the tumour and stays mostly inside the brain.
"""

from __future__ import annotations

import hashlib
import json
import logging
import multiprocessing
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from . import grid_ops
from .errors import BratsInpaintError, EmptyPool, MaxAttemptsExceeded, MissingHealthyMask, NoFeasibleVoxels
from .grid_ops import MaskShape
from .volume_io import CaseRecord, list_cases, load_case, save_case

log = logging.getLogger(__name__)

DEFAULT_SEED = 20230611

ACCEPT = "Accepted"
TOO_CLOSE = "TooCloseToTumor"
TOO_MUCH_BACKGROUND = "TooMuchBackground"


@dataclass
class SamplerConfig:
    min_component_voxels: int = 800
    min_tumor_distance: float = 5.0
    max_background_overlap: float = 0.25
    percentile_window: float = 5.0
    max_attempts: int = 1000
    tumor_dilation_radius: float = 3.0
    mirror_probability: float = 0.5
    connectivity: int = 26
    seed: int = DEFAULT_SEED

    def __post_init__(self):
        for name in ("min_component_voxels", "min_tumor_distance", "percentile_window",
                     "tumor_dilation_radius"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} must be nonnegative")
        if not 0.0 <= self.max_background_overlap <= 1.0:
            raise ValueError("max_background_overlap must lie in [0, 1]")
        if not 0.0 <= self.mirror_probability <= 1.0:
            raise ValueError("mirror_probability must lie in [0, 1]")
        if self.max_attempts < 1:
            raise ValueError("max_attempts must be at least 1")


def case_rng(seed: int, case_id: str, stream: int = 0) -> np.random.Generator:
    """Philox generator keyed by (seed, case_id, stream).

    Cases draw from independent counter-based streams, so results do not
    depend on processing order or worker count.
    """
    digest = hashlib.sha256(f"{int(seed)}\x00{case_id}\x00{int(stream)}".encode()).digest()
    key = int.from_bytes(digest[:16], "little")
    return np.random.Generator(np.random.Philox(key=key))


# ---------------------------------------------------------------------------
# pool


class MaskPool:
    def __init__(self, shapes):
        self.shapes = list(shapes)
        self.sizes = np.array([s.size for s in self.shapes], dtype=np.int64)
        self.sizes_sorted = np.sort(self.sizes)
        self.percentiles = np.array([size_percentile(self, s) for s in self.sizes]) if self.shapes else np.empty(0)

    def __len__(self):
        return len(self.shapes)

    def to_json(self) -> dict:
        return {
            "format": "brats-inpaint-pool",
            "version": 1,
            "shapes": [
                {"source_case": s.source_case, "size": s.size, "offsets": s.offsets.tolist()}
                for s in self.shapes
            ],
        }

    @classmethod
    def from_json(cls, doc: dict) -> "MaskPool":
        if doc.get("format") != "brats-inpaint-pool":
            raise ValueError("not a pool cache file")
        shapes = []
        for entry in doc["shapes"]:
            offsets = np.asarray(entry["offsets"], dtype=np.int64).reshape(-1, 3)
            if len(offsets) != entry["size"]:
                raise ValueError(f"pool entry from {entry['source_case']} has inconsistent size")
            shapes.append(MaskShape(offsets, entry["source_case"]))
        return cls(shapes)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), separators=(",", ":")))

    @classmethod
    def load(cls, path) -> "MaskPool":
        return cls.from_json(json.loads(Path(path).read_text()))

    def stats(self, bins: int = 10) -> dict:
        if not self.shapes:
            return {"count": 0, "source_cases": 0, "histogram": {"edges": [], "counts": []}}
        counts, edges = np.histogram(self.sizes, bins=bins)
        return {
            "count": len(self.shapes),
            "source_cases": len({s.source_case for s in self.shapes}),
            "min_size": int(self.sizes.min()),
            "median_size": float(np.median(self.sizes)),
            "max_size": int(self.sizes.max()),
            "histogram": {"edges": [float(e) for e in edges], "counts": [int(c) for c in counts]},
        }


def extract_shapes(case_id: str, tumor: np.ndarray, cfg: SamplerConfig) -> list:
    return [
        s
        for s in grid_ops.connected_components(tumor, cfg.connectivity, source_case=case_id)
        if s.size >= cfg.min_component_voxels
    ]


def extract_pool(cases, cfg: SamplerConfig) -> MaskPool:
    """Every tumour component with at least ``cfg.min_component_voxels`` voxels."""
    shapes = []
    for case in sorted(cases, key=lambda c: c.case_id):
        shapes.extend(extract_shapes(case.case_id, case.tumor_mask, cfg))
    return MaskPool(shapes)


def size_percentile(pool: MaskPool, size: int) -> float:
    """Midrank percentile: 100 * (#smaller + 0.5 * #equal) / N."""
    n = len(pool.sizes_sorted)
    if n == 0:
        raise EmptyPool("pool is empty")
    below = np.searchsorted(pool.sizes_sorted, size, side="left")
    upto = np.searchsorted(pool.sizes_sorted, size, side="right")
    return 100.0 * (below + 0.5 * (upto - below)) / n


def select_shape(pool: MaskPool, tumor_size: int, rng: np.random.Generator,
                 window: float = 5.0) -> MaskShape:
    """Pick a shape whose size percentile mirrors the tumour's (p -> 100 - p)."""
    if len(pool) == 0:
        raise EmptyPool("pool is empty")
    target = 100.0 - size_percentile(pool, tumor_size)
    w = window
    while True:
        candidates = np.flatnonzero(np.abs(pool.percentiles - target) <= w)
        if len(candidates):
            return pool.shapes[int(candidates[rng.integers(len(candidates))])]
        w += 5.0


# ---------------------------------------------------------------------------
# placement


def propose_position(brain: np.ndarray, tumor: np.ndarray, rng: np.random.Generator,
                     tumor_sq_edt: Optional[np.ndarray] = None, candidates=None) -> tuple:
    """Draw two brain voxels outside the tumour; keep the one farther from it."""
    if candidates is None:
        candidates = np.flatnonzero(brain & ~tumor)
    if len(candidates) == 0:
        raise NoFeasibleVoxels("no brain voxel lies outside the tumour")
    picks = candidates[rng.integers(len(candidates), size=2)]
    if tumor_sq_edt is None and tumor.any():
        tumor_sq_edt = grid_ops.squared_distance_transform(tumor)
    best = picks[0]
    if tumor_sq_edt is not None and tumor_sq_edt.flat[picks[1]] > tumor_sq_edt.flat[picks[0]]:
        best = picks[1]
    return tuple(int(c) for c in np.unravel_index(best, brain.shape))


def validate_placement(healthy: np.ndarray, tumor_dilated: np.ndarray, brain: np.ndarray,
                       cfg: SamplerConfig, clipped: int = 0, tumor_sq_edt=None):
    """Check the distance and background rules; returns (ok, reason).

    ``clipped`` voxels fell off the grid and count as background.
    """
    inside = int(np.count_nonzero(healthy))
    if inside + clipped == 0:
        raise ValueError("healthy mask is empty")
    if inside and tumor_dilated.any():
        if tumor_sq_edt is None:
            tumor_sq_edt = grid_ops.squared_distance_transform(tumor_dilated)
        if np.sqrt(tumor_sq_edt[healthy].min()) < cfg.min_tumor_distance:
            return False, TOO_CLOSE
    background = np.count_nonzero(healthy & ~brain) + clipped
    if background / (inside + clipped) > cfg.max_background_overlap:
        return False, TOO_MUCH_BACKGROUND
    return True, ACCEPT


@dataclass
class SampleResult:
    mask: np.ndarray = field(repr=False)
    attempts: int
    shape_source_case: str
    shape_size: int
    mirror_axes: list
    angle_xy: float
    angle_yz: float
    center: list
    clipped: int
    collapsed: int
    rejections: dict

    def summary(self) -> dict:
        d = asdict(self)
        d.pop("mask")
        d["mask_size"] = int(np.count_nonzero(self.mask))
        return d


def draw_transform(rng: np.random.Generator, mirror_probability: float = 0.5):
    """Mirror flags per axis and the two rotation angles, in that draw order."""
    axes = rng.random(3) < mirror_probability
    angles = rng.uniform(0.0, 360.0, size=2)
    return axes, float(angles[0]), float(angles[1])


def sample_healthy_mask(case: CaseRecord, pool: MaskPool, cfg: SamplerConfig,
                        rng: Optional[np.random.Generator] = None, *,
                        tumor_dilated: Optional[np.ndarray] = None,
                        avoid: Optional[np.ndarray] = None) -> SampleResult:
    """Retry select/transform/place until a placement passes validation.

    ``avoid`` marks extra voxels (e.g. earlier healthy masks) that the
    candidate centre may not fall on.
    """
    if len(pool) == 0:
        raise EmptyPool("pool is empty")
    if rng is None:
        rng = case_rng(cfg.seed, case.case_id)
    brain = case.t1.data != 0
    if tumor_dilated is None:
        tumor_dilated = dilate_tumor(case.tumor_mask, cfg.tumor_dilation_radius)
    tumor_size = int(np.count_nonzero(case.tumor_mask))
    sq_edt = grid_ops.squared_distance_transform(tumor_dilated) if tumor_dilated.any() else None
    blocked = tumor_dilated if avoid is None else (tumor_dilated | avoid)
    candidates = np.flatnonzero(brain & ~blocked)
    dims = case.t1.dims

    rejections = {TOO_CLOSE: 0, TOO_MUCH_BACKGROUND: 0}
    for attempt in range(1, cfg.max_attempts + 1):
        shape = select_shape(pool, tumor_size, rng, cfg.percentile_window)
        axes, angle_xy, angle_yz = draw_transform(rng, cfg.mirror_probability)
        moved = grid_ops.rotate(grid_ops.mirror(shape, axes), angle_xy, angle_yz)
        center = propose_position(brain, blocked, rng, sq_edt, candidates)
        healthy, clipped = grid_ops.place(moved, center, dims)
        ok, reason = validate_placement(healthy, tumor_dilated, brain, cfg, clipped, sq_edt)
        if ok:
            return SampleResult(
                mask=healthy,
                attempts=attempt,
                shape_source_case=shape.source_case,
                shape_size=shape.size,
                mirror_axes=[bool(a) for a in axes],
                angle_xy=angle_xy,
                angle_yz=angle_yz,
                center=list(center),
                clipped=clipped,
                collapsed=shape.size - moved.size,
                rejections=rejections,
            )
        rejections[reason] += 1
    raise MaxAttemptsExceeded(
        f"{case.case_id}: no valid placement after {cfg.max_attempts} attempts", rejections
    )


# ---------------------------------------------------------------------------
# voiding and dataset assembly


def dilate_tumor(tumor: np.ndarray, radius: float) -> np.ndarray:
    if not tumor.any():
        return tumor.copy()
    return grid_ops.dilate(tumor, radius)


def void_case(case: CaseRecord, cfg: SamplerConfig) -> CaseRecord:
    """Dilate the tumour and zero the T1 under tumour and healthy masks."""
    if case.healthy_mask is None:
        raise MissingHealthyMask(f"{case.case_id}: no healthy mask to void")
    tumor = dilate_tumor(case.tumor_mask, cfg.tumor_dilation_radius)
    region = tumor | case.healthy_mask
    for extra in case.extra_healthy:
        region |= extra
    voided = case.t1.data.copy()
    voided[region] = 0.0
    return CaseRecord(case.case_id, case.t1, tumor, case.healthy_mask,
                      case.t1.with_data(voided), list(case.extra_healthy))


def process_case(case: CaseRecord, pool: MaskPool, cfg: SamplerConfig,
                 masks_per_case: int = 1):
    """Sample ``masks_per_case`` healthy masks and void; returns (case, records)."""
    tumor = dilate_tumor(case.tumor_mask, cfg.tumor_dilation_radius)
    masks, records = [], []
    taken = np.zeros(case.t1.dims, dtype=bool)
    for k in range(masks_per_case):
        rng = case_rng(cfg.seed, case.case_id, k)
        res = sample_healthy_mask(case, pool, cfg, rng, tumor_dilated=tumor,
                                  avoid=taken if k else None)
        taken |= res.mask
        masks.append(res.mask)
        rec = {"case_id": case.case_id, "mask_index": k, "seed": cfg.seed, "stream": k}
        rec.update(res.summary())
        records.append(rec)
    filled = CaseRecord(case.case_id, case.t1, case.tumor_mask, masks[0], None, masks[1:])
    return void_case(filled, cfg), records


_WORKER_STATE: dict = {}


def _init_worker(pool, cfg, masks_per_case, input_dir, output_dir):
    _WORKER_STATE.update(pool=pool, cfg=cfg, n=masks_per_case,
                         input_dir=input_dir, output_dir=output_dir)


def _run_one(case_id: str) -> dict:
    st = _WORKER_STATE
    try:
        case = load_case(st["input_dir"], case_id)
        voided, records = process_case(case, st["pool"], st["cfg"], st["n"])
        save_case(voided, st["output_dir"])
        return {"case_id": case_id, "records": records}
    except BratsInpaintError as exc:
        err = {"case_id": case_id, "error": type(exc).__name__, "message": str(exc)}
        if isinstance(exc, MaxAttemptsExceeded):
            err["rejections"] = exc.stats
        return {"case_id": case_id, "failure": err}


def map_cases(fn, case_ids, jobs: int, initializer, initargs):
    """Run ``fn`` over case ids, in-process for ``jobs <= 1``; results keep input order."""
    if jobs <= 1:
        initializer(*initargs)
        return [fn(c) for c in case_ids]
    ctx = multiprocessing.get_context("fork")
    with ProcessPoolExecutor(max_workers=jobs, mp_context=ctx,
                             initializer=initializer, initargs=initargs) as ex:
        return list(ex.map(fn, case_ids))


def build_dataset(input_dir, output_dir, cfg: SamplerConfig, masks_per_case: int = 1,
                  jobs: int = 1, pool: Optional[MaskPool] = None) -> dict:
    """Sample and void every case under ``input_dir`` into ``output_dir``.

    Writes ``summary.json`` next to the case folders and returns the same dict.
    """
    case_ids = list_cases(input_dir)
    if pool is None:
        pool = extract_pool((load_case(input_dir, c) for c in case_ids), cfg)
    output_dir = Path(output_dir)
    output_dir.mkdir(parents=True, exist_ok=True)
    log.info("sampling %d cases from a pool of %d shapes", len(case_ids), len(pool))

    results = map_cases(_run_one, case_ids, jobs, _init_worker,
                        (pool, cfg, masks_per_case, str(input_dir), str(output_dir)))
    summary = {
        "config": asdict(cfg),
        "masks_per_case": masks_per_case,
        "pool_size": len(pool),
        "cases": [r for res in results for r in res.get("records", [])],
        "failures": [res["failure"] for res in results if "failure" in res],
    }
    (output_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary


def _void_one(case_id: str) -> dict:
    st = _WORKER_STATE
    try:
        case = load_case(st["input_dir"], case_id)
        voided = void_case(case, st["cfg"])
        save_case(voided, st["output_dir"])
        region = voided.tumor_mask | voided.healthy_mask
        return {"case_id": case_id, "voided_voxels": int(np.count_nonzero(region))}
    except BratsInpaintError as exc:
        return {"case_id": case_id, "failure": {"case_id": case_id, "error": type(exc).__name__,
                                                "message": str(exc)}}


def void_dataset(input_dir, output_dir, cfg: SamplerConfig, jobs: int = 1) -> dict:
    """Void cases that already carry healthy masks."""
    case_ids = list_cases(input_dir)
    Path(output_dir).mkdir(parents=True, exist_ok=True)
    results = map_cases(_void_one, case_ids, jobs, _init_worker,
                        (None, cfg, 1, str(input_dir), str(output_dir)))
    summary = {
        "config": asdict(cfg),
        "cases": [r for r in results if "failure" not in r],
        "failures": [r["failure"] for r in results if "failure" in r],
    }
    (Path(output_dir) / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True))
    return summary
