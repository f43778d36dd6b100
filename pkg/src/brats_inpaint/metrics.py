"""Image-quality metrics restricted to a mask: MSE, PSNR, 3D Gaussian SSIM."""

from __future__ import annotations

import csv
import json
import logging
import math
from dataclasses import asdict, dataclass
from pathlib import Path
from typing import Optional

import numpy as np
from scipy import ndimage

from .errors import DimsMismatch, EmptyMask, MissingFile, NoCommonCases, ZeroDynamicRange
from .volume_io import INFERENCE_SUFFIX, Volume, case_paths, list_cases, read_mask, read_volume

log = logging.getLogger(__name__)

CSV_FIELDS = ("case_id", "team_id", "ssim", "psnr", "mse", "voxels")


@dataclass
class MetricParams:
    k1: float = 0.01
    k2: float = 0.03
    window_sigma: float = 1.5
    window_radius: int = 5
    dynamic_range: Optional[float] = None
    psnr_cap: float = 100.0

    def __post_init__(self):
        if self.k1 <= 0 or self.k2 <= 0:
            raise ValueError("k1 and k2 must be positive")
        if self.window_radius < 1 or self.window_sigma <= 0:
            raise ValueError("window_radius must be >= 1 and window_sigma > 0")
        if self.dynamic_range is not None and not self.dynamic_range > 0:
            raise ZeroDynamicRange("dynamic_range must be positive")


@dataclass
class MetricReport:
    case_id: str
    team_id: str
    ssim: float
    psnr: float
    mse: float
    voxels_evaluated: int
    missing: bool = False

    @classmethod
    def missing_prediction(cls, case_id: str, team_id: str) -> "MetricReport":
        nan = float("nan")
        return cls(case_id, team_id, nan, nan, nan, 0, missing=True)


def _arrays(gt, pred, mask):
    g = gt.data if isinstance(gt, Volume) else np.asarray(gt, dtype=np.float64)
    p = pred.data if isinstance(pred, Volume) else np.asarray(pred, dtype=np.float64)
    m = np.asarray(mask, dtype=bool)
    if g.shape != p.shape or g.shape != m.shape:
        raise DimsMismatch(f"gt {g.shape}, prediction {p.shape}, mask {m.shape}")
    if not m.any():
        raise EmptyMask("evaluation mask is empty")
    return g.astype(np.float64, copy=False), p.astype(np.float64, copy=False), m


def dynamic_range(gt, params: MetricParams) -> float:
    if params.dynamic_range is not None:
        return float(params.dynamic_range)
    g = gt.data if isinstance(gt, Volume) else np.asarray(gt)
    rng = float(g.max() - g.min())
    if rng <= 0:
        raise ZeroDynamicRange("ground truth is constant; pass an explicit dynamic_range")
    return rng


def mse_masked(gt, pred, mask) -> float:
    g, p, m = _arrays(gt, pred, mask)
    diff = g[m] - p[m]
    return float(np.mean(diff * diff))


def psnr_from_mse(mse: float, data_range: float, cap: float = 100.0) -> float:
    if mse == 0:
        return cap
    return 10.0 * math.log10(data_range * data_range / mse)


def psnr_masked(gt, pred, mask, params: MetricParams = MetricParams()) -> float:
    mse = mse_masked(gt, pred, mask)
    return psnr_from_mse(mse, dynamic_range(gt, params), params.psnr_cap)


def gaussian_kernel_1d(sigma: float, radius: int) -> np.ndarray:
    x = np.arange(-radius, radius + 1, dtype=np.float64)
    k = np.exp(-0.5 * (x / sigma) ** 2)
    return k / k.sum()


def _local_mean(arr: np.ndarray, kernel: np.ndarray, norm: np.ndarray) -> np.ndarray:
    out = arr
    for axis in range(3):
        out = ndimage.correlate1d(out, kernel, axis=axis, mode="constant", cval=0.0)
    return out / norm


def ssim_map(gt, pred, params: MetricParams = MetricParams(), data_range: Optional[float] = None) -> np.ndarray:
    """Per-voxel SSIM with a separable Gaussian window.

    At the borders the window is truncated and renormalised to unit mass.
    """
    g = gt.data if isinstance(gt, Volume) else np.asarray(gt, dtype=np.float64)
    p = pred.data if isinstance(pred, Volume) else np.asarray(pred, dtype=np.float64)
    g, p = g.astype(np.float64, copy=False), p.astype(np.float64, copy=False)
    L = data_range if data_range is not None else dynamic_range(g, params)
    c1, c2 = (params.k1 * L) ** 2, (params.k2 * L) ** 2
    kernel = gaussian_kernel_1d(params.window_sigma, params.window_radius)
    norm = np.ones(g.shape)
    for axis in range(3):
        norm = ndimage.correlate1d(norm, kernel, axis=axis, mode="constant", cval=0.0)

    mu_x = _local_mean(g, kernel, norm)
    mu_y = _local_mean(p, kernel, norm)
    var_x = _local_mean(g * g, kernel, norm) - mu_x * mu_x
    var_y = _local_mean(p * p, kernel, norm) - mu_y * mu_y
    cov = _local_mean(g * p, kernel, norm) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x * mu_x + mu_y * mu_y + c1) * (var_x + var_y + c2)
    return num / den


def ssim_masked(gt, pred, mask, params: MetricParams = MetricParams()) -> float:
    g, p, m = _arrays(gt, pred, mask)
    return float(ssim_map(g, p, params, dynamic_range(g, params))[m].mean())


def evaluate_case(gt, pred, healthy_mask, params: MetricParams = MetricParams(),
                  case_id: str = "", team_id: str = "") -> MetricReport:
    g, p, m = _arrays(gt, pred, healthy_mask)
    L = dynamic_range(g, params)
    mse = mse_masked(g, p, m)
    return MetricReport(
        case_id=case_id,
        team_id=team_id,
        ssim=float(ssim_map(g, p, params, L)[m].mean()),
        psnr=psnr_from_mse(mse, L, params.psnr_cap),
        mse=mse,
        voxels_evaluated=int(np.count_nonzero(m)),
    )


def find_prediction(pred_dir, case_id: str) -> Optional[Path]:
    pred_dir = Path(pred_dir)
    for cand in (pred_dir / f"{case_id}{INFERENCE_SUFFIX}",
                 pred_dir / case_id / f"{case_id}{INFERENCE_SUFFIX}"):
        if cand.exists():
            return cand
    return None


def evaluate_submission(gt_dir, pred_dir, params: MetricParams = MetricParams(),
                        team_id: str = "team") -> list:
    """Score every ground-truth case; absent predictions become missing reports."""
    case_ids = list_cases(gt_dir)
    found = {c: find_prediction(pred_dir, c) for c in case_ids}
    if not any(found.values()):
        raise NoCommonCases(f"no predictions in {pred_dir} match cases in {gt_dir}")
    reports = []
    for case_id in case_ids:
        if found[case_id] is None:
            log.warning("%s: no prediction from %s", case_id, team_id)
            reports.append(MetricReport.missing_prediction(case_id, team_id))
            continue
        paths = case_paths(gt_dir, case_id)
        if not paths["healthy"].exists():
            raise MissingFile(f"{paths['healthy']} not found")
        gt = read_volume(paths["t1"])
        pred = read_volume(found[case_id])
        reports.append(evaluate_case(gt, pred, read_mask(paths["healthy"]), params, case_id, team_id))
    return reports


# ---------------------------------------------------------------------------
# serialisation


def _fmt(x: float) -> str:
    return "" if math.isnan(x) else f"{x:.9g}"


def write_reports_csv(reports, path) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_FIELDS)
        for r in sorted(reports, key=lambda r: (r.team_id, r.case_id)):
            w.writerow([r.case_id, r.team_id, _fmt(r.ssim), _fmt(r.psnr), _fmt(r.mse), r.voxels_evaluated])


def read_reports_csv(path) -> list:
    """Parse a metrics CSV; rows with empty metric cells are missing predictions."""
    with open(path, newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_FIELDS:
            raise ValueError(f"{path}: expected header {','.join(CSV_FIELDS)}")
        out = []
        for row in reader:
            if row["ssim"] == "" or row["psnr"] == "" or row["mse"] == "":
                out.append(MetricReport.missing_prediction(row["case_id"], row["team_id"]))
            else:
                out.append(MetricReport(row["case_id"], row["team_id"], float(row["ssim"]),
                                        float(row["psnr"]), float(row["mse"]), int(row["voxels"])))
        return out


def write_reports_json(reports, path) -> None:
    rows = []
    for r in sorted(reports, key=lambda r: (r.team_id, r.case_id)):
        d = asdict(r)
        for k in ("ssim", "psnr", "mse"):
            d[k] = None if math.isnan(d[k]) else float(_fmt(d[k]))
        rows.append(d)
    Path(path).write_text(json.dumps(rows, indent=2))
