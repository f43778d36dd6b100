"""NIfTI-1 reading/writing and the on-disk case layout.

Only single-file NIfTI-1 (``n+1``) and the header half of the paired format
(``ni1``, with the payload in a sibling ``.img``) are understood. Extensions
are skipped on read and never written.

Arrays are indexed ``[x, y, z]``; on disk the payload is x-fastest, which is
numpy Fortran order.
"""

from __future__ import annotations

import gzip
import io
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional, Union

import numpy as np

from .errors import (
    BadMagic,
    DimsMismatch,
    MissingFile,
    NonFiniteData,
    TruncatedData,
    UnsupportedDatatype,
    UnsupportedDimensions,
)

PathLike = Union[str, os.PathLike]

HEADER_SIZE = 348
# 348-byte header plus the 4-byte "no extensions" flag
VOX_OFFSET = 352

HEADER_DTYPE = np.dtype(
    [
        ("sizeof_hdr", "i4"),
        ("data_type", "S10"),
        ("db_name", "S18"),
        ("extents", "i4"),
        ("session_error", "i2"),
        ("regular", "S1"),
        ("dim_info", "u1"),
        ("dim", "i2", (8,)),
        ("intent_p1", "f4"),
        ("intent_p2", "f4"),
        ("intent_p3", "f4"),
        ("intent_code", "i2"),
        ("datatype", "i2"),
        ("bitpix", "i2"),
        ("slice_start", "i2"),
        ("pixdim", "f4", (8,)),
        ("vox_offset", "f4"),
        ("scl_slope", "f4"),
        ("scl_inter", "f4"),
        ("slice_end", "i2"),
        ("slice_code", "u1"),
        ("xyzt_units", "u1"),
        ("cal_max", "f4"),
        ("cal_min", "f4"),
        ("slice_duration", "f4"),
        ("toffset", "f4"),
        ("glmax", "i4"),
        ("glmin", "i4"),
        ("descrip", "S80"),
        ("aux_file", "S24"),
        ("qform_code", "i2"),
        ("sform_code", "i2"),
        ("quatern_b", "f4"),
        ("quatern_c", "f4"),
        ("quatern_d", "f4"),
        ("qoffset_x", "f4"),
        ("qoffset_y", "f4"),
        ("qoffset_z", "f4"),
        ("srow_x", "f4", (4,)),
        ("srow_y", "f4", (4,)),
        ("srow_z", "f4", (4,)),
        ("intent_name", "S16"),
        ("magic", "S4"),
    ]
)
assert HEADER_DTYPE.itemsize == HEADER_SIZE

# NIfTI datatype code -> numpy dtype (native byte order; swapped on demand)
DATATYPES = {
    2: np.dtype(np.uint8),
    4: np.dtype(np.int16),
    8: np.dtype(np.int32),
    16: np.dtype(np.float32),
    64: np.dtype(np.float64),
    512: np.dtype(np.uint16),
}
DATATYPE_CODES = {v: k for k, v in DATATYPES.items()}

# xyzt_units: millimetres, seconds
_UNITS_MM_SEC = 2 | 8


@dataclass
class Volume:
    """A 3D scalar image with voxel spacing and a voxel-to-world affine."""

    data: np.ndarray
    spacing: tuple = (1.0, 1.0, 1.0)
    affine: Optional[np.ndarray] = None

    def __post_init__(self):
        self.data = np.asarray(self.data)
        if self.data.ndim != 3:
            raise UnsupportedDimensions(f"expected a 3D array, got shape {self.data.shape}")
        if not np.issubdtype(self.data.dtype, np.floating):
            self.data = self.data.astype(np.float64)
        self.spacing = tuple(float(s) for s in self.spacing)
        if len(self.spacing) != 3 or not all(np.isfinite(s) and s > 0 for s in self.spacing):
            raise ValueError(f"spacing must be 3 positive finite values, got {self.spacing}")
        if self.affine is None:
            self.affine = np.diag([*self.spacing, 1.0])
        self.affine = np.asarray(self.affine, dtype=np.float64).reshape(4, 4)

    @property
    def dims(self) -> tuple:
        return tuple(int(d) for d in self.data.shape)

    def with_data(self, data: np.ndarray) -> "Volume":
        """Same geometry, new voxel values."""
        return Volume(data, self.spacing, self.affine.copy())


@dataclass
class CaseRecord:
    case_id: str
    t1: Volume
    tumor_mask: np.ndarray
    healthy_mask: Optional[np.ndarray] = None
    voided_t1: Optional[Volume] = None
    extra_healthy: list = field(default_factory=list)

    def __post_init__(self):
        dims = self.t1.dims
        for name in ("tumor_mask", "healthy_mask"):
            m = getattr(self, name)
            if m is not None and m.shape != dims:
                raise DimsMismatch(f"{self.case_id}: {name} dims {m.shape} != t1 dims {dims}")
        if self.voided_t1 is not None and self.voided_t1.dims != dims:
            raise DimsMismatch(f"{self.case_id}: voided_t1 dims {self.voided_t1.dims} != t1 dims {dims}")


# ---------------------------------------------------------------------------
# reading


def _read_bytes(path: Path) -> bytes:
    with open(path, "rb") as fh:
        raw = fh.read()
    if raw[:2] == b"\x1f\x8b":
        try:
            raw = gzip.decompress(raw)
        except (EOFError, gzip.BadGzipFile) as exc:
            raise TruncatedData(f"{path}: corrupt gzip stream ({exc})") from exc
    return raw


def _parse(raw: bytes):
    if len(raw) < HEADER_SIZE:
        raise TruncatedData(f"header needs {HEADER_SIZE} bytes, got {len(raw)}")
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder("<"))[0]
    if hdr["magic"] not in (b"n+1", b"ni1"):
        raise BadMagic(f"not a NIfTI-1 file (magic {bytes(raw[344:348])!r})")
    if 1 <= hdr["dim"][0] <= 7:
        return hdr, "<"
    hdr = np.frombuffer(raw[:HEADER_SIZE], dtype=HEADER_DTYPE.newbyteorder(">"))[0]
    if not 1 <= hdr["dim"][0] <= 7:
        raise UnsupportedDimensions(f"dim[0] = {hdr['dim'][0]} in either byte order")
    return hdr, ">"


def parse_header(raw: bytes) -> np.void:
    """Decode the fixed 348-byte header in whichever byte order makes dim[0] sane."""
    return _parse(raw)[0]


def _quaternion_affine(hdr) -> np.ndarray:
    b, c, d = (float(hdr[k]) for k in ("quatern_b", "quatern_c", "quatern_d"))
    a = np.sqrt(max(0.0, 1.0 - (b * b + c * c + d * d)))
    rot = np.array(
        [
            [a * a + b * b - c * c - d * d, 2 * (b * c - a * d), 2 * (b * d + a * c)],
            [2 * (b * c + a * d), a * a + c * c - b * b - d * d, 2 * (c * d - a * b)],
            [2 * (b * d - a * c), 2 * (c * d + a * b), a * a + d * d - b * b - c * c],
        ]
    )
    pix = np.array(hdr["pixdim"][1:4], dtype=np.float64)
    qfac = -1.0 if hdr["pixdim"][0] < 0 else 1.0
    pix[2] *= qfac
    aff = np.eye(4)
    aff[:3, :3] = rot * pix
    aff[:3, 3] = [hdr["qoffset_x"], hdr["qoffset_y"], hdr["qoffset_z"]]
    return aff


def header_affine(hdr) -> np.ndarray:
    if hdr["sform_code"] > 0:
        aff = np.eye(4)
        aff[0] = hdr["srow_x"]
        aff[1] = hdr["srow_y"]
        aff[2] = hdr["srow_z"]
        return aff
    if hdr["qform_code"] > 0:
        return _quaternion_affine(hdr)
    return np.diag([*np.abs(np.asarray(hdr["pixdim"][1:4], dtype=np.float64)), 1.0])


def _header_dims(hdr) -> tuple:
    ndim = int(hdr["dim"][0])
    dims = [int(d) for d in hdr["dim"][1 : ndim + 1]]
    if ndim < 3:
        dims += [1] * (3 - ndim)
    if any(d < 1 for d in dims) or any(d != 1 for d in dims[3:]):
        raise UnsupportedDimensions(f"only 3D volumes are supported, got dim {dims}")
    return tuple(dims[:3])


def decode_nifti(raw: bytes, payload: Optional[bytes] = None) -> Volume:
    """Build a Volume from in-memory NIfTI-1 bytes.

    ``payload`` supplies the image data for the two-file (``ni1``) variant.
    """
    hdr, order = _parse(raw)
    code = int(hdr["datatype"])
    if code not in DATATYPES:
        raise UnsupportedDatatype(f"NIfTI datatype code {code} is not supported")
    dtype = DATATYPES[code].newbyteorder(order)
    dims = _header_dims(hdr)
    count = int(np.prod(dims))

    if hdr["magic"] == b"n+1":
        offset = int(hdr["vox_offset"])
        payload = raw[offset:]
    elif payload is None:
        raise MissingFile("ni1 header without companion .img payload")
    nbytes = count * dtype.itemsize
    if len(payload) < nbytes:
        raise TruncatedData(f"payload has {len(payload)} bytes, header implies {nbytes}")

    flat = np.frombuffer(payload[:nbytes], dtype=dtype).astype(np.float64)
    slope, inter = float(hdr["scl_slope"]), float(hdr["scl_inter"])
    if np.isfinite(slope) and slope != 0:
        inter = inter if np.isfinite(inter) else 0.0
        if slope != 1.0 or inter != 0.0:
            flat = flat * slope + inter
    if not np.all(np.isfinite(flat)):
        raise NonFiniteData("volume contains NaN or Inf")

    data = flat.reshape(dims, order="F")
    spacing = tuple(float(abs(p)) if p != 0 else 1.0 for p in hdr["pixdim"][1:4])
    return Volume(data, spacing, header_affine(hdr))


def read_volume(path: PathLike) -> Volume:
    path = Path(path)
    raw = _read_bytes(path)
    payload = None
    if len(raw) >= HEADER_SIZE and raw[344:347] == b"ni1":
        img = path.with_name(path.name.replace(".hdr", ".img"))
        if not img.exists():
            raise MissingFile(f"{img} not found for ni1 header {path}")
        payload = _read_bytes(img)
    return decode_nifti(raw, payload)


def read_mask(path: PathLike) -> np.ndarray:
    """Load any label volume as a boolean mask (every nonzero label is set)."""
    return read_volume(path).data != 0


# ---------------------------------------------------------------------------
# writing


def encode_nifti(data: np.ndarray, spacing, affine: np.ndarray, dtype=np.float32) -> bytes:
    dtype = np.dtype(dtype)
    if dtype not in DATATYPE_CODES:
        raise UnsupportedDatatype(f"cannot write {dtype}")
    hdr = np.zeros((), dtype=HEADER_DTYPE.newbyteorder("<"))
    hdr["sizeof_hdr"] = HEADER_SIZE
    hdr["regular"] = b"r"
    hdr["dim"] = [3, *data.shape, 1, 1, 1, 1]
    hdr["datatype"] = DATATYPE_CODES[dtype]
    hdr["bitpix"] = dtype.itemsize * 8
    hdr["pixdim"] = [1.0, *spacing, 1.0, 1.0, 1.0, 1.0]
    hdr["vox_offset"] = VOX_OFFSET
    hdr["scl_slope"] = 1.0
    hdr["xyzt_units"] = _UNITS_MM_SEC
    hdr["sform_code"] = 2
    hdr["srow_x"] = affine[0]
    hdr["srow_y"] = affine[1]
    hdr["srow_z"] = affine[2]
    hdr["magic"] = b"n+1"
    payload = np.asarray(data, dtype=dtype.newbyteorder("<")).tobytes(order="F")
    return hdr.tobytes() + b"\x00" * (VOX_OFFSET - HEADER_SIZE) + payload


def _write_bytes(blob: bytes, path: Path, compress: Optional[bool]) -> None:
    if compress is None:
        compress = path.name.endswith(".gz")
    if compress:
        buf = io.BytesIO()
        # fixed mtime and empty name keep reruns byte-identical
        with gzip.GzipFile(filename="", mode="wb", fileobj=buf, mtime=0) as gz:
            gz.write(blob)
        blob = buf.getvalue()
    with open(path, "wb") as fh:
        fh.write(blob)


def write_volume(v: Volume, path: PathLike, compress: Optional[bool] = None) -> None:
    """Write ``v`` as float32 NIfTI-1 with an sform.

    ``compress`` defaults to whether the filename ends in ``.gz``.
    """
    _write_bytes(encode_nifti(v.data, v.spacing, v.affine, np.float32), Path(path), compress)


def write_mask(mask: np.ndarray, path: PathLike, like: Optional[Volume] = None,
               compress: Optional[bool] = None) -> None:
    spacing = like.spacing if like is not None else (1.0, 1.0, 1.0)
    affine = like.affine if like is not None else np.diag([*spacing, 1.0])
    blob = encode_nifti(np.asarray(mask, dtype=np.uint8), spacing, affine, np.uint8)
    _write_bytes(blob, Path(path), compress)


# ---------------------------------------------------------------------------
# case layout

T1_SUFFIX = "-t1n.nii.gz"
TUMOR_SUFFIX = "-mask-unhealthy.nii.gz"
HEALTHY_SUFFIX = "-mask-healthy.nii.gz"
VOIDED_SUFFIX = "-t1n-voided.nii.gz"
INFERENCE_SUFFIX = "-t1n-inference.nii.gz"


def case_paths(root: PathLike, case_id: str) -> dict:
    d = Path(root) / case_id
    return {
        "t1": d / f"{case_id}{T1_SUFFIX}",
        "tumor": d / f"{case_id}{TUMOR_SUFFIX}",
        "healthy": d / f"{case_id}{HEALTHY_SUFFIX}",
        "voided": d / f"{case_id}{VOIDED_SUFFIX}",
    }


def list_cases(root: PathLike) -> list:
    """Case ids under ``root``: subdirectories holding a ``<id>-t1n.nii.gz``."""
    root = Path(root)
    if not root.is_dir():
        return []
    return sorted(
        p.name for p in root.iterdir() if p.is_dir() and (p / f"{p.name}{T1_SUFFIX}").exists()
    )


def load_case(root: PathLike, case_id: str) -> CaseRecord:
    paths = case_paths(root, case_id)
    for key in ("t1", "tumor"):
        if not paths[key].exists():
            raise MissingFile(f"{paths[key]} not found")
    t1 = read_volume(paths["t1"])
    tumor = read_mask(paths["tumor"])
    healthy = read_mask(paths["healthy"]) if paths["healthy"].exists() else None
    voided = read_volume(paths["voided"]) if paths["voided"].exists() else None
    extra = []
    k = 2
    while (p := paths["healthy"].with_name(f"{case_id}-mask-healthy-{k}.nii.gz")).exists():
        extra.append(read_mask(p))
        k += 1
    return CaseRecord(case_id, t1, tumor, healthy, voided, extra)


def save_case(case: CaseRecord, root: PathLike) -> dict:
    """Write every present member of ``case`` into ``root/<case_id>/``."""
    paths = case_paths(root, case.case_id)
    paths["t1"].parent.mkdir(parents=True, exist_ok=True)
    write_volume(case.t1, paths["t1"])
    write_mask(case.tumor_mask, paths["tumor"], like=case.t1)
    if case.healthy_mask is not None:
        write_mask(case.healthy_mask, paths["healthy"], like=case.t1)
    for k, extra in enumerate(case.extra_healthy, start=2):
        write_mask(extra, paths["healthy"].with_name(f"{case.case_id}-mask-healthy-{k}.nii.gz"), like=case.t1)
    if case.voided_t1 is not None:
        write_volume(case.voided_t1, paths["voided"])
    return paths
