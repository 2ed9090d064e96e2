"""Fixed-shape CT patches and the NDX1 container.

NDX1 layout::

    b"NDX1" | uint32 version (=1) | uint32 header length H | H bytes JSON
    | n_items * W * H * D float32, item-major, x fastest, then y, then slice

Patch arrays are held as ``(D, H, W)`` so C order is the on-disk order and a
batch ``(N, D, H, W)`` feeds the CNN directly (slices act as channels).
"""
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    BadMagic,
    CenterOutOfBounds,
    DegenerateRange,
    ShapeMismatch,
    TruncatedPayload,
    VersionUnsupported,
)
from .seeding import round_half_away

NDX1_MAGIC = b"NDX1"
NDX1_VERSION = 1
AIR_HU = -1000.0
HU_WINDOW = (-1000.0, 400.0)
NORMALIZATIONS = ("hu_window", "scan_minmax")


def extract_patch(volume, center, shape):
    """Raw HU block of ``shape = (W, H, D)`` centred on ``round(center)``.

    Voxels outside the volume read as air (-1000 HU). Returns ``(D, H, W)``.
    """
    w, h, d = (int(s) for s in shape)
    if w % 2 == 0 or h % 2 == 0 or d % 2 == 0 or min(w, h, d) < 1:
        raise ShapeMismatch(f"patch shape must be odd and positive, got {shape!r}")
    nx, ny, nz = volume.dims
    c = np.asarray(center, dtype=np.float64)
    if c.shape != (3,) or not np.all(np.isfinite(c)):
        raise CenterOutOfBounds(f"bad center {center!r}")
    if np.any(c < 0) or np.any(c > np.array([nx, ny, nz]) - 1):
        raise CenterOutOfBounds(f"center {tuple(c)} outside volume dims {(nx, ny, nz)}")
    cx, cy, cz = (int(v) for v in round_half_away(c))

    out = np.full((d, h, w), AIR_HU, dtype=np.float64)
    lo = np.array([cx - w // 2, cy - h // 2, cz - d // 2])
    hi = lo + np.array([w, h, d])
    src_lo = np.maximum(lo, 0)
    src_hi = np.minimum(hi, [nx, ny, nz])
    dst_lo = src_lo - lo
    dst_hi = dst_lo + (src_hi - src_lo)
    out[dst_lo[2] : dst_hi[2], dst_lo[1] : dst_hi[1], dst_lo[0] : dst_hi[0]] = volume.voxels[
        src_lo[2] : src_hi[2], src_lo[1] : src_hi[1], src_lo[0] : src_hi[0]
    ]
    return out


def normalize_hu(raw, mode="hu_window", scan_min=None, scan_max=None):
    raw = np.asarray(raw, dtype=np.float64)
    if mode == "hu_window":
        lo, hi = HU_WINDOW
    elif mode == "scan_minmax":
        if scan_min is None or scan_max is None or not scan_max > scan_min:
            raise DegenerateRange(f"scan range [{scan_min}, {scan_max}] is empty")
        lo, hi = float(scan_min), float(scan_max)
    else:
        raise ValueError(f"unknown normalization {mode!r}")
    return np.clip((raw - lo) / (hi - lo), 0.0, 1.0)


@dataclass(frozen=True, eq=False)
class Patch:
    values: np.ndarray  # (D, H, W) in [0, 1]
    item_id: str
    label: int
    scan_min_hu: float
    scan_max_hu: float

    def __post_init__(self):
        # stored as float32 so in-memory and on-disk patches are bit-identical
        values = np.ascontiguousarray(self.values, dtype=np.float32)
        if values.ndim != 3:
            raise ShapeMismatch(f"patch values must be (D, H, W), got {values.shape}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @property
    def shape(self):
        d, h, w = self.values.shape
        return (w, h, d)


def normalize_patch(raw, mode="hu_window", scan_min=None, scan_max=None, item_id="", label=0):
    values = normalize_hu(raw, mode, scan_min, scan_max)
    smin = float(scan_min) if scan_min is not None else float("nan")
    smax = float(scan_max) if scan_max is not None else float("nan")
    return Patch(values, item_id, int(label), smin, smax)


@dataclass(eq=False)
class PatchSet:
    patches: list = field(default_factory=list)
    design: str = ""
    normalization: str = "hu_window"
    shape: tuple | None = None  # (W, H, D); required when empty

    def __post_init__(self):
        ids = [p.item_id for p in self.patches]
        if len(set(ids)) != len(ids):
            raise ValueError("patch item_ids must be unique")
        shapes = {p.shape for p in self.patches}
        if len(shapes) > 1:
            raise ShapeMismatch(f"patches have mixed shapes {sorted(shapes)}")
        if shapes:
            (s,) = shapes
            if self.shape is not None and tuple(self.shape) != s:
                raise ShapeMismatch(f"declared shape {self.shape} != patch shape {s}")
            self.shape = s
        elif self.shape is not None:
            self.shape = tuple(int(v) for v in self.shape)

    def __len__(self):
        return len(self.patches)

    @property
    def ids(self):
        return [p.item_id for p in self.patches]

    @property
    def labels(self):
        return np.array([p.label for p in self.patches], dtype=np.int64)

    def to_array(self):
        """Stacked ``(N, D, H, W)`` float64 batch."""
        if not self.patches:
            w, h, d = self.shape or (0, 0, 0)
            return np.zeros((0, d, h, w))
        return np.stack([p.values for p in self.patches]).astype(np.float64)

    def subset(self, ids):
        by_id = {p.item_id: p for p in self.patches}
        return PatchSet([by_id[i] for i in ids], self.design, self.normalization, self.shape)

    def __eq__(self, other):
        if not isinstance(other, PatchSet):
            return NotImplemented
        if (self.design, self.normalization, self.shape, len(self)) != (
            other.design, other.normalization, other.shape, len(other)):
            return False
        for a, b in zip(self.patches, other.patches):
            if (a.item_id, a.label) != (b.item_id, b.label):
                return False
            if np.float64(a.scan_min_hu).tobytes() != np.float64(b.scan_min_hu).tobytes():
                return False
            if np.float64(a.scan_max_hu).tobytes() != np.float64(b.scan_max_hu).tobytes():
                return False
            if a.values.tobytes() != b.values.tobytes():
                return False
        return True

    __hash__ = None


def build_patchset(volume_for, items, shape, mode="hu_window", design=""):
    """Extract and normalise one patch per cohort item.

    ``volume_for`` maps a patient id to its :class:`CTVolume`.
    """
    patches = []
    for it in items:
        vol = volume_for(it.patient_id)
        smin, smax = float(vol.voxels.min()), float(vol.voxels.max())
        raw = extract_patch(vol, it.centroid, shape)
        patches.append(normalize_patch(raw, mode, smin, smax, it.item_id, it.label))
    return PatchSet(patches, design, mode, tuple(shape))


# ----------------------------------------------------------------- container


def container_bytes(ps):
    w, h, d = ps.shape or (0, 0, 0)
    header = {
        "n_items": len(ps),
        "shape": [w, h, d],
        "normalization": ps.normalization,
        "design": ps.design,
        "ids": ps.ids,
        "labels": [int(p.label) for p in ps.patches],
        "scan_min": [None if not np.isfinite(p.scan_min_hu) else float(p.scan_min_hu) for p in ps.patches],
        "scan_max": [None if not np.isfinite(p.scan_max_hu) else float(p.scan_max_hu) for p in ps.patches],
    }
    hbytes = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    payload = ps.to_array().astype("<f4").tobytes()
    return NDX1_MAGIC + struct.pack("<II", NDX1_VERSION, len(hbytes)) + hbytes + payload


def write_container(ps, path):
    data = container_bytes(ps)
    Path(path).write_bytes(data)
    return len(data)


def parse_container(data):
    data = bytes(data)
    if data[:4] != NDX1_MAGIC:
        raise BadMagic(f"expected NDX1 magic, got {data[:4]!r}")
    if len(data) < 12:
        raise TruncatedPayload("file ends inside the fixed header")
    version, hlen = struct.unpack_from("<II", data, 4)
    if version != NDX1_VERSION:
        raise VersionUnsupported(f"NDX1 version {version} not supported")
    if len(data) < 12 + hlen:
        raise TruncatedPayload("file ends inside the JSON header")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise TruncatedPayload(f"corrupt JSON header: {exc}") from None
    n = int(header["n_items"])
    w, h, d = (int(v) for v in header["shape"])
    need = n * w * h * d * 4
    payload = data[12 + hlen :]
    if len(payload) < need:
        raise TruncatedPayload(f"payload has {len(payload)} bytes, expected {need}")
    values = np.frombuffer(payload[:need], dtype="<f4").reshape(n, d, h, w)
    nan = float("nan")
    patches = [
        Patch(
            values[i],
            header["ids"][i],
            int(header["labels"][i]),
            nan if header["scan_min"][i] is None else float(header["scan_min"][i]),
            nan if header["scan_max"][i] is None else float(header["scan_max"][i]),
        )
        for i in range(n)
    ]
    return PatchSet(patches, header.get("design", ""), header.get("normalization", "hu_window"), (w, h, d))


def read_container(path):
    return parse_container(Path(path).read_bytes())
