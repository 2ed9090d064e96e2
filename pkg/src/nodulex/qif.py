"""Quantitative image features (50) from a CT volume and a nodule mask.

Two-dimensional features use the mask's largest-area axial slice (lowest
slice index on ties). Coordinates are converted to millimetres with the
volume spacing; pixel/voxel second moments include the ``s**2 / 12`` term of
a uniformly filled cell so single-row masks still have finite axis ratios.
"""
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import ndimage
from scipy.spatial import ConvexHull

from .consensus import Mask3D
from .errors import EmptyMask, LengthMismatch, SeedOutOfBounds
from .seeding import round_half_away

SEG_THRESHOLD_HU = -450.0
SEG_RADIUS_MM = 15.0
HU_WINDOW = (-1000.0, 400.0)
HIST_BINS = 64
GLCM_LEVELS = 32
GLCM_OFFSETS = ((0, 1), (-1, 1), (-1, 0), (-1, -1))  # (dy, dx): 0, 45, 90, 135 degrees
CROP_MARGIN = 3


@dataclass(frozen=True)
class FeatureSpec:
    code: str
    name: str
    unit: str
    is_size_measure: bool
    scale_power: int  # exponent k in f(c * spacing) = c**k * f(spacing)


_R = [
    ("f01", "area", "mm2", True, 2),
    ("f02", "perimeter", "mm", True, 1),
    ("f03", "equivalent_circular_diameter", "mm", True, 1),
    ("f04", "sqrt_area", "mm", True, 1),
    ("f05", "circularity", "1", False, 0),
    ("f06", "eccentricity", "1", False, 0),
    ("f07", "solidity", "1", False, 0),
    ("f08", "extent", "1", False, 0),
    ("f09", "major_axis", "mm", True, 1),
    ("f10", "minor_axis", "mm", True, 1),
    ("f11", "aspect_ratio", "1", False, 0),
    ("f12", "volume", "mm3", True, 3),
    ("f13", "surface_area", "mm2", True, 2),
    ("f14", "equivalent_spherical_diameter", "mm", True, 1),
    ("f15", "sphericity", "1", False, 0),
    ("f16", "bbox_compactness", "1", False, 0),
    ("f17", "elongation", "1", False, 0),
    ("f18", "flatness", "1", False, 0),
    ("f19", "bbox_max_dimension", "mm", True, 1),
    ("f20", "surface_to_volume", "1/mm", True, -1),
    ("f21", "slice_span", "slices", True, 0),
    ("f22", "hu_mean", "HU", False, 0),
    ("f23", "hu_median", "HU", False, 0),
    ("f24", "hu_std", "HU", False, 0),
    ("f25", "hu_min", "HU", False, 0),
    ("f26", "hu_max", "HU", False, 0),
    ("f27", "hu_range", "HU", False, 0),
    ("f28", "hu_skewness", "1", False, 0),
    ("f29", "hu_excess_kurtosis", "1", False, 0),
    ("f30", "window_mean_square", "1", False, 0),
    ("f31", "histogram_entropy", "bits", False, 0),
    ("f32", "hu_p10", "HU", False, 0),
    ("f33", "hu_p25", "HU", False, 0),
    ("f34", "hu_p75", "HU", False, 0),
    ("f35", "hu_p90", "HU", False, 0),
    ("f36", "hu_iqr", "HU", False, 0),
    ("f37", "fraction_above_minus50", "1", False, 0),
    ("f38", "fraction_below_minus600", "1", False, 0),
    ("f39", "boundary_gradient_mean", "HU/mm", False, -1),
    ("f40", "boundary_gradient_std", "HU/mm", False, -1),
    ("f41", "rim_mean", "HU", False, 0),
    ("f42", "rim_contrast", "HU", False, 0),
    ("f43", "glcm_contrast", "1", False, 0),
    ("f44", "glcm_correlation", "1", False, 0),
    ("f45", "glcm_energy", "1", False, 0),
    ("f46", "glcm_homogeneity", "1", False, 0),
    ("f47", "glcm_entropy", "bits", False, 0),
    ("f48", "local_mean_abs_deviation", "HU", False, 0),
    ("f49", "slice_area_cv", "1", False, 0),
    ("f50", "radial_hu_slope", "HU", False, 0),
]
FEATURE_REGISTRY = tuple(FeatureSpec(*r) for r in _R)
FEATURE_CODES = tuple(f.code for f in FEATURE_REGISTRY)
FEATURE_NAMES = tuple(f.name for f in FEATURE_REGISTRY)
SIZE_FLAGS = np.array([f.is_size_measure for f in FEATURE_REGISTRY])
N_FEATURES = len(FEATURE_REGISTRY)
N_NO_SIZE = int((~SIZE_FLAGS).sum())
SQRT_AREA_INDEX = FEATURE_CODES.index("f04")


@dataclass(frozen=True, eq=False)
class FeatureVector:
    values: np.ndarray

    def __post_init__(self):
        v = np.asarray(self.values, dtype=np.float64)
        if v.shape != (N_FEATURES,):
            raise LengthMismatch(f"feature vector must have {N_FEATURES} values, got {v.shape}")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def is_size_measure(self):
        return SIZE_FLAGS

    def __getitem__(self, key):
        if isinstance(key, str):
            key = FEATURE_CODES.index(key) if key in FEATURE_CODES else FEATURE_NAMES.index(key)
        return float(self.values[key])

    def as_dict(self):
        return dict(zip(FEATURE_CODES, self.values.tolist()))


def strip_size_features(vec):
    """Drop the 12 size measures; works on one vector or an ``(n, 50)`` matrix."""
    v = vec.values if isinstance(vec, FeatureVector) else np.asarray(vec, dtype=np.float64)
    if v.shape[-1] != N_FEATURES:
        raise LengthMismatch(f"expected {N_FEATURES} features, got {v.shape[-1]}")
    return v[..., ~SIZE_FLAGS]


# ---------------------------------------------------------------- segmentation


def auto_segment(volume, seed):
    """Region grown from ``seed`` over HU >= -450 within a 15 mm ball (26-connected)."""
    nx, ny, nz = volume.dims
    s = np.asarray(seed, dtype=np.float64)
    if s.shape != (3,) or np.any(s < 0) or np.any(s > np.array([nx, ny, nz]) - 1):
        raise SeedOutOfBounds(f"seed {tuple(s)} outside volume dims {(nx, ny, nz)}")
    cx, cy, cz = (int(v) for v in round_half_away(s))
    if volume.voxels[cz, cy, cx] < SEG_THRESHOLD_HU:
        return Mask3D.from_voxels(volume.dims, [(cx, cy, cz)])
    sx, sy, sz = volume.spacing_mm
    r = [int(math.floor(SEG_RADIUS_MM / sp)) for sp in (sx, sy, sz)]
    lo = [max(c - ri, 0) for c, ri in zip((cx, cy, cz), r)]
    hi = [min(c + ri + 1, n) for c, ri, n in zip((cx, cy, cz), r, (nx, ny, nz))]
    sub = volume.voxels[lo[2] : hi[2], lo[1] : hi[1], lo[0] : hi[0]]
    zz, yy, xx = np.meshgrid(
        (np.arange(lo[2], hi[2]) - cz) * sz,
        (np.arange(lo[1], hi[1]) - cy) * sy,
        (np.arange(lo[0], hi[0]) - cx) * sx,
        indexing="ij",
    )
    ball = xx**2 + yy**2 + zz**2 <= SEG_RADIUS_MM**2
    cand = (sub >= SEG_THRESHOLD_HU) & ball
    labels, _ = ndimage.label(cand, structure=np.ones((3, 3, 3), bool))
    region = labels == labels[cz - lo[2], cy - lo[1], cx - lo[0]]
    return Mask3D(volume.dims, tuple(lo), region).trimmed()


# -------------------------------------------------------------------- helpers


def _exposed_faces(m, axis):
    pad = [(0, 0)] * m.ndim
    pad[axis] = (1, 1)
    return int(np.count_nonzero(np.diff(np.pad(m, pad).astype(np.int8), axis=axis)))


def _moment_eigs(coords_mm, cell_mm):
    c = coords_mm - coords_mm.mean(axis=0)
    cov = c.T @ c / len(c) + np.diag(np.square(cell_mm) / 12.0)
    return np.sort(np.linalg.eigvalsh(cov))[::-1]


def _convex_area(ys, xs, sx, sy):
    corners = np.concatenate([
        np.stack([(xs + dx) * sx, (ys + dy) * sy], axis=1)
        for dx in (-0.5, 0.5) for dy in (-0.5, 0.5)
    ])
    return ConvexHull(np.unique(corners, axis=0)).volume


def _glcm(q, m):
    """Symmetric normalised co-occurrence matrices averaged over four directions."""
    h, w = q.shape
    mats = []
    for dy, dx in GLCM_OFFSETS:
        y0, y1 = max(0, -dy), min(h, h - dy)
        x0, x1 = max(0, -dx), min(w, w - dx)
        a_m = m[y0:y1, x0:x1] & m[y0 + dy : y1 + dy, x0 + dx : x1 + dx]
        if not a_m.any():
            continue
        a = q[y0:y1, x0:x1][a_m]
        b = q[y0 + dy : y1 + dy, x0 + dx : x1 + dx][a_m]
        P = np.zeros((GLCM_LEVELS, GLCM_LEVELS))
        np.add.at(P, (a, b), 1.0)
        P = P + P.T
        mats.append(P / P.sum())
    if not mats:
        # a single pixel co-occurs only with itself
        P = np.zeros((GLCM_LEVELS, GLCM_LEVELS))
        v = q[m][0]
        P[v, v] = 1.0
        mats.append(P)
    return mats


def _glcm_stats(P):
    i, j = np.indices(P.shape)
    contrast = float(np.sum((i - j) ** 2 * P))
    mu_i, mu_j = float(np.sum(i * P)), float(np.sum(j * P))
    var_i = float(np.sum((i - mu_i) ** 2 * P))
    var_j = float(np.sum((j - mu_j) ** 2 * P))
    if var_i <= 0 or var_j <= 0:
        corr = 0.0
    else:
        corr = float(np.sum((i - mu_i) * (j - mu_j) * P) / math.sqrt(var_i * var_j))
    energy = float(np.sum(P**2))
    homog = float(np.sum(P / (1.0 + (i - j) ** 2)))
    nz = P[P > 0]
    entropy = float(-np.sum(nz * np.log2(nz)))
    return contrast, corr, energy, homog, entropy


def _moments(v):
    mean = v.mean()
    d = v - mean
    m2 = float(np.mean(d**2))
    if m2 == 0:
        return float(mean), 0.0, 0.0, 0.0
    m3 = float(np.mean(d**3))
    m4 = float(np.mean(d**4))
    return float(mean), math.sqrt(m2), m3 / m2**1.5, m4 / m2**2 - 3.0


# ------------------------------------------------------------------- features


def compute_features(volume, mask):
    if mask.voxel_count == 0:
        raise EmptyMask("cannot compute features of an empty mask")
    if tuple(mask.dims) != tuple(volume.dims):
        raise LengthMismatch(f"mask dims {mask.dims} != volume dims {volume.dims}")
    sx, sy, sz = volume.spacing_mm
    nx, ny, nz = volume.dims
    lo = [max(o - CROP_MARGIN, 0) for o in mask.origin]
    hi = [min(o + e + CROP_MARGIN, n) for o, e, n in zip(mask.origin, mask.shape_xyz, (nx, ny, nz))]
    img = volume.voxels[lo[2] : hi[2], lo[1] : hi[1], lo[0] : hi[0]].astype(np.float64)
    m = mask.crop(lo, hi)
    vals = img[m]
    n = len(vals)
    f = {}

    # 2-D shape on the largest slice
    areas_px = m.sum(axis=(1, 2))
    k = int(np.argmax(areas_px))
    sl = m[k]
    ys, xs = np.nonzero(sl)
    area = len(ys) * sx * sy
    perim = _exposed_faces(sl, 1) * sy + _exposed_faces(sl, 0) * sx
    f["f01"] = area
    f["f02"] = perim
    f["f03"] = 2.0 * math.sqrt(area / math.pi)
    f["f04"] = math.sqrt(area)
    f["f05"] = 4.0 * math.pi * area / perim**2
    l1, l2 = _moment_eigs(np.stack([xs * sx, ys * sy], axis=1).astype(np.float64), np.array([sx, sy]))
    f["f06"] = math.sqrt(max(0.0, 1.0 - l2 / l1))
    f["f07"] = area / _convex_area(ys, xs, sx, sy)
    bw, bh = xs.max() - xs.min() + 1, ys.max() - ys.min() + 1
    f["f08"] = len(ys) / float(bw * bh)
    f["f09"] = 4.0 * math.sqrt(l1)
    f["f10"] = 4.0 * math.sqrt(l2)
    f["f11"] = f["f09"] / f["f10"]

    # 3-D shape
    zz, yy, xx = np.nonzero(m)
    vol = n * sx * sy * sz
    surf = (_exposed_faces(m, 2) * sy * sz + _exposed_faces(m, 1) * sx * sz
            + _exposed_faces(m, 0) * sx * sy)
    f["f12"] = vol
    f["f13"] = surf
    f["f14"] = (6.0 * vol / math.pi) ** (1.0 / 3.0)
    f["f15"] = math.pi ** (1.0 / 3.0) * (6.0 * vol) ** (2.0 / 3.0) / surf
    ext = np.array([np.ptp(xx) + 1, np.ptp(yy) + 1, np.ptp(zz) + 1]) * np.array([sx, sy, sz])
    f["f16"] = vol / float(np.prod(ext))
    coords = np.stack([xx * sx, yy * sy, zz * sz], axis=1).astype(np.float64)
    e1, e2, e3 = _moment_eigs(coords, np.array([sx, sy, sz]))
    f["f17"] = math.sqrt(e2 / e1)
    f["f18"] = math.sqrt(e3 / e1)
    f["f19"] = float(ext.max())
    f["f20"] = surf / vol
    f["f21"] = float(np.ptp(zz) + 1)

    # intensity
    mean, std, skew, kurt = _moments(vals)
    p10, p25, p50, p75, p90 = np.percentile(vals, [10, 25, 50, 75, 90])
    f["f22"] = mean
    f["f23"] = float(p50)
    f["f24"] = std
    f["f25"] = float(vals.min())
    f["f26"] = float(vals.max())
    f["f27"] = float(vals.max() - vals.min())
    f["f28"] = skew
    f["f29"] = kurt
    wlo, whi = HU_WINDOW
    win = np.clip((vals - wlo) / (whi - wlo), 0.0, 1.0)
    f["f30"] = float(np.mean(win**2))
    hist, _ = np.histogram(np.clip(vals, wlo, whi), bins=HIST_BINS, range=HU_WINDOW)
    p = hist[hist > 0] / n
    f["f31"] = float(-np.sum(p * np.log2(p)))
    f["f32"], f["f33"], f["f34"], f["f35"] = float(p10), float(p25), float(p75), float(p90)
    f["f36"] = float(p75 - p25)
    f["f37"] = float(np.mean(vals > -50.0))
    f["f38"] = float(np.mean(vals < -600.0))

    # margin
    six = ndimage.generate_binary_structure(3, 1)
    gz, gy, gx = _safe_gradient(img, (sz, sy, sx))
    gmag = np.sqrt(gx**2 + gy**2 + gz**2)
    boundary = m & ~ndimage.binary_erosion(m, structure=six, border_value=0)
    bvals = gmag[boundary]
    f["f39"] = float(bvals.mean())
    f["f40"] = float(bvals.std())
    rim = ndimage.binary_dilation(m, structure=six, iterations=2) & ~m
    f["f41"] = float(img[rim].mean()) if rim.any() else mean
    f["f42"] = mean - f["f41"]

    # GLCM on the largest slice
    q = np.clip(np.floor((img[k] - wlo) / (whi - wlo) * GLCM_LEVELS), 0, GLCM_LEVELS - 1).astype(np.int64)
    stats = np.mean([_glcm_stats(P) for P in _glcm(q, sl)], axis=0)
    f["f43"], f["f44"], f["f45"], f["f46"], f["f47"] = (float(s) for s in stats)

    # local texture
    local = ndimage.uniform_filter(img, size=(1, 3, 3), mode="nearest")
    f["f48"] = float(np.mean(np.abs(img - local)[m]))
    span = areas_px[zz.min() : zz.max() + 1].astype(np.float64)
    f["f49"] = float(span.std() / span.mean())
    r = np.linalg.norm(coords - coords.mean(axis=0), axis=1)
    if r.max() > 0:
        rn = r / r.max()
        var = float(np.mean((rn - rn.mean()) ** 2))
        f["f50"] = float(np.mean((rn - rn.mean()) * (vals - mean)) / var) if var > 0 else 0.0
    else:
        f["f50"] = 0.0

    return FeatureVector(np.array([f[c] for c in FEATURE_CODES]))


def _safe_gradient(img, spacing):
    out = []
    for axis, sp in enumerate(spacing):
        out.append(np.gradient(img, sp, axis=axis) if img.shape[axis] > 1 else np.zeros_like(img))
    return out


# ------------------------------------------------------------------------- io


def write_feature_csv(rows, path):
    """``rows`` are ``(item_id, patient_id, FeatureVector | array)`` tuples."""
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["item_id", "patient_id", *FEATURE_CODES])
        for item_id, patient_id, vec in rows:
            v = vec.values if isinstance(vec, FeatureVector) else np.asarray(vec)
            w.writerow([item_id, patient_id, *(repr(float(x)) for x in v)])
    write_registry(Path(path).with_suffix(".registry.txt"))
    return Path(path)


def read_feature_csv(path):
    """Return ``(item_ids, patient_ids, (n, 50) matrix)``."""
    ids, pids, rows = [], [], []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if tuple(header[2:]) != FEATURE_CODES:
            raise LengthMismatch(f"{path}: unexpected feature columns")
        for row in reader:
            ids.append(row[0])
            pids.append(row[1])
            rows.append([float(x) for x in row[2:]])
    return ids, pids, np.array(rows, dtype=np.float64).reshape(-1, N_FEATURES)


def write_registry(path):
    lines = ["code\tname\tunit\tis_size_measure"]
    lines += [f"{f.code}\t{f.name}\t{f.unit}\t{int(f.is_size_measure)}" for f in FEATURE_REGISTRY]
    Path(path).write_text("\n".join(lines) + "\n")
    return Path(path)
