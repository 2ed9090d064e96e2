"""Multi-reader consensus: masks, ratings, centroids and labelled cohorts."""
import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import EmptyClass, EmptyMask, EmptyPolygon
from .seeding import round_half_away

DESIGNS = ("S1vS45", "S12vS45", "S0vS1_5")
_DESIGN_ALIASES = {
    "s1vs45": "S1vS45",
    "s1_vs_s45": "S1vS45",
    "s12vs45": "S12vS45",
    "s12_vs_s45": "S12vS45",
    "s0vs1_5": "S0vS1_5",
    "s0_vs_s1_5": "S0vS1_5",
    "s0vss1_5": "S0vS1_5",
}
COHORT_COLUMNS = (
    "nodule_uid", "patient_id", "design", "label", "rating",
    "centroid_x", "centroid_y", "centroid_z",
)


def canonical_design(name):
    if name in DESIGNS:
        return name
    key = str(name).lower().replace("-", "_")
    try:
        return _DESIGN_ALIASES[key]
    except KeyError:
        raise ValueError(f"unknown design {name!r}; expected one of {DESIGNS}") from None


@dataclass(frozen=True, eq=False)
class Mask3D:
    """Sparse-ish voxel mask: a boolean block placed at ``origin`` in a volume.

    ``dims`` and ``origin`` are ``(x, y, z)``; ``bits`` is indexed ``[z, y, x]``.
    """

    dims: tuple
    origin: tuple
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits, dtype=bool)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "origin", tuple(int(o) for o in self.origin))

    @classmethod
    def from_dense(cls, dense):
        dense = np.asarray(dense, dtype=bool)
        nz, ny, nx = dense.shape
        if not dense.any():
            return cls((nx, ny, nz), (0, 0, 0), np.zeros((0, 0, 0), bool))
        zz, yy, xx = (np.flatnonzero(dense.any(axis=a)) for a in ((1, 2), (0, 2), (0, 1)))
        block = dense[zz[0] : zz[-1] + 1, yy[0] : yy[-1] + 1, xx[0] : xx[-1] + 1]
        return cls((nx, ny, nz), (xx[0], yy[0], zz[0]), block.copy()).trimmed()

    @classmethod
    def from_voxels(cls, dims, xyz):
        xyz = np.asarray(xyz, dtype=np.int64).reshape(-1, 3)
        if len(xyz) == 0:
            return cls(dims, (0, 0, 0), np.zeros((0, 0, 0), bool))
        lo = xyz.min(axis=0)
        hi = xyz.max(axis=0)
        dx, dy, dz = hi - lo + 1
        bits = np.zeros((dz, dy, dx), bool)
        rel = xyz - lo
        bits[rel[:, 2], rel[:, 1], rel[:, 0]] = True
        return cls(dims, tuple(lo), bits)

    def trimmed(self):
        if not self.bits.any():
            return Mask3D(self.dims, (0, 0, 0), np.zeros((0, 0, 0), bool))
        zz, yy, xx = (np.flatnonzero(self.bits.any(axis=a)) for a in ((1, 2), (0, 2), (0, 1)))
        ox, oy, oz = self.origin
        return Mask3D(
            self.dims,
            (ox + xx[0], oy + yy[0], oz + zz[0]),
            self.bits[zz[0] : zz[-1] + 1, yy[0] : yy[-1] + 1, xx[0] : xx[-1] + 1],
        )

    @property
    def voxel_count(self):
        return int(np.count_nonzero(self.bits))

    @property
    def shape_xyz(self):
        dz, dy, dx = self.bits.shape
        return (dx, dy, dz)

    def voxels(self):
        """Set voxels as an ``(n, 3)`` array of integer ``(x, y, z)``."""
        z, y, x = np.nonzero(self.bits)
        return np.stack([x, y, z], axis=1) + np.asarray(self.origin)

    def to_dense(self):
        nx, ny, nz = self.dims
        out = np.zeros((nz, ny, nx), bool)
        xyz = self.voxels()
        out[xyz[:, 2], xyz[:, 1], xyz[:, 0]] = True
        return out

    def crop(self, lo, hi):
        """Boolean block of this mask over the box ``[lo, hi)`` in (x, y, z)."""
        shape = tuple(h - l for l, h in zip(lo, hi))
        out = np.zeros(shape[::-1], bool)
        xyz = self.voxels() - np.asarray(lo)
        keep = np.all((xyz >= 0) & (xyz < np.asarray(shape)), axis=1)
        xyz = xyz[keep]
        out[xyz[:, 2], xyz[:, 1], xyz[:, 0]] = True
        return out

    def center_of_mass(self):
        if self.voxel_count == 0:
            raise EmptyMask("center of mass of an empty mask")
        return tuple(float(c) for c in self.voxels().mean(axis=0))

    def overlaps(self, other):
        lo = np.maximum(self.origin, other.origin)
        hi = np.minimum(np.add(self.origin, self.shape_xyz), np.add(other.origin, other.shape_xyz))
        if np.any(hi <= lo):
            return False
        a = self.crop(tuple(lo), tuple(hi))
        b = other.crop(tuple(lo), tuple(hi))
        return bool(np.any(a & b))

    def __eq__(self, other):
        if not isinstance(other, Mask3D):
            return NotImplemented
        a, b = self.trimmed(), other.trimmed()
        return a.dims == b.dims and a.origin == b.origin and np.array_equal(a.bits, b.bits)

    __hash__ = None


# ------------------------------------------------------------------ rasterize


def _edge_pixels(p0, p1):
    n = int(math.ceil(max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))))
    t = np.linspace(0.0, 1.0, n + 1)[:, None]
    pts = np.asarray(p0) + t * (np.asarray(p1) - np.asarray(p0))
    return round_half_away(pts)


def rasterize_roi(vertices, dims):
    """Fill a closed polygon on a pixel grid.

    Interior is decided by the even-odd rule at pixel centres; pixels the
    polygon's edges pass through are always set. ``dims`` is ``(nx, ny)``;
    the result is indexed ``[y, x]``.
    """
    pts = np.asarray(vertices, dtype=np.float64).reshape(-1, 2)
    if len(pts) == 0:
        raise EmptyPolygon("polygon has no vertices")
    nx, ny = int(dims[0]), int(dims[1])
    out = np.zeros((ny, nx), bool)

    nxt = np.roll(pts, -1, axis=0)
    y_lo = max(int(math.ceil(pts[:, 1].min())), 0)
    y_hi = min(int(math.floor(pts[:, 1].max())), ny - 1)
    sloped = pts[:, 1] != nxt[:, 1]
    a, b = pts[sloped], nxt[sloped]
    for y in range(y_lo, y_hi + 1):
        lo_y = np.minimum(a[:, 1], b[:, 1])
        hi_y = np.maximum(a[:, 1], b[:, 1])
        hit = (lo_y <= y) & (y < hi_y)
        if not hit.any():
            continue
        xs = a[hit, 0] + (y - a[hit, 1]) * (b[hit, 0] - a[hit, 0]) / (b[hit, 1] - a[hit, 1])
        xs.sort()
        for x0, x1 in zip(xs[0::2], xs[1::2]):
            c0 = max(int(math.ceil(x0)), 0)
            c1 = min(int(math.floor(x1)), nx - 1)
            if c1 >= c0:
                out[y, c0 : c1 + 1] = True

    edges = [_edge_pixels(p, q) for p, q in zip(pts, nxt)] if len(pts) > 1 else [round_half_away(pts)]
    edge = np.concatenate(edges)
    keep = (edge[:, 0] >= 0) & (edge[:, 0] < nx) & (edge[:, 1] >= 0) & (edge[:, 1] < ny)
    edge = edge[keep]
    out[edge[:, 1], edge[:, 0]] = True
    return out


def reading_mask(reading, dims):
    """3-D mask of one nodule reading; ROIs sharing a slice are unioned."""
    nx, ny, nz = dims
    voxels = []
    for roi in reading.rois:
        if not 0 <= roi.slice_index < nz:
            continue
        yy, xx = np.nonzero(rasterize_roi(roi.vertices, (nx, ny)))
        voxels.append(np.stack([xx, yy, np.full_like(xx, roi.slice_index)], axis=1))
    if not voxels:
        return Mask3D(dims, (0, 0, 0), np.zeros((0, 0, 0), bool))
    return Mask3D.from_voxels(dims, np.concatenate(voxels))


# ------------------------------------------------------------------ grouping


@dataclass(frozen=True)
class ReadingGroup:
    members: tuple  # ((session_index, nodule_id), ...)
    ratings: tuple
    masks: tuple


def _find(parent, i):
    while parent[i] != i:
        parent[i] = parent[parent[i]]
        i = parent[i]
    return i


def group_masks(masks):
    """Partition indices into overlap-connected components (union-find)."""
    n = len(masks)
    parent = list(range(n))
    for i in range(n):
        for j in range(i + 1, n):
            if masks[i].overlaps(masks[j]):
                ri, rj = _find(parent, i), _find(parent, j)
                if ri != rj:
                    parent[max(ri, rj)] = min(ri, rj)
    groups = {}
    for i in range(n):
        groups.setdefault(_find(parent, i), []).append(i)
    return [groups[k] for k in sorted(groups)]


def group_readings(aset, dims):
    readings = aset.nodule_readings
    masks = [reading_mask(r, dims) for _, r in readings]
    out = []
    for idx in group_masks(masks):
        out.append(
            ReadingGroup(
                members=tuple((readings[i][0], readings[i][1].nodule_id) for i in idx),
                ratings=tuple(readings[i][1].malignancy for i in idx),
                masks=tuple(masks[i] for i in idx),
            )
        )
    return out


def _member_masks(group):
    return group.masks if isinstance(group, ReadingGroup) else tuple(group)


def consensus_mask(group):
    """Voxels marked by at least half of the members (inclusive)."""
    masks = _member_masks(group)
    if not masks:
        raise EmptyMask("consensus of zero members")
    dims = masks[0].dims
    xyz = np.concatenate([m.voxels() for m in masks])
    if len(xyz) == 0:
        return Mask3D(dims, (0, 0, 0), np.zeros((0, 0, 0), bool))
    uniq, counts = np.unique(xyz, axis=0, return_counts=True)
    return Mask3D.from_voxels(dims, uniq[2 * counts >= len(masks)])


def consensus_rating(group):
    ratings = group.ratings if isinstance(group, ReadingGroup) else tuple(group)
    return int(round_half_away(sum(ratings) / len(ratings)))


def consensus_centroid(group):
    masks = _member_masks(group)
    for m in masks:
        if m.voxel_count == 0:
            raise EmptyMask("member mask is empty")
    coms = np.array([m.center_of_mass() for m in masks])
    return tuple(float(c) for c in coms.mean(axis=0))


@dataclass(frozen=True, eq=False)
class ConsensusNodule:
    nodule_uid: str
    patient_id: str
    member_readings: tuple
    consensus_mask: Mask3D
    rating: int
    centroid: tuple


@dataclass(frozen=True)
class NonNodule:
    locus_id: str
    patient_id: str
    position: tuple  # (x, y, z)


def build_consensus(aset, dims, patient_id=None):
    pid = patient_id if patient_id is not None else aset.patient_id
    nodules = []
    for k, group in enumerate(g for g in group_readings(aset, dims) if all(m.voxel_count for m in g.masks)):
        nodules.append(
            ConsensusNodule(
                nodule_uid=f"{pid}_n{k:02d}",
                patient_id=pid,
                member_readings=group.members,
                consensus_mask=consensus_mask(group),
                rating=consensus_rating(group),
                centroid=consensus_centroid(group),
            )
        )
    return nodules


def non_nodule_loci(aset, patient_id=None):
    pid = patient_id if patient_id is not None else aset.patient_id
    return [NonNodule(f"{pid}_x{k:02d}", pid, tuple(p)) for k, p in enumerate(aset.non_nodule_loci)]


# -------------------------------------------------------------------- cohorts


@dataclass(frozen=True)
class CohortItem:
    item_id: str
    patient_id: str
    label: int  # 1 positive, 0 negative
    source: str  # "nodule" | "non_nodule"
    rating: int | None
    centroid: tuple
    design: str = ""


def design_label(design, rating):
    """Label for a nodule rating under a design; ``None`` means excluded."""
    design = canonical_design(design)
    if design == "S1vS45":
        return {1: 0, 4: 1, 5: 1}.get(rating)
    if design == "S12vS45":
        return {1: 0, 2: 0, 4: 1, 5: 1}.get(rating)
    return 1


def balance_items(items, rng):
    pos = [i for i, it in enumerate(items) if it.label == 1]
    neg = [i for i, it in enumerate(items) if it.label == 0]
    n = min(len(pos), len(neg))
    keep = set()
    for cls in (pos, neg):
        keep.update(cls if len(cls) == n else rng.choice(cls, size=n, replace=False).tolist())
    return [it for i, it in enumerate(items) if i in keep]


def build_cohort(nodules, non_nodules, design, balance=False, seed=0):
    design = canonical_design(design)
    items = []
    for nod in nodules:
        label = design_label(design, nod.rating)
        if label is not None:
            items.append(CohortItem(nod.nodule_uid, nod.patient_id, label, "nodule", nod.rating, tuple(nod.centroid), design))
    if design == "S0vS1_5":
        for nn in non_nodules:
            items.append(CohortItem(nn.locus_id, nn.patient_id, 0, "non_nodule", None, tuple(nn.position), design))
    n_pos = sum(it.label for it in items)
    if n_pos == 0 or n_pos == len(items):
        raise EmptyClass(f"design {design} yields {n_pos} positive and {len(items) - n_pos} negative items")
    if balance:
        items = balance_items(items, np.random.default_rng(seed))
    return items


def write_cohort_csv(items, path, design=None):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(COHORT_COLUMNS)
        for it in items:
            label = "" if it.label is None else ("positive" if it.label == 1 else "negative")
            w.writerow([
                it.item_id, it.patient_id, design or it.design, label,
                "" if it.rating is None else it.rating,
                *(repr(float(c)) for c in it.centroid),
            ])
    return Path(path)


def read_cohort_csv(path):
    items = []
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            rating = int(row["rating"]) if row["rating"] else None
            label = {"positive": 1, "negative": 0}.get(row["label"])
            items.append(CohortItem(
                row["nodule_uid"], row["patient_id"], label,
                "nodule" if rating is not None else "non_nodule", rating,
                (float(row["centroid_x"]), float(row["centroid_y"]), float(row["centroid_z"])),
                row["design"],
            ))
    return items
