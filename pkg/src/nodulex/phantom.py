"""Synthetic CT studies with two separable nodule classes.

Each patient gets a RAWCT volume and an annotation XML. Benign-like nodules
are small smooth ellipsoids near -100 HU; malignant-like nodules are larger
ellipsoids near +40 HU with strong internal texture and conical spicules.
Non-nodule loci sit on short bright vessel-like tubes. Every reader outlines
every nodule after a random one-voxel in-plane dilation or erosion of the
ground truth, and emits a malignancy rating close to the class extreme.
"""
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np
from scipy import ndimage

from .consensus import Mask3D
from .ingest import AnnotationSet, CTVolume, NoduleReading, ReadingSession, Roi, serialize_annotations, write_volume
from .seeding import round_half_away, sub_seed

BACKGROUND_HU = -850.0
AIR_HU = -1000.0
BORDER_VOXELS = 4
PATCH_MARGIN_XY = 24  # half of the 47-pixel patch, plus one
SEPARATION_MM = 4.0

BENIGN = dict(radii=(3.0, 6.0), mean=-100.0, texture=10.0)
MALIGNANT = dict(radii=(6.0, 12.0), mean=40.0, texture=60.0, spicules=(4, 10),
                 spicule_radius=(1.0, 2.0), spicule_length=(3.0, 6.0))
VESSEL = dict(radius=(1.0, 1.8), half_length=8.0, mean=30.0, texture=10.0)


@dataclass
class PhantomConfig:
    n_patients: int = 10
    nodules_per_class: int = 1
    non_nodules_per_patient: int = 2
    small_nodules_per_patient: int = 1
    dims: tuple = (128, 128, 32)
    spacing: tuple = (0.7, 0.7, 2.5)
    noise_sigma: float = 30.0
    readers_per_nodule: int = 3
    seed: int = 0

    def __post_init__(self):
        self.dims = tuple(int(d) for d in self.dims)
        self.spacing = tuple(float(s) for s in self.spacing)
        if not 1 <= self.readers_per_nodule <= 4:
            raise ValueError("readers_per_nodule must be in 1..4")
        nx, ny, nz = self.dims
        if min(nx, ny) < 2 * PATCH_MARGIN_XY + 2 or nz < 9:
            raise ValueError(f"dims {self.dims} too small for lesions plus patch margin")


@dataclass
class Lesion:
    lesion_id: str
    kind: str  # "benign" | "malignant" | "vessel"
    center_mm: tuple
    extent_mm: float
    params: dict = field(default_factory=dict)
    mask: Mask3D | None = None


@dataclass
class PatientPhantom:
    patient_id: str
    volume: CTVolume
    annotations: AnnotationSet
    nodules: list  # Lesion, benign/malignant
    non_nodules: list  # Lesion, vessel


# ------------------------------------------------------------- geometry


def _random_unit(rng):
    v = rng.normal(size=3)
    return v / np.linalg.norm(v)


def _grid(center_mm, extent_mm, spacing, dims):
    """Voxel box covering a ball of ``extent_mm``; returns origin and mm offsets."""
    lo, hi = [], []
    for c, s, n in zip(center_mm, spacing, dims):
        lo.append(max(int(math.floor((c - extent_mm) / s)), 0))
        hi.append(min(int(math.ceil((c + extent_mm) / s)) + 1, n))
    axes = [np.arange(l, h) * s - c for l, h, s, c in zip(lo, hi, spacing, center_mm)]
    zz, yy, xx = np.meshgrid(axes[2], axes[1], axes[0], indexing="ij")
    return lo, hi, xx, yy, zz


def _ellipsoid(xx, yy, zz, radii):
    rx, ry, rz = radii
    return (xx / rx) ** 2 + (yy / ry) ** 2 + (zz / rz) ** 2 <= 1.0


def _spicule(xx, yy, zz, radii, direction, base_radius, length):
    rx, ry, rz = radii
    u = np.asarray(direction)
    surface = 1.0 / math.sqrt((u[0] / rx) ** 2 + (u[1] / ry) ** 2 + (u[2] / rz) ** 2)
    base = 0.8 * surface * u
    total = length + 0.2 * surface
    px, py, pz = xx - base[0], yy - base[1], zz - base[2]
    t = px * u[0] + py * u[1] + pz * u[2]
    radial2 = px**2 + py**2 + pz**2 - t**2
    r = base_radius * (1.0 - t / total)
    return (t >= 0) & (t <= total) & (radial2 <= np.square(np.maximum(r, 0.0)))


def _tube(xx, yy, zz, direction, radius, half_length):
    u = np.asarray(direction)
    t = xx * u[0] + yy * u[1] + zz * u[2]
    radial2 = xx**2 + yy**2 + zz**2 - t**2
    return (np.abs(t) <= half_length) & (radial2 <= radius**2)


def _texture(rng, shape, sigma):
    if sigma == 0 or 0 in shape:
        return np.zeros(shape)
    field_ = ndimage.gaussian_filter(rng.normal(size=shape), 1.0)
    sd = field_.std()
    return field_ * (sigma / sd) if sd > 0 else field_


# ------------------------------------------------------------- contours

_DIRS = ((1, 0), (1, 1), (0, 1), (-1, 1), (-1, 0), (-1, -1), (0, -1), (1, -1))  # clockwise, y down
_DIR_INDEX = {d: i for i, d in enumerate(_DIRS)}


def trace_boundary(component):
    """Moore-neighbour trace of one 8-connected component, as ``[(x, y), ...]``."""
    comp = np.pad(np.asarray(component, dtype=bool), 1)
    ys, xs = np.nonzero(comp)
    if len(ys) == 0:
        return []
    start = (int(xs[0]), int(ys[0]))  # raster-first pixel; its west neighbour is background
    contour = [start]
    current, back = start, 4
    first_state = None
    for _ in range(4 * comp.size + 8):
        nxt = None
        for k in range(1, 9):
            d = (back + k) % 8
            cand = (current[0] + _DIRS[d][0], current[1] + _DIRS[d][1])
            if comp[cand[1], cand[0]]:
                prev = (back + k - 1) % 8
                bpos = (current[0] + _DIRS[prev][0], current[1] + _DIRS[prev][1])
                nxt = cand
                back = _DIR_INDEX[(bpos[0] - cand[0], bpos[1] - cand[1])]
                break
        if nxt is None:
            break  # isolated pixel
        state = (current, nxt)
        if first_state is None:
            first_state = state
        elif state == first_state:
            contour.pop()
            break
        current = nxt
        contour.append(current)
    return [(x - 1, y - 1) for x, y in contour]


def mask_to_rois(mask3d):
    """One polygon ROI per 8-connected component per slice of a Mask3D."""
    rois = []
    ox, oy, oz = mask3d.origin
    eight = np.ones((3, 3), bool)
    for dz, sl in enumerate(mask3d.bits):
        if not sl.any():
            continue
        labels, n = ndimage.label(sl, structure=eight)
        for lab in range(1, n + 1):
            verts = tuple((float(x + ox), float(y + oy)) for x, y in trace_boundary(labels == lab))
            rois.append(Roi(oz + dz, verts))
    return tuple(rois)


def _perturb(mask3d, op):
    if op == "none":
        return mask3d
    cross = np.zeros((1, 3, 3), bool)
    cross[0, 1, :] = cross[0, :, 1] = True
    dense = np.pad(mask3d.bits, ((0, 0), (1, 1), (1, 1)))
    if op == "dilate":
        out = ndimage.binary_dilation(dense, structure=cross)
    else:
        out = ndimage.binary_erosion(dense, structure=cross)
        # keep slices the erosion would wipe out
        empty = ~out.any(axis=(1, 2))
        out[empty] = dense[empty]
    ox, oy, oz = mask3d.origin
    origin = (ox - 1, oy - 1, oz)
    nx, ny, nz = mask3d.dims
    xyz = Mask3D(mask3d.dims, (0, 0, 0), out).voxels() + np.asarray(origin)
    keep = np.all((xyz >= 0) & (xyz < np.array([nx, ny, nz])), axis=1)
    return Mask3D.from_voxels(mask3d.dims, xyz[keep])


# ------------------------------------------------------------- generation


def _place(rng, placed, extent, cfg):
    nx, ny, nz = cfg.dims
    sx, sy, sz = cfg.spacing
    mx = max(PATCH_MARGIN_XY, int(math.ceil(extent / sx)) + BORDER_VOXELS + 2)
    my = max(PATCH_MARGIN_XY, int(math.ceil(extent / sy)) + BORDER_VOXELS + 2)
    mz = min(max(3, int(math.ceil(extent / sz)) + 1), (nz - 1) // 2)
    if nx - 2 * mx < 1 or ny - 2 * my < 1:
        raise ValueError(f"lesion extent {extent:.1f} mm does not fit in dims {cfg.dims}")
    for _ in range(5000):
        v = (rng.integers(mx, nx - mx), rng.integers(my, ny - my), rng.integers(mz, nz - mz))
        c = (v[0] * sx, v[1] * sy, v[2] * sz)
        if all(math.dist(c, les.center_mm) > extent + les.extent_mm + SEPARATION_MM for les in placed):
            return c
    raise ValueError("could not place lesions without overlap; lower the per-patient lesion count")


def generate_patient(cfg, index):
    rng = np.random.default_rng(sub_seed(cfg.seed, f"phantom:{index}"))
    pid = f"P{index:04d}"
    nx, ny, nz = cfg.dims
    spacing = cfg.spacing
    vol = np.full((nz, ny, nx), BACKGROUND_HU)
    vol[:, :BORDER_VOXELS, :] = AIR_HU
    vol[:, -BORDER_VOXELS:, :] = AIR_HU
    vol[:, :, :BORDER_VOXELS] = AIR_HU
    vol[:, :, -BORDER_VOXELS:] = AIR_HU

    specs = []
    for j in range(cfg.nodules_per_class):
        specs.append(("malignant", j))
    for j in range(cfg.nodules_per_class):
        specs.append(("benign", j))
    for j in range(cfg.non_nodules_per_patient):
        specs.append(("vessel", j))

    placed = []
    for kind, j in specs:
        if kind == "benign":
            radii = tuple(rng.uniform(*BENIGN["radii"], size=3))
            params = dict(radii=radii)
            extent = max(radii)
        elif kind == "malignant":
            radii = tuple(rng.uniform(*MALIGNANT["radii"], size=3))
            n_sp = int(rng.integers(MALIGNANT["spicules"][0], MALIGNANT["spicules"][1] + 1))
            spicules = [
                (tuple(_random_unit(rng)), float(rng.uniform(*MALIGNANT["spicule_radius"])),
                 float(rng.uniform(*MALIGNANT["spicule_length"])))
                for _ in range(n_sp)
            ]
            params = dict(radii=radii, spicules=spicules)
            extent = max(radii) + MALIGNANT["spicule_length"][1]
        else:
            radius = float(rng.uniform(*VESSEL["radius"]))
            params = dict(direction=tuple(_random_unit(rng)), radius=radius)
            extent = VESSEL["half_length"] + radius
        center = _place(rng, placed, extent, cfg)
        placed.append(Lesion(f"{pid}_{kind}{j}", kind, center, extent, params))

    for les in placed:
        lo, hi, xx, yy, zz = _grid(les.center_mm, les.extent_mm, spacing, cfg.dims)
        p = les.params
        if les.kind == "vessel":
            inside = _tube(xx, yy, zz, p["direction"], p["radius"], VESSEL["half_length"])
            style = VESSEL
        else:
            inside = _ellipsoid(xx, yy, zz, p["radii"])
            for direction, r0, length in p.get("spicules", []):
                inside |= _spicule(xx, yy, zz, p["radii"], direction, r0, length)
            style = BENIGN if les.kind == "benign" else MALIGNANT
        values = style["mean"] + _texture(rng, inside.shape, style["texture"])
        block = vol[lo[2] : hi[2], lo[1] : hi[1], lo[0] : hi[0]]
        block[inside] = values[inside]
        les.mask = Mask3D(cfg.dims, tuple(lo), inside).trimmed()

    vol += rng.normal(0.0, cfg.noise_sigma, size=vol.shape)
    vol = np.clip(np.rint(vol), -1024, 3071).astype(np.int16)
    volume = CTVolume(vol, spacing, pid)

    nodules = [les for les in placed if les.kind != "vessel"]
    vessels = [les for les in placed if les.kind == "vessel"]
    sessions = []
    n_readers = cfg.readers_per_nodule
    reader_nodules = [[] for _ in range(n_readers)]
    for j, les in enumerate(nodules):
        for r in range(n_readers):
            op = ("none", "dilate", "erode")[int(rng.integers(0, 3))]
            if les.kind == "benign":
                rating = 2 if rng.random() < 0.2 else 1
            else:
                rating = 4 if rng.random() < 0.3 else 5
            rois = mask_to_rois(_perturb(les.mask, op))
            reader_nodules[r].append(NoduleReading(f"r{r}_{les.lesion_id}", rating, rois))
    reader_loci = [[] for _ in range(n_readers)]
    for j, les in enumerate(vessels):
        pos = tuple(float(round_half_away(c / s)) for c, s in zip(les.center_mm, spacing))
        reader_loci[j % n_readers].append(pos)
    small = []
    for _ in range(cfg.small_nodules_per_patient):
        small.append((float(rng.integers(BORDER_VOXELS, nx - BORDER_VOXELS)),
                      float(rng.integers(BORDER_VOXELS, ny - BORDER_VOXELS)),
                      float(rng.integers(0, nz))))
    for r in range(n_readers):
        sessions.append(ReadingSession(tuple(reader_nodules[r]), tuple(reader_loci[r]),
                                       tuple(small) if r == 0 else ()))
    annotations = AnnotationSet(pid, tuple(sessions))
    return PatientPhantom(pid, volume, annotations, nodules, vessels)


def iter_patients(cfg):
    for i in range(cfg.n_patients):
        yield generate_patient(cfg, i)


def generate_phantom(cfg, out_dir):
    """Write one RAWCT + XML pair per patient and a ``manifest.json``."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    patients = []
    for pat in iter_patients(cfg):
        vpath = out / f"{pat.patient_id}.rawct"
        xpath = out / f"{pat.patient_id}.xml"
        write_volume(pat.volume, vpath)
        xpath.write_bytes(serialize_annotations(pat.annotations))
        patients.append({
            "patient_id": pat.patient_id,
            "volume": vpath.name,
            "annotations": xpath.name,
            "nodules": [
                {
                    "lesion_id": les.lesion_id,
                    "class": les.kind,
                    "label": int(les.kind == "malignant"),
                    "true_centroid": [float(c) for c in les.mask.center_of_mass()],
                    "voxel_count": les.mask.voxel_count,
                    "mean_hu": float(pat.volume.voxels[tuple(les.mask.voxels()[:, ::-1].T)].mean()),
                }
                for les in pat.nodules
            ],
            "non_nodules": [
                {"lesion_id": les.lesion_id, "position": [float(round_half_away(c / s)) for c, s in zip(les.center_mm, cfg.spacing)]}
                for les in pat.non_nodules
            ],
        })
    manifest = {"config": asdict(cfg), "patients": patients}
    mpath = out / "manifest.json"
    mpath.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    files = [mpath] + [out / p[k] for p in patients for k in ("volume", "annotations")]
    return manifest, files
