"""Readers and writers for RAWCT volumes and annotation XML.

RAWCT layout::

    bytes 0-7   b"RAWCT\\0\\0\\0"
    bytes 8-11  header length H, uint32 little-endian
    H bytes     UTF-8 JSON: dims, spacing_mm, rescale_slope,
                rescale_intercept, patient_id (optional dtype="int16")
    payload     nx*ny*nz int16 little-endian stored values, x fastest

Voxel arrays are held as ``(nz, ny, nx)`` so that C order matches the on-disk
x-fastest order. Public coordinates are always ``(x, y, z)``.
"""
import json
import math
import struct
import warnings
import xml.etree.ElementTree as ET
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import (
    EmptyPolygon,
    MalformedHeader,
    PayloadSizeMismatch,
    RatingOutOfRange,
    UnsupportedDType,
    VertexOutOfBounds,
    XmlSyntaxError,
)
from .seeding import round_half_away

RAWCT_MAGIC = b"RAWCT\0\0\0"
MAX_SESSIONS = 4


@dataclass(frozen=True, eq=False)
class CTVolume:
    voxels: np.ndarray  # int16 HU, shape (nz, ny, nx)
    spacing_mm: tuple
    patient_id: str = ""

    def __post_init__(self):
        vox = np.asarray(self.voxels)
        if vox.ndim != 3:
            raise MalformedHeader("voxels must be 3-D")
        if vox.flags.writeable or vox.dtype != np.int16:
            vox = vox.astype(np.int16)  # private copy; the caller's array stays writable
        vox.setflags(write=False)
        object.__setattr__(self, "voxels", vox)
        spacing = tuple(float(s) for s in self.spacing_mm)
        if len(spacing) != 3 or not all(s > 0 and math.isfinite(s) for s in spacing):
            raise MalformedHeader(f"spacing must be three positive reals, got {self.spacing_mm!r}")
        object.__setattr__(self, "spacing_mm", spacing)

    @property
    def dims(self):
        nz, ny, nx = self.voxels.shape
        return (nx, ny, nz)

    @property
    def hu(self):
        return self.voxels

    def __eq__(self, other):
        if not isinstance(other, CTVolume):
            return NotImplemented
        return (
            self.patient_id == other.patient_id
            and self.spacing_mm == other.spacing_mm
            and np.array_equal(self.voxels, other.voxels)
        )

    __hash__ = None


def _header_field(header, key):
    try:
        return header[key]
    except KeyError:
        raise MalformedHeader(f"missing header field {key!r}") from None


def parse_volume_bytes(data):
    data = bytes(data)
    if len(data) < 12 or data[:8] != RAWCT_MAGIC:
        raise MalformedHeader("not a RAWCT file (bad magic)")
    (hlen,) = struct.unpack_from("<I", data, 8)
    if 12 + hlen > len(data):
        raise MalformedHeader("header length exceeds file size")
    try:
        header = json.loads(data[12 : 12 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise MalformedHeader(f"header is not valid JSON: {exc}") from None
    if not isinstance(header, dict):
        raise MalformedHeader("header must be a JSON object")

    dtype = header.get("dtype", "int16")
    if dtype not in ("int16", "<i2"):
        raise UnsupportedDType(f"unsupported stored dtype {dtype!r}")
    dims = _header_field(header, "dims")
    spacing = _header_field(header, "spacing_mm")
    slope = _header_field(header, "rescale_slope")
    intercept = _header_field(header, "rescale_intercept")
    patient_id = str(_header_field(header, "patient_id"))
    try:
        nx, ny, nz = (int(d) for d in dims)
        slope = float(slope)
        intercept = float(intercept)
    except (TypeError, ValueError):
        raise MalformedHeader("dims/rescale fields have the wrong type") from None
    if min(nx, ny, nz) < 1:
        raise MalformedHeader(f"dims must be positive, got {dims!r}")
    if not isinstance(spacing, list) or len(spacing) != 3:
        raise MalformedHeader("spacing_mm must be a list of three numbers")

    payload = data[12 + hlen :]
    expected = 2 * nx * ny * nz
    if len(payload) != expected:
        raise PayloadSizeMismatch(f"payload is {len(payload)} bytes, expected {expected}")
    stored = np.frombuffer(payload, dtype="<i2").reshape(nz, ny, nx)
    if slope == 1.0 and intercept == round(intercept):
        hu = stored.astype(np.int64) + int(intercept)
    else:
        hu = round_half_away(stored * slope + intercept)
    if hu.size and (hu.min() < -32768 or hu.max() > 32767):
        raise MalformedHeader("rescaled values fall outside the int16 HU range")
    try:
        return CTVolume(hu.astype(np.int16), tuple(spacing), patient_id)
    except MalformedHeader:
        raise
    except (TypeError, ValueError) as exc:
        raise MalformedHeader(str(exc)) from None


def parse_volume(path):
    return parse_volume_bytes(Path(path).read_bytes())


def volume_to_bytes(volume, rescale_slope=1, rescale_intercept=-1024):
    stored = (volume.voxels.astype(np.int64) - rescale_intercept) / rescale_slope
    stored = np.rint(stored).astype(np.int64)
    if stored.min() < -32768 or stored.max() > 32767:
        raise ValueError("volume not representable with the given rescale")
    nx, ny, nz = volume.dims
    header = {
        "dims": [nx, ny, nz],
        "spacing_mm": list(volume.spacing_mm),
        "rescale_slope": rescale_slope,
        "rescale_intercept": rescale_intercept,
        "patient_id": volume.patient_id,
    }
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return RAWCT_MAGIC + struct.pack("<I", len(hbytes)) + hbytes + stored.astype("<i2").tobytes()


def write_volume(volume, path, rescale_slope=1, rescale_intercept=-1024):
    data = volume_to_bytes(volume, rescale_slope, rescale_intercept)
    Path(path).write_bytes(data)
    return len(data)


# ---------------------------------------------------------------- annotations


@dataclass(frozen=True)
class Roi:
    slice_index: int
    vertices: tuple  # ((x, y), ...)


@dataclass(frozen=True)
class NoduleReading:
    nodule_id: str
    malignancy: int
    rois: tuple


@dataclass(frozen=True)
class ReadingSession:
    nodules: tuple = ()
    non_nodules: tuple = ()  # ((x, y, z), ...)
    small_nodules: tuple = ()


@dataclass(frozen=True)
class AnnotationSet:
    patient_id: str
    sessions: tuple = field(default_factory=tuple)

    @property
    def nodule_readings(self):
        return [(i, r) for i, s in enumerate(self.sessions) for r in s.nodules]

    @property
    def non_nodule_loci(self):
        return [p for s in self.sessions for p in s.non_nodules]


def _local(tag):
    return tag.rsplit("}", 1)[-1] if isinstance(tag, str) else ""


def _num(elem, name):
    raw = elem.get(name)
    if raw is None:
        raise XmlSyntaxError(f"<{_local(elem.tag)}> is missing attribute {name!r}")
    try:
        value = float(raw)
    except ValueError:
        raise XmlSyntaxError(f"attribute {name}={raw!r} is not numeric") from None
    if not math.isfinite(value):
        raise XmlSyntaxError(f"attribute {name}={raw!r} is not finite")
    return value


def _locus(elem):
    return (_num(elem, "x"), _num(elem, "y"), _num(elem, "z"))


def _check_point(point, dims):
    if dims is None:
        return
    for value, n in zip(point, dims):
        if not 0 <= value <= n - 1:
            raise VertexOutOfBounds(f"coordinate {point!r} outside volume dims {tuple(dims)!r}")


def _parse_nodule(elem, dims):
    nodule_id = elem.get("id", "")
    rating = None
    rois = []
    for child in elem:
        tag = _local(child.tag)
        if tag == "malignancy":
            text = (child.text or "").strip()
            try:
                rating = int(text)
            except ValueError:
                raise XmlSyntaxError(f"malignancy {text!r} is not an integer") from None
            if rating not in (1, 2, 3, 4, 5):
                raise RatingOutOfRange(f"malignancy {rating} outside 1..5")
        elif tag == "roi":
            z = _num(child, "sliceIndex")
            if z != int(z):
                raise XmlSyntaxError(f"sliceIndex {z!r} is not an integer")
            verts = tuple((_num(e, "x"), _num(e, "y")) for e in child if _local(e.tag) == "edge")
            if not verts:
                raise EmptyPolygon(f"nodule {nodule_id!r}: roi on slice {int(z)} has no vertices")
            for x, y in verts:
                _check_point((x, y, z), dims)
            rois.append(Roi(int(z), verts))
    if rating is None:
        raise XmlSyntaxError(f"nodule {nodule_id!r} has no malignancy element")
    return NoduleReading(nodule_id, rating, tuple(rois))


def parse_annotations(xml, dims=None):
    """Parse the annotation XML subset into an :class:`AnnotationSet`.

    ``dims`` is an optional ``(nx, ny, nz)`` bound for coordinates. Elements
    and attributes outside the subset are ignored.
    """
    if isinstance(xml, str):
        xml = xml.encode("utf-8")
    try:
        root = ET.fromstring(bytes(xml))
    except ET.ParseError as exc:
        raise XmlSyntaxError(str(exc)) from None
    if _local(root.tag) != "annotations":
        raise XmlSyntaxError(f"root element is <{_local(root.tag)}>, expected <annotations>")

    sessions = []
    for sess in root:
        if _local(sess.tag) != "readingSession":
            continue
        nodules, non_nodules, small = [], [], []
        for item in sess:
            tag = _local(item.tag)
            if tag == "nodule":
                nodules.append(_parse_nodule(item, dims))
            elif tag == "nonNodule":
                p = _locus(item)
                _check_point(p, dims)
                non_nodules.append(p)
            elif tag == "smallNodule":
                p = _locus(item)
                _check_point(p, dims)
                small.append(p)
        sessions.append(ReadingSession(tuple(nodules), tuple(non_nodules), tuple(small)))
    if len(sessions) > MAX_SESSIONS:
        warnings.warn(f"{len(sessions)} reading sessions; at most {MAX_SESSIONS} expected", stacklevel=2)
    return AnnotationSet(root.get("patient_id", ""), tuple(sessions))


def _fmt(v):
    v = float(v)
    return str(int(v)) if v.is_integer() and abs(v) < 2**53 else repr(v)


def serialize_annotations(aset):
    root = ET.Element("annotations", patient_id=aset.patient_id)
    for sess in aset.sessions:
        s = ET.SubElement(root, "readingSession")
        for nod in sess.nodules:
            n = ET.SubElement(s, "nodule", id=nod.nodule_id)
            ET.SubElement(n, "malignancy").text = str(nod.malignancy)
            for roi in nod.rois:
                r = ET.SubElement(n, "roi", sliceIndex=str(roi.slice_index))
                for x, y in roi.vertices:
                    ET.SubElement(r, "edge", x=_fmt(x), y=_fmt(y))
        for tag, points in (("smallNodule", sess.small_nodules), ("nonNodule", sess.non_nodules)):
            for x, y, z in points:
                ET.SubElement(s, tag, x=_fmt(x), y=_fmt(y), z=_fmt(z))
    ET.indent(root)
    return ET.tostring(root, encoding="utf-8", xml_declaration=True) + b"\n"
