import json
import struct
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from nodulex.errors import (
    EmptyPolygon,
    MalformedHeader,
    PayloadSizeMismatch,
    RatingOutOfRange,
    UnsupportedDType,
    VertexOutOfBounds,
    XmlSyntaxError,
)
from nodulex.ingest import (
    AnnotationSet,
    CTVolume,
    NoduleReading,
    ReadingSession,
    Roi,
    parse_annotations,
    parse_volume,
    parse_volume_bytes,
    serialize_annotations,
    volume_to_bytes,
    write_volume,
)


def rawct(dims, payload, slope=1, intercept=0, **extra):
    header = {"dims": list(dims), "spacing_mm": [0.7, 0.7, 2.5], "rescale_slope": slope,
              "rescale_intercept": intercept, "patient_id": "P1", **extra}
    h = json.dumps(header).encode()
    return b"RAWCT\0\0\0" + struct.pack("<I", len(h)) + h + payload


def test_identity_rescale_single_voxel():
    vol = parse_volume_bytes(rawct([1, 1, 1], b"\x00\x00"))
    assert vol.dims == (1, 1, 1)
    assert vol.hu[0, 0, 0] == 0


def test_rescale_intercept_applied():
    vol = parse_volume_bytes(rawct([1, 1, 1], struct.pack("<h", 1024), 1, -1024))
    assert vol.hu[0, 0, 0] == 0


def test_fractional_slope_rounds_half_away():
    vol = parse_volume_bytes(rawct([2, 1, 1], struct.pack("<hh", 3, -3), 0.5, 0))
    assert vol.hu.ravel().tolist() == [2, -2]


def test_payload_one_byte_short():
    with pytest.raises(PayloadSizeMismatch):
        parse_volume_bytes(rawct([2, 2, 1], b"\x00" * 7))


def test_x_fastest_layout():
    vals = np.arange(24, dtype="<i2")
    vol = parse_volume_bytes(rawct([4, 3, 2], vals.tobytes()))
    assert vol.hu.shape == (2, 3, 4)
    # voxel (x=1, y=2, z=1) sits at linear index x + nx*(y + ny*z)
    assert vol.hu[1, 2, 1] == 1 + 4 * (2 + 3 * 1)


@pytest.mark.parametrize("mutate", [
    lambda d: d.pop("dims"),
    lambda d: d.pop("patient_id"),
    lambda d: d.update(dims="abc"),
    lambda d: d.update(spacing_mm=[1, 1]),
    lambda d: d.update(spacing_mm=[1, 0, 1]),
])
def test_malformed_header(mutate):
    header = {"dims": [1, 1, 1], "spacing_mm": [1, 1, 1], "rescale_slope": 1, "rescale_intercept": 0, "patient_id": "x"}
    mutate(header)
    h = json.dumps(header).encode()
    with pytest.raises(MalformedHeader):
        parse_volume_bytes(b"RAWCT\0\0\0" + struct.pack("<I", len(h)) + h + b"\0\0")


def test_bad_json_and_magic():
    with pytest.raises(MalformedHeader):
        parse_volume_bytes(b"RAWCT\0\0\0" + struct.pack("<I", 3) + b"{x}" + b"\0\0")
    with pytest.raises(MalformedHeader):
        parse_volume_bytes(b"NOTCT\0\0\0" + struct.pack("<I", 2) + b"{}")


def test_unsupported_dtype():
    with pytest.raises(UnsupportedDType):
        parse_volume_bytes(rawct([1, 1, 1], b"\0\0\0\0", dtype="float32"))


def test_volume_file_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    vol = CTVolume(rng.integers(-1024, 3000, size=(3, 4, 5)).astype(np.int16), (0.5, 0.6, 2.0), "P9")
    write_volume(vol, tmp_path / "v.rawct")
    assert parse_volume(tmp_path / "v.rawct") == vol
    assert parse_volume_bytes(volume_to_bytes(vol)).dims == (5, 4, 3)


def test_volume_is_read_only():
    vol = CTVolume(np.zeros((1, 1, 1), np.int16), (1, 1, 1))
    with pytest.raises(ValueError):
        vol.voxels[0, 0, 0] = 5


MINIMAL = b"""<annotations patient_id="P1"><readingSession>
  <nodule id="n1"><malignancy>5</malignancy>
    <roi sliceIndex="2"><edge x="1" y="1"/><edge x="4" y="1"/><edge x="2" y="3"/></roi>
  </nodule></readingSession></annotations>"""


def test_minimal_document():
    aset = parse_annotations(MINIMAL)
    readings = aset.nodule_readings
    assert len(readings) == 1
    assert readings[0][1].malignancy == 5
    assert readings[0][1].rois[0] == Roi(2, ((1.0, 1.0), (4.0, 1.0), (2.0, 3.0)))


def test_rating_out_of_range():
    with pytest.raises(RatingOutOfRange):
        parse_annotations(MINIMAL.replace(b">5<", b">7<"))


def test_two_sessions_non_nodules_only():
    xml = b"""<annotations patient_id="P"><readingSession><nonNodule x="1" y="2" z="0"/></readingSession>
      <readingSession><nonNodule x="3" y="4" z="1"/></readingSession></annotations>"""
    aset = parse_annotations(xml)
    assert len(aset.non_nodule_loci) == 2
    assert aset.nodule_readings == []


def test_empty_polygon():
    xml = b"""<annotations><readingSession><nodule id="a"><malignancy>2</malignancy>
      <roi sliceIndex="0"></roi></nodule></readingSession></annotations>"""
    with pytest.raises(EmptyPolygon):
        parse_annotations(xml)


def test_vertex_bounds_only_checked_with_dims():
    parse_annotations(MINIMAL)
    with pytest.raises(VertexOutOfBounds):
        parse_annotations(MINIMAL, dims=(4, 4, 4))
    parse_annotations(MINIMAL, dims=(5, 5, 3))


def test_namespaces_and_unknown_elements_ignored():
    xml = b"""<a:annotations xmlns:a="urn:x" patient_id="Q"><a:header>junk</a:header>
      <a:readingSession><a:nodule id="n"><a:malignancy>1</a:malignancy><a:note/>
      <a:roi sliceIndex="0"><a:edge x="0" y="0"/></a:roi></a:nodule></a:readingSession></a:annotations>"""
    aset = parse_annotations(xml)
    assert aset.patient_id == "Q"
    assert aset.nodule_readings[0][1].malignancy == 1


def test_more_than_four_sessions_warns():
    xml = b"<annotations>" + b"<readingSession/>" * 5 + b"</annotations>"
    with pytest.warns(UserWarning):
        aset = parse_annotations(xml)
    assert len(aset.sessions) == 5


def test_truncations_never_crash_uncontrolled():
    for cut in range(len(MINIMAL)):
        try:
            parse_annotations(MINIMAL[:cut])
        except (XmlSyntaxError, EmptyPolygon, RatingOutOfRange):
            pass


coord = st.integers(0, 60).map(float) | st.floats(0, 60, allow_nan=False).map(lambda v: round(v, 3))
point2 = st.tuples(coord, coord)
roi = st.builds(Roi, st.integers(0, 20), st.lists(point2, min_size=1, max_size=6).map(tuple))
reading = st.builds(NoduleReading, st.text("abcn0123456789_", min_size=1, max_size=6),
                    st.integers(1, 5), st.lists(roi, max_size=3).map(tuple))
locus = st.tuples(coord, coord, coord)
session = st.builds(ReadingSession, st.lists(reading, max_size=3).map(tuple),
                    st.lists(locus, max_size=2).map(tuple), st.lists(locus, max_size=2).map(tuple))
annotation_sets = st.builds(AnnotationSet, st.text("PQ0123456789", min_size=1, max_size=6),
                            st.lists(session, min_size=1, max_size=4).map(tuple))


@settings(max_examples=100, deadline=None)
@given(annotation_sets)
def test_annotation_round_trip(aset):
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        again = parse_annotations(serialize_annotations(aset))
    assert again == aset
    assert serialize_annotations(again) == serialize_annotations(aset)
