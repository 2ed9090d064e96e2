import warnings

import numpy as np
import pytest

from nodulex.consensus import build_consensus
from nodulex.ingest import parse_annotations, parse_volume
from nodulex.phantom import PhantomConfig, generate_phantom, iter_patients, mask_to_rois
from nodulex.consensus import Mask3D, rasterize_roi


@pytest.fixture(scope="module")
def patients():
    return list(iter_patients(PhantomConfig(n_patients=100, seed=5)))


def dice(a, b):
    a, b = a.to_dense(), b.to_dense()
    return 2 * np.sum(a & b) / (a.sum() + b.sum())


def test_count_contract(small_study):
    out, manifest = small_study
    assert len(list(out.glob("*.rawct"))) == 10 and len(list(out.glob("*.xml"))) == 10
    assert sum(len(p["nodules"]) for p in manifest["patients"]) == 20
    labels = [n["label"] for p in manifest["patients"] for n in p["nodules"]]
    assert labels.count(1) == 10


def test_byte_identical_regeneration(tmp_path):
    cfg = PhantomConfig(n_patients=2, seed=3)
    generate_phantom(cfg, tmp_path / "a")
    generate_phantom(cfg, tmp_path / "b")
    for f in sorted((tmp_path / "a").iterdir()):
        assert f.read_bytes() == (tmp_path / "b" / f.name).read_bytes()
    generate_phantom(PhantomConfig(n_patients=2, seed=4), tmp_path / "c")
    assert (tmp_path / "a" / "P0000.rawct").read_bytes() != (tmp_path / "c" / "P0000.rawct").read_bytes()


def test_files_parse_without_warnings(small_study):
    out, _ = small_study
    for vpath in sorted(out.glob("*.rawct")):
        vol = parse_volume(vpath)
        with warnings.catch_warnings():
            warnings.simplefilter("error")
            parse_annotations(vpath.with_suffix(".xml").read_bytes(), dims=vol.dims)


def test_class_intensity_gap(patients):
    mean_hu = {"benign": [], "malignant": []}
    for p in patients:
        for les in p.nodules:
            xyz = les.mask.voxels()
            mean_hu[les.kind].append(p.volume.voxels[xyz[:, 2], xyz[:, 1], xyz[:, 0]].mean())
    assert len(mean_hu["benign"]) + len(mean_hu["malignant"]) == 200
    assert np.mean(mean_hu["malignant"]) - np.mean(mean_hu["benign"]) >= 100 - 50


def test_consensus_recovers_ground_truth(patients):
    for p in patients[:40]:
        nods = build_consensus(p.annotations, p.volume.dims)
        assert len(nods) == len(p.nodules)
        for les in p.nodules:
            best = max(dice(n.consensus_mask, les.mask) for n in nods)
            assert best >= 0.7


def test_ratings_follow_class(patients):
    for p in patients[:30]:
        nods = build_consensus(p.annotations, p.volume.dims)
        ratings = sorted(n.rating for n in nods)
        assert ratings[0] in (1, 2) and ratings[-1] in (4, 5)


def test_trace_boundary_reproduces_solid_slices():
    rng = np.random.default_rng(0)
    for _ in range(30):
        dense = np.zeros((1, 16, 16), bool)
        cy, cx = rng.integers(5, 11, 2)
        ry, rx = rng.uniform(1.5, 4.5, 2)
        y, x = np.mgrid[0:16, 0:16]
        dense[0] = ((y - cy) / ry) ** 2 + ((x - cx) / rx) ** 2 <= 1
        rois = mask_to_rois(Mask3D.from_dense(dense))
        grid = np.zeros((16, 16), bool)
        for roi in rois:
            grid |= rasterize_roi(roi.vertices, (16, 16))
        assert np.array_equal(grid, dense[0])


def test_small_config_rejected():
    with pytest.raises(ValueError):
        PhantomConfig(dims=(40, 40, 32))
    with pytest.raises(ValueError):
        PhantomConfig(readers_per_nodule=5)
