import math
from collections import deque

import numpy as np
import pytest

from conftest import sphere_volume
from nodulex.consensus import Mask3D
from nodulex.errors import EmptyMask, LengthMismatch, SeedOutOfBounds
from nodulex.ingest import CTVolume
from nodulex.qif import (
    FEATURE_CODES,
    FEATURE_REGISTRY,
    N_FEATURES,
    N_NO_SIZE,
    SIZE_FLAGS,
    FeatureVector,
    auto_segment,
    compute_features,
    read_feature_csv,
    strip_size_features,
    write_feature_csv,
)


def flood_fill(vox, spacing, seed, thr=-450, radius=15.0):
    """Plain BFS over the 26-neighbourhood; the oracle for region growing."""
    nz, ny, nx = vox.shape
    sx, sy, sz = spacing
    cx, cy, cz = seed
    if vox[cz, cy, cx] < thr:
        return {(cx, cy, cz)}
    seen = {(cx, cy, cz)}
    todo = deque([(cx, cy, cz)])
    while todo:
        x, y, z = todo.popleft()
        for dz in (-1, 0, 1):
            for dy in (-1, 0, 1):
                for dx in (-1, 0, 1):
                    p = (x + dx, y + dy, z + dz)
                    if p in seen or not (0 <= p[0] < nx and 0 <= p[1] < ny and 0 <= p[2] < nz):
                        continue
                    d2 = ((p[0] - cx) * sx) ** 2 + ((p[1] - cy) * sy) ** 2 + ((p[2] - cz) * sz) ** 2
                    if vox[p[2], p[1], p[0]] >= thr and d2 <= radius**2:
                        seen.add(p)
                        todo.append(p)
    return seen


def voxel_set(mask):
    return set(map(tuple, mask.voxels().tolist()))


def test_registry_shape():
    assert N_FEATURES == 50 and len(set(FEATURE_CODES)) == 50
    assert int(SIZE_FLAGS.sum()) == 12 and N_NO_SIZE == 38
    sizes = {f.code for f in FEATURE_REGISTRY if f.is_size_measure}
    assert sizes == {"f01", "f02", "f03", "f04", "f09", "f10", "f12", "f13", "f14", "f19", "f20", "f21"}


def test_strip_size_features():
    vec = FeatureVector(np.arange(50.0) + 100)
    out = strip_size_features(vec)
    assert out.shape == (38,)
    assert out.tolist() == [100.0 + i for i in range(50) if not SIZE_FLAGS[i]]
    assert strip_size_features(np.zeros((4, 50))).shape == (4, 38)
    with pytest.raises(LengthMismatch):
        strip_size_features(out)


def test_auto_segment_sphere_matches_flood_fill():
    vol, truth = sphere_volume(5, dims=(25, 25, 25))
    mask = auto_segment(vol, (12, 12, 12))
    assert voxel_set(mask) == flood_fill(vol.voxels, vol.spacing_mm, (12, 12, 12))
    z, y, x = np.nonzero(truth)
    assert voxel_set(mask) == set(zip(x.tolist(), y.tolist(), z.tolist()))


def test_auto_segment_air_seed_single_voxel():
    vol = CTVolume(np.full((5, 5, 5), -1000, np.int16), (1, 1, 1))
    assert voxel_set(auto_segment(vol, (2, 2, 2))) == {(2, 2, 2)}
    with pytest.raises(SeedOutOfBounds):
        auto_segment(vol, (5, 0, 0))


def test_auto_segment_slab_truncated_to_ball():
    vox = np.full((30, 50, 50), -850, np.int16)
    vox[:, 5:45, 5:45] = 50  # 40 x 40 voxels at 1 mm, full depth at 1 mm
    vol = CTVolume(vox, (1.0, 1.0, 1.0))
    seed = (25, 25, 15)
    mask = auto_segment(vol, seed)
    zz, yy, xx = np.nonzero(vox >= -450)
    inside = (xx - 25) ** 2 + (yy - 25) ** 2 + (zz - 15) ** 2 <= 225
    assert mask.voxel_count == int(inside.sum())
    assert voxel_set(mask) == flood_fill(vox, (1, 1, 1), seed)


def test_auto_segment_anisotropic_matches_oracle():
    rng = np.random.default_rng(3)
    vox = np.where(rng.random((12, 40, 40)) < 0.55, 40, -900).astype(np.int16)
    vox[6, 20, 20] = 40
    vol = CTVolume(vox, (0.7, 0.7, 2.5))
    assert voxel_set(auto_segment(vol, (20, 20, 6))) == flood_fill(vox, (0.7, 0.7, 2.5), (20, 20, 6))


def test_sphere_volume_within_5_percent():
    vol, truth = sphere_volume(10, dims=(25, 25, 25))
    f = compute_features(vol, Mask3D.from_dense(truth))
    analytic = 4.0 / 3.0 * math.pi * 1000
    assert analytic == pytest.approx(4188.79, abs=0.01)
    assert abs(f["f12"] - analytic) / analytic < 0.05


def test_square_sqrt_area():
    vox = np.full((1, 20, 20), -850, np.int16)
    vox[0, 5:15, 5:15] = 0
    vol = CTVolume(vox, (1.0, 1.0, 1.0))
    f = compute_features(vol, Mask3D.from_dense(vox > -500))
    assert f["f04"] == pytest.approx(10.0, abs=1e-12)
    assert f["f01"] == pytest.approx(100.0, abs=1e-12)


def test_uniform_region_degenerate_values():
    vol, truth = sphere_volume(4, dims=(15, 15, 15), inside=20)
    f = compute_features(vol, Mask3D.from_dense(truth))
    assert f["f24"] == 0.0 and f["f28"] == 0.0 and f["f29"] == 0.0
    assert f["f45"] == pytest.approx(1.0, abs=1e-12)
    assert f["f44"] == 0.0
    assert np.all(np.isfinite(f.values))


def test_empty_mask_rejected():
    vol, _ = sphere_volume(3, dims=(9, 9, 9))
    with pytest.raises(EmptyMask):
        compute_features(vol, Mask3D.from_voxels(vol.dims, []))


def textured_blob(spacing):
    rng = np.random.default_rng(11)
    vox = rng.normal(-850, 30, size=(16, 40, 40))
    z, y, x = np.mgrid[0:16, 0:40, 0:40]
    blob = ((x - 20) / 9.0) ** 2 + ((y - 19) / 6.5) ** 2 + ((z - 8) / 3.2) ** 2 <= 1
    vox[blob] = rng.normal(20, 60, blob.sum())
    return CTVolume(np.round(vox).astype(np.int16), spacing), Mask3D.from_dense(blob)


def test_spacing_scale_powers():
    vol1, mask = textured_blob((0.7, 0.8, 2.5))
    vol2 = CTVolume(vol1.voxels, (1.4, 1.6, 5.0))
    f1, f2 = compute_features(vol1, mask).values, compute_features(vol2, mask).values
    for spec, a, b in zip(FEATURE_REGISTRY, f1, f2):
        expected = a * 2.0**spec.scale_power
        assert b == pytest.approx(expected, rel=1e-9, abs=1e-12), spec.code


def test_intensity_shift_invariance():
    vol, mask = textured_blob((0.7, 0.7, 2.5))
    shifted = CTVolume(vol.voxels.astype(np.int32) + 37, vol.spacing_mm)
    a, b = compute_features(vol, mask), compute_features(shifted, mask)
    for code in ("f24", "f28", "f29"):
        assert b[code] == pytest.approx(a[code], rel=1e-9, abs=1e-12)
    for code in ("f22", "f23", "f32", "f35"):
        assert b[code] == pytest.approx(a[code] + 37, rel=1e-12)


def test_sphericity_sphere_beats_plate():
    vol, truth = sphere_volume(6, dims=(21, 21, 21))
    sphere = compute_features(vol, Mask3D.from_dense(truth))
    n = int(truth.sum())
    side = int(math.ceil(math.sqrt(n)))
    plate = np.zeros((3, side + 4, side + 4), bool)
    flat = np.zeros(side * side, bool)
    flat[:n] = True
    plate[1, 2 : 2 + side, 2 : 2 + side] = flat.reshape(side, side)
    pvol = CTVolume(np.where(plate, 50, -850).astype(np.int16), (1, 1, 1))
    pf = compute_features(pvol, Mask3D.from_dense(plate))
    assert pf["f12"] == sphere["f12"]
    assert 0 < pf["f15"] < sphere["f15"]


def test_feature_csv_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    rows = [(f"i{k}", f"P{k}", rng.standard_normal(50)) for k in range(4)]
    path = write_feature_csv(rows, tmp_path / "f.csv")
    ids, pids, mat = read_feature_csv(path)
    assert ids == ["i0", "i1", "i2", "i3"] and pids[2] == "P2"
    assert np.array_equal(mat, np.array([r[2] for r in rows]))
    assert (tmp_path / "f.registry.txt").read_text().count("\n") == 51
