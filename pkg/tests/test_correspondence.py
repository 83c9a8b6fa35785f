import numpy as np
import pytest
from hypothesis import given, strategies as st

from bevsync.camera import Camera, CameraRig, look_extrinsics
from bevsync.correspondence import (
    build_correspondence_map, build_rig_maps, correspondence_map, latent_scale_homography,
    neighborhood, overlap_fraction, pair_correspondence_map, pair_homography, round_half_away,
    save_correspondence_map,
)
from bevsync.errors import ConfigError, NoCorrespondenceError
from bevsync.homography import apply_homography_array, infinite_homography, invert_homography
from bevsync.scene import make_default_rig

h, w = 32, 56


@pytest.fixture(scope="module")
def maps(rig):
    return build_rig_maps(rig, h, w)


def test_round_half_away():
    np.testing.assert_array_equal(round_half_away([0.5, 1.5, -0.5, -1.5, 2.49, -2.51]), [1, 2, -1, -2, 2, -3])


def test_latent_scale_identity_and_conjugation():
    np.testing.assert_allclose(latent_scale_homography(np.eye(3), 8), np.eye(3))
    H = np.array([[1.1, 0.05, 3.0], [-0.02, 0.9, -7.0], [1e-4, -2e-4, 1.0]])
    L = latent_scale_homography(H, 8)
    p = np.random.default_rng(0).uniform(0, 400, (30, 2))
    np.testing.assert_allclose(apply_homography_array(L, p / 8), apply_homography_array(H, p) / 8, atol=1e-9)
    with pytest.raises(ConfigError):
        latent_scale_homography(H, 0.0)


def test_latent_map_matches_downscaled_full_resolution(rig, maps):
    cmap = maps[(1, 2)]
    for H, cells in ((pair_homography(rig, 1, 2), cmap.valid & ~cmap.far),
                     (infinite_homography(rig.camera(1), rig.camera(2)), cmap.far)):
        i, j = np.nonzero(cells)
        assert len(i) > 50
        # cell (i, j) has its center at pixel ((j + .5) 8, (i + .5) 8)
        full = apply_homography_array(H, np.stack([(j + 0.5) * 8, (i + 0.5) * 8], axis=-1))
        np.testing.assert_allclose(cmap.coords[i, j], full / 8 - 0.5, atol=1e-6)


def test_ground_below_horizon_far_above(rig, maps):
    cy_row = rig.camera(1).intrinsics.cy / 8
    for cmap in maps.values():
        rows = np.nonzero(cmap.valid)[0]
        far_rows = np.nonzero(cmap.far)[0]
        assert (far_rows + 0.5 < cy_row).all()
        assert (rows[~cmap.far[cmap.valid]] + 0.5 > cy_row).all()


def test_colocated_cameras_identity_map(rig):
    cam = rig.camera(1)
    twin = CameraRig((cam, cam), rig.image_size)
    to_r, to_l = build_correspondence_map(twin, 1, h, w)
    assert to_r.valid.all() and to_l.valid.all()
    ii, jj = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    np.testing.assert_array_equal(to_r.index[..., 0], ii)
    np.testing.assert_array_equal(to_r.index[..., 1], jj)
    # a pitched twin sees only ground and still maps onto itself
    down = Camera(cam.intrinsics, look_extrinsics(0.0, (0.0, 0.0, 1.5), pitch_deg=60.0))
    m = pair_correspondence_map(CameraRig((down, down), rig.image_size), 1, 2, h, w)
    assert m.valid.all() and not m.far.any()


def test_opposite_cameras_share_nothing():
    r = make_default_rig(hfov_deg=70.0, yaws=(0.0, 180.0))
    assert not pair_correspondence_map(r, 1, 2, h, w).valid.any()
    assert not pair_correspondence_map(r, 2, 1, h, w).valid.any()
    d = make_default_rig()
    for m in (1, 2, 3):
        assert not pair_correspondence_map(d, m, m + 3, h, w).valid.any()


def test_default_overlap_fraction_and_symmetry(rig, maps):
    for m in range(1, 7):
        mr = rig.right(m)
        f = overlap_fraction(maps[(m, mr)])
        assert 0.05 < f < 0.6
        back = maps[(mr, m)].valid.sum()
        assert abs(maps[(m, mr)].valid.sum() - back) <= 0.2 * back


def test_cycle_consistency(rig, maps):
    """Round trip m -> m_r (rounded) -> m lands within 0.75 cells scaled by the
    local expansion of the reverse map; continuous round trips are exact."""
    for m in range(1, 7):
        fwd = maps[(m, rig.right(m))]
        for H, cells in ((fwd.homography, fwd.valid & ~fwd.far), (fwd.far_homography, fwd.far)):
            Hb = invert_homography(H)
            i, j = np.nonzero(cells)
            src = np.stack([j, i], axis=-1).astype(float)
            exact = apply_homography_array(Hb, fwd.coords[i, j])
            assert np.abs(exact - src).max() < 1e-9
            tgt = fwd.index[i, j][:, ::-1].astype(float)
            err = np.linalg.norm(apply_homography_array(Hb, tgt) - src, axis=-1)
            # spectral norm of the reverse-map Jacobian by central differences
            eps = 1e-4
            jac = np.stack([
                (apply_homography_array(Hb, tgt + [eps, 0]) - apply_homography_array(Hb, tgt - [eps, 0])) / (2 * eps),
                (apply_homography_array(Hb, tgt + [0, eps]) - apply_homography_array(Hb, tgt - [0, eps])) / (2 * eps),
            ], axis=-1)
            expansion = np.linalg.norm(jac, ord=2, axis=(-2, -1))
            assert (err <= 0.75 * np.maximum(expansion, 1.0) + 1e-9).all()


def test_maps_deterministic(rig, maps):
    again = build_rig_maps(rig, h, w)
    for k, v in maps.items():
        assert v.index.tobytes() == again[k].index.tobytes()
        assert v.coords.tobytes() == again[k].coords.tobytes()


def test_neighborhood_windows():
    H = np.eye(3)
    cmap = correspondence_map(H, h, w)
    assert neighborhood(cmap, (5, 7), 1) == [(5, 7)]
    assert len(neighborhood(cmap, (5, 7), 3)) == 9
    assert sorted(neighborhood(cmap, (0, 0), 3)) == [(0, 0), (0, 1), (1, 0), (1, 1)]
    assert len(neighborhood(cmap, (h - 1, w - 1), 5)) == 9
    with pytest.raises(ConfigError):
        neighborhood(cmap, (1, 1), 2)
    shifted = correspondence_map(np.array([[1.0, 0, 100], [0, 1, 0], [0, 0, 1]]), h, w)
    with pytest.raises(NoCorrespondenceError):
        neighborhood(shifted, (0, 0), 3)


@given(st.floats(-3, 3), st.floats(-3, 3), st.integers(0, h - 1), st.integers(0, w - 1), st.sampled_from([1, 3, 5]))
def test_neighborhood_property(tx, ty, i, j, K):
    cmap = correspondence_map(np.array([[1.0, 0, tx], [0, 1, ty], [0, 0, 1]]), h, w)
    if not cmap.valid[i, j]:
        return
    win = neighborhood(cmap, (i, j), K)
    r0, c0 = cmap.index[i, j]
    assert len(win) <= K * K
    assert all(abs(r - r0) <= K // 2 and abs(c - c0) <= K // 2 for r, c in win)
    assert all(0 <= r < h and 0 <= c < w for r, c in win)


def test_pairs_row_major(maps):
    src, tgt = maps[(1, 2)].pairs()
    assert (np.diff(src) > 0).all()
    assert ((tgt >= 0) & (tgt < h * w)).all()


def test_save_map(tmp_path, maps):
    png = save_correspondence_map(maps[(1, 2)], tmp_path)
    assert png.exists() and png.name == "overlap_1_to_2.png"
    coords = np.load(tmp_path / "overlap_1_to_2_coords.npy")
    np.testing.assert_array_equal(np.isfinite(coords[..., 0]), maps[(1, 2)].valid)


def test_grid_must_divide(rig):
    with pytest.raises(ConfigError):
        pair_correspondence_map(rig, 1, 2, 30, 56)
