import numpy as np
import pytest

from midsurf.errors import FormatError, MaskError
from midsurf.volume import (
    NormalizedFrame,
    ScalarVolume,
    VectorVolume,
    edt_squared,
    load_mvol,
    normalize_intensity,
    save_mvol,
    signed_distance,
    trilinear_sample,
    trilinear_scatter_adjoint,
)

from conftest import brute_force_edt2


def random_mask(rng, dims=(16, 16, 16), p=0.3):
    while True:
        m = (rng.random(dims) < p).astype(np.float64)
        if 0 < m.sum() < m.size:
            return ScalarVolume(m)


def ball_mask(dims, radius, center=None):
    d = np.asarray(dims)
    if center is None:
        center = (d - 1) / 2.0
    idx = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), axis=-1)
    inside = ((idx - center) ** 2).sum(axis=-1) < radius ** 2
    return ScalarVolume(inside.astype(np.float64))


class TestVolumeTypes:
    def test_rejects_nonfinite(self):
        arr = np.zeros((3, 3, 3))
        arr[1, 1, 1] = np.nan
        with pytest.raises(ValueError):
            ScalarVolume(arr)

    def test_rejects_bad_spacing(self):
        with pytest.raises(ValueError):
            ScalarVolume(np.zeros((3, 3, 3)), spacing=(1.0, 0.0, 1.0))

    def test_vector_shape(self):
        with pytest.raises(ValueError):
            VectorVolume(np.zeros((3, 3, 3, 2)))

    def test_immutable(self):
        vol = ScalarVolume(np.zeros((3, 3, 3)))
        with pytest.raises(ValueError):
            vol.data[0, 0, 0] = 1.0

    def test_frame_roundtrip(self):
        frame = NormalizedFrame((5, 9, 17))
        pts = np.array([[0, 0, 0], [4, 8, 16], [2, 4, 8]], dtype=np.float64)
        norm = frame.voxel_to_norm(pts)
        assert np.allclose(norm[0], [-1, -1, -1])
        assert np.allclose(norm[1], [1, 1, 1])
        assert np.allclose(norm[2], [0, 0, 0])
        assert np.allclose(frame.norm_to_voxel(norm), pts)


class TestEdtSquared:
    def test_single_center_voxel(self):
        m = np.zeros((3, 3, 3))
        m[1, 1, 1] = 1.0
        out = edt_squared(ScalarVolume(m)).data
        # 6-neighbors of the center are unit distance from the foreground set
        assert out[0, 1, 1] == 1.0
        assert out[1, 0, 1] == 1.0
        assert out[1, 1, 0] == 1.0
        # center voxel: nearest opposite-class (background) voxel is adjacent
        assert out[1, 1, 1] == 1.0
        # corner: nearest foreground voxel is the center
        assert out[0, 0, 0] == 3.0

    def test_matches_brute_force_exactly(self, rng):
        for _ in range(8):
            mask = random_mask(rng)
            got = edt_squared(mask).data
            want = brute_force_edt2(mask.data > 0.5)
            np.testing.assert_array_equal(got, want)

    def test_half_space(self):
        m = np.zeros((16, 8, 8))
        m[:8] = 1.0
        out = edt_squared(ScalarVolume(m)).data
        for i in range(8, 16):
            assert np.all(out[i] == (i - 7) ** 2)

    def test_spacing_scaling(self, rng):
        mask = random_mask(rng, dims=(8, 8, 8))
        iso = edt_squared(ScalarVolume(mask.data, spacing=(2.0, 2.0, 2.0))).data
        np.testing.assert_allclose(iso, 4.0 * edt_squared(mask).data)

    def test_anisotropic_matches_brute_force(self, rng):
        spacing = (1.0, 2.0, 0.5)
        mask = ScalarVolume(random_mask(rng, dims=(8, 8, 8)).data, spacing=spacing)
        got = edt_squared(mask).data
        want = brute_force_edt2(mask.data > 0.5, spacing)
        np.testing.assert_allclose(got, want, rtol=0, atol=1e-9)

    def test_degenerate_masks(self):
        with pytest.raises(MaskError, match="degenerate mask"):
            edt_squared(ScalarVolume(np.zeros((4, 4, 4))))
        with pytest.raises(MaskError, match="degenerate mask"):
            edt_squared(ScalarVolume(np.ones((4, 4, 4))))


class TestSignedDistance:
    def test_ball(self):
        sdf = signed_distance(ball_mask((32, 32, 32), 10.0)).data
        center = sdf[15, 15, 15]  # grid center is (15.5,)*3, off-voxel
        assert center == pytest.approx(-10.0, abs=1.0)
        assert sdf[0, 0, 0] > 0

    def test_complement_negates(self, rng):
        mask = random_mask(rng, dims=(10, 10, 10))
        flipped = ScalarVolume(1.0 - mask.data)
        np.testing.assert_allclose(signed_distance(mask).data,
                                   -signed_distance(flipped).data)

    def test_planar_layers(self):
        m = np.zeros((12, 6, 6))
        m[:6] = 1.0
        sdf = signed_distance(ScalarVolume(m)).data
        for i in range(12):
            expect = -(6 - i) if i < 6 else (i - 5)
            assert np.all(sdf[i] == expect)

    def test_sign_pattern(self, rng):
        mask = random_mask(rng, dims=(9, 9, 9))
        sdf = signed_distance(mask).data
        np.testing.assert_array_equal(sdf < 0, mask.data > 0.5)


class TestNormalizeIntensity:
    def test_three_values(self):
        vol = ScalarVolume(np.array([2.0, 4.0, 6.0]).reshape(3, 1, 1))
        np.testing.assert_allclose(normalize_intensity(vol).data.ravel(), [0, 0.5, 1])

    def test_identity_on_unit_range(self, rng):
        arr = rng.random((4, 4, 4))
        arr.flat[0], arr.flat[1] = 0.0, 1.0
        vol = ScalarVolume(arr)
        np.testing.assert_allclose(normalize_intensity(vol).data, arr)

    def test_postcondition(self, rng):
        vol = ScalarVolume(rng.normal(5.0, 3.0, (6, 5, 4)))
        out = normalize_intensity(vol).data
        assert out.min() == 0.0
        assert out.max() == 1.0

    def test_constant_errors(self):
        with pytest.raises(ValueError, match="zero dynamic range"):
            normalize_intensity(ScalarVolume(np.full((3, 3, 3), 7.0)))


class TestTrilinearSample:
    def test_exact_at_grid_nodes(self, rng):
        vol = ScalarVolume(rng.random((5, 6, 7)))
        frame = vol.frame()
        idx = np.stack(np.meshgrid(*[np.arange(n) for n in vol.dims], indexing="ij"),
                       axis=-1).reshape(-1, 3)
        vals = trilinear_sample(vol, frame.voxel_to_norm(idx))
        np.testing.assert_allclose(vals, vol.data.ravel(), atol=1e-13)

    def test_reproduces_linear_fields(self, rng):
        dims = (9, 7, 11)
        frame = NormalizedFrame(dims)
        idx = np.stack(np.meshgrid(*[np.arange(n) for n in dims], indexing="ij"), axis=-1)
        norm = frame.voxel_to_norm(idx.reshape(-1, 3)).reshape(idx.shape)
        a, b, c, d = 0.7, -1.3, 0.4, 0.2
        vol = ScalarVolume(a * norm[..., 0] + b * norm[..., 1] + c * norm[..., 2] + d)
        pts = rng.uniform(-1, 1, size=(500, 3))
        vals = trilinear_sample(vol, pts)
        want = a * pts[:, 0] + b * pts[:, 1] + c * pts[:, 2] + d
        np.testing.assert_allclose(vals, want, atol=1e-12)

    def test_linear_in_grid_values(self, rng):
        f = rng.random((6, 6, 6))
        g = rng.random((6, 6, 6))
        pts = rng.uniform(-1, 1, size=(50, 3))
        lhs = trilinear_sample(ScalarVolume(2.5 * f + 0.3 * g), pts)
        rhs = 2.5 * trilinear_sample(ScalarVolume(f), pts) + 0.3 * trilinear_sample(ScalarVolume(g), pts)
        np.testing.assert_allclose(lhs, rhs, atol=1e-12)

    def test_clamps_outside_points(self):
        vol = ScalarVolume(np.arange(27, dtype=np.float64).reshape(3, 3, 3))
        inside = trilinear_sample(vol, np.array([[1.0, 0.0, 0.0]]))
        outside = trilinear_sample(vol, np.array([[3.0, 0.0, 0.0]]))
        assert inside[0] == outside[0]

    def test_jacobian_matches_finite_differences(self, rng):
        vol = ScalarVolume(rng.random((8, 9, 10)))
        pts = rng.uniform(-0.9, 0.9, size=(200, 3))
        _, jac = trilinear_sample(vol, pts, jacobian=True)
        eps = 1e-5
        for axis in range(3):
            step = np.zeros(3)
            step[axis] = eps
            fd = (trilinear_sample(vol, pts + step) - trilinear_sample(vol, pts - step)) / (2 * eps)
            denom = np.maximum(np.abs(fd), 1e-3)
            assert np.max(np.abs(jac[:, axis] - fd) / denom) < 1e-6

    def test_vector_field_sampling(self, rng):
        vol = VectorVolume(rng.random((5, 5, 5, 3)))
        pts = rng.uniform(-1, 1, size=(40, 3))
        vals, jac = trilinear_sample(vol, pts, jacobian=True)
        assert vals.shape == (40, 3)
        assert jac.shape == (40, 3, 3)
        for c in range(3):
            comp = trilinear_sample(ScalarVolume(vol.data[..., c]), pts)
            np.testing.assert_allclose(vals[:, c], comp, atol=1e-13)

    def test_adjoint_consistency(self, rng):
        # <w, S(F + t*D) - S(F)> / t  ==  <adjoint(w), D>
        vol = ScalarVolume(rng.random((7, 7, 7)))
        pts = rng.uniform(-0.95, 0.95, size=(100, 3))
        w = rng.normal(size=100)
        delta = rng.normal(size=vol.dims)
        grad = trilinear_scatter_adjoint(vol, pts, w)
        lhs = float((grad * delta).sum())
        eps = 1e-5
        up = trilinear_sample(ScalarVolume(vol.data + eps * delta), pts)
        dn = trilinear_sample(ScalarVolume(vol.data - eps * delta), pts)
        rhs = float(w @ (up - dn)) / (2 * eps)
        assert abs(lhs - rhs) / max(abs(rhs), 1e-12) < 1e-6


class TestMvolIO:
    def test_scalar_roundtrip(self, tmp_path, rng):
        vol = ScalarVolume(rng.random((4, 5, 6)).astype(np.float32).astype(np.float64),
                           spacing=(1.0, 1.5, 2.0))
        path = tmp_path / "v.mvol"
        save_mvol(path, vol)
        back = load_mvol(path)
        assert back.dims == vol.dims
        np.testing.assert_allclose(back.spacing, vol.spacing)
        np.testing.assert_array_equal(back.data, vol.data)

    def test_vector_roundtrip(self, tmp_path, rng):
        vol = VectorVolume(rng.random((3, 4, 5, 3)).astype(np.float32).astype(np.float64))
        path = tmp_path / "v.mvol"
        save_mvol(path, vol)
        back = load_mvol(path)
        assert isinstance(back, VectorVolume)
        np.testing.assert_array_equal(back.data, vol.data)

    def test_mask_roundtrip(self, tmp_path, rng):
        vol = ScalarVolume((rng.random((4, 4, 4)) < 0.5).astype(np.float64))
        path = tmp_path / "m.mvol"
        save_mvol(path, vol, as_mask=True)
        back = load_mvol(path)
        np.testing.assert_array_equal(back.data, vol.data)

    def test_layout_is_x_fastest(self, tmp_path):
        arr = np.zeros((2, 2, 2))
        arr[1, 0, 0] = 1.0  # second sample in x-fastest order
        path = tmp_path / "v.mvol"
        save_mvol(path, ScalarVolume(arr))
        payload = np.frombuffer(path.read_bytes()[36:], dtype="<f4")
        assert payload[1] == 1.0
        assert payload.sum() == 1.0

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.mvol"
        path.write_bytes(b"NOPE" + bytes(64))
        with pytest.raises(FormatError, match="bad magic"):
            load_mvol(path)

    def test_truncated_payload(self, tmp_path, rng):
        vol = ScalarVolume(rng.random((4, 4, 4)))
        path = tmp_path / "v.mvol"
        save_mvol(path, vol)
        path.write_bytes(path.read_bytes()[:-5])
        with pytest.raises(FormatError, match="payload"):
            load_mvol(path)
