import math

import cv2
import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from matkit.imaging import (
    DepthMap,
    Image,
    ImageFormatError,
    MaterialSet,
    Mask,
    NormalMap,
    decode_normal,
    encode_normal,
    load_depth,
    load_image,
    load_mask,
    load_material_set,
    resample_bilinear,
    rotate_map,
    rotate_material_set,
    save_image,
    save_material_set,
)
from matkit.materials import checker_material, procedural_material

unit_floats = st.floats(0.0, 1.0, allow_nan=False)


# --- types -----------------------------------------------------------------


def test_image_rejects_out_of_range_and_nan():
    with pytest.raises(ValueError):
        Image(np.full((2, 2, 3), 1.5))
    with pytest.raises(ValueError):
        Image(np.array([[np.nan]]))
    with pytest.raises(ValueError):
        Image(np.zeros((2, 2, 2)))


def test_image_promotes_grayscale():
    img = Image(np.zeros((3, 4)))
    assert img.data.shape == (3, 4, 1)
    assert (img.width, img.height, img.channels) == (4, 3, 1)


def test_material_set_requires_square_matching_maps():
    mat = procedural_material(0, 16)
    with pytest.raises(ValueError):
        MaterialSet(mat.albedo, mat.normal, Image(np.zeros((8, 8, 1))), mat.height)
    rect = Image(np.zeros((8, 16, 3)))
    with pytest.raises(ValueError):
        MaterialSet(rect, NormalMap(rect), Image(np.zeros((8, 16, 1))), Image(np.zeros((8, 16, 1))))


def test_depth_from_raw_normalizes_inside_mask():
    raw = np.array([[2.0, 4.0], [3.0, np.inf]])
    mask = np.array([[True, True], [True, False]])
    d, (lo, hi) = DepthMap.from_raw(raw, mask)
    assert (lo, hi) == (2.0, 4.0)
    np.testing.assert_allclose(d.data, [[0.0, 1.0], [0.5, 0.0]])


def test_constant_depth_normalizes_to_zero():
    d, (lo, hi) = DepthMap.from_raw(np.full((3, 3), 2.0))
    assert lo == hi == 2.0
    assert np.all(d.data == 0)


# --- I/O -------------------------------------------------------------------


def test_load_8bit_full_scale_and_half(tmp_path):
    arr = np.array([[255, 128, 0]], dtype=np.uint8)
    cv2.imwrite(str(tmp_path / "a.png"), arr)
    img = load_image(tmp_path / "a.png", "roughness")
    assert img.data[0, 0, 0] == 1.0
    assert img.data[0, 1, 0] == pytest.approx(128 / 255)
    assert img.data[0, 1, 0] == pytest.approx(0.50196, abs=1e-5)
    assert img.data[0, 2, 0] == 0.0


def test_load_16bit_zero(tmp_path):
    arr = np.array([[0, 65535]], dtype=np.uint16)
    cv2.imwrite(str(tmp_path / "a.png"), arr)
    img = load_image(tmp_path / "a.png", "height")
    assert img.data[0, 0, 0] == 0.0
    assert img.data[0, 1, 0] == 1.0


def test_load_rgb_channel_order(tmp_path):
    bgr = np.zeros((1, 1, 3), dtype=np.uint8)
    bgr[0, 0] = (0, 0, 255)  # red in OpenCV order
    cv2.imwrite(str(tmp_path / "r.png"), bgr)
    img = load_image(tmp_path / "r.png", "albedo")
    np.testing.assert_array_equal(img.data[0, 0], [1.0, 0.0, 0.0])


def test_channel_mismatch_is_an_error(tmp_path):
    cv2.imwrite(str(tmp_path / "g.png"), np.zeros((2, 2), np.uint8))
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "g.png", "albedo")


def test_unsupported_bit_depth(tmp_path):
    cv2.imwrite(str(tmp_path / "f.tiff"), np.zeros((2, 2), np.float32))
    with pytest.raises(ImageFormatError):
        load_image(tmp_path / "f.tiff", "height")


def test_missing_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        load_image(tmp_path / "nope.png")


@pytest.mark.parametrize("bits", [8, 16])
def test_save_load_round_trip_bound(tmp_path, bits):
    data = np.random.default_rng(bits).random((17, 13, 3))
    save_image(Image(data), tmp_path / "x.png", bit_depth=bits)
    back = load_image(tmp_path / "x.png", "albedo").data
    # Rounding to the nearest code gives half a step; the contract allows a full step.
    assert np.abs(back - data).max() <= 0.5 / (2**bits - 1) + 1e-12


def test_constant_half_round_trip_8bit(tmp_path):
    save_image(Image(np.full((4, 4, 1), 0.5)), tmp_path / "c.png", 8)
    back = load_image(tmp_path / "c.png", "roughness").data
    # Oracle: quantize 0.5 to round(127.5) = 128, dequantize to 128/255.
    np.testing.assert_allclose(back, 128 / 255)
    assert np.abs(back - 0.5).max() <= 1 / 255


def test_pfm_round_trip_and_depth_normalization(tmp_path):
    raw = np.random.default_rng(0).uniform(2.0, 7.0, (5, 6, 1))
    save_image(raw / 10.0, tmp_path / "d.pfm")
    d = load_depth(tmp_path / "d.pfm").data
    lo, hi = raw.min(), raw.max()
    np.testing.assert_allclose(d, (raw[..., 0] - lo) / (hi - lo), atol=1e-6)


def test_mask_any_nonzero_is_inside(tmp_path):
    arr = np.zeros((3, 3, 3), np.uint8)
    arr[1, 1, 2] = 1
    cv2.imwrite(str(tmp_path / "m.png"), arr)
    m = load_mask(tmp_path / "m.png")
    assert m.data.sum() == 1 and m.data[1, 1]


def test_material_set_directory_round_trip(tmp_path):
    mat = procedural_material(3, 32)
    save_material_set(mat, tmp_path / "m")
    back = load_material_set(tmp_path / "m")
    for (k, a), b in zip(mat.maps().items(), back.maps().values()):
        assert np.abs(a.data - b.data).max() <= 1 / 65535, k


@settings(max_examples=25, deadline=None)
@given(arrays(np.float64, (6, 5, 3), elements=unit_floats), st.sampled_from([8, 16]))
def test_codec_round_trip_property(tmp_path_factory, data, bits):
    path = tmp_path_factory.mktemp("codec") / "x.png"
    save_image(Image(data), path, bit_depth=bits)
    back = load_image(path, "albedo").data
    assert np.abs(back - data).max() <= 1.0 / (2**bits - 1)


# --- resampling ------------------------------------------------------------


def test_resample_constant_and_identity():
    img = Image(np.full((5, 7, 1), 0.3))
    np.testing.assert_allclose(resample_bilinear(img, 11, 3).data, 0.3)
    assert resample_bilinear(img, 7, 5) is img


def test_resample_two_to_three_corner_aligned():
    img = Image(np.array([[[0.0], [1.0]]]))
    out = resample_bilinear(img, 3, 1)
    np.testing.assert_allclose(out.data[0, :, 0], [0.0, 0.5, 1.0])


def test_resample_rejects_zero_dims():
    with pytest.raises(ValueError):
        resample_bilinear(Image(np.zeros((2, 2))), 0, 2)


# --- normals ---------------------------------------------------------------


def test_decode_examples():
    np.testing.assert_allclose(decode_normal(np.array([0.5, 0.5, 1.0])), [0, 0, 1])
    np.testing.assert_allclose(decode_normal(np.array([1.0, 0.5, 0.5])), [1, 0, 0])
    v = decode_normal(np.array([0.75, 0.5, 0.9330127]))
    # 2p - 1 = (0.5, 0, 0.866...) is already unit length.
    np.testing.assert_allclose(v, [0.5, 0.0, math.sqrt(3) / 2], atol=1e-6)


def test_decode_zero_vector_raises():
    with pytest.raises(ValueError):
        decode_normal(np.array([0.5, 0.5, 0.5]))


def test_encode_requires_unit_length():
    with pytest.raises(ValueError):
        encode_normal(np.array([0.0, 0.0, 2.0]))


@settings(max_examples=100, deadline=None)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(0.05, 1))
def test_encode_decode_round_trip(x, y, z):
    v = np.array([x, y, z])
    v /= np.linalg.norm(v)
    p = encode_normal(v)
    assert np.abs(encode_normal(decode_normal(p)) - p).max() <= 1e-3


# --- rotation --------------------------------------------------------------


def test_rotation_zero_is_identity():
    mat = procedural_material(1, 16)
    assert rotate_material_set(mat, 0.0) is mat
    assert rotate_material_set(mat, 2 * math.pi) is mat


def test_flat_normal_invariant_under_rotation():
    mat = checker_material(16)
    for a in (0.3, 1.0, math.pi / 2, 2.5):
        out = rotate_material_set(mat, a).normal.encoded.data
        np.testing.assert_allclose(out, np.broadcast_to([0.5, 0.5, 1.0], out.shape), atol=1e-12)


def test_normal_x_axis_quarter_turn():
    v = np.zeros((4, 4, 3))
    v[..., 0] = 1.0
    mat = MaterialSet(
        Image(np.zeros((4, 4, 3))), NormalMap.from_vectors(v), Image(np.zeros((4, 4))), Image(np.zeros((4, 4)))
    )
    out = rotate_material_set(mat, math.pi / 2, "nearest").normal.encoded.data
    np.testing.assert_allclose(out, np.broadcast_to([0.5, 1.0, 0.5], out.shape))
    out_b = rotate_material_set(mat, math.pi / 2 + 1e-3, "bilinear").normal.encoded.data
    np.testing.assert_allclose(out_b, np.broadcast_to([0.5, 1.0, 0.5], out_b.shape), atol=1e-3)


def test_quarter_turn_is_index_permutation():
    mat = procedural_material(2, 24)
    out = rotate_material_set(mat, math.pi / 2, "nearest")
    # Oracle: counter-clockwise as displayed means pixel (r, c) moves to (n-1-c, r).
    n = 24
    src = mat.albedo.data
    exp = np.empty_like(src)
    for r in range(n):
        for c in range(n):
            exp[n - 1 - c, r] = src[r, c]
    assert np.array_equal(out.albedo.data, exp)
    assert np.array_equal(out.height.data, np.rot90(mat.height.data))
    enc = np.rot90(mat.normal.encoded.data).copy()
    exp_n = enc.copy()
    exp_n[..., 0] = 1.0 - enc[..., 1]
    exp_n[..., 1] = enc[..., 0]
    assert np.array_equal(out.normal.encoded.data, exp_n)


def test_generic_angle_matches_quarter_turn_nearby():
    mat = procedural_material(4, 32, cutoff=3)
    near = rotate_material_set(mat, math.pi / 2 + 1e-9, "bilinear")
    exact = rotate_material_set(mat, math.pi / 2, "bilinear")
    assert np.abs(near.albedo.data - exact.albedo.data).max() < 1e-6


def test_rotate_map_direction_is_counter_clockwise():
    a = np.zeros((5, 5, 1))
    a[2, 4] = 1.0  # right of centre
    out = rotate_map(a, math.pi / 2 + 1e-12, "nearest")
    # After a counter-clockwise quarter turn the dot is above the centre.
    assert out[0, 2, 0] == 1.0


@settings(max_examples=20, deadline=None)
@given(st.floats(-math.pi, math.pi), st.integers(0, 3))
def test_rotated_normals_stay_unit(alpha, seed):
    mat = procedural_material(seed, 16)
    enc = rotate_material_set(mat, alpha).normal.encoded.data
    assert np.abs(np.linalg.norm(2 * enc - 1, axis=-1) - 1).max() <= 1e-3
    v = decode_normal(enc)
    assert np.all(v[..., 2] >= 0)


@settings(max_examples=15, deadline=None)
@given(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))
def test_rotation_group_property_on_band_limited_texture(a, b):
    mat = procedural_material(7, 64, cutoff=3)
    two = rotate_material_set(rotate_material_set(mat, a), b)
    one = rotate_material_set(mat, a + b)
    # Compare inside the inscribed disk, where no wrap fill has been used.
    n = 64
    yy, xx = np.mgrid[:n, :n]
    disk = np.hypot(xx - (n - 1) / 2, yy - (n - 1) / 2) <= (n - 1) / 2 / math.sqrt(2) - 1
    for x, y in zip(two.maps().values(), one.maps().values()):
        assert np.abs(x.data - y.data)[disk].mean() <= 0.02


def test_mask_type():
    m = Mask(np.array([[0, 1], [1, 1]]))
    assert m.data.dtype == bool
    assert m.count() == 3
