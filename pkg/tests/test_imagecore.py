import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

import oracles
from edgekit.errors import DomainError, ImageFormatError, ShapeError
from edgekit.imagecore import (
    GrayImage,
    LatentTensor,
    correlate,
    correlate_adjoint,
    load_grayscale,
    load_image,
    quantize,
    read_latent,
    resize_bicubic,
    save_image,
    write_latent,
)

images = arrays(
    np.float64,
    st.tuples(st.integers(1, 12), st.integers(1, 12)),
    elements=st.floats(0, 1, allow_nan=False),
)


def test_pgm_bytes_scale_to_unit_range(tmp_path):
    path = tmp_path / "tiny.pgm"
    path.write_bytes(b"P5\n2 2\n255\n" + bytes([0, 128, 255, 64]))
    img = load_image(path)
    np.testing.assert_array_equal(np.asarray(img), [[0, 128 / 255], [1, 64 / 255]])


def test_pgm_header_comments_are_skipped(tmp_path):
    path = tmp_path / "c.pgm"
    path.write_bytes(b"P5\n# made by hand\n1 1\n255\n" + bytes([51]))
    assert np.asarray(load_image(path))[0, 0] == 51 / 255


def test_truncated_pgm_raises_ioerror(tmp_path):
    path = tmp_path / "cut.pgm"
    path.write_bytes(b"P5\n4 4\n255\n" + bytes(10))
    with pytest.raises(OSError, match="truncated"):
        load_image(path)


def test_truncated_png_raises_ioerror(tmp_path):
    full = tmp_path / "full.png"
    save_image(GrayImage(np.random.default_rng(0).random((32, 32))), full)
    cut = tmp_path / "cut.png"
    cut.write_bytes(full.read_bytes()[:60])
    with pytest.raises(OSError):
        load_image(cut)


def test_unsupported_format(tmp_path):
    path = tmp_path / "x.bmp"
    path.write_bytes(b"BM" + bytes(100))
    with pytest.raises(ImageFormatError):
        load_image(path)


def test_missing_file():
    with pytest.raises(FileNotFoundError):
        load_image("/nonexistent/edgekit.pgm")


def test_color_png_uses_bt601_luma(tmp_path):
    from PIL import Image

    rgb = np.zeros((2, 3, 3), dtype=np.uint8)
    rgb[0, 0] = (255, 0, 0)
    rgb[0, 1] = (0, 255, 0)
    rgb[0, 2] = (0, 0, 255)
    rgb[1, :] = (10, 20, 30)
    path = tmp_path / "rgb.png"
    Image.fromarray(rgb, "RGB").save(path)
    got = np.asarray(load_image(path))
    np.testing.assert_allclose(got[0], [0.299, 0.587, 0.114], atol=1e-15)
    np.testing.assert_allclose(got[1], (0.299 * 10 + 0.587 * 20 + 0.114 * 30) / 255, atol=1e-15)
    with pytest.raises(ImageFormatError):
        load_grayscale(path)


@pytest.mark.parametrize("value, byte", [(0.0, 0), (1.0, 255), (0.5, 128)])
def test_save_quantizes_round_half_up(tmp_path, value, byte):
    path = tmp_path / "q.pgm"
    save_image(GrayImage(np.full((4, 4), value)), path)
    assert path.read_bytes()[-16:] == bytes([byte]) * 16


@pytest.mark.parametrize("suffix", [".pgm", ".png"])
@settings(max_examples=40, deadline=None)
@given(arr=images)
def test_roundtrip_exact_after_quantization(tmp_path_factory, suffix, arr):
    img = GrayImage(arr)
    path = tmp_path_factory.mktemp("rt") / f"img{suffix}"
    save_image(img, path)
    back = load_image(path)
    np.testing.assert_array_equal(np.asarray(back), quantize(img) / 255.0)


def test_gray_image_rejects_out_of_range():
    with pytest.raises(DomainError):
        GrayImage(np.array([[1.5]]))
    with pytest.raises(ShapeError):
        GrayImage(np.zeros(5))


class TestResize:
    def test_same_size_is_identity(self, rng):
        img = GrayImage(rng.random((7, 9)))
        np.testing.assert_array_equal(np.asarray(resize_bicubic(img, 9, 7)), np.asarray(img))

    @settings(max_examples=30, deadline=None)
    @given(
        value=st.floats(0, 1),
        w=st.integers(1, 20),
        h=st.integers(1, 20),
        w2=st.integers(1, 20),
        h2=st.integers(1, 20),
    )
    def test_constant_stays_constant(self, value, w, h, w2, h2):
        out = resize_bicubic(GrayImage(np.full((h, w), value)), w2, h2)
        assert out.shape == (h2, w2)
        np.testing.assert_allclose(np.asarray(out), value, atol=1e-12)

    def test_checkerboard_upscale_matches_oracle(self):
        board = np.array([[0.0, 1.0], [1.0, 0.0]])
        got = np.asarray(resize_bicubic(GrayImage(board), 8, 8))
        np.testing.assert_allclose(got, oracles.bicubic_resize(board, 8, 8), atol=1e-6)

    def test_random_resize_matches_oracle(self, rng):
        img = rng.random((9, 6))
        got = np.asarray(resize_bicubic(GrayImage(img), 13, 20))
        np.testing.assert_allclose(got, oracles.bicubic_resize(img, 13, 20), atol=1e-12)

    def test_outputs_are_clamped(self):
        step = np.zeros((4, 8))
        step[:, 4:] = 1.0
        out = np.asarray(resize_bicubic(GrayImage(step), 32, 4))
        assert out.min() >= 0.0 and out.max() <= 1.0

    def test_rejects_empty_target(self):
        with pytest.raises(DomainError):
            resize_bicubic(GrayImage(np.zeros((2, 2))), 0, 2)


def test_correlate_matches_direct_loops(rng):
    img = rng.random((9, 11))
    k = rng.normal(size=(5, 3))
    np.testing.assert_allclose(correlate(img, k), oracles.conv_replicate(img, k), atol=1e-12)


def test_correlate_adjoint_is_transpose(rng):
    # <K x, y> == <x, K^T y> for the replicate-padded operator
    k = rng.normal(size=(5, 5))
    x = rng.normal(size=(8, 10))
    y = rng.normal(size=(8, 10))
    lhs = np.sum(correlate(x, k) * y)
    rhs = np.sum(x * correlate_adjoint(y, k))
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_latent_container_roundtrip(tmp_path, rng):
    t = LatentTensor(rng.normal(size=(3, 4, 5)))
    write_latent(t, tmp_path / "z.eklt")
    back = read_latent(tmp_path / "z.eklt")
    np.testing.assert_array_equal(np.asarray(back), np.asarray(t))
    raw = (tmp_path / "z.eklt").read_bytes()
    assert raw[:4] == b"EKLT" and len(raw) == 24 + 8 * 60


def test_latent_container_rejects_garbage(tmp_path):
    (tmp_path / "bad.eklt").write_bytes(b"NOPE" + bytes(40))
    with pytest.raises(ImageFormatError):
        read_latent(tmp_path / "bad.eklt")
    (tmp_path / "short.eklt").write_bytes(b"EK")
    with pytest.raises(OSError):
        read_latent(tmp_path / "short.eklt")
