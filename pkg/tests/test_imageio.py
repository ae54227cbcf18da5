import numpy as np
import pytest
from hypothesis import given, strategies as st

from iinr.imageio import (ImageBuffer, PnmError, box_downsample, crop, decode_pnm, encode_pnm,
                          read_image, to_bytes, write_image)

from conftest import FIXTURE_NAMES, FIXTURES


def test_decode_p6_by_hand():
    img = decode_pnm(b"P6\n2 1\n255\n" + bytes([255, 0, 0, 0, 128, 255]))
    assert (img.height, img.width, img.channels) == (1, 2, 3)
    assert img.data[0, 1, 1] == 128 / 255


def test_decode_p5_with_comments():
    img = decode_pnm(b"P5 # magic\n# size next\n2 2 # dims\n255\n\x00\x40\x80\xff")
    assert img.channels == 1
    assert np.array_equal(to_bytes(img).ravel(), [0, 64, 128, 255])


@pytest.mark.parametrize("data, offset", [
    (b"P3\n1 1\n255\n000", 0),
    (b"P50\n1 1\n255\n\x00", 2),
    (b"P5\n1 1\n65535\n\x00\x00", 7),
    (b"P5\n1 x\n255\n\x00", 5),
    (b"P5\n1 1", 6),
])
def test_decode_errors(data, offset):
    with pytest.raises(PnmError) as e:
        decode_pnm(data)
    assert e.value.offset == offset


def test_truncated_payload_message():
    with pytest.raises(PnmError, match="expected 12 bytes, got 5"):
        decode_pnm(b"P6\n2 2\n255\n" + bytes(5))


def test_encode_header_and_rounding():
    img = ImageBuffer(np.array([[[0.5 / 255], [1.5 / 255], [2.0], [-1.0]]]))
    data = encode_pnm(img)
    assert data.startswith(b"P5\n4 1\n255\n")
    assert list(data[-4:]) == [1, 2, 255, 0]  # half rounds up, out of range clamps


@given(st.integers(1, 6), st.integers(1, 6), st.sampled_from([1, 3]), st.randoms())
def test_roundtrip_bytes(h, w, c, r):
    raw = np.array([r.randrange(256) for _ in range(h * w * c)], np.uint8).reshape(h, w, c)
    img = ImageBuffer(raw / 255.0)
    back = decode_pnm(encode_pnm(img))
    assert np.array_equal(to_bytes(back), raw)
    assert encode_pnm(back) == encode_pnm(img)


def test_fixtures_decode():
    for name in FIXTURE_NAMES:
        img = read_image(FIXTURES / f"{name}64.ppm")
        assert (img.height, img.width, img.channels) == (64, 64, 3)
        assert 0.0 <= img.data.min() and img.data.max() <= 1.0


def test_png_roundtrip(tmp_path):
    pytest.importorskip("PIL")
    img = read_image(FIXTURES / "coffee64.ppm")
    write_image(tmp_path / "c.png", img)
    assert np.array_equal(read_image(tmp_path / "c.png").data, img.data)


def test_box_downsample_by_hand():
    data = np.array([[0, 1], [1, 0]], float)
    tiled = np.tile(data, (2, 2))
    low = box_downsample(ImageBuffer(tiled), 2)
    assert np.array_equal(low.data[:, :, 0], np.full((2, 2), 0.5))
    with pytest.raises(ValueError):
        box_downsample(ImageBuffer(np.zeros((3, 4))), 2)


def test_crop():
    img = ImageBuffer(np.arange(20, dtype=float).reshape(4, 5) / 20)
    assert np.array_equal(crop(img, 1, 2, 2, 3).data[:, :, 0], img.data[1:3, 2:5, 0])
    with pytest.raises(ValueError):
        crop(img, 3, 0, 2, 2)


def test_buffer_rejects_bad_channels():
    with pytest.raises(ValueError):
        ImageBuffer(np.zeros((2, 2, 2)))
