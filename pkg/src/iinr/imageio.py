"""Binary PNM (P5/P6, maxval 255) codec with optional PNG via Pillow."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class PnmError(ValueError):
    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


@dataclass
class ImageBuffer:
    """Row-major, channel-interleaved float image with values in [0, 1]."""

    data: np.ndarray  # (height, width, channels)

    def __post_init__(self):
        if self.data.ndim == 2:
            self.data = self.data[:, :, None]
        if self.data.ndim != 3 or self.data.shape[2] not in (1, 3):
            raise ValueError(f"image data must be (H, W, 1|3), got {self.data.shape}")
        self.data = np.asarray(self.data, dtype=np.float64)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]


_WS = b" \t\n\r\v\f"


def _header_tokens(data: bytes, count: int, i: int) -> tuple[list[tuple[bytes, int]], int]:
    """``count`` whitespace/comment separated tokens starting at ``i``, with
    their absolute offsets, and the offset just past the trailing whitespace."""
    tokens, n = [], len(data)
    while len(tokens) < count:
        while i < n and (data[i] in _WS or data[i] == ord("#")):
            if data[i] == ord("#"):
                while i < n and data[i] not in b"\r\n":
                    i += 1
            else:
                i += 1
        if i >= n:
            raise PnmError("truncated header", i)
        start = i
        while i < n and data[i] not in _WS and data[i] != ord("#"):
            i += 1
        tokens.append((data[start:i], start))
    if i >= n or data[i] not in _WS:
        raise PnmError("expected single whitespace after maxval", i)
    return tokens, i + 1


def decode_pnm(data: bytes) -> ImageBuffer:
    if len(data) < 2 or data[:2] not in (b"P5", b"P6"):
        raise PnmError(f"unsupported magic {data[:2]!r}, expected P5 or P6", 0)
    channels = 1 if data[:2] == b"P5" else 3
    if len(data) < 3 or (data[2] not in _WS and data[2] != ord("#")):
        raise PnmError("expected whitespace after magic number", 2)
    tokens, start = _header_tokens(data, 3, 2)
    values = []
    for tok, off in tokens:
        if not tok.isdigit():
            raise PnmError(f"malformed header field {tok!r}", off)
        values.append(int(tok))
    width, height, maxval = values
    if width < 1 or height < 1:
        raise PnmError(f"bad dimensions {width}x{height}", tokens[0][1])
    if maxval != 255:
        raise PnmError(f"unsupported maxval {maxval}", tokens[2][1])
    expected = width * height * channels
    actual = len(data) - start
    if actual < expected:
        raise PnmError(f"truncated payload: expected {expected} bytes, got {actual}", start)
    pix = np.frombuffer(data, dtype=np.uint8, count=expected, offset=start)
    return ImageBuffer(pix.reshape(height, width, channels) / 255.0)


def to_bytes(img: ImageBuffer) -> np.ndarray:
    # clamp then round half up
    return np.floor(np.clip(img.data, 0.0, 1.0) * 255.0 + 0.5).astype(np.uint8)


def encode_pnm(img: ImageBuffer) -> bytes:
    magic = b"P5" if img.channels == 1 else b"P6"
    header = magic + f"\n{img.width} {img.height}\n255\n".encode("ascii")
    return header + to_bytes(img).tobytes()


def box_downsample(img: ImageBuffer, factor: int) -> ImageBuffer:
    if factor < 1 or img.height % factor or img.width % factor:
        raise ValueError(f"{img.height}x{img.width} not divisible by factor {factor}")
    h, w, c = img.data.shape
    blocks = img.data.reshape(h // factor, factor, w // factor, factor, c)
    return ImageBuffer(blocks.mean(axis=(1, 3)))


def crop(img: ImageBuffer, top: int, left: int, height: int, width: int) -> ImageBuffer:
    if top < 0 or left < 0 or top + height > img.height or left + width > img.width:
        raise ValueError("crop window outside image")
    return ImageBuffer(img.data[top:top + height, left:left + width].copy())


def read_image(path) -> ImageBuffer:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = np.asarray(Image.open(path))
        if arr.ndim == 3 and arr.shape[2] == 4:
            arr = arr[:, :, :3]
        if arr.dtype != np.uint8:
            raise ValueError(f"only 8-bit PNG is supported, got {arr.dtype}")
        return ImageBuffer(arr / 255.0)
    return decode_pnm(path.read_bytes())


def write_image(path, img: ImageBuffer) -> None:
    path = Path(path)
    if path.suffix.lower() == ".png":
        from PIL import Image

        arr = to_bytes(img)
        Image.fromarray(arr[:, :, 0] if img.channels == 1 else arr).save(path)
        return
    path.write_bytes(encode_pnm(img))
