"""Signal tasks: image fitting, super-resolution, Poisson denoising and 3-D
occupancy. Coordinates live in [-1, 1]^d on a pixel-centre grid."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .imageio import ImageBuffer, box_downsample
from .tensor import DomainError, ShapeError, Tensor2, gaussian, poisson

TASK_KINDS = ("fit", "sr", "denoise", "occupancy")


@dataclass
class SignalTask:
    kind: str
    train_coords: Tensor2
    train_target: Tensor2
    eval_coords: Tensor2
    eval_target: Tensor2
    channels: int
    coord_dim: int
    train_shape: tuple[int, ...] = ()
    eval_shape: tuple[int, ...] = ()
    scale: int = 1

    def __post_init__(self):
        if self.kind not in TASK_KINDS:
            raise ValueError(f"unknown task kind {self.kind!r}")
        if self.train_coords.shape[0] != self.train_target.shape[0]:
            raise ShapeError("train coords and targets differ in row count")
        if self.eval_coords.shape[0] != self.eval_target.shape[0]:
            raise ShapeError("eval coords and targets differ in row count")


def axis_centres(n: int) -> np.ndarray:
    return (2.0 * np.arange(n) + 1.0) / n - 1.0


def grid_coords(*dims: int) -> Tensor2:
    """Pixel-centre grid in row-major order, one column per axis."""
    axes = np.meshgrid(*[axis_centres(n) for n in dims], indexing="ij")
    return np.stack([a.ravel() for a in axes], axis=1)


def image_rows(img: ImageBuffer) -> Tensor2:
    return img.data.reshape(-1, img.channels)


def make_fit_task(image: ImageBuffer) -> SignalTask:
    if image.height < 1 or image.width < 1:
        raise DomainError("empty image")
    coords = grid_coords(image.height, image.width)
    target = image_rows(image)
    shape = (image.height, image.width)
    return SignalTask("fit", coords, target, coords, target, image.channels, 2, shape, shape)


def make_sr_task(image: ImageBuffer, scale: int = 2) -> SignalTask:
    """Train on the ``scale``-times box-downsampled image, evaluate on the
    full-resolution grid."""
    if scale not in (2, 4):
        raise DomainError(f"scale must be 2 or 4, got {scale}")
    if image.height % scale or image.width % scale:
        raise DomainError(f"{image.height}x{image.width} not divisible by {scale}")
    low = box_downsample(image, scale)
    return SignalTask(
        "sr",
        grid_coords(low.height, low.width), image_rows(low),
        grid_coords(image.height, image.width), image_rows(image),
        image.channels, 2, (low.height, low.width), (image.height, image.width), scale,
    )


def photon_noise(values: np.ndarray, rng, max_photons: float = 30.0, readout: float = 2.0,
                 clamp: bool = True) -> np.ndarray:
    """Poisson shot noise at ``max_photons`` for a unit signal plus Gaussian
    readout noise (std in photons), rescaled back to intensity units."""
    values = np.asarray(values, dtype=np.float64)
    counts = poisson(rng, np.clip(values, 0.0, None) * max_photons)
    noisy = counts + readout * rng.standard_normal(values.shape)
    noisy = noisy / max_photons
    return np.maximum(noisy, 0.0) if clamp else noisy


def make_denoise_task(image: ImageBuffer, rng, max_photons: float = 30.0,
                      readout: float = 2.0) -> SignalTask:
    if image.data.min() < 0 or image.data.max() > 1:
        raise DomainError("image values must lie in [0, 1]")
    coords = grid_coords(image.height, image.width)
    clean = image_rows(image)
    noisy = photon_noise(clean, rng, max_photons, readout)
    shape = (image.height, image.width)
    return SignalTask("denoise", coords, noisy, coords, clean, image.channels, 2, shape, shape)


@dataclass(frozen=True)
class OccupancyShape:
    """``kind`` is one of sphere(radius), torus(major, minor), box(half
    extents) or voxels(dims, bool array)."""

    kind: str
    radius: float = 0.5
    major: float = 0.5
    minor: float = 0.2
    half_extents: tuple[float, float, float] = (0.5, 0.5, 0.5)
    voxels: np.ndarray | None = None

    def __post_init__(self):
        if self.kind not in ("sphere", "torus", "box", "voxels"):
            raise ValueError(f"unknown shape {self.kind!r}")
        if self.kind == "sphere" and not 0 < self.radius <= 1:
            raise ValueError("sphere must fit inside [-1, 1]^3")
        if self.kind == "torus" and not (0 < self.minor < self.major and self.major + self.minor <= 1):
            raise ValueError("torus must fit inside [-1, 1]^3")
        if self.kind == "box" and not all(0 < h <= 1 for h in self.half_extents):
            raise ValueError("box must fit inside [-1, 1]^3")
        if self.kind == "voxels" and (self.voxels is None or self.voxels.ndim != 3):
            raise ValueError("voxel shape needs a 3-D occupancy array")

    def contains(self, pts: np.ndarray) -> np.ndarray:
        x, y, z = pts[:, 0], pts[:, 1], pts[:, 2]
        if self.kind == "sphere":
            return x * x + y * y + z * z <= self.radius**2
        if self.kind == "torus":
            q = np.sqrt(x * x + y * y) - self.major
            return q * q + z * z <= self.minor**2
        if self.kind == "box":
            hx, hy, hz = self.half_extents
            return (np.abs(x) <= hx) & (np.abs(y) <= hy) & (np.abs(z) <= hz)
        dims = self.voxels.shape
        idx = [np.clip(np.floor((pts[:, d] + 1.0) / 2.0 * dims[d]).astype(np.int64), 0, dims[d] - 1)
               for d in range(3)]
        return self.voxels[tuple(idx)]


def stratified_points(rng, count: int) -> np.ndarray:
    """One jittered point per cell of the largest k^3 lattice with
    k^3 <= count, topped up with uniform points."""
    k = int(round(count ** (1.0 / 3.0)))
    while k**3 > count:
        k -= 1
    cells = grid_coords(k, k, k)
    pts = cells + rng.uniform(-1.0, 1.0, cells.shape) / k
    extra = count - k**3
    if extra:
        pts = np.concatenate([pts, rng.uniform(-1.0, 1.0, (extra, 3))])
    return pts


def make_occupancy_task(shape: OccupancyShape, train_samples: int, eval_grid: int,
                        rng) -> SignalTask:
    if train_samples < 1 or eval_grid < 1:
        raise DomainError("sample counts must be >= 1")
    pts = stratified_points(rng, train_samples)
    grid = grid_coords(eval_grid, eval_grid, eval_grid)
    return SignalTask(
        "occupancy",
        pts, shape.contains(pts).astype(np.float64)[:, None],
        grid, shape.contains(grid).astype(np.float64)[:, None],
        1, 3, (train_samples,), (eval_grid,) * 3,
    )


def read_voxels(data: bytes) -> np.ndarray:
    """``VOX nx ny nz\\n`` followed by a row-major bitset, least significant
    bit first within each byte."""
    nl = data.find(b"\n")
    if nl < 0:
        raise ValueError("voxel file missing header line")
    parts = data[:nl].split()
    if len(parts) != 4 or parts[0] != b"VOX":
        raise ValueError(f"bad voxel header {data[:nl]!r}")
    dims = tuple(int(p) for p in parts[1:])
    n = int(np.prod(dims))
    payload = np.frombuffer(data, dtype=np.uint8, offset=nl + 1)
    if payload.size < (n + 7) // 8:
        raise ValueError(f"voxel payload too short: need {(n + 7) // 8} bytes, got {payload.size}")
    bits = np.unpackbits(payload, bitorder="little")[:n]
    return bits.reshape(dims).astype(bool)


def write_voxels(vox: np.ndarray) -> bytes:
    header = "VOX {} {} {}\n".format(*vox.shape).encode("ascii")
    return header + np.packbits(vox.astype(bool).ravel(), bitorder="little").tobytes()


def load_voxel_shape(path) -> OccupancyShape:
    return OccupancyShape("voxels", voxels=read_voxels(Path(path).read_bytes()))
