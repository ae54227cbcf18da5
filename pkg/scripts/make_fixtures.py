"""Cut the 64x64 PNM test fixtures from photos bundled with scikit-image.

Only needed to regenerate tests/fixtures; the package itself does not import
scikit-image.
"""
from pathlib import Path

import numpy as np
from skimage import data

from iinr.imageio import ImageBuffer, crop, encode_pnm, box_downsample

OUT = Path(__file__).resolve().parents[1] / "tests" / "fixtures"

# (name, loader, top, left, crop size before 2x box downsampling)
CROPS = [
    ("astronaut", data.astronaut, 40, 160, 128),
    ("coffee", data.coffee, 120, 220, 128),
    ("chelsea", data.chelsea, 60, 120, 128),
]


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    for name, load, top, left, size in CROPS:
        img = ImageBuffer(np.asarray(load(), dtype=np.float64) / 255.0)
        small = box_downsample(crop(img, top, left, size, size), size // 64)
        path = OUT / f"{name}64.ppm"
        path.write_bytes(encode_pnm(small))
        print(f"wrote {path}")


if __name__ == "__main__":
    main()
