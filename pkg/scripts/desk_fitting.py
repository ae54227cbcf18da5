"""SIREN vs I-SIREN on the 64x64 fixtures, with a steps sweep per image.

    python scripts/desk_fitting.py --width 128 --hidden-layers 3 --lr 1e-3
    python scripts/desk_fitting.py --task denoise --omega 55
"""
import argparse
import time
from pathlib import Path

from iinr import harness
from iinr.harness import ExperimentConfig

FIXTURES = Path(__file__).resolve().parents[1] / "tests" / "fixtures"


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--images", nargs="+", default=["astronaut", "coffee", "chelsea"])
    p.add_argument("--task", default="fit", choices=["fit", "denoise"])
    p.add_argument("--width", type=int, default=128)
    p.add_argument("--hidden-layers", type=int, default=3)
    p.add_argument("--omega", type=float, default=None)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--lr-final", type=float, default=None)
    p.add_argument("--iterations", type=int, default=2000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--dtype", default="float32")
    p.add_argument("--steps", type=int, nargs="+", default=[1, 2, 3, 4, 8])
    a = p.parse_args()

    print("image      baseline  " + "  ".join(f"s={s:<5d}" for s in a.steps) + "  seconds")
    for name in a.images:
        cfg = ExperimentConfig(task=a.task, image=str(FIXTURES / f"{name}64.ppm"), width=a.width,
                               hidden_layers=a.hidden_layers, omega=a.omega, lr=a.lr,
                               lr_final=a.lr_final if a.lr_final is not None else a.lr / 10,
                               iterations=a.iterations, seeds=[a.seed], dtype=a.dtype)
        t0 = time.perf_counter()
        with harness.thread_limit(cfg):
            task = harness.build_task(cfg, a.seed)
            base, _ = harness.train_single(cfg, task, a.seed)
            model, _ = harness.train_iinr(cfg, task, a.seed)
            b = harness.evaluate(task, harness.predict(base, task, None)).psnr
            it = [harness.evaluate(task, harness.predict(model, task, s)).psnr for s in a.steps]
        cells = "  ".join(f"{v:7.3f}" for v in it)
        print(f"{name:10s} {b:8.3f}  {cells}  {time.perf_counter() - t0:7.0f}", flush=True)


if __name__ == "__main__":
    main()
