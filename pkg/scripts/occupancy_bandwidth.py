"""IoU of Gauss / I-Gauss on the analytic sphere as a function of sigma.

With only a few thousand training points the Gaussian bandwidth, not the
optimizer, decides how well the surface is located between samples.
"""
import argparse

import numpy as np

from iinr import harness
from iinr.harness import ExperimentConfig
from iinr.metrics import iou


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--sigmas", type=float, nargs="+", default=[2, 3, 4, 6, 8, 12, 17])
    p.add_argument("--train-samples", type=int, default=4096)
    p.add_argument("--iterations", type=int, default=200)
    p.add_argument("--hidden-layers", type=int, default=None, help="default: task default")
    p.add_argument("--baseline", action="store_true", help="also train the plain Gauss net")
    a = p.parse_args()
    for sigma in a.sigmas:
        cfg = ExperimentConfig(task="occupancy", backbone="gauss", sigma=sigma, dtype="float32",
                               train_samples=a.train_samples, iterations=a.iterations,
                               hidden_layers=a.hidden_layers)
        with harness.thread_limit(cfg):
            task = harness.build_task(cfg, 0)
            model, _ = harness.train_iinr(cfg, task, 0)
            pred = harness.predict(model, task, cfg.steps)
            line = f"sigma {sigma:5.1f}  I-Gauss IoU {iou(pred, task.eval_target):.4f}"
            near = np.abs(np.linalg.norm(task.eval_coords, axis=1) - 0.5) < 0.03
            wrong = (pred[:, 0] > 0.5) != (task.eval_target[:, 0] > 0.5)
            line += f"  errors within 0.03 of surface {wrong[near].sum()}/{wrong.sum()}"
            if a.baseline:
                base, _ = harness.train_single(cfg, task, 0)
                line += f"  Gauss IoU {iou(harness.predict(base, task, None), task.eval_target):.4f}"
        print(line, flush=True)


if __name__ == "__main__":
    main()
