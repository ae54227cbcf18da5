"""Iterative implicit neural representations on NumPy."""
from .backbones import Activation, MlpModel, MlpSpec, build_mlp, flops_per_sample, parameter_count
from .core import IinrModel, LatentField, TrainConfig, build_iinr, reconstruct, train, train_baseline
from .harness import ExperimentConfig, report, run_experiment, sweep_ablation, sweep_steps
from .imageio import ImageBuffer, decode_pnm, encode_pnm, read_image, write_image
from .metrics import MetricReport, iou, psnr, ssim
from .records import RunRecord

__version__ = "0.1.0"
