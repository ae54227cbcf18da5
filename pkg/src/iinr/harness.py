"""Experiment orchestration: configs, runs, sweeps and result tables.

Each run directory holds ``record.json``, ``metrics.csv``, ``recon.p?m``,
``residual.p?m`` and ``checkpoint.bin``. Wall time lives only in the JSON
record so that ``metrics.csv`` is byte-identical across repeated runs.
"""
from __future__ import annotations

import contextlib
import csv
import io
import json
import logging
import os
import statistics
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import backbones as bb
from . import core, metrics
from .backbones import Activation, MlpSpec
from .core import IinrModel, LatentField, TrainConfig
from .imageio import ImageBuffer, encode_pnm, read_image
from .records import RunRecord
from .tasks import OccupancyShape, SignalTask, load_voxel_shape
from .tensor import make_rng

log = logging.getLogger(__name__)

BACKBONES = ("siren", "wire", "gauss")
ABLATION_AXES = ("latent_mode", "fusion_mode", "module_removal", "depth")
REMOVALS = ("none", "feedback", "fuse", "both")

# per-task activation hyperparameters of the iterative models
TASK_DEFAULTS = {
    "fit": {"siren": {"omega": 52.0}, "wire": {"omega": 7.0, "sigma": 13.0}, "gauss": {"sigma": 18.0}},
    "sr": {"siren": {"omega": 30.0}, "wire": {"omega": 4.0, "sigma": 10.0}, "gauss": {"sigma": 11.0}},
    "denoise": {"siren": {"omega": 55.0}, "wire": {"omega": 10.0, "sigma": 16.0}, "gauss": {"sigma": 18.0}},
    "occupancy": {"siren": {"omega": 55.0}, "wire": {"omega": 10.0, "sigma": 20.0}, "gauss": {"sigma": 17.0}},
}
TASK_ITERATIONS = {"fit": 2000, "sr": 2000, "denoise": 2000, "occupancy": 200}
# (width, hidden_layers); denoising reuses the fitting backbone
TASK_ARCH = {"fit": (300, 3), "sr": (256, 2), "denoise": (300, 3), "occupancy": (256, 2)}

CSV_FIELDS = ["label", "seed", "steps", "psnr", "ssim", "iou", "mse",
              "parameter_count", "backbone_flops", "step_flops", "failed"]


@dataclass
class ExperimentConfig:
    task: str = "fit"
    image: str | None = None
    scale: int = 2
    max_photons: float = 30.0
    readout: float = 2.0
    shape: str = "sphere"
    voxel_path: str | None = None
    train_samples: int = 4096
    eval_grid: int = 64
    backbone: str = "siren"
    omega: float | None = None
    sigma: float | None = None
    width: int | None = None
    hidden_layers: int | None = None
    iterative: bool = True
    baseline: bool = True
    steps: int = 2
    epsilon: float = 0.1
    fusion: str = "multiplicative"
    latent: str = "noise"
    removal: str = "inference"
    lr: float = 1e-3
    lr_final: float = 1e-4
    iterations: int | None = None
    batch_size: int | None = None
    t_per_coordinate: bool = True
    seeds: list[int] = field(default_factory=lambda: [0])
    dtype: str = "float64"
    deterministic: bool = True
    threads: int | None = None
    output_dir: str = "runs"
    name: str | None = None

    def __post_init__(self):
        if self.task not in TASK_ITERATIONS:
            raise ValueError(f"unknown task {self.task!r}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"unknown backbone {self.backbone!r}")
        if self.removal not in ("inference", "retrain"):
            raise ValueError(f"unknown removal mode {self.removal!r}")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if not self.seeds:
            raise ValueError("need at least one seed")
        self.seeds = [int(s) for s in self.seeds]
        hyper = TASK_DEFAULTS[self.task][self.backbone]
        if self.omega is None:
            self.omega = hyper.get("omega", 30.0)
        if self.sigma is None:
            self.sigma = hyper.get("sigma", 10.0)
        if self.width is None:
            self.width = TASK_ARCH[self.task][0]
        if self.hidden_layers is None:
            self.hidden_layers = TASK_ARCH[self.task][1]
        if self.iterations is None:
            self.iterations = TASK_ITERATIONS[self.task]

    @property
    def run_name(self) -> str:
        return self.name or f"{self.task}_{self.backbone}"

    def activation(self) -> Activation:
        kind = {"siren": "sine", "wire": "gabor", "gauss": "gauss"}[self.backbone]
        return Activation(kind, omega=self.omega, sigma=self.sigma)

    def backbone_spec(self, in_dim: int, out_dim: int) -> MlpSpec:
        return MlpSpec(in_dim, out_dim, self.width, self.hidden_layers, self.activation(),
                       dtype=self.dtype)

    def train_config(self, seed: int) -> TrainConfig:
        return TrainConfig(iterations=self.iterations, lr=self.lr, lr_final=self.lr_final,
                           epsilon=self.epsilon, seed=seed, eval_steps=self.steps,
                           deterministic=self.deterministic, batch_size=self.batch_size,
                           t_per_coordinate=self.t_per_coordinate)

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config fields: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def from_json(cls, path) -> "ExperimentConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


def build_task(cfg: ExperimentConfig, seed: int) -> SignalTask:
    from . import tasks
    if cfg.task == "occupancy":
        shape = load_voxel_shape(cfg.voxel_path) if cfg.shape == "voxels" else OccupancyShape(cfg.shape)
        return tasks.make_occupancy_task(shape, cfg.train_samples, cfg.eval_grid,
                                         make_rng(seed + 17))
    if cfg.image is None:
        raise ValueError(f"task {cfg.task!r} needs an image")
    img = read_image(cfg.image)
    if cfg.task == "fit":
        return tasks.make_fit_task(img)
    if cfg.task == "sr":
        return tasks.make_sr_task(img, cfg.scale)
    return tasks.make_denoise_task(img, make_rng(seed + 7), cfg.max_photons, cfg.readout)


def latent_for(cfg: ExperimentConfig, task: SignalTask, seed: int, mode: str | None = None) -> LatentField:
    return LatentField(mode or cfg.latent, seed, task.eval_shape, task.channels)


def evaluate(task: SignalTask, pred: np.ndarray) -> metrics.MetricReport:
    if task.kind == "occupancy":
        return metrics.MetricReport(iou=metrics.iou(pred, task.eval_target),
                                    mse=metrics.mse(pred, task.eval_target))
    h, w = task.eval_shape
    return metrics.image_report(pred, task.eval_target, h, w)


@contextlib.contextmanager
def thread_limit(cfg: ExperimentConfig):
    env = os.environ.get("IINR_THREADS")
    n = int(env) if env else cfg.threads
    if cfg.deterministic and n is None:
        n = 1
    if n is None:
        yield
    else:
        with threadpool_limits(limits=n):
            yield


def _build(cfg: ExperimentConfig, task: SignalTask, seed: int, **kw) -> IinrModel:
    spec = cfg.backbone_spec(task.coord_dim, task.channels)
    spec = replace(spec, hidden_layers=kw.pop("hidden_layers", spec.hidden_layers))
    return core.build_iinr(spec, latent_for(cfg, task, seed, kw.pop("latent", None)), seed,
                           fusion=kw.pop("fusion", cfg.fusion), epsilon=cfg.epsilon, **kw)


def _flops(model) -> dict:
    if isinstance(model, IinrModel):
        back = bb.flops_per_sample(model.backbone)
        return {"backbone": back, "per_step": model.step_flops(),
                "step_ratio": model.step_flops() / back}
    return {"backbone": bb.flops_per_sample(model), "per_step": 0, "step_ratio": 0.0}


def _param_count(model) -> int:
    if isinstance(model, IinrModel):
        return sum(bb.parameter_count(m) for m in model.modules())
    return bb.parameter_count(model)


def disable_modules(model: IinrModel, removal: str) -> IinrModel:
    """View of a trained model with FeedbackNet and/or FuseNet switched off."""
    return IinrModel(model.backbone,
                     None if removal in ("feedback", "both") else model.feedback,
                     None if removal in ("fuse", "both") else model.fuse,
                     model.latent, model.fusion, model.epsilon)


def predict(model, task: SignalTask, steps: int | None) -> np.ndarray:
    coords = task.eval_coords.astype(bb.real_dtype(
        model.backbone.spec if isinstance(model, IinrModel) else model.spec))
    if isinstance(model, IinrModel):
        return core.reconstruct(model, coords, steps).astype(np.float64)
    return model.forward(coords).astype(np.float64)


def _score(record: RunRecord, model, task: SignalTask, steps_list, prefix: str = "") -> dict:
    preds = {}
    for s in steps_list:
        key = f"{prefix}steps={s}" if s is not None else (prefix or "single")
        if record.failed:
            record.final[key] = {}
            continue
        pred = predict(model, task, s)
        preds[key] = pred
        record.final[key] = evaluate(task, pred).as_dict()
    return preds


def train_iinr(cfg: ExperimentConfig, task: SignalTask, seed: int, label: str = "iinr",
               **kw) -> tuple[IinrModel, RunRecord]:
    model = _build(cfg, task, seed, **kw)
    rec = core.train(model, task, cfg.train_config(seed))
    rec.label = label
    rec.config = cfg.to_dict()
    rec.parameter_count = _param_count(model)
    rec.flops = _flops(model)
    return model, rec


def train_single(cfg: ExperimentConfig, task: SignalTask, seed: int) -> tuple[bb.MlpModel, RunRecord]:
    model = bb.build_mlp(cfg.backbone_spec(task.coord_dim, task.channels), seed)
    rec = core.train_baseline(model, task, cfg.train_config(seed))
    rec.label = "baseline"
    rec.config = cfg.to_dict()
    rec.parameter_count = _param_count(model)
    rec.flops = _flops(model)
    return model, rec


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def metrics_rows(records: list[RunRecord]) -> list[dict]:
    rows = []
    for r in records:
        for key, m in r.final.items():
            # keys: "single", "steps=N" or "<variant>:steps=N"
            head, sep, steps = key.rpartition("steps=")
            if not sep:
                head, steps = ("" if key == "single" else key + ":"), ""
            label = f"{r.label}:{head[:-1]}" if head else r.label
            rows.append({"label": label, "seed": r.seed, "steps": steps,
                         "psnr": m.get("psnr"), "ssim": m.get("ssim"), "iou": m.get("iou"),
                         "mse": m.get("mse"), "parameter_count": r.parameter_count,
                         "backbone_flops": r.flops.get("backbone"),
                         "step_flops": r.flops.get("per_step"), "failed": int(r.failed)})
    return rows


def write_csv(rows: list[dict], path, columns=CSV_FIELDS) -> None:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: _fmt(row.get(k)) for k in columns})
    Path(path).write_text(buf.getvalue())


def write_records(records: list[RunRecord], path) -> None:
    Path(path).write_text("[\n" + ",\n".join(r.to_json() for r in records) + "\n]\n")


def read_records(path) -> list[RunRecord]:
    data = json.loads(Path(path).read_text())
    data = data if isinstance(data, list) else [data]
    return [RunRecord(**d) for d in data]


def _image_outputs(task: SignalTask, pred: np.ndarray, out: Path) -> None:
    if task.kind == "occupancy":
        n = task.eval_shape[0]
        mid = n // 2
        # central slice perpendicular to the last axis
        p = pred.reshape(n, n, n)[:, :, mid]
        g = task.eval_target.reshape(n, n, n)[:, :, mid]
        shape = (n, n, 1)
    else:
        h, w = task.eval_shape
        p, g = pred, task.eval_target
        shape = (h, w, task.channels)
    p = np.clip(p, 0.0, 1.0).reshape(shape)
    g = np.asarray(g, dtype=np.float64).reshape(shape)
    ext = "pgm" if shape[2] == 1 else "ppm"
    (out / f"recon.{ext}").write_bytes(encode_pnm(ImageBuffer(p)))
    (out / f"residual.{ext}").write_bytes(encode_pnm(ImageBuffer(np.abs(p - g))))


def seed_dir(cfg: ExperimentConfig, seed: int, sub: str = "") -> Path:
    root = Path(os.environ.get("IINR_OUTPUT_DIR") or cfg.output_dir)
    d = root / cfg.run_name / (sub or "") / f"seed{seed}"
    d.mkdir(parents=True, exist_ok=True)
    return d


def run_experiment(cfg: ExperimentConfig) -> list[RunRecord]:
    """Train the baseline and/or iterative model for every seed and persist
    records, metrics, images and a checkpoint per seed."""
    out_records = []
    with thread_limit(cfg):
        for seed in cfg.seeds:
            task = build_task(cfg, seed)
            out = seed_dir(cfg, seed)
            recs, best = [], None
            if cfg.baseline:
                model, rec = train_single(cfg, task, seed)
                preds = _score(rec, model, task, [None])
                recs.append(rec)
                if not cfg.iterative:
                    best = preds.get("single")
                    (out / "checkpoint.bin").write_bytes(bb.pack_checkpoint({"backbone": model}))
            if cfg.iterative:
                model, rec = train_iinr(cfg, task, seed)
                preds = _score(rec, model, task, [cfg.steps])
                recs.append(rec)
                best = preds.get(f"steps={cfg.steps}")
                (out / "checkpoint.bin").write_bytes(core.save_iinr(model))
            for r in recs:
                if r.failed:
                    log.warning("seed %d %s failed: %s", seed, r.label, r.message)
            write_records(recs, out / "record.json")
            write_csv(metrics_rows(recs), out / "metrics.csv")
            if best is not None:
                _image_outputs(task, best, out)
            out_records.extend(recs)
    return out_records


def sweep_steps(cfg: ExperimentConfig, steps_list=(1, 2, 4, 8, 16)) -> list[RunRecord]:
    """Train once per seed, then reconstruct at every ``steps`` value."""
    records = []
    with thread_limit(cfg):
        for seed in cfg.seeds:
            task = build_task(cfg, seed)
            model, rec = train_iinr(cfg, task, seed)
            _score(rec, model, task, list(steps_list))
            out = seed_dir(cfg, seed, "steps")
            write_records([rec], out / "record.json")
            write_csv(metrics_rows([rec]), out / "metrics.csv")
            records.append(rec)
    return records


def sweep_ablation(cfg: ExperimentConfig, axis: str, values=None) -> list[RunRecord]:
    """One record per (axis value, seed).

    With ``cfg.removal == "inference"`` the module-removal axis trains the full
    model once and switches modules off at reconstruction time; ``"retrain"``
    trains a separate model per removal setting.
    """
    if axis not in ABLATION_AXES:
        raise ValueError(f"unknown ablation axis {axis!r}")
    defaults = {"latent_mode": core.LATENT_MODES, "fusion_mode": core.FUSION_MODES,
                "module_removal": REMOVALS, "depth": (1, 2, 3, 4)}
    values = list(values if values is not None else defaults[axis])
    records = []
    with thread_limit(cfg):
        for seed in cfg.seeds:
            task = build_task(cfg, seed)
            recs = []
            if axis == "module_removal" and cfg.removal == "inference":
                model, rec = train_iinr(cfg, task, seed, label="module_removal")
                for v in values:
                    if v not in REMOVALS:
                        raise ValueError(f"unknown removal {v!r}")
                    _score(rec, disable_modules(model, v), task, [cfg.steps], prefix=f"{v}:")
                recs.append(rec)
            else:
                for v in values:
                    kw = {}
                    if axis == "latent_mode":
                        kw["latent"] = v
                    elif axis == "fusion_mode":
                        kw["fusion"] = v
                    elif axis == "depth":
                        kw["hidden_layers"] = int(v)
                    else:
                        kw["feedback"] = v not in ("feedback", "both")
                        kw["fuse"] = v not in ("fuse", "both")
                    model, rec = train_iinr(cfg, task, seed, label=f"{axis}={v}", **kw)
                    _score(rec, model, task, [cfg.steps])
                    recs.append(rec)
            out = seed_dir(cfg, seed, f"ablate_{axis}")
            write_records(recs, out / "record.json")
            write_csv(metrics_rows(recs), out / "metrics.csv")
            records.extend(recs)
    return records


SUMMARY_METRICS = ("psnr", "ssim", "iou", "mse")


def summarize(records: list[RunRecord]) -> list[dict]:
    """Mean and sample standard deviation across seeds for every
    (label, steps, metric); std is None for a single seed."""
    groups: dict[tuple, list[float]] = {}
    for row in metrics_rows(records):
        for m in SUMMARY_METRICS:
            v = row[m]
            if v is not None and not row["failed"]:
                groups.setdefault((row["label"], row["steps"], m), []).append(float(v))
    out = []
    for (label, steps, m), vals in groups.items():
        out.append({"label": label, "steps": steps, "metric": m, "n": len(vals),
                    "mean": statistics.fmean(vals),
                    "std": statistics.stdev(vals) if len(vals) > 1 else None})
    return out


def report(records: list[RunRecord], out_dir) -> list[dict]:
    if not records:
        raise ValueError("report needs at least one record")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = summarize(records)
    write_csv(rows, out / "summary.csv", ["label", "steps", "metric", "n", "mean", "std"])
    lines = []
    for r in rows:
        tag = r["label"] + (f" steps={r['steps']}" if r["steps"] else "")
        spread = f" ± {r['std']:.4f}" if r["std"] is not None else ""
        lines.append(f"{tag:32s} {r['metric']:5s} {r['mean']:.4f}{spread} (n={r['n']})")
    (out / "summary.txt").write_text("\n".join(lines) + "\n")
    return rows
