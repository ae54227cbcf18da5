"""Iterative INR: a backbone evaluated once per reconstruction, plus a small
feedback network and fuse network applied at every refinement step.

Training draws ``t ~ U(0, 1)`` and ``n ~ N(0, I)``, corrupts the target
towards a fixed latent field ``z`` and regresses the clean target. Inference
walks ``t`` from 1 down to 0 in ``steps`` equal increments, mixing the
network's clean-signal estimate into the running state.
"""
from __future__ import annotations

import logging
import math
import time
from dataclasses import dataclass, field

import numpy as np

from . import backbones as bb
from .backbones import Activation, MlpModel, MlpSpec
from .records import RunRecord
from .tensor import Adam, DomainError, ShapeError, Tensor2, gaussian, make_rng

TRAIN_STREAM = 1_000_003
LATENT_STREAM = 2_000_029

log = logging.getLogger(__name__)

LATENT_MODES = ("noise", "ones", "zeros")
FUSION_MODES = ("multiplicative", "adaptive")
FEEDBACK_WIDTH = 30
FUSE_WIDTH = 100
MAX_FULL_BATCH = 256 * 256
MINI_BATCH = 2**16


@dataclass
class LatentField:
    """Fixed initial state ``z``. Noise is drawn once on a pixel-centre grid
    of ``base_resolution`` and multilinearly interpolated at query points."""

    mode: str = "noise"
    seed: int = 0
    base_resolution: tuple[int, ...] = (64, 64)
    channels: int = 3
    _field: np.ndarray | None = field(default=None, repr=False, compare=False)

    def __post_init__(self):
        if self.mode not in LATENT_MODES:
            raise ValueError(f"unknown latent mode {self.mode!r}")
        self.base_resolution = tuple(int(r) for r in self.base_resolution)

    def base_field(self) -> np.ndarray:
        if self._field is None:
            shape = (*self.base_resolution, self.channels)
            # own stream so z never reuses the bits behind the weight init
            rng = make_rng(self.seed + LATENT_STREAM)
            self._field = rng.standard_normal(int(np.prod(shape))).reshape(shape)
        return self._field

    def to_dict(self) -> dict:
        return {"mode": self.mode, "seed": self.seed,
                "base_resolution": list(self.base_resolution), "channels": self.channels}


def _grid_index(x: np.ndarray, n: int) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    # inverse of the pixel-centre map (2i + 1) / n - 1
    u = ((x + 1.0) * n - 1.0) / 2.0
    r = np.rint(u)
    u = np.where(np.abs(u - r) < 1e-9, r, u)
    u = np.clip(u, 0.0, n - 1.0)
    i0 = np.minimum(np.floor(u).astype(np.int64), n - 1)
    i1 = np.minimum(i0 + 1, n - 1)
    return i0, i1, u - i0


def sample_latent(latent: LatentField, coords: Tensor2) -> Tensor2:
    rows = coords.shape[0]
    if latent.mode == "zeros":
        return np.zeros((rows, latent.channels))
    if latent.mode == "ones":
        return np.ones((rows, latent.channels))
    base = latent.base_field()
    dims = latent.base_resolution
    if coords.shape[1] != len(dims):
        raise ShapeError(f"{coords.shape[1]}-D coords for a {len(dims)}-D latent grid")
    parts = [_grid_index(coords[:, d], dims[d]) for d in range(len(dims))]
    out = np.zeros((rows, latent.channels))
    for corner in range(2 ** len(dims)):
        idx, w = [], np.ones(rows)
        for d, (i0, i1, frac) in enumerate(parts):
            hi = (corner >> d) & 1
            idx.append(i1 if hi else i0)
            w = w * (frac if hi else 1.0 - frac)
        if np.any(w):
            out += w[:, None] * base[tuple(idx)]
    return out


def _check_t(t) -> None:
    if not np.all((0.0 <= np.asarray(t)) & (np.asarray(t) <= 1.0)):
        raise DomainError(f"t outside [0, 1]: {t}")


def degrade(target: Tensor2, z: Tensor2, t) -> Tensor2:
    """``(1 - t) * target + t * z``; ``t`` is a scalar or a (rows, 1) column."""
    if target.shape != z.shape:
        raise ShapeError(f"target {target.shape} vs latent {z.shape}")
    _check_t(t)
    if np.isscalar(t) and t == 0.0:
        return target.copy()
    if np.isscalar(t) and t == 1.0:
        return z.copy()
    return (1.0 - t) * target + t * z


def make_training_state(target: Tensor2, z: Tensor2, t, n: Tensor2,
                        epsilon: float) -> Tensor2:
    g = degrade(target, z, t)
    if n.shape != g.shape:
        raise ShapeError(f"noise {n.shape} vs target {g.shape}")
    if epsilon == 0.0 or (np.isscalar(t) and t == 0.0):
        return g
    return g + (epsilon * t) * n


@dataclass
class IinrModel:
    backbone: MlpModel
    feedback: MlpModel | None
    fuse: MlpModel | None
    latent: LatentField
    fusion: str = "multiplicative"
    epsilon: float = 0.1
    backbone_evals: int = 0
    flops: int = 0
    _cache: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.fusion not in FUSION_MODES:
            raise ValueError(f"unknown fusion mode {self.fusion!r}")

    @property
    def channels(self) -> int:
        return self.backbone.spec.out_dim

    @property
    def coord_dim(self) -> int:
        return self.backbone.spec.in_dim

    @property
    def feedback_dim(self) -> int:
        return self.fuse.spec.in_dim - self.channels if self.fuse is not None else 0

    def modules(self) -> list[MlpModel]:
        return [m for m in (self.backbone, self.feedback, self.fuse) if m is not None]

    def parameters(self) -> list[np.ndarray]:
        return [p for m in self.modules() for p in m.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for m in self.modules() for g in m.gradients()]

    def run_backbone(self, coords: Tensor2) -> Tensor2:
        self.backbone_evals += 1
        self.flops += bb.flops_per_sample(self.backbone) * coords.shape[0]
        return self.backbone.forward(coords)

    def step_flops(self) -> int:
        """Per-coordinate cost of one refinement step (backbone excluded)."""
        return sum(bb.flops_per_sample(m) for m in (self.feedback, self.fuse) if m is not None) \
            + self.channels

    def forward(self, coords: Tensor2, state: Tensor2, t: float,
                b: Tensor2 | None = None) -> Tensor2:
        if coords.shape[0] != state.shape[0]:
            raise ShapeError(f"{coords.shape[0]} coords vs {state.shape[0]} state rows")
        if state.shape[1] != self.channels:
            raise ShapeError(f"state has {state.shape[1]} channels, model {self.channels}")
        _check_t(t)
        if b is None:
            b = self.run_backbone(coords)
        rows = coords.shape[0]
        self.flops += self.step_flops() * rows
        if self.fuse is None:
            self._cache = {"b": b, "zf": None, "t": t}
            return b
        if self.feedback is not None:
            fb_in = np.concatenate([state, coords, np.broadcast_to(t, (rows, 1))], axis=1)
            f = self.feedback.forward(fb_in)
        else:
            f = np.zeros((rows, self.feedback_dim), dtype=b.dtype)
        zf = self.fuse.forward(np.concatenate([f, b], axis=1))
        self._cache = {"b": b, "zf": zf, "t": t}
        if self.fusion == "multiplicative":
            return zf * b
        return b * t + zf * (1.0 - t)

    def backward(self, grad_out: Tensor2) -> None:
        b, zf, t = self._cache["b"], self._cache["zf"], self._cache["t"]
        if zf is None:
            self.backbone.backward(grad_out)
            return
        if self.fusion == "multiplicative":
            g_zf, g_b = grad_out * b, grad_out * zf
        else:
            g_zf, g_b = grad_out * (1.0 - t), grad_out * t
        g_fuse_in = self.fuse.backward(g_zf, need_input_grad=True)
        fd = self.feedback_dim
        g_b = g_b + g_fuse_in[:, fd:]
        if self.feedback is not None:
            self.feedback.backward(g_fuse_in[:, :fd])
        self.backbone.backward(g_b)


def build_iinr(backbone_spec: MlpSpec, latent: LatentField, seed: int = 0,
               fusion: str = "multiplicative", epsilon: float = 0.1,
               feedback: bool = True, fuse: bool = True,
               feedback_width: int = FEEDBACK_WIDTH, fuse_width: int = FUSE_WIDTH,
               gate_bias: float | None = None) -> IinrModel:
    """Backbone plus two-layer feedback (``C+d+1 -> 30 -> C``) and fuse
    (``2C -> 100 -> C``) networks sharing the backbone's nonlinearity.

    Under multiplicative fusion the fuse output bias is shifted by
    ``gate_bias`` (default 1) so the untrained gate sits near 1 and training
    starts from roughly the plain backbone.
    """
    c, d = backbone_spec.out_dim, backbone_spec.in_dim
    act, dt = backbone_spec.activation, backbone_spec.dtype
    fb_spec = MlpSpec(c + d + 1, c, feedback_width, 0, act, dtype=dt)
    fu_spec = MlpSpec(c + c, c, fuse_width, 0, act, dtype=dt)
    rng = np.random.default_rng(seed)
    backbone = bb.init_mlp(backbone_spec, rng, seed)
    fb = bb.init_mlp(fb_spec, rng, seed)
    fu = bb.init_mlp(fu_spec, rng, seed)
    if gate_bias is None:
        gate_bias = 1.0 if fusion == "multiplicative" else 0.0
    fu.layers[-1].bias += gate_bias
    if latent.channels != c:
        raise ShapeError(f"latent has {latent.channels} channels, backbone {c}")
    return IinrModel(backbone, fb if feedback else None, fu if fuse else None, latent,
                     fusion, epsilon)


def added_parameter_ratio(model: IinrModel) -> float:
    extra = sum(bb.parameter_count(m) for m in (model.feedback, model.fuse) if m is not None)
    return extra / bb.parameter_count(model.backbone)


def model_forward(model: IinrModel, coords: Tensor2, state: Tensor2, t: float) -> Tensor2:
    return model.forward(coords, state, t)


def reconstruct(model: IinrModel, coords: Tensor2, steps: int, z: Tensor2 | None = None) -> Tensor2:
    """Run ``steps`` refinement updates from ``z`` (default: the model's latent
    field at ``coords``), reusing one backbone evaluation."""
    if steps < 1:
        raise DomainError("steps must be >= 1")
    g = sample_latent(model.latent, coords) if z is None else z
    b = model.run_backbone(coords)
    for k in range(steps):
        t = (steps - k) / steps
        est = model.forward(coords, g, t, b=b)
        ratio = 1.0 / (steps - k)  # delta / t
        g = est if ratio == 1.0 else ratio * est + (1.0 - ratio) * g
    return g


@dataclass
class TrainConfig:
    iterations: int = 2000
    lr: float = 1e-3
    lr_final: float = 1e-4
    epsilon: float = 0.1
    seed: int = 0
    eval_every: int = 0
    eval_steps: int = 2
    deterministic: bool = True
    batch_size: int | None = None
    t_per_coordinate: bool = True

    def __post_init__(self):
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be >= 0")


def lr_at(cfg: TrainConfig, it: int) -> float:
    """Cosine decay from ``lr`` to ``lr_final`` over the run."""
    frac = it / max(cfg.iterations - 1, 1)
    return cfg.lr_final + 0.5 * (cfg.lr - cfg.lr_final) * (1.0 + math.cos(math.pi * frac))


def _batch_rows(cfg: TrainConfig, n: int, rng) -> np.ndarray | None:
    size = cfg.batch_size or (n if n <= MAX_FULL_BATCH else MINI_BATCH)
    if size >= n:
        return None
    return rng.choice(n, size=size, replace=False)


def _psnr(pred: Tensor2, target: Tensor2) -> float:
    from .metrics import psnr
    return psnr(pred, target)


def _fit(params, grads, step_fn, eval_fn, task, cfg: TrainConfig, record: RunRecord,
         rng) -> RunRecord:
    opt = Adam(params, grads, lr=cfg.lr)
    t0 = time.perf_counter()
    n = task.train_coords.shape[0]
    for it in range(cfg.iterations):
        rows = _batch_rows(cfg, n, rng)
        loss = step_fn(rows)
        if not math.isfinite(loss):
            record.failed = True
            record.message = f"non-finite loss at iteration {it}"
            log.warning(record.message)
            break
        opt.step(lr_at(cfg, it))
        record.losses.append(loss)
        if cfg.eval_every and ((it + 1) % cfg.eval_every == 0 or it + 1 == cfg.iterations):
            pred = eval_fn()
            record.checkpoints.append({"iteration": it + 1, "loss": loss,
                                       "psnr": _psnr(pred, task.eval_target)})
    record.wall_time = time.perf_counter() - t0
    return record


def train(model: IinrModel, task, cfg: TrainConfig) -> RunRecord:
    """Fit ``model`` to ``task`` with the corrupt-and-regress objective."""
    rng = make_rng(cfg.seed + TRAIN_STREAM)
    coords, target = task.train_coords, task.train_target
    dtype = bb.real_dtype(model.backbone.spec)
    coords, target = coords.astype(dtype), target.astype(dtype)
    z = sample_latent(model.latent, task.train_coords).astype(dtype)
    model.epsilon = cfg.epsilon
    record = RunRecord(seed=cfg.seed)

    def step(rows):
        x, y, zz = (coords, target, z) if rows is None else (coords[rows], target[rows], z[rows])
        t = rng.uniform(size=(y.shape[0], 1)) if cfg.t_per_coordinate else float(rng.uniform())
        t = t.astype(dtype) if not np.isscalar(t) else t
        noise = gaussian(rng, *y.shape).astype(dtype)
        state = make_training_state(y, zz, t, noise, cfg.epsilon)
        out = model.forward(x, state, t)
        diff = out - y
        loss = float(np.mean(diff * diff))
        model.backward((2.0 / diff.size) * diff)
        return loss

    def evaluate():
        return reconstruct(model, task.eval_coords.astype(dtype), cfg.eval_steps)

    return _fit(model.parameters(), model.gradients(), step, evaluate, task, cfg, record, rng)


def train_baseline(backbone: MlpModel, task, cfg: TrainConfig) -> RunRecord:
    """Plain single-shot INR fit with mean squared error."""
    rng = make_rng(cfg.seed + TRAIN_STREAM)
    dtype = bb.real_dtype(backbone.spec)
    coords, target = task.train_coords.astype(dtype), task.train_target.astype(dtype)
    record = RunRecord(seed=cfg.seed)

    def step(rows):
        x, y = (coords, target) if rows is None else (coords[rows], target[rows])
        diff = backbone.forward(x) - y
        loss = float(np.mean(diff * diff))
        backbone.backward((2.0 / diff.size) * diff)
        return loss

    def evaluate():
        return backbone.forward(task.eval_coords.astype(dtype))

    return _fit(backbone.parameters(), backbone.gradients(), step, evaluate, task, cfg, record, rng)


def save_iinr(model: IinrModel) -> bytes:
    models = {"backbone": model.backbone}
    if model.feedback is not None:
        models["feedback"] = model.feedback
    if model.fuse is not None:
        models["fuse"] = model.fuse
    meta = {"fusion": model.fusion, "epsilon": model.epsilon, "latent": model.latent.to_dict()}
    return bb.pack_checkpoint(models, meta)


def load_iinr(data: bytes) -> IinrModel:
    models, meta = bb.unpack_checkpoint(data)
    lat = meta["latent"]
    latent = LatentField(lat["mode"], lat["seed"], tuple(lat["base_resolution"]), lat["channels"])
    return IinrModel(models["backbone"], models.get("feedback"), models.get("fuse"), latent,
                     meta["fusion"], meta["epsilon"])
