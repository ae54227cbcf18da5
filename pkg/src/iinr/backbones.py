"""Coordinate MLPs with sine (SIREN), Gaussian and complex Gabor (WIRE)
nonlinearities, plus parameter/FLOP accounting and a checkpoint format."""
from __future__ import annotations

import json
import math
import struct
from dataclasses import asdict, dataclass, field

import numpy as np

from .tensor import LinearLayer, ShapeError, StateError, Tensor2

ACTIVATION_KINDS = ("sine", "gauss", "gabor", "relu", "identity")
ACTIVATION_FLOPS = 4


@dataclass(frozen=True)
class Activation:
    kind: str = "identity"
    omega: float = 30.0
    sigma: float = 10.0

    def __post_init__(self):
        if self.kind not in ACTIVATION_KINDS:
            raise ValueError(f"unknown activation {self.kind!r}")
        if self.kind in ("sine", "gabor") and not self.omega > 0:
            raise ValueError("omega must be positive")
        if self.kind in ("gauss", "gabor") and not self.sigma > 0:
            raise ValueError("sigma must be positive")

    @property
    def is_complex(self) -> bool:
        return self.kind == "gabor"

    def apply(self, z: Tensor2) -> Tensor2:
        if np.iscomplexobj(z) and not self.is_complex and self.kind != "identity":
            raise TypeError(f"{self.kind} activation expects real input")
        if self.kind == "sine":
            return np.sin(self.omega * z)
        if self.kind == "gauss":
            return np.exp(-np.square(self.sigma * z))
        if self.kind == "gabor":
            if np.iscomplexobj(z):
                return np.exp(1j * self.omega * z - self.sigma**2 * (z.real**2 + z.imag**2))
            # real pre-activation: envelope times unit phasor
            env = np.exp(-np.square(self.sigma * z))
            w = self.omega * z
            return env * np.cos(w) + 1j * (env * np.sin(w))
        if self.kind == "relu":
            return np.maximum(z, 0.0)
        return z

    def backward(self, z: Tensor2, a: Tensor2, grad_a: Tensor2) -> Tensor2:
        """Cotangent w.r.t. ``z`` given the output ``a = apply(z)``."""
        if self.kind == "sine":
            return grad_a * (self.omega * np.cos(self.omega * z))
        if self.kind == "gauss":
            return grad_a * (-2.0 * self.sigma**2) * z * a
        if self.kind == "gabor":
            s2 = self.sigma**2
            if not np.iscomplexobj(z):
                dphi = a * (1j * self.omega - 2.0 * s2 * z)
                return (np.conj(dphi) * grad_a).real
            d_z = a * (1j * self.omega - s2 * np.conj(z))
            d_zbar = a * (-s2 * z)
            return np.conj(d_z) * grad_a + d_zbar * np.conj(grad_a)
        if self.kind == "relu":
            return grad_a * (z > 0)
        return grad_a


IDENTITY = Activation("identity")


def activation_apply(a: Activation, z: Tensor2) -> Tensor2:
    return a.apply(z)


def activation_backward(a: Activation, z: Tensor2, grad_a: Tensor2) -> Tensor2:
    return a.backward(z, a.apply(z), grad_a)


@dataclass(frozen=True)
class MlpSpec:
    """Layer layout: ``in -> width``, then ``hidden_layers`` maps ``width ->
    width``, then ``width -> out``. So ``hidden_layers=0`` is a two-layer net."""

    in_dim: int
    out_dim: int
    hidden_width: int
    hidden_layers: int
    activation: Activation
    output_activation: Activation = IDENTITY
    dtype: str = "float64"

    def __post_init__(self):
        if min(self.in_dim, self.out_dim, self.hidden_width) < 1 or self.hidden_layers < 0:
            raise ValueError(f"invalid MLP dimensions: {self}")
        if self.dtype not in ("float64", "float32"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")

    @property
    def complex(self) -> bool:
        return self.activation.is_complex

    def layer_dims(self) -> list[tuple[int, int]]:
        dims = [self.in_dim] + [self.hidden_width] * (self.hidden_layers + 1) + [self.out_dim]
        return list(zip(dims[:-1], dims[1:]))

    def layer_is_complex(self, index: int) -> bool:
        # the first Gabor layer sees real coordinates; its activation makes the
        # stream complex from there on
        return self.complex and index > 0

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "MlpSpec":
        d = dict(d)
        d["activation"] = Activation(**d["activation"])
        d["output_activation"] = Activation(**d["output_activation"])
        return cls(**d)


def real_dtype(spec: MlpSpec):
    return np.float64 if spec.dtype == "float64" else np.float32


def complex_dtype(spec: MlpSpec):
    return np.complex128 if spec.dtype == "float64" else np.complex64


def weight_bound(spec: MlpSpec, index: int) -> float:
    fan_in = spec.layer_dims()[index][0]
    kind = spec.activation.kind
    if kind == "sine":
        if index == 0:
            return 1.0 / fan_in
        return math.sqrt(6.0 / fan_in) / spec.activation.omega
    if kind in ("gauss", "gabor"):
        return 1.0 / math.sqrt(fan_in)
    return math.sqrt(6.0 / fan_in)


def bias_bound(spec: MlpSpec, index: int) -> float:
    # sine nets start with zero bias; Gaussian bumps and Gabor wavelets would
    # all centre on the origin without an offset
    if spec.activation.kind in ("gauss", "gabor"):
        return 1.0 / math.sqrt(spec.layer_dims()[index][0])
    return 0.0


@dataclass
class MlpModel:
    spec: MlpSpec
    layers: list[LinearLayer]
    seed: int | None = None
    forward_calls: int = 0
    _pre: list = field(default_factory=list, repr=False)
    _post: list = field(default_factory=list, repr=False)

    def forward(self, x: Tensor2) -> Tensor2:
        if x.ndim != 2 or x.shape[1] != self.spec.in_dim:
            raise ShapeError(f"expected (*, {self.spec.in_dim}) input, got {x.shape}")
        self.forward_calls += 1
        h = x.astype(real_dtype(self.spec), copy=False) if not np.iscomplexobj(x) else x
        pre, post = [], []
        last = len(self.layers) - 1
        for i, layer in enumerate(self.layers):
            z = layer.forward(h)
            act = self.spec.output_activation if i == last else self.spec.activation
            h = act.apply(z)
            pre.append(z)
            post.append(h)
        self._pre, self._post = pre, post
        return h.real if np.iscomplexobj(h) else h

    def backward(self, grad_out: Tensor2, need_input_grad: bool = False) -> Tensor2 | None:
        """Accumulate parameter gradients; optionally return d loss / d input."""
        if not self._pre:
            raise StateError("backward called before forward")
        g = grad_out
        last = len(self.layers) - 1
        for i in range(last, -1, -1):
            act = self.spec.output_activation if i == last else self.spec.activation
            g = act.backward(self._pre[i], self._post[i], g)
            g = self.layers[i].backward(g, need_input_grad=(i > 0 or need_input_grad))
        return g

    def parameters(self) -> list[np.ndarray]:
        return [p for layer in self.layers for p in layer.parameters()]

    def gradients(self) -> list[np.ndarray]:
        return [g for layer in self.layers for g in layer.gradients()]

    def zero_grad(self) -> None:
        for g in self.gradients():
            g[...] = 0.0


def init_mlp(spec: MlpSpec, rng: np.random.Generator, seed: int | None = None) -> MlpModel:
    layers = []
    for i, (fan_in, fan_out) in enumerate(spec.layer_dims()):
        wb, bb = weight_bound(spec, i), bias_bound(spec, i)
        if spec.layer_is_complex(i):
            w = rng.uniform(-wb, wb, (fan_in, fan_out)) + 1j * rng.uniform(-wb, wb, (fan_in, fan_out))
            b = rng.uniform(-bb, bb, fan_out) + 1j * rng.uniform(-bb, bb, fan_out)
            dt = complex_dtype(spec)
        else:
            w = rng.uniform(-wb, wb, (fan_in, fan_out))
            b = rng.uniform(-bb, bb, fan_out)
            dt = real_dtype(spec)
        layers.append(LinearLayer(w.astype(dt), b.astype(dt)))
    return MlpModel(spec, layers, seed)


def build_mlp(spec: MlpSpec, seed: int) -> MlpModel:
    return init_mlp(spec, np.random.default_rng(seed), seed)


def mlp_forward(model: MlpModel, x: Tensor2) -> Tensor2:
    return model.forward(x)


def parameter_count(model_or_spec) -> int:
    if isinstance(model_or_spec, LinearLayer):
        return sum(p.size * (2 if np.iscomplexobj(p) else 1) for p in model_or_spec.parameters())
    spec = model_or_spec.spec if isinstance(model_or_spec, MlpModel) else model_or_spec
    total = 0
    for i, (fi, fo) in enumerate(spec.layer_dims()):
        n = fi * fo + fo
        total += 2 * n if spec.layer_is_complex(i) else n
    return total


def flops_per_sample(model_or_spec) -> int:
    """2 FLOPs per real multiply-accumulate, 8 per complex one, 4 per
    activation element. Bias adds are not charged."""
    if isinstance(model_or_spec, LinearLayer):
        return (8 if model_or_spec.is_complex else 2) * model_or_spec.fan_in * model_or_spec.fan_out
    spec = model_or_spec.spec if isinstance(model_or_spec, MlpModel) else model_or_spec
    flops = 0
    for i, (fi, fo) in enumerate(spec.layer_dims()):
        flops += (8 if spec.layer_is_complex(i) else 2) * fi * fo
    flops += ACTIVATION_FLOPS * spec.hidden_width * (spec.hidden_layers + 1)
    if spec.output_activation.kind != "identity":
        flops += ACTIVATION_FLOPS * spec.out_dim
    return flops


# Checkpoint layout:
#   b"IINRCKPT" | uint64 LE header length | UTF-8 JSON header | float64 LE blob
# The header lists sections, each with an MlpSpec and the shapes of its
# arrays in layer order (weight, bias, ...). Complex arrays are stored as
# interleaved (re, im) pairs.
CHECKPOINT_MAGIC = b"IINRCKPT"


def pack_checkpoint(models: dict[str, MlpModel], meta: dict | None = None) -> bytes:
    sections, chunks = [], []
    for name, model in models.items():
        arrays = []
        for p in model.parameters():
            arrays.append({"shape": list(p.shape), "complex": bool(np.iscomplexobj(p))})
            flat = p.view(p.real.dtype) if np.iscomplexobj(p) else p
            chunks.append(np.ascontiguousarray(flat, dtype="<f8").tobytes())
        sections.append({"name": name, "spec": model.spec.to_dict(), "seed": model.seed,
                         "arrays": arrays})
    header = {"format": 1, "sections": sections, "meta": meta or {}}
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    return CHECKPOINT_MAGIC + struct.pack("<Q", len(hbytes)) + hbytes + b"".join(chunks)


def unpack_checkpoint(data: bytes) -> tuple[dict[str, MlpModel], dict]:
    if data[:8] != CHECKPOINT_MAGIC:
        raise ValueError("not an IINR checkpoint")
    (hlen,) = struct.unpack("<Q", data[8:16])
    header = json.loads(data[16:16 + hlen].decode("utf-8"))
    offset = 16 + hlen
    models = {}
    for sec in header["sections"]:
        spec = MlpSpec.from_dict(sec["spec"])
        params = []
        for a in sec["arrays"]:
            n = int(np.prod(a["shape"])) * (2 if a["complex"] else 1)
            raw = np.frombuffer(data, dtype="<f8", count=n, offset=offset)
            offset += 8 * n
            if a["complex"]:
                arr = raw.astype(real_dtype(spec)).view(complex_dtype(spec))
            else:
                arr = raw.astype(real_dtype(spec))
            params.append(arr.reshape(a["shape"]).copy())
        layers = [LinearLayer(w, b) for w, b in zip(params[::2], params[1::2])]
        models[sec["name"]] = MlpModel(spec, layers, sec["seed"])
    if offset != len(data):
        raise ValueError(f"checkpoint has {len(data) - offset} trailing bytes")
    return models, header["meta"]
