"""Dense numeric primitives: sampling, linear layers with manual backprop, Adam.

A ``Tensor2`` is a plain 2-D numpy array laid out as (batch of coordinates) x
(features). Real arrays are float64 (or float32 in fast mode), complex arrays
complex128 (complex64).

Complex gradients follow the steepest-descent convention for a real loss L of
a complex variable z = x + iy: the stored gradient is dL/dx + i dL/dy.
"""
from __future__ import annotations

import math

import numpy as np

Tensor2 = np.ndarray


class ShapeError(ValueError):
    pass


class DomainError(ValueError):
    pass


class StateError(RuntimeError):
    pass


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(int(seed)))


def gaussian(rng: np.random.Generator, rows: int, cols: int) -> Tensor2:
    if rows < 1 or cols < 1:
        raise DomainError(f"gaussian needs rows, cols >= 1, got {rows}x{cols}")
    return rng.standard_normal((rows, cols))


def poisson(rng: np.random.Generator, lam):
    """Poisson draw(s) with rate ``lam`` (scalar or array)."""
    lam_arr = np.asarray(lam, dtype=np.float64)
    if not np.all(np.isfinite(lam_arr)) or np.any(lam_arr < 0):
        raise DomainError("poisson rate must be finite and non-negative")
    out = rng.poisson(lam_arr)
    if np.ndim(lam) == 0:
        return int(out)
    return out


def check_2d(x: Tensor2, name: str = "input") -> None:
    if x.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {x.shape}")


class LinearLayer:
    """Affine map ``x @ W + b`` with gradient buffers.

    The weight has shape (fan_in, fan_out) so a batch of row vectors maps
    directly. Gradients accumulate across backward calls until cleared.
    """

    def __init__(self, weight: np.ndarray, bias: np.ndarray):
        if weight.ndim != 2 or bias.shape != (weight.shape[1],):
            raise ShapeError(f"bad layer shapes W{weight.shape} b{bias.shape}")
        self.weight = weight
        self.bias = bias
        self.grad_weight = np.zeros_like(weight)
        self.grad_bias = np.zeros_like(bias)
        self.cached_input: Tensor2 | None = None

    @property
    def fan_in(self) -> int:
        return self.weight.shape[0]

    @property
    def fan_out(self) -> int:
        return self.weight.shape[1]

    @property
    def is_complex(self) -> bool:
        return np.iscomplexobj(self.weight)

    def forward(self, x: Tensor2) -> Tensor2:
        check_2d(x)
        if x.shape[1] != self.fan_in:
            raise ShapeError(f"expected {self.fan_in} input columns, got {x.shape[1]}")
        if np.iscomplexobj(x) and not self.is_complex:
            raise ShapeError("complex input to a real-valued layer")
        self.cached_input = x
        return x @ self.weight + self.bias

    def backward(self, grad_out: Tensor2, need_input_grad: bool = True) -> Tensor2 | None:
        if self.cached_input is None:
            raise StateError("backward called before forward")
        check_2d(grad_out, "grad_out")
        if grad_out.shape != (self.cached_input.shape[0], self.fan_out):
            raise ShapeError(
                f"grad_out shape {grad_out.shape} does not match output "
                f"({self.cached_input.shape[0]}, {self.fan_out})"
            )
        x = self.cached_input
        if self.is_complex:
            self.grad_weight += np.conj(x).T @ grad_out
            self.grad_bias += grad_out.sum(axis=0)
            if not need_input_grad:
                return None
            grad_in = grad_out @ np.conj(self.weight).T
            return grad_in if np.iscomplexobj(x) else grad_in.real
        # real layer; a complex cotangent cannot reach here from a real output
        self.grad_weight += x.T @ grad_out
        self.grad_bias += grad_out.sum(axis=0)
        if not need_input_grad:
            return None
        return grad_out @ self.weight.T

    def parameters(self) -> list[np.ndarray]:
        return [self.weight, self.bias]

    def gradients(self) -> list[np.ndarray]:
        return [self.grad_weight, self.grad_bias]


def linear_forward(layer: LinearLayer, x: Tensor2) -> Tensor2:
    return layer.forward(x)


def linear_backward(layer: LinearLayer, grad_out: Tensor2) -> Tensor2:
    return layer.backward(grad_out)


def _real_view(a: np.ndarray) -> np.ndarray:
    # complex arrays are updated as interleaved (re, im) pairs
    return a.view(a.real.dtype) if np.iscomplexobj(a) else a


class Adam:
    """Adam with bias correction over a fixed list of parameter arrays.

    Parameters are updated in place and their gradient buffers zeroed after
    each step. Complex parameters get independent moments for the real and
    imaginary parts.
    """

    def __init__(self, params, grads, lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        params, grads = list(params), list(grads)
        if len(params) != len(grads):
            raise ShapeError("params and grads lists differ in length")
        for p, g in zip(params, grads):
            if p.shape != g.shape or p.dtype != g.dtype:
                raise ShapeError(f"param {p.shape}/{p.dtype} vs grad {g.shape}/{g.dtype}")
        self.params = [_real_view(p) for p in params]
        self.grads = [_real_view(g) for g in grads]
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.step_count = 0
        self.m = [np.zeros_like(p) for p in self.params]
        self.v = [np.zeros_like(p) for p in self.params]

    def step(self, lr: float | None = None) -> None:
        lr = self.lr if lr is None else lr
        self.step_count += 1
        bc1 = 1.0 - self.beta1 ** self.step_count
        bc2 = 1.0 - self.beta2 ** self.step_count
        step_size = lr / bc1
        inv_bc2 = 1.0 / math.sqrt(bc2)
        for p, g, m, v in zip(self.params, self.grads, self.m, self.v):
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p -= step_size * m / (np.sqrt(v) * inv_bc2 + self.eps)
            g[...] = 0.0


def adam_step(params, grads, state: Adam) -> None:
    """Functional spelling of ``state.step()``; ``params``/``grads`` must be
    the arrays ``state`` was built over."""
    state.step()
