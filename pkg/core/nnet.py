"""Minimal reverse-mode MLP core.

Parameters live in one flat, read-only vector (``ParamVector``). Layer ``k``
occupies ``W_k`` (out x in, row-major) followed by ``b_k``. Everything is float64.
"""
from __future__ import annotations

import logging
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from functools import lru_cache
from typing import ClassVar, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, model_validator
from scipy.special import expit

from core.errors import ConfigurationError, NumericError, ShapeError

logger = logging.getLogger(__name__)

Activation = Literal["relu", "tanh", "sigmoid", "identity"]
ACTIVATIONS = ("relu", "tanh", "sigmoid", "identity")


class NetworkSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    layer_sizes: tuple[int, ...]
    activations: tuple[Activation, ...]
    seed: int = Field(default=0, ge=0, lt=2**64)

    @model_validator(mode="before")
    @classmethod
    def _expand_activations(cls, data):
        # accepts a single `activation` name, or nothing (tanh hidden, identity output)
        if not isinstance(data, dict):
            return data
        n_layers = max(len(data.get("layer_sizes") or ()) - 1, 0)
        act = data.get("activations", data.get("activation"))
        if act is None:
            act = ("tanh",) * (n_layers - 1) + ("identity",) if n_layers else ()
        elif isinstance(act, str):
            act = (act,) * n_layers
        data = {k: v for k, v in data.items() if k != "activation"}
        data["activations"] = tuple(act)
        return data

    @model_validator(mode="after")
    def _check(self):
        problem = spec_problem(self)
        if problem:
            raise ValueError(problem)
        return self

    @property
    def n_layers(self) -> int:
        return len(self.layer_sizes) - 1

    @property
    def total_len(self) -> int:
        return sum(i * o + o for i, o in zip(self.layer_sizes[:-1], self.layer_sizes[1:]))


def spec_problem(spec: NetworkSpec) -> str | None:
    """Describe what is wrong with a spec, or None. Works on unvalidated specs too."""
    sizes = tuple(spec.layer_sizes)
    if len(sizes) < 2:
        return f"layer_sizes needs at least 2 entries, got {list(sizes)}"
    if any(int(s) < 1 for s in sizes):
        return f"layer_sizes entries must be >= 1, got {list(sizes)}"
    if len(spec.activations) != len(sizes) - 1:
        return f"expected {len(sizes) - 1} activations, got {len(spec.activations)}"
    unknown = [a for a in spec.activations if a not in ACTIVATIONS]
    if unknown:
        return f"unknown activations {unknown}"
    if not 0 <= int(spec.seed) < 2**64:
        return f"seed must be a 64-bit unsigned integer, got {spec.seed}"
    return None


@lru_cache(maxsize=64)
def param_names(spec: NetworkSpec) -> tuple[str, ...]:
    names: list[str] = []
    for k, (fan_in, fan_out) in enumerate(zip(spec.layer_sizes[:-1], spec.layer_sizes[1:])):
        names.extend(f"l{k}.weight[{o},{i}]" for o in range(fan_out) for i in range(fan_in))
        names.extend(f"l{k}.bias[{o}]" for o in range(fan_out))
    return tuple(names)


@dataclass(frozen=True, eq=False)
class ParamVector:
    names: tuple[str, ...]
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if values.ndim != 1 or len(values) != len(self.names):
            raise ShapeError(f"{len(self.names)} names but values of shape {values.shape}")
        if not np.all(np.isfinite(values)):
            raise NumericError("parameter vector contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "names", tuple(self.names))
        object.__setattr__(self, "values", values)

    @property
    def total_len(self) -> int:
        return len(self.values)

    def replace(self, values: np.ndarray) -> "ParamVector":
        return ParamVector(self.names, values)

    def aligned_with(self, other: "ParamVector") -> bool:
        return self.total_len == other.total_len and self.names == other.names


@dataclass(frozen=True, eq=False)
class Gradient:
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=np.float64)
        if not np.all(np.isfinite(values)):
            raise NumericError("gradient contains non-finite values")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)


def init_network(spec: NetworkSpec) -> ParamVector:
    """Glorot-uniform weights, zero biases; depends only on the spec (seed included)."""
    problem = spec_problem(spec)
    if problem:
        raise ConfigurationError(f"invalid network spec: {problem}")
    rng = np.random.default_rng(int(spec.seed))
    chunks = []
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        chunks.append(rng.uniform(-bound, bound, size=(fan_out, fan_in)).ravel())
        chunks.append(np.zeros(fan_out))
    return ParamVector(param_names(spec), np.concatenate(chunks))


def _unpack(values: np.ndarray, spec: NetworkSpec) -> list[tuple[np.ndarray, np.ndarray]]:
    layers = []
    offset = 0
    for fan_in, fan_out in zip(spec.layer_sizes[:-1], spec.layer_sizes[1:]):
        W = values[offset:offset + fan_in * fan_out].reshape(fan_out, fan_in)
        offset += fan_in * fan_out
        b = values[offset:offset + fan_out]
        offset += fan_out
        layers.append((W, b))
    return layers


def _activate(name: str, z: np.ndarray) -> np.ndarray:
    if name == "relu":
        return np.maximum(z, 0.0)
    if name == "tanh":
        return np.tanh(z)
    if name == "sigmoid":
        return expit(z)
    return z


def _activation_slope(name: str, z: np.ndarray, a: np.ndarray) -> np.ndarray:
    if name == "relu":
        return (z > 0).astype(np.float64)
    if name == "tanh":
        return 1.0 - a * a
    if name == "sigmoid":
        return a * (1.0 - a)
    return np.ones_like(z)


def _as_batch(params: ParamVector, spec: NetworkSpec, inputs) -> tuple[np.ndarray, bool]:
    if params.total_len != spec.total_len:
        raise ShapeError(f"spec needs {spec.total_len} parameters, vector has {params.total_len}")
    x = np.asarray(inputs, dtype=np.float64)
    single = x.ndim == 1
    if single:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != spec.layer_sizes[0]:
        raise ShapeError(f"input width must be {spec.layer_sizes[0]}, got shape {np.shape(inputs)}")
    return x, single


def _forward_trace(params: ParamVector, spec: NetworkSpec, x: np.ndarray):
    trace = []
    a = x
    for (W, b), act in zip(_unpack(params.values, spec), spec.activations):
        z = a @ W.T + b
        out = _activate(act, z)
        trace.append((a, z, out))
        a = out
    return a, trace


def forward(params: ParamVector, spec: NetworkSpec, inputs) -> np.ndarray:
    """Evaluate the network on one input vector or a (N, in) batch."""
    x, single = _as_batch(params, spec, inputs)
    out, _ = _forward_trace(params, spec, x)
    return out[0] if single else out


# -- losses -------------------------------------------------------------------


class Loss(ABC):
    """A scalar loss of the network outputs; returns (value, d value / d outputs)."""

    name: ClassVar[str] = ""

    @abstractmethod
    def evaluate(self, outputs: np.ndarray) -> tuple[float, np.ndarray]:
        ...


class SquaredNorm(Loss):
    """Sum of squared outputs over every row (the importance probe loss)."""

    name = "sq_norm"

    def evaluate(self, outputs: np.ndarray) -> tuple[float, np.ndarray]:
        return float(np.sum(outputs * outputs)), 2.0 * outputs


@dataclass(frozen=True, eq=False)
class _RegressionLoss(Loss):
    targets: np.ndarray
    weights: np.ndarray | None = None  # per row; None means mean over all entries

    def _prepare(self, outputs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        targets = np.asarray(self.targets, dtype=np.float64)
        if targets.size != outputs.size:
            raise ShapeError(f"{targets.size} targets for {outputs.size} outputs")
        targets = targets.reshape(outputs.shape)
        if self.weights is None:
            return targets, np.full((len(outputs), 1), 1.0 / outputs.size)
        weights = np.asarray(self.weights, dtype=np.float64).reshape(-1, 1)
        if len(weights) != len(outputs):
            raise ShapeError(f"{len(weights)} row weights for {len(outputs)} rows")
        return targets, weights


class L1Loss(_RegressionLoss):
    name = "l1"

    def evaluate(self, outputs: np.ndarray) -> tuple[float, np.ndarray]:
        targets, w = self._prepare(outputs)
        residual = outputs - targets
        return float(np.sum(w * np.abs(residual))), w * np.sign(residual)


class L2Loss(_RegressionLoss):
    name = "l2"

    def evaluate(self, outputs: np.ndarray) -> tuple[float, np.ndarray]:
        targets, w = self._prepare(outputs)
        residual = outputs - targets
        return float(np.sum(w * residual * residual)), 2.0 * w * residual


@dataclass(frozen=True, eq=False)
class EikonalFD(Loss):
    """Mean (|grad_p f| - 1)^2 from central differences.

    Rows come in four equal blocks evaluated at p+h*ex, p-h*ex, p+h*ey, p-h*ey.
    """

    step: float
    weights: np.ndarray | None = None

    name = "eikonal_fd"

    def evaluate(self, outputs: np.ndarray) -> tuple[float, np.ndarray]:
        if outputs.ndim != 2 or outputs.shape[1] != 1 or len(outputs) % 4:
            raise ShapeError(f"eikonal term needs 4 stacked blocks of scalar outputs, got {outputs.shape}")
        n = len(outputs) // 4
        f = outputs[:, 0].reshape(4, n)
        h2 = 2.0 * self.step
        gx = (f[0] - f[1]) / h2
        gy = (f[2] - f[3]) / h2
        norm = np.hypot(gx, gy)
        w = np.full(n, 1.0 / n) if self.weights is None else np.asarray(self.weights, dtype=np.float64)
        if len(w) != n:
            raise ShapeError(f"{len(w)} weights for {n} eikonal points")
        gap = norm - 1.0
        coef = np.divide(2.0 * w * gap, norm, out=np.zeros(n), where=norm > 0)
        dgx, dgy = coef * gx, coef * gy
        grad = np.concatenate([dgx / h2, -dgx / h2, dgy / h2, -dgy / h2]).reshape(-1, 1)
        return float(np.sum(w * gap * gap)), grad


@dataclass(frozen=True, eq=False)
class CompositeLoss(Loss):
    """Sum of losses, each applied to its own slice of rows."""

    terms: tuple[tuple[Loss, slice], ...] = field(default_factory=tuple)

    name = "composite"

    def evaluate(self, outputs: np.ndarray) -> tuple[float, np.ndarray]:
        total = 0.0
        grad = np.zeros_like(outputs)
        for loss, rows in self.terms:
            value, g = loss.evaluate(outputs[rows])
            total += value
            grad[rows] += g
        return total, grad


LOSSES: dict[str, type[Loss]] = {
    cls.name: cls for cls in (SquaredNorm, L1Loss, L2Loss, EikonalFD, CompositeLoss)
}


def make_loss(name: str, **kwargs) -> Loss:
    try:
        return LOSSES[name](**kwargs)
    except KeyError:
        raise ConfigurationError(f"unknown loss {name!r}; registered: {sorted(LOSSES)}") from None


def forward_backward(params: ParamVector, spec: NetworkSpec, inputs, loss: Loss) -> tuple[float, Gradient]:
    """Loss value and its exact gradient with respect to every parameter."""
    if not isinstance(loss, Loss):
        raise ConfigurationError(f"{type(loss).__name__} is not a registered loss")
    x, _ = _as_batch(params, spec, inputs)
    if len(x) == 0:
        raise ShapeError("batch is empty")
    out, trace = _forward_trace(params, spec, x)

    bad_rows = ~np.all(np.isfinite(out), axis=1)
    if bad_rows.any():
        raise NumericError("non-finite network output", batch_index=int(np.argmax(bad_rows)))
    value, delta = loss.evaluate(out)
    if not np.isfinite(value) or not np.all(np.isfinite(delta)):
        bad_rows = ~np.all(np.isfinite(delta), axis=1)
        index = int(np.argmax(bad_rows)) if bad_rows.any() else None
        raise NumericError(f"non-finite loss {value}", batch_index=index)

    pieces: list[np.ndarray] = []
    layers = _unpack(params.values, spec)
    for (W, _), (a_prev, z, a), act in zip(reversed(layers), reversed(trace), reversed(spec.activations)):
        dz = delta * _activation_slope(act, z, a)
        pieces.append(dz.sum(axis=0))
        pieces.append((dz.T @ a_prev).ravel())
        delta = dz @ W
    return value, Gradient(np.concatenate(pieces[::-1]))


def sgd_step(params: ParamVector, grad: Gradient, lr: float) -> ParamVector:
    """params - lr * grad."""
    if len(grad.values) != params.total_len:
        raise ShapeError(f"gradient has {len(grad.values)} entries, parameters {params.total_len}")
    if not np.isfinite(lr) or lr < 0:
        raise NumericError(f"learning rate must be finite and non-negative, got {lr}")
    return params.replace(params.values - lr * grad.values)
