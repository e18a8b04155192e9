"""Minimal feed-forward network stack with analytic gradients.

All math is float64. Networks are fully-connected ReLU MLPs with a linear
output layer. Parameters live in a single flat vector so the optimizer can
treat a policy as a point in R^n.

Flat layout (documented contract): for each layer l in order, W_l raveled
row-major with shape (fan_out, fan_in), then b_l with shape (fan_out,).
Policy networks carry an additional per-dimension log-std vector, appended
after the network parameters by ``flatten``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

ACTIVATIONS = ("relu",)


@dataclass(frozen=True)
class MlpSpec:
    """Layer-shape metadata for one MLP."""

    input_dim: int
    output_dim: int
    hidden_dims: tuple[int, ...] = (128, 128)
    activation: str = "relu"

    def __post_init__(self):
        if self.activation not in ACTIVATIONS:
            raise ValueError(f"unsupported activation {self.activation!r}")
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        if any(int(d) < 1 for d in dims):
            raise ValueError(f"all dims must be >= 1, got {dims}")
        if len(self.hidden_dims) < 1:
            raise ValueError("at least one hidden layer required")
        object.__setattr__(self, "hidden_dims", tuple(int(d) for d in self.hidden_dims))

    def layer_dims(self) -> list[tuple[int, int]]:
        """(fan_in, fan_out) per layer, input to output."""
        dims = (self.input_dim, *self.hidden_dims, self.output_dim)
        return list(zip(dims[:-1], dims[1:]))

    def n_params(self) -> int:
        return sum((fi + 1) * fo for fi, fo in self.layer_dims())


@dataclass
class ParameterVector:
    """Flat trainable parameters plus their layer-shape metadata.

    ``values`` holds the network weights/biases; ``extra`` holds optional
    per-dimension log-std parameters for policy heads.
    """

    spec: MlpSpec
    values: np.ndarray
    extra: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=np.float64)
        if self.values.shape != (self.spec.n_params(),):
            raise ValueError(
                f"expected {self.spec.n_params()} parameters, got {self.values.shape}"
            )
        if not np.all(np.isfinite(self.values)):
            raise ValueError("non-finite network parameters")
        if self.extra is not None:
            self.extra = np.asarray(self.extra, dtype=np.float64)
            if not np.all(np.isfinite(self.extra)):
                raise ValueError("non-finite log-std parameters")

    def layers(self) -> list[tuple[np.ndarray, np.ndarray]]:
        """Views (W, b) per layer into ``values``; W has shape (fan_out, fan_in)."""
        out = []
        off = 0
        for fi, fo in self.spec.layer_dims():
            w = self.values[off : off + fi * fo].reshape(fo, fi)
            off += fi * fo
            b = self.values[off : off + fo]
            off += fo
            out.append((w, b))
        return out

    def copy(self) -> "ParameterVector":
        return ParameterVector(
            self.spec,
            self.values.copy(),
            None if self.extra is None else self.extra.copy(),
        )


def flatten(params: ParameterVector) -> np.ndarray:
    """Network values followed by the log-std block (when present)."""
    if params.extra is None:
        return params.values.copy()
    return np.concatenate([params.values, params.extra])


def unflatten(spec: MlpSpec, flat: np.ndarray, extra_dim: int = 0) -> ParameterVector:
    flat = np.asarray(flat, dtype=np.float64)
    expect = spec.n_params() + extra_dim
    if flat.shape != (expect,):
        raise ValueError(f"expected flat length {expect}, got {flat.shape}")
    if extra_dim == 0:
        return ParameterVector(spec, flat.copy())
    return ParameterVector(spec, flat[: spec.n_params()].copy(), flat[spec.n_params() :].copy())


def init_params(spec: MlpSpec, rng: np.random.Generator, final_scale: float = 1.0) -> ParameterVector:
    """Normalized-column init: unit-norm fan-in rows, final layer scaled down."""
    chunks = []
    n_layers = len(spec.layer_dims())
    for l, (fi, fo) in enumerate(spec.layer_dims()):
        w = rng.standard_normal((fo, fi))
        w /= np.sqrt(np.sum(w * w, axis=1, keepdims=True))
        if l == n_layers - 1:
            w *= final_scale
        chunks.append(w.ravel())
        chunks.append(np.zeros(fo))
    return ParameterVector(spec, np.concatenate(chunks))


def _as_batch(x: np.ndarray, dim: int, name: str) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        if x.shape[0] != dim:
            raise ValueError(f"{name} has length {x.shape[0]}, expected {dim}")
        return x[None, :], True
    if x.ndim != 2 or x.shape[1] != dim:
        raise ValueError(f"{name} has shape {x.shape}, expected (*, {dim})")
    return x, False


def _forward_cached(params: ParameterVector, x: np.ndarray):
    """Returns (output, pre-activations z per hidden layer, activations a per layer)."""
    layers = params.layers()
    acts = [x]
    zs = []
    h = x
    for w, b in layers[:-1]:
        z = h @ w.T + b
        zs.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    w, b = layers[-1]
    y = h @ w.T + b
    return y, zs, acts


def mlp_forward(params: ParameterVector, x: np.ndarray) -> np.ndarray:
    """Evaluate the network. Accepts a single input vector or a (B, in) batch."""
    xb, single = _as_batch(x, params.spec.input_dim, "input")
    y, _, _ = _forward_cached(params, xb)
    return y[0] if single else y


def mlp_backward(params: ParameterVector, x: np.ndarray, output_grad: np.ndarray) -> np.ndarray:
    """Gradient of sum_b output_grad_b . output_b with respect to the flat parameters.

    ``x`` and ``output_grad`` may be single vectors or batches with matching
    leading dimension. Returns a flat array shaped like ``params.values``.
    """
    xb, single_x = _as_batch(x, params.spec.input_dim, "input")
    ub, single_u = _as_batch(output_grad, params.spec.output_dim, "output_grad")
    if single_x != single_u or xb.shape[0] != ub.shape[0]:
        raise ValueError("input and output_grad batch shapes disagree")
    _, zs, acts = _forward_cached(params, xb)
    layers = params.layers()
    grads: list[np.ndarray | None] = [None] * len(layers)
    delta = ub
    for l in range(len(layers) - 1, -1, -1):
        w, _ = layers[l]
        gw = delta.T @ acts[l]
        gb = delta.sum(axis=0)
        grads[l] = np.concatenate([gw.ravel(), gb])
        if l > 0:
            delta = (delta @ w) * (zs[l - 1] > 0.0)
    return np.concatenate(grads)


def mlp_jvp(params: ParameterVector, x: np.ndarray, tangent: np.ndarray) -> np.ndarray:
    """Directional derivative of outputs along a flat parameter tangent (R-op)."""
    xb, single = _as_batch(x, params.spec.input_dim, "input")
    tangent = np.asarray(tangent, dtype=np.float64)
    if tangent.shape != params.values.shape:
        raise ValueError(
            f"tangent has shape {tangent.shape}, expected {params.values.shape}"
        )
    tv = ParameterVector(params.spec, tangent)
    layers = params.layers()
    tlayers = tv.layers()
    h = xb
    rh = np.zeros_like(xb)
    for l, ((w, b), (vw, vb)) in enumerate(zip(layers, tlayers)):
        z = h @ w.T + b
        rz = rh @ w.T + h @ vw.T + vb
        if l < len(layers) - 1:
            mask = z > 0.0
            h = z * mask
            rh = rz * mask
        else:
            rh = rz
    return rh[0] if single else rh


@dataclass
class GaussianAction:
    """Diagonal Gaussian over actions: mean vector plus per-dimension log-std."""

    mean: np.ndarray
    log_std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.log_std = np.asarray(self.log_std, dtype=np.float64)
        if self.mean.shape != self.log_std.shape:
            raise ValueError("mean/log_std dimension mismatch")
        if not (np.all(np.isfinite(self.mean)) and np.all(np.isfinite(self.log_std))):
            raise ValueError("non-finite Gaussian parameters")


_LOG_2PI = math.log(2.0 * math.pi)


def log_prob_arrays(mean, log_std, action) -> np.ndarray:
    """Per-row diagonal-Gaussian log density; broadcasts log_std over a batch."""
    mean = np.asarray(mean, dtype=np.float64)
    action = np.asarray(action, dtype=np.float64)
    log_std = np.asarray(log_std, dtype=np.float64)
    z = (action - mean) * np.exp(-log_std)
    return -0.5 * np.sum(z * z, axis=-1) - np.sum(log_std, axis=-1) - 0.5 * _LOG_2PI * mean.shape[-1]


def gaussian_log_prob(g: GaussianAction, action: np.ndarray) -> float:
    action = np.asarray(action, dtype=np.float64)
    if action.shape != g.mean.shape:
        raise ValueError("action dimension mismatch")
    if not np.all(np.isfinite(action)):
        raise ValueError("non-finite action")
    return float(log_prob_arrays(g.mean, g.log_std, action))


def kl_arrays(mean_p, log_std_p, mean_q, log_std_q) -> np.ndarray:
    """Per-row KL(p || q) between diagonal Gaussians."""
    mean_p = np.asarray(mean_p, dtype=np.float64)
    mean_q = np.asarray(mean_q, dtype=np.float64)
    log_std_p = np.asarray(log_std_p, dtype=np.float64)
    log_std_q = np.asarray(log_std_q, dtype=np.float64)
    var_ratio = np.exp(2.0 * (log_std_p - log_std_q))
    dm = (mean_p - mean_q) * np.exp(-log_std_q)
    return np.sum(log_std_q - log_std_p + 0.5 * (var_ratio + dm * dm) - 0.5, axis=-1)


def gaussian_kl(p: GaussianAction, q: GaussianAction) -> float:
    if p.mean.shape != q.mean.shape:
        raise ValueError("distribution dimension mismatch")
    return float(kl_arrays(p.mean, p.log_std, q.mean, q.log_std))


def gaussian_entropy(g: GaussianAction) -> float:
    return float(np.sum(0.5 + 0.5 * _LOG_2PI + g.log_std))
