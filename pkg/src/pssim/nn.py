"""Feed-forward networks over a flat parameter vector, with manual backprop.

Parameters for all layers live in one flat array so that the whole model can
be shipped, diffed, and sparsely updated as a unit.  A segment map records
where each weight matrix / bias vector sits inside that array.  All functions
here are pure with respect to their inputs: they never mutate the parameter
vector and hold no state, so they are safe to call from any thread.

Compute dtype follows the parameter dtype (float32 in production, float64 in
gradient-check tests).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, NumericFault

# Cross-entropy probability clamp: loss is capped at -log(PROB_FLOOR).
PROB_FLOOR = 1e-12

WEIGHT = "weight"
BIAS = "bias"


@dataclass(frozen=True)
class TensorSpec:
    """One tensor's slot inside the flat parameter vector."""

    kind: str  # WEIGHT or BIAS
    layer: int
    shape: tuple[int, ...]
    offset: int
    length: int

    def __post_init__(self):
        if self.length != int(np.prod(self.shape)):
            raise ConfigurationError(
                f"segment layer {self.layer} {self.kind}: length {self.length} "
                f"!= prod{self.shape}"
            )

    @property
    def end(self) -> int:
        return self.offset + self.length


@dataclass
class ParamVector:
    """Flat parameter values plus their segment map and an update timestamp."""

    values: np.ndarray
    segments: tuple[TensorSpec, ...]
    timestamp: int = 0

    def __post_init__(self):
        if self.values.ndim != 1:
            raise ConfigurationError("parameter values must be a flat vector")
        check_segments(self.segments, len(self.values))

    def view(self, spec: TensorSpec) -> np.ndarray:
        """Reshaped view of one segment; writes go through to the flat array."""
        return self.values[spec.offset : spec.end].reshape(spec.shape)

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.segments, self.timestamp)


def check_segments(segments: tuple[TensorSpec, ...], total: int) -> None:
    """Segments must be contiguous, non-overlapping, and cover [0, total)."""
    cursor = 0
    for spec in segments:
        if spec.offset != cursor:
            raise ConfigurationError(
                f"segment layer {spec.layer} {spec.kind}: offset {spec.offset}, "
                f"expected {cursor}"
            )
        cursor = spec.end
    if cursor != total:
        raise ConfigurationError(f"segments cover {cursor} values, vector has {total}")


@dataclass(frozen=True)
class DenseSpec:
    in_size: int
    out_size: int
    activation: str = "relu"  # "relu" | "linear"; the final layer feeds softmax


@dataclass(frozen=True)
class Conv2DSpec:
    """Valid-padding stride-1 convolution, then activation, then 2x2 max-pool."""

    in_shape: tuple[int, int, int]  # H, W, C
    filters: int
    kernel: int
    pool: int = 2  # 1 disables pooling
    activation: str = "relu"

    @property
    def conv_out_shape(self) -> tuple[int, int, int]:
        h, w, _ = self.in_shape
        return (h - self.kernel + 1, w - self.kernel + 1, self.filters)

    @property
    def out_shape(self) -> tuple[int, int, int]:
        h, w, f = self.conv_out_shape
        return (h // self.pool, w // self.pool, f)


LayerSpec = DenseSpec | Conv2DSpec


@dataclass(frozen=True)
class ModelArch:
    """Ordered layer descriptors; the last dense layer's output goes through softmax."""

    input_shape: tuple[int, ...]
    layers: tuple[LayerSpec, ...]
    segments: tuple[TensorSpec, ...] = field(init=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "segments", _build_segments(self))
        _validate_chain(self)

    @property
    def param_count(self) -> int:
        return self.segments[-1].end if self.segments else 0

    @property
    def num_classes(self) -> int:
        last = self.layers[-1]
        if not isinstance(last, DenseSpec):
            raise ConfigurationError("final layer must be dense")
        return last.out_size


def _tensor_shapes(layer: LayerSpec) -> tuple[tuple[int, ...], tuple[int, ...]]:
    if isinstance(layer, DenseSpec):
        return (layer.in_size, layer.out_size), (layer.out_size,)
    k, c = layer.kernel, layer.in_shape[2]
    return (k, k, c, layer.filters), (layer.filters,)


def _build_segments(arch: ModelArch) -> tuple[TensorSpec, ...]:
    segments = []
    offset = 0
    for l, layer in enumerate(arch.layers):
        for kind, shape in zip((WEIGHT, BIAS), _tensor_shapes(layer)):
            length = int(np.prod(shape))
            segments.append(TensorSpec(kind, l, shape, offset, length))
            offset += length
    return tuple(segments)


def _validate_chain(arch: ModelArch) -> None:
    if not arch.layers:
        raise ConfigurationError("architecture has no layers")
    shape = arch.input_shape
    seen_dense = False
    for l, layer in enumerate(arch.layers):
        if isinstance(layer, Conv2DSpec):
            if seen_dense:
                raise ConfigurationError(f"layer {l}: conv after dense is unsupported")
            if tuple(shape) != tuple(layer.in_shape):
                raise ConfigurationError(
                    f"layer {l}: expects input {layer.in_shape}, got {tuple(shape)}"
                )
            h, w, _ = layer.conv_out_shape
            if h < 1 or w < 1:
                raise ConfigurationError(f"layer {l}: kernel larger than input")
            shape = layer.out_shape
        else:
            seen_dense = True
            flat = int(np.prod(shape))
            if flat != layer.in_size:
                raise ConfigurationError(
                    f"layer {l}: expects {layer.in_size} inputs, got {flat}"
                )
            shape = (layer.out_size,)
        if layer.activation not in ("relu", "linear"):
            raise ConfigurationError(f"layer {l}: unknown activation {layer.activation!r}")
    if not isinstance(arch.layers[-1], DenseSpec):
        raise ConfigurationError("final layer must be dense (softmax head)")


def mlp_arch(input_dim: int = 784, hidden: int = 128, classes: int = 10) -> ModelArch:
    """Single-hidden-layer ReLU net; 784-128-10 on MNIST."""
    return ModelArch(
        input_shape=(input_dim,),
        layers=(
            DenseSpec(input_dim, hidden, "relu"),
            DenseSpec(hidden, classes, "linear"),
        ),
    )


def cnn_arch(classes: int = 10) -> ModelArch:
    """Reference convolutional net for 28x28 single-channel images.

    28x28x1 -> conv 3x3x8 -> pool -> 13x13x8 -> conv 3x3x16 -> pool -> 5x5x16
    -> dense 512 -> dense 10.  Parameter count: 80 + 1,168 + 205,312 + 5,130
    = 211,690 exactly.
    """
    return ModelArch(
        input_shape=(28, 28, 1),
        layers=(
            Conv2DSpec((28, 28, 1), filters=8, kernel=3),
            Conv2DSpec((13, 13, 8), filters=16, kernel=3),
            DenseSpec(5 * 5 * 16, 512, "relu"),
            DenseSpec(512, classes, "linear"),
        ),
    )


def init_params(
    arch: ModelArch, rng: np.random.Generator, dtype=np.float32
) -> ParamVector:
    """Glorot-uniform weights, zero biases, drawn in layer order."""
    values = np.zeros(arch.param_count, dtype=dtype)
    theta = ParamVector(values, arch.segments)
    for spec in arch.segments:
        if spec.kind != WEIGHT:
            continue
        if len(spec.shape) == 2:
            fan_in, fan_out = spec.shape
        else:
            k0, k1, c, f = spec.shape
            fan_in, fan_out = k0 * k1 * c, k0 * k1 * f
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        theta.view(spec)[...] = rng.uniform(-limit, limit, spec.shape).astype(dtype)
    return theta


def _softmax(z: np.ndarray) -> np.ndarray:
    shifted = z - z.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def _activate(z: np.ndarray, activation: str) -> np.ndarray:
    return np.maximum(z, 0) if activation == "relu" else z


def _conv_forward(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    # out[n, y, x, f] = sum_{i, j, c} x[n, y+i, x+j, c] * w[i, j, c, f] + b[f]
    k = w.shape[0]
    ho = x.shape[1] - k + 1
    wo = x.shape[2] - k + 1
    z = np.tile(b, (x.shape[0], ho, wo, 1)).astype(x.dtype)
    for i in range(k):
        for j in range(k):
            z += x[:, i : i + ho, j : j + wo, :] @ w[i, j]
    return z


def _conv_backward(
    x: np.ndarray, w: np.ndarray, dz: np.ndarray, need_dx: bool = True
) -> tuple[np.ndarray | None, np.ndarray, np.ndarray]:
    k = w.shape[0]
    ho, wo = dz.shape[1], dz.shape[2]
    dx = np.zeros_like(x) if need_dx else None
    dw = np.zeros_like(w)
    for i in range(k):
        for j in range(k):
            patch = x[:, i : i + ho, j : j + wo, :]
            dw[i, j] = np.tensordot(patch, dz, axes=([0, 1, 2], [0, 1, 2]))
            if need_dx:
                dx[:, i : i + ho, j : j + wo, :] += dz @ w[i, j].T
    db = dz.sum(axis=(0, 1, 2))
    return dx, dw, db


def _pool_forward(a: np.ndarray, pool: int) -> tuple[np.ndarray, np.ndarray]:
    """Max-pool with stride == pool; trailing rows/cols that do not fill a
    window are dropped.  Returns (output, argmax) where argmax holds the flat
    within-window index of the first maximum (backprop routes to one cell)."""
    n, h, w, c = a.shape
    ho, wo = h // pool, w // pool
    cropped = a[:, : ho * pool, : wo * pool, :]
    windows = (
        cropped.reshape(n, ho, pool, wo, pool, c)
        .transpose(0, 1, 3, 5, 2, 4)
        .reshape(n, ho, wo, c, pool * pool)
    )
    argmax = windows.argmax(axis=4)
    out = np.take_along_axis(windows, argmax[..., None], axis=4)[..., 0]
    return out, argmax


def _pool_backward(
    dout: np.ndarray, argmax: np.ndarray, in_shape: tuple[int, ...], pool: int
) -> np.ndarray:
    n, ho, wo, c = dout.shape
    dwindows = np.zeros((n, ho, wo, c, pool * pool), dtype=dout.dtype)
    np.put_along_axis(dwindows, argmax[..., None], dout[..., None], axis=4)
    da = np.zeros(in_shape, dtype=dout.dtype)
    da[:, : ho * pool, : wo * pool, :] = (
        dwindows.reshape(n, ho, wo, c, pool, pool)
        .transpose(0, 1, 4, 2, 5, 3)
        .reshape(n, ho * pool, wo * pool, c)
    )
    return da


def _check_input(arch: ModelArch, xb: np.ndarray) -> None:
    if xb.shape[1:] != tuple(arch.input_shape):
        raise ConfigurationError(
            f"input shape {xb.shape[1:]} does not match architecture "
            f"{tuple(arch.input_shape)}"
        )


def _check_theta(arch: ModelArch, theta: ParamVector) -> None:
    if len(theta.values) != arch.param_count:
        raise ConfigurationError(
            f"parameter vector has {len(theta.values)} values, "
            f"architecture needs {arch.param_count}"
        )


def _run_layers(arch: ModelArch, theta: ParamVector, xb: np.ndarray, caches=None):
    """Forward pass up to the logits; when ``caches`` is a list, per-layer
    state for backprop is appended to it."""
    dtype = theta.values.dtype
    a = xb.astype(dtype, copy=False)
    seg = iter(arch.segments)
    for layer in arch.layers:
        w = theta.view(next(seg))
        b = theta.view(next(seg))
        if isinstance(layer, Conv2DSpec):
            z = _conv_forward(a, w, b)
            act = _activate(z, layer.activation)
            if layer.pool > 1:
                out, argmax = _pool_forward(act, layer.pool)
            else:
                out, argmax = act, None
            if caches is not None:
                caches.append((a, z, act.shape, argmax))
            a = out
        else:
            flat = a.reshape(a.shape[0], -1)
            z = flat @ w + b
            if caches is not None:
                caches.append((a.shape, flat, z))
            a = _activate(z, layer.activation)
    return a


def forward_batch(arch: ModelArch, theta: ParamVector, xb: np.ndarray) -> np.ndarray:
    """Class probabilities for a batch, shape (B, classes)."""
    _check_theta(arch, theta)
    _check_input(arch, xb)
    return _softmax(_run_layers(arch, theta, xb))


def forward(arch: ModelArch, theta: ParamVector, x: np.ndarray) -> np.ndarray:
    """Class probabilities for a single input."""
    return forward_batch(arch, theta, np.asarray(x)[None])[0]


def loss(probs: np.ndarray, y: int) -> float:
    """Cross-entropy of one prediction, capped at -log(PROB_FLOOR)."""
    probs = np.asarray(probs)
    if not 0 <= y < len(probs):
        raise ValueError(f"label {y} out of range [0, {len(probs)})")
    return float(-np.log(max(float(probs[y]), PROB_FLOOR)))


def batch_loss(
    arch: ModelArch, theta: ParamVector, xb: np.ndarray, yb: np.ndarray
) -> float:
    """Mean cross-entropy over a batch (forward only; used by gradient oracles)."""
    probs = forward_batch(arch, theta, xb)
    picked = np.maximum(probs[np.arange(len(yb)), yb], PROB_FLOOR)
    return float(np.mean(-np.log(picked)))


def sgd_step(
    arch: ModelArch, theta: ParamVector, xb: np.ndarray, yb: np.ndarray
) -> np.ndarray:
    """Gradient of the mean batch cross-entropy, flattened to match the
    segment map.  Does not mutate ``theta``; raises NumericFault on non-finite
    output."""
    _check_theta(arch, theta)
    _check_input(arch, xb)
    yb = np.asarray(yb)
    if yb.min() < 0 or yb.max() >= arch.num_classes:
        raise ValueError("label out of range")

    caches: list = []
    probs = _softmax(_run_layers(arch, theta, xb, caches))

    batch = len(yb)
    grad = np.zeros(arch.param_count, dtype=theta.values.dtype)
    gview = ParamVector(grad, arch.segments)

    # d(mean CE)/d(logits) for a softmax head.
    delta = probs
    delta[np.arange(batch), yb] -= 1
    delta /= batch

    for l in range(len(arch.layers) - 1, -1, -1):
        layer = arch.layers[l]
        w_spec, b_spec = arch.segments[2 * l], arch.segments[2 * l + 1]
        w = theta.view(w_spec)
        if isinstance(layer, DenseSpec):
            in_shape, flat, z = caches[l]
            if l < len(arch.layers) - 1 and layer.activation == "relu":
                delta = delta * (z > 0)
            gview.view(w_spec)[...] = flat.T @ delta
            gview.view(b_spec)[...] = delta.sum(axis=0)
            if l > 0:
                delta = (delta @ w.T).reshape(in_shape)
        else:
            a_in, z, act_shape, argmax = caches[l]
            if layer.pool > 1:
                delta = _pool_backward(delta, argmax, act_shape, layer.pool)
            if layer.activation == "relu":
                delta = delta * (z > 0)
            delta, dw, db = _conv_backward(a_in, w, delta, need_dx=l > 0)
            gview.view(w_spec)[...] = dw
            gview.view(b_spec)[...] = db

    if not np.isfinite(grad).all():
        raise NumericFault("non-finite gradient")
    return grad
