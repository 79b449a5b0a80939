"""Minimal deterministic feed-forward inference engine.

Tensors are numpy arrays in row-major layout; persisted weights and inputs
are float32.  All layer arithmetic runs in float64 so that results are
bit-reproducible across runs and so that tiny weight perturbations are not
swallowed by rounding at layer boundaries.  The engine knows four layer
kinds: dense, conv2d, relu and maxpool2d.  Feature maps for conv/pool
layers have shape (height, width, channels); conv kernels have shape
(kernel_h, kernel_w, in_channels, out_channels).

The final layer output is the pre-softmax feature vector; classification
picks its argmax (softmax never changes the argmax, so it is not applied).
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np

WEIGHTED_KINDS = ("dense", "conv2d")
LAYER_KINDS = ("dense", "conv2d", "relu", "maxpool2d")

_CHUNK = 512  # fixed evaluation chunk; reduction order never depends on thread count


class ShapeError(ValueError):
    """Raised when shapes do not compose; message names the offending layer."""


@dataclass(frozen=True)
class Layer:
    """One network layer.  Weightless kinds (relu, maxpool2d) carry no tensors."""

    kind: str
    weights: np.ndarray | None = None
    bias: np.ndarray | None = None
    stride: int = 1
    padding: str = "valid"
    pool_size: int = 2

    def __post_init__(self):
        if self.kind not in LAYER_KINDS:
            raise ValueError(f"unknown layer kind {self.kind!r}")
        if self.kind in WEIGHTED_KINDS:
            if self.weights is None:
                raise ValueError(f"{self.kind} layer requires weights")
            if not np.all(np.isfinite(self.weights)):
                raise ValueError(f"{self.kind} weights contain non-finite values")
            if self.bias is not None and not np.all(np.isfinite(self.bias)):
                raise ValueError(f"{self.kind} bias contains non-finite values")
            if self.kind == "dense" and self.weights.ndim != 2:
                raise ValueError("dense weights must be 2-d (in_features, out_features)")
            if self.kind == "conv2d":
                if self.weights.ndim != 4:
                    raise ValueError("conv2d kernel must be 4-d (kh, kw, in_c, out_c)")
                if self.padding not in ("valid", "same"):
                    raise ValueError(f"conv2d padding must be valid|same, got {self.padding!r}")
        else:
            if self.weights is not None or (self.bias is not None and self.bias.size):
                raise ValueError(f"{self.kind} layer must not carry weights")
        if self.stride < 1:
            raise ValueError("stride must be a positive integer")
        if self.kind == "maxpool2d" and self.pool_size < 1:
            raise ValueError("pool_size must be a positive integer")

    @property
    def param_count(self) -> int:
        """Number of stored parameters (weights plus bias)."""
        if self.kind not in WEIGHTED_KINDS:
            return 0
        n = self.weights.size
        if self.bias is not None:
            n += self.bias.size
        return n


def dense(weights, bias=None) -> Layer:
    return Layer("dense", np.asarray(weights), None if bias is None else np.asarray(bias))


def conv2d(weights, bias=None, stride=1, padding="valid") -> Layer:
    return Layer("conv2d", np.asarray(weights), None if bias is None else np.asarray(bias),
                 stride=stride, padding=padding)


def relu() -> Layer:
    return Layer("relu")


def maxpool2d(pool_size=2, stride=None) -> Layer:
    return Layer("maxpool2d", pool_size=pool_size,
                 stride=pool_size if stride is None else stride)


def _conv_out_hw(h, w, kh, kw, stride, padding):
    if padding == "same":
        return -(-h // stride), -(-w // stride)
    return (h - kh) // stride + 1, (w - kw) // stride + 1


def _layer_out_shape(layer: Layer, in_shape: tuple[int, ...], index: int) -> tuple[int, ...]:
    kind = layer.kind
    if kind == "dense":
        n_in = int(np.prod(in_shape))
        if n_in != layer.weights.shape[0]:
            raise ShapeError(
                f"layer {index} (dense): expects {layer.weights.shape[0]} input features, "
                f"got shape {in_shape} with {n_in}")
        return (layer.weights.shape[1],)
    if kind == "conv2d":
        if len(in_shape) != 3:
            raise ShapeError(f"layer {index} (conv2d): expects 3-d input (h, w, c), got {in_shape}")
        h, w, c = in_shape
        kh, kw, cin, cout = layer.weights.shape
        if c != cin:
            raise ShapeError(f"layer {index} (conv2d): kernel expects {cin} channels, input has {c}")
        if layer.padding == "valid" and (h < kh or w < kw):
            raise ShapeError(f"layer {index} (conv2d): kernel {kh}x{kw} larger than input {h}x{w}")
        oh, ow = _conv_out_hw(h, w, kh, kw, layer.stride, layer.padding)
        return (oh, ow, cout)
    if kind == "maxpool2d":
        if len(in_shape) != 3:
            raise ShapeError(f"layer {index} (maxpool2d): expects 3-d input, got {in_shape}")
        h, w, c = in_shape
        k, s = layer.pool_size, layer.stride
        if h < k or w < k:
            raise ShapeError(f"layer {index} (maxpool2d): window {k} larger than input {h}x{w}")
        return ((h - k) // s + 1, (w - k) // s + 1, c)
    return in_shape  # relu


@dataclass(frozen=True)
class Model:
    """Ordered layer sequence; immutable.  The last layer must emit a vector."""

    layers: tuple[Layer, ...]
    input_shape: tuple[int, ...]

    def __post_init__(self):
        object.__setattr__(self, "layers", tuple(self.layers))
        object.__setattr__(self, "input_shape", tuple(int(v) for v in self.input_shape))
        shapes = [self.input_shape]
        for i, layer in enumerate(self.layers):
            shapes.append(_layer_out_shape(layer, shapes[-1], i))
        if len(shapes[-1]) != 1:
            raise ShapeError(f"final layer output must be a vector, got shape {shapes[-1]}")
        object.__setattr__(self, "_shapes", tuple(shapes))

    @property
    def shapes(self) -> tuple[tuple[int, ...], ...]:
        """Input shape followed by each layer's output shape."""
        return self._shapes

    @property
    def d(self) -> int:
        """Class count: dimension of the final feature vector."""
        return self._shapes[-1][0]

    @property
    def weighted_indices(self) -> tuple[int, ...]:
        return tuple(i for i, l in enumerate(self.layers) if l.kind in WEIGHTED_KINDS)

    def layer_sizes(self) -> tuple[int, ...]:
        """Parameter counts of the weighted layers, in layer order."""
        return tuple(self.layers[i].param_count for i in self.weighted_indices)

    def replace_layer(self, index: int, layer: Layer) -> "Model":
        layers = list(self.layers)
        layers[index] = layer
        return Model(tuple(layers), self.input_shape)


@dataclass(frozen=True)
class Dataset:
    """Inputs stacked along axis 0 plus integer class labels."""

    inputs: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "inputs", np.asarray(self.inputs))
        object.__setattr__(self, "labels", np.asarray(self.labels, dtype=np.int64))
        if len(self.inputs) != len(self.labels):
            raise ValueError(f"{len(self.inputs)} inputs but {len(self.labels)} labels")
        if len(self.labels) and self.labels.min() < 0:
            raise ValueError("labels must be non-negative class indices")
        if not np.all(np.isfinite(self.inputs)):
            raise ValueError("dataset inputs contain non-finite values")

    def __len__(self) -> int:
        return len(self.labels)


def _apply_conv2d(x, layer: Layer):
    # x: (n, h, w, c) float64
    w = layer.weights.astype(np.float64, copy=False)
    kh, kw, cin, cout = w.shape
    s = layer.stride
    n, h, wd, _ = x.shape
    oh, ow = _conv_out_hw(h, wd, kh, kw, s, layer.padding)
    if layer.padding == "same":
        ph = max((oh - 1) * s + kh - h, 0)
        pw = max((ow - 1) * s + kw - wd, 0)
        x = np.pad(x, ((0, 0), (ph // 2, ph - ph // 2), (pw // 2, pw - pw // 2), (0, 0)))
    out = np.zeros((n, oh, ow, cout), dtype=np.float64)
    for dy in range(kh):
        for dx in range(kw):
            xs = x[:, dy:dy + (oh - 1) * s + 1:s, dx:dx + (ow - 1) * s + 1:s, :]
            out += xs @ w[dy, dx]
    if layer.bias is not None:
        out += layer.bias.astype(np.float64, copy=False)
    return out


def _apply_maxpool2d(x, layer: Layer):
    n, h, w, c = x.shape
    k, s = layer.pool_size, layer.stride
    oh, ow = (h - k) // s + 1, (w - k) // s + 1
    if s == k and h % k == 0 and w % k == 0:
        return x.reshape(n, oh, k, ow, k, c).max(axis=(2, 4))
    out = np.empty((n, oh, ow, c), dtype=x.dtype)
    for i in range(oh):
        for j in range(ow):
            out[:, i, j, :] = x[:, i * s:i * s + k, j * s:j * s + k, :].max(axis=(1, 2))
    return out


def _apply_dense(x, layer: Layer):
    x = x.reshape(x.shape[0], -1)
    out = x @ layer.weights.astype(np.float64, copy=False)
    if layer.bias is not None:
        out += layer.bias.astype(np.float64, copy=False)
    return out


def _forward_chunk(model: Model, xs: np.ndarray) -> np.ndarray:
    x = xs.astype(np.float64, copy=False)
    for layer in model.layers:
        if layer.kind == "dense":
            x = _apply_dense(x, layer)
        elif layer.kind == "conv2d":
            x = _apply_conv2d(x, layer)
        elif layer.kind == "relu":
            x = np.maximum(x, 0.0)
        else:
            x = _apply_maxpool2d(x, layer)
    return x


def forward_batch(model: Model, inputs: np.ndarray, threads: int = 1) -> np.ndarray:
    """Map a stack of inputs to pre-softmax feature vectors, shape (n, d).

    Deterministic for any thread count: inputs are split into fixed-size
    chunks and results concatenated in chunk order.
    """
    inputs = np.asarray(inputs)
    if inputs.shape[1:] != tuple(model.input_shape):
        raise ShapeError(
            f"model expects input shape {tuple(model.input_shape)}, got {inputs.shape[1:]}")
    n = inputs.shape[0]
    if threads <= 1 or n <= _CHUNK:
        return _forward_chunk(model, inputs)
    chunks = [inputs[i:i + _CHUNK] for i in range(0, n, _CHUNK)]
    with ThreadPoolExecutor(max_workers=threads) as pool:
        parts = list(pool.map(lambda c: _forward_chunk(model, c), chunks))
    return np.concatenate(parts, axis=0)


def forward(model: Model, x: np.ndarray) -> np.ndarray:
    """Pre-softmax feature vector z for a single input."""
    return forward_batch(model, np.asarray(x)[None])[0]


def classify(z: np.ndarray) -> int:
    """Argmax class index; ties break to the lowest index."""
    z = np.asarray(z)
    if z.size == 0:
        raise ValueError("cannot classify an empty feature vector")
    return int(np.argmax(z))


def classify_batch(zs: np.ndarray) -> np.ndarray:
    zs = np.asarray(zs)
    if zs.ndim != 2 or zs.shape[1] == 0:
        raise ValueError("expected a (n, d) batch of feature vectors with d >= 1")
    return np.argmax(zs, axis=1)


def evaluate_accuracy(model: Model, dataset: Dataset, threads: int = 1) -> float:
    """Fraction of samples whose argmax matches the label."""
    if len(dataset) == 0:
        raise ValueError("cannot evaluate accuracy on an empty dataset")
    if dataset.labels.max() >= model.d:
        raise ValueError(f"label {dataset.labels.max()} out of range for d={model.d}")
    preds = classify_batch(forward_batch(model, dataset.inputs, threads=threads))
    return int(np.count_nonzero(preds == dataset.labels)) / len(dataset)


def perturb_layer(model: Model, index: int, noise: np.ndarray,
                  bias_noise: np.ndarray | None = None) -> Model:
    """Return a copy of the model with noise added to the weights of one layer.

    The perturbed weights are kept in float64 so the injected noise is exact
    even when it is orders of magnitude below the weight scale.  The bias is
    left untouched unless bias_noise is supplied.
    """
    layer = model.layers[index]
    if layer.kind not in WEIGHTED_KINDS:
        raise ValueError(f"layer {index} ({layer.kind}) has no weights to perturb")
    noise = np.asarray(noise, dtype=np.float64)
    if noise.shape != layer.weights.shape:
        raise ShapeError(
            f"layer {index} ({layer.kind}): noise shape {noise.shape} "
            f"!= weights shape {layer.weights.shape}")
    new_w = layer.weights.astype(np.float64) + noise
    new_b = layer.bias
    if bias_noise is not None:
        bias_noise = np.asarray(bias_noise, dtype=np.float64)
        if layer.bias is None or bias_noise.shape != layer.bias.shape:
            raise ShapeError(f"layer {index} ({layer.kind}): bias noise shape mismatch")
        new_b = layer.bias.astype(np.float64) + bias_noise
    return model.replace_layer(index, replace(layer, weights=new_w, bias=new_b))


def feature_difference_matrix(model: Model, other: Model, dataset: Dataset,
                              threads: int = 1) -> np.ndarray:
    """Per-sample feature differences z - z', shape (n, d)."""
    za = forward_batch(model, dataset.inputs, threads=threads)
    zb = forward_batch(other, dataset.inputs, threads=threads)
    return za - zb


def feature_delta(model: Model, other: Model, dataset: Dataset, threads: int = 1) -> float:
    """Mean over the dataset of the squared feature-vector difference norm."""
    diff = feature_difference_matrix(model, other, dataset, threads=threads)
    return float(np.mean(np.sum(diff * diff, axis=1)))
