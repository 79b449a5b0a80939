"""Uniform mid-rise weight quantizer and its analytic noise-power model.

A b-bit mid-rise quantizer splits [w_min, w_max] into 2**b equal cells and
reconstructs every value at its cell midpoint, so the residual w - q(w) is
bounded by half a step and is well modelled as uniform over one cell.  Under
that model the expected total residual power over N values is

    N * (w_max - w_min)**2 / 12 * exp(-b * ln 4)

i.e. it quadruples for every bit removed (the classic 6 dB/bit rule).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .nn import Layer, Model, WEIGHTED_KINDS

ALPHA = math.log(4.0)  # per-bit noise-power decay rate

B_MIN = 2
B_MAX = 16


@dataclass(frozen=True)
class QuantSpec:
    """Bit count plus the value range the quantizer covers."""

    bits: float
    w_min: float
    w_max: float

    def __post_init__(self):
        if not (self.bits >= 1):
            raise ValueError(f"bits must be >= 1, got {self.bits}")
        if not (math.isfinite(self.w_min) and math.isfinite(self.w_max)):
            raise ValueError("quantization range must be finite")
        if not self.w_min < self.w_max:
            raise ValueError(f"empty quantization range ({self.w_min}, {self.w_max})")

    @property
    def cells(self) -> float:
        return 2.0 ** self.bits

    @property
    def step(self) -> float:
        return (self.w_max - self.w_min) / self.cells


@dataclass(frozen=True)
class NoiseModel:
    """Predicted residual power p' * exp(-alpha * b) for a weight tensor."""

    p_prime: float
    alpha: float = ALPHA

    def predict(self, bits: float) -> float:
        return self.p_prime * math.exp(-self.alpha * bits)


def weight_noise_model(count: int, w_min: float, w_max: float) -> NoiseModel:
    """Noise model for `count` values uniformly covering (w_min, w_max)."""
    if count < 1:
        raise ValueError("count must be >= 1")
    spec = QuantSpec(1, w_min, w_max)  # validates the range
    return NoiseModel(count * (spec.w_max - spec.w_min) ** 2 / 12.0)


def expected_noise_power(count: int, w_min: float, w_max: float, bits: float) -> float:
    """Expected total squared residual for count values quantized at `bits`."""
    if bits < 1:
        raise ValueError(f"bits must be >= 1, got {bits}")
    return weight_noise_model(count, w_min, w_max).predict(bits)


def quantize_uniform(values, spec: QuantSpec) -> np.ndarray:
    """Quantize values to cell midpoints of the mid-rise grid given by spec.

    Out-of-range values are clamped; w == w_max maps to the top cell.
    Returns float64; every in-range residual satisfies |w - q(w)| <= step/2.
    """
    v = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(v)):
        raise ValueError("cannot quantize non-finite values")
    step = spec.step
    idx = np.floor((np.clip(v, spec.w_min, spec.w_max) - spec.w_min) / step)
    idx = np.minimum(idx, math.ceil(spec.cells) - 1)
    return spec.w_min + (idx + 0.5) * step


def residual_power(values, spec: QuantSpec) -> float:
    """Total squared quantization residual, the measured side of the noise law."""
    v = np.asarray(values, dtype=np.float64)
    r = quantize_uniform(v, spec) - v
    return float(np.sum(r * r))


def tensor_spec(values, bits: float) -> QuantSpec | None:
    """Per-tensor min/max spec; None when the tensor is constant (nothing to do)."""
    v = np.asarray(values)
    lo, hi = float(v.min()), float(v.max())
    if lo == hi:
        return None
    return QuantSpec(bits, lo, hi)


def quantize_tensor(values: np.ndarray, bits: float) -> np.ndarray:
    """Quantize one tensor at its own min/max range; float32 result."""
    spec = tensor_spec(values, bits)
    if spec is None:
        return np.asarray(values, dtype=np.float32).copy()
    return quantize_uniform(values, spec).astype(np.float32)


def quantize_model(model: Model, allocation) -> Model:
    """Quantize every weighted layer's weights and bias at its allocated bits.

    `allocation` is a BitAllocation or a plain sequence with one integer
    bit-width per weighted layer.  Weightless layers pass through; the input
    model is left unmodified.
    """
    bits = list(getattr(allocation, "b_int", allocation))
    weighted = model.weighted_indices
    if len(bits) != len(weighted):
        raise ValueError(f"allocation has {len(bits)} bit-widths for {len(weighted)} weighted layers")
    per_layer = dict(zip(weighted, bits))
    layers = []
    for i, layer in enumerate(model.layers):
        if layer.kind not in WEIGHTED_KINDS:
            layers.append(layer)
            continue
        b = per_layer[i]
        if b != int(b) or not (B_MIN <= int(b) <= B_MAX):
            raise ValueError(f"layer {i}: bit-width must be an integer in [{B_MIN}, {B_MAX}], got {b}")
        b = int(b)
        new_w = quantize_tensor(layer.weights, b)
        new_b = None if layer.bias is None else quantize_tensor(layer.bias, b)
        layers.append(Layer(layer.kind, new_w, new_b, stride=layer.stride,
                            padding=layer.padding, pool_size=layer.pool_size))
    return Model(tuple(layers), model.input_shape)


def quantize_single_layer(model: Model, index: int, bits: int) -> Model:
    """Quantize just one weighted layer, leaving the rest exact."""
    layer = model.layers[index]
    if layer.kind not in WEIGHTED_KINDS:
        raise ValueError(f"layer {index} ({layer.kind}) has no weights to quantize")
    if bits != int(bits) or not (B_MIN <= int(bits) <= B_MAX):
        raise ValueError(f"bit-width must be an integer in [{B_MIN}, {B_MAX}], got {bits}")
    new_w = quantize_tensor(layer.weights, int(bits))
    new_b = None if layer.bias is None else quantize_tensor(layer.bias, int(bits))
    return model.replace_layer(index, Layer(layer.kind, new_w, new_b, stride=layer.stride,
                                            padding=layer.padding, pool_size=layer.pool_size))


def empirical_alpha(values, b_lo: int, b_hi: int, w_min: float | None = None,
                    w_max: float | None = None) -> float:
    """Measured per-bit decay rate ln(P(b_lo)/P(b_hi)) / (b_hi - b_lo).

    Diagnostic for how closely a weight tensor follows the ln(4)/bit law;
    the allocator always uses the analytic ALPHA.
    """
    if b_hi <= b_lo:
        raise ValueError("need b_hi > b_lo")
    v = np.asarray(values, dtype=np.float64)
    if w_min is None or w_max is None:
        w_min, w_max = float(v.min()), float(v.max())
    p_lo = residual_power(v, QuantSpec(b_lo, w_min, w_max))
    p_hi = residual_power(v, QuantSpec(b_hi, w_min, w_max))
    if p_lo <= 0 or p_hi <= 0:
        raise ValueError("residual power vanished; tensor too coarse for this diagnostic")
    return math.log(p_lo / p_hi) / (b_hi - b_lo)
