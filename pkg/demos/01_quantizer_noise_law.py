"""Mid-rise quantization and the 4x-per-bit noise law.

Quantizes a batch of uniform random weights at a range of bit-widths and
compares the measured residual power against the analytic prediction
N * range^2/12 * 4^-b (the classic 6 dB/bit rule).
"""

import numpy as np

from qalloc import quantize
from qalloc.quantize import QuantSpec

rng = np.random.default_rng(0)
n = 100_000
weights = rng.uniform(-1.0, 1.0, size=n)

print(f"{n} weights ~ uniform(-1, 1)\n")
print(f"{'bits':>4} {'measured':>12} {'predicted':>12} {'ratio':>7}")
previous = None
for bits in range(3, 12):
    measured = quantize.residual_power(weights, QuantSpec(bits, -1.0, 1.0))
    predicted = quantize.expected_noise_power(n, -1.0, 1.0, bits)
    line = f"{bits:>4} {measured:>12.5g} {predicted:>12.5g} {measured / predicted:>7.4f}"
    if previous is not None:
        line += f"   ({previous / measured:.3f}x down from {bits - 1} bits)"
    print(line)
    previous = measured

alpha = quantize.empirical_alpha(weights, 4, 10)
print(f"\nempirical per-bit decay rate: {alpha:.5f} (analytic ln 4 = {np.log(4):.5f})")

# a single value, by hand: 0.3 in (-1, 1) at 2 bits lands on the 0.25 midpoint
q = quantize.quantize_uniform([0.3], QuantSpec(2, -1.0, 1.0))[0]
print(f"quantize(0.3) at 2 bits over (-1, 1): {q} (residual {q - 0.3:+.2f})")
