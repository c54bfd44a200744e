"""Dilated and depthwise-separable convolutions, checked against slow oracles.

Walks through the three conv forms the library is built on:
  1. a dilated conv equals a plain conv with a zero-stuffed kernel,
  2. the depthwise+pointwise pair equals the naive per-pixel loop,
  3. dilation widens the receptive field without adding parameters.

Run:  python3 demos/01_dilated_separable_convs.py
"""

import numpy as np

from roadseg.conv import (
    conv2d,
    receptive_field,
    receptive_field_chain,
    same_padding,
    separable_conv2d,
)
from roadseg.reference import dilated_conv_naive, separable_conv_naive, zero_stuff
from roadseg.tensor import Tensor

rng = np.random.default_rng(0)

print("1) dilation as zero-stuffing")
print("   a 3x3 kernel at dilation d acts like a (2d+1)x(2d+1) kernel that is")
print("   zero everywhere except the nine original taps:\n")
x = Tensor(rng.uniform(-1, 1, (1, 2, 15, 15)))
w = Tensor(rng.uniform(-1, 1, (4, 2, 3, 3)))
for d in (1, 2, 3):
    fast = conv2d(x, w, dilation=d).data
    stuffed = dilated_conv_naive(x.data, zero_stuff(w.data, d), dilation=1)
    stuffed_k = zero_stuff(w.data, d).shape[-1]
    print(f"   d={d}: stuffed kernel {stuffed_k}x{stuffed_k}, "
          f"max |fast - stuffed| = {np.abs(fast - stuffed).max():.2e}")

print("\n2) separable = depthwise then pointwise")
dw = Tensor(rng.uniform(-1, 1, (2, 1, 3, 3)))   # one 3x3 filter per channel
pw = Tensor(rng.uniform(-1, 1, (5, 2, 1, 1)))   # 1x1 cross-channel mix
fast = separable_conv2d(x, dw, pw, dilation=2, padding=same_padding(3, 2)).data
naive = separable_conv_naive(x.data, dw.data, pw.data, dilation=2,
                             padding=same_padding(3, 2))
print(f"   fast path vs per-pixel loop: max abs err = {np.abs(fast - naive).max():.2e}")
print(f"   parameters: depthwise {dw.data.size} + pointwise {pw.data.size}"
      f" = {dw.data.size + pw.data.size}"
      f"  (standard 3x3 would need {5 * 2 * 9})")

print("\n3) receptive fields grow with dilation, parameters do not")
for d in (1, 2, 4, 8):
    print(f"   3x3 at d={d:>2}: sees {receptive_field(3, d):>2} pixels across, 9 weights")

print("\n   stacking ascending rates (a dense cascade spine) compounds them:")
for rates in [(1, 2), (3, 6, 12), (3, 6, 12, 18)]:
    chain = [(3, d, 1) for d in rates]
    print(f"   rates {rates}: combined receptive field {receptive_field_chain(chain)} px")
