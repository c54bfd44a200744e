"""Dense cascade vs parallel branches: channels, receptive fields, gradients.

The two multi-rate context modules share the same dilation rates but wire
them differently. Parallel branches each see the raw input, so the widest
branch bounds the receptive field. The dense cascade feeds every layer the
concatenation of the input and all earlier outputs, so rates compound —
measured here exactly, from the gradient footprint of one output pixel.

Run:  python3 demos/03_pyramid_comparison.py
"""

import numpy as np

from roadseg.pyramid import (
    DenseCascadeConfig,
    ParallelPyramidConfig,
    cascade_receptive_field,
    dense_cascade,
    init_dense_cascade,
    init_parallel_pyramid,
    parallel_pyramid,
    parallel_receptive_field,
)
from roadseg.tensor import Tensor

rates = (3, 6, 12)
rng = np.random.default_rng(2)
c_in = 6

dense_cfg = DenseCascadeConfig(rates, growth_channels=4, projection_channels=16)
par_cfg = ParallelPyramidConfig(rates, branch_channels=16)

print(f"shared dilation rates: {rates}\n")
print("channel schedule of the dense cascade (input c_in = 6, growth g = 4):")
for l in range(len(rates)):
    print(f"  layer {l} consumes {dense_cfg.layer_in_channels(l, c_in):>2} channels "
          f"(input + {l} earlier outputs), emits {dense_cfg.growth_channels}")
print(f"  concat before projection: {dense_cfg.concat_channels(c_in)} channels "
      f"= c_in + L*g = {c_in} + {len(rates)}*{dense_cfg.growth_channels}")

print("\nreceptive fields (formula):")
print(f"  parallel: widest branch only      -> {parallel_receptive_field(par_cfg):>3} px")
print(f"  dense:    rates compound in series -> {cascade_receptive_field(dense_cfg):>3} px")


def gradient_footprint(forward, size=49):
    """Width of the input region that one centered output pixel depends on."""
    x = Tensor(rng.uniform(0.5, 1.0, (1, c_in, size, size)), requires_grad=True)
    y = forward(x)
    seed = np.zeros(y.shape)
    seed[0, 0, size // 2, size // 2] = 1.0
    y.backward(seed=seed)
    support = np.abs(x.grad).sum(axis=(0, 1)) > 0
    rows = np.flatnonzero(support.any(axis=1))
    return int(rows[-1] - rows[0] + 1)


# positive weights keep every relu active, so the footprint is exact
dense_w = init_dense_cascade(dense_cfg, c_in, rng)
for unit in dense_w.layers + [dense_w.projection]:
    for t in filter(None, [unit.conv.standard, unit.conv.depthwise, unit.conv.pointwise]):
        t.data[...] = np.abs(t.data) + 0.01
par_w = init_parallel_pyramid(par_cfg, c_in, rng)
for unit in par_w.branches + [par_w.projection]:
    for t in filter(None, [unit.conv.standard, unit.conv.depthwise, unit.conv.pointwise]):
        t.data[...] = np.abs(t.data) + 0.01

print("\nreceptive fields (measured from one pixel's gradient support):")
print(f"  parallel: {gradient_footprint(lambda x: parallel_pyramid(x, par_cfg, par_w)):>3} px")
print(f"  dense:    {gradient_footprint(lambda x: dense_cascade(x, dense_cfg, dense_w)):>3} px")

out_d = dense_cascade(Tensor(rng.uniform(size=(2, c_in, 12, 12))), dense_cfg, dense_w)
out_p = parallel_pyramid(Tensor(rng.uniform(size=(2, c_in, 12, 12))), par_cfg, par_w)
print(f"\nboth modules keep the spatial grid and fix the channel count:")
print(f"  dense    (2, {c_in}, 12, 12) -> {out_d.shape}")
print(f"  parallel (2, {c_in}, 12, 12) -> {out_p.shape}")
