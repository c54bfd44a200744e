"""Segmentation metrics from integer counts, and the conv cost arithmetic.

First half: precision / F1 / IoU computed from exact confusion counts, the
identities linking them, and why micro vs macro averaging differ. Second
half: multiply-accumulate counts for standard vs depthwise-separable convs,
the exact cost ratio 1/c_out + 1/k^2, and a per-layer profile of the toy
model.

Run:  python3 demos/05_metrics_and_cost.py
"""

import numpy as np

from roadseg.metrics import ConfusionCounts, confusion, f1, iou, macro_average, micro, precision
from roadseg.model import toy_config
from roadseg.profiler import (
    format_profile,
    ops_separable,
    ops_standard,
    profile_model,
    reference_comparison_text,
    separable_ratio,
)
from roadseg.tensor import Tensor

print("metrics are pure functions of integer confusion counts:")
c = ConfusionCounts(tp=3, fp=1, fn=1, tn=11)
print(f"  tp=3 fp=1 fn=1 -> precision {precision(c):.2f}, f1 {f1(c):.2f}, iou {iou(c):.2f}")
i = iou(c)
print(f"  identity f1 = 2*iou/(1+iou): {f1(c):.10f} = {2 * i / (1 + i):.10f}")

rng = np.random.default_rng(4)
pred = Tensor(rng.uniform(size=(1, 1, 32, 32)))
target = Tensor((rng.uniform(size=(1, 1, 32, 32)) > 0.7).astype(float))
print(f"  a random 32x32 map: {confusion(pred, target)}")

print("\nmicro pools counts, macro averages ratios — they disagree when")
print("images have very different class balance:")
parts = [ConfusionCounts(100, 0, 0, 100), ConfusionCounts(1, 9, 9, 181)]
print(f"  micro iou {iou(micro(parts)):.3f} vs macro iou {macro_average(parts, iou):.3f}")

print("\n" + "=" * 72 + "\n")
print(reference_comparison_text())

print("the exact ratio collapses to 1/c_out + 1/k^2 (map size and c_in cancel):")
for k, c_out in [(3, 64), (3, 256), (5, 64)]:
    std = ops_standard(100, 100, k, 32, c_out)
    sep = ops_separable(100, 100, k, 32, c_out)[2]
    r = separable_ratio(k, c_out)
    print(f"  k={k}, c_out={c_out:>3}: {sep:>13,} / {std:>13,} = {r} = {float(r):.5f}")

print("\nper-layer profile of the toy model at 64x64 input:")
print(format_profile(profile_model(toy_config('dense'), input_size=(64, 64))))
