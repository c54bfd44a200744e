"""The reverse-mode engine, verified two ways on a real layer stack.

Builds conv -> batch-norm -> relu -> attention -> loss, runs one backward
pass, and confirms the analytic gradients against central finite differences.
Also shows the two bookkeeping rules worth knowing: gradients accumulate
until zero_grad, and no_grad suspends graph recording entirely.

Run:  python3 demos/02_autograd_verification.py
"""

import numpy as np

from roadseg.attention import init_se, se_forward
from roadseg.conv import conv2d
from roadseg.losses import bce_loss
from roadseg.reference import max_rel_err, numeric_grad
from roadseg.tensor import Tensor, batch_norm, init_batch_norm, no_grad, relu, sigmoid

rng = np.random.default_rng(1)

x = Tensor(rng.uniform(-1, 1, (2, 3, 8, 8)), requires_grad=True)
w = Tensor(rng.uniform(-0.5, 0.5, (4, 3, 3, 3)), requires_grad=True)
bn = init_batch_norm(4)
se = init_se(4, reduction=2, rng=rng)
target = Tensor((rng.uniform(size=(2, 4, 6, 6)) > 0.5).astype(float))


def forward():
    stats = init_batch_norm(4)           # fresh running stats each call
    stats.gamma, stats.beta = bn.gamma, bn.beta
    h = relu(batch_norm(conv2d(x, w), stats, training=True))
    return bce_loss(sigmoid(se_forward(h, se)), target)


print("forward value:", f"{forward().item():.6f}")

leaves = {"x": x, "w": w, "gamma": bn.gamma, "beta": bn.beta,
          "se.reduce": se.reduce, "se.expand": se.expand}
for t in leaves.values():
    t.zero_grad()
forward().backward()

print("\nanalytic vs central finite differences (step 1e-4):")
for name, leaf in leaves.items():
    numeric = numeric_grad(lambda _: forward().item(), leaf.data)
    print(f"  {name:<10} rel err {max_rel_err(leaf.grad, numeric):.2e}")

print("\ngradients accumulate across backward passes:")
x.zero_grad()
forward().backward()
once = x.grad.copy()
forward().backward()
print(f"  after two passes, grad is exactly doubled: "
      f"{np.array_equal(x.grad, 2 * once)}")

with no_grad():
    y = forward()
print(f"\nunder no_grad, outputs carry no graph: parents={y._parents}")
