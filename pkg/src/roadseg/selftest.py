"""Embedded verification suite: fast oracle checks runnable from the CLI.

Each check is independent, seeded, and answers one question about the
installed build: do the analytic gradients match finite differences, do the
fast conv paths agree with the naive oracles, do the frozen cost figures and
schedule constants still hold, does persistence round-trip bit-exactly.
The whole suite runs in a few seconds on one CPU core.
"""

from __future__ import annotations

import tempfile
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .checkpoint import load_arrays, save_arrays
from .conv import conv2d, separable_conv2d
from .losses import bce_loss
from .metrics import confusion
from .model import Model, toy_config
from .optim import DecaySchedule
from .profiler import REFERENCE_COMPARISON, ops_separable, reference_comparison_text
from .reference import (
    dilated_conv_naive,
    max_rel_err,
    numeric_grad,
    separable_conv_naive,
    zero_stuff,
)
from .tensor import BatchNormParams, Tensor, batch_norm, init_batch_norm


@dataclass(frozen=True)
class CheckResult:
    name: str
    ok: bool
    detail: str


def _fd_check(build, leaves, tol=1e-4) -> str:
    """Max relative error between backward() and central differences."""
    worst = 0.0
    for leaf in leaves:
        leaf.zero_grad()
    build().backward()
    for leaf in leaves:
        num = numeric_grad(lambda _: build().item(), leaf.data)
        worst = max(worst, max_rel_err(leaf.grad, num))
    if worst >= tol:
        raise AssertionError(f"gradient mismatch {worst:.2e} >= {tol}")
    return f"max rel err {worst:.2e}"


def _check_dilated_gradient() -> str:
    rng = np.random.default_rng(1)
    x = Tensor(rng.uniform(-1, 1, (1, 2, 9, 9)), requires_grad=True)
    w = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)), requires_grad=True)
    b = Tensor(rng.uniform(-1, 1, (1, 3, 1, 1)), requires_grad=True)
    return _fd_check(lambda: (conv2d(x, w, b, dilation=2) * conv2d(x, w, b, dilation=2)).sum(),
                     [x, w, b])


def _check_separable_gradient() -> str:
    rng = np.random.default_rng(2)
    x = Tensor(rng.uniform(-1, 1, (1, 3, 8, 8)), requires_grad=True)
    dw = Tensor(rng.uniform(-1, 1, (3, 1, 3, 3)), requires_grad=True)
    pw = Tensor(rng.uniform(-1, 1, (4, 3, 1, 1)), requires_grad=True)
    return _fd_check(lambda: separable_conv2d(x, dw, pw, dilation=2, padding=2).sum(),
                     [x, dw, pw])


def _check_batch_norm_gradient() -> str:
    rng = np.random.default_rng(3)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 4, 4)), requires_grad=True)
    params = init_batch_norm(3)
    weight = Tensor(rng.uniform(0.5, 1.5, (1, 3, 4, 4)))  # break the mean's symmetry

    def build():
        fresh = BatchNormParams(
            gamma=params.gamma, beta=params.beta,
            running_mean=params.running_mean.copy(), running_var=params.running_var.copy(),
        )
        return (batch_norm(x, fresh, training=True) * weight).sum()

    return _fd_check(build, [x, params.gamma, params.beta])


def _check_bce_gradient() -> str:
    rng = np.random.default_rng(4)
    p = Tensor(rng.uniform(0.05, 0.95, (1, 1, 5, 5)), requires_grad=True)
    t = Tensor((rng.uniform(size=(1, 1, 5, 5)) > 0.5).astype(float))
    return _fd_check(lambda: bce_loss(p, t), [p])


def _check_dilation_one_equivalence() -> str:
    rng = np.random.default_rng(5)
    x = Tensor(rng.uniform(-1, 1, (2, 3, 7, 7)))
    w = Tensor(rng.uniform(-1, 1, (4, 3, 3, 3)))
    fast = conv2d(x, w, dilation=1).data
    naive = dilated_conv_naive(x.data, w.data, dilation=1)
    err = float(np.abs(fast - naive).max())
    if err >= 1e-10:
        raise AssertionError(f"rate-1 conv differs from the loop oracle by {err:.2e}")
    dw = Tensor(rng.uniform(-1, 1, (3, 1, 3, 3)))
    pw = Tensor(rng.uniform(-1, 1, (5, 3, 1, 1)))
    err2 = float(np.abs(
        separable_conv2d(x, dw, pw).data - separable_conv_naive(x.data, dw.data, pw.data)
    ).max())
    if err2 >= 1e-10:
        raise AssertionError(f"separable conv differs from the loop oracle by {err2:.2e}")
    return f"standard {err:.1e}, separable {err2:.1e}"


def _check_zero_stuffing_equivalence() -> str:
    rng = np.random.default_rng(6)
    x = Tensor(rng.uniform(-1, 1, (1, 2, 13, 13)))
    w = Tensor(rng.uniform(-1, 1, (3, 2, 3, 3)))
    dilated = conv2d(x, w, dilation=3).data
    stuffed = dilated_conv_naive(x.data, zero_stuff(w.data, 3), dilation=1)
    err = float(np.abs(dilated - stuffed).max())
    if err >= 1e-12:
        raise AssertionError(f"dilated vs zero-stuffed mismatch {err:.2e}")
    return f"max abs err {err:.1e}"


def _check_cost_figures() -> str:
    r = REFERENCE_COMPARISON
    triple = ops_separable(r["h"], r["w"], r["k"], r["c_in"], r["c_out"])
    if triple != (7_077_888, 50_331_648, 57_409_536):
        raise AssertionError(f"separable figures drifted: {triple}")
    ratio = r["separable"] / r["standard_quoted"]
    if abs(ratio - 0.3798) >= 1e-4:
        raise AssertionError(f"quoted ratio drifted: {ratio:.6f}")
    if "151,165,440" not in reference_comparison_text():
        raise AssertionError("reference table lost its standard figure")
    return f"ratio {ratio:.4f}"


def _check_metrics_oracle() -> str:
    rng = np.random.default_rng(7)
    pred = Tensor(rng.uniform(size=(1, 1, 12, 12)))
    target = Tensor((rng.uniform(size=(1, 1, 12, 12)) > 0.5).astype(float))
    fast = confusion(pred, target)
    tp = fp = fn = tn = 0
    for i in range(12):
        for j in range(12):
            p = pred.data[0, 0, i, j] >= 0.5
            t = target.data[0, 0, i, j] > 0.5
            tp += p and t
            fp += p and not t
            fn += (not p) and t
            tn += (not p) and not t
    if (fast.tp, fast.fp, fast.fn, fast.tn) != (tp, fp, fn, tn):
        raise AssertionError(f"counts {fast} differ from the pixel loop")
    return f"counts {fast.tp}/{fast.fp}/{fast.fn}/{fast.tn} exact"


def _check_schedule_endpoints() -> str:
    sched = DecaySchedule()
    if sched.lr(0) != 0.001:
        raise AssertionError(f"lr(0) = {sched.lr(0)!r}")
    drift = abs(sched.lr(10000) - 0.00096)
    if drift >= 1e-12:
        raise AssertionError(f"lr(10000) off by {drift:.2e}")
    return "lr(0) = 0.001, lr(10000) = 0.00096"


def _check_model_output_range() -> str:
    model = Model.build(toy_config(), seed=0)
    x = Tensor(np.random.default_rng(8).uniform(size=(1, 3, 32, 32)))
    y = model.forward(x)
    if y.shape != (1, 1, 32, 32):
        raise AssertionError(f"output shape {y.shape}")
    if not (0.0 < y.data.min() and y.data.max() < 1.0):
        raise AssertionError("probabilities left (0, 1)")
    return f"output (1, 1, 32, 32) in ({y.data.min():.3f}, {y.data.max():.3f})"


def _check_checkpoint_roundtrip() -> str:
    rng = np.random.default_rng(9)
    arrays = [(f"t{i}", rng.standard_normal((2, 3)).astype(np.float64)) for i in range(4)]
    with tempfile.TemporaryDirectory() as tmp:
        path = Path(tmp) / "roundtrip.ckpt"
        save_arrays(path, arrays)
        loaded = load_arrays(path)
    for name, a in arrays:
        if name not in loaded or a.tobytes() != loaded[name].tobytes():
            raise AssertionError(f"array {name} not bit-identical")
    return "4 arrays bit-identical"


_CHECKS = [
    ("dilated-conv-gradient", _check_dilated_gradient),
    ("separable-conv-gradient", _check_separable_gradient),
    ("batch-norm-gradient", _check_batch_norm_gradient),
    ("bce-gradient", _check_bce_gradient),
    ("rate-one-equivalence", _check_dilation_one_equivalence),
    ("zero-stuffing-equivalence", _check_zero_stuffing_equivalence),
    ("cost-figures", _check_cost_figures),
    ("metrics-pixel-oracle", _check_metrics_oracle),
    ("schedule-endpoints", _check_schedule_endpoints),
    ("model-output-range", _check_model_output_range),
    ("checkpoint-roundtrip", _check_checkpoint_roundtrip),
]


def run_selftest() -> list[CheckResult]:
    results = []
    for name, check in _CHECKS:
        try:
            detail = check()
            results.append(CheckResult(name, True, detail))
        except Exception as err:  # any failure is a report, not a crash
            results.append(CheckResult(name, False, f"{type(err).__name__}: {err}"))
    return results


def selftest_ok(results: list[CheckResult]) -> bool:
    return all(r.ok for r in results)


def format_results(results: list[CheckResult]) -> str:
    width = max(len(r.name) for r in results)
    lines = [
        f"{'ok  ' if r.ok else 'FAIL'} {r.name:<{width}}  {r.detail}" for r in results
    ]
    passed = sum(r.ok for r in results)
    lines.append(f"{passed}/{len(results)} checks passed")
    return "\n".join(lines) + "\n"
