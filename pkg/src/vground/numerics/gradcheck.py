"""Central finite-difference verification of analytic gradients."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from vground.numerics.params import ParamStore


@dataclass
class GradCheckReport:
    """Per-tensor and overall maxima of |g_a - g_n| / max(|g_a|, |g_n|, 1e-8)."""

    per_tensor: dict[str, float] = field(default_factory=dict)
    max_rel_err: float = 0.0
    worst_tensor: str = ""

    def __str__(self):
        lines = [f"{name:40s} {err:.3e}" for name, err in self.per_tensor.items()]
        lines.append(f"{'max':40s} {self.max_rel_err:.3e}  ({self.worst_tensor})")
        return "\n".join(lines)


def finite_diff_check(loss_fn, store: ParamStore, epsilon: float | None = None,
                      corrupt_grad_of: str | None = None) -> GradCheckReport:
    """Compare analytic gradients of `loss_fn` against central differences.

    `loss_fn` must be deterministic and rebuild its graph from the current
    store values on every call (no hidden state updates); run it in 64-bit
    mode for meaningful tolerances. Each scalar parameter is probed with
    central differences at steps h, h/2, and h/4 (h = eps * max(1, |theta|))
    combined by two Richardson levels, which cancels curvature up to
    fourth order while the large base step keeps roundoff noise down.

    `corrupt_grad_of` doubles one tensor's analytic gradient before the
    comparison; it exists so the detector itself can be exercised.
    """
    store.zero_grads()
    loss = loss_fn()
    loss.backward()
    analytic = {}
    for name, slot in store.slots():
        if not slot.param.trainable:
            continue
        g = slot.param.grad
        analytic[name] = np.zeros_like(slot.param.data) if g is None else g.copy()
        if name == corrupt_grad_of:
            analytic[name] *= 2.0
    store.zero_grads()

    if epsilon is None:
        epsilon = 2e-3 if store.trainable()[0].data.dtype == np.float64 else 1e-2

    def central(flat, i, orig, h):
        flat[i] = orig + h
        f_plus = loss_fn().item()
        flat[i] = orig - h
        f_minus = loss_fn().item()
        flat[i] = orig
        return (f_plus - f_minus) / (2.0 * h)

    report = GradCheckReport()
    for name, g_a in analytic.items():
        value = store[name].data
        flat = value.reshape(-1)
        g_n = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            h = epsilon * max(1.0, abs(float(orig)))
            d1 = central(flat, i, orig, h)
            d2 = central(flat, i, orig, h / 2.0)
            d4 = central(flat, i, orig, h / 4.0)
            e1 = (4.0 * d2 - d1) / 3.0
            e2 = (4.0 * d4 - d2) / 3.0
            g_n[i] = (16.0 * e2 - e1) / 15.0
        g_a_flat = g_a.reshape(-1)
        denom = np.maximum(np.maximum(np.abs(g_a_flat), np.abs(g_n)), 1e-8)
        rel = float(np.max(np.abs(g_a_flat - g_n) / denom)) if flat.size else 0.0
        report.per_tensor[name] = rel
    if report.per_tensor:
        worst = max(report.per_tensor.items(), key=lambda kv: kv[1])
        report.worst_tensor, report.max_rel_err = worst
    return report
