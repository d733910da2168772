"""NAdam: Adam with Nesterov momentum and a scheduled decay.

Update rule, with step counter t starting at 1 and Pi the running
product of the schedule:

    mu_t  = beta1 * (1 - 0.5 * 0.96**(t / 250))
    Pi_t  = Pi_{t-1} * mu_t
    m    <- beta1 * m + (1 - beta1) * g
    v    <- beta2 * v + (1 - beta2) * g^2
    m_hat = mu_{t+1} * m / (1 - Pi_t * mu_{t+1}) + (1 - mu_t) * g / (1 - Pi_t)
    v_hat = v / (1 - beta2**t)
    theta <- theta - lr * m_hat / (sqrt(v_hat) + eps)
"""

from __future__ import annotations

import numpy as np

from vground.errors import NumericsError
from vground.numerics.params import ParamStore

BETA1 = 0.99
BETA2 = 0.999
EPS = 1e-8


def momentum_schedule(t: int, beta1: float = BETA1) -> float:
    return beta1 * (1.0 - 0.5 * 0.96 ** (t / 250.0))


def nadam_step(store: ParamStore, lr: float,
               beta1: float = BETA1, beta2: float = BETA2, eps: float = EPS) -> None:
    """Apply one NAdam update to every trainable parameter, then zero grads.

    Parameters with no gradient this step are treated as having g = 0,
    so their accumulated momentum still decays.
    """
    for name, slot in store.slots():
        g = slot.param.grad
        if g is not None and not np.all(np.isfinite(g)):
            raise NumericsError(f"non-finite gradient for tensor '{name}'")

    store.step += 1
    t = store.step
    mu_t = momentum_schedule(t, beta1)
    mu_next = momentum_schedule(t + 1, beta1)
    store.mu_product *= mu_t
    mp = store.mu_product
    bias2 = 1.0 - beta2 ** t

    for name, slot in store.slots():
        p = slot.param
        if not p.trainable:
            continue
        g = p.grad if p.grad is not None else np.zeros_like(p.data)
        slot.m *= beta1
        slot.m += (1.0 - beta1) * g
        slot.v *= beta2
        slot.v += (1.0 - beta2) * g * g
        m_hat = (mu_next * slot.m / (1.0 - mp * mu_next)
                 + (1.0 - mu_t) * g / (1.0 - mp))
        v_hat = slot.v / bias2
        p.data -= lr * m_hat / (np.sqrt(v_hat) + eps)
    store.zero_grads()
