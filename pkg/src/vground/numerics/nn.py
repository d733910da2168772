"""GRU cell and batch normalization, built on the autodiff primitives."""

from __future__ import annotations

import numpy as np

from vground.errors import NumericsError
from vground.numerics import tensor as T
from vground.numerics.params import BatchNormState, GruParams
from vground.numerics.tensor import Tensor


def gru_cell_forward(x, h, params: GruParams) -> Tensor:
    """One GRU step.

    z = sigmoid(x W_z + h U_z + b_z)
    r = sigmoid(x W_r + h U_r + b_r)
    cand = tanh(x W_h + (r * h) U_h + b_h)
    h' = (1 - z) * h + z * cand

    Accepts single vectors or B-row matrices; shapes must agree with the
    registered parameter dims.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    h = h if isinstance(h, Tensor) else Tensor(h)
    single = x.data.ndim == 1
    if single:
        x = T.reshape(x, (1, -1))
        h = T.reshape(h, (1, -1))
    if x.data.shape[1] != params.W_z.data.shape[0]:
        raise ValueError(f"input dim {x.data.shape[1]} does not match "
                         f"W_z rows {params.W_z.data.shape[0]}")
    if h.data.shape[1] != params.U_z.data.shape[0]:
        raise ValueError(f"hidden dim {h.data.shape[1]} does not match "
                         f"U_z rows {params.U_z.data.shape[0]}")
    z = T.sigmoid(x @ params.W_z + h @ params.U_z + params.b_z)
    r = T.sigmoid(x @ params.W_r + h @ params.U_r + params.b_r)
    cand = T.tanh(x @ params.W_h + (r * h) @ params.U_h + params.b_h)
    out = (1.0 - z) * h + z * cand
    if single:
        out = T.reshape(out, (-1,))
    return out


def batch_norm(x, state: BatchNormState, update_stats: bool = True) -> Tensor:
    """Normalize B x hid activations per feature.

    Train mode uses the batch's own (biased) statistics and folds them
    into the running stats with `state.momentum`; infer mode uses the
    running statistics. `update_stats=False` suppresses the side effect,
    keeping the call pure (needed by the finite-difference checker).
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    if state.mode == "infer":
        inv = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x - state.running_mean.astype(x.data.dtype)) * inv.astype(x.data.dtype)
        return xhat * state.gamma + state.beta
    if x.data.shape[0] < 2:
        raise NumericsError("batch_norm in train mode requires at least 2 rows")
    return masked_batch_norm(x, state, np.ones(x.data.shape[0], dtype=x.data.dtype),
                             update_stats=update_stats)


def masked_batch_norm(x: Tensor, state: BatchNormState, active: np.ndarray,
                      update_stats: bool = True) -> Tensor:
    """Train-mode batch norm with statistics taken over `active` rows only.

    Output rows outside the active set are normalized with the same
    statistics but carry no gradient weight downstream (callers mask
    them). Requires at least one active row.
    """
    n = float(active.sum())
    if n < 1:
        raise NumericsError("masked_batch_norm: no active rows")
    acol = active.astype(x.data.dtype)[:, None]
    mean = T.tsum(x * acol, axis=0) * (1.0 / n)
    centered = x - mean
    var = T.tsum(centered * centered * acol, axis=0) * (1.0 / n)
    xhat = centered / T.sqrt(var + state.eps)
    out = xhat * state.gamma + state.beta
    if update_stats:
        m = state.momentum
        state.running_mean = (m * state.running_mean
                              + (1.0 - m) * mean.data).astype(state.running_mean.dtype)
        state.running_var = (m * state.running_var
                             + (1.0 - m) * var.data).astype(state.running_var.dtype)
    return out
