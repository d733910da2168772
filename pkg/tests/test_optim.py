"""NAdam update rule against an independently coded scalar reference."""

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from vground.errors import NumericsError
from vground.numerics import tensor as T
from vground.numerics.optim import nadam_step
from vground.numerics.params import ParamStore


def nadam_reference(theta0, grads, lr, beta1=0.99, beta2=0.999, eps=1e-8):
    """Straight-line transcription of the documented update, one scalar."""
    theta = theta0
    m = 0.0
    v = 0.0
    mu_prod = 1.0
    for t, g in enumerate(grads, start=1):
        mu_t = beta1 * (1.0 - 0.5 * 0.96 ** (t / 250.0))
        mu_next = beta1 * (1.0 - 0.5 * 0.96 ** ((t + 1) / 250.0))
        mu_prod = mu_prod * mu_t
        m = beta1 * m + (1.0 - beta1) * g
        v = beta2 * v + (1.0 - beta2) * g * g
        m_hat = mu_next * m / (1.0 - mu_prod * mu_next) + (1.0 - mu_t) * g / (1.0 - mu_prod)
        v_hat = v / (1.0 - beta2 ** t)
        theta = theta - lr * m_hat / (np.sqrt(v_hat) + eps)
    return theta


def quadratic_run(store, p, lr, steps):
    traj = []
    for _ in range(steps):
        loss = T.tsum(p * p) * 0.5
        loss.backward()
        nadam_step(store, lr)
        traj.append(float(p.data[0]))
    return traj


class TestNadam:
    def test_single_step_matches_reference(self):
        with T.using_dtype(np.float64):
            store = ParamStore()
            p = store.register("theta", np.array([1.0]))
            loss = T.tsum(p * p) * 0.5  # grad = theta = 1.0
            loss.backward()
            nadam_step(store, lr=0.001)
            want = nadam_reference(1.0, [1.0], lr=0.001)
            assert p.data[0] == pytest.approx(want, abs=1e-10)

    def test_many_steps_match_reference(self):
        with T.using_dtype(np.float64):
            store = ParamStore()
            p = store.register("theta", np.array([1.0]))
            grads = []
            theta = 1.0
            for _ in range(300):
                grads.append(theta)
                loss = T.tsum(p * p) * 0.5
                loss.backward()
                nadam_step(store, lr=0.05)
                theta = float(p.data[0])
            # replay the recorded gradients through the reference
            ref_theta, m, v, mu_prod = 1.0, 0.0, 0.0, 1.0
            for t, g in enumerate(grads, start=1):
                mu_t = 0.99 * (1.0 - 0.5 * 0.96 ** (t / 250.0))
                mu_next = 0.99 * (1.0 - 0.5 * 0.96 ** ((t + 1) / 250.0))
                mu_prod *= mu_t
                m = 0.99 * m + 0.01 * g
                v = 0.999 * v + 0.001 * g * g
                m_hat = mu_next * m / (1.0 - mu_prod * mu_next) + (1.0 - mu_t) * g / (1.0 - mu_prod)
                v_hat = v / (1.0 - 0.999 ** t)
                ref_theta -= 0.05 * m_hat / (np.sqrt(v_hat) + 1e-8)
            assert ref_theta != 1.0  # it moved
            assert float(p.data[0]) == pytest.approx(ref_theta, abs=1e-10)

    def test_quadratic_converges(self):
        with T.using_dtype(np.float64):
            store = ParamStore()
            p = store.register("theta", np.array([1.0]))
            traj = quadratic_run(store, p, lr=0.05, steps=200)
            assert abs(traj[-1]) < 0.1

    def test_zero_gradient_leaves_parameter(self):
        with T.using_dtype(np.float64):
            store = ParamStore()
            p = store.register("theta", np.array([3.0]))
            for _ in range(5):
                nadam_step(store, lr=0.1)  # no backward: grad treated as zero
            assert p.data[0] == 3.0

    def test_frozen_parameter_untouched(self):
        with T.using_dtype(np.float64):
            store = ParamStore()
            p = store.register("theta", np.array([1.0]), trainable=False)
            q = store.register("phi", np.array([1.0]))
            loss = T.tsum(p * q)
            loss.backward()
            nadam_step(store, lr=0.1)
            assert p.data[0] == 1.0
            assert q.data[0] != 1.0

    def test_nan_gradient_names_tensor(self):
        store = ParamStore()
        p = store.register("bad_tensor", np.array([1.0]))
        p.grad = np.array([np.nan], dtype=p.data.dtype)
        with pytest.raises(NumericsError, match="bad_tensor"):
            nadam_step(store, lr=0.1)

    def test_grads_zeroed_after_step(self):
        store = ParamStore()
        p = store.register("theta", np.array([1.0]))
        loss = T.tsum(p * p)
        loss.backward()
        nadam_step(store, lr=0.1)
        assert p.grad is None


@settings(max_examples=30, deadline=None)
@given(st.floats(1e-4, 1.0), st.floats(-2.0, 2.0).filter(lambda g: abs(g) > 1e-3))
def test_first_step_scale_equivariant_in_lr(lr, g):
    # from zeroed moments, doubling lr exactly doubles the first update
    with T.using_dtype(np.float64):
        deltas = []
        for scale in (1.0, 2.0):
            store = ParamStore()
            p = store.register("theta", np.array([1.0]))
            p.grad = np.array([g])
            nadam_step(store, lr * scale)
            deltas.append(1.0 - float(p.data[0]))
        assert deltas[1] == pytest.approx(2.0 * deltas[0], rel=1e-12)
