import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from convbias import optim
from convbias.layers import CONV_LIKE, FC_LIKE, NORM_BIAS, Parameter
from convbias.optim import (BETA_LASSO, SGD, NonFiniteGradient, OptimizerConfig,
                            OptimizerState, beta_lasso_step, cosine_lr, sgd_step)

rng = np.random.default_rng(42)


def param(value, grad=None, group=CONV_LIKE, name="p"):
    value = np.array(value, dtype=np.float64)
    grad = np.zeros_like(value) if grad is None else np.array(grad, dtype=np.float64)
    return Parameter(name, value, grad, group)


def lasso(lam, beta=50.0, **kw):
    return OptimizerConfig(lambda_by_group={CONV_LIKE: lam, FC_LIKE: lam}, beta=beta,
                           algorithm=BETA_LASSO, **kw)


class TestBetaLassoExamples:
    def test_killed(self):
        p = param([0.5])
        beta_lasso_step([p], lasso(0.01), OptimizerState(), 0.1)
        # 0.5 - 0.1 * 0.01 = 0.499 < 0.5 = beta * lambda
        assert p.value[0] == 0.0 and not math.copysign(1, p.value[0]) < 0

    def test_survives(self):
        p = param([0.8])
        beta_lasso_step([p], lasso(0.01), OptimizerState(), 0.1)
        assert p.value[0] == pytest.approx(0.799, abs=1e-15)

    def test_negative_symmetric(self):
        p = param([-0.8, -0.5])
        beta_lasso_step([p], lasso(0.01), OptimizerState(), 0.1)
        assert p.value[0] == pytest.approx(-0.799, abs=1e-15) and p.value[1] == 0

    def test_threshold_kept_at_equality(self):
        # 0.75 - 0.5 * 0.5 = 0.5 exactly, beta * lambda = 1 * 0.5
        p = param([0.75])
        beta_lasso_step([p], lasso(0.5, beta=1.0), OptimizerState(), 0.5)
        assert p.value[0] == 0.5

    def test_sign_zero(self):
        p = param([0.0], grad=[-1.0])
        beta_lasso_step([p], lasso(0.01, beta=0.0), OptimizerState(), 0.1)
        assert p.value[0] == pytest.approx(0.1)

    def test_norm_bias_unpenalized(self):
        p = param([0.3], group=NORM_BIAS)
        beta_lasso_step([p], lasso(0.01), OptimizerState(), 0.1)
        assert p.value[0] == 0.3

    def test_per_group_lambda(self):
        conv, fc = param([0.8], group=CONV_LIKE), param([0.8], group=FC_LIKE)
        cfg = OptimizerConfig(lambda_by_group={CONV_LIKE: 0.01, FC_LIKE: 0.02},
                              algorithm=BETA_LASSO)
        beta_lasso_step([conv, fc], cfg, OptimizerState(), 0.1)
        assert conv.value[0] == pytest.approx(0.799) and fc.value[0] == 0

    def test_non_finite(self):
        p = param([1.0, 2.0], grad=[0.0, np.nan], name="conv1.weight")
        with pytest.raises(NonFiniteGradient, match="conv1.weight"):
            beta_lasso_step([p], lasso(0.01), OptimizerState(), 0.1)
        with pytest.raises(NonFiniteGradient, match="conv1.weight"):
            sgd_step([p], OptimizerConfig(), OptimizerState(), 0.1)

    def test_config_rejects_momentum(self):
        with pytest.raises(ValueError):
            lasso(0.01, momentum=0.9)
        with pytest.raises(ValueError):
            lasso(0.01, weight_decay=1e-4)


class TestBetaLassoProperties:
    def test_support_law(self):
        n = 10_000
        theta = rng.uniform(-1, 1, n)
        theta[rng.random(n) < 0.05] = 0.0
        lam, beta, lr = 0.003, 50.0, 0.1
        p = param(theta.copy())
        beta_lasso_step([p], lasso(lam, beta), OptimizerState(), lr)
        expected = np.abs(theta - lr * lam * np.sign(theta)) >= beta * lam
        np.testing.assert_array_equal(p.value != 0, expected)
        killed = p.value[~expected]
        assert np.all(killed == 0) and not np.any(np.signbit(killed))

    @settings(max_examples=50, deadline=None)
    @given(st.floats(1e-7, 1e-1), st.floats(0, 100), st.floats(1e-4, 1.0),
           st.integers(0, 2 ** 31))
    def test_survivors_above_threshold(self, lam, beta, lr, seed):
        r = np.random.default_rng(seed)
        p = param(r.normal(size=200), grad=r.normal(size=200))
        beta_lasso_step([p], lasso(lam, beta), OptimizerState(), lr)
        nz = p.value[p.value != 0]
        assert np.all(np.abs(nz) >= beta * lam)

    def test_lambda_zero_matches_sgd(self):
        for _ in range(20):
            theta, g = rng.normal(size=50), rng.normal(size=50)
            a, b = param(theta.copy(), g), param(theta.copy(), g)
            beta_lasso_step([a], lasso(0.0, beta=123.0), OptimizerState(), 0.07)
            sgd_step([b], OptimizerConfig(), OptimizerState(), 0.07)
            np.testing.assert_array_equal(a.value, b.value)

    def test_beta_zero_never_zeroes(self):
        theta = rng.uniform(-1, 1, 10_000)
        grads = [rng.normal(scale=0.01, size=theta.size) for _ in range(10)]
        p, ref = param(theta.copy()), theta.copy()
        for g in grads:
            p.grad[...] = g
            beta_lasso_step([p], lasso(1e-3, beta=0.0), OptimizerState(), 0.1)
            ref = ref - 0.1 * (g + 1e-3 * np.sign(ref))
        # plain subgradient l1 steps: the threshold step never fires
        np.testing.assert_array_equal(p.value, ref)
        assert np.all(p.value != 0)

    def test_nnz_non_increasing_in_beta(self):
        theta0 = rng.uniform(-0.05, 0.05, 5000)
        counts = []
        for beta in (0.0, 1.0, 5.0, 10.0, 20.0, 50.0):
            p = param(theta0.copy())
            cfg = lasso(1e-4, beta=beta, total_steps=40)
            state = OptimizerState()
            for _ in range(40):
                optim.step([p], cfg, state)
            counts.append(np.count_nonzero(p.value))
        assert counts == sorted(counts, reverse=True)
        assert counts[0] > counts[-1]


class TestSGD:
    def test_plain(self):
        p = param([1.0, -2.0], grad=[0.5, 0.5])
        sgd_step([p], OptimizerConfig(), OptimizerState(), 0.1)
        np.testing.assert_allclose(p.value, [0.95, -2.05])

    def test_momentum(self):
        p = param([1.0])
        state = OptimizerState(velocity={"p": np.array([1.0])})
        sgd_step([p], OptimizerConfig(momentum=0.9), state, 0.1)
        assert p.value[0] == pytest.approx(1.0 - 0.09)

    def test_weight_decay(self):
        p = param([1.0])
        sgd_step([p], OptimizerConfig(weight_decay=0.1), OptimizerState(), 0.1)
        assert p.value[0] == pytest.approx(0.99)

    def test_velocity_shapes(self):
        ps = [param(np.ones((2, 3)), name="a"), param(np.ones(4), name="b")]
        state = OptimizerState()
        sgd_step(ps, OptimizerConfig(momentum=0.9), state, 0.1)
        assert {k: v.shape for k, v in state.velocity.items()} == {"a": (2, 3), "b": (4,)}


class TestCosine:
    def test_endpoints(self):
        assert cosine_lr(0, 100, 0.1) == 0.1
        assert cosine_lr(100, 100, 0.1) == 0.0
        assert cosine_lr(50, 100, 0.1) == pytest.approx(0.05, abs=1e-17)

    def test_past_end(self):
        with pytest.raises(ValueError):
            cosine_lr(101, 100, 0.1)
        with pytest.raises(ValueError):
            cosine_lr(-1, 100, 0.1)

    @given(st.integers(1, 10_000), st.floats(1e-4, 10))
    def test_non_increasing(self, tau, eta0):
        lrs = [cosine_lr(t, tau, eta0) for t in range(0, tau + 1, max(1, tau // 97))]
        assert all(a >= b for a, b in zip(lrs, lrs[1:]))

    def test_step_uses_schedule(self):
        p = param([1.0], grad=[1.0])
        cfg = OptimizerConfig(eta0=0.2, total_steps=2)
        state = OptimizerState()
        assert optim.step([p], cfg, state) == 0.2
        assert optim.step([p], cfg, state) == pytest.approx(0.1)
        assert optim.step([p], cfg, state) == 0.0
        assert state.step == 3
        with pytest.raises(ValueError):
            optim.step([p], cfg, state)


def test_unknown_algorithm():
    with pytest.raises(ValueError):
        OptimizerConfig(algorithm="adam")
