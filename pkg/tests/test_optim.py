import numpy as np
import pytest

from setnet.errors import ConfigError, NumericError
from setnet.layers import Param
from setnet.optim import Optimizer


class TestSgd:
    def test_single_step(self):
        p = Param("w", np.array(1.0))
        Optimizer("sgd", [p], lr=0.1).step({"w": np.array(2.0)})
        assert p.value == pytest.approx(0.8)


class TestAdam:
    def test_first_step_magnitude_is_lr(self):
        # bias correction makes the first update ~lr regardless of gradient
        # scale (up to eps, which matters for tiny gradients)
        for scale in (1.0, 1e-3, 1e3):
            p = Param("w", np.zeros(4))
            opt = Optimizer("adam", [p], lr=0.01)
            opt.step({"w": np.full(4, scale)})
            assert np.allclose(np.abs(p.value), 0.01, rtol=1e-4)

    def test_steady_state_scale_invariance(self):
        # constant gradient streams: after bias correction decays, updates do
        # not depend on the gradient's positive scale
        def run(scale):
            p = Param("w", np.array(0.0))
            opt = Optimizer("adam", [p], lr=0.01)
            deltas = []
            for _ in range(400):
                before = p.value.copy()
                opt.step({"w": np.array(scale)})
                deltas.append(float(p.value - before))
            return deltas[-1]

        assert run(1.0) == pytest.approx(run(1000.0), rel=1e-6)


class TestAdamax:
    def test_matches_reference_recurrence(self):
        # straight-line recurrence as the oracle, checked step for step
        p = Param("theta", np.array(3.0))
        opt = Optimizer("adamax", [p], lr=0.01)
        theta, m, u = 3.0, 0.0, 0.0
        for t in range(1, 201):
            g = 2.0 * theta
            m = 0.9 * m + 0.1 * g
            u = max(0.999 * u, abs(g), 1e-12)
            theta = theta - (0.01 / (1 - 0.9**t)) * m / u
            opt.step({"theta": 2.0 * p.value})
            assert float(p.value) == pytest.approx(theta, abs=1e-15)

    def test_converges_on_quadratic(self):
        # the infinity-norm moment decays by beta2 per step, so contraction is
        # slow early on; the oracle recurrence reaches 6.7e-3 at step 1000
        p = Param("theta", np.array(3.0))
        opt = Optimizer("adamax", [p], lr=0.01)
        for _ in range(1000):
            opt.step({"theta": 2.0 * p.value})
        assert abs(float(p.value)) < 1e-2

    def test_steady_state_scale_invariance(self):
        def run(scale):
            p = Param("w", np.array(0.0))
            opt = Optimizer("adamax", [p], lr=0.01)
            last = 0.0
            for _ in range(400):
                before = p.value.copy()
                opt.step({"w": np.array(scale)})
                last = float(p.value - before)
            return last

        assert run(1.0) == pytest.approx(run(1000.0), rel=1e-6)

    def test_zero_gradient_stream_is_safe(self):
        p = Param("w", np.array(1.0))
        opt = Optimizer("adamax", [p], lr=0.01)
        for _ in range(3):
            opt.step({"w": np.array(0.0)})
        assert np.isfinite(p.value)


class TestContracts:
    def test_unknown_kind(self):
        with pytest.raises(ConfigError):
            Optimizer("rmsprop", [Param("w", np.zeros(1))])

    def test_nonfinite_gradient_refused_without_mutation(self):
        p = Param("w", np.array(1.0))
        opt = Optimizer("adam", [p], lr=0.1)
        opt.step({"w": np.array(1.0)})
        state_before = (p.value.copy(), opt.m["w"].copy(), opt.v["w"].copy(), opt.t)
        with pytest.raises(NumericError):
            opt.step({"w": np.array(np.nan)})
        assert p.value == state_before[0]
        assert opt.m["w"] == state_before[1]
        assert opt.v["w"] == state_before[2]
        assert opt.t == state_before[3]

    def test_missing_gradient(self):
        opt = Optimizer("sgd", [Param("w", np.zeros(1))])
        with pytest.raises(NumericError):
            opt.step({})

    def test_determinism(self):
        def run():
            rng = np.random.default_rng(0)
            p = Param("w", np.zeros(5))
            opt = Optimizer("adam", [p], lr=0.01)
            for _ in range(50):
                opt.step({"w": rng.normal(size=5)})
            return p.value.tobytes()

        assert run() == run()

    def test_global_norm_clip(self):
        p = Param("w", np.zeros(2))
        opt = Optimizer("sgd", [p], lr=1.0, clip_norm=1.0)
        opt.step({"w": np.array([3.0, 4.0])})  # norm 5 -> scaled to 1
        assert np.allclose(p.value, [-0.6, -0.8])
