import math

import numpy as np
import pytest

from core.errors import ConfigurationError, NumericError, PreconditionError, ShapeError
from core.importance import ImportanceMap
from core.meta_ema import (
    EmaConfig,
    EmaInputs,
    MetaControllerState,
    base_momentum,
    controller_gamma,
    decide_momentum,
    effective_momentum,
    ema_update_fixed,
    ema_update_regularized,
    fd_controller_step,
    init_controller,
    maybe_reset,
    reset_triggered,
)
from core.nnet import ParamVector

CFG = EmaConfig()


def _vec(values):
    values = np.asarray(values, dtype=float)
    return ParamVector(tuple(f"p{i}" for i in range(len(values))), values)


def _omega(values):
    return ImportanceMap(omega=np.asarray(values, dtype=float), n_batches=1)


def _controller(pre_sigmoid_bias, hidden=4):
    return MetaControllerState(W1=np.zeros((hidden, 3)), b1=np.zeros(hidden), W2=np.zeros(hidden),
                               b2=pre_sigmoid_bias)


def test_config_bounds():
    assert (CFG.m0, CFG.m_min, CFG.m_max, CFG.eta, CFG.delta, CFG.reset_factor) == (
        0.996, 0.99, 0.9999, 1.0, 0.01, 0.6)
    with pytest.raises(ValueError):
        EmaConfig(m_min=0.999, m_max=0.99)
    with pytest.raises(ValueError):
        EmaConfig(m0=0.95)


def test_base_momentum_schedule():
    assert base_momentum(0, 10, 0.996) == 0.996
    assert base_momentum(10, 10, 0.996) == 1.0
    assert base_momentum(5, 10, 0.996) == pytest.approx(0.998, abs=1e-15)
    with pytest.raises(ConfigurationError):
        base_momentum(11, 10, 0.996)


def test_base_momentum_endpoints_random():
    rng = np.random.default_rng(0)
    for m0, T in zip(rng.uniform(0.9, 0.9999, 100), rng.integers(1, 1000, 100)):
        assert abs(base_momentum(0, int(T), m0) - m0) < 1e-12
        assert abs(base_momentum(int(T), int(T), m0) - 1.0) < 1e-12


def test_controller_gamma_limits():
    inputs = EmaInputs(0.1, 0.2, 0.5)
    assert controller_gamma(inputs, _controller(0.0)) == 1.0
    low, high = controller_gamma(inputs, _controller(-1e6)), controller_gamma(inputs, _controller(1e6))
    assert 0.995 < low < 0.995 + 1e-12
    assert 1.005 - 1e-12 < high < 1.005


def test_controller_gamma_always_in_range():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        hidden = int(rng.integers(1, 20))
        scale = 10.0 ** rng.uniform(-2, 3)
        ctrl = MetaControllerState(W1=rng.normal(0, scale, (hidden, 3)), b1=rng.normal(0, scale, hidden),
                                   W2=rng.normal(0, scale, hidden), b2=float(rng.normal(0, scale)))
        inputs = EmaInputs(float(rng.normal(0, 5)), float(rng.exponential(2)), float(rng.random()))
        assert 0.995 < controller_gamma(inputs, ctrl) < 1.005


def test_init_controller_is_deterministic():
    a, b = init_controller(16, 3), init_controller(16, 3)
    assert a.W1.shape == (16, 3) and a.hidden == 16
    assert np.array_equal(a.flat(), b.flat())
    assert np.array_equal(a.from_flat(a.flat()).flat(), a.flat())
    with pytest.raises(ShapeError):
        a.from_flat(np.zeros(3))


def test_ema_inputs_validated():
    with pytest.raises(PreconditionError):
        EmaInputs(0.0, 0.1, 1.5)
    with pytest.raises(NumericError):
        EmaInputs(math.nan, 0.1, 0.5)


def test_effective_momentum_clamps():
    assert effective_momentum(1.0, 0.995, CFG) == 0.995
    assert effective_momentum(1.005, 0.999, CFG) == 0.9999
    assert effective_momentum(0.995, 0.992, CFG) == 0.99
    rng = np.random.default_rng(2)
    for gamma, m_base in zip(rng.uniform(0.9, 1.1, 10_000), rng.uniform(0.9, 1.0, 10_000)):
        assert CFG.m_min <= effective_momentum(gamma, m_base, CFG) <= CFG.m_max


def test_fixed_update():
    teacher, student = _vec([0.0, 2.0]), _vec([1.0, -1.0])
    assert np.array_equal(ema_update_fixed(teacher, student, 1.0).values, teacher.values)
    assert np.array_equal(ema_update_fixed(teacher, student, 0.0).values, student.values), "m = 0 copies the student"
    assert ema_update_fixed(_vec([0.0]), _vec([1.0]), 0.996).values[0] == pytest.approx(0.004, abs=1e-15)
    with pytest.raises(ShapeError):
        ema_update_fixed(teacher, _vec([1.0]), 0.5)
    with pytest.raises(PreconditionError):
        ema_update_fixed(teacher, student, 1.5)


def test_regularized_update():
    out = ema_update_regularized(_vec([0.0]), _vec([1.0]), 0.9, _omega([1.0]), 1.0)
    assert out.values[0] == pytest.approx(0.05, abs=1e-15)

    teacher, student = _vec([0.5, -1.0]), _vec([1.5, 1.0])
    frozen = ema_update_regularized(teacher, student, 0.5, _omega([1e12, 0.0]), 1.0)
    assert abs(frozen.values[0] - 0.5) < 1e-10 * 1.0
    assert frozen.values[1] == 0.0

    with pytest.raises(ShapeError):
        ema_update_regularized(teacher, student, 0.5, _omega([1.0]), 1.0)
    with pytest.raises(PreconditionError):
        ema_update_regularized(teacher, student, 0.5, _omega([1.0, 1.0]), -1.0)


def test_zero_eta_reduces_to_fixed():
    rng = np.random.default_rng(3)
    for _ in range(100):
        n = int(rng.integers(1, 50))
        teacher, student = _vec(rng.normal(size=n)), _vec(rng.normal(size=n))
        m = float(rng.random())
        a = ema_update_regularized(teacher, student, m, _omega(rng.exponential(size=n)), 0.0).values
        b = ema_update_fixed(teacher, student, m).values
        assert np.array_equal(a, b)


def test_equal_teacher_and_student_is_fixed_point(rng):
    theta = _vec(rng.normal(size=10))
    omega = _omega(rng.exponential(size=10))
    for m in (0.0, 0.5, 0.999):
        assert np.array_equal(ema_update_fixed(theta, theta, m).values, theta.values)
        assert np.array_equal(ema_update_regularized(theta, theta, m, omega, 2.0).values, theta.values)


def test_contraction_toward_frozen_student(rng):
    student = _vec(rng.normal(size=6))
    teacher = _vec(rng.normal(size=6))
    gap0 = np.abs(teacher.values - student.values)
    m = 0.9
    for _ in range(100):
        teacher = ema_update_fixed(teacher, student, m)
    np.testing.assert_allclose(np.abs(teacher.values - student.values), gap0 * m ** 100, rtol=1e-6, atol=1e-15)


def test_update_shrinks_with_importance_and_eta():
    teacher, student = _vec([0.0]), _vec([1.0])

    def step(omega, eta):
        return ema_update_regularized(teacher, student, 0.9, _omega([omega]), eta).values[0]

    omegas = [0.0, 0.1, 1.0, 10.0, 100.0]
    assert all(step(a, 1.0) > step(b, 1.0) for a, b in zip(omegas, omegas[1:]))
    etas = [0.0, 0.5, 1.0, 5.0]
    assert all(step(1.0, a) > step(1.0, b) for a, b in zip(etas, etas[1:]))


def test_reset_rule():
    assert maybe_reset(0.5, 0.2, CFG, 0.99) == 0.99
    assert maybe_reset(0.2, 0.2, CFG, 0.99) == pytest.approx(0.594, abs=1e-15)
    never = EmaConfig(delta=-math.inf)
    assert maybe_reset(0.2, 5.0, never, 0.99) == 0.99
    assert maybe_reset(0.2, 5.0, never.model_copy(update={"reset_direction": "drift"}), 0.99) == 0.99
    drift = EmaConfig(reset_direction="drift")
    assert reset_triggered(0.2, 0.5, drift)
    assert not reset_triggered(0.2, 0.205, drift)
    with pytest.raises(NumericError):
        reset_triggered(math.inf, 0.1, CFG)


def test_decide_momentum_composes_the_pieces():
    cfg = EmaConfig(total_steps=10)
    ctrl = _controller(0.0)
    decision = decide_momentum(cfg, ctrl, 5, teacher_loss=0.3, student_loss=0.1)
    assert decision.m_base == pytest.approx(0.998, abs=1e-15)
    assert decision.gamma == 1.0
    assert decision.m_effective == pytest.approx(0.998, abs=1e-15)
    # student val loss 0.1 - teacher 0.3 < delta: the printed rule fires
    assert decision.reset
    assert decision.m == pytest.approx(0.6 * 0.998, abs=1e-15)
    calm = decide_momentum(cfg, ctrl, 5, teacher_loss=0.1, student_loss=0.3)
    assert not calm.reset and calm.m == calm.m_effective
    for factor in (0.5, 1.0):
        tuned = cfg.model_copy(update={"reset_factor": factor})
        d = decide_momentum(tuned, ctrl, 5, teacher_loss=0.3, student_loss=0.1)
        assert d.m == maybe_reset(0.1, 0.3, tuned, d.m_effective), "decision follows the reset rule"


def test_fd_controller_step_descends():
    ctrl = init_controller(4, 0)
    inputs = EmaInputs(0.05, 0.2, 0.3)

    def objective(c):
        return (controller_gamma(inputs, c) - 0.999) ** 2

    stepped = fd_controller_step(ctrl, objective, lr=1e4, h=1e-4)
    assert objective(stepped) < objective(ctrl)
    assert stepped.hidden == ctrl.hidden
