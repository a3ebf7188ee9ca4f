import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from smmf.factorize import CompressedMomentum, compress, compress_nonnegative, decompress
from smmf.matricize import square_matricize, unmatricize
from smmf.optimizers import (
    SGD,
    SMMF,
    Adafactor,
    AdafactorLayerState,
    Adam,
    DenseLayerState,
    HyperParams,
    LayerError,
    NonFiniteGradientError,
    SmmfLayerState,
    adafactor_step,
    adam_step,
    apply_weight_decay,
    beta1_at,
    beta2_at,
    make_optimizer,
    smmf_step,
    smmf_step_unfactored,
)
from smmf.tensor import ShapeError


# -- schedulers ---------------------------------------------------------------


def test_scheduler_values():
    assert beta1_at(1, 0.9, 0.999) == 0.9
    assert beta2_at(1, -0.5) == 0.0
    assert beta2_at(1, -0.8) == 0.0
    assert beta2_at(2, -0.5) == pytest.approx(1 - 2**-0.5, abs=1e-15)
    assert beta2_at(2, -0.5) == pytest.approx(0.2928932, abs=1e-7)


@settings(max_examples=100, deadline=None)
@given(st.floats(0, 1), st.floats(0, 1), st.floats(-1, -1e-3), st.integers(1, 10**6))
def test_scheduler_monotone(beta1, lam, gamma, t):
    assert 0 <= beta1_at(t + 1, beta1, lam) <= beta1_at(t, beta1, lam) <= beta1
    assert 0 <= beta2_at(t, gamma) < beta2_at(t + 1, gamma) < 1


def test_beta2_tends_to_one():
    assert beta2_at(10**12, -0.5) > 1 - 1e-5


# -- hyperparameters and weight decay -----------------------------------------


@pytest.mark.parametrize(
    "kwargs",
    [{"lr": 0}, {"beta1": 1.5}, {"growth_rate": -0.1}, {"decay_rate": 0.5}, {"decay_rate": -1.5},
     {"eps": -1}, {"weight_decay": -1}, {"weight_decay_mode": "l1"}, {"sign_storage": "2bit"}],
)
def test_hyperparam_validation(kwargs):
    with pytest.raises(ValueError):
        HyperParams(**kwargs)


def test_weight_decay():
    w, g = np.array([1.0, 2.0]), np.array([0.0, 0.0])
    w0, g0 = apply_weight_decay(w, g, HyperParams())
    assert w0 is w and g0 is g
    w1, g1 = apply_weight_decay(w, g, HyperParams(weight_decay=0.1, weight_decay_mode="adam"))
    assert w1 is w
    np.testing.assert_allclose(g1, [0.1, 0.2])
    w2, g2 = apply_weight_decay(w, g, HyperParams(lr=0.01, weight_decay=0.1, weight_decay_mode="adamw"))
    assert g2 is g
    np.testing.assert_allclose(w2, [0.999, 1.998], rtol=1e-15)


# -- SMMF ---------------------------------------------------------------------


def test_smmf_first_step_hand_example():
    hp = HyperParams(lr=0.001, beta1=0.9, growth_rate=0.999, decay_rate=-0.5, eps=0.0)
    st_ = SmmfLayerState.init((2, 2), hp)
    w, st_ = smmf_step(st_, np.zeros((2, 2)), np.array([[1.0, -2.0], [3.0, -4.0]]), hp)
    np.testing.assert_allclose(w, [[-1e-4, 1e-4], [-1e-4, 1e-4]], rtol=1e-12)
    assert st_.m.signs.to_bool().tolist() == [[True, False], [True, False]]
    np.testing.assert_allclose(st_.m.factors.r, [0.3, 0.7], rtol=1e-12)
    np.testing.assert_allclose(st_.m.factors.c, [0.4, 0.6], rtol=1e-12)
    np.testing.assert_allclose(st_.v.factors.r, [1 / 6, 5 / 6], rtol=1e-12)
    np.testing.assert_allclose(st_.v.factors.c, [10, 20], rtol=1e-12)
    assert st_.step == 2


def test_smmf_initial_state():
    st_ = SmmfLayerState.init((3, 4), HyperParams())
    assert st_.step == 1
    assert not st_.m.factors.r.any() and not st_.m.factors.c.any()
    assert not st_.m.signs.bits.any()
    assert not st_.v.factors.r.any()
    assert st_.v.signs is None


def test_smmf_zero_gradient_is_noop():
    hp = HyperParams()
    st_ = SmmfLayerState.init((3, 5), hp)
    w0 = np.random.default_rng(0).normal(size=(3, 5))
    w, st_ = smmf_step(st_, w0, np.zeros((3, 5)), hp)
    np.testing.assert_array_equal(w, w0)
    assert not st_.m.factors.r.any() and not st_.v.factors.r.any()


def _scalar_recursion(g, steps, hp):
    """Per-element SMMF recursion with python floats."""
    m = v = 0.0
    w = 0.0
    for t in range(1, steps + 1):
        b1 = hp.beta1 * hp.growth_rate ** (t - 1)
        b2 = 1.0 - t**hp.decay_rate
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        w -= hp.lr * m / math.sqrt(v + hp.eps)
    return w


def test_sign_consistent_rank_one_matches_scalar_recursion():
    hp = HyperParams(lr=0.01, eps=1e-12)
    # 3x2 is already its own square matricization, so rank-1 survives
    signs = np.array([[1, -1], [-1, -1], [1, 1]], float)
    g = signs * np.outer([0.5, 2.0, 0.25], [1.0, 3.0])
    st_ = SmmfLayerState.init(g.shape, hp)
    w = np.zeros_like(g)
    for _ in range(2):
        w, st_ = smmf_step(st_, w, g, hp)
    expected = np.vectorize(lambda x: _scalar_recursion(x, 2, hp))(g)
    np.testing.assert_allclose(w, expected, rtol=1e-12)


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**31), st.lists(st.integers(1, 6), min_size=1, max_size=4))
def test_first_step_law(seed, shape):
    hp = HyperParams(eps=0.0)
    g = np.random.default_rng(seed).normal(size=shape)
    st_ = SmmfLayerState.init(g.shape, hp)
    # replicate one step by hand from the zero state
    gbar = square_matricize(g, st_.shape)
    w, st_ = smmf_step(st_, np.zeros_like(g), g, hp)
    np.testing.assert_allclose(w, -hp.lr * (1 - hp.beta1) * np.sign(g), rtol=1e-12, atol=1e-300)
    v1 = decompress(st_.v)
    np.testing.assert_allclose(decompress(compress_nonnegative(gbar**2)), v1, rtol=1e-12)


def test_state_size_law():
    hp = HyperParams()
    opt = SMMF(hp)
    rng = np.random.default_rng(0)
    shapes = {"a": (6, 10), "b": (4, 3, 3, 3), "c": (17,)}
    params = {k: rng.normal(size=s) for k, s in shapes.items()}
    for _ in range(5):
        params = opt.step({k: (w, rng.normal(size=w.shape)) for k, w in params.items()})
    for k, s in shapes.items():
        st_ = opt.state[k]
        n, m = st_.shape.matrix_shape
        assert st_.m.factors.r.shape == (n,) and st_.m.factors.c.shape == (m,)
        assert st_.v.factors.r.shape == (n,) and st_.v.factors.c.shape == (m,)
        assert st_.m.signs.nbytes == math.ceil(n * m / 8)
        assert st_.nbytes(4) == 2 * 4 * (n + m) + math.ceil(n * m / 8)


def _compress_first_step(st_, weight, grad, hp):
    """Mutant: update computed from the re-compressed moments instead of the fresh ones."""
    es = st_.shape
    g = square_matricize(grad, es)
    t = st_.step
    b1 = hp.beta1 * hp.growth_rate ** (t - 1)
    b2 = 1.0 - t**hp.decay_rate
    m = b1 * decompress(st_.m) + (1 - b1) * g
    v = b2 * decompress(st_.v) + (1 - b2) * g * g
    st_.m = CompressedMomentum(*compress(m))
    st_.v = CompressedMomentum(compress_nonnegative(v))
    st_.step += 1
    u = decompress(st_.m) / np.sqrt(decompress(st_.v) + hp.eps)
    return weight - hp.lr * unmatricize(u, es), st_


def test_update_uses_uncompressed_moments():
    hp = HyperParams(eps=1e-12)
    g = np.random.default_rng(5).normal(size=(4, 6))
    st_ = SmmfLayerState.init(g.shape, hp)
    w = np.zeros_like(g)
    # first step: decompressed zero state, so the update is exactly M_1 / sqrt(V_1 + eps)
    w1, _ = smmf_step(st_, w, g, hp)
    m1, v1 = (1 - hp.beta1) * g, g * g
    np.testing.assert_allclose(w1, -hp.lr * m1 / np.sqrt(v1 + hp.eps), rtol=1e-12)
    mutant, _ = _compress_first_step(SmmfLayerState.init(g.shape, hp), w, g, hp)
    assert not np.allclose(mutant, w1)


def test_momentum_free_mode():
    hp = HyperParams(beta1=None, eps=0.0)
    opt = SMMF(hp)
    g = np.array([[1.0, -2.0], [3.0, -4.0]])
    (w,) = opt.step([(np.zeros((2, 2)), g)])
    st_ = opt.state[0]
    assert st_.m is None
    assert st_.nbytes(4) == 4 * 4
    np.testing.assert_allclose(w, -hp.lr * np.sign(g))


# -- unfactored fallback ------------------------------------------------------


def test_unfactored_scalar_example():
    hp = HyperParams(lr=0.001, beta1=0.9, eps=0.0, vector_reshape=False)
    st_ = DenseLayerState.init((1,))
    w, st_ = smmf_step_unfactored(st_, np.zeros(1), np.array([2.0]), hp)
    assert st_.m[0] == pytest.approx(0.2, abs=1e-15)
    assert st_.v[0] == 4.0
    assert w[0] == pytest.approx(-1e-4, abs=1e-18)


def test_unfactored_zero_grad():
    hp = HyperParams(vector_reshape=False)
    w, _ = smmf_step_unfactored(DenseLayerState.init((4,)), np.ones(4), np.zeros(4), hp)
    np.testing.assert_array_equal(w, np.ones(4))


def test_vector_reshape_flag_routes_vectors():
    g = np.arange(1.0, 21.0)
    dense = SMMF(vector_reshape=False)
    dense.step([(np.zeros(20), g)])
    assert isinstance(dense.state[0], DenseLayerState)
    fact = SMMF()
    fact.step([(np.zeros(20), g)])
    assert isinstance(fact.state[0], SmmfLayerState)
    assert fact.state[0].shape.matrix_shape == (5, 4)
    # matrices are factored regardless of the flag
    mat = SMMF(vector_reshape=False)
    mat.step([(np.zeros((4, 5)), g.reshape(4, 5))])
    assert isinstance(mat.state[0], SmmfLayerState)


def test_single_element_equivalence():
    hp = HyperParams(lr=0.01, eps=1e-10)
    rng = np.random.default_rng(0)
    fac = SmmfLayerState.init((1,), hp)
    den = DenseLayerState.init((1,))
    wf = wd = np.zeros(1)
    for _ in range(200):
        g = rng.normal(size=1)
        wf, fac = smmf_step(fac, wf, g, hp)
        wd, den = smmf_step_unfactored(den, wd, g, hp)
        assert abs(wf[0] - wd[0]) <= 1e-12


# -- baselines ----------------------------------------------------------------


def test_adam_first_step():
    hp = HyperParams(beta1=0.9, beta2=0.999, eps=0.0, lr=1.0)
    st_ = DenseLayerState.init((1,))
    w, st_ = adam_step(st_, np.zeros(1), np.ones(1), hp)
    assert st_.m[0] == pytest.approx(0.1)
    assert st_.v[0] == pytest.approx(0.001)
    assert -w[0] == pytest.approx(0.1 / math.sqrt(0.001), rel=1e-12)
    assert -w[0] == pytest.approx(3.1623, abs=1e-4)


def test_adam_bias_correction_first_step():
    hp = HyperParams(eps=0.0, lr=1.0, bias_correction=True)
    g = np.array([-3.0, 0.5])
    w, _ = adam_step(DenseLayerState.init((2,)), np.zeros(2), g, hp)
    np.testing.assert_allclose(w, -np.sign(g), rtol=1e-12)


def test_adam_zero_grad():
    w, _ = adam_step(DenseLayerState.init((3,)), np.ones(3), np.zeros(3), HyperParams())
    np.testing.assert_array_equal(w, np.ones(3))


def test_adafactor_rank_one_exact():
    hp = HyperParams(adafactor_eps=0.0, beta1=None)
    g = np.outer([1.0, -2.0, 0.5], [3.0, 1.0])
    st_ = AdafactorLayerState.init(g.shape, hp)
    g2_ema = np.zeros_like(g)
    for t in range(1, 4):
        gt = g * t
        b2 = 1 - t ** hp.decay_rate
        g2_ema = b2 * g2_ema + (1 - b2) * gt**2
        _, st_ = adafactor_step(st_, np.zeros_like(g), gt, hp)
        np.testing.assert_allclose(st_.second_moment(), g2_ema, rtol=1e-12)


def test_adafactor_slices():
    st_ = AdafactorLayerState.init((2, 2, 3, 3), HyperParams())
    assert st_.slice_count == 4
    assert st_.row.shape == (4, 3) and st_.col.shape == (4, 3)
    assert st_.nbytes(4) == 4 * (4 * 6 + 36)


def test_adafactor_scalar_slice_matches_dense_ema():
    hp = HyperParams(beta1=0.9, lr=0.01)
    st_ = AdafactorLayerState.init((1, 1), hp)
    w = np.zeros((1, 1))
    m = v = 0.0
    wref = 0.0
    rng = np.random.default_rng(1)
    for t in range(1, 6):
        g = rng.normal()
        w, st_ = adafactor_step(st_, w, np.array([[g]]), hp)
        b2 = 1 - t ** hp.decay_rate
        v = b2 * v + (1 - b2) * (g * g + hp.adafactor_eps)
        u = g / math.sqrt(v)
        u /= max(1.0, abs(u) / hp.clip_threshold)
        m = 0.9 * m + 0.1 * u
        wref -= 0.01 * m
        assert w[0, 0] == pytest.approx(wref, rel=1e-12)


def test_adafactor_clipping():
    hp = HyperParams(beta1=None, lr=1.0, clip_threshold=1.0)
    g = np.random.default_rng(2).normal(size=(3, 4))
    w, _ = adafactor_step(AdafactorLayerState.init(g.shape, hp), np.zeros_like(g), g, hp)
    assert math.sqrt(np.mean(w**2)) <= 1.0 + 1e-12


def test_adafactor_vector_is_dense():
    st_ = AdafactorLayerState.init((7,), HyperParams())
    assert not st_.factored and st_.v.shape == (7,)


# -- driver -------------------------------------------------------------------


@pytest.mark.parametrize("kind", ["smmf", "adam", "adafactor", "sgd"])
def test_empty_step(kind):
    opt = make_optimizer(kind)
    assert opt.step([]) == []
    assert opt.step({}) == {}
    assert opt.state_bytes() == 0


@pytest.mark.parametrize("kind", ["smmf", "adam", "adafactor"])
def test_layer_order_independent(kind):
    rng = np.random.default_rng(0)
    a = (rng.normal(size=(3, 4)), rng.normal(size=(3, 4)))
    b = (rng.normal(size=(2, 2, 3)), rng.normal(size=(2, 2, 3)))
    o1, o2 = make_optimizer(kind), make_optimizer(kind)
    r1 = o1.step({"a": a, "b": b})
    r2 = o2.step({"b": b, "a": a})
    for k in "ab":
        np.testing.assert_array_equal(r1[k], r2[k])


def test_mixed_ranks():
    rng = np.random.default_rng(0)
    shapes = [(5,), (6, 4), (4, 3, 3, 3), (1,), (2, 1, 3)]
    params = [(rng.normal(size=s), rng.normal(size=s)) for s in shapes]
    out = SMMF().step(params)
    assert [o.shape for o in out] == shapes


def test_layer_errors_carry_identity():
    opt = SMMF()
    with pytest.raises(LayerError) as info:
        opt.step({"ok": (np.zeros(3), np.ones(3)), "bad": (np.zeros(3), np.array([1.0, np.nan, 0.0]))})
    assert info.value.layer == "bad"
    assert isinstance(info.value.cause, NonFiniteGradientError)
    with pytest.raises(LayerError) as info:
        opt.step([(np.zeros(3), np.ones(4))])
    assert isinstance(info.value.cause, ShapeError)


def test_state_mismatch():
    st_ = SmmfLayerState.init((2, 3), HyperParams())
    with pytest.raises(ShapeError):
        smmf_step(st_, np.zeros(8), np.zeros(8), HyperParams())


def test_lr_override():
    g = np.ones((2, 2))
    a = SMMF(lr=0.1).step([(np.zeros((2, 2)), g)])[0]
    b = SMMF(lr=0.5).step([(np.zeros((2, 2)), g)], lr=0.1)[0]
    np.testing.assert_array_equal(a, b)


@pytest.mark.parametrize("kind", ["smmf", "adam", "adafactor", "sgd"])
def test_determinism(kind):
    def run():
        rng = np.random.default_rng(42)
        opt = make_optimizer(kind)
        w = {"x": rng.normal(size=(6, 6)), "y": rng.normal(size=(9,))}
        for _ in range(20):
            w = opt.step({k: (v, rng.normal(size=v.shape)) for k, v in w.items()})
        return w

    a, b = run(), run()
    for k in a:
        assert a[k].tobytes() == b[k].tobytes()


def test_sgd():
    (w,) = SGD(lr=0.5).step([(np.ones(2), np.array([2.0, -2.0]))])
    np.testing.assert_array_equal(w, [0.0, 2.0])


def test_unknown_optimizer():
    with pytest.raises(ValueError):
        make_optimizer("lion")


def test_byte_sign_mode_same_trajectory():
    rng = np.random.default_rng(9)
    grads = [rng.normal(size=(5, 7)) for _ in range(5)]
    a, b = SMMF(), SMMF(sign_storage="byte-8bit")
    wa = wb = np.zeros((5, 7))
    for g in grads:
        (wa,) = a.step([(wa, g)])
        (wb,) = b.step([(wb, g)])
    np.testing.assert_array_equal(wa, wb)
    assert b.state_bytes() - a.state_bytes() == 35 - 5
