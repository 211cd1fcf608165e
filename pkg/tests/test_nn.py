import math

import numpy as np
import pytest

from fairpar import nn
from oracles import finite_difference, grads_agree, random_case
from fairpar.nn import (
    AdamState,
    AdapterParams,
    CELoss,
    ClassifierParams,
    MinMaxLoss,
    adam_step,
    adapter_forward,
    backward,
    classifier_forward,
    cross_entropy,
    init_adapter,
    init_classifier,
    loss_value,
)


def _straight_adapter(g, h):
    # scalar loops, no numpy matmul
    p, q = g.W_down.shape
    hidden = [max(0.0, sum(h[i] * g.W_down[i, j] for i in range(p)) + g.b_down[j]) for j in range(q)]
    return np.array([sum(hidden[j] * g.W_up[j, i] for j in range(q)) + g.b_up[i] for i in range(p)])


def _straight_classifier(d, z):
    x = list(z)
    for li, (W, b) in enumerate(d.layers):
        x = [sum(x[i] * W[i, j] for i in range(W.shape[0])) + b[j] for j in range(W.shape[1])]
        if li < len(d.layers) - 1:
            x = [max(0.0, v) for v in x]
    return np.array(x)


class TestAdapterForward:
    def test_zero_params(self):
        g = AdapterParams(np.zeros((6, 3)), np.zeros(3), np.zeros((3, 6)), np.zeros(6))
        np.testing.assert_array_equal(adapter_forward(g, np.arange(6.0)), np.zeros(6))

    def test_identity_block(self):
        p, q = 6, 3
        W_down = np.zeros((p, q))
        W_down[:q, :q] = np.eye(q)
        g = AdapterParams(W_down, np.zeros(q), W_down.T.copy(), np.zeros(p))
        h = np.array([0.5, 2.0, 0.0, 7.0, 1.0, 3.0])
        np.testing.assert_array_equal(adapter_forward(g, h), [0.5, 2.0, 0.0, 0.0, 0.0, 0.0])

    def test_matches_straight_line(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            g = init_adapter(7, rng)
            h = rng.standard_normal(7)
            np.testing.assert_allclose(adapter_forward(g, h), _straight_adapter(g, h), rtol=0, atol=1e-12)

    def test_batch_and_single_agree(self):
        rng = np.random.default_rng(1)
        g = init_adapter(5, rng)
        H = rng.standard_normal((4, 5))
        for i in range(4):
            np.testing.assert_allclose(adapter_forward(g, H)[i], adapter_forward(g, H[i]), rtol=0, atol=1e-14)

    def test_dimension_mismatch(self):
        g = init_adapter(4, np.random.default_rng(0))
        with pytest.raises(ValueError):
            adapter_forward(g, np.zeros(5))


class TestClassifierForward:
    def test_zero_final_layer(self):
        rng = np.random.default_rng(0)
        d = init_classifier(4, 3, rng)
        W, b = d.layers[-1]
        d.layers[-1] = (np.zeros_like(W), np.zeros_like(b))
        logits = classifier_forward(d, rng.standard_normal(4))
        np.testing.assert_array_equal(logits, np.zeros(3))
        assert nn.predict(d, rng.standard_normal(4)) == 0

    def test_single_linear_layer(self):
        W = np.zeros((4, 2))
        W[0, 0] = 10.0
        d = ClassifierParams([(W, np.zeros(2))])
        assert classifier_forward(d, np.eye(4)[0])[0] == 10.0

    def test_matches_straight_line(self):
        rng = np.random.default_rng(2)
        for hidden in [(), (3,), (5, 4)]:
            d = init_classifier(6, 3, rng, hidden=hidden)
            z = rng.standard_normal(6)
            np.testing.assert_allclose(classifier_forward(d, z), _straight_classifier(d, z), rtol=0, atol=1e-12)

    def test_pure(self):
        rng = np.random.default_rng(3)
        d = init_classifier(6, 2, rng)
        z = rng.standard_normal((5, 6))
        assert np.array_equal(classifier_forward(d, z), classifier_forward(d, z.copy()))

    def test_layers_must_chain(self):
        with pytest.raises(ValueError):
            ClassifierParams([(np.zeros((3, 4)), np.zeros(4)), (np.zeros((5, 2)), np.zeros(2))])


class TestCrossEntropy:
    def test_uniform(self):
        assert cross_entropy(np.array([0.3, 0.3]), 0) == pytest.approx(math.log(2), abs=1e-15)

    def test_saturated(self):
        assert cross_entropy(np.array([30.0, -30.0]), 0) < 1e-12

    def test_closed_form(self):
        # -log(e^0 / (e^1 + e^0)) = log(1 + e)
        assert cross_entropy(np.array([1.0, 0.0]), 1) == pytest.approx(1.3132616875182228, abs=1e-14)

    def test_bad_class(self):
        with pytest.raises(ValueError):
            cross_entropy(np.array([1.0, 0.0]), 2)

    def test_nonnegative_and_ln_c_on_constant(self):
        rng = np.random.default_rng(4)
        for C in (2, 3, 7):
            logits = rng.standard_normal((50, C)) * 5
            y = rng.integers(0, C, 50)
            assert np.all(cross_entropy(logits, y) >= 0)
            assert np.all(cross_entropy(logits, y) <= 60)
            assert cross_entropy(np.full(C, 2.5), 1) == pytest.approx(math.log(C), abs=1e-14)

    def test_huge_logits_stable(self):
        assert np.isfinite(cross_entropy(np.array([1e4, -1e4]), 1))


class TestBackward:
    def test_loss_matches_forward(self):
        rng = np.random.default_rng(10)
        for _ in range(30):
            g, d, H, y, spec = random_case(rng)
            assert backward(g, d, H, y, spec).loss == pytest.approx(loss_value(g, d, H, y, spec), rel=1e-12, abs=1e-14)

    def test_gradient_check_random(self):
        rng = np.random.default_rng(11)
        for _ in range(40):
            g, d, H, y, spec = random_case(rng)
            analytic = backward(g, d, H, y, spec).arrays()
            assert grads_agree(analytic, finite_difference(g, d, H, y, spec)), spec

    def test_zero_loss_zero_gradient(self):
        # saturated correct logits: CE underflows to exactly zero, and so does its gradient
        p = 4
        g = AdapterParams(np.zeros((p, 2)), np.zeros(2), np.zeros((2, p)), np.zeros(p))
        d = ClassifierParams([(np.zeros((p, 2)), np.array([1000.0, -1000.0]))])
        H = np.random.default_rng(0).standard_normal((3, p))
        grads = backward(g, d, H, np.zeros(3, dtype=int), CELoss())
        assert grads.loss == 0.0
        assert all(np.all(a == 0) for a in grads.arrays())

    def test_dead_relu_path(self):
        rng = np.random.default_rng(5)
        g = init_adapter(4, rng)
        g.b_down[0] = -1e6  # hidden unit 0 never fires
        d = init_classifier(4, 2, rng)
        H = rng.standard_normal((5, 4))
        for spec in (CELoss(), MinMaxLoss(rng.standard_normal(4), rng.uniform(-0.5, 0.5, (5, 3)), 1.0)):
            grads = backward(g, d, H, rng.integers(0, 2, 5), spec)
            assert np.all(grads.adapter.W_down[:, 0] == 0.0)
            assert grads.adapter.b_down[0] == 0.0
            assert np.all(grads.adapter.W_up[0] == 0.0)

    def test_minmax_zero_offsets_is_ce(self):
        rng = np.random.default_rng(6)
        g, d = init_adapter(5, rng), init_classifier(5, 2, rng)
        H, y = rng.standard_normal((4, 5)), rng.integers(0, 2, 4)
        a = backward(g, d, H, y, MinMaxLoss(rng.standard_normal(5), np.zeros((4, 3)), 0.7))
        b = backward(g, d, H, y, CELoss())
        assert a.loss == b.loss
        for x, z in zip(a.arrays(), b.arrays()):
            np.testing.assert_array_equal(x, z)

    def test_dimension_mismatch(self):
        rng = np.random.default_rng(0)
        g, d = init_adapter(4, rng), init_classifier(4, 2, rng)
        with pytest.raises(ValueError):
            backward(g, d, np.zeros((2, 5)), np.zeros(2, dtype=int), CELoss())


class TestAdam:
    def test_zero_gradient(self):
        params = [np.array([1.0, -2.0])]
        state = AdamState([np.array([0.5, 0.5])], [np.array([0.1, 0.1])], step=3)
        new, st = adam_step(params, [np.zeros(2)], state)
        # parameters still move by the decayed momentum; with zero moments they would not
        zero_state = AdamState.zeros_like(params)
        new0, st0 = adam_step(params, [np.zeros(2)], zero_state)
        np.testing.assert_array_equal(new0[0], params[0])
        np.testing.assert_allclose(st.m[0], 0.9 * 0.5)
        np.testing.assert_allclose(st.v[0], 0.999 * 0.1)
        assert st.step == 4 and st0.step == 1

    def test_first_step_hand_computation(self):
        # m1 = 0.1, v1 = 0.001; bias-corrected m = 1, v = 1 -> update = lr / (1 + 1e-8)
        params = [np.zeros(3)]
        new, st = adam_step(params, [np.ones(3)], AdamState.zeros_like(params, lr=0.01))
        np.testing.assert_allclose(new[0], -0.01 / (1 + 1e-8), rtol=1e-12)
        np.testing.assert_allclose(st.m[0], 0.1)
        np.testing.assert_allclose(st.v[0], 0.001)

    def test_deterministic(self):
        def run():
            rng = np.random.default_rng(0)
            params = [rng.standard_normal((3, 2))]
            state = AdamState.zeros_like(params)
            for _ in range(20):
                params, state = adam_step(params, [np.sin(params[0])], state)
            return params[0]

        assert np.array_equal(run(), run())

    def test_non_finite_gradient(self):
        params = [np.zeros(2)]
        with pytest.raises(ValueError):
            adam_step(params, [np.array([np.nan, 0.0])], AdamState.zeros_like(params))


def test_checkpoint_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    g, d = init_adapter(6, rng), init_classifier(6, 3, rng)
    nn.save_checkpoint(tmp_path / "c.json", g, d)
    g2, d2 = nn.load_checkpoint(tmp_path / "c.json")
    for a, b in zip(g.arrays() + d.arrays(), g2.arrays() + d2.arrays()):
        assert np.array_equal(a, b)
    assert '"version": "fairpar-ckpt-1"' in (tmp_path / "c.json").read_text()


def test_default_shapes():
    rng = np.random.default_rng(0)
    g = init_adapter(10, rng)
    d = init_classifier(10, 2, rng)
    assert g.q == 5
    assert [W.shape for W, _ in d.layers] == [(10, 5), (5, 2)]
    assert np.all(np.abs(g.W_down) <= 1 / np.sqrt(10))
