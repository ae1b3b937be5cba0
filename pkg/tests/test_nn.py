import math

import numpy as np
import pytest

from csi2q.errors import ConfigError, FormatError, InvalidArgument
from csi2q.nn.gradcheck import check_layer, check_softmax_cross_entropy
from csi2q.nn.layers import (Conv1d, Dense, GlobalAvgPool, MaxPool1d, ReLU, Reshape,
                             SoftmaxCrossEntropy, cross_entropy_loss, layer_forward_backward,
                             one_hot, softmax)
from csi2q.nn.metrics import accuracy, confusion_matrix, macro_f1, per_class_f1, summarize
from csi2q.nn.model import DualTaskModel, ModelSpec, encode_iq, load_parameters, predict, save_parameters
from csi2q.nn.train import (TrainConfig, cosine_lr, shared_extractor_gradients, train_dual,
                            train_single)

SMALL = dict(channels=(4, 4, 6, 6), kernel=3, hidden=8)


# --------------------------------------------------------------- layers


def test_relu_example():
    out, dx, _ = layer_forward_backward(ReLU(), np.array([[-1.0, 2.0]]), np.array([[1.0, 1.0]]))
    assert out.tolist() == [[0.0, 2.0]]
    assert dx.tolist() == [[0.0, 1.0]]


def test_dense_identity():
    d = Dense(3, 3)
    d.params["W"] = np.eye(3)
    d.params["b"] = np.zeros(3)
    x = np.array([[1.0, -2.0, 0.5]])
    np.testing.assert_array_equal(d.forward(x), x)


def test_conv_matches_direct_loop():
    rng = np.random.default_rng(0)
    conv = Conv1d(3, 2, kernel=3, dilation=2, causal=True, rng=rng)
    x = rng.standard_normal((2, 10, 3))
    out = conv.forward(x)
    W, b = conv.params["W"], conv.params["b"]
    for bi in range(2):
        for t in range(10):
            for o in range(2):
                acc = b[o]
                for k in range(3):
                    src = t - (2 - k) * 2
                    if src >= 0:
                        acc += x[bi, src] @ W[k, :, o]
                assert out[bi, t, o] == pytest.approx(acc, abs=1e-12)


def test_conv_same_padding_and_stride_shapes():
    conv = Conv1d(2, 4, kernel=5)
    assert conv.forward(np.zeros((1, 20, 2))).shape == (1, 20, 4)
    conv = Conv1d(2, 4, kernel=4, stride=2)
    assert conv.forward(np.zeros((1, 20, 2))).shape == (1, 10, 4)


def test_shape_mismatch_rejected():
    with pytest.raises(InvalidArgument):
        Conv1d(3, 2, 3).forward(np.zeros((1, 10, 2)))
    with pytest.raises(InvalidArgument):
        Dense(3, 2).forward(np.zeros((1, 4)))
    with pytest.raises(InvalidArgument):
        layer_forward_backward(ReLU(), np.zeros((1, 3)), np.zeros((1, 4)))


def _layer_cases(rng):
    for i in range(5):
        b, n, c, o = rng.integers(1, 4), rng.integers(6, 14), rng.integers(1, 4), rng.integers(1, 4)
        k, d = rng.integers(1, 4), rng.integers(1, 3)
        causal, stride = bool(i % 2), 1 + (i == 4)
        yield (f"conv{i}", Conv1d(c, o, k, stride, d, causal, rng=rng),
               rng.standard_normal((b, n, c)))
        yield f"dense{i}", Dense(c + 2, o, rng=rng), rng.standard_normal((b, c + 2))
        yield f"relu{i}", ReLU(), rng.standard_normal((b, n, c))
        yield f"maxpool{i}", MaxPool1d(1 + i % 3), rng.standard_normal((b, n, c))
        yield f"gap{i}", GlobalAvgPool(), rng.standard_normal((b, n, c))


@pytest.mark.parametrize("case", list(_layer_cases(np.random.default_rng(1))), ids=lambda c: c[0])
def test_layer_gradients(case):
    _, layer, x = case
    errors = check_layer(layer, x, np.random.default_rng(2))
    assert max(errors.values()) < 1e-5, errors


@pytest.mark.parametrize("seed", range(5))
def test_softmax_cross_entropy_gradient(seed):
    rng = np.random.default_rng(seed)
    b, i = rng.integers(1, 6), rng.integers(2, 8)
    y = one_hot(rng.integers(0, i, size=b), i)
    assert check_softmax_cross_entropy(3 * rng.standard_normal((b, i)), y) < 1e-5


def test_maxpool_drops_remainder():
    x = np.arange(7.0).reshape(1, 7, 1)
    out, dx, _ = layer_forward_backward(MaxPool1d(2), x, np.ones((1, 3, 1)))
    assert out.ravel().tolist() == [1, 3, 5]
    assert dx.ravel().tolist() == [0, 1, 0, 1, 0, 1, 0]


def test_reshape_round_trip():
    r = Reshape((4, 2))
    x = np.arange(16.0).reshape(2, 8)
    out = r.forward(x)
    assert out.shape == (2, 4, 2)
    np.testing.assert_array_equal(r.backward(out), x)


def test_gradients_accumulate_across_calls():
    d = Dense(2, 2, rng=np.random.default_rng(0))
    x, g = np.ones((1, 2)), np.ones((1, 2))
    d.forward(x)
    d.backward(g)
    first = d.grads["W"].copy()
    d.forward(x)
    d.backward(g)
    np.testing.assert_allclose(d.grads["W"], 2 * first)


# ------------------------------------------------------------------ loss


@pytest.mark.parametrize("i", [2, 10, 85])
def test_uniform_logits_give_log_classes(i):
    y = one_hot(np.arange(7) % i, i)
    assert abs(cross_entropy_loss(np.zeros((7, i)), y) - math.log(i)) < 1e-12


def test_confident_logits_give_near_zero_loss():
    y = one_hot([0, 2], 3)
    assert cross_entropy_loss(20 * y, y) < 1e-8


def test_loss_matches_direct_summation():
    rng = np.random.default_rng(3)
    logits = rng.standard_normal((4, 3))
    y = one_hot([0, 2, 1, 1], 3)
    direct = 0.0
    for row, lab in zip(logits, y):
        z = sum(math.exp(v) for v in row)
        direct -= sum(d * math.log(math.exp(v) / z) for d, v in zip(lab, row))
    assert abs(cross_entropy_loss(logits, y) - direct / 4) < 1e-12


def test_loss_rejects_non_one_hot():
    with pytest.raises(InvalidArgument):
        cross_entropy_loss(np.zeros((2, 2)), np.array([[0.5, 0.5], [1, 0]]))
    with pytest.raises(InvalidArgument):
        SoftmaxCrossEntropy().forward(np.zeros((2, 3)), one_hot([0, 1], 2))


# ------------------------------------------------------------- schedule


def test_cosine_schedule_points():
    assert cosine_lr(0, 100, 1e-3) == 1e-3
    assert cosine_lr(100, 100, 1e-3) == 0.0
    assert cosine_lr(50, 100, 1e-3) == 5e-4
    with pytest.raises(InvalidArgument):
        cosine_lr(101, 100, 1e-3)


def test_train_config_validation():
    with pytest.raises(InvalidArgument):
        TrainConfig(lam=0)
    with pytest.raises(InvalidArgument):
        TrainConfig(epochs=0)
    with pytest.raises(InvalidArgument):
        TrainConfig(lr0=-1)


# ------------------------------------------------------------- training


def toy_set(rng, n_per=20, length=52):
    """Two classes separated by the sign of a fixed complex template."""
    template = np.exp(2j * np.pi * rng.uniform(size=length))
    x, y = [], []
    for label, sign in ((1, 1.0), (2, -1.0)):
        noise = 0.3 * (rng.standard_normal((n_per, length)) + 1j * rng.standard_normal((n_per, length)))
        x.append(sign * template + noise)
        y += [label] * n_per
    return np.concatenate(x), np.array(y)


@pytest.fixture(scope="module")
def toy():
    return toy_set(np.random.default_rng(4))


@pytest.fixture(scope="module")
def toy_iq():
    return toy_set(np.random.default_rng(5), length=320)


def toy_spec(n_aux=0):
    return ModelSpec.tcn(2, n_aux, csi_input_len=52, **SMALL)


def test_single_task_converges_on_separable_toy(toy):
    x, y = toy
    res = train_single(x, y, toy_spec(), TrainConfig(epochs=100, batch_size=8))
    assert res.history["main"][-1] < 0.05
    assert res.history["main"][-1] < res.history["main"][0]


def test_dual_task_converges_on_separable_toy(toy, toy_iq):
    x, y = toy
    res = train_dual(x, y, *toy_iq, toy_spec(2), TrainConfig(epochs=100, batch_size=8))
    assert res.history["main"][-1] < 0.05


def test_initial_loss_near_log_classes():
    rng = np.random.default_rng(5)
    x = rng.standard_normal((100, 52)) + 1j * rng.standard_normal((100, 52))
    y = np.arange(100) % 10 + 1
    spec = ModelSpec.tcn(10, 0, csi_input_len=52, **SMALL)
    res = train_single(x, y, spec, TrainConfig(epochs=1))
    assert abs(res.initial_loss - math.log(10)) < 0.1 * math.log(10)


def test_training_is_deterministic(toy, toy_iq):
    x, y = toy
    cfg = TrainConfig(epochs=3, batch_size=8, rng_seed=9)
    a = train_dual(x, y, *toy_iq, toy_spec(2), cfg)
    b = train_dual(x, y, *toy_iq, toy_spec(2), cfg)
    assert a.history == b.history
    for (n1, l1, k1), (n2, l2, k2) in zip(a.model.parameters(), b.model.parameters()):
        assert np.array_equal(l1.params[k1], l2.params[k2])


def test_vanishing_lambda_matches_single_task(toy, toy_iq):
    x, y = toy
    single = train_single(x, y, toy_spec(2), TrainConfig(epochs=5, batch_size=8))
    dual = train_dual(x, y, *toy_iq, toy_spec(2), TrainConfig(lam=1e-12, epochs=5, batch_size=8))
    s_state, d_state = single.model.state(), dual.model.state()
    for name in s_state:
        if name.startswith(("classifier", "extractor", "csi_stem")):
            assert np.max(np.abs(s_state[name] - d_state[name])) < 1e-6, name
    np.testing.assert_allclose(single.history["main"], dual.history["main"], atol=1e-6)


def test_dual_requires_discriminator(toy, toy_iq):
    x, y = toy
    with pytest.raises(InvalidArgument):
        train_dual(x, y, *toy_iq, toy_spec(0), TrainConfig(epochs=1))


def test_label_range_checked(toy, toy_iq):
    x, y = toy
    xi, yi = toy_iq
    with pytest.raises(InvalidArgument):
        train_single(x, y + 5, toy_spec(), TrainConfig(epochs=1))
    with pytest.raises(InvalidArgument):
        train_dual(x, y, xi, yi - 1, toy_spec(2), TrainConfig(epochs=1))


def test_shared_extractor_gradient_additivity(toy, toy_iq):
    x, y = toy
    xi, yi = toy_iq
    model = DualTaskModel(toy_spec(2), seed=3)
    lam = 0.37
    combined, main, aux = shared_extractor_gradients(model, x[:8], y[:8], xi[15:25], yi[15:25], lam)
    assert combined
    for name in combined:
        assert np.max(np.abs(combined[name] - (main[name] + lam * aux[name]))) < 1e-10


# ------------------------------------------------------------ prediction


def test_predict_is_a_distribution():
    rng = np.random.default_rng(6)
    model = DualTaskModel(ModelSpec.tcn(5, 0, **SMALL), seed=0)
    for _ in range(3):
        p = predict(model, rng.standard_normal(320) + 1j * rng.standard_normal(320))
        assert p.shape == (5,)
        assert np.all((p >= 0) & (p <= 1))
        assert abs(p.sum() - 1) < 1e-9
        assert np.argmax(p) == max(range(5), key=lambda i: p[i])


def test_zeroed_final_layer_gives_uniform():
    model = DualTaskModel(ModelSpec.tcn(4, 0, **SMALL), seed=0)
    last = model.classifier.layers[-1]
    last.params["W"][:] = 0
    last.params["b"][:] = 0
    np.testing.assert_allclose(predict(model, np.ones(320)), 0.25, atol=1e-15)


def test_argmax_invariant_to_logit_shift():
    rng = np.random.default_rng(7)
    model = DualTaskModel(ModelSpec.tcn(6, 0, **SMALL), seed=1)
    x = rng.standard_normal((10, 320)) + 1j * rng.standard_normal((10, 320))
    before = model.predict(x).argmax(axis=1)
    model.classifier.layers[-1].params["b"] += 3.5
    assert np.array_equal(model.predict(x).argmax(axis=1), before)


def test_predict_shape_mismatch():
    model = DualTaskModel(ModelSpec.tcn(3, 0, **SMALL), seed=0)
    with pytest.raises(InvalidArgument):
        predict(model, np.ones(52))
    with pytest.raises(InvalidArgument):
        model.predict(np.ones((2, 320)), domain="iq")


def test_rms_encoding():
    x = np.array([[3 + 4j, 0, 0, 0]])
    enc = encode_iq(x, "rms")
    assert np.mean(np.sum(enc ** 2, axis=-1)) == pytest.approx(1.0)
    assert encode_iq(np.zeros((1, 4)), "rms").sum() == 0
    with pytest.raises(InvalidArgument):
        encode_iq(x, "peak")


def test_parameter_round_trip(tmp_path):
    model = DualTaskModel(ModelSpec.tcn(3, 2, csi_input_len=52, **SMALL), seed=5)
    save_parameters(model, tmp_path / "p.bin", {"seed": 5})
    loaded, manifest = load_parameters(tmp_path / "p.bin")
    assert manifest["seed"] == 5
    for name, arr in model.state().items():
        assert np.array_equal(loaded.state()[name], arr)
    x = np.random.default_rng(0).standard_normal((2, 52)) + 0j
    np.testing.assert_array_equal(loaded.predict(x), model.predict(x))


def test_parameter_file_truncated(tmp_path):
    model = DualTaskModel(ModelSpec.tcn(3, 0, **SMALL), seed=5)
    save_parameters(model, tmp_path / "p.bin")
    blob = (tmp_path / "p.bin").read_bytes()
    (tmp_path / "p.bin").write_bytes(blob[:-8])
    with pytest.raises(FormatError):
        load_parameters(tmp_path / "p.bin")


def test_unknown_architecture():
    with pytest.raises(ConfigError):
        ModelSpec.named("rnn", 3)


# ---------------------------------------------------------------- metrics


def brute_force_metrics(y_true, y_pred, n):
    cm = [[0] * n for _ in range(n)]
    for t, p in zip(y_true, y_pred):
        cm[t][p] += 1
    correct = sum(1 for t, p in zip(y_true, y_pred) if t == p)
    f1s = []
    for c in range(n):
        tp = sum(1 for t, p in zip(y_true, y_pred) if t == c and p == c)
        fp = sum(1 for t, p in zip(y_true, y_pred) if t != c and p == c)
        fn = sum(1 for t, p in zip(y_true, y_pred) if t == c and p != c)
        prec = tp / (tp + fp) if tp + fp else 0.0
        rec = tp / (tp + fn) if tp + fn else 0.0
        f1s.append(2 * prec * rec / (prec + rec) if prec + rec else 0.0)
    return cm, correct / len(y_true), sum(f1s) / n


def test_metrics_match_brute_force():
    rng = np.random.default_rng(8)
    y_true = rng.integers(0, 7, 1000)
    y_pred = rng.integers(0, 7, 1000)
    cm = confusion_matrix(y_true, y_pred, 7)
    ref_cm, ref_acc, ref_f1 = brute_force_metrics(y_true.tolist(), y_pred.tolist(), 7)
    assert cm.tolist() == ref_cm
    assert accuracy(cm) == ref_acc
    assert macro_f1(cm) == pytest.approx(ref_f1, rel=1e-15)


def test_perfect_predictions():
    y = np.arange(12) % 4
    s = summarize(confusion_matrix(y, y, 4))
    assert s["accuracy"] == 1.0 and s["macro_f1"] == 1.0
    cm = np.array(s["confusion_matrix"])
    assert np.array_equal(cm, np.diag(np.diag(cm)))


def test_all_predicted_one_class():
    cm = confusion_matrix([0, 0, 1, 1], [0, 0, 0, 0], 2)
    assert accuracy(cm) == 0.5
    assert macro_f1(cm) == pytest.approx(1 / 3, abs=1e-15)
    assert per_class_f1(cm)[1] == 0.0


def test_softmax_rows_sum_to_one():
    p = softmax(np.array([[1000.0, 0.0], [-5.0, 5.0]]))
    np.testing.assert_allclose(p.sum(axis=1), 1.0)
