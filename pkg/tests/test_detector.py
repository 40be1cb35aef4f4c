import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from sklearn import metrics as skm
from sklearn.base import clone

from jamlab.detector import (CANONICAL_SPEC, DetectorModel, JammingDetector, NetworkSpec, TrainConfig,
                             backward, classification_report, confusion_matrix, evaluate_arrays, forward,
                             load_model, loss, predict_proba, save_model, train_arrays)
from jamlab.detector import network
from jamlab.errors import (ArchitectureError, CheckpointError, ConfigurationError, ContractError,
                           InputError)

TINY = NetworkSpec(in_channels=1, conv1_channels=2, conv2_channels=2, kernel_size=2, input_size=8,
                   fc1_units=8, fc2_units=4, dropout_p=0.2)


# ----------------------------------------------------------------- shapes

def test_canonical_shape_chain():
    assert CANONICAL_SPEC.spatial_chain() == (294, 147, 141, 70)
    assert CANONICAL_SPEC.flatten_len == 156800
    shapes = CANONICAL_SPEC.param_shapes()
    assert shapes["fc1.w"] == (256, 156800)
    assert shapes["conv1.w"] == (16, 3, 7, 7) and shapes["conv2.w"] == (32, 16, 7, 7)
    assert shapes["fc2.w"] == (84, 256) and shapes["fc3.w"] == (1, 84)


def test_reduced_profile_chain():
    s = NetworkSpec(input_size=100)
    assert s.spatial_chain() == (94, 47, 41, 20) and s.flatten_len == 12800


def test_canonical_forward_flatten():
    m = DetectorModel(CANONICAL_SPEC, 0)
    x = np.random.default_rng(0).standard_normal((1, 3, 300, 300)).astype(np.float32)
    p, cache = forward(m, x)
    assert cache["flat"].shape == (1, 156800) and p.shape == (1,)


def test_collapse_and_shape_errors():
    with pytest.raises(ArchitectureError):
        NetworkSpec(input_size=10)
    m = DetectorModel(NetworkSpec(input_size=24, fc1_units=4, fc2_units=3), 0)
    with pytest.raises(ArchitectureError, match="input"):
        forward(m, np.zeros((1, 3, 25, 24)))


# ---------------------------------------------------------------- forward

def test_zero_params_give_half():
    m = DetectorModel(TINY, 0, np.float64)
    for v in m.params.values():
        v[...] = 0
    p, _ = forward(m, np.random.default_rng(0).standard_normal((3, 1, 8, 8)))
    np.testing.assert_array_equal(p, 0.5)


def test_forward_deterministic_eval():
    m = DetectorModel(NetworkSpec(input_size=24), 5)
    x = np.random.default_rng(1).standard_normal((2, 3, 24, 24)).astype(np.float32)
    np.testing.assert_array_equal(forward(m, x)[0], forward(m, x)[0])


def test_init_bounds_and_seed():
    a, b = DetectorModel(TINY, 3), DetectorModel(TINY, 3)
    for k in network.PARAM_ORDER:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    fan_in = 1 * 2 * 2
    assert np.abs(a.params["conv1.w"]).max() <= 1 / np.sqrt(fan_in)
    assert not np.array_equal(a.params["fc1.w"], DetectorModel(TINY, 4).params["fc1.w"])


# ------------------------------------------------------------------- loss

def test_loss_values():
    assert loss(np.array([0.5]), np.array([1])) == pytest.approx(np.log(2), abs=1e-9)
    assert loss(np.array([0.5]), np.array([0])) == pytest.approx(0.693147, abs=1e-6)
    assert loss(np.array([1 - 1e-7]), np.array([1])) == pytest.approx(1e-7, rel=1e-3)
    assert loss(np.array([0.0]), np.array([1])) == pytest.approx(np.log(1e7), abs=1e-6)
    assert loss(np.array([1e-7]), np.array([1])) == pytest.approx(16.118, abs=1e-3)


# --------------------------------------------------------------- backward

def numeric_grad(model, x, y, mode, seed, h=1e-4):
    grads = {}
    for k in network.PARAM_ORDER:
        p = model.params[k]
        g = np.zeros_like(p)
        it = np.nditer(p, flags=["multi_index"])
        for _ in it:
            i = it.multi_index
            old = p[i]
            p[i] = old + h
            up = loss(forward(model, x, mode, seed)[0], y)
            p[i] = old - h
            down = loss(forward(model, x, mode, seed)[0], y)
            p[i] = old
            g[i] = (up - down) / (2 * h)
        grads[k] = g
    return grads


@pytest.mark.parametrize("mode", ["eval", "train"])
def test_gradient_oracle(mode):
    model = DetectorModel(TINY, 1, np.float64)
    rng = np.random.default_rng(2)
    x = rng.standard_normal((4, 1, 8, 8))
    y = np.array([1, 0, 1, 0])
    _, cache = forward(model, x, mode, dropout_seed=7)
    ana = backward(model, cache, y)
    num = numeric_grad(model, x, y, mode, 7)
    for k in network.PARAM_ORDER:
        rel = np.abs(ana[k] - num[k]) / np.maximum(np.maximum(np.abs(ana[k]), np.abs(num[k])), 1e-7)
        assert rel.max() < 1e-3, (k, rel.max())
        assert ana[k].shape == model.params[k].shape


def test_output_gradient_zero_when_p_equals_y():
    model = DetectorModel(TINY, 0, np.float64)
    _, cache = forward(model, np.ones((2, 1, 8, 8)))
    cache["prob"] = np.array([1.0, 0.0])
    g = backward(model, cache, [1, 0])
    assert not g["fc3.w"].any() and not g["fc3.b"].any()


def test_eval_gradients_ignore_dropout_seed():
    model = DetectorModel(TINY, 0, np.float64)
    x = np.random.default_rng(3).standard_normal((2, 1, 8, 8))
    g1 = backward(model, forward(model, x, "eval", 1)[1], [1, 0])
    g2 = backward(model, forward(model, x, "eval", 99)[1], [1, 0])
    for k in network.PARAM_ORDER:
        np.testing.assert_array_equal(g1[k], g2[k])


def test_stale_cache_and_label_mismatch():
    model = DetectorModel(TINY, 0, np.float64)
    x = np.zeros((2, 1, 8, 8))
    _, cache = forward(model, x)
    with pytest.raises(ContractError):
        backward(model, cache, [1])
    model.bump()
    with pytest.raises(ContractError):
        backward(model, cache, [1, 0])


@given(shape=st.tuples(st.integers(1, 2), st.integers(1, 3), st.integers(3, 9), st.integers(3, 9)),
       k=st.integers(1, 3), seed=st.integers(0, 1000))
@settings(max_examples=25, deadline=None)
def test_im2col_col2im_adjoint(shape, k, seed):
    if min(shape[2:]) < k:
        return
    rng = np.random.default_rng(seed)
    x = rng.standard_normal(shape)
    cols = network.im2col(x, k)
    c = rng.standard_normal(cols.shape)
    # <im2col(x), c> == <x, col2im(c)>
    assert np.sum(cols * c) == pytest.approx(np.sum(x * network.col2im(c, shape, k)), rel=1e-9, abs=1e-9)


def test_conv_matches_direct_correlation():
    rng = np.random.default_rng(4)
    x = rng.standard_normal((2, 3, 6, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out, _ = network.conv2d_forward(x, w, b)
    ref = np.zeros((2, 4, 4, 5))
    for i in range(4):
        for j in range(5):
            ref[:, :, i, j] = np.einsum("bchw,ochw->bo", x[:, :, i:i + 3, j:j + 3], w) + b
    np.testing.assert_allclose(out, ref, atol=1e-12)


def test_maxpool_floor_and_first_argmax():
    x = np.array([[[[1, 1, 0], [0, 0, 0], [5, 5, 5]]]], dtype=float)
    out, arg = network.maxpool_forward(x, 2)
    assert out.shape == (1, 1, 1, 1) and out[0, 0, 0, 0] == 1
    dx = network.maxpool_backward(np.ones_like(out), arg, x.shape, 2)
    assert dx[0, 0, 0, 0] == 1 and dx.sum() == 1


# --------------------------------------------------------------- training

def toy_data(n=32, size=20, seed=0):
    rng = np.random.default_rng(seed)
    y = np.arange(n) % 2
    X = rng.standard_normal((n, 3, size, size)).astype(np.float32) * 0.1
    X[y == 1, :, 5:15, 5:15] += 1.0
    return X, y


SMALL = NetworkSpec(input_size=20, conv1_channels=4, conv2_channels=4, kernel_size=3, fc1_units=16, fc2_units=8)


def test_zero_learning_rate_freezes_params():
    X, y = toy_data()
    m = DetectorModel(SMALL, 0)
    before = {k: v.copy() for k, v in m.params.items()}
    train_arrays(m, X, y, TrainConfig(epochs=2, learning_rate=0.0))
    for k in network.PARAM_ORDER:
        np.testing.assert_array_equal(m.params[k], before[k])


def test_training_reduces_loss_and_is_deterministic():
    X, y = toy_data()
    cfg = TrainConfig(epochs=6, learning_rate=0.01, batch_size=8, shuffle_seed=1, dropout_seed=2)
    m1, h1 = train_arrays(DetectorModel(SMALL, 0), X, y, cfg)
    m2, h2 = train_arrays(DetectorModel(SMALL, 0), X, y, cfg)
    assert h1.losses == h2.losses
    for k in network.PARAM_ORDER:
        np.testing.assert_array_equal(m1.params[k], m2.params[k])
    assert h1.final_loss < h1.losses[0]
    assert evaluate_arrays(m1, X, y).accuracy == 1.0


def test_train_config_validation():
    for bad in ({"epochs": 0}, {"learning_rate": -1}, {"momentum": 1.0}, {"batch_size": 0}):
        with pytest.raises(ConfigurationError):
            TrainConfig(**bad)


# ---------------------------------------------------------------- metrics

def test_confusion_example_formulas():
    y = np.array([1] * 12 + [0] * 8)
    pred = np.array([1] * 9 + [0] * 3 + [1] * 1 + [0] * 7)
    cm = confusion_matrix(y, pred)
    assert cm.tolist() == [[7, 1], [3, 9]]
    r = classification_report(y, pred.astype(float))
    assert r.per_class[1].precision == pytest.approx(0.9)
    assert r.per_class[1].recall == pytest.approx(0.75)
    assert r.per_class[1].f1 == pytest.approx(0.8182, abs=1e-4)


def test_perfect_predictions():
    y = np.array([0, 1, 1, 0])
    r = classification_report(y, y.astype(float))
    assert r.accuracy == 1.0
    for s in (*r.per_class.values(), r.macro_avg, r.weighted_avg):
        assert (s.precision, s.recall, s.f1) == (1.0, 1.0, 1.0)


@given(st.lists(st.tuples(st.integers(0, 1), st.floats(0, 1)), min_size=1, max_size=60))
@settings(max_examples=60, deadline=None)
def test_metrics_match_sklearn(pairs):
    y = np.array([p[0] for p in pairs])
    prob = np.array([p[1] for p in pairs])
    r = classification_report(y, prob, 0.5)
    pred = (prob >= 0.5).astype(int)
    ref = skm.classification_report(y, pred, labels=[0, 1], output_dict=True, zero_division=0)
    assert r.accuracy == pytest.approx(skm.accuracy_score(y, pred))
    for c in (0, 1):
        assert r.per_class[c].precision == pytest.approx(ref[str(c)]["precision"])
        assert r.per_class[c].recall == pytest.approx(ref[str(c)]["recall"])
        assert r.per_class[c].f1 == pytest.approx(ref[str(c)]["f1-score"])
        assert r.per_class[c].support == ref[str(c)]["support"]
    for mine, theirs in ((r.macro_avg, "macro avg"), (r.weighted_avg, "weighted avg")):
        assert mine.precision == pytest.approx(ref[theirs]["precision"])
        assert mine.recall == pytest.approx(ref[theirs]["recall"])
        assert mine.f1 == pytest.approx(ref[theirs]["f1-score"])


def test_report_table_rows():
    r = classification_report(np.array([0, 1, 1]), np.array([0.1, 0.8, 0.3]))
    first = [ln.split()[0] for ln in r.table().splitlines() if ln.strip()]
    assert first[1:] == ["0", "1", "accuracy", "macro", "weighted"]


# ------------------------------------------------------------- checkpoints

def test_checkpoint_round_trip(tmp_path):
    m = DetectorModel(SMALL, 9)
    p = tmp_path / "m.jnet"
    save_model(m, p)
    back = load_model(p)
    assert back.spec == SMALL and back.init_seed == 9
    for k in network.PARAM_ORDER:
        np.testing.assert_array_equal(back.params[k], m.params[k])
    X, y = toy_data(8)
    assert evaluate_arrays(back, X, y).to_dict() == evaluate_arrays(m, X, y).to_dict()
    save_model(back, tmp_path / "again.jnet")
    assert (tmp_path / "again.jnet").read_bytes() == p.read_bytes()


def test_checkpoint_truncation_and_spec_mismatch(tmp_path):
    p = tmp_path / "m.jnet"
    save_model(DetectorModel(SMALL, 0), p)
    data = p.read_bytes()
    for cut in (10, 60, len(data) - 4):
        (tmp_path / "t.jnet").write_bytes(data[:cut])
        with pytest.raises(CheckpointError):
            load_model(tmp_path / "t.jnet")
    (tmp_path / "x.jnet").write_bytes(b"XXXX" + data[4:])
    with pytest.raises(CheckpointError):
        load_model(tmp_path / "x.jnet")
    with pytest.raises(CheckpointError):
        load_model(p, expected_spec=CANONICAL_SPEC)


# ---------------------------------------------------------------- estimator

def test_estimator_api():
    X, y = toy_data()
    est = JammingDetector(conv_channels=(4, 4), kernel_size=3, hidden_units=(16, 8), epochs=6,
                          learning_rate=0.01)
    assert clone(est).get_params()["epochs"] == 6
    est.fit(X, y)
    assert est.model_.spec.input_size == 20
    assert est.predict_proba(X).shape == (32, 2)
    np.testing.assert_allclose(est.predict_proba(X).sum(axis=1), 1.0)
    assert est.score(X, y) == 1.0
    assert len(est.history_.losses) == 6


def test_estimator_validation():
    est = JammingDetector(conv_channels=(2, 2), kernel_size=3, hidden_units=(4, 4), epochs=1)
    X, y = toy_data(8)
    with pytest.raises(InputError):
        est.fit(X, y[:3])
    with pytest.raises(InputError):
        est.fit(X, y + 2)
    bad = X.copy()
    bad[0, 0, 0, 0] = np.nan
    with pytest.raises(InputError):
        est.fit(bad, y)
    est.fit(X, y)
    with pytest.raises(InputError):
        est.predict(np.zeros((1, 3, 21, 21), np.float32))


def test_estimator_checkpoint(tmp_path):
    X, y = toy_data(8)
    est = JammingDetector(conv_channels=(2, 2), kernel_size=3, hidden_units=(4, 4), epochs=1).fit(X, y)
    est.save(tmp_path / "e.jnet")
    back = JammingDetector.from_checkpoint(tmp_path / "e.jnet")
    np.testing.assert_array_equal(back.predict_proba(X), est.predict_proba(X))
    np.testing.assert_array_equal(predict_proba(back.model_, X), est.decision_function(X))
