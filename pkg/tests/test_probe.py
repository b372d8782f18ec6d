import logging

import numpy as np
import pytest

from phonotraj.ema import ArticulatorySeries
from phonotraj.forward import Trajectory
from phonotraj.probe import (ADAM_BETAS, ADAM_EPS, ADAM_LR, AdamState,
                             ProbeError, ProbeModel, adam_step, aggregate,
                             dataset_loss, pearson, score, train_probe)


def make_pairs(rng, A, b, n_utt, frames=(30, 60), noise=0.0):
    d = A.shape[1]
    pairs = []
    for u in range(n_utt):
        n = int(rng.integers(*frames))
        F = rng.normal(size=(n, d))
        Z = F @ A.T + b
        if noise:
            Z = Z + rng.normal(scale=noise, size=Z.shape)
        pairs.append((Trajectory(f"u{u}", 100.0, F), ArticulatorySeries(f"u{u}", Z)))
    return pairs


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------


def test_adam_zero_gradient_is_fixed_point():
    p = [np.array([1.5, -2.0])]
    state = AdamState.for_params(p)
    out = adam_step(state, p, [np.zeros(2)])
    np.testing.assert_array_equal(out[0], p[0])
    np.testing.assert_array_equal(state.m[0], 0.0)
    np.testing.assert_array_equal(state.v[0], 0.0)


def test_adam_moments_decay_under_zero_gradients():
    p = [np.array([0.0])]
    state = AdamState.for_params(p)
    p = adam_step(state, p, [np.array([1.0])])
    m_prev, v_prev = abs(state.m[0][0]), state.v[0][0]
    for _ in range(5):
        p = adam_step(state, p, [np.zeros(1)])
        assert abs(state.m[0][0]) < m_prev
        assert state.v[0][0] < v_prev
        m_prev, v_prev = abs(state.m[0][0]), state.v[0][0]


def test_adam_first_step_closed_form():
    p = [np.array([0.0])]
    state = AdamState.for_params(p)
    out = adam_step(state, p, [np.array([1.0])])
    expected = -ADAM_LR / (1.0 + ADAM_EPS)  # bias correction cancels at t=1
    assert out[0][0] == pytest.approx(expected, abs=1e-15)


def test_adam_two_identical_steps_closed_form():
    b1, b2 = ADAM_BETAS
    p = [np.array([0.0])]
    state = AdamState.for_params(p)
    p = adam_step(state, p, [np.array([1.0])])
    p = adam_step(state, p, [np.array([1.0])])
    # independent evaluation of the bias-corrected formulas at t = 2
    m2 = (b1 * (1 - b1) + (1 - b1)) / (1 - b1**2)
    v2 = (b2 * (1 - b2) + (1 - b2)) / (1 - b2**2)
    step2 = -ADAM_LR * m2 / (np.sqrt(v2) + ADAM_EPS)
    expected = -ADAM_LR / (1.0 + ADAM_EPS) + step2
    assert p[0][0] == pytest.approx(expected, abs=1e-15)


def test_adam_shape_mismatch_rejected():
    p = [np.zeros(3)]
    state = AdamState.for_params(p)
    with pytest.raises(ProbeError):
        adam_step(state, p, [np.zeros(2)])


def test_adam_non_finite_gradient_rejected():
    p = [np.zeros(2)]
    state = AdamState.for_params(p)
    with pytest.raises(ProbeError):
        adam_step(state, p, [np.array([1.0, np.inf])])


# ---------------------------------------------------------------------------
# probe training
# ---------------------------------------------------------------------------


def test_probe_recovers_noiseless_affine_map():
    rng = np.random.default_rng(0)
    A = rng.normal(size=(6, 5)) * 0.5
    b = rng.normal(size=6)
    train = make_pairs(rng, A, b, 40)
    dev = make_pairs(rng, A, b, 6)
    test = make_pairs(rng, A, b, 6)
    probe = train_probe(train, dev, seed=0)
    assert dataset_loss(probe.weight, probe.bias, test) < 1e-6
    assert np.all(score(probe, test) > 0.999)

    # closed-form weighted least-squares oracle agrees
    Fs, Zs, w = [], [], []
    for tr, z in train:
        n = tr.frames.shape[0]
        Fs.append(tr.frames)
        Zs.append(z.Z)
        w.append(np.full(n, 1.0 / (len(train) * n)))
    F = np.vstack(Fs)
    Z = np.vstack(Zs)
    sw = np.sqrt(np.concatenate(w))[:, None]
    Fb = np.column_stack([F, np.ones(len(F))])
    W, *_ = np.linalg.lstsq(Fb * sw, Z * sw, rcond=None)
    oracle_loss = dataset_loss(W[:-1].T, W[-1], test)
    assert abs(dataset_loss(probe.weight, probe.bias, test) - oracle_loss) < 1e-6


def test_early_stopping_contract():
    # Training pulls the weight monotonically toward 1; a dev target of 0
    # makes dev loss strictly increase from epoch 1, so training stops after
    # epoch 6 and returns the epoch-1 parameters.
    def fixed_pairs(target):
        F = np.ones((4, 1))
        Z = np.full((4, 1), target)
        return [(Trajectory("u", 100.0, F), ArticulatorySeries("u", Z))]

    train = fixed_pairs(1.0)
    dev = fixed_pairs(0.0)
    probe = train_probe(train, dev, seed=0)
    assert probe.epochs_run == 6
    one_epoch = train_probe(train, dev, seed=0, max_epochs=1)
    np.testing.assert_array_equal(probe.weight, one_epoch.weight)
    np.testing.assert_array_equal(probe.bias, one_epoch.bias)


def test_best_dev_parameters_returned():
    rng = np.random.default_rng(1)
    A = rng.normal(size=(6, 4))
    b = rng.normal(size=6)
    train = make_pairs(rng, A, b, 10)
    dev = make_pairs(rng, A, b, 3, noise=0.05)
    probe = train_probe(train, dev, seed=3, max_epochs=20)
    dev_loss = dataset_loss(probe.weight, probe.bias, dev)
    assert dev_loss == pytest.approx(probe.best_dev_loss, rel=1e-12)


def test_single_frame_exact_fit():
    # Underdetermined: any parameters interpolating the one frame are exact.
    # Adam travels about lr per step, so give it enough epochs to get there.
    F = np.ones((1, 6))
    Z = (np.arange(6.0) / 10.0).reshape(1, 6)
    pairs = [(Trajectory("u", 100.0, F), ArticulatorySeries("u", Z))]
    probe = train_probe(pairs, pairs, seed=0, max_epochs=2000)
    assert dataset_loss(probe.weight, probe.bias, pairs) < 1e-4


def test_training_deterministic_given_seed():
    rng = np.random.default_rng(2)
    A = rng.normal(size=(6, 4))
    train = make_pairs(rng, A, np.zeros(6), 8)
    dev = make_pairs(rng, A, np.zeros(6), 2)
    p1 = train_probe(train, dev, seed=11, max_epochs=5)
    p2 = train_probe(train, dev, seed=11, max_epochs=5)
    np.testing.assert_array_equal(p1.weight, p2.weight)


def test_mismatched_pair_rejected():
    F = np.zeros((10, 3))
    Z = np.zeros((14, 6))
    pairs = [(Trajectory("u", 100.0, F), ArticulatorySeries("u", Z))]
    with pytest.raises(ProbeError, match="frames"):
        train_probe(pairs, pairs, seed=0)


def test_empty_sets_rejected():
    with pytest.raises(ProbeError):
        train_probe([], [], seed=0)


# ---------------------------------------------------------------------------
# Pearson correlation
# ---------------------------------------------------------------------------


def test_pearson_perfect_relations():
    assert pearson(np.array([1.0, 2, 3]), np.array([2.0, 4, 6])) == pytest.approx(1.0)
    assert pearson(np.array([1.0, 2, 3]), np.array([3.0, 2, 1])) == pytest.approx(-1.0)


def test_pearson_against_direct_formula():
    x = np.array([1.0, 2.0, 3.0, 4.0])
    y = np.array([1.0, 2.0, 3.0, 100.0])
    n = len(x)
    cov = np.sum((x - x.mean()) * (y - y.mean())) / n
    expected = cov / (x.std() * y.std())
    assert pearson(x, y) == pytest.approx(expected, abs=1e-12)


def test_pearson_zero_variance_rejected():
    with pytest.raises(ProbeError):
        pearson(np.ones(5), np.arange(5.0))


def test_pearson_affine_invariance():
    rng = np.random.default_rng(3)
    for _ in range(20):
        x = rng.normal(size=50)
        y = rng.normal(size=50)
        a = rng.normal()
        if a == 0:
            continue
        b = rng.normal()
        lhs = pearson(a * x + b, y)
        rhs = np.sign(a) * pearson(x, y)
        assert lhs == pytest.approx(rhs, abs=1e-12)


# ---------------------------------------------------------------------------
# scoring and aggregation
# ---------------------------------------------------------------------------


def test_score_exact_probe_is_one():
    rng = np.random.default_rng(4)
    A = rng.normal(size=(6, 5))
    b = rng.normal(size=6)
    test = make_pairs(rng, A, b, 5)
    probe = ProbeModel(A, b)
    np.testing.assert_allclose(score(probe, test), 1.0, atol=1e-9)


def test_score_zero_probe_excluded_with_warning(caplog):
    rng = np.random.default_rng(5)
    test = make_pairs(rng, np.ones((6, 3)), np.zeros(6), 3)
    probe = ProbeModel(np.zeros((6, 3)), np.zeros(6))
    with caplog.at_level(logging.WARNING):
        out = score(probe, test)
    assert np.all(np.isnan(out))
    assert "zero variance" in caplog.text


def test_score_equals_manual_concatenation():
    rng = np.random.default_rng(6)
    A = rng.normal(size=(6, 4))
    pairs = make_pairs(rng, A, np.zeros(6), 2, noise=0.3)
    probe = ProbeModel(A, np.zeros(6))
    got = score(probe, pairs)
    pred = np.vstack([p[0].frames @ A.T for p in pairs])
    truth = np.vstack([p[1].Z for p in pairs])
    for j in range(6):
        assert got[j] == pytest.approx(pearson(pred[:, j], truth[:, j]), abs=1e-12)


def test_score_empty_test_rejected():
    with pytest.raises(ProbeError):
        score(ProbeModel(np.zeros((6, 2)), np.zeros(6)), [])


def test_aggregate_constant_matrix():
    rep = aggregate(np.full((4, 6), 0.5), ("a", "b", "c", "d"))
    assert rep.grand == pytest.approx(0.5)
    assert rep.stderr == pytest.approx(0.0)
    np.testing.assert_allclose(rep.per_speaker, 0.5)
    np.testing.assert_allclose(rep.per_parameter, 0.5)


def test_aggregate_consistency():
    rng = np.random.default_rng(7)
    m = rng.uniform(-1, 1, size=(6, 6))
    rep = aggregate(m, tuple("abcdef"))
    np.testing.assert_allclose(rep.per_speaker, m.mean(axis=1), atol=1e-12)
    np.testing.assert_allclose(rep.per_parameter, m.mean(axis=0), atol=1e-12)
    assert rep.grand == pytest.approx(rep.per_speaker.mean(), abs=1e-12)


def test_aggregate_shape_mismatch_rejected():
    with pytest.raises(ProbeError):
        aggregate(np.zeros((2, 6)), ("a",))


def test_aggregate_all_nan_rejected():
    with pytest.raises(ProbeError):
        aggregate(np.full((2, 6), np.nan), ("a", "b"))


def test_report_serialization_is_stable():
    rep = aggregate(np.full((2, 6), 0.25), ("a", "b"))
    assert rep.to_csv() == rep.to_csv()
    assert "0.250" in rep.to_text()
    assert rep.to_csv().startswith("speaker,")
