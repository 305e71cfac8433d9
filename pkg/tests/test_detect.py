import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ids_ebgan.detect import (AnomalyScore, evaluate, evaluate_scores, export_histogram, export_reconstructions,
                              export_reports, export_scores, histogram_rows, metrics_from_counts,
                              normalize_scores, ranking_auc, read_reconstructions, read_scores, score,
                              threshold_by_max_train, threshold_by_ratio)
from ids_ebgan.ebgan import Discriminator
from ids_ebgan.neural import AffineLayer, Mlp, ShapeError


def _fixed_disc(recon_value, d=2):
    """Autoencoder whose reconstruction is the constant ``recon_value``."""
    enc = Mlp([AffineLayer(np.zeros((d, d)), np.zeros(d))])
    dec = Mlp([AffineLayer(np.zeros((d, d)), np.full(d, recon_value))])
    return Discriminator(enc, dec)


def brute_confusion(t, p):
    tp = fp = tn = fn = 0
    for a, b in zip(t, p):
        if a and b:
            tp += 1
        elif not a and b:
            fp += 1
        elif not a and not b:
            tn += 1
        else:
            fn += 1
    return tp, fp, tn, fn


# scoring ------------------------------------------------------------------------

def test_score_hand_cases():
    disc = _fixed_disc(1.0)
    assert score(disc, np.zeros(2), "mse") == 1.0
    assert score(disc, np.zeros(2), "l1") == 2.0
    assert score(disc, np.ones(2), "mse") == 0.0
    assert score(disc, np.ones(2), "l1") == 0.0
    batch = score(disc, np.array([[0.0, 0.0], [1.0, 1.0]]))
    assert list(batch) == [1.0, 0.0]


def test_score_errors():
    disc = _fixed_disc(1.0)
    with pytest.raises(ValueError):
        score(disc, np.zeros(2), "l2")
    with pytest.raises(ShapeError):
        score(disc, np.zeros(3))


# thresholds ---------------------------------------------------------------------

def test_ratio_threshold_cases():
    thr, pred = threshold_by_ratio([1, 2, 3, 4], 50)
    assert list(pred) == [False, False, True, True]
    assert thr == 3.0
    _, pred = threshold_by_ratio([1, 2, 3, 4], 0)
    assert not pred.any()
    _, pred = threshold_by_ratio([1, 2, 3, 4], 100)
    assert pred.all()
    with pytest.raises(ValueError):
        threshold_by_ratio([], 44)


def test_ratio_tie_break_prefers_lower_index():
    _, pred = threshold_by_ratio([5, 5, 5, 1], 50)
    assert list(pred) == [True, True, False, False]


def test_ratio_uses_exact_decimal_floor():
    # 0.29 * 100 is 28.999999999999996 in binary floating point
    _, pred = threshold_by_ratio(np.arange(100.0), 29)
    assert pred.sum() == 29
    _, pred = threshold_by_ratio(np.arange(100.0), 0.29 * 100)
    assert pred.sum() == 28


@settings(max_examples=200, deadline=None)
@given(scores=st.lists(st.integers(0, 5), min_size=1, max_size=60),
       c=st.integers(0, 100))
def test_ratio_flags_exact_count(scores, c):
    thr, pred = threshold_by_ratio(scores, c)
    k = c * len(scores) // 100
    assert pred.sum() == k
    s = np.asarray(scores, dtype=float)
    if k:
        # every flagged score is at least every unflagged score
        assert s[pred].min() >= (s[~pred].max() if (~pred).any() else -np.inf)
        assert thr == s[pred].min()


def test_max_train_threshold():
    thr, pred = threshold_by_max_train([0.1, 0.5], [0.4, 0.6])
    assert thr == 0.5
    assert list(pred) == [False, True]
    _, pred = threshold_by_max_train([0.1, 0.5], [0.5, 0.2])
    assert not pred.any()
    with pytest.raises(ValueError):
        threshold_by_max_train([], [0.3])


@settings(max_examples=100, deadline=None)
@given(st.lists(st.floats(0, 10), min_size=1, max_size=30), st.floats(0, 10), st.floats(0, 10))
def test_raising_threshold_is_monotone(test_scores, a, b):
    lo, hi = sorted((a, b))
    _, p_lo = threshold_by_max_train([lo], test_scores)
    _, p_hi = threshold_by_max_train([hi], test_scores)
    assert not np.any(p_hi & ~p_lo)


# metrics -----------------------------------------------------------------------

def test_evaluate_hand_case():
    t = [True] * 12 + [False] * 2
    p = [True] * 8 + [False] * 4 + [True] * 2
    rep = evaluate(t, p)
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (8, 2, 0, 4)
    assert rep.precision == pytest.approx(0.8, abs=1e-15)
    assert rep.recall == pytest.approx(2 / 3, abs=1e-15)
    assert rep.f1 == pytest.approx(8 / 11, abs=1e-15)


def test_evaluate_perfect_and_inverted():
    t = np.array([True, False, True, False])
    perfect = evaluate(t, t)
    assert perfect.precision == perfect.recall == perfect.f1 == 1.0
    inverted = evaluate(t, ~t)
    assert inverted.precision == inverted.recall == inverted.f1 == 0.0


def test_evaluate_undefined_metrics():
    rep = evaluate([False, False], [False, False])
    assert rep.precision == rep.recall == rep.f1 == 0.0
    assert set(rep.undefined) == {"precision", "recall", "f1"}
    assert metrics_from_counts(1, 0, 0)[3] == ()


def test_evaluate_errors():
    with pytest.raises(ValueError):
        evaluate([True, False], [True])
    with pytest.raises(ValueError):
        evaluate([True], None)
    with pytest.raises(ValueError):
        evaluate_scores([AnomalyScore(0, 0.1, "normal")])


def test_evaluate_matches_brute_force():
    rng = np.random.default_rng(0)
    for _ in range(200):
        n = int(rng.integers(1, 50))
        t, p = rng.random(n) < rng.random(), rng.random(n) < rng.random()
        rep = evaluate(t, p)
        assert (rep.tp, rep.fp, rep.tn, rep.fn) == brute_confusion(t, p)
        assert rep.total == n


def test_evaluate_scores():
    scored = [AnomalyScore(0, 0.9, "malicious", "malicious"), AnomalyScore(1, 0.1, "normal", "malicious"),
              AnomalyScore(2, 0.2, "malicious", "normal")]
    rep = evaluate_scores(scored)
    assert (rep.tp, rep.fp, rep.tn, rep.fn) == (1, 1, 0, 1)


# normalization, AUC, exports -----------------------------------------------------

def test_normalize_scores():
    assert list(normalize_scores([2, 4, 6])) == [0.0, 0.5, 1.0]
    assert list(normalize_scores([3.3])) == [0.0]
    s = np.random.default_rng(0).exponential(size=50)
    assert np.array_equal(np.argsort(s, kind="stable"), np.argsort(normalize_scores(s), kind="stable"))


def _auc_oracle(s, t):
    pos, neg = [a for a, b in zip(s, t) if b], [a for a, b in zip(s, t) if not b]
    wins = sum(1.0 if p > q else 0.5 if p == q else 0.0 for p in pos for q in neg)
    return wins / (len(pos) * len(neg))


@settings(max_examples=100, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 6), st.booleans()), min_size=2, max_size=40))
def test_auc_matches_pairwise_oracle(pairs):
    s = [a for a, _ in pairs]
    t = [b for _, b in pairs]
    if all(t) or not any(t):
        with pytest.raises(ValueError):
            ranking_auc(s, t)
        return
    assert ranking_auc(s, t) == pytest.approx(_auc_oracle(s, t), abs=1e-12)


def test_histogram():
    rows = histogram_rows([0, 0.49, 0.51, 1.0], [False, False, True, True], bins=2)
    assert [(n + m) for _, _, n, m in rows] == [2, 2]
    one = histogram_rows([0.1, 0.7, 1.0], [True, False, False], bins=1)
    assert one == [(0.0, 1.0, 2, 1)]
    rng = np.random.default_rng(0)
    s, t = rng.random(300), rng.random(300) < 0.3
    rows = histogram_rows(s, t, 50)
    assert sum(r[2] for r in rows) == (~t).sum()
    assert sum(r[3] for r in rows) == t.sum()
    text = export_histogram(s, t, 50)
    assert text.splitlines()[0] == "bin_low,bin_high,count_normal,count_malicious"
    assert len(text.splitlines()) == 51


def test_reconstruction_export_consistency(tmp_path):
    rng = np.random.default_rng(0)
    disc = Discriminator.build(7, 3, (5,), (5,), rng=rng)
    x = rng.uniform(size=(25, 7))
    t = rng.random(25) < 0.5
    path = tmp_path / "recon.csv"
    text = export_reconstructions(disc, x, t, out=path)
    assert len(text.splitlines()) == 26
    assert all(len(line.split(",")) == 8 for line in text.splitlines())
    recon, labels = read_reconstructions(path)
    assert np.array_equal(labels, t)
    rescored = np.mean((x - recon) ** 2, axis=1)
    assert np.max(np.abs(rescored - score(disc, x))) < 1e-9


def test_scores_and_reports_round_trip(tmp_path):
    s = np.array([0.25, 1e-17, 3.5])
    t = np.array([False, False, True])
    _, pred = threshold_by_ratio(s, 34)
    path = tmp_path / "scores.csv"
    export_scores(s, t, pred, out=path)
    back = read_scores(path)
    assert [a.score for a in back] == list(s)
    assert [a.predicted for a in back] == ["normal", "normal", "malicious"]
    rep = evaluate_scores(back, threshold=3.5)
    text = export_reports([rep])
    assert text.splitlines()[1] == "mse,ratio,3.5,1,0,2,0,1.0,1.0,1.0"
