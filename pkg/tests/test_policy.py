import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from retrosearch import policy as P


def fd_grad(f, v, h=1e-6):
    g = np.zeros_like(v)
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        g[i] = (f(v + e) - f(v - e)) / (2 * h)
    return g


def rel_error(a, b, floor=1e-5):
    return np.abs(a - b) / np.maximum(floor, np.maximum(np.abs(a), np.abs(b)))


def ranker_grad_check(seed):
    rng = np.random.default_rng(seed)
    params = P.init_ranker(6, hidden=5, seed=seed)
    params.b1 = rng.normal(size=5)
    Pm, Nm = rng.normal(size=(4, 6)), rng.normal(size=(4, 6))
    _, g = P.pairwise_loss_and_grad(params, Pm, Nm)
    num = fd_grad(lambda v: P.pairwise_loss_and_grad(params.with_flat(v), Pm, Nm)[0], params.flat())
    return g.flat(), num


def test_normalize_query_maps_to_unit_box():
    x = np.array([[0.0, 5.0, 1.0], [10.0, 5.0, 3.0], [5.0, 5.0, 2.0]])
    out, ctx = P.normalize_query(x)
    assert np.allclose(out[:, 0], [-1, 1, 0])
    assert np.all(out[:, 1] == 0.0)
    assert np.allclose(ctx.lo, [0, 5, 1]) and np.allclose(ctx.hi, [10, 5, 3])


@settings(max_examples=50, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 8), st.integers(1, 5)), elements=st.floats(-1e6, 1e6)))
def test_normalize_query_range_property(x):
    out, _ = P.normalize_query(x)
    assert np.all(out >= -1 - 1e-9) and np.all(out <= 1 + 1e-9)
    # rank order within a column is preserved
    for j in range(x.shape[1]):
        order = np.argsort(x[:, j], kind="stable")
        assert np.all(np.diff(out[order, j]) >= -1e-12)


def test_score_dimension_mismatch():
    params = P.init_ranker(4)
    with pytest.raises(ValueError):
        P.score(params, np.zeros(3))
    assert isinstance(P.score(params, np.zeros(4)), float)


def test_ranker_gradient_matches_finite_differences():
    for seed in range(10):
        g, num = ranker_grad_check(seed)
        assert rel_error(g, num).max() <= 1e-4


def test_pruner_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(9, 4))
    y = rng.integers(0, 2, size=9)
    prm = P.PrunerParams(rng.normal(size=4), 0.3, 5.0, rng.normal(size=4), rng.uniform(0.5, 2, size=4))
    _, gw, gb = P.weighted_logistic_loss_and_grad(prm, X, y)

    def loss(v):
        q = prm.copy()
        q.w, q.b = v[:4], v[4]
        return P.weighted_logistic_loss_and_grad(q, X, y)[0]

    num = fd_grad(loss, np.concatenate([prm.w, [prm.b]]))
    assert np.allclose(np.concatenate([gw, [gb]]), num, rtol=1e-5, atol=1e-8)


def test_pruner_rejects_bad_weight():
    with pytest.raises(ValueError):
        P.PrunerParams(np.zeros(2), w_opt=0.5)


def test_training_lowers_loss_and_ranks_pairs():
    rng = np.random.default_rng(0)
    w = rng.normal(size=5)
    A, B = rng.normal(size=(400, 5)), rng.normal(size=(400, 5))
    better = (A @ w) > (B @ w)
    Pm = np.where(better[:, None], A, B)
    Nm = np.where(better[:, None], B, A)
    res = P.train_ranker(P.init_ranker(5, 16, 0), Pm, Nm, P.LearnerConfig(learning_rate=0.05, epochs=30))
    assert res.losses[res.best_epoch] == min(res.losses) < res.losses[0]
    acc = np.mean(P.score(res.params, Pm) > P.score(res.params, Nm))
    assert acc > 0.9


def test_training_divergence_is_reported():
    rng = np.random.default_rng(0)
    Pm, Nm = rng.normal(size=(50, 3)) * 1e3, rng.normal(size=(50, 3)) * 1e3
    with pytest.raises(P.TrainingDivergedError):
        P.train_ranker(P.init_ranker(3, 4, 0), Pm, Nm, P.LearnerConfig(learning_rate=1e300, epochs=5))


def test_pruner_training_separates_classes():
    rng = np.random.default_rng(2)
    X = np.vstack([rng.normal(2, 1, size=(40, 3)), rng.normal(-2, 1, size=(200, 3))])
    y = np.r_[np.ones(40), np.zeros(200)]
    prm, losses = P.train_pruner(X, y, 5.0, P.LearnerConfig(learning_rate=0.1, epochs=30))
    assert losses[-1] < losses[0]
    assert np.mean(P.prune(prm, X[:40])) < 0.1
    assert np.mean(P.prune(prm, X[40:])) > 0.9


def test_model_text_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    r1 = P.RankerPolicy(P.init_ranker(4, 3, 1, "schema-x"), True, None, "a")
    pr = P.PrunerParams(rng.normal(size=4), 0.1, 3.0, rng.normal(size=4), rng.uniform(1, 2, size=4), "schema-x")
    r2 = P.RankerPolicy(P.init_ranker(4, 3, 2, "schema-x"), False, pr, "b")
    mix = P.MixturePolicy([r1, P.MixturePolicy([r2, r1], [0.5, 0.5])], [0.25, 0.75], "mix")
    for pol in (r1, r2, mix):
        path = tmp_path / "m.model"
        P.save_policy(pol, path)
        back = P.load_policy(path)
        assert P.policy_to_text(back) == P.policy_to_text(pol)
    X = rng.normal(size=(6, 4))
    assert np.array_equal(P.load_policy(path).components[0].score(X), r1.score(X))
    with pytest.raises(P.ModelFormatError):
        P.policy_from_text("not a model")
