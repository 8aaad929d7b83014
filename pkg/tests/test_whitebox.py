import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from orderattack.core import AttackSpec
from orderattack.metrics import compute_src
from orderattack.oracle import EmbeddingDatabase, RankingModel, rank
from orderattack.synthetic import collinear_triple, gen_synthetic_db
from orderattack.whitebox import (PGDOrderAttack, PgdConfig, WhiteboxLossConfig,
                                  finite_difference_gradient, loss_oa, loss_qa_plus, loss_reo,
                                  pgd_attack, sample_distractors)

ID1 = RankingModel(np.eye(1))


def at(*dists):
    """1-d embeddings whose distances to the query 0 are ``dists``."""
    return np.array(dists, dtype=np.float64)[:, None]


def test_reo_examples():
    q = np.zeros(1)
    assert loss_reo(ID1, q, at(0.2, 0.5), (0, 1))[0] == 0
    assert loss_reo(ID1, q, at(0.5, 0.2), (0, 1))[0] == pytest.approx(0.3)
    assert loss_reo(ID1, q, at(0.1, 0.3, 0.2), (0, 1, 2))[0] == pytest.approx(0.1)
    # permutation reorders the candidate rows first
    assert loss_reo(ID1, q, at(0.2, 0.5), (1, 0))[0] == pytest.approx(0.3)
    # margin turns a satisfied pair into an active hinge
    assert loss_reo(ID1, q, at(0.2, 0.5), (0, 1), margin_gamma=0.4)[0] == pytest.approx(0.1)


def test_qa_examples():
    q = np.zeros(1)
    assert loss_qa_plus(ID1, q, at(0.1, 0.2), at(0.5, 0.9))[0] == 0
    assert loss_qa_plus(ID1, q, at(0.6), at(0.4))[0] == pytest.approx(0.2)
    value, grad = loss_qa_plus(ID1, q, at(0.6), np.empty((0, 1)))
    assert value == 0 and np.array_equal(grad, np.zeros(1))


def test_oa_examples():
    q = np.zeros(1)
    cemb, perm, demb = at(0.3, 0.2), (0, 1), at(0.28, 0.9)
    reo = loss_reo(ID1, q, cemb, perm)
    assert loss_oa(ID1, q, cemb, perm, WhiteboxLossConfig(xi=0.0), demb) == reo
    value, _ = loss_oa(ID1, q, cemb, perm, WhiteboxLossConfig(xi=10.0), demb)
    assert value == pytest.approx(0.1 + 10 * 0.02)
    value, grad = loss_oa(ID1, q, at(0.1, 0.2), perm, WhiteboxLossConfig(xi=10.0), at(0.5))
    assert value == 0 and not grad.any()


def test_fd_of_linear_function(rng):
    a = rng.normal(size=7)
    np.testing.assert_allclose(finite_difference_gradient(lambda x: a @ x, rng.normal(size=7)),
                               a, rtol=1e-8)


def smooth_points(model, rng, k, n_distractors, count):
    """Random (query, candidates, distractors) with every hinge argument away from zero."""
    out = []
    while len(out) < count:
        q = rng.uniform(0.2, 0.8, model.input_dim)
        v = model.weights @ q
        cemb = v + rng.normal(0, 0.5, (k, model.embed_dim))
        demb = v + rng.normal(0, 0.5, (n_distractors, model.embed_dim))
        fc = np.linalg.norm(v - cemb, axis=1)
        fx = np.linalg.norm(v - demb, axis=1)
        gaps = np.concatenate([(fc[:, None] - fc[None, :])[np.triu_indices(k, 1)],
                               (fc[:, None] - fx[None, :]).ravel()])
        if np.abs(gaps).min() > 1e-3 and min(fc.min(), fx.min()) > 1e-3:
            out.append((q, cemb, demb, tuple(rng.permutation(k))))
    return out


def rel_error(a, b):
    denom = max(np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


@pytest.mark.parametrize("which", ["reo", "qa", "oa"])
def test_gradients_match_finite_differences(rng, which):
    model = gen_synthetic_db(2, 2, 6, seed=5, image_shape=(1, 4, 4))[1]
    cfg = WhiteboxLossConfig(xi=3.0)
    for q, cemb, demb, perm in smooth_points(model, rng, 4, 6, 20):
        fn = {
            "reo": lambda x: loss_reo(model, x, cemb, perm),
            "qa": lambda x: loss_qa_plus(model, x, cemb, demb),
            "oa": lambda x: loss_oa(model, x, cemb, perm, cfg, demb),
        }[which]
        assert rel_error(fn(q)[1], finite_difference_gradient(fn, q)) < 1e-4


def test_gradient_at_kink_is_the_inactive_side():
    # two candidates at exactly equal distance: hinge argument 0, subgradient 0
    value, grad = loss_reo(ID1, np.zeros(1), at(0.3, 0.3), (0, 1))
    assert value == 0 and not grad.any()
    # zero distance has no direction either
    value, grad = loss_reo(ID1, np.zeros(1), at(0.0, -0.2), (1, 0))
    assert value == pytest.approx(0.2) and np.all(np.isfinite(grad))


@settings(max_examples=200, deadline=None)
@given(st.integers(2, 6), st.integers(0, 2**32 - 1))
def test_zero_loss_iff_perfect_order(k, seed):
    rng = np.random.default_rng(seed)
    ids = [f"c{i}" for i in range(k)]
    emb = rng.normal(size=(k, 3))
    model = RankingModel(np.eye(3))
    db = EmbeddingDatabase(ids, emb)
    q = rng.uniform(0, 1, 3)
    perm = tuple(rng.permutation(k))
    tau = compute_src(ids, perm, rank(model, db, q))
    assert (loss_reo(model, q, emb, perm)[0] == 0) == (tau == 1.0)


def swap_instance():
    # 2-d embedding space = image space; candidate a is nearer than b
    model = RankingModel(np.eye(2), (1, 1, 2))
    db = EmbeddingDatabase(["a", "b"], [[0.52, 0.5], [0.5, 0.53]])
    return model, db, np.array([0.5, 0.5])


def test_two_candidate_swap():
    model, db, q = swap_instance()
    eps = 8 / 255
    assert list(rank(model, db, q)) == ["a", "b"]
    # feasibility by dense grid search over the reachable box
    g = np.linspace(-eps, eps, 201)
    found = False
    for dx, dy in itertools.product(g, g):
        x = q + [dx, dy]
        if np.linalg.norm(x - db.embedding("b")) < np.linalg.norm(x - db.embedding("a")):
            found = True
            break
    assert found
    est = PGDOrderAttack(epsilon=eps, steps=24).fit(q, model=model, db=db, candidates=("a", "b"),
                                                    permutation=(1, 0))
    assert est.tau_s_ == 1.0
    assert est.n_iter_ == 24


def test_collinear_triple_ceiling():
    for seed in range(10):
        db, model, q, spec = collinear_triple(seed)
        res = pgd_attack(model, db, q, spec, PgdConfig(steps=24))
        assert res.tau_s <= 1 / 3


def test_iterates_stay_feasible(standard_data, rng):
    db, model = standard_data
    eps = 8 / 255
    for _ in range(3):
        q = model.preimage(db.embeddings[int(rng.integers(len(db)))])
        C = tuple(rank(model, db, q, 5))
        seen = []

        def check(t, r):
            assert np.abs(r).max() <= eps + 1e-15
            assert (q + r).min() >= 0 and (q + r).max() <= 1
            seen.append(t)

        PGDOrderAttack(epsilon=eps, xi=10.0, random_state=0).fit(
            q, model=model, db=db, candidates=C, permutation=tuple(rng.permutation(5)), callback=check)
        assert seen == list(range(1, 25))


def test_zero_budget_is_baseline(standard_data, rng):
    db, model = standard_data
    q = model.preimage(db.embeddings[3])
    C = tuple(rank(model, db, q, 5))
    p = tuple(rng.permutation(5))
    est = PGDOrderAttack(epsilon=0.0, xi=10.0).fit(q, model=model, db=db, candidates=C,
                                                  permutation=p)
    assert not est.perturbation_.delta.any()
    assert est.tau_s_ == compute_src(C, p, rank(model, db, q))
    assert est.mean_rank_ == 2.0
    ident = PGDOrderAttack(epsilon=0.0).fit(q, model=model, db=db, candidates=C,
                                            permutation=range(5))
    assert ident.tau_s_ == 1.0


def test_whitebox_improves_correlation(standard_data, rng):
    db, model = standard_data
    taus = []
    for _ in range(8):
        q = model.preimage(db.embeddings[int(rng.integers(len(db)))])
        C = tuple(rank(model, db, q, 5))
        est = PGDOrderAttack(epsilon=8 / 255).fit(q, model=model, db=db, candidates=C,
                                                  permutation=tuple(rng.permutation(5)))
        taus.append(est.tau_s_)
        np.testing.assert_allclose(est.transform(q), q + est.perturbation_.delta)
    assert np.mean(taus) >= 0.5


def test_quantized_perturbation(standard_data):
    db, model = standard_data
    q = np.round(model.preimage(db.embeddings[10]) * 255) / 255
    C = tuple(rank(model, db, q, 5))
    est = PGDOrderAttack(epsilon=4 / 255, quantize=True).fit(q, model=model, db=db, candidates=C,
                                                             permutation=(4, 3, 2, 1, 0))
    levels = est.perturbation_.delta * 255
    np.testing.assert_allclose(levels, np.round(levels), atol=1e-9)


def test_distractor_sampling(standard_data):
    db, _ = standard_data
    C = db.ids[:5]
    a = sample_distractors(db, C, 256, np.random.default_rng(0))
    b = sample_distractors(db, C, 256, np.random.default_rng(0))
    assert a == b and len(set(a)) == 256 and not set(a) & set(C)
    assert len(sample_distractors(db, C, 10_000, np.random.default_rng(0))) == len(db) - 5


def test_mean_rank_undefined_when_candidate_escapes():
    model, db, q = swap_instance()
    est = PGDOrderAttack(epsilon=8 / 255).fit(q, model=model, db=db, candidates=("a", "b"),
                                              permutation=(1, 0), visible_range=1)
    assert est.mean_rank_ is None
    # the lower-ranked candidate is out of range, so one pair scores -1
    assert est.tau_s_ == -1.0


def test_config_validation():
    with pytest.raises(ValueError):
        WhiteboxLossConfig(xi=-1)
    with pytest.raises(ValueError):
        PgdConfig(eta=0)
    with pytest.raises(ValueError):
        PgdConfig(steps=0)


def test_pgd_attack_wrapper():
    model, db, q = swap_instance()
    spec = AttackSpec(("a", "b"), (1, 0), 8 / 255)
    res = pgd_attack(model, db, q, spec)
    assert res.tau_s == 1.0 and res.queries_used == 0 and len(res.trace) == 24
