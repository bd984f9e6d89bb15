import math

import numpy as np
import pytest

from conftest import make_kb
from kgbilinear import _kernels
from kgbilinear.kb import true_triple_index
from kgbilinear.models import ModelKind, grad, init_params, score
from kgbilinear.synthetic import clustered_kb
from kgbilinear.training import (ADAGRAD_EPS, FINAL_EPOCHS, GRID_EPOCHS, AdagradState,
                                 NegativeSamplingError, TrainConfig, TrainingDiverged,
                                 adagrad_step, grid_search, margin_loss, model_f, default_grid,
                                 read_config, sample_negative, train)


@pytest.fixture(scope="module")
def small_kb():
    return clustered_kb(n_entities=50, n_clusters=5, n_train=400, n_valid=40, n_test=40, seed=2)


def symmetric_kb(n=50, seed=0):
    rng = np.random.default_rng(seed)
    pairs = set()
    while len(pairs) < 150:
        a, b = rng.integers(n, size=2)
        if a != b:
            pairs.add((min(a, b), max(a, b)))
    rows = [(a, 0, b) for a, b in pairs] + [(b, 0, a) for a, b in pairs]
    return make_kb(rows, n_entities=n, n_relations=1)


# ---------------------------------------------------------------------------
# config

def test_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(margin=-1)
    with pytest.raises(ValueError):
        TrainConfig(lr=0)
    with pytest.raises(ValueError):
        TrainConfig(lambda_e=-0.1)
    with pytest.raises(ValueError):
        TrainConfig(dim=0)
    with pytest.raises(ValueError):
        TrainConfig(negatives_per_positive=2)


def test_large_wn18_setting_representable():
    cfg = TrainConfig("rescal", dim=200, margin=1.0, lr=0.10, lambda_e=0.10, lambda_r=0.01)
    assert cfg.model == ModelKind.RESCAL and cfg.dim == 200
    assert cfg.epochs == FINAL_EPOCHS and GRID_EPOCHS == 50


def test_config_file(tmp_path):
    path = tmp_path / "cfg.txt"
    path.write_text("# comment\nmodel = hole\ndim = 16\nmargin = 0.2\nlr=0.1\nepochs = 3\n")
    cfg = TrainConfig.from_mapping(read_config(path))
    assert (cfg.model, cfg.dim, cfg.margin, cfg.epochs) == (ModelKind.HOLE, 16, 0.2, 3)
    assert TrainConfig.from_mapping(cfg.as_dict() | {}) == cfg
    with pytest.raises(ValueError):
        TrainConfig.from_mapping({"bogus": "1"})


# ---------------------------------------------------------------------------
# negatives, loss, f

def test_sample_negative_never_in_train(small_kb):
    idx = true_triple_index(small_kb)
    rng = np.random.default_rng(0)
    for t in small_kb.train[:200].tolist():
        neg = sample_negative(small_kb, t, rng, idx)
        assert not idx.contains(*neg, scope="train")
        assert neg.relation == t[1]
        assert neg.subject == t[0] or neg.object == t[2]


def test_sample_negative_single_candidate():
    # relation 0 links every ordered pair except (0, 1)
    rows = [(i, 0, j) for i in range(2) for j in range(2) if (i, j) != (0, 1)]
    kb = make_kb(rows, n_entities=2)
    rng = np.random.default_rng(0)
    found = set()
    for t in rows:
        try:
            found.add(tuple(sample_negative(kb, t, rng)))
        except NegativeSamplingError:
            pass
    assert found <= {(0, 0, 1)}


def test_sample_negative_enumerated_set():
    kb = make_kb([(0, 0, 1)], n_entities=2)
    # perturbations of (0,0,1) by definition: subject in {0,1}, object in {0,1}
    allowed = {(e, 0, 1) for e in range(2)} | {(0, 0, e) for e in range(2)}
    allowed -= {(0, 0, 1)}
    rng = np.random.default_rng(1)
    seen = {tuple(sample_negative(kb, (0, 0, 1), rng)) for _ in range(200)}
    assert seen == allowed


def test_sample_negative_fails_when_saturated():
    rows = [(i, 0, j) for i in range(2) for j in range(2)]
    kb = make_kb(rows, n_entities=2)
    with pytest.raises(NegativeSamplingError):
        sample_negative(kb, rows[0], np.random.default_rng(0))


def test_sample_negative_side_balance():
    n = 1000
    kb = make_kb([(0, 0, 1)], n_entities=n)
    rng = np.random.default_rng(5)
    draws = 100_000
    subj = 0
    for _ in range(draws):
        neg = sample_negative(kb, (0, 0, 1), rng)
        subj += neg.object == 1 and neg.subject != 0
    # the unchanged-entity redraw has probability 1/n on each side
    p = 0.5 * (1 - 1 / n)
    assert abs(subj - draws * p) <= 3 * math.sqrt(draws * 0.25)


def test_margin_loss():
    assert margin_loss(2.0, 0.0, 1.0) == 0.0
    assert margin_loss(0.0, 0.0, 1.0) == 1.0
    assert margin_loss(1.0, 3.0, 0.5) == 2.5


def test_margin_loss_gradient_zero_iff_inactive():
    h = 1e-6
    for f_pos, f_neg, gamma in [(2.0, 0.0, 1.0), (1.2, 0.0, 1.0), (0.5, 0.0, 1.0), (0.0, 0.3, 0.2)]:
        dpos = (margin_loss(f_pos + h, f_neg, gamma) - margin_loss(f_pos - h, f_neg, gamma)) / (2 * h)
        assert (abs(dpos) < 1e-9) == (f_pos - f_neg > gamma)


def test_model_f():
    hole = init_params("hole", 3, 1, 2, seed=0)
    hole.R[...] = 0.0
    assert model_f(hole, 0, 0, 1) == 0.5
    res = init_params("rescal", 2, 1, 1, seed=0)
    res.A[...] = [[1.0], [1.0]]
    res.R[...] = 3.2
    assert model_f(res, 0, 0, 1) == 3.2
    rng = np.random.default_rng(0)
    hole = init_params("hole", 6, 1, 4, seed=1)
    for _ in range(100):
        a, b = rng.normal(size=2)
        hole.R[0] = 0.0
        hole.A[...] = 0.0
        hole.A[0, 0] = hole.A[1, 0] = 1.0
        hole.R[0, 0] = a
        fa = model_f(hole, 0, 0, 1)
        hole.R[0, 0] = b
        fb = model_f(hole, 0, 0, 1)
        assert (fa < fb) == (a < b) or a == b


# ---------------------------------------------------------------------------
# adagrad

def test_adagrad_examples():
    p = init_params("distmult", 2, 1, 2, seed=0)
    before = p.A.copy()
    state = AdagradState.zeros_like(p)
    adagrad_step(p, {"A": {0: np.array([1.0, 0.0])}}, state, eta=0.1)
    assert p.A[0, 0] == pytest.approx(before[0, 0] - 0.1 / (1 + ADAGRAD_EPS), abs=1e-15)
    assert p.A[0, 1] == before[0, 1] and state.accumulators["A"][0, 1] == 0.0
    np.testing.assert_array_equal(p.A[1], before[1])
    step1 = before[0, 0] - p.A[0, 0]
    x = p.A[0, 0]
    adagrad_step(p, {"A": {0: np.array([1.0, 0.0])}}, state, eta=0.1)
    step2 = x - p.A[0, 0]
    assert 0 < step2 < step1
    assert step2 == pytest.approx(0.1 / (math.sqrt(2) + ADAGRAD_EPS))


def test_adagrad_accumulators_monotone(rng):
    p = init_params("rescal", 4, 2, 3, seed=0)
    state = AdagradState.zeros_like(p)
    prev = {f: a.copy() for f, a in state.accumulators.items()}
    for _ in range(20):
        i, k, j = rng.integers(4), rng.integers(2), rng.integers(4)
        adagrad_step(p, grad(p, i, k, j), state, 0.05)
        for f, a in state.accumulators.items():
            assert np.all(a >= prev[f])
            prev[f] = a.copy()


@pytest.mark.parametrize("kind", list(ModelKind))
def test_kernel_step_matches_python(kind, rng):
    """The compiled SGD step equals hinge gradient + L2 + Adagrad in Python."""
    for trial in range(10):
        p = init_params(kind, 5, 2, 3, seed=trial)
        i, k, j = 0, int(rng.integers(2)), int(rng.integers(1, 5))
        ni, nj = (int(rng.integers(5)), j) if trial % 2 else (i, int(rng.integers(5)))
        gamma, eta, lam_e, lam_r = 2.0, 0.1, 0.05, 0.02
        use_sig = kind == ModelKind.HOLE

        E, W = p.pack()
        accE, accW = np.zeros_like(E) + 0.3, np.zeros_like(W) + 0.3
        loss = _kernels.sgd_step(int(kind), p.dim, E, W, accE, accW, i, k, j, ni, nj,
                                 gamma, eta, lam_e, lam_r, use_sig, ADAGRAD_EPS)

        q = p.copy()
        state = AdagradState.zeros_like(q)
        for a in state.accumulators.values():
            a += 0.3
        sig = lambda s: 1 / (1 + math.exp(-s))
        sp, sn = score(q, i, k, j), score(q, ni, k, nj)
        fp, fn = (sig(sp), sig(sn)) if use_sig else (sp, sn)
        dp = fp * (1 - fp) if use_sig else 1.0
        dn = fn * (1 - fn) if use_sig else 1.0
        expected_loss = max(0.0, fn + gamma - fp)
        assert loss == pytest.approx(expected_loss, abs=1e-12)
        total = {f: {} for f in q.fields}
        if expected_loss > 0:
            for coef, g in ((-dp, grad(q, i, k, j)), (dn, grad(q, ni, k, nj))):
                for f, rows in g.items():
                    for row, val in rows.items():
                        total[f][row] = total[f].get(row, 0) + coef * val
        for f in q.fields:
            lam = lam_e if f in q.entity_fields else lam_r
            rows = {i, j, ni, nj} if f in q.entity_fields else {k}
            for row in rows:
                total[f][row] = total[f].get(row, 0) + lam * getattr(q, f)[row]
        adagrad_step(q, total, state, eta)
        E2, W2 = q.pack()
        np.testing.assert_allclose(E, E2, atol=1e-12)
        np.testing.assert_allclose(W, W2, atol=1e-12)


# ---------------------------------------------------------------------------
# training loop

def test_zero_epochs_returns_init(small_kb):
    cfg = TrainConfig("transe", dim=8, margin=0.0, epochs=0, seed=3)
    res = train(small_kb, cfg)
    init = init_params("transe", small_kb.n_entities, small_kb.n_relations, 8, 3)
    for a, b in zip(res.params.arrays(), init.arrays()):
        np.testing.assert_array_equal(a, b)
    assert res.losses == []


@pytest.mark.parametrize("kind", list(ModelKind))
def test_training_deterministic(kind, small_kb):
    cfg = TrainConfig(kind, dim=6, margin=0.5, lr=0.05, lambda_e=0.01, lambda_r=0.01,
                      epochs=3, seed=11)
    a, b = train(small_kb, cfg), train(small_kb, cfg)
    for x, y in zip(a.params.arrays(), b.params.arrays()):
        np.testing.assert_array_equal(x, y)
    assert a.losses == b.losses
    c = train(small_kb, TrainConfig(kind, dim=6, margin=0.5, lr=0.05, epochs=3, seed=12))
    assert not np.array_equal(a.params.arrays()[0], c.params.arrays()[0])


def test_distmult_loss_decreases_on_symmetric_kb():
    kb = symmetric_kb()
    res = train(kb, TrainConfig("distmult", dim=10, margin=1.0, lr=0.1, epochs=20, seed=0))
    losses = np.array(res.losses)
    assert len(losses) == 20
    assert losses[-1] < losses[0]
    slope = np.polyfit(np.arange(20), losses, 1)[0]
    assert slope < 0


def test_fixed_point_when_margins_satisfied():
    # gamma = 0 and positives already outscore every negative
    kb = make_kb([(0, 0, 1)], n_entities=3)
    p = init_params("distmult", 3, 1, 1, seed=0)
    p.A[...] = [[1.0], [1.0], [-1.0]]
    p.R[...] = 1.0
    # f(0,0,1) = 1; every perturbation scores -1 or 1 (ties give zero hinge at gamma = 0)
    res = train(kb, TrainConfig("distmult", dim=1, margin=0.0, lr=0.1, epochs=5, seed=0), init=p)
    for a, b in zip(res.params.arrays(), p.arrays()):
        np.testing.assert_array_equal(a, b)
    assert max(res.losses) == 0.0


def test_training_negative_sampling_failure():
    rows = [(i, 0, j) for i in range(2) for j in range(2)]
    kb = make_kb(rows, n_entities=2)
    with pytest.raises(NegativeSamplingError):
        train(kb, TrainConfig("distmult", dim=2, epochs=1))


def test_divergence_detected(small_kb):
    with pytest.raises(TrainingDiverged):
        train(small_kb, TrainConfig("rescal", dim=8, margin=1.0, lr=1e300, epochs=5, seed=0))


# ---------------------------------------------------------------------------
# grid search

def test_grid_single_config(small_kb):
    cfg = TrainConfig("distmult", dim=4, epochs=1)
    best, scores = grid_search(small_kb, [cfg], budget_epochs=2)
    assert best is cfg and len(scores) == 1


def test_grid_diverging_config_loses(small_kb):
    good = TrainConfig("hole", dim=8, margin=0.2, lr=0.1, epochs=1)
    bad = TrainConfig("rescal", dim=8, margin=1.0, lr=1e300, epochs=1)
    best, scores = grid_search(small_kb, [bad, good], budget_epochs=3)
    assert best is good
    assert scores[0] == -np.inf


def test_grid_ties_go_to_first(small_kb):
    grid = [TrainConfig("distmult", dim=4, seed=s) for s in range(3)]
    best, _ = grid_search(small_kb, grid, budget_epochs=1, metric=lambda p: 1.0)
    assert best is grid[0]


def test_default_grid_shape():
    grid = default_grid("hole")
    assert {c.dim for c in grid} == {100, 200}
    assert {c.lr for c in grid} == {0.01, 0.1, 1.0}
    assert {c.lambda_e for c in grid} == {0.0, 0.1, 0.01}
    assert len(grid) == 2 * 3 * 3 * 3 * len({c.margin for c in grid})
    assert all(c.epochs == GRID_EPOCHS for c in grid)
    assert all(c.epochs == FINAL_EPOCHS for c in default_grid("transe"))
