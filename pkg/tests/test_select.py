import io

import numpy as np
import pytest

from psrbasis.core import EMPTY, seq
from psrbasis.entropy import EntropyConfig, EntropyEvaluator
from psrbasis.env import simulate_dataset
from psrbasis.hankel import WindowCounter, build_histories, candidate_pool, estimate
from psrbasis.select import (InsufficientCandidates, SelectionConfig, basis_hash, bound_search,
                             entropy_search, max_operator_singular_value, paper_threshold,
                             random_basis)
from psrbasis.spectral import learn


@pytest.fixture(scope="module")
def two_state_data():
    from psrbasis.env import make_builtin
    model = make_builtin("two-state-noisy")
    data = simulate_dataset(model, 20_000, seed=1)
    return model, data


def test_config_invariants():
    with pytest.raises(ValueError):
        SelectionConfig(k=5, n=5)
    with pytest.raises(ValueError):
        SelectionConfig(k=5, n=1, entropy_threshold=0)
    with pytest.raises(ValueError):
        SelectionConfig(k=5, n=1, rounds=0)
    cfg = SelectionConfig()
    assert (cfg.k, cfg.n, cfg.rounds, cfg.iter_num) == (100, 20, 10, 10)


def test_paper_thresholds():
    assert [paper_threshold(k) for k in (100, 150, 200, 250, 300)] == [0.06, 0.06, 0.04, 0.04, 0.02]


def test_random_basis(two_state_data):
    _, data = two_state_data
    pool = candidate_pool(data, 2, 10)
    full = random_basis(data, len(pool), 2, seed=0)
    assert set(full.tests) == set(pool)
    a = random_basis(data, 20, 3, seed=4)
    assert a == random_basis(data, 20, 3, seed=4)
    assert len(set(a.tests)) == 20
    c = WindowCounter(data)
    for t in a.tests:
        assert c.count(t) > 0
    with pytest.raises(InsufficientCandidates):
        random_basis(data, len(pool) + 1, 2, seed=0)


def test_no_improvement_keeps_init(two_state_data):
    model, data = two_state_data
    init = random_basis(data, 6, 2, seed=1)
    cfg = SelectionConfig(k=6, n=2, rounds=3, iter_num=2, entropy_threshold=1e6,
                          candidate_max_len=2, seed=0)
    basis, trace = entropy_search(model, data, init, cfg, EntropyConfig(300, 20, seed=0))
    assert basis == init
    assert trace.accepted() == []
    assert len(trace.records) == 6


def _discipline(trace, cfg):
    for rec in trace.records:
        assert not set(rec.sampled) & set(rec.incumbent)
        assert set(rec.removed) <= set(rec.incumbent)
        assert len(rec.sampled) == len(rec.removed) == cfg.n
    objective = trace.initial_objective
    for rec in trace.records:
        if rec.accepted:
            assert objective - rec.objective > cfg.entropy_threshold
            objective = rec.objective
    assert all(len(b.tests) == cfg.k and len(set(b.tests)) == cfg.k for b in trace.round_bases)


def test_search_discipline_and_reproducibility(two_state_data):
    model, data = two_state_data
    init = random_basis(data, 8, 3, seed=2, histories=(EMPTY, seq((0, 0))))
    cfg = SelectionConfig(k=8, n=2, rounds=4, iter_num=3, entropy_threshold=0.02,
                          candidate_max_len=3, seed=9)
    ecfg = EntropyConfig(400, 30, seed=1)
    b1, t1 = entropy_search(model, data, init, cfg, ecfg)
    b2, t2 = entropy_search(model, data, init, cfg, ecfg)
    assert b1 == b2 and t1.records == t2.records
    assert len(b1.tests) == 8 and b1.histories == init.histories
    _discipline(t1, cfg)
    assert t1.accepted(), "expected at least one accepted swap in this configuration"
    buf1, buf2 = io.StringIO(), io.StringIO()
    t1.write_csv(buf1)
    t2.write_csv(buf2)
    assert buf1.getvalue() == buf2.getvalue()
    assert buf1.getvalue().splitlines()[0] == "round,iteration,objective,accepted,basis_hash"


def test_break_on_first_acceptance(two_state_data):
    model, data = two_state_data
    init = random_basis(data, 8, 3, seed=5)
    cfg = SelectionConfig(k=8, n=2, rounds=5, iter_num=4, entropy_threshold=1e-9,
                          candidate_max_len=3, seed=3)
    _, trace = entropy_search(model, data, init, cfg, EntropyConfig(300, 20, seed=4))
    for rnd in range(1, 6):
        recs = [r for r in trace.records if r.round == rnd]
        assert sum(r.accepted for r in recs) <= 1
        if any(r.accepted for r in recs):
            assert recs[-1].accepted


def test_bound_search_one_state(forced):
    data = simulate_dataset(forced, 2000, seed=0)
    init = random_basis(data, 3, 2, seed=0)
    cfg = SelectionConfig(k=3, n=1, rounds=3, iter_num=3, candidate_max_len=2, seed=0)
    basis, trace = bound_search(forced, data, init, cfg, rank=1)
    assert basis == init
    assert trace.initial_objective == pytest.approx(1.0)
    assert all(r.objective == pytest.approx(1.0) for r in trace.records)
    assert not trace.accepted()


def test_bound_objective_matches_direct_svd(two_state_data):
    _, data = two_state_data
    hists = tuple(build_histories(data, 1, 5))
    values = []
    for seed in (0, 1):
        basis = random_basis(data, 6, 2, seed=seed, histories=hists)
        est = estimate(data, basis)
        psr = learn(est, 2)
        direct = max(np.linalg.svd(psr.B[a, o], compute_uv=False)[0]
                     for a in range(2) for o in range(2))
        obj = max_operator_singular_value(est, 2)
        assert obj == pytest.approx(direct, rel=1e-12)
        values.append((obj, direct))
    assert (values[0][0] < values[1][0]) == (values[0][1] < values[1][1])


def test_bound_search_acceptance_margin(two_state_data):
    model, data = two_state_data
    hists = tuple(build_histories(data, 1, 5))
    init = random_basis(data, 6, 2, seed=3, histories=hists)
    cfg = SelectionConfig(k=6, n=2, rounds=4, iter_num=4, candidate_max_len=2, seed=1)
    _, trace = bound_search(model, data, init, cfg, rank=2)
    value = trace.initial_objective
    for rec in trace.records:
        if rec.accepted:
            assert value - rec.objective > cfg.bound_margin
            value = rec.objective


def test_basis_hash_order_free():
    t = [seq((0, 0)), seq((1, 1))]
    assert basis_hash(t) == basis_hash(t[::-1])
    assert basis_hash(t) != basis_hash(t[:1])


def test_shared_evaluator(two_state_data):
    model, data = two_state_data
    ev = EntropyEvaluator(model, EntropyConfig(300, 20, seed=0))
    init = random_basis(data, 5, 2, seed=0)
    cfg = SelectionConfig(k=5, n=1, rounds=2, iter_num=2, candidate_max_len=2, seed=0,
                          entropy_threshold=0.01)
    b, t = entropy_search(model, data, init, cfg, evaluator=ev)
    assert t.initial_objective == ev(init.tests)
