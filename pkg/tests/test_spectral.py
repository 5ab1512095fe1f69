import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from psrbasis.core import EMPTY, enumerate_tests, seq
from psrbasis.env import belief_after, exact_prediction, simulate
from psrbasis.hankel import Basis, enumerated_basis, exact_hankel
from psrbasis.spectral import (DegenerateUpdate, DimensionMismatch, RankDeficient, dump_model,
                               filter_step, learn, load_model, multi_step_prediction, pinv,
                               sequence_probability, top_left_singular)

from conftest import SMALL_FIXTURES, brute_force_probability, exact_limit_model, fixture_model


@pytest.fixture(scope="module")
def exact_two_state():
    return exact_limit_model(fixture_model("two-state-noisy"))


def test_exact_two_state_one_step(exact_two_state):
    m = fixture_model("two-state-noisy")
    assert exact_two_state.rank == 2
    rng = np.random.default_rng(1)
    for _ in range(100):
        h = simulate(m, int(rng.integers(1, 30)), int(rng.integers(1 << 30)))
        state = exact_two_state.initial_state()
        for a, o in h:
            state, _ = filter_step(exact_two_state, state, a, o)
        a, o = int(rng.integers(2)), int(rng.integers(2))
        _, p_hat = filter_step(exact_two_state, state, a, o)
        assert p_hat == pytest.approx(exact_prediction(m, h, seq((a, o))), abs=1e-8)


def test_one_state_system(forced):
    psr = exact_limit_model(forced)
    assert psr.rank == 1
    for s in (seq((0, 0)), seq((1, 0), (0, 0), (1, 0))):
        assert sequence_probability(psr, s) == pytest.approx(1.0, abs=1e-10)
    state, p = filter_step(psr, psr.initial_state(), 0, 0)
    assert p == pytest.approx(1.0, abs=1e-10)
    assert state == pytest.approx(psr.initial_state())
    assert multi_step_prediction(psr, psr.initial_state(), seq((0, 0),) * 4) == pytest.approx(1.0, abs=1e-8)


def test_rank_deficient_warns(two_state):
    est = exact_hankel(two_state, enumerated_basis(two_state, 2, 1))
    with pytest.warns(RankDeficient):
        psr = learn(est, 3)
    assert psr.rank == 2


def test_dimension_checks(two_state):
    est = exact_hankel(two_state, enumerated_basis(two_state, 1, 1))
    with pytest.raises(DimensionMismatch):
        learn(est, 0)
    with pytest.raises(DimensionMismatch):
        learn(est, 10)
    no_eps = exact_hankel(two_state, Basis(tuple(enumerate_tests(1, 2, 2)), (seq((0, 0)), seq((0, 1)))))
    with pytest.raises(DimensionMismatch):
        learn(no_eps, 1)


def test_U_orthonormal(exact_two_state):
    U = exact_two_state.U
    assert np.abs(U.T @ U - np.eye(U.shape[1])).max() <= 1e-10


def test_sign_convention():
    rng = np.random.default_rng(0)
    a = rng.normal(size=(8, 5))
    U, _ = top_left_singular(a, 3)
    U2, _ = top_left_singular(-a, 3)
    assert np.allclose(U, U2)
    for j in range(3):
        assert U[np.argmax(np.abs(U[:, j])), j] > 0


def test_empty_sequence(exact_two_state):
    assert sequence_probability(exact_two_state, EMPTY) == pytest.approx(1.0, abs=1e-8)


@pytest.mark.parametrize("name", SMALL_FIXTURES)
def test_observation_sum_and_ratio(name):
    m = fixture_model(name)
    psr = exact_limit_model(m)
    h = simulate(m, 6, 2)
    state = psr.initial_state()
    for a, o in h:
        state, _ = filter_step(psr, state, a, o)
    for a in range(m.num_actions):
        probs = []
        for o in range(m.num_obs):
            try:
                _, p = filter_step(psr, state, a, o)
            except DegenerateUpdate:
                p = multi_step_prediction(psr, state, seq((a, o)))
            probs.append(p)
            ratio = sequence_probability(psr, h + seq((a, o))) / sequence_probability(psr, h)
            assert p == pytest.approx(ratio, abs=1e-8)
        assert sum(probs) == pytest.approx(1.0, abs=1e-8)


def test_length3_brute_force(exact_two_state):
    m = fixture_model("two-state-noisy")
    for s in enumerate_tests(3, 2, 2)[-8:]:
        assert sequence_probability(exact_two_state, s) == pytest.approx(
            brute_force_probability(m, s), abs=1e-8)


def test_four_step_chain(exact_two_state):
    m = fixture_model("two-state-noisy")
    s = simulate(m, 10, 3)
    state = exact_two_state.initial_state()
    for a, o in s[:6]:
        state, _ = filter_step(exact_two_state, state, a, o)
    future = s[6:10]
    chained, st_ = 1.0, state
    for a, o in future:
        st_, p = filter_step(exact_two_state, st_, a, o)
        chained *= p
    assert multi_step_prediction(exact_two_state, state, future) == pytest.approx(chained, abs=1e-8)
    _, p1 = filter_step(exact_two_state, state, *future[0])
    assert multi_step_prediction(exact_two_state, state, future[:1]) == pytest.approx(p1, abs=1e-15)


def test_degenerate_update():
    from psrbasis.spectral import PsrModel
    B = np.zeros((1, 2, 1, 1))
    B[0, 0] = 1.0
    psr = PsrModel(np.ones(1), np.ones(1), B, np.ones((1, 1)), Basis((seq((0, 0)),)))
    with pytest.raises(DegenerateUpdate):
        filter_step(psr, psr.initial_state(), 0, 1)


@pytest.mark.parametrize("name", SMALL_FIXTURES)
def test_consistency_at_exact_limit(name):
    m = fixture_model(name)
    psr = exact_limit_model(m)
    seqs = enumerate_tests(4, m.num_actions, m.num_obs)
    rng = np.random.default_rng(0)
    for i in rng.choice(len(seqs), 60, replace=False):
        s = seqs[i]
        split = int(rng.integers(0, len(s)))
        h, t = s[:split], s[split:]
        try:
            belief_after(m, h)
        except ValueError:
            continue
        p_h = sequence_probability(psr, h)
        assert sequence_probability(psr, h + t) / p_h == pytest.approx(exact_prediction(m, h, t), abs=1e-7)


def test_normalization_diagnostic(exact_two_state):
    assert exact_two_state.normalization_deviation() < 1e-8


@settings(max_examples=50, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_pinv_property(seed):
    a = np.random.default_rng(seed).normal(size=(20, 30))
    assert np.abs(a @ pinv(a) @ a - a).max() <= 1e-10


def test_pinv_rank_deficient():
    rng = np.random.default_rng(3)
    a = rng.normal(size=(6, 2)) @ rng.normal(size=(2, 5))
    ap = pinv(a)
    assert np.abs(a @ ap @ a - a).max() <= 1e-10
    assert np.abs(ap @ a @ ap - ap).max() <= 1e-10


def test_model_dump_roundtrip(tmp_path, exact_two_state):
    dump_model(exact_two_state, tmp_path / "m.txt")
    back = load_model(tmp_path / "m.txt")
    assert back.basis == exact_two_state.basis
    for name in ("b_star", "b_inf", "B", "U"):
        assert np.array_equal(getattr(back, name), getattr(exact_two_state, name))


def test_learn_is_deterministic(two_state):
    est = exact_hankel(two_state, enumerated_basis(two_state, 2, 2))
    with warnings.catch_warnings():
        warnings.simplefilter("error")
        a, b = learn(est, 2), learn(est, 2)
    assert np.array_equal(a.B, b.B) and np.array_equal(a.b_inf, b.b_inf)
