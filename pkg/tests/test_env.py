import numpy as np
import pytest

from psrbasis.core import EMPTY, enumerate_tests, seq
from psrbasis.env import (Pomdp, UndefinedConditional, UnknownEnvironment, belief_after,
                          belief_update, exact_prediction, load_pomdp, make_builtin,
                          rollout_prediction, save_pomdp, simulate, simulate_arrays)

from conftest import SMALL_FIXTURES, brute_force_probability, fixture_model, power_iteration_stationary


def test_builtin_invariants():
    for name in SMALL_FIXTURES + ["mini-grid"]:
        m = make_builtin(name, 7)
        assert np.allclose(m.transition.sum(axis=2), 1, atol=1e-12)
        assert np.allclose(m.emission.sum(axis=2), 1, atol=1e-12)
        assert abs(m.initial_belief.sum() - 1) <= 1e-12


def test_builtin_shapes():
    m = make_builtin("random-pomdp-5-2-3", 7)
    assert (m.num_states, m.num_actions, m.num_obs) == (5, 2, 3)
    assert np.array_equal(m.transition, make_builtin("random-pomdp-5-2-3", 7).transition)
    assert not np.array_equal(m.transition, make_builtin("random-pomdp-5-2-3", 8).transition)
    assert make_builtin("mini-grid").num_obs == 16
    two = make_builtin("two-state-noisy", 123)
    assert (two.num_states, two.num_actions, two.num_obs) == (2, 2, 2)
    with pytest.raises(UnknownEnvironment):
        make_builtin("pocman")


def test_invalid_pomdp_rejected():
    with pytest.raises(ValueError):
        Pomdp(np.ones((1, 2, 2)), np.full((1, 2, 2), 0.5), [0.5, 0.5])


def test_simulate_forced(forced):
    s = simulate(forced, 3, seed=1)
    assert len(s) == 3
    assert all(o == 0 for _, o in s)
    assert simulate(forced, 3, seed=1) == s


def test_simulate_deterministic(two_state):
    assert simulate(two_state, 50, 4) == simulate(two_state, 50, 4)
    assert simulate(two_state, 50, 4) != simulate(two_state, 50, 5)


def test_observation_frequencies_match_stationary(two_state):
    # stationary state distribution by power iteration, pushed through the emissions
    pi = power_iteration_stationary(two_state)
    expected = 0.5 * sum(pi @ two_state.emission[a] for a in range(2))
    acts, obs, _ = simulate_arrays(two_state, 100_000, seed=11)
    freq = np.bincount(obs, minlength=2) / len(obs)
    assert np.abs(freq - expected).max() < 0.01


def test_exact_prediction_trivial(forced, two_state):
    assert exact_prediction(forced, seq((1, 0), (0, 0)), seq((0, 0))) == 1.0
    assert exact_prediction(two_state, seq((0, 1)), EMPTY) == 1.0


@pytest.mark.parametrize("name", SMALL_FIXTURES)
def test_exact_prediction_matches_brute_force(name):
    m = fixture_model(name)
    rng = np.random.default_rng(0)
    tests = enumerate_tests(2, m.num_actions, m.num_obs)
    for _ in range(20):
        h = simulate(m, int(rng.integers(0, 4)) + 1, int(rng.integers(1 << 30)))
        t = tests[int(rng.integers(len(tests)))]
        expected = brute_force_probability(m, h + t) / brute_force_probability(m, h)
        assert exact_prediction(m, h, t) == pytest.approx(expected, abs=1e-12)


def test_two_state_first_step(two_state):
    # h = eps, t = <a0, o1>: sum over the two start states and two next states
    expected = brute_force_probability(two_state, seq((0, 1)))
    assert exact_prediction(two_state, EMPTY, seq((0, 1))) == pytest.approx(expected, abs=1e-15)


def test_undefined_conditional(ring):
    # the landmark cannot be seen twice in a row when moving clockwise
    with pytest.raises(UndefinedConditional):
        exact_prediction(ring, seq((0, 1), (0, 1)), seq((0, 0)))


@pytest.mark.parametrize("name", SMALL_FIXTURES)
def test_observation_sum(name):
    m = fixture_model(name)
    h = simulate(m, 7, 3)
    for a in range(m.num_actions):
        total = sum(exact_prediction(m, h, seq((a, o))) for o in range(m.num_obs))
        assert total == pytest.approx(1.0, abs=1e-9)


def test_belief_normalized(random523):
    b = random523.initial_belief
    for a, o in simulate(random523, 200, 9):
        b, p = belief_update(random523, b, a, o)
        assert abs(b.sum() - 1) <= 1e-9
        assert p > 0


def test_rollout_forced(forced):
    for n in (1, 100):
        assert rollout_prediction(forced, 0, seq((0, 0), (1, 0)), n, seed=2) == 1.0


@pytest.mark.parametrize("name", ["two-state-noisy", "random-pomdp-5-2-3"])
def test_rollout_converges_to_exact(name):
    m = fixture_model(name)
    N = 100_000
    rng = np.random.default_rng(42)
    tests = enumerate_tests(2, m.num_actions, m.num_obs)
    for i in range(20):
        h = simulate(m, int(rng.integers(1, 6)), int(rng.integers(1 << 30)))
        t = tests[int(rng.integers(len(tests)))]
        b, _ = belief_after(m, h)
        p = exact_prediction(m, h, t)
        est = rollout_prediction(m, b, t, N, seed=1000 + i)
        assert abs(est - p) <= 4 * np.sqrt(p * (1 - p) / N) + 1e-12


def test_rollout_paper_setting_runs(two_state):
    est = rollout_prediction(two_state, two_state.initial_belief, seq((0, 0)), 100, seed=0)
    assert 0.0 <= est <= 1.0 and abs(est * 100 - round(est * 100)) < 1e-9


def test_pomdp_file_roundtrip(tmp_path, random523):
    path = tmp_path / "m.json"
    save_pomdp(random523, path)
    back = load_pomdp(path)
    assert np.array_equal(back.transition, random523.transition)
    assert np.array_equal(back.emission, random523.emission)
    assert np.array_equal(back.initial_belief, random523.initial_belief)
    save_pomdp(back, tmp_path / "again.json")
    assert (tmp_path / "again.json").read_bytes() == path.read_bytes()
