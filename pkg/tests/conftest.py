import itertools

import numpy as np
import pytest

from psrbasis.env import Pomdp, make_builtin


def brute_force_probability(model, s, belief=None):
    """Sum over every latent state path; independent of belief propagation."""
    b0 = model.initial_belief if belief is None else belief
    n = model.num_states
    paths = np.array(list(itertools.product(range(n), repeat=len(s) + 1)), dtype=int)
    weight = b0[paths[:, 0]]
    for i, (a, o) in enumerate(s):
        weight = weight * model.transition[a][paths[:, i], paths[:, i + 1]]
        weight = weight * model.emission[a][paths[:, i + 1], o]
    return float(weight.sum())


def power_iteration_stationary(model, iters=10_000):
    P = model.transition.mean(axis=0)
    pi = np.full(model.num_states, 1.0 / model.num_states)
    for _ in range(iters):
        pi = pi @ P
    return pi


@pytest.fixture
def two_state():
    return make_builtin("two-state-noisy")


@pytest.fixture
def random523():
    return make_builtin("random-pomdp-5-2-3", 7)


@pytest.fixture
def ring():
    return make_builtin("ring-world")


@pytest.fixture
def forced():
    """One latent state, two actions; always emits observation 0 of 2."""
    T = np.ones((2, 1, 1))
    Z = np.zeros((2, 1, 2))
    Z[:, 0, 0] = 1.0
    return Pomdp(T, Z, [1.0], name="forced")


SMALL_FIXTURES = ["two-state-noisy", "random-pomdp-5-2-3", "ring-world"]


def fixture_model(name):
    return make_builtin(name, 7)


def exact_limit_model(model, test_len=2, hist_len=2):
    """PSR learned from the noise-free Hankel blocks at the true linear dimension."""
    from psrbasis.hankel import enumerated_basis, exact_hankel
    from psrbasis.spectral import learn

    est = exact_hankel(model, enumerated_basis(model, test_len, hist_len))
    s = np.linalg.svd(est.p_th, compute_uv=False)
    return learn(est, int((s > 1e-10 * s[0]).sum()))


ACCEPTANCE_LINES = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
