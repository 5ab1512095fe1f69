"""Ground-truth POMDPs: simulation, exact prediction and rollout oracles.

Conventions
-----------
``transition[a][s, s']`` is the probability of moving from ``s`` to ``s'``
under action ``a``; ``emission[a][s', o]`` is the probability of observing
``o`` after action ``a`` has landed the system in ``s'``. Data is always
generated by the uniform-random action policy, and predictions condition
on actions: only observation factors enter a probability.
"""
from __future__ import annotations

import bisect
import json
import re
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import ActionObs, Sequence, TrajectoryDataset, check_seq

ROW_TOL = 1e-12


class UndefinedConditional(ValueError):
    """Raised when conditioning on a history of probability zero."""


class UnknownEnvironment(KeyError):
    pass


@dataclass(frozen=True, eq=False)
class Pomdp:
    transition: np.ndarray
    emission: np.ndarray
    initial_belief: np.ndarray
    name: str = "pomdp"

    def __post_init__(self):
        T = np.array(self.transition, dtype=float)
        Z = np.array(self.emission, dtype=float)
        b0 = np.array(self.initial_belief, dtype=float)
        if T.ndim != 3 or T.shape[1] != T.shape[2]:
            raise ValueError("transition must have shape (|A|, n, n)")
        if Z.ndim != 3 or Z.shape[:2] != T.shape[:2]:
            raise ValueError("emission must have shape (|A|, n, |O|)")
        if b0.shape != (T.shape[1],):
            raise ValueError("initial_belief must have length n")
        for name, arr in (("transition", T), ("emission", Z)):
            if (arr < 0).any():
                raise ValueError(f"{name} has negative entries")
            if np.abs(arr.sum(axis=2) - 1.0).max() > ROW_TOL:
                raise ValueError(f"{name} rows must sum to 1")
        if (b0 < 0).any() or abs(b0.sum() - 1.0) > ROW_TOL:
            raise ValueError("initial_belief must be a probability vector")
        for arr in (T, Z, b0):
            arr.flags.writeable = False
        object.__setattr__(self, "transition", T)
        object.__setattr__(self, "emission", Z)
        object.__setattr__(self, "initial_belief", b0)

    @property
    def num_states(self) -> int:
        return self.transition.shape[1]

    @property
    def num_actions(self) -> int:
        return self.transition.shape[0]

    @property
    def num_obs(self) -> int:
        return self.emission.shape[2]

    def __repr__(self):
        return (f"Pomdp({self.name!r}, states={self.num_states}, "
                f"actions={self.num_actions}, obs={self.num_obs})")


# ---------------------------------------------------------------------------
# exact belief propagation


def observation_probs(model: Pomdp, belief: np.ndarray, action: int) -> np.ndarray:
    """Distribution over the next observation given ``action`` from ``belief``."""
    return (belief @ model.transition[action]) @ model.emission[action]


def belief_update(model: Pomdp, belief: np.ndarray, action: int, obs: int):
    """Bayes filter step. Returns ``(new_belief, p(obs | belief, action))``."""
    unnorm = (belief @ model.transition[action]) * model.emission[action][:, obs]
    p = unnorm.sum()
    if p <= 0.0:
        return None, 0.0
    return unnorm / p, float(p)


def likelihood_from(model: Pomdp, belief: np.ndarray, s: Sequence) -> float:
    """Probability of ``s``'s observations given its actions, starting at ``belief``."""
    v = np.asarray(belief, dtype=float)
    for a, o in s:
        v = (v @ model.transition[a]) * model.emission[a][:, o]
    return float(v.sum())


def belief_after(model: Pomdp, h: Sequence, belief=None):
    """Return ``(belief at h, p(h))``; raises if ``p(h) = 0``."""
    b = model.initial_belief if belief is None else np.asarray(belief, dtype=float)
    ph = 1.0
    for a, o in h:
        b, p = belief_update(model, b, a, o)
        if b is None:
            raise UndefinedConditional(f"history has zero probability at pair a{a}o{o}")
        ph *= p
    return b, ph


def exact_prediction(model: Pomdp, h: Sequence, t: Sequence) -> float:
    """Exact ``p(t | h)``."""
    check_seq(h, model.num_actions, model.num_obs)
    check_seq(t, model.num_actions, model.num_obs)
    b, _ = belief_after(model, h)
    return likelihood_from(model, b, t)


def beliefs_along(model: Pomdp, actions, observations, belief=None) -> np.ndarray:
    """Beliefs after each step of a trajectory, shape ``(len, n)``."""
    b = model.initial_belief if belief is None else np.asarray(belief, dtype=float)
    out = np.empty((len(actions), model.num_states))
    for i, (a, o) in enumerate(zip(actions, observations)):
        b, _ = belief_update(model, b, int(a), int(o))
        if b is None:
            raise UndefinedConditional(f"trajectory has zero probability at step {i}")
        out[i] = b
    return out


def stationary_distribution(model: Pomdp) -> np.ndarray:
    """Stationary state distribution of the chain driven by the uniform policy."""
    P = model.transition.mean(axis=0)
    n = P.shape[0]
    # solve pi (P - I) = 0 with sum(pi) = 1 in the least-squares sense
    A = np.vstack([P.T - np.eye(n), np.ones((1, n))])
    rhs = np.zeros(n + 1)
    rhs[-1] = 1.0
    pi, *_ = np.linalg.lstsq(A, rhs, rcond=None)
    pi = np.clip(pi, 0.0, None)
    return pi / pi.sum()


# ---------------------------------------------------------------------------
# simulation


def _cumulative_rows(mat: np.ndarray) -> list:
    rows = []
    for r in mat:
        c = np.cumsum(r)
        c[-1] = 1.0
        rows.append(c.tolist())
    return rows


def simulate_arrays(model: Pomdp, length: int, seed: int):
    """Sample one uniform-policy trajectory.

    Returns ``(actions, observations, states)`` as int arrays where
    ``states[i]`` is the latent state reached at step ``i``.
    """
    if length < 1:
        raise ValueError("length must be >= 1")
    rng = np.random.default_rng(seed)
    acts = rng.integers(model.num_actions, size=length)
    u = rng.random((length, 2))
    s0 = rng.random()
    cum_t = [_cumulative_rows(model.transition[a]) for a in range(model.num_actions)]
    cum_z = [_cumulative_rows(model.emission[a]) for a in range(model.num_actions)]
    n, m = model.num_states - 1, model.num_obs - 1
    b0 = np.cumsum(model.initial_belief)
    s = min(int(np.searchsorted(b0, s0, side="right")), n)
    states = np.empty(length, dtype=np.int64)
    obs = np.empty(length, dtype=np.int64)
    for i, (a, (ut, uz)) in enumerate(zip(acts.tolist(), u.tolist())):
        s = min(bisect.bisect_right(cum_t[a][s], ut), n)
        o = min(bisect.bisect_right(cum_z[a][s], uz), m)
        states[i] = s
        obs[i] = o
    return acts.astype(np.int64), obs, states


def simulate(model: Pomdp, length: int, seed: int) -> Sequence:
    acts, obs, _ = simulate_arrays(model, length, seed)
    return tuple(ActionObs(int(a), int(o)) for a, o in zip(acts, obs))


def simulate_dataset(model: Pomdp, length: int, seed: int,
                     num_trajectories: int = 1) -> TrajectoryDataset:
    seeds = np.random.SeedSequence(seed).spawn(num_trajectories)
    acts, obs = [], []
    for ss in seeds:
        a, o, _ = simulate_arrays(model, length, ss.generate_state(1)[0])
        acts.append(a)
        obs.append(o)
    return TrajectoryDataset(tuple(acts), tuple(obs), model.num_actions,
                             model.num_obs, seed)


# ---------------------------------------------------------------------------
# Monte-Carlo rollouts


def _sample_rows(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    # cum: (..., k) cumulative rows, u: (...) uniforms; inverse-CDF per entry
    idx = (cum < u[..., None]).sum(axis=-1)
    return np.minimum(idx, cum.shape[-1] - 1)


def rollout_frequencies(model: Pomdp, beliefs: np.ndarray, t: Sequence,
                        num_rollouts: int, rng: np.random.Generator) -> np.ndarray:
    """Rollout estimates of ``p(t | .)`` for a batch of environment states.

    ``beliefs`` has shape ``(K, n)``; for each row, ``num_rollouts`` latent
    start states are drawn from it, ``t``'s actions are forced, and the
    fraction of rollouts reproducing ``t``'s observations is returned.
    """
    beliefs = np.atleast_2d(np.asarray(beliefs, dtype=float))
    K = beliefs.shape[0]
    if num_rollouts < 1:
        raise ValueError("num_rollouts must be >= 1")
    if not t:
        return np.ones(K)
    states = _sample_rows(np.cumsum(beliefs, axis=1)[:, None, :],
                          rng.random((K, num_rollouts)))
    alive = np.ones((K, num_rollouts), dtype=bool)
    cum_t = np.cumsum(model.transition, axis=2)
    cum_z = np.cumsum(model.emission, axis=2)
    for a, o in t:
        states = _sample_rows(cum_t[a][states], rng.random(states.shape))
        obs = _sample_rows(cum_z[a][states], rng.random(states.shape))
        alive &= obs == o
    return alive.mean(axis=1)


def rollout_prediction(model: Pomdp, env_state, t: Sequence, num_rollouts: int,
                       seed: int) -> float:
    """Monte-Carlo estimate of ``p(t | h)`` from the environment state at ``h``.

    ``env_state`` is either a belief vector over latent states or a single
    latent state index.
    """
    state = np.asarray(env_state)
    if state.ndim == 0:
        b = np.zeros(model.num_states)
        b[int(state)] = 1.0
    else:
        b = state.astype(float)
    rng = np.random.default_rng(seed)
    return float(rollout_frequencies(model, b[None, :], t, num_rollouts, rng)[0])


# ---------------------------------------------------------------------------
# built-in environments

MINI_GRID_LAYOUT = (
    "######",
    "#...##",
    "#.#..#",
    "#....#",
    "######",
)


def two_state_noisy() -> Pomdp:
    """Two hidden states, two actions, two observations.

    action 0 ("stay"):  T = [[.9, .1], [.1, .9]],  Z = [[.85, .15], [.15, .85]]
    action 1 ("flip"):  T = [[.2, .8], [.8, .2]],  Z = [[.6, .4], [.4, .6]]

    The tables are symmetric under swapping the states, so the uniform
    distribution is stationary and is used as the initial belief.
    """
    T = [[[0.9, 0.1], [0.1, 0.9]], [[0.2, 0.8], [0.8, 0.2]]]
    Z = [[[0.85, 0.15], [0.15, 0.85]], [[0.6, 0.4], [0.4, 0.6]]]
    return Pomdp(T, Z, [0.5, 0.5], name="two-state-noisy")


def random_pomdp(num_states: int, num_actions: int, num_obs: int, seed: int,
                 concentration: float = 1.0) -> Pomdp:
    """Rows drawn from a symmetric Dirichlet; starts in its stationary distribution."""
    rng = np.random.default_rng(seed)
    alpha_s = np.full(num_states, concentration)
    alpha_o = np.full(num_obs, concentration)
    T = rng.dirichlet(alpha_s, size=(num_actions, num_states))
    Z = rng.dirichlet(alpha_o, size=(num_actions, num_states))
    uniform = np.full(num_states, 1.0 / num_states)
    tmp = Pomdp(T, Z, uniform, name="tmp")
    return Pomdp(T, Z, stationary_distribution(tmp),
                 name=f"random-pomdp-{num_states}-{num_actions}-{num_obs}")


def ring_world(size: int = 4) -> Pomdp:
    """Deterministic ring; action 0 steps clockwise, action 1 counter-clockwise.

    Observation 1 is emitted on arriving at the landmark cell 0, else 0.
    The reachable belief set from the uniform start is finite.
    """
    T = np.zeros((2, size, size))
    Z = np.zeros((2, size, 2))
    for s in range(size):
        T[0, s, (s + 1) % size] = 1.0
        T[1, s, (s - 1) % size] = 1.0
    for a in range(2):
        Z[a, :, 0] = 1.0
        Z[a, 0] = (0.0, 1.0)
    return Pomdp(T, Z, np.full(size, 1.0 / size), name="ring-world")


def mini_grid(layout=MINI_GRID_LAYOUT, slip: float = 0.2) -> Pomdp:
    """Small gridworld observed only through the four adjacent-wall bits.

    Actions are N, E, S, W; a move succeeds with probability ``1 - slip``
    and otherwise leaves the agent in place, as does bumping into a wall.
    The observation ``8*N + 4*E + 2*S + W`` encodes which neighbours are
    walls, so |O| = 16 and many cells are aliased.
    """
    cells = [(r, c) for r, row in enumerate(layout) for c, ch in enumerate(row) if ch == "."]
    index = {rc: i for i, rc in enumerate(cells)}
    moves = [(-1, 0), (0, 1), (1, 0), (0, -1)]
    n = len(cells)
    T = np.zeros((4, n, n))
    Z = np.zeros((4, n, 16))
    for i, (r, c) in enumerate(cells):
        bits = 0
        for d, (dr, dc) in enumerate(moves):
            if (r + dr, c + dc) not in index:
                bits |= 1 << (3 - d)
        Z[:, i, bits] = 1.0
        for a, (dr, dc) in enumerate(moves):
            j = index.get((r + dr, c + dc), i)
            T[a, i, j] += 1.0 - slip
            T[a, i, i] += slip
    tmp = Pomdp(T, Z, np.full(n, 1.0 / n))
    return Pomdp(T, Z, stationary_distribution(tmp), name="mini-grid")


BUILTIN_NAMES = ("two-state-noisy", "random-pomdp-S-A-O", "ring-world", "mini-grid")


def make_builtin(name: str, seed: int = 0) -> Pomdp:
    if name == "two-state-noisy":
        return two_state_noisy()
    if name == "ring-world":
        return ring_world()
    if name == "mini-grid":
        return mini_grid()
    m = re.fullmatch(r"random-pomdp-(\d+)-(\d+)-(\d+)", name)
    if m:
        s, a, o = (int(x) for x in m.groups())
        if min(s, a, o) < 1:
            raise UnknownEnvironment(name)
        return random_pomdp(s, a, o, seed)
    raise UnknownEnvironment(f"unknown environment {name!r}; known: {', '.join(BUILTIN_NAMES)}")


# ---------------------------------------------------------------------------
# fixture files


def pomdp_to_dict(model: Pomdp) -> dict:
    return {
        "name": model.name,
        "num_states": model.num_states,
        "num_actions": model.num_actions,
        "num_observations": model.num_obs,
        "transition": model.transition.ravel().tolist(),
        "emission": model.emission.ravel().tolist(),
        "initial_belief": model.initial_belief.tolist(),
    }


def pomdp_from_dict(d: dict) -> Pomdp:
    n, A, O = d["num_states"], d["num_actions"], d["num_observations"]
    T = np.asarray(d["transition"], dtype=float).reshape(A, n, n)
    Z = np.asarray(d["emission"], dtype=float).reshape(A, n, O)
    return Pomdp(T, Z, d["initial_belief"], name=d.get("name", "pomdp"))


def save_pomdp(model: Pomdp, path) -> None:
    Path(path).write_text(json.dumps(pomdp_to_dict(model), indent=1) + "\n")


def load_pomdp(path) -> Pomdp:
    return pomdp_from_dict(json.loads(Path(path).read_text()))
