"""Model entropy of a candidate test set.

Prediction vectors ``p(X | h)`` are collected along a probe trajectory,
grouped into discrete states, and the transitions between those states
under each action-observation pair define an MDP whose average row
entropy scores the test set: the less information ``X`` carries, the more
stochastic the induced transitions.
"""
from __future__ import annotations

import hashlib
from dataclasses import dataclass, field

import numpy as np

from .core import Sequence, format_seq
from .env import Pomdp, beliefs_along, rollout_frequencies, simulate_arrays
from .hankel import test_vectors, write_matrix


class EmptyMdp(ValueError):
    pass


def default_epsilon(num_rollouts: int) -> float:
    """Three standard errors of a rollout frequency at worst-case variance."""
    return 3.0 * np.sqrt(0.25 / num_rollouts)


@dataclass(frozen=True, eq=False)
class Probe:
    """A probe trajectory with the environment state (belief) after each step."""

    actions: np.ndarray
    observations: np.ndarray
    beliefs: np.ndarray

    def __len__(self):
        return len(self.actions)

    @classmethod
    def simulate(cls, model: Pomdp, length: int, seed: int) -> "Probe":
        acts, obs, _ = simulate_arrays(model, length, seed)
        return cls(acts, obs, beliefs_along(model, acts, obs))


@dataclass(frozen=True, eq=False)
class ClusteredMdp:
    num_states: int
    assignment: np.ndarray
    transitions: np.ndarray = None   # (|A|, |O|, S, S), supported rows normalized
    row_support: np.ndarray = None   # (|A|, |O|, S) bool

    def supported_rows(self, a: int, o: int) -> np.ndarray:
        return np.flatnonzero(self.row_support[a, o])


def test_seed(seed: int, test: Sequence) -> int:
    """Seed for one test's rollouts, independent of evaluation order."""
    h = hashlib.sha256(f"{seed}|{format_seq(test)}".encode()).digest()
    return int.from_bytes(h[:8], "little")


def estimate_prediction_vectors(model: Pomdp, probe: Probe, X, num_rollouts: int,
                                seed: int, exact: bool = False) -> np.ndarray:
    """Rollout (or exact) predictions of each test in ``X`` at every probe step.

    Returns an array of shape ``(len(probe), len(X))``; row ``i`` is the
    prediction vector after the first ``i + 1`` pairs of the probe.
    """
    if len(probe) == 0:
        raise ValueError("probe must be non-empty")
    if exact:
        return probe.beliefs @ test_vectors(model, X).T
    if num_rollouts < 1:
        raise ValueError("num_rollouts must be >= 1")
    cols = [rollout_frequencies(model, probe.beliefs, t, num_rollouts,
                                np.random.default_rng(test_seed(seed, t)))
            for t in X]
    return np.column_stack(cols) if cols else np.zeros((len(probe), 0))


def cluster_predictions(vectors: np.ndarray, epsilon: float) -> ClusteredMdp:
    """Greedy leader clustering in max-norm.

    Vectors are visited in order; each joins the first existing cluster
    whose leader lies within ``epsilon`` in every coordinate, otherwise it
    becomes the leader of a new cluster.
    """
    if epsilon < 0:
        raise ValueError("epsilon must be >= 0")
    vectors = np.asarray(vectors, dtype=float)
    n = vectors.shape[0]
    assignment = np.empty(n, dtype=np.int64)
    leaders = np.empty_like(vectors)
    count = 0
    for i in range(n):
        v = vectors[i]
        if count:
            dist = np.abs(leaders[:count] - v).max(axis=1)
            hit = np.flatnonzero(dist <= epsilon)
            if hit.size:
                assignment[i] = hit[0]
                continue
        leaders[count] = v
        assignment[i] = count
        count += 1
    return ClusteredMdp(count, assignment)


def build_transition_mdp(actions, observations, assignment, num_actions: int,
                         num_obs: int) -> ClusteredMdp:
    """Count-normalized transitions between consecutive probe states.

    Step ``i -> i + 1`` is taken with pair ``(actions[i+1], observations[i+1])``.
    """
    assignment = np.asarray(assignment, dtype=np.int64)
    if len(assignment) != len(actions):
        raise ValueError("assignment length must equal probe length")
    S = int(assignment.max()) + 1 if len(assignment) else 0
    counts = np.zeros((num_actions, num_obs, S, S))
    np.add.at(counts, (np.asarray(actions[1:]), np.asarray(observations[1:]),
                       assignment[:-1], assignment[1:]), 1.0)
    totals = counts.sum(axis=3)
    support = totals > 0
    trans = np.divide(counts, totals[..., None], out=np.zeros_like(counts),
                      where=support[..., None])
    return ClusteredMdp(S, assignment, trans, support)


def model_entropy(mdp: ClusteredMdp) -> float:
    """Average row entropy (nats) per action-observation pair, summed over pairs.

    Only rows with observed outgoing transitions are averaged; ``0 log 0 = 0``.
    """
    T = mdp.transitions
    support = mdp.row_support
    if T is None or not support.any():
        raise EmptyMdp("no action-observation pair has an observed transition")
    plogp = np.zeros_like(T)
    np.multiply(T, np.log(T, out=np.zeros_like(T), where=T > 0), out=plogp)
    row_h = -plogp.sum(axis=3)                    # (|A|, |O|, S)
    rows = support.sum(axis=2)                    # r(T^a) per pair
    per_pair = np.where(support, row_h, 0.0).sum(axis=2)
    used = rows > 0
    return float((per_pair[used] / rows[used]).sum())


def mdp_from_matrices(matrices) -> ClusteredMdp:
    """Wrap a list of per-pair transition matrices; all-zero rows are unsupported."""
    mats = [np.asarray(m, dtype=float) for m in matrices]
    S = max(m.shape[0] for m in mats)
    T = np.zeros((len(mats), 1, S, S))
    for i, m in enumerate(mats):
        T[i, 0, :m.shape[0], :m.shape[1]] = m
    support = T.sum(axis=3) > 0
    return ClusteredMdp(S, np.zeros(0, dtype=np.int64), T, support)


@dataclass
class EntropyConfig:
    probe_length: int = 5000
    num_rollouts: int = 100
    epsilon: float | None = None
    seed: int = 0
    exact: bool = False

    @property
    def eps(self) -> float:
        if self.epsilon is not None:
            return self.epsilon
        return 1e-9 if self.exact else default_epsilon(self.num_rollouts)


@dataclass
class EntropyEvaluator:
    """EntropyLearn with a fixed probe and a per-test prediction cache.

    Each test's rollouts use a seed derived from the configured seed and
    the test itself, so cached columns are identical to freshly computed
    ones and results do not depend on the order tests are scored in.
    """

    model: Pomdp
    cfg: EntropyConfig = field(default_factory=EntropyConfig)
    probe: Probe = None
    _columns: dict = field(default_factory=dict, repr=False)

    def __post_init__(self):
        if self.probe is None:
            self.probe = Probe.simulate(self.model, self.cfg.probe_length, self.cfg.seed)

    def prediction_vectors(self, X) -> np.ndarray:
        missing = [t for t in X if t not in self._columns]
        if missing:
            cols = estimate_prediction_vectors(self.model, self.probe, missing,
                                               self.cfg.num_rollouts, self.cfg.seed,
                                               exact=self.cfg.exact)
            for j, t in enumerate(missing):
                self._columns[t] = cols[:, j]
        return np.column_stack([self._columns[t] for t in X])

    def clustered(self, X) -> ClusteredMdp:
        if not X:
            raise ValueError("test set must be non-empty")
        clusters = cluster_predictions(self.prediction_vectors(X), self.cfg.eps)
        return build_transition_mdp(self.probe.actions, self.probe.observations,
                                    clusters.assignment, self.model.num_actions,
                                    self.model.num_obs)

    def __call__(self, X) -> float:
        return model_entropy(self.clustered(list(X)))


def entropy_learn(model: Pomdp, X, cfg: EntropyConfig | None = None) -> float:
    """Simulate a probe, predict ``X`` along it, cluster, and score the induced MDP."""
    return EntropyEvaluator(model, cfg or EntropyConfig())(X)


def dump_mdp(mdp: ClusteredMdp, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"@ num_states {mdp.num_states}\n")
        A, O = mdp.transitions.shape[:2]
        for a in range(A):
            for o in range(O):
                if mdp.row_support[a, o].any():
                    write_matrix(fh, f"T_a{a}o{o}", mdp.transitions[a, o])
