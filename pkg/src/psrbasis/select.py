"""Basis (test-set) selection: entropy-guided local search, the
singular-value bound baseline, and random initial bases."""
from __future__ import annotations

import csv
import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import EMPTY, TrajectoryDataset, format_seq
from .entropy import EntropyConfig, EntropyEvaluator
from .env import Pomdp
from .hankel import Basis, WindowCounter, candidate_pool, estimate
from .spectral import RankDeficient, learn

log = logging.getLogger(__name__)


class InsufficientCandidates(ValueError):
    pass


def paper_threshold(k: int) -> float:
    """Entropy threshold schedule by basis size (larger bases have lower entropy)."""
    if k <= 150:
        return 0.06
    if k <= 250:
        return 0.04
    return 0.02


@dataclass
class SelectionConfig:
    k: int = 100
    n: int = 20
    rounds: int = 10
    iter_num: int = 10
    entropy_threshold: float = 0.06
    candidate_max_len: int = 3
    seed: int = 0
    min_support: int = 10
    bound_margin: float = 1e-3
    protected: tuple = ()

    def __post_init__(self):
        if not 1 <= self.n < self.k:
            raise ValueError(f"need 1 <= n < k, got n={self.n}, k={self.k}")
        if self.rounds < 1 or self.iter_num < 1:
            raise ValueError("rounds and iter_num must be >= 1")
        if self.entropy_threshold <= 0:
            raise ValueError("entropy_threshold must be > 0")
        if self.candidate_max_len < 1:
            raise ValueError("candidate_max_len must be >= 1")


def basis_hash(tests) -> str:
    text = "\n".join(sorted(format_seq(t) for t in tests))
    return hashlib.sha256(text.encode()).hexdigest()[:16]


@dataclass
class TraceRecord:
    round: int
    iteration: int
    objective: float
    accepted: bool
    basis_hash: str
    sampled: tuple = ()
    removed: tuple = ()
    incumbent: tuple = ()


@dataclass
class SelectionTrace:
    strategy: str
    initial_objective: float
    records: list = field(default_factory=list)
    round_bases: list = field(default_factory=list)     # basis after round 0..r
    round_objectives: list = field(default_factory=list)

    def accepted(self) -> list:
        return [r for r in self.records if r.accepted]

    def write_csv(self, fh) -> None:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["round", "iteration", "objective", "accepted", "basis_hash"])
        w.writerow([0, 0, repr(self.initial_objective), 1,
                    basis_hash(self.round_bases[0].tests) if self.round_bases else ""])
        for r in self.records:
            w.writerow([r.round, r.iteration, repr(r.objective), int(r.accepted), r.basis_hash])


def _local_search(objective, init: Basis, pool: list, cfg: SelectionConfig,
                  margin: float, strategy: str):
    if len(init.tests) != cfg.k:
        raise ValueError(f"initial basis has {len(init.tests)} tests, expected k={cfg.k}")
    rng = np.random.default_rng(cfg.seed)
    memo: dict = {}

    def score(tests):
        key = basis_hash(tests)
        if key not in memo:
            memo[key] = objective(tests)
        return memo[key]

    tests = list(init.tests)
    value = score(tests)
    trace = SelectionTrace(strategy, value, round_bases=[init], round_objectives=[value])
    protected = set(cfg.protected)
    for rnd in range(1, cfg.rounds + 1):
        for it in range(1, cfg.iter_num + 1):
            current = set(tests)
            available = [t for t in pool if t not in current]
            movable = [i for i, t in enumerate(tests) if t not in protected]
            if len(available) < cfg.n or len(movable) < cfg.n:
                raise InsufficientCandidates(
                    f"need {cfg.n} candidates and movable tests, have "
                    f"{len(available)} and {len(movable)}")
            sampled = [available[i] for i in rng.choice(len(available), cfg.n, replace=False)]
            out_pos = sorted(int(movable[i]) for i in rng.choice(len(movable), cfg.n, replace=False))
            cand = list(tests)
            for pos, t in zip(out_pos, sampled):
                cand[pos] = t
            cand_value = score(cand)
            accept = bool(value - cand_value > margin)
            trace.records.append(TraceRecord(
                rnd, it, cand_value, accept, basis_hash(cand), tuple(sampled),
                tuple(tests[p] for p in out_pos), tuple(tests)))
            if accept:
                value, tests = cand_value, cand
                break
        trace.round_bases.append(init.with_tests(tests))
        trace.round_objectives.append(value)
        log.debug("%s round %d objective %.6g", strategy, rnd, value)
    return init.with_tests(tests), trace


def entropy_search(model: Pomdp, data: TrajectoryDataset, init: Basis,
                   cfg: SelectionConfig, entropy_cfg: EntropyConfig | None = None,
                   pool: list | None = None, evaluator: EntropyEvaluator | None = None):
    """Local search that swaps ``n`` tests at a time and keeps a swap only
    when it lowers the model entropy by more than the threshold.

    Each round tries up to ``iter_num`` random swaps and stops at the first
    accepted one. Returns ``(final_basis, trace)``.
    """
    if pool is None:
        pool = candidate_pool(data, cfg.candidate_max_len, cfg.min_support)
    if evaluator is None:
        evaluator = EntropyEvaluator(model, entropy_cfg or EntropyConfig(seed=cfg.seed))
    return _local_search(evaluator, init, pool, cfg, cfg.entropy_threshold, "entropy")


def max_operator_singular_value(est, rank: int) -> float:
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RankDeficient)
        psr = learn(est, rank)
    return float(max(np.linalg.norm(B, 2) for B in psr.B.reshape(-1, psr.rank, psr.rank)))


def bound_search(model: Pomdp, data: TrajectoryDataset, init: Basis,
                 cfg: SelectionConfig, rank: int, pool: list | None = None,
                 counter: WindowCounter | None = None):
    """Same search loop, scored by the largest singular value of any learned
    update operator; a candidate whose learning fails is rejected."""
    counter = counter or WindowCounter(data)
    if pool is None:
        pool = candidate_pool(data, cfg.candidate_max_len, cfg.min_support, counter)

    def objective(tests):
        try:
            est = estimate(data, init.with_tests(tests), counter)
            return max_operator_singular_value(est, min(rank, len(tests), len(init.histories)))
        except (ValueError, np.linalg.LinAlgError) as exc:
            log.info("bound objective failed: %s", exc)
            return float("inf")

    return _local_search(objective, init, pool, cfg, cfg.bound_margin, "bound")


def random_basis(data: TrajectoryDataset, k: int, max_len: int, seed: int,
                 min_support: int = 10, histories=(EMPTY,), pool: list | None = None,
                 counter: WindowCounter | None = None) -> Basis:
    """``k`` distinct candidate tests drawn uniformly without replacement."""
    if pool is None:
        pool = candidate_pool(data, max_len, min_support, counter)
    if len(pool) < k:
        raise InsufficientCandidates(f"only {len(pool)} candidate tests for k={k}")
    rng = np.random.default_rng(seed)
    idx = rng.choice(len(pool), k, replace=False)
    return Basis(tuple(pool[i] for i in idx), tuple(histories))
