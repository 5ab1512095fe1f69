"""Trial orchestration and CSV output for basis-selection experiments."""
from __future__ import annotations

import csv
import io
import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig
from .entropy import EntropyConfig, EntropyEvaluator
from .env import make_builtin, simulate, simulate_dataset
from .evaluation import evaluate
from .hankel import WindowCounter, build_histories, candidate_pool, estimate
from .select import (SelectionConfig, basis_hash, bound_search, entropy_search,
                     paper_threshold, random_basis)
from .spectral import RankDeficient, learn

log = logging.getLogger(__name__)

RESULT_HEADER = ["trial", "strategy", "round", "basis_size", "objective",
                 "one_step_error", "four_step_error", "degenerate_updates", "clamp_events"]


@dataclass
class TrialResult:
    trial: int
    rows: list = field(default_factory=list)
    traces: dict = field(default_factory=dict)     # (strategy, k) -> SelectionTrace
    seeds: dict = field(default_factory=dict)


def _int_seed(ss: np.random.SeedSequence) -> int:
    return int(ss.generate_state(1, dtype=np.uint64)[0] >> np.uint64(1))


def trial_seeds(seed: int, trials: int) -> list:
    """Per-trial integer seeds for each random stream."""
    out = []
    for ss in np.random.SeedSequence(seed).spawn(trials):
        train, init, search, probe, test = ss.spawn(5)
        out.append({"train": _int_seed(train), "init": _int_seed(init),
                    "search": _int_seed(search), "probe": _int_seed(probe),
                    "test": _int_seed(test)})
    return out


def model_rank(cfg: ExperimentConfig, num_states: int, k: int, num_histories: int) -> int:
    rank = num_states if cfg.model_rank == "auto" else int(cfg.model_rank)
    return max(1, min(rank, k, num_histories))


def run_trial(cfg: ExperimentConfig, trial: int, seeds: dict) -> TrialResult:
    model = make_builtin(cfg.env, cfg.env_seed)
    data = simulate_dataset(model, cfg.train_length, seeds["train"])
    counter = WindowCounter(data)
    histories = build_histories(data, cfg.history_max_len, cfg.history_max_count, counter)
    pool = candidate_pool(data, cfg.candidate_max_len, cfg.min_support, counter)
    test_seq = simulate(model, cfg.eval_length, seeds["test"])
    eps = None if cfg.cluster_epsilon == "auto" else float(cfg.cluster_epsilon)
    evaluator = EntropyEvaluator(model, EntropyConfig(cfg.probe_length, cfg.rollouts, eps,
                                                      seeds["probe"]))
    result = TrialResult(trial, seeds=seeds)
    scores: dict = {}

    def score(basis, rank):
        key = (basis_hash(basis.tests), rank)
        if key not in scores:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore", RankDeficient)
                psr = learn(estimate(data, basis, counter), rank)
            scores[key] = evaluate(psr, model, test_seq, cfg.horizons, exact=cfg.exact_truth,
                                   num_rollouts=cfg.rollouts, seed=seeds["test"])
        return scores[key]

    def emit(strategy, rnd, k, objective, rep):
        result.rows.append([trial, strategy, rnd, k, objective, rep.one_step_error,
                            rep.four_step_error, rep.degenerate_updates, rep.clamp_events])

    for k in cfg.basis_sizes:
        rank = model_rank(cfg, model.num_states, k, len(histories))
        init = random_basis(data, k, cfg.candidate_max_len, seeds["init"] + k,
                            cfg.min_support, histories, pool=pool)
        thr = paper_threshold(k) if cfg.entropy_threshold == "paper" else float(cfg.entropy_threshold)
        scfg = SelectionConfig(k=k, n=cfg.block_size, rounds=cfg.rounds, iter_num=cfg.iter_num,
                               entropy_threshold=thr, candidate_max_len=cfg.candidate_max_len,
                               seed=seeds["search"] + k, min_support=cfg.min_support,
                               bound_margin=cfg.bound_margin)
        for strategy in cfg.strategies:
            if strategy == "initial":
                emit("initial", 0, k, None, score(init, rank))
                continue
            if strategy == "entropy":
                _, trace = entropy_search(model, data, init, scfg, pool=pool, evaluator=evaluator)
            else:
                _, trace = bound_search(model, data, init, scfg, rank, pool=pool, counter=counter)
            result.traces[(strategy, k)] = trace
            for rnd, (basis, obj) in enumerate(zip(trace.round_bases, trace.round_objectives)):
                emit(strategy, rnd, k, obj, score(basis, rank))
    log.info("trial %d done", trial)
    return result


def run_experiment(cfg: ExperimentConfig) -> list:
    """Run every trial; returns :class:`TrialResult` objects in trial order."""
    seeds = trial_seeds(cfg.seed, cfg.trials)
    if cfg.workers > 1 and cfg.trials > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            futures = [pool.submit(run_trial, cfg, t, seeds[t]) for t in range(cfg.trials)]
            return [f.result() for f in futures]
    return [run_trial(cfg, t, seeds[t]) for t in range(cfg.trials)]


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def results_csv(results: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RESULT_HEADER)
    for res in results:
        for row in res.rows:
            w.writerow([_fmt(x) for x in row])
    return buf.getvalue()


def _mean_stderr(values):
    v = np.asarray(values, dtype=float)
    se = float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0
    return float(v.mean()), se


def round_curves(results: list) -> list:
    """Per (strategy, basis size, round) means and standard errors of both errors."""
    groups: dict = {}
    for res in results:
        for row in res.rows:
            _, strategy, rnd, k, _, one, four, _, _ = row
            groups.setdefault((strategy, k, rnd), []).append((one, four))
    out = []
    for (strategy, k, rnd) in sorted(groups, key=lambda g: (g[0], g[1], g[2])):
        vals = np.array(groups[(strategy, k, rnd)])
        for j, metric in enumerate(("one_step", "four_step")):
            mean, se = _mean_stderr(vals[:, j])
            out.append([strategy, k, rnd, metric, mean, se])
    return out


def size_summary(results: list) -> list:
    """Final-round errors per (strategy, basis size); 'initial' is round 0."""
    last: dict = {}
    for res in results:
        for row in res.rows:
            trial, strategy, rnd, k = row[:4]
            key = (strategy, k, trial)
            if key not in last or rnd > last[key][0]:
                last[key] = (rnd, row[5], row[6])
    groups: dict = {}
    for (strategy, k, _), (_, one, four) in last.items():
        groups.setdefault((strategy, k), []).append((one, four))
    out = []
    for strategy, k in sorted(groups):
        vals = np.array(groups[(strategy, k)])
        for j, metric in enumerate(("one_step", "four_step")):
            mean, se = _mean_stderr(vals[:, j])
            out.append([strategy, k, metric, mean, se])
    return out


def table_csv(header: list, rows: list) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_fmt(x) for x in row])
    return buf.getvalue()
