"""Prediction-error metrics of a learned PSR along a held-out trajectory."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import Sequence
from .env import Pomdp, belief_update, likelihood_from, rollout_prediction
from .spectral import DegenerateUpdate, PsrModel, filter_step, multi_step_prediction


@dataclass
class EvalReport:
    one_step_error: float
    four_step_error: float
    L: int
    degenerate_updates: int = 0
    clamp_events: int = 0
    one_step_series: np.ndarray = field(default=None, repr=False)
    four_step_series: np.ndarray = field(default=None, repr=False)


def _clamp(p: float):
    if p < 0.0:
        return 0.0, True
    if p > 1.0:
        return 1.0, True
    return p, False


def evaluate(model: PsrModel, truth: Pomdp, test_seq: Sequence, horizons=(1, 4),
             exact: bool = True, num_rollouts: int = 100, seed: int = 0,
             keep_series: bool = False) -> EvalReport:
    """Mean absolute error between true and predicted observation probabilities.

    At step ``t`` the history is the first ``t`` pairs of ``test_seq``; the
    horizon-``m`` target is the joint probability of the next ``m``
    observations given the next ``m`` actions. Model predictions are clamped
    to ``[0, 1]`` and each clamp is counted. A vanishing normalizer resets the
    model state to its initial state and is counted.

    With ``exact=False`` the truth is a rollout estimate from the true belief.
    """
    horizons = tuple(sorted(set(horizons)))
    if not horizons or horizons[0] < 1:
        raise ValueError("horizons must be positive")
    if len(test_seq) < horizons[-1] + 1:
        raise ValueError("test sequence shorter than the largest horizon + 1")
    rng = np.random.default_rng(seed)
    errors = {m: [] for m in horizons}
    belief = truth.initial_belief
    state = model.initial_state()
    degenerate = clamps = 0
    n = len(test_seq)
    for t in range(n):
        for m in horizons:
            if t + m > n:
                continue
            future = test_seq[t:t + m]
            if exact:
                p = likelihood_from(truth, belief, future)
            else:
                p = rollout_prediction(truth, belief, future, num_rollouts,
                                       int(rng.integers(2 ** 63)))
            p_hat, clamped = _clamp(multi_step_prediction(model, state, future))
            clamps += clamped
            errors[m].append(abs(p - p_hat))
        a, o = test_seq[t]
        belief, _ = belief_update(truth, belief, a, o)
        try:
            state, _ = filter_step(model, state, a, o)
        except DegenerateUpdate:
            state = model.initial_state()
            degenerate += 1
    series = {m: np.asarray(errors[m]) for m in horizons}
    one = series.get(1)
    four = series.get(4)
    return EvalReport(
        one_step_error=float(one.mean()) if one is not None else float("nan"),
        four_step_error=float(four.mean()) if four is not None else float("nan"),
        L=len(one) if one is not None else len(series[horizons[0]]),
        degenerate_updates=degenerate,
        clamp_events=int(clamps),
        one_step_series=one if keep_series else None,
        four_step_series=four if keep_series else None,
    )
