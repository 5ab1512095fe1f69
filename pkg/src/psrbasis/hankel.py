"""Hankel-matrix estimation from trajectory data, and its exact counterpart.

Rows are indexed by tests and columns by histories. Every probability is
action-conditioned: for a string ``a1 o1 ... am om`` the estimator is the
prefix product

    prod_i  N(a1 o1 ... ai oi) / N(a1 o1 ... ai)

where ``N`` counts sliding windows (every start position of every
trajectory) matching the pattern, the last pattern in the denominator
fixing only the action. Under a uniform behaviour policy this removes the
policy's action probabilities from the estimate.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .core import (EMPTY, Sequence, TrajectoryDataset, concat, enumerate_tests, format_seq,
                   parse_seq, seq)
from .env import Pomdp, UndefinedConditional, belief_after

log = logging.getLogger(__name__)

_INT63 = 2 ** 63 - 1


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class Basis:
    tests: tuple
    histories: tuple = (EMPTY,)

    def __post_init__(self):
        tests = tuple(tuple(t) for t in self.tests)
        hists = tuple(tuple(h) for h in self.histories)
        if len(set(tests)) != len(tests):
            raise ValueError("duplicate tests in basis")
        if len(set(hists)) != len(hists):
            raise ValueError("duplicate histories in basis")
        if any(len(t) == 0 for t in tests):
            raise ValueError("the empty test cannot be a basis row")
        object.__setattr__(self, "tests", tests)
        object.__setattr__(self, "histories", hists)

    def with_tests(self, tests) -> "Basis":
        return Basis(tuple(tests), self.histories)


class WindowCounter:
    """Sliding-window pattern counts over a dataset, built lazily per length."""

    def __init__(self, data: TrajectoryDataset):
        self.num_actions = data.num_actions
        self.num_obs = data.num_obs
        self.num_pairs = data.num_actions * data.num_obs
        self.base = self.num_pairs + data.num_actions + 1
        self._pair_syms = [a * data.num_obs + o + 1
                           for a, o in zip(data.actions, data.observations)]
        self._act_syms = [a + self.num_pairs + 1 for a in data.actions]
        self._tables: dict = {}

    def max_length(self) -> int:
        m, p = 0, 1
        while p <= _INT63 // self.base:
            p *= self.base
            m += 1
        return m

    def _table(self, length: int, action_tail: bool):
        key = (length, action_tail)
        if key not in self._tables:
            if length > self.max_length():
                raise OverflowError(f"window length {length} too long for integer codes")
            codes = []
            for pairs, acts in zip(self._pair_syms, self._act_syms):
                n = len(pairs) - length + 1
                if n <= 0:
                    continue
                c = np.zeros(n, dtype=np.int64)
                for i in range(length - 1):
                    c += pairs[i:i + n] * self.base ** i
                last = acts if action_tail else pairs
                c += last[length - 1:length - 1 + n] * self.base ** (length - 1)
                codes.append(c)
            if codes:
                uniq, counts = np.unique(np.concatenate(codes), return_counts=True)
            else:
                uniq = np.zeros(0, dtype=np.int64)
                counts = np.zeros(0, dtype=np.int64)
            self._tables[key] = (uniq, counts)
        return self._tables[key]

    def lookup(self, codes: np.ndarray, length: int, action_tail: bool) -> np.ndarray:
        uniq, counts = self._table(length, action_tail)
        pos = np.searchsorted(uniq, codes)
        pos = np.minimum(pos, max(len(uniq) - 1, 0))
        if len(uniq) == 0:
            return np.zeros(len(codes), dtype=np.int64)
        return np.where(uniq[pos] == codes, counts[pos], 0)

    def symbols(self, s: Sequence) -> list:
        return [a * self.num_obs + o + 1 for a, o in s]

    def count(self, s: Sequence, action_tail: bool = False) -> int:
        """Number of windows matching ``s`` (last pair's observation free if ``action_tail``)."""
        if not s:
            raise ValueError("empty pattern")
        syms = self.symbols(s)
        if action_tail:
            syms[-1] = s[-1][0] + self.num_pairs + 1
        code = sum(x * self.base ** i for i, x in enumerate(syms))
        return int(self.lookup(np.array([code], dtype=np.int64), len(s), action_tail)[0])

    def prefix_tallies(self, seqs: list):
        """Numerator and denominator counts of the prefix product for same-length strings.

        Returns two ``(len(seqs), m)`` int arrays.
        """
        m = len(seqs[0])
        sym = np.array([self.symbols(s) for s in seqs], dtype=np.int64).reshape(len(seqs), m)
        act = np.array([[a for a, _ in s] for s in seqs], dtype=np.int64).reshape(len(seqs), m)
        num = np.zeros((len(seqs), m), dtype=np.int64)
        den = np.zeros((len(seqs), m), dtype=np.int64)
        prefix = np.zeros(len(seqs), dtype=np.int64)
        for i in range(m):
            scale = self.base ** i
            num[:, i] = self.lookup(prefix + sym[:, i] * scale, i + 1, False)
            den[:, i] = self.lookup(prefix + (act[:, i] + self.num_pairs + 1) * scale, i + 1, True)
            prefix = prefix + sym[:, i] * scale
        return num, den


def _prefix_products(num: np.ndarray, den: np.ndarray):
    """Prefix product of count ratios; flags strings with an unresolvable zero denominator."""
    m = num.shape[1]
    value = np.ones(num.shape[0])
    broken = np.zeros(num.shape[0], dtype=bool)
    for i in range(m):
        live = value > 0
        bad = live & (den[:, i] == 0)
        broken |= bad
        ratio = np.divide(num[:, i], den[:, i], out=np.zeros(num.shape[0]),
                          where=den[:, i] > 0)
        value = np.where(live, value * ratio, 0.0)
    return value, broken


def estimate_probabilities(counter: WindowCounter, seqs: list):
    """Action-conditioned estimates for arbitrary strings.

    Returns ``(values, broken, tallies)`` where ``broken`` marks strings
    whose prefix had positive estimate but whose next action never occurred
    after it, and ``tallies`` maps each string to its (num, den) rows.
    """
    values = np.ones(len(seqs))
    broken = np.zeros(len(seqs), dtype=bool)
    tallies = {}
    by_len: dict = {}
    for i, s in enumerate(seqs):
        by_len.setdefault(len(s), []).append(i)
    for m, idx in by_len.items():
        if m == 0:
            continue
        group = [seqs[i] for i in idx]
        num, den = counter.prefix_tallies(group)
        v, b = _prefix_products(num, den)
        values[idx] = v
        broken[idx] = b
        for s, nrow, drow in zip(group, num, den):
            tallies[s] = (tuple(int(x) for x in nrow), tuple(int(x) for x in drow))
    return values, broken, tallies


@dataclass(frozen=True, eq=False)
class HankelEstimates:
    """``p_h[j] = p(h_j)``, ``p_th[i, j] = p(h_j t_i)``, ``p_t_ao_h[a, o, i, j] = p(h_j a o t_i)``."""

    basis: Basis
    p_h: np.ndarray
    p_th: np.ndarray
    p_t_ao_h: np.ndarray
    counts: dict = field(default_factory=dict, repr=False)

    def p_ao(self, a: int, o: int) -> np.ndarray:
        return self.p_t_ao_h[a, o]

    @property
    def num_actions(self) -> int:
        return self.p_t_ao_h.shape[0]

    @property
    def num_obs(self) -> int:
        return self.p_t_ao_h.shape[1]


def estimate(data: TrajectoryDataset, basis: Basis,
             counter: WindowCounter | None = None) -> HankelEstimates:
    """Empirical Hankel blocks for ``basis`` from ``data``."""
    if not basis.tests or not basis.histories:
        raise ValueError("basis must have at least one test and one history")
    if len(data) == 0 or data.total_steps == 0:
        raise ValueError("empty dataset")
    if counter is None:
        counter = WindowCounter(data)
    A, O = data.num_actions, data.num_obs
    T, H = basis.tests, basis.histories

    hv, hbroken, htally = estimate_probabilities(counter, list(H))
    if hbroken.any() or (hv == 0).any():
        j = int(np.flatnonzero(hbroken | (hv == 0))[0])
        raise InsufficientData(f"history {format_seq(H[j])} has no support in the data")

    strings = [concat(h, t) for t in T for h in H]
    ao_strings = [concat(concat(h, ((a, o),)), t)
                  for a in range(A) for o in range(O) for t in T for h in H]
    vals, broken, tally = estimate_probabilities(counter, strings + ao_strings)
    if broken.any():
        n_bad = int(broken.sum())
        log.warning("%d Hankel entries have an untried action after a supported prefix; "
                    "estimated as 0", n_bad)
        vals = np.where(broken, 0.0, vals)
    k, nh = len(T), len(H)
    p_th = vals[:k * nh].reshape(k, nh)
    p_ao = vals[k * nh:].reshape(A, O, k, nh)
    tally.update(htally)
    return HankelEstimates(basis, hv, p_th, p_ao, counts=tally)


def _operator(model: Pomdp, a: int, o: int) -> np.ndarray:
    return model.transition[a] * model.emission[a][:, o][None, :]


def test_vectors(model: Pomdp, tests) -> np.ndarray:
    """``out[i, s] = p(t_i | latent state s)``, shape ``(len(tests), n)``."""
    out = np.empty((len(tests), model.num_states))
    for i, t in enumerate(tests):
        v = np.ones(model.num_states)
        for a, o in reversed(t):
            v = _operator(model, a, o) @ v
        out[i] = v
    return out


def exact_hankel(model: Pomdp, basis: Basis) -> HankelEstimates:
    """Noise-free Hankel blocks computed by belief propagation."""
    n = model.num_states
    W = np.empty((len(basis.histories), n))
    p_h = np.empty(len(basis.histories))
    for j, h in enumerate(basis.histories):
        b, ph = belief_after(model, h)
        if ph <= 0:
            raise UndefinedConditional(f"history {format_seq(h)} has zero probability")
        p_h[j] = ph
        W[j] = ph * b
    M = test_vectors(model, basis.tests)
    p_th = M @ W.T
    A, O = model.num_actions, model.num_obs
    p_ao = np.empty((A, O, len(basis.tests), len(basis.histories)))
    for a in range(A):
        for o in range(O):
            p_ao[a, o] = (M @ _operator(model, a, o).T) @ W.T
    return HankelEstimates(basis, p_h, p_th, p_ao)


def build_histories(data: TrajectoryDataset, max_len: int, max_count: int,
                    counter: WindowCounter | None = None) -> list:
    """The empty history plus the most frequent windows of length ``1..max_len``.

    Ordered by count (descending), then shorter first, then lexicographically.
    """
    if max_len < 0:
        raise ValueError("max_len must be >= 0")
    out = [EMPTY]
    if max_count <= 1 or max_len == 0:
        return out[:max(max_count, 1)]
    if counter is None:
        counter = WindowCounter(data)
    ranked = []
    for m in range(1, max_len + 1):
        uniq, counts = counter._table(m, False)
        for code, c in zip(uniq.tolist(), counts.tolist()):
            s = []
            for _ in range(m):
                code, sym = divmod(code, counter.base)
                sym -= 1
                s.append((sym // counter.num_obs, sym % counter.num_obs))
            ranked.append((-c, m, tuple(s)))
    ranked.sort()
    out.extend(seq(*s) for _, _, s in ranked[:max_count - 1])
    return out


def candidate_pool(data: TrajectoryDataset, max_len: int, min_support: int = 10,
                   counter: WindowCounter | None = None) -> list:
    """Distinct observed tests of length ``<= max_len`` whose action sequence
    occurs at least ``min_support`` times; shortest first, then lexicographic."""
    if counter is None:
        counter = WindowCounter(data)
    pool = []
    for s in build_histories(data, max_len, 10 ** 12, counter)[1:]:
        acts = [(a, 0) for a, _ in s]
        if _action_support(counter, acts) >= min_support:
            pool.append(s)
    pool.sort(key=lambda s: (len(s), s))
    return pool


def _action_support(counter: WindowCounter, acts) -> int:
    m = len(acts)
    uniq, counts = counter._table(m, False)
    if not len(uniq):
        return 0
    key = ("actsupport", m)
    if key not in counter._tables:
        codes = uniq.copy()
        act_codes = np.zeros(len(codes), dtype=np.int64)
        for i in range(m):
            codes, sym = np.divmod(codes, counter.base)
            act_codes = act_codes * counter.num_actions + (sym - 1) // counter.num_obs
        table: dict = {}
        for c, n in zip(act_codes.tolist(), counts.tolist()):
            table[c] = table.get(c, 0) + n
        counter._tables[key] = table
    code = 0
    for a, _ in reversed(acts):
        code = code * counter.num_actions + a
    return counter._tables[key].get(code, 0)


# ---------------------------------------------------------------------------
# matrix-dump text format
#
#   # <name> <rows> <cols>
#   <row 0 values, space separated, %.17g>
#   ...
# Labels precede the blocks as "@ <key> <value>" lines.


def write_matrix(fh, name: str, mat) -> None:
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    fh.write(f"# {name} {mat.shape[0]} {mat.shape[1]}\n")
    for row in mat:
        fh.write(" ".join(f"{x:.17g}" for x in row) + "\n")


def read_matrices(path) -> tuple:
    """Parse a matrix dump into ``(labels, {name: array})``."""
    labels: dict = {}
    mats: dict = {}
    lines = Path(path).read_text().splitlines()
    i = 0
    while i < len(lines):
        line = lines[i]
        if line.startswith("@ "):
            _, key, *rest = line.split(" ")
            labels.setdefault(key, []).append(" ".join(rest))
            i += 1
        elif line.startswith("# "):
            _, name, r, c = line.split(" ")
            r, c = int(r), int(c)
            rows = [[float(x) for x in lines[i + 1 + j].split()] for j in range(r)]
            mats[name] = np.array(rows, dtype=float).reshape(r, c)
            i += 1 + r
        else:
            i += 1
    return labels, mats


def dump_hankel(est: HankelEstimates, path) -> None:
    with open(path, "w") as fh:
        for t in est.basis.tests:
            fh.write(f"@ test {format_seq(t)}\n")
        for h in est.basis.histories:
            fh.write(f"@ history {format_seq(h)}\n")
        write_matrix(fh, "p_h", est.p_h[None, :])
        write_matrix(fh, "p_th", est.p_th)
        for a in range(est.num_actions):
            for o in range(est.num_obs):
                write_matrix(fh, f"p_t_a{a}o{o}_h", est.p_ao(a, o))


def load_hankel(path) -> HankelEstimates:
    labels, mats = read_matrices(path)
    basis = Basis(tuple(parse_seq(s) for s in labels.get("test", [])),
                  tuple(parse_seq(s) for s in labels.get("history", [])))
    keys = [k for k in mats if k.startswith("p_t_a")]
    A = 1 + max(int(k[5:].split("o")[0]) for k in keys)
    O = 1 + max(int(k.split("o")[1].split("_")[0]) for k in keys)
    p_ao = np.empty((A, O) + mats["p_th"].shape)
    for a in range(A):
        for o in range(O):
            p_ao[a, o] = mats[f"p_t_a{a}o{o}_h"]
    return HankelEstimates(basis, mats["p_h"][0], mats["p_th"], p_ao)


def independent_tests(model: Pomdp, candidates, histories, tol: float = 1e-10) -> list:
    """Greedy maximal set of tests with linearly independent exact Hankel rows.

    When the histories are rich enough the result is a set of core tests.
    """
    est = exact_hankel(model, Basis(tuple(candidates), tuple(histories)))
    chosen, rows = [], np.zeros((0, len(histories)))
    for t, row in zip(candidates, est.p_th):
        trial = np.vstack([rows, row])
        s = np.linalg.svd(trial, compute_uv=False)
        if s[-1] > tol * max(s[0], 1.0):
            chosen.append(t)
            rows = trial
    return chosen


def enumerated_basis(model: Pomdp, test_len: int, hist_len: int) -> Basis:
    """Every test up to ``test_len`` against the empty history and every
    possible history up to ``hist_len``."""
    tests = enumerate_tests(test_len, model.num_actions, model.num_obs)
    hists = [EMPTY]
    if hist_len > 0:
        for h in enumerate_tests(hist_len, model.num_actions, model.num_obs):
            try:
                belief_after(model, h)
            except UndefinedConditional:
                continue
            hists.append(h)
    return Basis(tuple(tests), tuple(hists))
