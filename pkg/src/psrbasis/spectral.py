"""Spectral learning of PSR parameters and filtering with the learned model."""
from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np

from .core import Sequence, format_seq, parse_seq
from .hankel import Basis, HankelEstimates, read_matrices, write_matrix

DEGENERATE_FLOOR = 1e-12
DEFAULT_SV_FLOOR = 1e-10


class RankDeficient(UserWarning):
    """The requested rank exceeds the numerical rank of the Hankel block."""


class DimensionMismatch(ValueError):
    pass


class DegenerateUpdate(ArithmeticError):
    """Normalizer of a filter step vanished."""


def pinv(a: np.ndarray, rcond: float = 1e-13) -> np.ndarray:
    """Moore-Penrose pseudo-inverse via SVD, zeroing singular values
    below ``rcond * s_max``."""
    a = np.atleast_2d(np.asarray(a, dtype=float))
    u, s, vt = np.linalg.svd(a, full_matrices=False)
    if s.size == 0:
        return np.zeros(a.shape[::-1])
    keep = s > rcond * s[0]
    inv_s = np.zeros_like(s)
    inv_s[keep] = 1.0 / s[keep]
    return (vt.T * inv_s) @ u.T


def top_left_singular(a: np.ndarray, k: int):
    """Top-``k`` left singular vectors with a deterministic sign: each
    column's largest-magnitude entry is made positive."""
    u, s, _ = np.linalg.svd(a, full_matrices=False)
    u = u[:, :k].copy()
    for j in range(u.shape[1]):
        i = np.argmax(np.abs(u[:, j]))
        if u[i, j] < 0:
            u[:, j] = -u[:, j]
    return u, s


@dataclass(frozen=True, eq=False)
class PsrModel:
    b_star: np.ndarray
    b_inf: np.ndarray
    B: np.ndarray          # (|A|, |O|, k, k)
    U: np.ndarray          # (|T|, k)
    basis: Basis
    singular_values: np.ndarray = None

    @property
    def rank(self) -> int:
        return self.b_star.shape[0]

    def B_ao(self, a: int, o: int) -> np.ndarray:
        return self.B[a, o]

    @property
    def num_actions(self) -> int:
        return self.B.shape[0]

    @property
    def num_obs(self) -> int:
        return self.B.shape[1]

    def initial_state(self) -> np.ndarray:
        return self.b_star.copy()

    def normalization_deviation(self) -> float:
        """Max deviation of ``sum_o b_inf^T B_ao`` from ``b_inf^T`` over actions.

        Diagnostic only; it is zero for exact models.
        """
        dev = 0.0
        for a in range(self.num_actions):
            lhs = self.b_inf @ self.B[a].sum(axis=0)
            dev = max(dev, float(np.abs(lhs - self.b_inf).max()))
        return dev


def learn(est: HankelEstimates, k: int, sv_floor: float = DEFAULT_SV_FLOOR) -> PsrModel:
    """Fit a rank-``k`` PSR.

    ``U`` spans the top-``k`` left singular space of the test-by-history
    block. The initial state projects the empty-history column, the
    normalizer solves ``(P_TH^T U) b_inf = P_H`` in the least-squares
    sense, and each update operator is ``U^T P_T,ao,H (U^T P_TH)^+``.
    If the ``k``-th singular value falls below ``sv_floor`` times the
    largest one, a :class:`RankDeficient` warning is issued and the rank
    is reduced.
    """
    basis = est.basis
    nt, nh = len(basis.tests), len(basis.histories)
    if est.p_th.shape != (nt, nh) or est.p_h.shape != (nh,):
        raise DimensionMismatch("Hankel blocks do not match the basis")
    if est.p_t_ao_h.shape[2:] != (nt, nh):
        raise DimensionMismatch("P_T,ao,H blocks do not match the basis")
    if k < 1 or k > min(nt, nh):
        raise DimensionMismatch(f"rank {k} outside [1, min(|T|, |H|) = {min(nt, nh)}]")
    try:
        eps_col = basis.histories.index(())
    except ValueError:
        raise DimensionMismatch("the empty history must be among the histories") from None

    U, s = top_left_singular(est.p_th, k)
    smax = s[0] if s.size else 0.0
    effective = int(np.sum(s[:k] > sv_floor * max(smax, np.finfo(float).tiny)))
    if effective < k:
        warnings.warn(f"requested rank {k} but only {effective} singular values exceed "
                      f"the floor; using rank {max(effective, 1)}", RankDeficient, stacklevel=2)
        U = U[:, :max(effective, 1)]

    b_star = U.T @ est.p_th[:, eps_col]
    b_inf = pinv(est.p_th.T @ U) @ est.p_h
    proj_inv = pinv(U.T @ est.p_th)
    B = np.einsum("tk,aoth,hj->aokj", U, est.p_t_ao_h, proj_inv)
    return PsrModel(b_star, b_inf, B, U, basis, s)


def filter_step(model: PsrModel, state: np.ndarray, a: int, o: int,
                floor: float = DEGENERATE_FLOOR):
    """One Bayes-like update. Returns ``(new_state, p_hat(o | h, a))``."""
    v = model.B[a, o] @ state
    norm = float(model.b_inf @ v)
    if not np.isfinite(norm) or abs(norm) < floor:
        raise DegenerateUpdate(f"normalizer {norm!r} for a{a}o{o}")
    return v / norm, norm


def sequence_probability(model: PsrModel, s: Sequence) -> float:
    v = model.b_star
    for a, o in s:
        v = model.B[a, o] @ v
    return float(model.b_inf @ v)


def multi_step_prediction(model: PsrModel, state: np.ndarray, future: Sequence) -> float:
    if len(future) < 1:
        raise ValueError("future must have at least one pair")
    v = state
    for a, o in future:
        v = model.B[a, o] @ v
    return float(model.b_inf @ v)


def dump_model(model: PsrModel, path) -> None:
    with open(path, "w") as fh:
        fh.write(f"@ rank {model.rank}\n")
        for t in model.basis.tests:
            fh.write(f"@ test {format_seq(t)}\n")
        for h in model.basis.histories:
            fh.write(f"@ history {format_seq(h)}\n")
        write_matrix(fh, "b_star", model.b_star[None, :])
        write_matrix(fh, "b_inf", model.b_inf[None, :])
        write_matrix(fh, "U", model.U)
        for a in range(model.num_actions):
            for o in range(model.num_obs):
                write_matrix(fh, f"B_a{a}o{o}", model.B[a, o])


def load_model(path) -> PsrModel:
    labels, mats = read_matrices(path)
    basis = Basis(tuple(parse_seq(s) for s in labels.get("test", [])),
                  tuple(parse_seq(s) for s in labels.get("history", [])))
    keys = [k for k in mats if k.startswith("B_a")]
    A = 1 + max(int(k[3:].split("o")[0]) for k in keys)
    O = 1 + max(int(k.split("o")[1]) for k in keys)
    k = int(labels["rank"][0])
    B = np.empty((A, O, k, k))
    for a in range(A):
        for o in range(O):
            B[a, o] = mats[f"B_a{a}o{o}"]
    return PsrModel(mats["b_star"][0], mats["b_inf"][0], B, mats["U"], basis)
