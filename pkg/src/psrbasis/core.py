"""Action-observation atoms, sequences and trajectory datasets.

Tests and histories share one representation: a tuple of :class:`ActionObs`.
The empty tuple is both the empty history and the null test.
"""
from __future__ import annotations

import itertools
from dataclasses import dataclass, field
from typing import Iterable, NamedTuple

import numpy as np

#: Hard cap on the size of an enumerated candidate pool.
MAX_POOL_SIZE = 1_000_000


class PoolTooLarge(ValueError):
    pass


class ActionObs(NamedTuple):
    action: int
    observation: int

    def __str__(self):
        return f"a{self.action}o{self.observation}"


Sequence = tuple  # tuple[ActionObs, ...]

EMPTY: Sequence = ()


def seq(*pairs) -> Sequence:
    """Build a sequence from ``(a, o)`` pairs, e.g. ``seq((0, 1), (1, 0))``."""
    return tuple(ActionObs(int(a), int(o)) for a, o in pairs)


def concat(h: Sequence, t: Sequence) -> Sequence:
    return tuple(h) + tuple(t)


def format_seq(s: Sequence) -> str:
    """Compact text form, ``"a0o1.a1o0"``; the empty sequence is ``"eps"``."""
    if not s:
        return "eps"
    return ".".join(str(p) for p in s)


def parse_seq(text: str) -> Sequence:
    text = text.strip()
    if text in ("", "eps"):
        return EMPTY
    pairs = []
    for tok in text.split("."):
        if not tok.startswith("a") or "o" not in tok:
            raise ValueError(f"bad action-observation token {tok!r}")
        a, o = tok[1:].split("o")
        pairs.append((int(a), int(o)))
    return seq(*pairs)


def check_seq(s: Sequence, num_actions: int, num_obs: int) -> None:
    for a, o in s:
        if not (0 <= a < num_actions and 0 <= o < num_obs):
            raise ValueError(
                f"pair (a={a}, o={o}) outside alphabet |A|={num_actions}, |O|={num_obs}"
            )


def enumerate_tests(max_len: int, num_actions: int, num_obs: int,
                    cap: int = MAX_POOL_SIZE) -> list[Sequence]:
    """All non-empty sequences up to ``max_len``, shortest first then lexicographic."""
    if max_len < 1:
        raise ValueError("max_len must be >= 1")
    atoms = [ActionObs(a, o) for a in range(num_actions) for o in range(num_obs)]
    total = sum(len(atoms) ** m for m in range(1, max_len + 1))
    if total > cap:
        raise PoolTooLarge(f"{total} candidate tests exceed the cap of {cap}")
    out = []
    for m in range(1, max_len + 1):
        out.extend(itertools.product(atoms, repeat=m))
    return out


@dataclass(frozen=True)
class TrajectoryDataset:
    """Immutable collection of trajectories over a fixed alphabet.

    Each trajectory is stored as a pair of read-only int arrays (actions,
    observations) so that counting code can work on them directly.
    """

    actions: tuple
    observations: tuple
    num_actions: int
    num_obs: int
    seed: int = 0
    _lengths: tuple = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        if len(self.actions) != len(self.observations):
            raise ValueError("actions and observations must pair up")
        acts, obs = [], []
        for a, o in zip(self.actions, self.observations):
            a = np.array(a, dtype=np.int64)
            o = np.array(o, dtype=np.int64)
            if a.shape != o.shape or a.ndim != 1:
                raise ValueError("each trajectory needs 1-D action/observation arrays of equal length")
            if a.size and (a.min() < 0 or a.max() >= self.num_actions):
                raise ValueError("action index outside alphabet")
            if o.size and (o.min() < 0 or o.max() >= self.num_obs):
                raise ValueError("observation index outside alphabet")
            a.flags.writeable = False
            o.flags.writeable = False
            acts.append(a)
            obs.append(o)
        object.__setattr__(self, "actions", tuple(acts))
        object.__setattr__(self, "observations", tuple(obs))
        object.__setattr__(self, "_lengths", tuple(len(a) for a in acts))

    @classmethod
    def from_sequences(cls, sequences: Iterable[Sequence], num_actions: int,
                       num_obs: int, seed: int = 0) -> "TrajectoryDataset":
        acts, obs = [], []
        for s in sequences:
            acts.append([p[0] for p in s])
            obs.append([p[1] for p in s])
        return cls(tuple(acts), tuple(obs), num_actions, num_obs, seed)

    def __len__(self):
        return len(self.actions)

    @property
    def total_steps(self) -> int:
        return sum(self._lengths)

    def sequences(self) -> list[Sequence]:
        return [tuple(ActionObs(int(a), int(o)) for a, o in zip(acts, obs))
                for acts, obs in zip(self.actions, self.observations)]
