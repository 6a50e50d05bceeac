"""Sparse MDP representation and the structural operations the testers rely on.

Transitions are stored Storm-style: one sparse matrix row per (state, action)
"choice", rows grouped by state.  Restriction never touches the matrix; it only
shrinks a boolean mask of enabled rows, so surviving rows stay bit-identical.
"""

from __future__ import annotations

from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Any

import numpy as np
import scipy.sparse as sp

STAY = "stay"
BAD = "bad"
GOAL = "goal"

ROW_TOLERANCE = 1e-9

PolicyTable = dict[int, int]
RestrictionSet = list[tuple[int, int]]


class MdpError(ValueError):
    """Structural misuse of an MDP (disabled action, unknown state, ...)."""


class RestrictionError(MdpError):
    pass


class PolicyConflictError(MdpError):
    def __init__(self, state: int, message: str):
        super().__init__(message)
        self.state = state


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Mdp:
    num_states: int
    actions: tuple[str, ...]
    row_state: np.ndarray
    row_action: np.ndarray
    matrix: sp.csr_matrix
    enabled_rows: np.ndarray
    labels: tuple[frozenset[str], ...]
    initial: np.ndarray
    state_names: tuple[str, ...]
    features: np.ndarray | None = None
    render: Mapping[str, Any] | None = field(default=None)

    @classmethod
    def from_transitions(
        cls,
        num_states: int,
        actions: Sequence[str],
        transitions: Mapping[tuple[int, int], Iterable[tuple[int, float]]],
        labels: Mapping[int, Iterable[str]] | None = None,
        initial: Mapping[int, float] | None = None,
        state_names: Sequence[str] | None = None,
        features: np.ndarray | Sequence[Sequence[float]] | None = None,
        render: Mapping[str, Any] | None = None,
        normalize_bad: bool = True,
    ) -> Mdp:
        """Build an MDP from ``{(s, a): [(s', p), ...]}``.

        Every ``bad``-labeled state is rewritten to a single absorbing ``stay``
        self-loop unless ``normalize_bad`` is false.  Probabilities are stored
        as given; use :func:`validate_mdp` to find malformed rows.
        """
        actions = tuple(actions)
        if STAY not in actions:
            actions = actions + (STAY,)
        stay = actions.index(STAY)
        label_sets = [set() for _ in range(num_states)]
        for s, tags in (labels or {}).items():
            label_sets[s].update(tags)

        rows: dict[tuple[int, int], dict[int, float]] = {}
        for (s, a), succ in transitions.items():
            if not 0 <= s < num_states:
                raise MdpError(f"state {s} out of range")
            if not 0 <= a < len(actions):
                raise MdpError(f"action {a} out of range")
            row = rows.setdefault((s, a), {})
            for t, p in succ:
                if not 0 <= t < num_states:
                    raise MdpError(f"successor {t} out of range")
                row[t] = row.get(t, 0.0) + float(p)
        if normalize_bad:
            for s in range(num_states):
                if BAD in label_sets[s]:
                    for key in [k for k in rows if k[0] == s]:
                        del rows[key]
                    rows[(s, stay)] = {s: 1.0}

        if initial:
            init = np.zeros(num_states)
            for s, p in initial.items():
                init[s] = p
        else:
            init = np.full(num_states, 1.0 / num_states) if num_states else np.zeros(0)

        names = tuple(state_names) if state_names is not None else tuple(str(s) for s in range(num_states))
        if len(names) != num_states:
            raise MdpError("state_names length does not match num_states")
        feats = None
        if features is not None:
            feats = _frozen(np.asarray(features, dtype=float).reshape(num_states, -1).copy())
        return _assemble(num_states, actions, rows, tuple(frozenset(l) for l in label_sets),
                         init, names, feats, render)

    # -- structure ------------------------------------------------------------

    @cached_property
    def row_ptr(self) -> np.ndarray:
        """Row index boundaries per state (CSR-style over choices)."""
        return _frozen(np.searchsorted(self.row_state, np.arange(self.num_states + 1)))

    @cached_property
    def _row_lookup(self) -> dict[tuple[int, int], int]:
        return {(int(s), int(a)): i for i, (s, a) in enumerate(zip(self.row_state, self.row_action))}

    @property
    def num_rows(self) -> int:
        return len(self.row_state)

    def action_index(self, name: str) -> int:
        try:
            return self.actions.index(name)
        except ValueError:
            raise MdpError(f"unknown action {name!r}") from None

    def state_index(self, name: str) -> int:
        try:
            return self._name_lookup[name]
        except KeyError:
            raise MdpError(f"unknown state {name!r}") from None

    @cached_property
    def _name_lookup(self) -> dict[str, int]:
        return {n: i for i, n in enumerate(self.state_names)}

    def row_of(self, s: int, a: int) -> int | None:
        return self._row_lookup.get((s, a))

    def enabled_actions(self, s: int) -> list[int]:
        lo, hi = self.row_ptr[s], self.row_ptr[s + 1]
        return [int(self.row_action[i]) for i in range(lo, hi) if self.enabled_rows[i]]

    def is_enabled(self, s: int, a: int) -> bool:
        r = self.row_of(s, a)
        return r is not None and bool(self.enabled_rows[r])

    def successors(self, s: int, a: int) -> tuple[np.ndarray, np.ndarray]:
        r = self.row_of(s, a)
        if r is None:
            raise MdpError(f"no transitions for state {s}, action {self.actions[a]!r}")
        lo, hi = self.matrix.indptr[r], self.matrix.indptr[r + 1]
        return self.matrix.indices[lo:hi], self.matrix.data[lo:hi]

    @cached_property
    def enabled_count(self) -> np.ndarray:
        return _frozen(np.add.reduceat(self.enabled_rows.astype(np.int64), self.row_ptr[:-1])
                       if self.num_rows else np.zeros(self.num_states, dtype=np.int64))

    def label_mask(self, tag: str) -> np.ndarray:
        return np.fromiter((tag in l for l in self.labels), dtype=bool, count=self.num_states)

    def has_label(self, s: int, tag: str) -> bool:
        return tag in self.labels[s]

    @property
    def label_alphabet(self) -> frozenset[str]:
        return frozenset().union(*self.labels) if self.labels else frozenset()

    def same_as(self, other: Mdp) -> bool:
        """Structural equality: actions, rows, probabilities, enabled sets, labels."""
        return (
            self.num_states == other.num_states
            and self.actions == other.actions
            and np.array_equal(self.row_state, other.row_state)
            and np.array_equal(self.row_action, other.row_action)
            and np.array_equal(self.enabled_rows, other.enabled_rows)
            and self.labels == other.labels
            and (self.matrix != other.matrix).nnz == 0
        )


def _assemble(num_states, actions, rows, labels, init, names, feats, render, enabled=None) -> Mdp:
    keys = sorted(rows)
    row_state = np.fromiter((k[0] for k in keys), dtype=np.int64, count=len(keys))
    row_action = np.fromiter((k[1] for k in keys), dtype=np.int64, count=len(keys))
    indptr = [0]
    indices: list[int] = []
    data: list[float] = []
    for k in keys:
        for t in sorted(rows[k]):
            indices.append(t)
            data.append(rows[k][t])
        indptr.append(len(indices))
    matrix = sp.csr_matrix(
        (np.asarray(data, dtype=float), np.asarray(indices, dtype=np.int64), np.asarray(indptr, dtype=np.int64)),
        shape=(len(keys), num_states),
    )
    if enabled is None:
        enabled_rows = np.ones(len(keys), dtype=bool)
    else:
        enabled_rows = np.fromiter((enabled(k) for k in keys), dtype=bool, count=len(keys))
    return Mdp(
        num_states=num_states,
        actions=tuple(actions),
        row_state=_frozen(row_state),
        row_action=_frozen(row_action),
        matrix=matrix,
        enabled_rows=_frozen(enabled_rows),
        labels=labels,
        initial=_frozen(np.asarray(init, dtype=float)),
        state_names=names,
        features=feats,
        render=render,
    )


def _rows_dict(mdp: Mdp) -> dict[tuple[int, int], dict[int, float]]:
    out = {}
    m = mdp.matrix
    for r in range(mdp.num_rows):
        lo, hi = m.indptr[r], m.indptr[r + 1]
        out[(int(mdp.row_state[r]), int(mdp.row_action[r]))] = dict(
            zip(m.indices[lo:hi].tolist(), m.data[lo:hi].tolist()))
    return out


def validate_mdp(mdp: Mdp) -> list[str]:
    """Return a description of every violated invariant; empty means valid."""
    problems = []
    m = mdp.matrix
    for r in range(mdp.num_rows):
        s, a = int(mdp.row_state[r]), int(mdp.row_action[r])
        probs = m.data[m.indptr[r]:m.indptr[r + 1]]
        name = f"({mdp.state_names[s]}, {mdp.actions[a]})"
        if np.any((probs < 0) | (probs > 1)) or not np.all(np.isfinite(probs)):
            problems.append(f"probability outside [0, 1] in row {name}")
        total = float(probs.sum())
        if mdp.enabled_rows[r] and abs(total - 1.0) > ROW_TOLERANCE:
            problems.append(f"row {name} sums to {total!r}, expected 1")
    counts = np.bincount(mdp.row_state[mdp.enabled_rows], minlength=mdp.num_states)
    for s in np.flatnonzero(counts == 0):
        problems.append(f"state {mdp.state_names[s]} has no enabled action")
    init_total = float(mdp.initial.sum())
    if mdp.num_states and abs(init_total - 1.0) > ROW_TOLERANCE:
        problems.append(f"initial distribution sums to {init_total!r}, expected 1")
    if mdp.features is not None and mdp.features.shape[0] != mdp.num_states:
        problems.append("feature matrix does not cover every state")
    return problems


def restrict(mdp: Mdp, gamma: Iterable[tuple[int, int]]) -> Mdp:
    """Keep only action ``a`` at every state ``s`` of the pairs in ``gamma``."""
    pinned: dict[int, int] = {}
    for s, a in gamma:
        s, a = int(s), int(a)
        if s in pinned and pinned[s] != a:
            raise RestrictionError(f"state {mdp.state_names[s]} restricted to two different actions")
        if not (0 <= s < mdp.num_states and 0 <= a < len(mdp.actions)) or not mdp.is_enabled(s, a):
            raise RestrictionError(f"cannot restrict: ({s}, {a}) is not an enabled state-action pair")
        pinned[s] = a
    if not pinned:
        return mdp
    mask = mdp.enabled_rows.copy()
    for s, a in pinned.items():
        lo, hi = mdp.row_ptr[s], mdp.row_ptr[s + 1]
        mask[lo:hi] &= mdp.row_action[lo:hi] == a
    return replace(mdp, enabled_rows=_frozen(mask))


def make_sinks(mdp: Mdp, states: Iterable[int], mark_bad: bool = False) -> Mdp:
    """Rewrite ``states`` to probability-1 ``stay`` self-loops, optionally labeled bad."""
    states = sorted({int(s) for s in states})
    if not states:
        return mdp
    actions = mdp.actions if STAY in mdp.actions else mdp.actions + (STAY,)
    stay = actions.index(STAY)
    sink = set(states)
    rows = {k: v for k, v in _rows_dict(mdp).items() if k[0] not in sink}
    for s in states:
        rows[(s, stay)] = {s: 1.0}
    labels = list(mdp.labels)
    if mark_bad:
        for s in states:
            labels[s] = labels[s] | {BAD}
    old_enabled = {(int(s), int(a)): bool(e) for s, a, e in zip(mdp.row_state, mdp.row_action, mdp.enabled_rows)}
    return _assemble(mdp.num_states, actions, rows, tuple(labels), mdp.initial, mdp.state_names,
                     mdp.features, mdp.render, enabled=lambda k: k[0] in sink or old_enabled[k])


def induce_chain(mdp: Mdp, policy: Mapping[int, int]) -> Mdp:
    """Fix the policy's action everywhere, yielding a Markov chain.

    States missing from ``policy`` are accepted only when they already have a
    single enabled action (absorbing or previously restricted states).
    """
    gamma = []
    for s in range(mdp.num_states):
        enabled = mdp.enabled_actions(s)
        if s in policy:
            a = int(policy[s])
            if a not in enabled:
                raise PolicyConflictError(
                    s, f"policy action {mdp.actions[a] if 0 <= a < len(mdp.actions) else a!r} "
                       f"is not enabled at state {mdp.state_names[s]}")
            gamma.append((s, a))
        elif len(enabled) != 1:
            raise PolicyConflictError(s, f"policy undefined at state {mdp.state_names[s]}")
    return restrict(mdp, gamma)


def simulate_step(mdp: Mdp, s: int, a: int, rng: np.random.Generator) -> int:
    if not mdp.is_enabled(s, a):
        raise MdpError(f"action {mdp.actions[a]!r} is not enabled at state {mdp.state_names[s]}")
    succ, probs = mdp.successors(s, a)
    if len(succ) == 1:
        rng.random()  # keep one draw per step so streams stay aligned
        return int(succ[0])
    i = int(np.searchsorted(np.cumsum(probs), rng.random() * probs.sum(), side="right"))
    return int(succ[min(i, len(succ) - 1)])


def is_fully_restricted(mdp: Mdp) -> bool:
    return bool(np.all(mdp.enabled_count == 1))


def unrestricted_states(mdp: Mdp) -> np.ndarray:
    """States that still offer a choice between actions."""
    return np.flatnonzero(mdp.enabled_count > 1)
