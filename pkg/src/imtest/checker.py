"""Explicit-state value iteration for reach-avoid probabilities and rewards.

Safety values are probabilities of *avoiding* the labeled set, for ``n`` steps
or forever.  Unbounded values are obtained from the least fixed point of the
reachability operator and returned as ``1 - reach``.  States whose optimal
value is exactly 0 or 1 are found by graph analysis first and pinned, so
threshold tests at 0 and 1 never depend on rounding.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .mdp import BAD, Mdp

DEFAULT_TOLERANCE = 1e-10
DEFAULT_MAX_ITERATIONS = 100_000


class ConvergenceError(RuntimeError):
    def __init__(self, residual: float, iterations: int):
        super().__init__(f"value iteration did not converge after {iterations} iterations "
                         f"(residual {residual:.3e})")
        self.residual = residual
        self.iterations = iterations


def _check_horizon(h: float) -> float:
    if h != math.inf and (h < 0 or int(h) != h):
        raise ValueError(f"horizon must be a non-negative integer or inf, got {h!r}")
    return h if h == math.inf else int(h)


@dataclass(frozen=True)
class SafetySpec:
    """Invariant ``always not <avoid_label>`` over ``horizon`` steps."""

    avoid_label: str = BAD
    horizon: float = math.inf

    def __post_init__(self):
        object.__setattr__(self, "horizon", _check_horizon(self.horizon))

    @property
    def bounded(self) -> bool:
        return self.horizon != math.inf


@dataclass(frozen=True, eq=False)
class RewardSpec:
    """State reward collected on every visited state, the initial one included."""

    reward: np.ndarray
    horizon: float = math.inf
    discount: float = 1.0

    def __post_init__(self):
        r = np.asarray(self.reward, dtype=float).copy()
        r.setflags(write=False)
        if not np.all(np.isfinite(r)):
            raise ValueError("rewards must be finite")
        if not 0 < self.discount <= 1:
            raise ValueError("discount must lie in (0, 1]")
        object.__setattr__(self, "reward", r)
        object.__setattr__(self, "horizon", _check_horizon(self.horizon))

    @property
    def bounded(self) -> bool:
        return self.horizon != math.inf

    @classmethod
    def for_label(cls, mdp: Mdp, label: str, value: float = 1.0, **kw) -> RewardSpec:
        return cls(np.where(mdp.label_mask(label), value, 0.0), **kw)


@dataclass(frozen=True, eq=False)
class ValueVector:
    values: np.ndarray
    mode: str
    spec: SafetySpec | RewardSpec

    def __getitem__(self, s):
        return self.values[s]

    def __len__(self):
        return len(self.values)

    def __array__(self, dtype=None, copy=None):
        return np.asarray(self.values, dtype=dtype)


@dataclass(frozen=True, eq=False)
class QValues:
    """Per-row action values; NaN marks rows disabled in the MDP."""

    values: np.ndarray
    row_state: np.ndarray
    row_action: np.ndarray
    row_ptr: np.ndarray

    def get(self, s: int, a: int) -> float:
        for r in range(self.row_ptr[s], self.row_ptr[s + 1]):
            if self.row_action[r] == a and not np.isnan(self.values[r]):
                return float(self.values[r])
        raise KeyError((s, a))

    def at(self, s: int) -> dict[int, float]:
        lo, hi = self.row_ptr[s], self.row_ptr[s + 1]
        return {int(self.row_action[r]): float(self.values[r])
                for r in range(lo, hi) if not np.isnan(self.values[r])}

    def per_state_max(self) -> np.ndarray:
        return np.maximum.reduceat(np.where(np.isnan(self.values), -np.inf, self.values), self.row_ptr[:-1])

    def per_state_min(self) -> np.ndarray:
        return np.minimum.reduceat(np.where(np.isnan(self.values), np.inf, self.values), self.row_ptr[:-1])


class QualitativeSets(NamedTuple):
    prob1_max: np.ndarray
    prob0_max: np.ndarray
    prob1_min: np.ndarray
    prob0_min: np.ndarray


# -- graph primitives -----------------------------------------------------------


class _Graph:
    """Boolean views of the enabled transition structure."""

    def __init__(self, mdp: Mdp):
        m = mdp.matrix.copy()
        m.data = (m.data > 0).astype(np.int64)
        m.eliminate_zeros()
        self.struct = m.tocsr()
        self.enabled = mdp.enabled_rows
        self.starts = mdp.row_ptr[:-1]

    def _exists(self, row_ok: np.ndarray) -> np.ndarray:
        return np.logical_or.reduceat(row_ok & self.enabled, self.starts)

    def _forall(self, row_ok: np.ndarray) -> np.ndarray:
        return np.logical_and.reduceat(row_ok | ~self.enabled, self.starts)

    def rows_inside(self, z: np.ndarray) -> np.ndarray:
        return self.struct @ (~z).astype(np.int64) == 0

    def rows_touching(self, z: np.ndarray) -> np.ndarray:
        return self.struct @ z.astype(np.int64) > 0

    def exists_inside(self, z):
        return self._exists(self.rows_inside(z))

    def forall_inside(self, z):
        return self._forall(self.rows_inside(z))

    def exists_touching(self, z):
        return self._exists(self.rows_touching(z))


def _fixpoint(step, start: np.ndarray) -> np.ndarray:
    z = start
    while True:
        nxt = step(z)
        if np.array_equal(nxt, z):
            return z
        z = nxt


def qualitative_sets(mdp: Mdp, spec: SafetySpec) -> QualitativeSets:
    """States whose optimal avoid probability is exactly 1 or 0, per mode.

    Unbounded horizons use the classic prob0/prob1 graph algorithms; bounded
    horizons use the step-indexed sure-avoid / sure-reach attractors, which is
    exact for the step-dependent recursion used by the numeric engine.
    """
    bad = mdp.label_mask(spec.avoid_label)
    g = _Graph(mdp)
    if spec.bounded:
        return _bounded_qualitative(g, bad, int(spec.horizon))

    # some strategy avoids bad surely forever
    prob1_max = _fixpoint(lambda z: z & g.exists_inside(z), ~bad)
    # no strategy can reach bad at all
    can_reach = _fixpoint(lambda z: z | g.exists_touching(z), bad)
    prob1_min = ~can_reach
    # every strategy reaches bad almost surely: cannot even reach prob1_max
    escape = _fixpoint(lambda z: z | (~bad & g.exists_touching(z)), prob1_max)
    prob0_max = ~escape

    # some strategy reaches bad almost surely (nested fixpoint)
    def outer(u):
        return _fixpoint(lambda r: r | (g._exists(g.rows_inside(u) & g.rows_touching(r))), bad)

    prob0_min = _fixpoint(outer, np.ones(mdp.num_states, dtype=bool))
    return QualitativeSets(prob1_max, prob0_max, prob1_min, prob0_min)


def _bounded_qualitative(g: _Graph, bad: np.ndarray, n: int) -> QualitativeSets:
    sure_avoid_e = sure_avoid_a = ~bad
    sure_reach_e = sure_reach_a = bad.copy()
    for _ in range(n):
        sure_avoid_e = ~bad & g.exists_inside(sure_avoid_e)
        sure_avoid_a = ~bad & g.forall_inside(sure_avoid_a)
        sure_reach_e = bad | g.exists_inside(sure_reach_e)
        sure_reach_a = bad | g.forall_inside(sure_reach_a)
    return QualitativeSets(sure_avoid_e, sure_reach_a, sure_avoid_a, sure_reach_e)


# -- numeric value iteration ------------------------------------------------------


def _optimize(mdp: Mdp, row_values: np.ndarray, maximize: bool) -> np.ndarray:
    fill = -np.inf if maximize else np.inf
    v = np.where(mdp.enabled_rows, row_values, fill)
    reduce = np.maximum if maximize else np.minimum
    return reduce.reduceat(v, mdp.row_ptr[:-1])


def _check_mode(mode: str) -> bool:
    if mode not in ("max", "min"):
        raise ValueError(f"mode must be 'max' or 'min', got {mode!r}")
    return mode == "max"


def _safety_values(mdp: Mdp, spec: SafetySpec, mode: str, tol: float, max_iterations: int):
    """Return ``(v_n, v_{n-1})``; for unbounded horizons both are the fixed point."""
    maximize = _check_mode(mode)
    bad = mdp.label_mask(spec.avoid_label)
    qual = qualitative_sets(mdp, spec)
    one = qual.prob1_max if maximize else qual.prob1_min
    zero = qual.prob0_max if maximize else qual.prob0_min

    if spec.bounded:
        n = int(spec.horizon)
        g = _Graph(mdp)
        v = (~bad).astype(float)
        prev = v
        one_k, zero_k = ~bad, bad.copy()
        for _ in range(n):
            prev = v
            v = _optimize(mdp, mdp.matrix @ v, maximize)
            v[bad] = 0.0
            if maximize:
                one_k, zero_k = ~bad & g.exists_inside(one_k), bad | g.forall_inside(zero_k)
            else:
                one_k, zero_k = ~bad & g.forall_inside(one_k), bad | g.exists_inside(zero_k)
            v[one_k] = 1.0
            v[zero_k] = 0.0
        return v, prev

    # reach probability of bad, optimized in the opposite sense
    x = np.zeros(mdp.num_states)
    x[zero] = 1.0
    fixed = one | zero
    residual = math.inf
    for it in range(1, max_iterations + 1):
        y = _optimize(mdp, mdp.matrix @ x, not maximize)
        y[fixed] = x[fixed]
        residual = float(np.max(np.abs(y - x))) if len(x) else 0.0
        x = y
        if residual < tol:
            break
    else:
        raise ConvergenceError(residual, max_iterations)
    v = 1.0 - x
    v[one] = 1.0
    v[zero] = 0.0
    np.clip(v, 0.0, 1.0, out=v)
    return v, v


def prob_reach_avoid(mdp: Mdp, spec: SafetySpec, mode: str = "max", *,
                     tol: float = DEFAULT_TOLERANCE, max_iterations: int = DEFAULT_MAX_ITERATIONS) -> ValueVector:
    """Optimal probability of never visiting ``spec.avoid_label`` within the horizon."""
    v, _ = _safety_values(mdp, spec, mode, tol, max_iterations)
    return ValueVector(v, mode, spec)


def _reward_values(mdp: Mdp, spec: RewardSpec, mode: str, tol: float, max_iterations: int):
    maximize = _check_mode(mode)
    r = spec.reward
    if len(r) != mdp.num_states:
        raise ValueError("reward vector does not match the state count")
    v = r.astype(float).copy()
    if spec.bounded:
        prev = v
        for _ in range(int(spec.horizon)):
            prev = v
            v = r + spec.discount * _optimize(mdp, mdp.matrix @ v, maximize)
        return v, prev
    residual = math.inf
    for _ in range(max_iterations):
        y = r + spec.discount * _optimize(mdp, mdp.matrix @ v, maximize)
        residual = float(np.max(np.abs(y - v))) if len(v) else 0.0
        v = y
        if residual < tol:
            return v, v
    raise ConvergenceError(residual, max_iterations)


def expected_reward(mdp: Mdp, spec: RewardSpec, mode: str = "max", *,
                    tol: float = DEFAULT_TOLERANCE, max_iterations: int = DEFAULT_MAX_ITERATIONS) -> ValueVector:
    v, _ = _reward_values(mdp, spec, mode, tol, max_iterations)
    return ValueVector(v, mode, spec)


def q_optimistic(mdp: Mdp, spec: SafetySpec | RewardSpec, *,
                 tol: float = DEFAULT_TOLERANCE, max_iterations: int = DEFAULT_MAX_ITERATIONS) -> QValues:
    """Value of taking each enabled action once, then acting optimally (max)."""
    return _q_from(mdp, spec, *_values(mdp, spec, "max", tol, max_iterations))


def _values(mdp, spec, mode, tol, max_iterations):
    if isinstance(spec, SafetySpec):
        return _safety_values(mdp, spec, mode, tol, max_iterations)
    return _reward_values(mdp, spec, mode, tol, max_iterations)


def _q_from(mdp: Mdp, spec, v_n: np.ndarray, v_prev: np.ndarray) -> QValues:
    if spec.bounded and spec.horizon == 0:
        q = v_n[mdp.row_state].astype(float)
    elif isinstance(spec, SafetySpec):
        q = mdp.matrix @ v_prev
    else:
        q = spec.reward[mdp.row_state] + spec.discount * (mdp.matrix @ v_prev)
    q = np.where(mdp.enabled_rows, q, np.nan)
    return QValues(q, mdp.row_state, mdp.row_action, mdp.row_ptr)


def max_min_and_q(mdp: Mdp, spec: SafetySpec | RewardSpec, *, tol: float = DEFAULT_TOLERANCE,
                  max_iterations: int = DEFAULT_MAX_ITERATIONS) -> tuple[ValueVector, ValueVector, QValues]:
    """Both optimal value vectors plus optimistic Q-values in one pass."""
    v_max, v_max_prev = _values(mdp, spec, "max", tol, max_iterations)
    v_min, _ = _values(mdp, spec, "min", tol, max_iterations)
    return (ValueVector(v_max, "max", spec), ValueVector(v_min, "min", spec),
            _q_from(mdp, spec, v_max, v_max_prev))
