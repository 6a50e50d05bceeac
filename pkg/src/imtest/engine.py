"""Importance-driven model-based testing and its random baselines.

Each iteration computes optimistic/pessimistic estimates on the current
restricted MDP, classifies states, and, unless the estimates are close enough,
samples the policy in the most important states and restricts the MDP there.
"""

from __future__ import annotations

import logging
import math
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field

import numpy as np

from . import checker
from .checker import QValues, RewardSpec, SafetySpec, ValueVector
from .mdp import Mdp, MdpError, is_fully_restricted, restrict, simulate_step, unrestricted_states
from .policy import PolicyError, PolicyHandle

log = logging.getLogger(__name__)

SAFETY = "safety"
PERFORMANCE = "performance"

CONVERGED = "converged"
BUDGET = "budget"
FULLY_RESTRICTED = "fully_restricted"


class RunAborted(RuntimeError):
    """A run stopped on a policy failure; ``report`` holds what was done so far."""

    def __init__(self, cause: Exception, report: RunReport):
        super().__init__(str(cause))
        self.cause = cause
        self.report = report


@dataclass(frozen=True)
class Objective:
    kind: str
    spec: SafetySpec | RewardSpec
    threshold: float

    def __post_init__(self):
        if self.kind == SAFETY:
            if not isinstance(self.spec, SafetySpec) or not 0.0 <= self.threshold <= 1.0:
                raise ValueError("safety objectives need a SafetySpec and a threshold in [0, 1]")
        elif self.kind == PERFORMANCE:
            if not isinstance(self.spec, RewardSpec) or not math.isfinite(self.threshold):
                raise ValueError("performance objectives need a RewardSpec and a finite threshold")
        else:
            raise ValueError(f"unknown objective kind {self.kind!r}")

    @classmethod
    def safety(cls, threshold: float, avoid_label: str = "bad", horizon: float = math.inf) -> Objective:
        return cls(SAFETY, SafetySpec(avoid_label, horizon), threshold)

    @classmethod
    def performance(cls, reward, threshold: float, horizon: float = math.inf, discount: float = 1.0) -> Objective:
        return cls(PERFORMANCE, RewardSpec(reward, horizon, discount), threshold)


@dataclass(frozen=True)
class EngineConfig:
    m: int = 10
    epsilon: float = 0.05
    rank_epsilon: float = 1e-9
    max_queries: int | None = None
    seed: int = 0

    def __post_init__(self):
        if self.m < 1:
            raise ValueError("m must be at least 1")
        if self.epsilon < 0:
            raise ValueError("epsilon must be non-negative")
        if self.max_queries is not None and self.max_queries < 0:
            raise ValueError("max_queries must be non-negative")


@dataclass(frozen=True, eq=False)
class EstimatePair:
    e_opt: ValueVector
    e_pes: ValueVector
    q_opt: QValues
    # exact "value is 1" masks for safety objectives, used when the threshold is 1
    opt_is_one: np.ndarray | None = None
    pes_is_one: np.ndarray | None = None

    @property
    def gap(self) -> np.ndarray:
        return self.e_opt.values - self.e_pes.values


@dataclass(frozen=True)
class VerdictSets:
    safe: frozenset[int]
    failure: frozenset[int]
    undetermined: frozenset[int]

    @classmethod
    def initial(cls, num_states: int) -> VerdictSets:
        return cls(frozenset(), frozenset(), frozenset(range(num_states)))

    def counts(self) -> tuple[int, int, int]:
        return len(self.safe), len(self.failure), len(self.undetermined)

    def with_moves(self, to_safe: Iterable[int], to_failure: Iterable[int]) -> VerdictSets:
        """Move undetermined states; states already classified never move."""
        to_safe = frozenset(to_safe) & self.undetermined
        to_failure = (frozenset(to_failure) & self.undetermined) - to_safe
        return VerdictSets(self.safe | to_safe, self.failure | to_failure,
                           self.undetermined - to_safe - to_failure)

    def verdict_of(self, s: int) -> str:
        if s in self.safe:
            return "safe"
        if s in self.failure:
            return "failure"
        return "undetermined"


@dataclass(frozen=True, eq=False)
class RankingTable:
    rank: np.ndarray

    def top(self, k: int) -> list[int]:
        order = sorted(range(len(self.rank)), key=lambda s: (-self.rank[s], s))
        return order[:k]


@dataclass(frozen=True)
class IterationRecord:
    iteration: int
    proven_good: int
    proven_failure: int
    undecided_states: int
    optimistic_avg: float
    pessimistic_avg: float
    num_queries: int
    restricted_states: int
    implied_safe: int = 0
    implied_failure: int = 0


@dataclass
class RunReport:
    mode: str
    records: list[IterationRecord] = field(default_factory=list)
    verdicts: VerdictSets | None = None
    estimates: EstimatePair | None = None
    termination: str | None = None
    verdict_history: list[VerdictSets] = field(default_factory=list)
    opt_history: list[np.ndarray] = field(default_factory=list)
    pes_history: list[np.ndarray] = field(default_factory=list)
    # e_opt at the moment each state entered the failure set (proven verdicts only)
    failure_estimates: dict[int, float] = field(default_factory=dict)
    decisions: dict[int, int] = field(default_factory=dict)
    implied_safe: set[int] = field(default_factory=set)
    implied_failure: set[int] = field(default_factory=set)
    cluster_log: list = field(default_factory=list)
    final_mdp: Mdp | None = None

    @property
    def iterations(self) -> int:
        return len(self.records)

    @property
    def total_queries(self) -> int:
        return self.records[-1].num_queries if self.records else 0


# -- per-iteration steps ------------------------------------------------------------


def compute_estimates(mdp: Mdp, obj: Objective) -> EstimatePair:
    e_opt, e_pes, q = checker.max_min_and_q(mdp, obj.spec)
    if obj.kind == SAFETY:
        qual = checker.qualitative_sets(mdp, obj.spec)
        return EstimatePair(e_opt, e_pes, q, qual.prob1_max, qual.prob1_min)
    return EstimatePair(e_opt, e_pes, q)


def _meets(values: np.ndarray, exact_one: np.ndarray | None, obj: Objective) -> np.ndarray:
    """Pointwise ``values >= threshold``, exact at a safety threshold of 1."""
    if obj.kind == SAFETY and obj.threshold == 1.0 and exact_one is not None:
        return exact_one
    return values >= obj.threshold


def classify(est: EstimatePair, obj: Objective, verdicts: VerdictSets) -> VerdictSets:
    safe = np.flatnonzero(_meets(est.e_pes.values, est.pes_is_one, obj))
    fail = np.flatnonzero(~_meets(est.e_opt.values, est.opt_is_one, obj))
    return verdicts.with_moves(safe.tolist(), fail.tolist())


def stopping_met(est: EstimatePair, config: EngineConfig) -> bool:
    gap = est.gap
    return bool(gap.size == 0 or np.max(gap) < config.epsilon)


def compute_ranking(mdp: Mdp, est: EstimatePair) -> RankingTable:
    q = est.q_opt
    rank = q.per_state_max() - q.per_state_min()
    rank[mdp.enabled_count <= 1] = 0.0
    return RankingTable(np.maximum(rank, 0.0))


def select_top_m(ranking: RankingTable, config: EngineConfig, already_restricted: Iterable[int],
                 fallback: bool = False) -> list[int]:
    """Up to ``m`` highest-ranked open states (ties by index).

    With ``fallback`` set, an empty selection is replaced by the ``m``
    lowest-index open states; the engine enables this only when the stopping
    criterion is unmet and the MDP still has choices, which is what makes
    termination unconditional.
    """
    closed = set(already_restricted)
    rank = ranking.rank
    pool = [s for s in range(len(rank)) if s not in closed and rank[s] > config.rank_epsilon]
    pool.sort(key=lambda s: (-rank[s], s))
    chosen = pool[:config.m]
    if not chosen and fallback:
        chosen = [s for s in range(len(rank)) if s not in closed][:config.m]
    return chosen


# -- main loop --------------------------------------------------------------------------

@dataclass
class _LoopState:
    mdp: Mdp
    verdicts: VerdictSets
    report: RunReport
    policy: PolicyHandle
    start_count: int


def _record(st: _LoopState, est: EstimatePair, queries: int) -> None:
    safe, fail, und = st.verdicts.counts()
    st.report.records.append(IterationRecord(
        iteration=len(st.report.records),
        proven_good=safe,
        proven_failure=fail,
        undecided_states=und,
        optimistic_avg=float(np.mean(est.e_opt.values)),
        pessimistic_avg=float(np.mean(est.e_pes.values)),
        num_queries=queries,
        restricted_states=int(np.sum(st.mdp.enabled_count <= 1)),
        implied_safe=len(st.report.implied_safe),
        implied_failure=len(st.report.implied_failure),
    ))
    st.report.verdict_history.append(st.verdicts)
    st.report.opt_history.append(est.e_opt.values.copy())
    st.report.pes_history.append(est.e_pes.values.copy())


def run_loop(mdp: Mdp, policy: PolicyHandle, obj: Objective, config: EngineConfig, mode: str,
             refine: Callable[[_LoopState, EstimatePair, int | None], None],
             count: Callable[[PolicyHandle], int] = lambda p: p.query_count) -> RunReport:
    """Shared estimate/classify/stop skeleton; ``refine`` restricts the MDP."""
    report = RunReport(mode)
    st = _LoopState(mdp, VerdictSets.initial(mdp.num_states), report, policy, count(policy))
    used = lambda: count(policy) - st.start_count  # noqa: E731
    try:
        while True:
            est = compute_estimates(st.mdp, obj)
            before = st.verdicts
            st.verdicts = classify(est, obj, st.verdicts)
            for s in st.verdicts.failure - before.failure:
                report.failure_estimates[s] = float(est.e_opt.values[s])
            _record(st, est, used())
            report.estimates = est
            log.debug("%s iteration %d: %s", mode, len(report.records) - 1, report.records[-1])
            if stopping_met(est, config):
                report.termination = CONVERGED
                break
            if is_fully_restricted(st.mdp):
                report.termination = FULLY_RESTRICTED
                break
            remaining = None if config.max_queries is None else config.max_queries - used()
            if remaining is not None and remaining <= 0:
                report.termination = BUDGET
                break
            refine(st, est, remaining)
    except (PolicyError, MdpError) as e:
        report.verdicts = st.verdicts
        report.final_mdp = st.mdp
        raise RunAborted(e, report) from e
    report.verdicts = st.verdicts
    report.final_mdp = st.mdp
    return report


def sample_and_restrict(st: _LoopState, states: list[int]) -> None:
    gamma = []
    for s in states:
        a = st.policy.query(s)
        if not st.mdp.is_enabled(s, a):
            raise PolicyError(f"policy chose action {a} which is not available at state {s}")
        gamma.append((s, a))
        st.report.decisions[s] = a
    st.mdp = restrict(st.mdp, gamma)


def _closed(mdp: Mdp) -> list[int]:
    return np.flatnonzero(mdp.enabled_count <= 1).tolist()


def run_imt(mdp: Mdp, policy: PolicyHandle, obj: Objective, config: EngineConfig) -> RunReport:
    def refine(st: _LoopState, est: EstimatePair, remaining: int | None):
        ranking = compute_ranking(st.mdp, est)
        chosen = select_top_m(ranking, config, _closed(st.mdp), fallback=True)
        if remaining is not None:
            chosen = chosen[:remaining]
        sample_and_restrict(st, chosen)

    return run_loop(mdp, policy, obj, config, "imt", refine)


def run_mt(mdp: Mdp, policy: PolicyHandle, obj: Objective, config: EngineConfig) -> RunReport:
    rng = np.random.default_rng(config.seed)

    def refine(st: _LoopState, est: EstimatePair, remaining: int | None):
        pool = unrestricted_states(st.mdp)
        k = min(config.m, len(pool))
        if remaining is not None:
            k = min(k, remaining)
        chosen = sorted(rng.choice(pool, size=k, replace=False).tolist())
        sample_and_restrict(st, chosen)

    return run_loop(mdp, policy, obj, config, "mt", refine)


def rollout(mdp: Mdp, policy: PolicyHandle, start: int, steps: int, bad: np.ndarray,
            rng: np.random.Generator) -> tuple[bool, int]:
    """Run the policy from ``start``; returns (violated, steps taken).

    States with a single enabled action are stepped without consulting the
    policy.  Stops early at the first bad state or an absorbing state.
    """
    s = start
    if bad[s]:
        return True, 0
    taken = 0
    for _ in range(steps):
        enabled = mdp.enabled_actions(s)
        if len(enabled) == 1:
            succ, _ = mdp.successors(s, enabled[0])
            if len(succ) == 1 and succ[0] == s:
                break  # absorbing: nothing can change any more
            a = enabled[0]
        else:
            a = policy.query(s)
        s = simulate_step(mdp, s, a, rng)
        taken += 1
        if bad[s]:
            return True, taken
    return False, taken


def run_rt(mdp: Mdp, policy: PolicyHandle, obj: Objective, config: EngineConfig,
           episode_len: int, budget: int) -> list[tuple[int, bool]]:
    """Random rollouts from uniformly drawn start states.

    Every step costs one query against ``budget``; an episode that takes no
    step (length 0, or starting in a bad state) is charged one query so that
    the loop always terminates.
    """
    if obj.kind != SAFETY:
        raise ValueError("random testing supports safety objectives only")
    if episode_len < 0 or budget < 0:
        raise ValueError("episode_len and budget must be non-negative")
    rng = np.random.default_rng(config.seed)
    bad = mdp.label_mask(obj.spec.avoid_label)
    spent = 0
    results = []
    while spent < budget:
        start = int(rng.integers(mdp.num_states))
        violated, taken = rollout(mdp, policy, start, min(episode_len, budget - spent), bad, rng)
        spent += max(taken, 1)
        results.append((start, violated))
    return results
