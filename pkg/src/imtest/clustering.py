"""IMT with clustering: group highly ranked states, test a fraction of each
group by rollouts, and extend the verdict to the whole group.

Cluster verdicts are conservative but *implied*: a FAIL cluster may contain
safe states and a SAFE cluster may hide unsafe ones.  Reports keep these
separate from verdicts proven by the estimates.
"""

from __future__ import annotations

import math
from collections.abc import Iterable
from dataclasses import dataclass, field

import numpy as np

from .engine import (
    EngineConfig,
    EstimatePair,
    Objective,
    RankingTable,
    RunReport,
    SAFETY,
    _closed,
    compute_ranking,
    rollout,
    run_loop,
    sample_and_restrict,
    select_top_m,
)
from .mdp import Mdp, make_sinks
from .policy import PolicyHandle

SAFE = "SAFE"
FAIL = "FAIL"


@dataclass(frozen=True)
class ClusterConfig:
    delta_i: float = 0.8
    kappa: float = 0.2
    zeta: float = 25
    n_test: int = 200
    max_iter: int = 100
    seed: int = 0
    repetitions: int = 1

    def __post_init__(self):
        if not 0 <= self.delta_i <= 1:
            raise ValueError("delta_i must lie in [0, 1]")
        if not 0 < self.kappa <= 1:
            raise ValueError("kappa must lie in (0, 1]")
        if self.zeta < 1:
            raise ValueError("zeta must be at least 1")
        if self.n_test < 0 or self.max_iter < 1 or self.repetitions < 1:
            raise ValueError("n_test must be >= 0, max_iter and repetitions >= 1")

    def num_clusters(self, eligible: int) -> int:
        return max(1, math.ceil(eligible / self.zeta))

    def tested_per_cluster(self, size: int) -> int:
        # round first so that e.g. 0.1 * 30 does not become 4
        return min(size, math.ceil(round(self.kappa * size, 9)))


@dataclass(frozen=True, eq=False)
class ClusterAssignment:
    cluster_of: dict[int, int]
    centroids: np.ndarray

    @property
    def clusters(self) -> dict[int, list[int]]:
        out: dict[int, list[int]] = {}
        for s, c in sorted(self.cluster_of.items()):
            out.setdefault(c, []).append(s)
        return out

    def __len__(self) -> int:
        return len(set(self.cluster_of.values()))

    def __bool__(self) -> bool:
        return bool(self.cluster_of)


@dataclass
class ClusterVerdict:
    verdicts: dict[int, str] = field(default_factory=dict)
    tested: dict[int, list[tuple[int, bool]]] = field(default_factory=dict)


def kmeans(points: np.ndarray, k: int, seed: int, max_iter: int = 100) -> tuple[np.ndarray, np.ndarray]:
    """Lloyd's algorithm with seeded k-means++ initialization.

    Distance ties go to the lowest centroid index.  Empty clusters keep their
    previous centroid.  Returns (labels, centroids).
    """
    n = len(points)
    if k >= n:
        return np.arange(n), points.copy()
    rng = np.random.default_rng(seed)
    centers = [int(rng.integers(n))]
    d2 = np.sum((points - points[centers[0]]) ** 2, axis=1)
    while len(centers) < k:
        total = d2.sum()
        if total <= 0:
            nxt = next(i for i in range(n) if i not in centers)
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        centers.append(nxt)
        d2 = np.minimum(d2, np.sum((points - points[nxt]) ** 2, axis=1))
    centroids = points[centers].astype(float)
    labels = np.full(n, -1)
    for _ in range(max_iter):
        dist = ((points[:, None, :] - centroids[None, :, :]) ** 2).sum(axis=2)
        new = np.argmin(dist, axis=1)
        if np.array_equal(new, labels):
            break
        labels = new
        for c in range(k):
            members = points[labels == c]
            if len(members):
                centroids[c] = members.mean(axis=0)
    return labels, centroids


def _minmax(x: np.ndarray) -> np.ndarray:
    lo, hi = x.min(axis=0), x.max(axis=0)
    span = np.where(hi > lo, hi - lo, 1.0)
    return (x - lo) / span


def _scale_features(x: np.ndarray) -> np.ndarray:
    # one shared span for all feature coordinates, so distances keep their
    # proportions (a 10-wide grid should not look as narrow as a 2-tall one)
    lo = x.min(axis=0)
    span = float((x.max(axis=0) - lo).max()) if x.size else 0.0
    return (x - lo) / (span if span > 0 else 1.0)


def cluster_high_ranked(ranking: RankingTable, features: np.ndarray, cfg: ClusterConfig,
                        exclude: Iterable[int] = (), rank_epsilon: float = 1e-9) -> ClusterAssignment:
    """Cluster open states whose rank, divided by the maximum rank, exceeds ``delta_i``."""
    rank = ranking.rank
    top = float(rank.max()) if len(rank) else 0.0
    if top <= rank_epsilon:
        return ClusterAssignment({}, np.zeros((0, 0)))
    closed = set(exclude)
    norm = rank / top
    eligible = [s for s in range(len(rank)) if s not in closed and rank[s] > rank_epsilon and norm[s] > cfg.delta_i]
    if not eligible:
        return ClusterAssignment({}, np.zeros((0, 0)))
    if features is None:
        raise ValueError("clustering needs per-state feature vectors")
    feats = _scale_features(np.asarray(features, dtype=float)[eligible])
    vectors = np.column_stack([feats, _minmax(norm[eligible][:, None])])
    labels, centroids = kmeans(vectors, cfg.num_clusters(len(eligible)), cfg.seed, cfg.max_iter)
    # relabel densely in order of first appearance so that empty clusters vanish
    dense: dict[int, int] = {}
    for lab in labels:
        dense.setdefault(int(lab), len(dense))
    order = sorted(dense, key=dense.get)
    return ClusterAssignment({s: dense[int(lab)] for s, lab in zip(eligible, labels)}, centroids[order])


def execute_cluster_tests(mdp: Mdp, policy: PolicyHandle, assignment: ClusterAssignment, cfg: ClusterConfig,
                          rng: np.random.Generator, avoid_label: str = "bad") -> ClusterVerdict:
    """Roll out the policy from a ``kappa`` fraction of every cluster.

    ``mdp`` should be the unrestricted model: sinks are an analysis device,
    not environment behaviour.
    """
    if not assignment:
        raise ValueError("nothing to test: empty cluster assignment")
    bad = mdp.label_mask(avoid_label)
    out = ClusterVerdict()
    for cid, members in sorted(assignment.clusters.items()):
        k = cfg.tested_per_cluster(len(members))
        picked = sorted(rng.choice(members, size=k, replace=False).tolist())
        results = []
        for s in picked:
            violated = any(rollout(mdp, policy, s, cfg.n_test, bad, rng)[0] for _ in range(cfg.repetitions))
            results.append((s, violated))
        out.tested[cid] = results
        out.verdicts[cid] = FAIL if any(v for _, v in results) else SAFE
    return out


def apply_cluster_restriction(mdp: Mdp, assignment: ClusterAssignment, verdicts: ClusterVerdict) -> Mdp:
    """Turn every clustered state into a sink; FAIL clusters become bad sinks."""
    clusters = assignment.clusters
    safe = [s for c, v in verdicts.verdicts.items() if v == SAFE for s in clusters[c]]
    fail = [s for c, v in verdicts.verdicts.items() if v == FAIL for s in clusters[c]]
    return make_sinks(make_sinks(mdp, safe, mark_bad=False), fail, mark_bad=True)


def run_imtc(mdp: Mdp, policy: PolicyHandle, obj: Objective, engine_cfg: EngineConfig,
             cluster_cfg: ClusterConfig) -> RunReport:
    if obj.kind != SAFETY:
        raise ValueError("IMT with clustering supports safety objectives only")
    if mdp.features is None:
        raise ValueError("IMT with clustering needs per-state feature vectors")
    original = mdp
    rng = np.random.default_rng(cluster_cfg.seed)

    def refine(st, est: EstimatePair, remaining):
        ranking = compute_ranking(st.mdp, est)
        closed = _closed(st.mdp)
        assignment = cluster_high_ranked(ranking, original.features, cluster_cfg, closed, engine_cfg.rank_epsilon)
        if not assignment:
            sample_and_restrict(st, select_top_m(ranking, engine_cfg, closed, fallback=True))
            return
        verdict = execute_cluster_tests(original, policy, assignment, cluster_cfg, rng, obj.spec.avoid_label)
        st.mdp = apply_cluster_restriction(st.mdp, assignment, verdict)
        clusters = assignment.clusters
        to_safe = {s for c, v in verdict.verdicts.items() if v == SAFE for s in clusters[c]}
        to_fail = {s for c, v in verdict.verdicts.items() if v == FAIL for s in clusters[c]}
        before = st.verdicts
        st.verdicts = before.with_moves(to_safe, to_fail)
        st.report.implied_safe |= set(st.verdicts.safe - before.safe)
        st.report.implied_failure |= set(st.verdicts.failure - before.failure)
        st.report.cluster_log.append((assignment, verdict))

    return run_loop(mdp, policy, obj, engine_cfg, "imtc", refine, count=lambda p: p.calls)
