"""Feedback aggregation: per-rater averaging and max-flow (NetFlow) scoring.

Interaction edges point from the rated seller to the rating buyer, so trust
flows from a subject towards the evaluators that dealt with it. Capacities
are integers (token amount times rating in thousandths), which keeps the
max-flow exact.
"""
from __future__ import annotations

from collections import defaultdict, deque
from enum import Enum
from fractions import Fraction
from typing import Dict, Hashable, Iterable, List, Mapping, Sequence, Tuple

import numpy as np
from numba import njit

from .trade import Feedback

INT64_SAFE = 2 ** 62


class Trust(str, Enum):
    TRUSTED = "Trusted"
    DISTRUSTED = "Distrusted"


class KeyMismatch(ValueError):
    pass


def _clamp(x: float) -> float:
    return 0.0 if x < 0 else 1.0 if x > 1 else x


def aggregate_average(feedbacks: Iterable[Feedback], dedup_policy: str = "per_rater") -> float:
    """Mean of per-rater means; a subject nobody rated scores 0.

    ``dedup_policy="none"`` averages raw ratings instead, which lets one rater
    swamp the score by repetition.
    """
    by_rater: Dict[bytes, List[int]] = defaultdict(list)
    for fb in feedbacks:
        by_rater[fb.rater].append(fb.rating)
    if not by_rater:
        return 0.0
    if dedup_policy == "none":
        flat = [r for rs in by_rater.values() for r in rs]
        return float(Fraction(sum(flat), len(flat) * 1000))
    if dedup_policy != "per_rater":
        raise ValueError(f"unknown dedup policy {dedup_policy!r}")
    means = [Fraction(sum(rs), len(rs)) for rs in by_rater.values()]
    return float(sum(means) / (len(means) * 1000))


class InteractionGraph:
    """Directed integer-capacity graph; parallel contributions accumulate."""

    def __init__(self):
        self.vertices: Dict[Hashable, int] = {}
        self.capacity: Dict[Tuple[Hashable, Hashable], int] = defaultdict(int)

    def add_vertex(self, v: Hashable) -> int:
        idx = self.vertices.get(v)
        if idx is None:
            idx = self.vertices[v] = len(self.vertices)
        return idx

    def add_edge(self, src: Hashable, dst: Hashable, capacity: int) -> None:
        if capacity < 0:
            raise ValueError("capacity must be non-negative")
        if src == dst:
            return
        self.add_vertex(src)
        self.add_vertex(dst)
        if capacity:
            self.capacity[(src, dst)] += int(capacity)

    @classmethod
    def from_feedback(cls, feedbacks: Iterable[Feedback], vertices: Iterable[Hashable] = ()) -> "InteractionGraph":
        g = cls()
        for v in vertices:
            g.add_vertex(v)
        for fb in feedbacks:
            g.add_edge(fb.subject, fb.rater, fb.amount * fb.rating)
        return g

    @classmethod
    def from_edges(cls, edges: Iterable[Tuple[Hashable, Hashable, int]]) -> "InteractionGraph":
        g = cls()
        for s, d, c in edges:
            g.add_edge(s, d, c)
        return g

    def out_capacity(self, v: Hashable) -> int:
        return sum(c for (s, _), c in self.capacity.items() if s == v)

    def edges(self) -> List[Tuple[Hashable, Hashable, int]]:
        return sorted((s, d, c) for (s, d), c in self.capacity.items() if c)

    def to_edgelist(self) -> str:
        def fmt(v):
            return v.hex() if isinstance(v, bytes) else str(v)

        return "".join(f"{fmt(s)} {fmt(d)} {c}\n" for s, d, c in self.edges())

    @classmethod
    def from_edgelist(cls, text: str) -> "InteractionGraph":
        g = cls()
        for line in text.splitlines():
            if not line.strip() or line.startswith("#"):
                continue
            s, d, c = line.split()
            g.add_edge(bytes.fromhex(s), bytes.fromhex(d), int(c))
        return g


def edmonds_karp(n: int, caps: Mapping[Tuple[int, int], int], source: int, sink: int) -> int:
    """Plain BFS augmenting-path max-flow on integer capacities."""
    residual: Dict[int, Dict[int, int]] = defaultdict(lambda: defaultdict(int))
    for (u, v), c in caps.items():
        residual[u][v] += c
        residual[v][u] += 0
    flow = 0
    while True:
        parent = {source: None}
        q = deque([source])
        while q and sink not in parent:
            u = q.popleft()
            for v, c in residual[u].items():
                if c > 0 and v not in parent:
                    parent[v] = u
                    q.append(v)
        if sink not in parent:
            return flow
        bottleneck = None
        v = sink
        while parent[v] is not None:
            u = parent[v]
            bottleneck = residual[u][v] if bottleneck is None else min(bottleneck, residual[u][v])
            v = u
        v = sink
        while parent[v] is not None:
            u = parent[v]
            residual[u][v] -= bottleneck
            residual[v][u] += bottleneck
            v = u
        flow += bottleneck


@njit(cache=True)
def _augment(indptr, heads, cap, rev, s, t, bound, flow, parent, queue):
    """Edmonds-Karp on a residual CSR graph; stops early once ``bound`` is met."""
    n = indptr.shape[0] - 1
    for i in range(flow.shape[0]):
        flow[i] = 0
    total = 0
    while total < bound:
        for i in range(n):
            parent[i] = -1
        parent[s] = -2
        head = 0
        tail = 1
        queue[0] = s
        found = False
        while head < tail and not found:
            u = queue[head]
            head += 1
            for e in range(indptr[u], indptr[u + 1]):
                v = heads[e]
                if parent[v] == -1 and cap[e] - flow[e] > 0:
                    parent[v] = e
                    if v == t:
                        found = True
                        break
                    queue[tail] = v
                    tail += 1
        if not found:
            break
        push = -1
        v = t
        while v != s:
            e = parent[v]
            r = cap[e] - flow[e]
            if push < 0 or r < push:
                push = r
            v = heads[rev[e]]
        v = t
        while v != s:
            e = parent[v]
            flow[e] += push
            flow[rev[e]] -= push
            v = heads[rev[e]]
        total += push
    return total


@njit(cache=True)
def _flows_into(indptr, heads, cap, rev, t, sources, bounds, out):
    n = indptr.shape[0] - 1
    flow = np.zeros(heads.shape[0], np.int64)
    parent = np.empty(n, np.int64)
    queue = np.empty(n, np.int64)
    for i in range(sources.shape[0]):
        if bounds[i] <= 0:
            out[i] = 0
        else:
            out[i] = _augment(indptr, heads, cap, rev, sources[i], t, bounds[i], flow, parent, queue)


class NetFlowScorer:
    """Holds the residual graph in CSR form so many (evaluator, subject) pairs are cheap."""

    def __init__(self, graph: InteractionGraph):
        self.graph = graph
        self.index = dict(graph.vertices)
        n = self.n = len(self.index)
        arcs = sorted((self.index[a], self.index[b], c) for (a, b), c in graph.capacity.items() if c)
        self.caps = {(u, v): c for u, v, c in arcs}
        self.out_cap = [0] * n
        self.in_cap = [0] * n
        for u, v, c in arcs:
            self.out_cap[u] += c
            self.in_cap[v] += c
        self.native = sum(self.out_cap) < INT64_SAFE
        slots: List[List[Tuple[int, int, int]]] = [[] for _ in range(n)]
        for k, (u, v, c) in enumerate(arcs):
            slots[u].append((v, c, 2 * k))
            slots[v].append((u, 0, 2 * k + 1))
        indptr, heads, caps, where = [0], [], [], {}
        for u in range(n):
            for v, c, key in slots[u]:
                where[key] = len(heads)
                heads.append(v)
                caps.append(c)
            indptr.append(len(heads))
        rev = [0] * len(heads)
        for k in range(len(arcs)):
            a, b = where[2 * k], where[2 * k + 1]
            rev[a], rev[b] = b, a
        self._csr = tuple(np.array(x, dtype=np.int64) for x in (indptr, heads, caps if self.native else [0] * len(caps), rev))
        self._succ: Dict[int, List[int]] = defaultdict(list)
        for u, v, _ in arcs:
            self._succ[u].append(v)
        self._reach: Dict[int, frozenset] = {}

    def _reachable(self, src: int) -> frozenset:
        hit = self._reach.get(src)
        if hit is None:
            seen = {src}
            stack = [src]
            while stack:
                u = stack.pop()
                for v in self._succ.get(u, ()):
                    if v not in seen:
                        seen.add(v)
                        stack.append(v)
            hit = self._reach[src] = frozenset(seen)
        return hit

    def flows_into(self, evaluator: Hashable, subjects: Sequence[Hashable]) -> List[int]:
        """Max-flow from each subject to ``evaluator``."""
        t = self.index.get(evaluator)
        out = [0] * len(subjects)
        if t is None:
            return out
        todo = []
        for i, subj in enumerate(subjects):
            s = self.index.get(subj)
            if s is not None and s != t and t in self._reachable(s):
                todo.append((i, s, min(self.out_cap[s], self.in_cap[t])))
        if not todo:
            return out
        if not self.native:
            for i, s, _ in todo:
                out[i] = edmonds_karp(self.n, self.caps, s, t)
            return out
        sources = np.array([s for _, s, _ in todo], dtype=np.int64)
        bounds = np.array([b for _, _, b in todo], dtype=np.int64)
        res = np.zeros(len(todo), dtype=np.int64)
        _flows_into(*self._csr[:3], self._csr[3], t, sources, bounds, res)
        for (i, _, _), f in zip(todo, res.tolist()):
            out[i] = f
        return out

    def max_flow(self, subject: Hashable, evaluator: Hashable) -> int:
        return self.flows_into(evaluator, [subject])[0]

    def scores(self, evaluator: Hashable, subjects: Sequence[Hashable]) -> List[float]:
        t = self.index.get(evaluator)
        denom = 0 if t is None else self.out_cap[t]
        if denom == 0:
            return [0.0] * len(subjects)
        flows = self.flows_into(evaluator, subjects)
        return [0.0 if s == evaluator else _clamp(f / denom) for s, f in zip(subjects, flows)]

    def score(self, evaluator: Hashable, subject: Hashable) -> float:
        return self.scores(evaluator, [subject])[0]


def netflow_score(graph: InteractionGraph, evaluator: Hashable, subject: Hashable) -> float:
    return NetFlowScorer(graph).score(evaluator, subject)


def classify(score: float, threshold: float = 0.5) -> Trust:
    if not 0.0 <= threshold <= 1.0:
        raise ValueError("threshold must lie in [0, 1]")
    return Trust.TRUSTED if score > threshold else Trust.DISTRUSTED


def confusion(predictions: Mapping, truth: Mapping, positive=Trust.DISTRUSTED) -> Tuple[int, int, int, int]:
    """(tp, fp, fn, tn) with ``positive`` as the detected class."""
    if set(predictions) != set(truth):
        raise KeyMismatch("prediction and truth cover different nodes")
    tp = fp = fn = tn = 0
    for k, p in predictions.items():
        hit, real = p == positive, truth[k] == positive
        if hit and real:
            tp += 1
        elif hit:
            fp += 1
        elif real:
            fn += 1
        else:
            tn += 1
    return tp, fp, fn, tn


def fscore_from_counts(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0:
        return 0.0
    return 2 * precision * recall / (precision + recall)


def fscore(predictions: Mapping, truth: Mapping, positive=Trust.DISTRUSTED) -> float:
    tp, fp, fn, _ = confusion(predictions, truth, positive)
    return fscore_from_counts(tp, fp, fn)


def median(values: Sequence[float]) -> float:
    vals = sorted(values)
    if not vals:
        return 0.0
    mid = len(vals) // 2
    return vals[mid] if len(vals) % 2 else (vals[mid - 1] + vals[mid]) / 2


def calibrated_netflow(
    scorer: NetFlowScorer,
    evaluators: Sequence[Hashable],
    subjects: Sequence[Hashable],
    reference: Sequence[Hashable],
) -> Dict[Hashable, float]:
    """Per evaluator, divide each score by the median over ``reference`` subjects, then average.

    Raw NetFlow values depend on how much each evaluator itself traded, so a
    fixed threshold means little until they are put on a common scale.
    """
    totals: Dict[Hashable, float] = {s: 0.0 for s in subjects}
    ref = set(reference)
    for e in evaluators:
        others = [s for s in subjects if s != e]
        raw = dict(zip(others, scorer.scores(e, others)))
        scale = median([v for s, v in raw.items() if s in ref])
        for s, v in raw.items():
            totals[s] += _clamp(v / scale) if scale > 0 else 0.0
    counts = {s: sum(1 for e in evaluators if e != s) for s in subjects}
    return {s: (totals[s] / counts[s] if counts[s] else 0.0) for s in subjects}


def average_scores(feedbacks: Iterable[Feedback], subjects: Iterable[Hashable]) -> Dict[Hashable, float]:
    by_subject: Dict[Hashable, List[Feedback]] = defaultdict(list)
    for fb in feedbacks:
        by_subject[fb.subject].append(fb)
    return {s: aggregate_average(by_subject.get(s, ())) for s in subjects}
