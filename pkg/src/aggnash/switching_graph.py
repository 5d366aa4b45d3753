"""Weighted digraphs, Laplacians and piecewise-constant switching schedules.

Edge convention: ``adjacency[i, j] > 0`` means there is an edge from ``j`` to
``i``, i.e. player ``i`` receives the information of player ``j``.  This is
the only orientation used anywhere in the package.
"""

from __future__ import annotations

import csv
import math
import warnings
from collections import deque
from dataclasses import dataclass
from typing import Iterator, Sequence

import numpy as np

from .errors import InputShapeError, ScheduleExhausted

# Relative slack when comparing segment durations with the dwell time.
_DWELL_RTOL = 1e-12


class PartialCoverageWarning(UserWarning):
    """A finite schedule can only be certified on its covered horizon."""


@dataclass(frozen=True, eq=False)
class WeightedDigraph:
    adjacency: np.ndarray

    def __post_init__(self):
        a = np.array(self.adjacency, dtype=float)
        if a.ndim != 2 or a.shape[0] != a.shape[1]:
            raise InputShapeError("adjacency must be a square matrix")
        if np.any(a < 0):
            raise ValueError("adjacency weights must be nonnegative")
        if np.any(np.diag(a) != 0):
            raise ValueError("self-loops are not allowed (nonzero diagonal)")
        a.setflags(write=False)
        object.__setattr__(self, "adjacency", a)

    @property
    def n_nodes(self) -> int:
        return self.adjacency.shape[0]

    @classmethod
    def from_edges(cls, n_nodes: int, edges, weight: float = 1.0,
                   undirected: bool = False) -> "WeightedDigraph":
        """Build from ``(src, dst)`` pairs; ``dst`` hears ``src``."""
        a = np.zeros((n_nodes, n_nodes))
        for src, dst in edges:
            a[dst, src] = weight
            if undirected:
                a[src, dst] = weight
        return cls(a)

    def __eq__(self, other):
        if not isinstance(other, WeightedDigraph):
            return NotImplemented
        return np.array_equal(self.adjacency, other.adjacency)

    def __hash__(self):
        return hash(self.adjacency.tobytes())


def laplacian(g: WeightedDigraph) -> np.ndarray:
    """L = D - A with D the diagonal of out-degrees ``d_i = sum_j a_ij``."""
    a = g.adjacency
    return np.diag(a.sum(axis=1)) - a


def is_weight_balanced(g: WeightedDigraph, tol: float = 1e-12) -> bool:
    a = g.adjacency
    return bool(np.all(np.abs(a.sum(axis=1) - a.sum(axis=0)) <= tol))


def _reaches_all(a: np.ndarray, root: int) -> bool:
    n = a.shape[0]
    seen = np.zeros(n, dtype=bool)
    seen[root] = True
    queue = deque([root])
    while queue:
        j = queue.popleft()
        # j -> i whenever a[i, j] > 0
        for i in np.flatnonzero(a[:, j] > 0):
            if not seen[i]:
                seen[i] = True
                queue.append(i)
    return bool(seen.all())


def is_connected(g: WeightedDigraph) -> bool:
    """True iff some node reaches every other node along directed paths."""
    return any(_reaches_all(g.adjacency, r) for r in range(g.n_nodes))


def is_strongly_connected(g: WeightedDigraph) -> bool:
    return all(_reaches_all(g.adjacency, r) for r in range(g.n_nodes))


@dataclass(frozen=True, eq=False)
class SwitchingSchedule:
    """Piecewise-constant switching signal over a fixed set of graphs.

    ``segments`` is a sequence of ``(graph_index, duration)``.  With
    ``repeat=True`` the segment list is replayed forever; otherwise the
    schedule ends at ``horizon``.  ``dwell_tau`` defaults to the shortest
    duration.
    """

    graphs: tuple
    segments: tuple
    repeat: bool = True
    dwell_tau: float | None = None

    def __post_init__(self):
        graphs = tuple(g if isinstance(g, WeightedDigraph) else WeightedDigraph(g)
                       for g in self.graphs)
        if not graphs:
            raise ValueError("schedule needs at least one graph")
        n = graphs[0].n_nodes
        if any(g.n_nodes != n for g in graphs):
            raise InputShapeError("all graphs must share the same node set")
        segments = tuple((int(k), float(dur)) for k, dur in self.segments)
        if not segments:
            raise ValueError("schedule needs at least one segment")
        for k, dur in segments:
            if not 0 <= k < len(graphs):
                raise ValueError(f"segment graph index {k} out of range")
            if not dur > 0:
                raise ValueError("segment durations must be positive")
        tau = min(dur for _, dur in segments) if self.dwell_tau is None else float(self.dwell_tau)
        if not tau > 0:
            raise ValueError("dwell time must be positive")
        if any(dur < tau * (1 - _DWELL_RTOL) for _, dur in segments):
            raise ValueError("every segment must last at least the dwell time")
        object.__setattr__(self, "graphs", graphs)
        object.__setattr__(self, "segments", segments)
        object.__setattr__(self, "dwell_tau", tau)
        starts = np.concatenate([[0.0], np.cumsum([d for _, d in segments])])
        object.__setattr__(self, "_starts", starts)

    @property
    def n_nodes(self) -> int:
        return self.graphs[0].n_nodes

    @property
    def period(self) -> float:
        """Duration of one pass through the segment list."""
        return float(self._starts[-1])

    @property
    def horizon(self) -> float:
        return math.inf if self.repeat else self.period

    def _locate(self, t: float) -> tuple[int, int]:
        """(cycle, segment) containing time t, right-continuous."""
        if t < 0:
            raise ValueError("time must be nonnegative")
        if t >= self.horizon:
            raise ScheduleExhausted(f"t={t} is beyond the schedule horizon {self.horizon}")
        cycle = int(t // self.period) if self.repeat else 0
        local = t - cycle * self.period
        k = int(np.searchsorted(self._starts, local, side="right")) - 1
        if k >= len(self.segments):
            cycle, k = cycle + 1, 0
        return cycle, k

    def index_at(self, t: float) -> int:
        """Index of the graph active at time t (sigma is right-continuous)."""
        _, k = self._locate(t)
        return self.segments[k][0]

    def graph_at(self, t: float) -> WeightedDigraph:
        return self.graphs[self.index_at(t)]

    def pieces(self, t0: float, t1: float) -> Iterator[tuple[float, float, int]]:
        """Yield ``(start, end, graph_index)`` constant pieces covering [t0, t1)."""
        if t1 > self.horizon * (1 + 1e-12):
            raise ScheduleExhausted(
                f"interval end {t1} is beyond the schedule horizon {self.horizon}")
        if t1 <= t0:
            return
        cycle, k = self._locate(t0)
        start = t0
        while start < t1:
            end = cycle * self.period + self._starts[k + 1]
            if end <= start:
                # rounding put start on the far edge of segment k
                k += 1
                if k == len(self.segments):
                    cycle, k = cycle + 1, 0
                continue
            end = min(end, t1)
            yield start, end, self.segments[k][0]
            start = end
            k += 1
            if k == len(self.segments):
                if not self.repeat:
                    break
                cycle, k = cycle + 1, 0

    def switching_instants(self, t0: float, t1: float) -> list[float]:
        """Switching instants strictly inside (t0, t1)."""
        return [start for start, _, _ in self.pieces(t0, t1)][1:]

    def to_dict(self) -> dict:
        return {
            "nodes": self.n_nodes,
            "graphs": [g.adjacency.ravel().tolist() for g in self.graphs],
            "segments": [[k, d] for k, d in self.segments],
            "repeat": self.repeat,
            "dwell": self.dwell_tau,
        }

    @classmethod
    def from_dict(cls, data: dict) -> "SwitchingSchedule":
        n = int(data["nodes"])
        graphs = []
        for adj in data["graphs"]:
            a = np.asarray(adj, dtype=float)
            if a.size != n * n:
                raise InputShapeError(f"adjacency must have {n * n} entries")
            graphs.append(WeightedDigraph(a.reshape(n, n)))
        return cls(tuple(graphs), tuple(tuple(s) for s in data["segments"]),
                   bool(data.get("repeat", True)), data.get("dwell"))


def static_schedule(g: WeightedDigraph, duration: float = 1.0) -> SwitchingSchedule:
    return SwitchingSchedule((g,), ((0, duration),), repeat=True)


def union_graph(schedule: SwitchingSchedule, t: float, window: float) -> WeightedDigraph:
    """Edge-set union over [t, t + window); weights combine by elementwise max."""
    if not window > 0:
        raise ValueError("window must be positive")
    a = np.zeros((schedule.n_nodes, schedule.n_nodes))
    for _, _, k in schedule.pieces(t, t + window):
        np.maximum(a, schedule.graphs[k].adjacency, out=a)
    return WeightedDigraph(a)


def _critical_probes(schedule: SwitchingSchedule, window_T: float, lo: float,
                     hi: float, probe_step: float) -> np.ndarray:
    # The set of segments meeting [t, t+T) changes only at switching instants
    # t_j and at t_j - T; probing those points and the midpoints between them
    # visits every distinct window.
    instants = [lo] + schedule.switching_instants(lo, hi + window_T)
    crit = set()
    for tj in instants:
        for c in (tj, tj - window_T):
            if schedule.repeat:
                c = c % schedule.period
            if lo <= c <= hi:
                crit.add(c)
    grid = np.arange(lo, hi + 0.5 * probe_step, probe_step)
    pts = np.unique(np.concatenate([grid[grid <= hi], sorted(crit)]))
    mids = 0.5 * (pts[1:] + pts[:-1])
    return np.unique(np.concatenate([pts, mids]))


def is_jointly_connected(schedule: SwitchingSchedule, window_T: float,
                         probe_step: float | None = None) -> bool:
    """Check that every union graph over a length-``window_T`` window is connected.

    Periodic schedules are probed over one full period, which covers all t.
    Finite schedules are probed on ``[0, horizon - window_T]`` only and emit a
    :class:`PartialCoverageWarning`.
    """
    if not window_T > 0:
        raise ValueError("window_T must be positive")
    if probe_step is None:
        probe_step = schedule.dwell_tau
    if not 0 < probe_step <= schedule.dwell_tau * (1 + _DWELL_RTOL):
        raise ValueError("probe_step must be positive and no larger than the dwell time")
    if schedule.repeat:
        lo, hi = 0.0, schedule.period * (1 - 1e-12)
    else:
        warnings.warn("finite schedule: joint connectivity certified on the covered "
                      "horizon only", PartialCoverageWarning, stacklevel=2)
        lo, hi = 0.0, schedule.horizon - window_T
        if hi < 0:
            return False
    for t in _critical_probes(schedule, window_T, lo, hi, probe_step):
        if not is_connected(union_graph(schedule, float(t), window_T)):
            return False
    return True


def ring_edges(n_nodes: int) -> list[tuple[int, int]]:
    return [(k, (k + 1) % n_nodes) for k in range(n_nodes)]


def complete_graph(n_nodes: int, weight: float = 1.0) -> WeightedDigraph:
    a = np.full((n_nodes, n_nodes), float(weight))
    np.fill_diagonal(a, 0.0)
    return WeightedDigraph(a)


def generate_partition_schedule(n_nodes: int, n_parts: int, segment_len: float,
                                seed: int = 0) -> SwitchingSchedule:
    """Split the edges of an undirected N-ring into ``n_parts`` disjoint graphs.

    The edge order is shuffled with ``seed`` and cut into near-equal groups;
    each group becomes one segment of length ``segment_len`` and the schedule
    repeats.  Every graph has bidirectional unit edges, hence is weight
    balanced, and the union over any ``n_parts * segment_len`` window is the
    full ring.
    """
    if n_nodes < 3:
        raise ValueError("partition schedules need at least 3 nodes")
    if not 1 <= n_parts <= n_nodes:
        raise ValueError(f"n_parts must lie in [1, {n_nodes}]")
    if not segment_len > 0:
        raise ValueError("segment_len must be positive")
    rng = np.random.default_rng(seed)
    edges = ring_edges(n_nodes)
    order = rng.permutation(len(edges))
    graphs = tuple(
        WeightedDigraph.from_edges(n_nodes, [edges[j] for j in sorted(part)], undirected=True)
        for part in np.array_split(order, n_parts)
    )
    return SwitchingSchedule(graphs, tuple((k, segment_len) for k in range(n_parts)),
                             repeat=True, dwell_tau=segment_len)


def write_laplacians_csv(schedule: SwitchingSchedule, path) -> None:
    """One row per Laplacian row: ``graph, row, c_0 .. c_{N-1}``."""
    n = schedule.n_nodes
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["graph", "row"] + [f"c_{j}" for j in range(n)])
        for k, g in enumerate(schedule.graphs):
            for i, row in enumerate(laplacian(g)):
                w.writerow([k, i] + [repr(float(v)) for v in row])


def check_balance(graphs: Sequence[WeightedDigraph], tol: float = 1e-12) -> list[bool]:
    return [is_weight_balanced(g, tol) for g in graphs]
