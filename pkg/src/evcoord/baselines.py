"""Reference policies: charge-on-arrival, the perfect-foresight optimum, and
exact backward induction over the aggregate decision tree."""

from __future__ import annotations

import csv
import io
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FleetConfig, penalty_weight
from .mdp import (
    AggregateState,
    Transition,
    all_actions,
    apply_action,
    charge_all,
    initial_state,
    rollout,
    trajectory_cost,
)


class InfeasibleDayError(ValueError):
    """A day contains a request that cannot be met before departure."""


class NodeBudgetExceeded(RuntimeError):
    """The decision tree has more states than the caller allowed."""


def bau_rollout(day, cfg: FleetConfig) -> tuple[list[Transition], float]:
    """Charge every connected EV at full power until it is done."""
    traj = rollout(day.arrivals_by_slot(cfg), cfg, charge_all)
    return traj, trajectory_cost(traj)


# ---------------------------------------------------------------------------
# offline optimum as a convex-cost flow


@dataclass
class Schedule:
    """Per-slot charging load and the slots assigned to each session."""

    loads: np.ndarray
    ev_slots: list[list[int]] = field(default_factory=list)
    n_max: int = 1

    @property
    def cost(self) -> float:
        return int(np.sum(self.loads.astype(np.int64) ** 2)) / self.n_max**2

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["slot", "charged_count"])
        for k, load in enumerate(self.loads.tolist(), start=1):
            w.writerow([k, load])
        return buf.getvalue()

    def write_csv(self, path: str | Path) -> None:
        Path(path).write_text(self.to_csv(), encoding="utf-8")


class _MinCostFlow:
    def __init__(self, n: int):
        self.graph: list[list[list[int]]] = [[] for _ in range(n)]

    def add_edge(self, u: int, v: int, cap: int, cost: int) -> None:
        # edge: [to, cap, cost, index of reverse edge]
        self.graph[u].append([v, cap, cost, len(self.graph[v])])
        self.graph[v].append([u, 0, -cost, len(self.graph[u]) - 1])

    def solve(self, source: int, sink: int, demand: int) -> int:
        """Send ``demand`` units by successive shortest paths; returns the cost."""
        n = len(self.graph)
        total = 0
        flow = 0
        while flow < demand:
            dist = [None] * n
            prev: list[tuple[int, int] | None] = [None] * n
            in_queue = [False] * n
            dist[source] = 0
            queue = deque([source])
            while queue:
                u = queue.popleft()
                in_queue[u] = False
                for idx, (v, cap, cost, _) in enumerate(self.graph[u]):
                    if cap > 0 and (dist[v] is None or dist[u] + cost < dist[v]):
                        dist[v] = dist[u] + cost
                        prev[v] = (u, idx)
                        if not in_queue[v]:
                            queue.append(v)
                            in_queue[v] = True
            if dist[sink] is None:
                raise InfeasibleDayError(f"only {flow} of {demand} charging slots can be scheduled")
            # every augmenting path is bottlenecked by a unit-capacity arc
            v = sink
            while v != source:
                u, idx = prev[v]
                edge = self.graph[u][idx]
                edge[1] -= 1
                self.graph[v][edge[3]][1] += 1
                v = u
            total += dist[sink]
            flow += 1
        return total


def offline_optimum(day, cfg: FleetConfig) -> tuple[Schedule, float]:
    """Minimum of the summed squared normalised loads with full knowledge of the day.

    Each session needs ``charge_slots`` distinct slots between its arrival
    slot and its departure.  Unit charging increments are routed through a
    flow network whose slot-to-sink arcs cost ``1, 3, 5, ...`` (the marginal
    increase of a squared load), which makes the integral min-cost flow an
    exact minimiser of the separable convex objective.
    """
    triples = day.slot_triples(cfg)
    s_max = cfg.s_max
    n_ev = len(triples)
    source, sink = 0, 1 + n_ev + s_max
    net = _MinCostFlow(sink + 1)
    demand = 0
    for e, (slot, depart, charge) in enumerate(triples, start=1):
        last = min(slot + depart - 1, s_max)
        if charge > last - slot + 1:
            raise InfeasibleDayError(
                f"session {e} needs {charge} slots but has {last - slot + 1}"
            )
        net.add_edge(source, e, charge, 0)
        for k in range(slot, last + 1):
            net.add_edge(e, n_ev + k, 1, 0)
        demand += charge
    for k in range(1, s_max + 1):
        for m in range(1, n_ev + 1):
            net.add_edge(n_ev + k, sink, 1, 2 * m - 1)
    total = net.solve(source, sink, demand)

    loads = np.zeros(s_max, dtype=np.int64)
    ev_slots = []
    for e in range(1, n_ev + 1):
        used = [v - n_ev for v, cap, cost, _ in net.graph[e] if n_ev < v < sink and cap == 0]
        ev_slots.append(sorted(used))
        for k in used:
            loads[k - 1] += 1
    sched = Schedule(loads, ev_slots, cfg.n_max)
    assert int(np.sum(loads**2)) == total
    return sched, sched.cost


# ---------------------------------------------------------------------------
# exhaustive dynamic programming


@dataclass
class DPResult:
    value: float
    action: tuple[int, ...]
    optimal_actions: list[tuple[int, ...]]
    nodes: int
    values: dict = field(default_factory=dict, repr=False)

    def __iter__(self):
        yield self.value
        yield self.action


def _int_cost(s: AggregateState, action, s_next: AggregateState) -> int:
    # cost in units of 1 / n_max**2 so both oracles compare exactly
    n = s.n_max
    return int(sum(action)) ** 2 + penalty_weight(n, s.s_max) * n * s_next.stranded


def dp_oracle(day, cfg: FleetConfig, max_nodes: int = 200_000) -> DPResult:
    """Backward induction over every action of every reachable state.

    Values are memoised on ``(t, counts)``.  Raises
    :class:`NodeBudgetExceeded` once more than ``max_nodes`` states are
    expanded.
    """
    arrivals = day.arrivals_by_slot(cfg)
    return dp_solve(initial_state(arrivals, cfg), arrivals, max_nodes)


def dp_solve(root: AggregateState, arrivals: dict, max_nodes: int = 200_000) -> DPResult:
    memo: dict = {}

    def value(s: AggregateState) -> int:
        if s.is_terminal:
            return 0
        key = s.key
        if key in memo:
            return memo[key][0]
        if len(memo) >= max_nodes:
            raise NodeBudgetExceeded(f"more than {max_nodes} states in the decision tree")
        incoming = arrivals.get(s.t + 1, ())
        best = None
        best_actions = []
        for a in all_actions(s):
            nxt = apply_action(s, a, incoming)
            v = _int_cost(s, a, nxt) + value(nxt)
            if best is None or v < best:
                best, best_actions = v, [a]
            elif v == best:
                best_actions.append(a)
        memo[key] = (best, best_actions)
        return best

    n2 = root.n_max**2
    if root.is_terminal:
        return DPResult(0.0, (), [()], 0)
    total = value(root)
    _, actions = memo[root.key]
    values = {k: v / n2 for k, (v, _) in memo.items()}
    return DPResult(total / n2, actions[0], actions, len(memo), values)
