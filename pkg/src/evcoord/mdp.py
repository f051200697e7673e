"""Aggregate-state MDP for a group of charging stations.

The state matrix counts connected EVs by remaining charging slots (row ``i``)
and remaining slots until departure (column ``j``), both 1-based in the text
and 0-based in the arrays.  EVs on the ``d``-th upper diagonal (``j - i == d``)
can postpone charging by ``d`` slots; the main diagonal has no slack left.

Actions are stored as the number of EVs charged on each diagonal
(``action[d]`` in ``0..count[d]``); the fractional view used as model input is
``action[d] / count[d]``.
"""

from __future__ import annotations

import itertools
import zlib
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np

from .config import FleetConfig, penalty_weight

Action = tuple[int, ...]

DEFAULT_ACTION_CAP = 512


class CapacityError(ValueError):
    """More EVs connected than the group has stations."""


class InfeasibleSessionError(ValueError):
    """A session asks for more charging slots than it stays connected."""


class InvalidActionError(ValueError):
    """An action charges more EVs on a diagonal than are present."""


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.int64)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class AggregateState:
    """``(t, x)`` with ``x = counts / n_max``.

    ``stranded`` is the number of EVs that became impossible to finish on the
    transition into this state; they are removed from ``counts`` and only feed
    the penalty term of that transition's cost.
    """

    t: int
    counts: np.ndarray
    n_max: int
    stranded: int = 0

    def __post_init__(self):
        object.__setattr__(self, "counts", _frozen(self.counts))

    @property
    def s_max(self) -> int:
        return self.counts.shape[0]

    @property
    def x(self) -> np.ndarray:
        return self.counts / self.n_max

    @property
    def n_connected(self) -> int:
        return int(self.counts.sum())

    @property
    def is_terminal(self) -> bool:
        return self.t > self.s_max

    @property
    def key(self) -> tuple[int, bytes]:
        return self.t, self.counts.tobytes()

    def __eq__(self, other):
        if not isinstance(other, AggregateState):
            return NotImplemented
        return (
            self.t == other.t
            and self.n_max == other.n_max
            and self.stranded == other.stranded
            and np.array_equal(self.counts, other.counts)
        )

    def __hash__(self):
        return hash((self.t, self.n_max, self.stranded, self.counts.tobytes()))

    def __repr__(self):
        cells = {
            (int(i) + 1, int(j) + 1): int(self.counts[i, j]) for i, j in zip(*np.nonzero(self.counts))
        }
        return f"AggregateState(t={self.t}, n_max={self.n_max}, stranded={self.stranded}, cells={cells})"

    def to_dict(self) -> dict:
        return {
            "t": self.t,
            "n_max": self.n_max,
            "stranded": self.stranded,
            "counts": self.counts.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AggregateState":
        counts = np.asarray(d["counts"], dtype=np.int64)
        s = int(round(np.sqrt(counts.size)))
        return cls(int(d["t"]), counts.reshape(s, s), int(d["n_max"]), int(d.get("stranded", 0)))


def empty_state(s_max: int, n_max: int, t: int = 1) -> AggregateState:
    return AggregateState(t, np.zeros((s_max, s_max), dtype=np.int64), n_max)


def _bin_into(counts: np.ndarray, connected: Iterable[tuple[int, int]], n_max: int) -> None:
    s_max = counts.shape[0]
    for depart, charge in connected:
        if charge < 1 or depart < 1 or depart > s_max:
            raise ValueError(
                f"session (depart={depart}, charge={charge}) outside 1..{s_max} slots"
            )
        if charge > depart:
            raise InfeasibleSessionError(
                f"session needs {charge} charging slots but departs in {depart}"
            )
        counts[charge - 1, depart - 1] += 1
    if counts.sum() > n_max:
        raise CapacityError(f"{int(counts.sum())} EVs connected, capacity is {n_max}")


def bin_sessions(
    connected: Iterable[tuple[int, int]], cfg: FleetConfig, t: int = 1
) -> AggregateState:
    """Bin ``(depart_slots, charge_slots)`` pairs into a normalised state matrix."""
    counts = np.zeros((cfg.s_max, cfg.s_max), dtype=np.int64)
    _bin_into(counts, connected, cfg.n_max)
    return AggregateState(t, counts, cfg.n_max)


def diagonal_counts(s: AggregateState) -> np.ndarray:
    """Number of EVs on each upper diagonal ``d = 0..S_max-1``."""
    return np.array([np.trace(s.counts, offset=d) for d in range(s.s_max)], dtype=np.int64)


def diagonal_totals(s: AggregateState) -> np.ndarray:
    """Normalised EV mass on each upper diagonal."""
    return diagonal_counts(s) / s.n_max


def _to_counts(totals, n_max: int) -> np.ndarray:
    totals = np.asarray(totals, dtype=float)
    counts = np.rint(totals * n_max)
    if np.any(counts < 0) or not np.allclose(counts, totals * n_max, rtol=0, atol=1e-6):
        raise ValueError("diagonal totals must be non-negative multiples of 1/n_max")
    return counts.astype(np.int64)


def count_actions(totals, n_max: int) -> int:
    """Size of the action set: product over diagonals of ``count + 1``.

    Python integers do not overflow, so the exact value is returned however
    large it is.
    """
    counts = _to_counts(totals, n_max)
    out = 1
    for c in counts.tolist():
        out *= c + 1
    return out


def _sample_seed(seed: int, counts: np.ndarray) -> np.random.SeedSequence:
    # same (seed, diagonal counts) -> same candidate set, at train and act time
    return np.random.SeedSequence([seed & 0xFFFFFFFF, zlib.crc32(counts.tobytes())])


def action_candidates(counts: np.ndarray, cap: int = DEFAULT_ACTION_CAP, seed: int = 0) -> np.ndarray:
    """Candidate actions for diagonal ``counts`` as an ``(A, S_max)`` int array.

    Exhaustive (lexicographic) when the action set has at most ``cap``
    members.  Otherwise ``cap`` distinct vectors are drawn uniformly per
    diagonal from a generator seeded by ``seed`` and the counts; the
    charge-everything and charge-only-diagonal-0 actions are always present.
    Rows are sorted lexicographically either way.
    """
    if cap < 1:
        raise ValueError(f"cap must be >= 1, got {cap}")
    counts = np.asarray(counts, dtype=np.int64)
    total = 1
    for c in counts.tolist():
        total *= c + 1
        if total > cap:
            break
    if total <= cap:
        grids = np.meshgrid(*[np.arange(c + 1) for c in counts.tolist()], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1).astype(np.int64)

    minimal = np.zeros_like(counts)
    minimal[0] = counts[0]
    if cap == 1:
        return minimal[None, :]
    rng = np.random.default_rng(_sample_seed(seed, counts))
    chosen = {counts.tobytes(): counts.copy(), minimal.tobytes(): minimal}
    while len(chosen) < cap:
        batch = rng.integers(0, counts + 1, size=(2 * cap, counts.size))
        for row in batch:
            chosen.setdefault(row.tobytes(), row)
            if len(chosen) >= cap:
                break
    out = np.stack(list(chosen.values()))
    order = np.lexsort(out.T[::-1])
    return out[order]


def enumerate_actions(totals, n_max: int, cap: int = DEFAULT_ACTION_CAP, seed: int = 0) -> list[Action]:
    """Actions available for the given diagonal totals, as charged-EV counts."""
    return [tuple(row) for row in action_candidates(_to_counts(totals, n_max), cap, seed).tolist()]


def action_fractions(action: Sequence[int], counts: Sequence[int]) -> np.ndarray:
    """Fraction of each diagonal charged; 0 on empty diagonals."""
    action = np.asarray(action, dtype=float)
    counts = np.asarray(counts, dtype=float)
    out = np.zeros_like(action)
    np.divide(action, counts, out=out, where=counts > 0)
    return out


def charge_all(s: AggregateState) -> Action:
    return tuple(diagonal_counts(s).tolist())


def charge_urgent(s: AggregateState) -> Action:
    """Charge only the EVs without slack (diagonal 0)."""
    a = [0] * s.s_max
    a[0] = int(np.trace(s.counts))
    return tuple(a)


def apply_action(
    s: AggregateState, action: Sequence[int], arrivals: Iterable[tuple[int, int]] = ()
) -> AggregateState:
    """Advance one slot.

    ``action[d]`` EVs of diagonal ``d`` are charged, taken from the cells of
    that diagonal with the most remaining charging (latest departure) first.
    Charged EVs move from ``(i, j)`` to ``(i-1, j-1)``, the others to
    ``(i, j-1)``.  EVs that finish leave; uncharged EVs on diagonal 0 can no
    longer finish and are removed and counted in ``stranded``.  Arrivals of the
    next slot are then binned in.
    """
    n = s.s_max
    action = np.asarray(action, dtype=np.int64)
    if action.shape != (n,):
        raise InvalidActionError(f"action needs {n} entries, got shape {action.shape}")
    counts = s.counts
    charged = np.zeros_like(counts)
    for d in range(n):
        k = int(action[d])
        if k < 0:
            raise InvalidActionError(f"negative charge count on diagonal {d}")
        for i in range(n - d - 1, -1, -1):
            if k == 0:
                break
            take = min(k, int(counts[i, i + d]))
            charged[i, i + d] = take
            k -= take
        if k:
            raise InvalidActionError(
                f"action charges {int(action[d])} EVs on diagonal {d}, only "
                f"{int(np.trace(counts, offset=d))} present"
            )
    idle = counts - charged

    nxt = np.zeros_like(counts)
    # charged (i, j) -> (i-1, j-1); row 0 finishes
    nxt[:-1, :-1] += charged[1:, 1:]
    # idle (i, j) -> (i, j-1); column 0 departs
    nxt[:, :-1] += idle[:, 1:]
    stranded = int(np.trace(idle))
    # idle EVs from the main diagonal land on the first lower diagonal
    lower = np.tril(nxt, k=-1)
    nxt -= lower

    _bin_into(nxt, arrivals, s.n_max)
    return AggregateState(s.t + 1, nxt, s.n_max, stranded)


def demand_cost(s: AggregateState, action: Sequence[int]) -> float:
    return (float(np.sum(action)) / s.n_max) ** 2


def penalty_cost(s_next: AggregateState) -> float:
    return penalty_weight(s_next.n_max, s_next.s_max) * s_next.stranded / s_next.n_max


def cost_of(s: AggregateState, action: Sequence[int], s_next: AggregateState) -> float:
    """Squared normalised load of the slot plus the weighted stranded mass."""
    return demand_cost(s, action) + penalty_cost(s_next)


@dataclass(frozen=True)
class Transition:
    s: AggregateState
    u: Action
    s_next: AggregateState
    cost: float

    def to_dict(self) -> dict:
        return {"s": self.s.to_dict(), "u": list(self.u), "s_next": self.s_next.to_dict(), "cost": self.cost}

    @classmethod
    def from_dict(cls, d: dict) -> "Transition":
        return cls(
            AggregateState.from_dict(d["s"]),
            tuple(int(v) for v in d["u"]),
            AggregateState.from_dict(d["s_next"]),
            float(d["cost"]),
        )


def step(s: AggregateState, action: Sequence[int], arrivals=()) -> Transition:
    action = tuple(int(a) for a in action)
    s_next = apply_action(s, action, arrivals)
    return Transition(s, action, s_next, cost_of(s, action, s_next))


def initial_state(arrivals_by_slot: dict[int, list], cfg: FleetConfig) -> AggregateState:
    return bin_sessions(arrivals_by_slot.get(1, ()), cfg, t=1)


def rollout(
    arrivals_by_slot: dict[int, list],
    cfg: FleetConfig,
    choose: Callable[[AggregateState], Sequence[int]],
) -> list[Transition]:
    """Run ``choose`` from slot 1 until the terminal slot ``S_max + 1``."""
    s = initial_state(arrivals_by_slot, cfg)
    out = []
    while not s.is_terminal:
        tr = step(s, choose(s), arrivals_by_slot.get(s.t + 1, ()))
        out.append(tr)
        s = tr.s_next
    return out


def trajectory_cost(traj) -> float:
    """Total cost of a trajectory, summed exactly in units of ``1 / n_max**2``.

    Summing the per-step floats can land an ulp away from the same total
    reached by a different schedule; the integer sum cannot.
    """
    if not traj:
        return 0.0
    n = traj[0].s.n_max
    m = penalty_weight(n, traj[0].s.s_max)
    units = sum(sum(tr.u) ** 2 + m * n * tr.s_next.stranded for tr in traj)
    return units / n**2


def all_actions(s: AggregateState) -> Iterable[Action]:
    """Every action of ``s``, lexicographically, without a cap."""
    return itertools.product(*[range(c + 1) for c in diagonal_counts(s).tolist()])
