"""Experience collection and fitted Q-iteration."""

from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .config import FleetConfig
from .mdp import (
    DEFAULT_ACTION_CAP,
    Action,
    AggregateState,
    CapacityError,
    InfeasibleSessionError,
    Transition,
    action_candidates,
    cost_of,
    diagonal_counts,
    initial_state,
    step,
)
from .regressors import MLP, ExactTable, Regressor, RegressorDivergence

log = logging.getLogger(__name__)

EXPERIENCE_VERSION = 1
POLICY_VERSION = 1


def feature_length(s_max: int) -> int:
    return s_max * s_max + s_max + 1


def encode(s: AggregateState, u) -> np.ndarray:
    """``[t scaled to [0, 1], x row-major, charged fraction per diagonal]``."""
    return encode_actions(s, np.asarray(u, dtype=np.int64)[None, :])[0]


def encode_actions(s: AggregateState, actions: np.ndarray) -> np.ndarray:
    """Features of one state paired with each row of ``actions``."""
    n = s.s_max
    actions = np.asarray(actions, dtype=np.float64)
    out = np.empty((actions.shape[0], feature_length(n)))
    out[:, 0] = (s.t - 1) / n
    out[:, 1 : 1 + n * n] = s.x.ravel()
    counts = diagonal_counts(s).astype(np.float64)
    frac = np.zeros_like(actions)
    np.divide(actions, counts, out=frac, where=counts > 0)
    out[:, 1 + n * n :] = frac
    return out


@dataclass
class ExperienceSet:
    transitions: list[Transition]
    meta: dict = field(default_factory=dict)

    def __len__(self):
        return len(self.transitions)

    def validate(self, atol: float = 1e-12) -> None:
        for n, tr in enumerate(self.transitions):
            expect = cost_of(tr.s, tr.u, tr.s_next)
            if abs(expect - tr.cost) > atol:
                raise ValueError(f"transition {n}: stored cost {tr.cost} != recomputed {expect}")

    def save(self, path: str | Path) -> None:
        """JSON lines: a header line, then one transition per line."""
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(
                json.dumps(
                    {"format": "evcoord-experience", "version": EXPERIENCE_VERSION, "meta": self.meta},
                    sort_keys=True,
                )
                + "\n"
            )
            for tr in self.transitions:
                fh.write(json.dumps(tr.to_dict(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ExperienceSet":
        with open(path, encoding="utf-8") as fh:
            head = json.loads(fh.readline())
            if head.get("format") != "evcoord-experience":
                raise ValueError(f"{path}: not an experience file")
            if head.get("version") != EXPERIENCE_VERSION:
                raise ValueError(f"{path}: unsupported version {head.get('version')}")
            transitions = [Transition.from_dict(json.loads(line)) for line in fh if line.strip()]
        out = cls(transitions, head.get("meta", {}))
        out.validate()
        return out


class _DayModel:
    """Memoised dynamics of one known day, shared by all its trajectories."""

    def __init__(self, day, cfg: FleetConfig, action_cap: int, seed: int):
        self.arrivals = day.arrivals_by_slot(cfg)
        self.root = initial_state(self.arrivals, cfg)
        self.cap = action_cap
        self.seed = seed
        self._cands: dict = {}
        self._steps: dict = {}

    def candidates(self, s: AggregateState) -> np.ndarray:
        k = s.key
        c = self._cands.get(k)
        if c is None:
            c = self._cands[k] = action_candidates(diagonal_counts(s), self.cap, self.seed)
        return c

    def step(self, s: AggregateState, action: Action) -> Transition:
        k = (s.key, action)
        tr = self._steps.get(k)
        if tr is None:
            tr = self._steps[k] = step(s, action, self.arrivals.get(s.t + 1, ()))
        return tr


def collect_experience(
    days,
    cfg: FleetConfig,
    trajectories_per_day: int,
    seed: int = 0,
    action_cap: int = DEFAULT_ACTION_CAP,
) -> ExperienceSet:
    """Roll uniformly random actions from each day's first slot to the terminal slot."""
    if trajectories_per_day < 1:
        raise ValueError("trajectories_per_day must be >= 1")
    days = list(days)
    if not days:
        raise ValueError("no days to collect experience from")
    rng = np.random.default_rng(seed)
    out: list[Transition] = []
    skipped = []
    for day in days:
        try:
            model = _DayModel(day, cfg, action_cap, seed)
            for _ in range(trajectories_per_day):
                s = model.root
                while not s.is_terminal:
                    cands = model.candidates(s)
                    a = tuple(cands[rng.integers(len(cands))].tolist())
                    tr = model.step(s, a)
                    out.append(tr)
                    s = tr.s_next
        except (CapacityError, InfeasibleSessionError) as exc:
            warnings.warn(f"skipping {day.date}: {exc}")
            skipped.append(str(day.date))
    meta = {
        "seed": seed,
        "trajectories_per_day": trajectories_per_day,
        "action_cap": action_cap,
        "first_day": str(days[0].date),
        "last_day": str(days[-1].date),
        "n_days": len(days),
        "skipped_days": skipped,
        "s_max": cfg.s_max,
        "n_max": cfg.n_max,
    }
    return ExperienceSet(out, meta)


def collect_exhaustive(day, cfg: FleetConfig, action_cap: int = DEFAULT_ACTION_CAP) -> ExperienceSet:
    """Every (state, action) pair of a day's decision tree, each once."""
    model = _DayModel(day, cfg, action_cap, 0)
    out = []
    seen = {model.root.key}
    frontier = [model.root]
    while frontier:
        nxt_frontier = []
        for s in frontier:
            if s.is_terminal:
                continue
            for row in model.candidates(s).tolist():
                tr = model.step(s, tuple(row))
                out.append(tr)
                if tr.s_next.key not in seen:
                    seen.add(tr.s_next.key)
                    nxt_frontier.append(tr.s_next)
        frontier = nxt_frontier
    return ExperienceSet(out, {"exhaustive": True, "day": str(day.date), "action_cap": action_cap})


@dataclass
class Policy:
    """Greedy policy over a trained Q-function."""

    regressor: Regressor
    action_cap: int = DEFAULT_ACTION_CAP
    seed: int = 0
    meta: dict = field(default_factory=dict)

    def q_values(self, s: AggregateState) -> tuple[np.ndarray, np.ndarray]:
        cands = action_candidates(diagonal_counts(s), self.action_cap, self.seed)
        return cands, self.regressor.predict(encode_actions(s, cands))

    def act(self, s: AggregateState) -> Action:
        cands = action_candidates(diagonal_counts(s), self.action_cap, self.seed)
        if len(cands) == 1:
            return tuple(cands[0].tolist())
        q = self.regressor.predict(encode_actions(s, cands))
        # rows are lexicographically sorted, argmin keeps the first minimiser
        return tuple(cands[int(np.argmin(q))].tolist())

    __call__ = act

    def save(self, path: str | Path) -> None:
        path = Path(path)
        head = {
            "format": "evcoord-policy",
            "version": POLICY_VERSION,
            "action_cap": self.action_cap,
            "seed": self.seed,
            "meta": self.meta,
        }
        if isinstance(self.regressor, MLP):
            weights = path.with_name(path.name + ".weights")
            self.regressor.save(weights)
            head["regressor"] = {"kind": "mlp", "weights": weights.name}
        elif isinstance(self.regressor, ExactTable):
            head["regressor"] = self.regressor.to_dict()
        else:
            raise TypeError(f"cannot save regressor {type(self.regressor).__name__}")
        path.write_text(json.dumps(head, sort_keys=True, indent=1) + "\n", encoding="utf-8")

    @classmethod
    def load(cls, path: str | Path) -> "Policy":
        path = Path(path)
        head = json.loads(path.read_text(encoding="utf-8"))
        if head.get("format") != "evcoord-policy" or head.get("version") != POLICY_VERSION:
            raise ValueError(f"{path}: not a policy file")
        reg = head["regressor"]
        if reg["kind"] == "mlp":
            regressor: Regressor = MLP.load(path.with_name(reg["weights"]))
        elif reg["kind"] == "exact":
            regressor = ExactTable.from_dict(reg)
        else:
            raise ValueError(f"unknown regressor kind {reg['kind']!r}")
        return cls(regressor, head["action_cap"], head["seed"], head.get("meta", {}))


def act(policy: Policy, s: AggregateState) -> Action:
    return policy.act(s)


def _deduplicate(transitions) -> tuple[list[Transition], np.ndarray]:
    """Identical tuples always get identical targets; keep one with a count."""
    index: dict = {}
    out: list[Transition] = []
    counts: list[int] = []
    for tr in transitions:
        k = (tr.s.key, tr.u, tr.s_next.key, tr.s_next.stranded, tr.cost)
        j = index.get(k)
        if j is None:
            index[k] = len(out)
            out.append(tr)
            counts.append(1)
        else:
            counts[j] += 1
    return out, np.asarray(counts, dtype=np.float64)


def _next_state_table(transitions, action_cap: int, seed: int):
    """Group transitions by next state and cache each state's candidate actions."""
    index: dict = {}
    states: list[AggregateState] = []
    which = np.empty(len(transitions), dtype=np.int64)
    for n, tr in enumerate(transitions):
        s2 = tr.s_next
        if s2.is_terminal:
            which[n] = -1
            continue
        k = s2.key
        j = index.get(k)
        if j is None:
            j = index[k] = len(states)
            states.append(s2)
        which[n] = j
    cands = [action_candidates(diagonal_counts(s), action_cap, seed) for s in states]
    return states, cands, which


def _min_q(reg: Regressor, states, cands, chunk: int = 200_000) -> np.ndarray:
    out = np.empty(len(states))
    lo = 0
    while lo < len(states):
        hi, rows = lo, 0
        while hi < len(states) and (rows == 0 or rows + len(cands[hi]) <= chunk):
            rows += len(cands[hi])
            hi += 1
        feats = np.concatenate([encode_actions(states[j], cands[j]) for j in range(lo, hi)])
        q = reg.predict(feats)
        starts = np.cumsum([0] + [len(cands[j]) for j in range(lo, hi - 1)])
        out[lo:hi] = np.minimum.reduceat(q, starts)
        lo = hi
    return out


def fitted_q_iteration(
    f: ExperienceSet,
    reg: Regressor,
    t_steps: int,
    action_cap: int = DEFAULT_ACTION_CAP,
    seed: int = 0,
) -> Policy:
    """Fit ``t_steps`` successive Bellman backups of the one-step costs.

    Iteration ``N`` labels every tuple with ``cost + min_u Q_{N-1}(s', u)``
    (zero for the terminal slot, and ``Q_0 = 0``) and fits a fresh copy of
    ``reg`` on the labelled set.  The minimum runs over the same candidate
    actions the policy will consider when acting.
    """
    if len(f) == 0:
        raise ValueError("empty experience set")
    if t_steps < 1:
        raise ValueError("t_steps must be >= 1")
    transitions, weights = _deduplicate(f.transitions)
    X = np.concatenate([encode(tr.s, tr.u)[None, :] for tr in transitions])
    costs = np.array([tr.cost for tr in transitions])
    states, cands, which = _next_state_table(transitions, action_cap, seed)
    live = which >= 0
    log.info(
        "fqi: %d tuples (%d distinct), %d distinct next states",
        len(f), len(transitions), len(states),
    )

    model: Regressor | None = None
    history = []
    for it in range(1, t_steps + 1):
        targets = costs.copy()
        if model is not None and len(states):
            v = _min_q(model, states, cands)
            targets[live] += v[which[live]]
        if not np.all(np.isfinite(targets)):
            raise RegressorDivergence(f"non-finite targets in iteration {it}")
        model = reg.fresh().fit(X, targets, sample_weight=weights)
        history.append({"iteration": it, "target_mean": float(targets.mean()), "target_max": float(targets.max())})
        log.info("fqi iteration %d/%d: mean target %.4f", it, t_steps, targets.mean())
    meta = {"t_steps": t_steps, "n_tuples": len(f), "n_distinct": len(transitions), "history": history}
    return Policy(model, action_cap, seed, meta)
