"""Normalised-cost metrics and the experiment sweeps built on them.

Every cost is reported relative to the perfect-foresight optimum of the same
day, so the optimum scores exactly 1.
"""

from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from datetime import date
from pathlib import Path

import numpy as np

from .baselines import bau_rollout, offline_optimum
from .config import FleetConfig
from .fqi import Policy, collect_experience, fitted_q_iteration
from .mdp import DEFAULT_ACTION_CAP, rollout, trajectory_cost
from .regressors import MLP, ExactTable, MLPConfig, Regressor
from .sessions import EpisodeDay, duplicate_sessions

log = logging.getLogger(__name__)

REPORT_VERSION = 1


def normalized_cost(policy_costs, opt_costs) -> float:
    """Mean over days of ``policy_cost / optimal_cost``.

    Days whose optimal cost is zero (nothing to charge) have no defined ratio
    and are left out.
    """
    policy_costs = np.asarray(policy_costs, dtype=float)
    opt_costs = np.asarray(opt_costs, dtype=float)
    if policy_costs.shape != opt_costs.shape:
        raise ValueError(f"{policy_costs.size} policy costs vs {opt_costs.size} optimal costs")
    keep = opt_costs > 0
    if not np.any(keep):
        raise ValueError("no day with a positive optimal cost")
    return float(np.mean(policy_costs[keep] / opt_costs[keep]))


@dataclass
class DayResult:
    date: str
    opt_cost: float
    bau_cost: float
    rl_cost: float | None = None
    rl_stranded: int = 0


@dataclass
class EvalReport:
    """Per-day costs and their normalised means for one evaluated policy."""

    label: str
    days: list[DayResult]
    config: dict
    extra: dict = field(default_factory=dict)

    @property
    def scored(self) -> list[DayResult]:
        return [d for d in self.days if d.opt_cost > 0]

    @property
    def excluded_days(self) -> int:
        return len(self.days) - len(self.scored)

    @property
    def c_bau(self) -> float | None:
        days = self.scored
        if not days:
            return None
        return normalized_cost([d.bau_cost for d in days], [d.opt_cost for d in days])

    @property
    def c_rl(self) -> float | None:
        days = self.scored
        if not days or any(d.rl_cost is None for d in days):
            return None
        return normalized_cost([d.rl_cost for d in days], [d.opt_cost for d in days])

    @property
    def improvement(self) -> float | None:
        """``C_BAU - C_RL``: how much of the uncontrolled cost the policy removes."""
        if self.c_rl is None or self.c_bau is None:
            return None
        return self.c_bau - self.c_rl

    @property
    def stranded(self) -> int:
        return sum(d.rl_stranded for d in self.days)

    def summary(self) -> dict:
        return {
            "label": self.label,
            "c_rl": self.c_rl,
            "c_bau": self.c_bau,
            "c_opt": 1.0,
            "improvement": self.improvement,
            "scored_days": len(self.scored),
            "excluded_days": self.excluded_days,
            "stranded": self.stranded,
            **self.extra,
        }

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "label": self.label,
            "summary": self.summary(),
            "config": self.config,
            "extra": self.extra,
            "days": [asdict(d) for d in self.days],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "EvalReport":
        if d.get("version") != REPORT_VERSION:
            raise ValueError(f"unsupported report version {d.get('version')}")
        return cls(d["label"], [DayResult(**r) for r in d["days"]], d["config"], d.get("extra", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def write(self, path: str | Path) -> None:
        Path(path).write_text(self.to_json(), encoding="utf-8")

    @classmethod
    def read(cls, path: str | Path) -> "EvalReport":
        return cls.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


# ---------------------------------------------------------------------------
# evaluation


def baseline_costs(days, cfg: FleetConfig) -> list[tuple[float, float]]:
    """``(bau_cost, optimal_cost)`` per day."""
    out = []
    for d in days:
        _, bau = bau_rollout(d, cfg)
        _, opt = offline_optimum(d, cfg)
        out.append((bau, opt))
    return out


def _policy_day(args):
    policy, day, cfg = args
    traj = rollout(day.arrivals_by_slot(cfg), cfg, policy)
    return trajectory_cost(traj), sum(tr.s_next.stranded for tr in traj)


def evaluate_policy(
    policy,
    days,
    cfg: FleetConfig,
    label: str = "policy",
    baselines: list[tuple[float, float]] | None = None,
    workers: int = 1,
    **extra,
) -> EvalReport:
    """Roll ``policy`` (any state -> action callable, or ``None`` for
    baselines only) through each day and compare with BAU and the optimum."""
    days = list(days)
    baselines = baselines if baselines is not None else baseline_costs(days, cfg)
    rl: list[tuple[float | None, int]] = [(None, 0)] * len(days)
    if policy is not None:
        jobs = [(policy, d, cfg) for d in days]
        if workers > 1 and len(days) > 1:
            with ProcessPoolExecutor(max_workers=workers) as pool:
                rl = list(pool.map(_policy_day, jobs))
        else:
            rl = [_policy_day(j) for j in jobs]
    results = [
        DayResult(str(d.date), opt, bau, cost, stranded)
        for d, (bau, opt), (cost, stranded) in zip(days, baselines, rl)
    ]
    return EvalReport(label, results, cfg.to_dict(), dict(extra))


@dataclass(frozen=True)
class TrainSettings:
    """How a policy is trained from a block of days."""

    regressor: str = "mlp"
    mlp: MLPConfig = MLPConfig()
    action_cap: int = DEFAULT_ACTION_CAP
    t_steps: int | None = None

    def make_regressor(self, seed: int) -> Regressor:
        if self.regressor == "exact":
            return ExactTable()
        if self.regressor == "mlp":
            return MLP(replace(self.mlp, seed=seed))
        raise ValueError(f"unknown regressor {self.regressor!r}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["mlp"]["hidden"] = list(d["mlp"]["hidden"])
        return d


def train_policy(
    days, cfg: FleetConfig, trajectories_per_day: int, seed: int, settings: TrainSettings = TrainSettings()
) -> Policy:
    """Collect random-rollout experience from ``days`` and run fitted Q-iteration."""
    f = collect_experience(days, cfg, trajectories_per_day, seed, settings.action_cap)
    t_steps = settings.t_steps or cfg.s_max
    return fitted_q_iteration(f, settings.make_regressor(seed), t_steps, settings.action_cap, seed)


# ---------------------------------------------------------------------------
# sweeps


@dataclass(frozen=True)
class SplitSpec:
    """Fixed test window plus randomly placed contiguous training windows.

    Spans are counted in ``window_days``-long units (a month on real data).
    Training windows are drawn from the days before ``test_start``.
    """

    test_start: date
    test_end: date
    train_spans: tuple[int, ...] = (1, 3, 5, 7, 9)
    window_days: int = 30
    runs: int = 5
    seed: int = 0

    def __post_init__(self):
        if self.test_end < self.test_start:
            raise ValueError("test_end before test_start")
        if self.runs < 1 or self.window_days < 1:
            raise ValueError("runs and window_days must be >= 1")

    def split(self, days) -> tuple[list[EpisodeDay], list[EpisodeDay]]:
        train = [d for d in days if d.date < self.test_start]
        test = [d for d in days if self.test_start <= d.date <= self.test_end]
        return train, test

    def train_windows(self, train_days, span: int) -> list[tuple[int, int]] | None:
        """``runs`` ``(start, stop)`` index ranges into ``train_days``; ``None`` if too short."""
        length = span * self.window_days
        room = len(train_days) - length
        if room < 0:
            return None
        rng = np.random.default_rng([self.seed, span])
        starts = rng.integers(0, room + 1, size=self.runs)
        return [(int(a), int(a) + length) for a in starts]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["test_start"] = self.test_start.isoformat()
        d["test_end"] = self.test_end.isoformat()
        d["train_spans"] = list(self.train_spans)
        return d


@dataclass
class SweepGrid:
    """Reports of a (span x samples x run) sweep; absent cells have no report."""

    cells: list[dict]
    reports: dict[str, EvalReport]
    meta: dict = field(default_factory=dict)

    def bands(self) -> list[dict]:
        """Mean, standard deviation and min/max of ``C_RL`` per (span, samples)."""
        groups: dict[tuple, list[float]] = {}
        c_bau: dict[tuple, float | None] = {}
        for cell in self.cells:
            key = (cell["span"], cell["samples"])
            groups.setdefault(key, [])
            rep = self.reports.get(cell["id"])
            if rep is not None and rep.c_rl is not None:
                groups[key].append(rep.c_rl)
                c_bau[key] = rep.c_bau
        out = []
        for (span, samples), vals in sorted(groups.items()):
            row = {"span": span, "samples": samples, "runs": len(vals), "c_bau": c_bau.get((span, samples))}
            if vals:
                v = np.asarray(vals)
                row.update(mean=float(v.mean()), std=float(v.std()), min=float(v.min()), max=float(v.max()))
            else:
                row.update(mean=None, std=None, min=None, max=None)
            out.append(row)
        return out

    def to_dict(self) -> dict:
        return {
            "version": REPORT_VERSION,
            "meta": self.meta,
            "cells": self.cells,
            "bands": self.bands(),
            "reports": {k: r.to_dict() for k, r in sorted(self.reports.items())},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SweepGrid":
        reports = {k: EvalReport.from_dict(r) for k, r in d["reports"].items()}
        return cls(d["cells"], reports, d.get("meta", {}))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n"

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["span", "samples", "run", "train_start", "train_end", "c_rl", "c_bau", "stranded", "absent"])
        for cell in self.cells:
            rep = self.reports.get(cell["id"])
            w.writerow(
                [
                    cell["span"],
                    cell["samples"],
                    cell["run"],
                    cell.get("train_start", ""),
                    cell.get("train_end", ""),
                    "" if rep is None or rep.c_rl is None else repr(rep.c_rl),
                    "" if rep is None or rep.c_bau is None else repr(rep.c_bau),
                    "" if rep is None else rep.stranded,
                    int(rep is None),
                ]
            )
        return buf.getvalue()


def run_training_sweep(
    spec: SplitSpec,
    samples_per_day,
    cfg: FleetConfig,
    days,
    settings: TrainSettings = TrainSettings(),
    workers: int = 1,
) -> SweepGrid:
    """Train one policy per (span, samples, run) cell and score it on the test window."""
    train_days, test_days = spec.split(days)
    if not test_days:
        raise ValueError("no days inside the test window")
    base = baseline_costs(test_days, cfg)
    cells, reports = [], {}
    for span in spec.train_spans:
        windows = spec.train_windows(train_days, span)
        for samples in samples_per_day:
            for run in range(spec.runs):
                cid = f"span{span}-samples{samples}-run{run}"
                cell = {"id": cid, "span": span, "samples": samples, "run": run}
                cells.append(cell)
                if windows is None:
                    cell["absent"] = "not enough training days"
                    continue
                lo, hi = windows[run]
                block = train_days[lo:hi]
                cell["train_start"] = str(block[0].date)
                cell["train_end"] = str(block[-1].date)
                seed = spec.seed * 1_000_003 + run
                log.info("sweep cell %s: %s..%s", cid, block[0].date, block[-1].date)
                policy = train_policy(block, cfg, samples, seed, settings)
                reports[cid] = evaluate_policy(
                    policy, test_days, cfg, cid, base, workers, span=span, samples=samples, run=run
                )
    meta = {"split": spec.to_dict(), "settings": settings.to_dict(), "config": cfg.to_dict()}
    return SweepGrid(cells, reports, meta)


def split_windows(days, window_days: int) -> list[list[EpisodeDay]]:
    """Consecutive blocks of ``window_days`` days (the last one may be shorter)."""
    days = list(days)
    return [days[k : k + window_days] for k in range(0, len(days), window_days)]


def run_monthly_sweep(
    cfg: FleetConfig,
    days,
    window_days: int = 30,
    spans=(1,),
    samples: int = 100,
    seed: int = 0,
    settings: TrainSettings = TrainSettings(),
    workers: int = 1,
) -> list[EvalReport]:
    """Use every window as a test set, trained on the ``span`` windows before it.

    One report per (window, span).  Windows without enough history get a
    baseline-only report (``c_rl`` is ``None``); windows without sessions are
    reported with every day excluded.
    """
    windows = split_windows(days, window_days)
    out = []
    for m, test in enumerate(windows):
        base = baseline_costs(test, cfg)
        for span in spans:
            extra = {"window": m, "span": span, "test_start": str(test[0].date), "test_end": str(test[-1].date)}
            label = f"window{m}-span{span}"
            if not any(opt > 0 for _, opt in base):
                out.append(evaluate_policy(None, test, cfg, label, base, note="no sessions", **extra))
                continue
            if m < span:
                out.append(evaluate_policy(None, test, cfg, label, base, note="no training data", **extra))
                continue
            block = [d for w in windows[m - span : m] for d in w]
            policy = train_policy(block, cfg, samples, seed * 1_000_003 + m, settings)
            out.append(evaluate_policy(policy, test, cfg, label, base, workers, **extra))
    return out


def run_scale_test(policy, test_days, scales, cfg: FleetConfig, workers: int = 1) -> list[EvalReport]:
    """Score a fixed policy on test days whose sessions are duplicated ``scale`` times."""
    out = []
    for scale in scales:
        scaled_cfg = cfg.scaled(scale)
        scaled = [duplicate_sessions(d, scale) for d in test_days]
        out.append(
            evaluate_policy(
                policy, scaled, scaled_cfg, f"scale{scale}", workers=workers, scale=scale, n_max=scaled_cfg.n_max
            )
        )
    return out


def reports_to_csv(reports) -> str:
    """One summary row per report."""
    rows = [r.summary() for r in reports]
    keys = sorted({k for row in rows for k in row})
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    w.writeheader()
    for row in rows:
        w.writerow({k: ("" if row.get(k) is None else row[k]) for k in keys})
    return buf.getvalue()

