"""Command-line entry point: ``evcoord <subcommand> --out RUN_DIR ...``.

Settings come from built-in defaults, then an optional INI file
(``--config``), then command-line flags.  Every run writes
``<subcommand>.manifest.json`` into the run directory: the resolved settings,
their hash, the seed, input file digests and library versions.  Nothing time-dependent is recorded, so
two runs with the same manifest produce the same files.
"""

from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import logging
import platform
import sys
from datetime import date
from pathlib import Path

import numpy as np

from . import __version__
from .baselines import InfeasibleDayError, NodeBudgetExceeded, bau_rollout, dp_oracle, offline_optimum
from .config import ConfigError, FleetConfig
from .evaluation import (
    SplitSpec,
    TrainSettings,
    evaluate_policy,
    reports_to_csv,
    run_monthly_sweep,
    run_scale_test,
    run_training_sweep,
)
from .fqi import ExperienceSet, Policy, collect_exhaustive, collect_experience, fitted_q_iteration
from .regressors import MLPConfig
from .sessions import (
    ArrivalProfile,
    PreprocessReport,
    SessionParseError,
    episodize,
    generate_synthetic,
    load_sessions,
    read_episodes,
    select_top_stations,
    write_episodes,
)

log = logging.getLogger("evcoord")

# section.key -> (type, default)
SETTINGS: dict[str, tuple[type, object]] = {
    "fleet.n_max": (int, 10),
    "fleet.h_max_hours": (float, 24.0),
    "fleet.slot_hours": (float, 2.0),
    "fleet.day_start_hour": (int, 7),
    "run.seed": (int, 0),
    "run.workers": (int, 1),
    "run.action_cap": (int, 512),
    "train.regressor": (str, "mlp"),
    "train.trajectories": (int, 100),
    "train.iterations": (int, 0),
    "mlp.hidden": (str, "128,64"),
    "mlp.epochs": (int, 20),
    "mlp.learning_rate": (float, 1e-3),
    "mlp.batch_size": (int, 64),
    "mlp.huber_delta": (float, 1.0),
    "mlp.optimizer": (str, "adam"),
}


class UsageError(Exception):
    """Bad invocation or missing input; exit code 2."""


def _flag(key: str) -> str:
    return "--" + key.split(".", 1)[1].replace("_", "-")


def resolve_settings(config_path: str | None, overrides: dict) -> dict:
    values = {k: default for k, (_, default) in SETTINGS.items()}
    if config_path:
        path = Path(config_path)
        if not path.is_file():
            raise UsageError(f"config file not found: {config_path}")
        parser = configparser.ConfigParser(inline_comment_prefixes=(";", "#"))
        parser.read(path, encoding="utf-8")
        for section in parser.sections():
            for name, raw in parser.items(section):
                key = f"{section}.{name}"
                if key not in SETTINGS:
                    raise UsageError(f"{config_path}: unknown setting [{section}] {name}")
                try:
                    values[key] = SETTINGS[key][0](raw)
                except ValueError as exc:
                    raise UsageError(f"{config_path}: [{section}] {name}: {exc}") from None
    for key, value in overrides.items():
        if value is not None:
            values[key] = value
    return values


def fleet_config(settings: dict) -> FleetConfig:
    return FleetConfig(
        n_max=settings["fleet.n_max"],
        h_max_hours=settings["fleet.h_max_hours"],
        slot_hours=settings["fleet.slot_hours"],
        day_start_hour=settings["fleet.day_start_hour"],
    )


def train_settings(settings: dict) -> TrainSettings:
    hidden = tuple(int(h) for h in str(settings["mlp.hidden"]).split(",") if h.strip())
    mlp = MLPConfig(
        hidden=hidden,
        learning_rate=settings["mlp.learning_rate"],
        epochs=settings["mlp.epochs"],
        batch_size=settings["mlp.batch_size"],
        huber_delta=settings["mlp.huber_delta"],
        optimizer=settings["mlp.optimizer"],
        seed=settings["run.seed"],
    )
    return TrainSettings(
        regressor=settings["train.regressor"],
        mlp=mlp,
        action_cap=settings["run.action_cap"],
        t_steps=settings["train.iterations"] or None,
    )


def check_settings(settings: dict) -> None:
    """Reject inconsistent settings before any work starts."""
    fleet_config(settings)
    try:
        ts = train_settings(settings)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if ts.regressor not in ("mlp", "exact"):
        raise UsageError(f"unknown regressor {ts.regressor!r} (use mlp or exact)")
    if settings["run.workers"] < 1 or settings["run.action_cap"] < 1:
        raise UsageError("workers and action_cap must be >= 1")


def _digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class RunDir:
    """Output directory that remembers what this run wrote, so a failed run
    can remove its partial outputs."""

    def __init__(self, root: str):
        self.root = Path(root)
        self.created_root = not self.root.exists()
        self.written: list[Path] = []

    def path(self, name: str) -> Path:
        self.root.mkdir(parents=True, exist_ok=True)
        p = self.root / name
        self.written.append(p)
        return p

    def cleanup(self) -> None:
        for p in self.written:
            p.unlink(missing_ok=True)
            Path(str(p) + ".weights").unlink(missing_ok=True)
        if self.created_root and self.root.is_dir() and not any(self.root.iterdir()):
            self.root.rmdir()


def _input(path: str | None, what: str) -> Path:
    if not path:
        raise UsageError(f"missing {what}: pass it on the command line")
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"{what} not found: {path}")
    return p


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=1, sort_keys=True) + "\n", encoding="utf-8")


# ---------------------------------------------------------------------------
# subcommands; each returns the list of input files it read


def cmd_ingest(args, settings, run: RunDir):
    cfg = fleet_config(settings)
    src = _input(args.csv, "session CSV")
    report = PreprocessReport()
    sessions = load_sessions(src, cfg, report)
    if args.stations:
        sessions = select_top_stations(sessions, args.stations)
    days = episodize(sessions, cfg, report)
    write_episodes(run.path("episodes.jsonl"), days)
    run.path("ingest_summary.json").write_text(report.to_json() + "\n", encoding="utf-8")
    print(f"{report.loaded} sessions loaded, {len(days)} episode days")
    return [src]


def cmd_synth(args, settings, run: RunDir):
    cfg = fleet_config(settings)
    profile = ArrivalProfile.two_peak(cfg, mean_sessions=args.mean_sessions)
    days = generate_synthetic(args.days, cfg, profile, settings["run.seed"], date.fromisoformat(args.start))
    write_episodes(run.path("episodes.jsonl"), days)
    print(f"{len(days)} days, {sum(len(d.sessions) for d in days)} sessions")
    return []


def cmd_collect(args, settings, run: RunDir):
    cfg = fleet_config(settings)
    src = _input(args.episodes, "episodes file")
    days = read_episodes(src)
    cap = settings["run.action_cap"]
    if args.exhaustive:
        transitions, meta = [], {"exhaustive": True, "days": len(days), "action_cap": cap}
        for d in days:
            transitions.extend(collect_exhaustive(d, cfg, cap).transitions)
        f = ExperienceSet(transitions, meta)
    else:
        f = collect_experience(days, cfg, settings["train.trajectories"], settings["run.seed"], cap)
    f.save(run.path("experience.jsonl"))
    print(f"{len(f)} transitions")
    return [src]


def cmd_train(args, settings, run: RunDir):
    cfg = fleet_config(settings)
    src = _input(args.experience, "experience file")
    f = ExperienceSet.load(src)
    ts = train_settings(settings)
    policy = fitted_q_iteration(
        f, ts.make_regressor(settings["run.seed"]), ts.t_steps or cfg.s_max, ts.action_cap, settings["run.seed"]
    )
    policy.save(run.path("policy.json"))
    print(f"policy trained on {len(f)} transitions")
    return [src]


def cmd_eval(args, settings, run: RunDir):
    cfg = fleet_config(settings)
    pol_path = _input(args.policy, "policy file")
    src = _input(args.episodes, "episodes file")
    policy = Policy.load(pol_path)
    report = evaluate_policy(policy, read_episodes(src), cfg, "eval", workers=settings["run.workers"])
    report.write(run.path("report.json"))
    run.path("report.csv").write_text(reports_to_csv([report]), encoding="utf-8")
    s = report.summary()
    print(f"C_RL={s['c_rl']} C_BAU={s['c_bau']} stranded={s['stranded']} excluded={s['excluded_days']}")
    return [pol_path, src]


def cmd_sweep(args, settings, run: RunDir):
    cfg = fleet_config(settings)
    src = _input(args.episodes, "episodes file")
    days = read_episodes(src)
    ts = train_settings(settings)
    seed, workers = settings["run.seed"], settings["run.workers"]
    inputs = [src]
    if args.kind == "training":
        if not (args.test_start and args.test_end):
            raise UsageError("sweep training needs --test-start and --test-end")
        spec = SplitSpec(
            date.fromisoformat(args.test_start),
            date.fromisoformat(args.test_end),
            tuple(args.spans),
            args.window_days,
            args.runs,
            seed,
        )
        grid = run_training_sweep(spec, args.samples, cfg, days, ts, workers)
        run.path("sweep.json").write_text(grid.to_json(), encoding="utf-8")
        run.path("sweep.csv").write_text(grid.to_csv(), encoding="utf-8")
        _write_json(run.path("bands.json"), grid.bands())
        return inputs
    if args.kind == "monthly":
        reports = run_monthly_sweep(
            cfg, days, args.window_days, tuple(args.spans), args.samples[0], seed, ts, workers
        )
    else:
        pol_path = _input(args.policy, "policy file")
        inputs.append(pol_path)
        reports = run_scale_test(Policy.load(pol_path), days, args.scales, cfg, workers)
    _write_json(run.path("reports.json"), [r.to_dict() for r in reports])
    run.path("reports.csv").write_text(reports_to_csv(reports), encoding="utf-8")
    return inputs


def cmd_oracle(args, settings, run: RunDir):
    cfg = fleet_config(settings)
    src = _input(args.episodes, "episodes file")
    rows = ["date,sessions,bau_cost,opt_cost,dp_cost"]
    schedules = {}
    for d in read_episodes(src):
        _, bau = bau_rollout(d, cfg)
        sched, opt = offline_optimum(d, cfg)
        dp = ""
        if args.dp:
            try:
                dp = repr(dp_oracle(d, cfg, args.max_nodes).value)
            except NodeBudgetExceeded:
                dp = "budget"
        rows.append(f"{d.date},{len(d.sessions)},{bau!r},{opt!r},{dp}")
        schedules[str(d.date)] = sched.loads.tolist()
    run.path("oracle.csv").write_text("\n".join(rows) + "\n", encoding="utf-8")
    _write_json(run.path("schedules.json"), schedules)
    return [src]


COMMANDS = {
    "ingest": cmd_ingest,
    "synth": cmd_synth,
    "collect": cmd_collect,
    "train": cmd_train,
    "eval": cmd_eval,
    "sweep": cmd_sweep,
    "oracle": cmd_oracle,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", required=True, help="run directory for every output")
    common.add_argument("--config", help="INI file with [fleet] [run] [train] [mlp] sections")
    common.add_argument("-v", "--verbose", action="store_true")
    for key, (typ, _) in SETTINGS.items():
        common.add_argument(_flag(key), dest=key, type=typ, default=None, help=f"override {key}")

    p = argparse.ArgumentParser(prog="evcoord", description="Coordinated EV charging with fitted Q-iteration.")
    p.add_argument("--version", action="version", version=f"evcoord {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="session CSV -> episode days")
    s.add_argument("--csv", required=True)
    s.add_argument("--stations", type=int, default=0, help="keep the N busiest stations")

    s = sub.add_parser("synth", parents=[common], help="generate synthetic episode days")
    s.add_argument("--days", type=int, required=True)
    s.add_argument("--start", default="2015-01-01")
    s.add_argument("--mean-sessions", type=float, default=None)

    s = sub.add_parser("collect", parents=[common], help="random-rollout experience")
    s.add_argument("--episodes", required=True)
    s.add_argument("--exhaustive", action="store_true", help="every state-action pair of each day")

    s = sub.add_parser("train", parents=[common], help="fitted Q-iteration -> policy")
    s.add_argument("--experience", required=True)

    s = sub.add_parser("eval", parents=[common], help="policy vs. BAU and the optimum")
    s.add_argument("--policy")
    s.add_argument("--episodes", required=True)

    s = sub.add_parser("sweep", parents=[common], help="training-span, monthly or scale study")
    s.add_argument("kind", choices=["training", "monthly", "scale"])
    s.add_argument("--episodes", required=True)
    s.add_argument("--policy", help="trained policy (scale study)")
    s.add_argument("--test-start")
    s.add_argument("--test-end")
    s.add_argument("--spans", type=int, nargs="+", default=[1])
    s.add_argument("--samples", type=int, nargs="+", default=[100], help="trajectories per day")
    s.add_argument("--runs", type=int, default=5)
    s.add_argument("--window-days", type=int, default=30)
    s.add_argument("--scales", type=int, nargs="+", default=[1, 2, 4, 8])

    s = sub.add_parser("oracle", parents=[common], help="offline optimum and BAU per day")
    s.add_argument("--episodes", required=True)
    s.add_argument("--dp", action="store_true", help="also run exhaustive backward induction")
    s.add_argument("--max-nodes", type=int, default=200_000)
    return p


def _relative(value, root: Path):
    """Paths inside the run directory are recorded relative to it."""
    if not isinstance(value, (str, Path)):
        return value
    try:
        return str(Path(value).resolve().relative_to(root.resolve()))
    except ValueError:
        return str(value)


def _manifest(command: str, args, settings: dict, inputs, root: Path) -> dict:
    cmd_args = {
        k: _relative(v, root)
        for k, v in sorted(vars(args).items())
        if k not in SETTINGS and k not in ("out", "config", "verbose", "command")
    }
    body = {"command": command, "args": cmd_args, "settings": settings}
    digest = hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()
    return {
        **body,
        "config_hash": digest,
        "seed": settings["run.seed"],
        "inputs": {_relative(p, root): _digest(p) for p in inputs},
        "versions": {
            "evcoord": __version__,
            "numpy": np.__version__,
            "python": platform.python_version(),
        },
    }


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.INFO if args.verbose else logging.WARNING,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
    )
    overrides = {k: getattr(args, k) for k in SETTINGS}
    run = RunDir(args.out)
    try:
        settings = resolve_settings(args.config, overrides)
        check_settings(settings)
        inputs = COMMANDS[args.command](args, settings, run)
        _write_json(run.path(f"{args.command}.manifest.json"), _manifest(args.command, args, settings, inputs, run.root))
    except (UsageError, ConfigError) as exc:
        run.cleanup()
        print(f"evcoord {args.command}: {exc}", file=sys.stderr)
        return 2
    except (SessionParseError, InfeasibleDayError, ValueError, RuntimeError, OSError) as exc:
        run.cleanup()
        print(f"evcoord {args.command}: {exc}", file=sys.stderr)
        return 1
    except BaseException:
        run.cleanup()
        raise
    return 0


if __name__ == "__main__":
    sys.exit(main())
