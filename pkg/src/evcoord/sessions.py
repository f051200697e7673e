"""Charging-session records: CSV ingest, episodic preprocessing, synthesis.

A session is one EV transaction (arrival, departure, requested energy).  The
charging rate is assumed uniform across the fleet, so the requested energy is
translated into a whole number of decision slots of charging.
"""

from __future__ import annotations

import csv
import io
import json
import math
import warnings
from collections import Counter
from dataclasses import asdict, dataclass, replace
from datetime import date, datetime, timedelta
from pathlib import Path

import numpy as np

from .config import ConfigError, FleetConfig

CSV_HEADER = ("station_id", "arrival", "departure", "energy_kwh", "charge_rate_kw")
TIME_FORMAT = "%Y-%m-%dT%H:%M"


class SessionParseError(ValueError):
    """A sessions CSV row could not be parsed."""

    def __init__(self, line: int, message: str):
        super().__init__(f"line {line}: {message}")
        self.line = line


@dataclass(frozen=True)
class Session:
    station_id: str
    arrival: datetime
    departure: datetime
    charge_slots: int
    energy_kwh: float
    charge_rate_kw: float

    @property
    def duration(self) -> timedelta:
        return self.departure - self.arrival


@dataclass
class PreprocessReport:
    """Counts of records altered or discarded during ingest and episodize."""

    loaded: int = 0
    dropped_nonpositive_duration: int = 0
    dropped_nonpositive_energy: int = 0
    dropped_outside_window: int = 0
    clipped_departures: int = 0
    reduced_charge: int = 0
    episodes: int = 0

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True) + "\n"


def charge_slots_for(energy_kwh: float, charge_rate_kw: float, slot_hours: float) -> int:
    """Whole slots of charging needed to deliver ``energy_kwh`` at a fixed rate."""
    return math.ceil((energy_kwh / charge_rate_kw) / slot_hours)


def _parse_time(text: str) -> datetime:
    # minute resolution; seconds (if any) are discarded
    return datetime.fromisoformat(text.strip()).replace(second=0, microsecond=0, tzinfo=None)


def _format_float(value: float) -> str:
    return repr(float(value))


def load_sessions(
    path: str | Path, cfg: FleetConfig, report: PreprocessReport | None = None
) -> list[Session]:
    """Parse a sessions CSV.

    Rows whose departure is not after the arrival, or whose energy or rate is
    not positive, are dropped and counted in ``report``.
    """
    report = report if report is not None else PreprocessReport()
    text = Path(path).read_text(encoding="utf-8")
    if not text.strip():
        return []
    reader = csv.reader(io.StringIO(text, newline=""))
    header = next(reader)
    if tuple(h.strip() for h in header) != CSV_HEADER:
        raise SessionParseError(1, f"expected header {','.join(CSV_HEADER)}, got {','.join(header)}")

    sessions = []
    for line_no, row in enumerate(reader, start=2):
        if not row:
            continue
        if len(row) != len(CSV_HEADER):
            raise SessionParseError(line_no, f"expected {len(CSV_HEADER)} fields, got {len(row)}")
        station_id, arrival_s, departure_s, energy_s, rate_s = row
        try:
            arrival = _parse_time(arrival_s)
            departure = _parse_time(departure_s)
            energy = float(energy_s)
            rate = float(rate_s)
        except ValueError as exc:
            raise SessionParseError(line_no, str(exc)) from None
        if not station_id.strip():
            raise SessionParseError(line_no, "empty station_id")
        if departure <= arrival:
            report.dropped_nonpositive_duration += 1
            continue
        if not (energy > 0 and rate > 0 and math.isfinite(energy) and math.isfinite(rate)):
            report.dropped_nonpositive_energy += 1
            continue
        sessions.append(
            Session(
                station_id=station_id,
                arrival=arrival,
                departure=departure,
                charge_slots=charge_slots_for(energy, rate, cfg.slot_hours),
                energy_kwh=energy,
                charge_rate_kw=rate,
            )
        )
    report.loaded += len(sessions)
    return sessions


def write_sessions(path: str | Path, sessions) -> None:
    """Write sessions in the CSV schema read by :func:`load_sessions`."""
    buf = io.StringIO(newline="")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    for s in sessions:
        writer.writerow(
            [
                s.station_id,
                s.arrival.strftime(TIME_FORMAT),
                s.departure.strftime(TIME_FORMAT),
                _format_float(s.energy_kwh),
                _format_float(s.charge_rate_kw),
            ]
        )
    Path(path).write_text(buf.getvalue(), encoding="utf-8", newline="")


# ---------------------------------------------------------------------------
# episodes


@dataclass(frozen=True)
class EpisodeDay:
    """All sessions arriving inside one 24 h window that starts at ``day_start_hour``."""

    date: date
    sessions: tuple[Session, ...] = ()

    def start(self, cfg: FleetConfig) -> datetime:
        return datetime.combine(self.date, datetime.min.time()) + timedelta(hours=cfg.day_start_hour)

    def end(self, cfg: FleetConfig) -> datetime:
        return self.start(cfg) + cfg.h_max

    def slot_triples(self, cfg: FleetConfig) -> list[tuple[int, int, int]]:
        """``(arrival_slot, depart_slots, charge_slots)`` per session, 1-based slots."""
        start = self.start(cfg)
        return [session_slots(s, start, cfg) for s in self.sessions]

    def arrivals_by_slot(self, cfg: FleetConfig) -> dict[int, list[tuple[int, int]]]:
        """Map arrival slot -> list of ``(depart_slots, charge_slots)``."""
        out: dict[int, list[tuple[int, int]]] = {}
        for slot, depart, charge in self.slot_triples(cfg):
            out.setdefault(slot, []).append((depart, charge))
        return out


def session_slots(session: Session, start: datetime, cfg: FleetConfig) -> tuple[int, int, int]:
    """Slot of arrival and remaining depart/charge slots, seen from that slot's start.

    The arrival is binned into the slot containing the arrival instant and the
    time left until departure is measured from that slot's start, rounded up.
    """
    slot_sec = int(round(cfg.slot_hours * 3600))
    offset = int((session.arrival - start).total_seconds())
    arrival_slot = offset // slot_sec + 1
    slot_start = (arrival_slot - 1) * slot_sec
    depart_sec = int((session.departure - start).total_seconds()) - slot_start
    depart_slots = -(-depart_sec // slot_sec)
    return arrival_slot, depart_slots, session.charge_slots


def episode_date(ts: datetime, cfg: FleetConfig) -> date:
    return (ts - timedelta(hours=cfg.day_start_hour)).date()


def episodize(
    sessions, cfg: FleetConfig, report: PreprocessReport | None = None
) -> list[EpisodeDay]:
    """Split sessions into episode days with an empty car park in between.

    Each session goes to the episode containing its arrival.  Departures past
    the episode end are clipped to it and charge requests that no longer fit
    are reduced to the available slots; both are counted in ``report``.
    Calendar days without sessions inside the covered range are kept as empty
    episodes so contiguous windows keep their length.
    """
    report = report if report is not None else PreprocessReport()
    by_day: dict[date, list[Session]] = {}
    for s in sessions:
        day = episode_date(s.arrival, cfg)
        ep = EpisodeDay(day)
        start, end = ep.start(cfg), ep.end(cfg)
        if s.arrival >= end:
            # only reachable when h_max is shorter than a calendar day
            report.dropped_outside_window += 1
            continue
        if s.departure > end:
            s = replace(s, departure=end)
            report.clipped_departures += 1
        _, depart_slots, charge = session_slots(s, start, cfg)
        if charge > depart_slots:
            s = replace(s, charge_slots=depart_slots)
            report.reduced_charge += 1
        by_day.setdefault(day, []).append(s)

    if not by_day:
        return []
    first, last = min(by_day), max(by_day)
    days = []
    for k in range((last - first).days + 1):
        d = first + timedelta(days=k)
        members = sorted(by_day.get(d, []), key=lambda s: (s.arrival, s.departure, s.station_id))
        days.append(EpisodeDay(d, tuple(members)))
    report.episodes = len(days)
    return days


def flatten_days(days) -> list[Session]:
    return [s for d in days for s in d.sessions]


def select_top_stations(sessions, n: int) -> list[Session]:
    """Keep sessions of the ``n`` stations with the most transactions.

    Ties in the transaction count are broken by the lexicographically smaller
    station id.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    counts = Counter(s.station_id for s in sessions)
    if len(counts) < n:
        warnings.warn(f"only {len(counts)} distinct stations, fewer than n={n}; keeping all")
    ranked = sorted(counts, key=lambda sid: (-counts[sid], sid))
    keep = set(ranked[:n])
    return [s for s in sessions if s.station_id in keep]


def duplicate_sessions(day: EpisodeDay, scale: int) -> EpisodeDay:
    """Repeat every session ``scale`` times under fresh station ids.

    Pair the result with ``cfg.scaled(scale)``: the group size grows with the
    number of copies.
    """
    if not isinstance(scale, (int, np.integer)) or scale < 1:
        raise ValueError(f"scale must be an integer >= 1, got {scale!r}")
    if scale == 1:
        return day
    out = []
    for s in day.sessions:
        out.append(s)
        out.extend(replace(s, station_id=f"{s.station_id}*{k}") for k in range(1, scale))
    return EpisodeDay(day.date, tuple(out))


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class ArrivalProfile:
    """Parameters of the synthetic session generator.

    Arrival slots are drawn from ``slot_probs``; the number of slots an EV
    stays is ``1 + Binomial(remaining - 1, stay_share)`` where ``remaining`` is
    the number of slots left in the episode, and the number of charging slots
    is ``1 + Binomial(depart_slots - 1, charge_share)``.
    """

    slot_probs: tuple[float, ...]
    mean_sessions: float
    stay_share: float = 0.5
    charge_share: float = 0.35
    charge_rate_kw: float = 11.0

    def validate(self, cfg: FleetConfig) -> None:
        probs = np.asarray(self.slot_probs, dtype=float)
        if probs.shape != (cfg.s_max,):
            raise ConfigError(f"slot_probs needs {cfg.s_max} entries, got {probs.size}")
        if np.any(probs < 0) or abs(probs.sum() - 1.0) > 1e-9:
            raise ConfigError(f"slot_probs must be non-negative and sum to 1, sum={probs.sum()!r}")
        if self.mean_sessions < 0:
            raise ConfigError("mean_sessions must be non-negative")
        for name in ("stay_share", "charge_share"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")
        if self.charge_rate_kw <= 0:
            raise ConfigError("charge_rate_kw must be positive")

    @classmethod
    def two_peak(
        cls,
        cfg: FleetConfig,
        mean_sessions: float | None = None,
        morning_hour: float = 1.0,
        evening_hour: float = 10.0,
        width_hours: float = 1.5,
        evening_weight: float = 0.4,
        **kwargs,
    ) -> "ArrivalProfile":
        """Morning and evening commuter peaks; hours are counted from the episode start."""
        centers = (np.arange(cfg.s_max) + 0.5) * cfg.slot_hours
        bumps = (1 - evening_weight) * np.exp(-0.5 * ((centers - morning_hour) / width_hours) ** 2)
        bumps = bumps + evening_weight * np.exp(-0.5 * ((centers - evening_hour) / width_hours) ** 2)
        bumps = bumps + 1e-3
        probs = bumps / bumps.sum()
        probs[-1] = 1.0 - probs[:-1].sum()
        if mean_sessions is None:
            mean_sessions = 0.8 * cfg.n_max
        return cls(tuple(float(p) for p in probs), float(mean_sessions), **kwargs)


def generate_synthetic(
    days: int,
    cfg: FleetConfig,
    profile: ArrivalProfile | None = None,
    seed: int = 0,
    start_date: date = date(2015, 1, 1),
) -> list[EpisodeDay]:
    """Draw ``days`` episode days of sessions, deterministically from ``seed``.

    Arrivals that would push the number of connected EVs above ``n_max`` in
    any slot are rejected, so every generated day is feasible for the fleet.
    """
    if days < 1:
        raise ValueError(f"days must be >= 1, got {days}")
    profile = profile if profile is not None else ArrivalProfile.two_peak(cfg)
    profile.validate(cfg)
    rng = np.random.default_rng(seed)
    s_max = cfg.s_max
    slot_min = int(round(cfg.slot_hours * 60))
    probs = np.asarray(profile.slot_probs, dtype=float)
    rate = profile.charge_rate_kw

    out = []
    for k in range(days):
        day = start_date + timedelta(days=k)
        ep = EpisodeDay(day)
        start = ep.start(cfg)
        n = rng.poisson(profile.mean_sessions)
        slots = np.sort(rng.choice(s_max, size=n, p=probs)) + 1
        busy = np.zeros((cfg.n_max, s_max + 1), dtype=bool)
        sessions = []
        for slot in slots:
            slot = int(slot)
            remaining = s_max - slot + 1
            depart = 1 + int(rng.binomial(remaining - 1, profile.stay_share))
            charge = 1 + int(rng.binomial(depart - 1, profile.charge_share))
            frac = float(rng.uniform(0.05, 0.95))
            arr_off = int(rng.integers(0, max(1, slot_min // 2)))
            dep_off = int(rng.integers(1, max(2, slot_min // 2)))
            free = np.flatnonzero(~busy[:, slot : slot + depart].any(axis=1))
            if free.size == 0:
                continue
            station = int(free[0])
            busy[station, slot : slot + depart] = True
            slot_start = start + timedelta(minutes=(slot - 1) * slot_min)
            energy = round(rate * cfg.slot_hours * (charge - frac), 3)
            sessions.append(
                Session(
                    station_id=f"S{station:03d}",
                    arrival=slot_start + timedelta(minutes=arr_off),
                    departure=slot_start + timedelta(minutes=depart * slot_min - dep_off),
                    charge_slots=charge_slots_for(energy, rate, cfg.slot_hours),
                    energy_kwh=energy,
                    charge_rate_kw=rate,
                )
            )
        sessions.sort(key=lambda s: (s.arrival, s.departure, s.station_id))
        out.append(EpisodeDay(day, tuple(sessions)))
    return out


# ---------------------------------------------------------------------------
# episodic store (JSON lines, one day per line)

EPISODES_VERSION = 1


def _session_to_dict(s: Session) -> dict:
    return {
        "station_id": s.station_id,
        "arrival": s.arrival.strftime(TIME_FORMAT),
        "departure": s.departure.strftime(TIME_FORMAT),
        "charge_slots": s.charge_slots,
        "energy_kwh": s.energy_kwh,
        "charge_rate_kw": s.charge_rate_kw,
    }


def write_episodes(path: str | Path, days) -> None:
    lines = [json.dumps({"format": "evcoord-episodes", "version": EPISODES_VERSION})]
    for d in days:
        lines.append(
            json.dumps({"date": d.date.isoformat(), "sessions": [_session_to_dict(s) for s in d.sessions]})
        )
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_episodes(path: str | Path) -> list[EpisodeDay]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    if not lines:
        return []
    head = json.loads(lines[0])
    if head.get("format") != "evcoord-episodes" or head.get("version") != EPISODES_VERSION:
        raise ValueError(f"{path}: not an episodes file (header {head})")
    days = []
    for line in lines[1:]:
        rec = json.loads(line)
        sessions = tuple(
            Session(
                station_id=r["station_id"],
                arrival=datetime.strptime(r["arrival"], TIME_FORMAT),
                departure=datetime.strptime(r["departure"], TIME_FORMAT),
                charge_slots=int(r["charge_slots"]),
                energy_kwh=float(r["energy_kwh"]),
                charge_rate_kw=float(r["charge_rate_kw"]),
            )
            for r in rec["sessions"]
        )
        days.append(EpisodeDay(date.fromisoformat(rec["date"]), sessions))
    return days
