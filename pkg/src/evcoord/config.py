"""Fleet configuration shared by every module."""

from __future__ import annotations

from dataclasses import asdict, dataclass, replace
from datetime import timedelta


class ConfigError(ValueError):
    """Raised for inconsistent configuration values."""


def penalty_weight(n_max: int, s_max: int) -> int:
    """Weight of one stranded EV in units of ``1 / n_max``.

    Above ``2 * n_max`` one stranded EV costs more than charging the whole
    group in a slot; above ``2 * s_max`` it also costs more than every
    charging slot the EV could still need, so dropping a request never pays.
    """
    return 2 * max(n_max, s_max) + 1


@dataclass(frozen=True)
class FleetConfig:
    """Size of the coordinated group and the time discretisation.

    Attributes:
        n_max: number of charging stations jointly controlled.
        h_max_hours: longest connection time (hours); also the episode length.
        slot_hours: duration of one decision slot (hours).
        day_start_hour: local hour at which every episode starts.
    """

    n_max: int = 10
    h_max_hours: float = 24.0
    slot_hours: float = 2.0
    day_start_hour: int = 7

    def __post_init__(self):
        if self.n_max < 1:
            raise ConfigError(f"n_max must be >= 1, got {self.n_max}")
        if self.slot_hours <= 0 or self.h_max_hours <= 0:
            raise ConfigError("slot_hours and h_max_hours must be positive")
        ratio = self.h_max_hours / self.slot_hours
        if abs(ratio - round(ratio)) > 1e-12 or round(ratio) < 1:
            raise ConfigError(
                f"h_max_hours={self.h_max_hours} is not a whole number of "
                f"{self.slot_hours} h slots"
            )
        if not 0 <= self.day_start_hour < 24:
            raise ConfigError("day_start_hour must lie in [0, 24)")

    @property
    def s_max(self) -> int:
        return int(round(self.h_max_hours / self.slot_hours))

    @property
    def slot(self) -> timedelta:
        return timedelta(hours=self.slot_hours)

    @property
    def h_max(self) -> timedelta:
        return timedelta(hours=self.h_max_hours)

    @property
    def penalty_weight(self) -> int:
        return penalty_weight(self.n_max, self.s_max)

    def scaled(self, scale: int) -> "FleetConfig":
        if scale < 1:
            raise ValueError(f"scale must be >= 1, got {scale}")
        return replace(self, n_max=self.n_max * scale)

    def to_dict(self) -> dict:
        return asdict(self)
