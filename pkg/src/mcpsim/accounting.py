"""Latency decomposition, space bound, FLOP/energy ledgers, derived metrics."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

from .fileio import atomic_write_text
from .modules import MODULE_KINDS

METRICS_COLUMNS = (
    "task_id",
    "mode",
    "t_model_ms",
    "t_controller_ms",
    "t_presenter_ms",
    "t_total_ms",
    "flops",
    "invalid_flops",
    "energy_j",
    "quality",
    "reward",
)


class AccountingError(ValueError):
    """Raised on malformed ledgers or cost models."""


@dataclass(frozen=True)
class LatencyBreakdown:
    """Per-layer latency of one task, in milliseconds."""

    t_model_ms: float
    t_controller_ms: float
    t_presenter_ms: float

    def __post_init__(self) -> None:
        for v in (self.t_model_ms, self.t_controller_ms, self.t_presenter_ms):
            if not math.isfinite(v) or v < 0:
                raise AccountingError("latency components must be finite and >= 0")


def total_latency(b: LatencyBreakdown) -> float:
    """Sum of the model, controller, and presenter contributions."""
    return b.t_model_ms + b.t_controller_ms + b.t_presenter_ms


@dataclass(frozen=True)
class SpaceModel:
    """Right-hand side of the space bound: parameter blocks plus trace state.

    module_costs pairs a per-unit byte cost with a unit count for each of
    the three modules; state_cost_per_step bounds the bytes retained per
    trace step over a horizon of ``horizon`` steps.
    """

    module_costs: tuple[tuple[float, float], ...]
    state_cost_per_step: float
    horizon: int

    def __post_init__(self) -> None:
        if len(self.module_costs) != 3:
            raise AccountingError("expected cost pairs for exactly 3 modules")
        for unit_cost, count in self.module_costs:
            if unit_cost < 0 or count < 0:
                raise AccountingError("module costs must be non-negative")
        if self.state_cost_per_step < 0 or self.horizon < 0:
            raise AccountingError("state cost and horizon must be non-negative")


def space_bound(m: SpaceModel, observed_s_total: float) -> tuple[bool, float]:
    """Evaluate the bound and report whether the observation satisfies it."""
    bound = (
        sum(unit_cost * count for unit_cost, count in m.module_costs)
        + m.state_cost_per_step * m.horizon
    )
    return observed_s_total <= bound, bound


@dataclass
class FlopLedger:
    """Running (flops, invalid_flops) totals per module."""

    per_module: dict[str, tuple[float, float]] = field(
        default_factory=lambda: {k: (0.0, 0.0) for k in MODULE_KINDS}
    )

    def charge(self, kind: str, flops: float, invalid_flops: float) -> None:
        if kind not in self.per_module:
            raise AccountingError(f"unknown module kind {kind!r}")
        if not 0.0 <= invalid_flops <= flops:
            raise AccountingError("invalid_flops must lie in [0, flops]")
        total, invalid = self.per_module[kind]
        self.per_module[kind] = (total + flops, invalid + invalid_flops)

    @property
    def total_flops(self) -> float:
        return sum(t for t, _ in self.per_module.values())

    @property
    def total_invalid(self) -> float:
        return sum(i for _, i in self.per_module.values())


def invalid_flop_fraction(ledger: FlopLedger) -> float:
    """Share of all simulated compute charged as redundant."""
    total = ledger.total_flops
    if total <= 0:
        raise AccountingError("ledger holds no flops")
    return ledger.total_invalid / total


@dataclass(frozen=True)
class EnergyModel:
    """Joules per FLOP for each module plus a fixed per-task overhead."""

    joules_per_flop: dict[str, float]
    overhead_j: float = 0.5

    def __post_init__(self) -> None:
        if set(self.joules_per_flop) != set(MODULE_KINDS):
            raise AccountingError("energy model must cover all module kinds")
        if self.overhead_j < 0 or min(self.joules_per_flop.values()) < 0:
            raise AccountingError("energy constants must be non-negative")


def energy(ledger: FlopLedger, m: EnergyModel) -> float:
    """Total joules: per-module flops times rate, plus the overhead."""
    return (
        sum(
            flops * m.joules_per_flop[kind]
            for kind, (flops, _) in ledger.per_module.items()
        )
        + m.overhead_j
    )


def throughput(tasks_completed: int, wall_ms_simulated: float) -> float:
    """Tasks per simulated second."""
    if wall_ms_simulated <= 0:
        raise AccountingError("simulated wall time must be positive")
    return tasks_completed / (wall_ms_simulated / 1000.0)


@dataclass(frozen=True)
class MetricsRow:
    """One exported line of the per-task metrics CSV."""

    task_id: int
    mode: str
    t_model_ms: float
    t_controller_ms: float
    t_presenter_ms: float
    t_total_ms: float
    flops: float
    invalid_flops: float
    energy_j: float
    quality: float
    reward: float

    def as_csv(self) -> str:
        return ",".join(
            [
                str(self.task_id),
                self.mode,
                repr(float(self.t_model_ms)),
                repr(float(self.t_controller_ms)),
                repr(float(self.t_presenter_ms)),
                repr(float(self.t_total_ms)),
                repr(float(self.flops)),
                repr(float(self.invalid_flops)),
                repr(float(self.energy_j)),
                repr(float(self.quality)),
                repr(float(self.reward)),
            ]
        )


def write_metrics_csv(rows: list[MetricsRow], path: str | Path) -> None:
    lines = [",".join(METRICS_COLUMNS)]
    lines.extend(row.as_csv() for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")
