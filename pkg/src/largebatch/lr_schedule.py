"""Linear scaling rule and piecewise-constant learning-rate schedules."""

from __future__ import annotations

from dataclasses import dataclass

REFERENCE_EPOCHS = 90

# (length in epochs out of 90, multiplier of eta_base)
SLOW_START_PHASES = ((40, 0.5), (30, 0.075), (15, 0.01), (5, 0.001))
GOYAL_PHASES = ((30, 1.0), (30, 0.1), (20, 0.01), (10, 0.001))


@dataclass(frozen=True)
class ClusterShape:
    n_workers: int
    b_local: int

    def __post_init__(self):
        if self.n_workers < 1 or self.b_local < 1:
            raise ValueError("n_workers and b_local must be positive")

    @property
    def b_total(self) -> int:
        return self.n_workers * self.b_local


def eta_base(shape: ClusterShape) -> float:
    """0.1 per 256 examples of total minibatch."""
    return 0.1 * shape.b_total / 256


@dataclass(frozen=True)
class LrSchedule:
    """Phases are ``(start, end, multiplier)`` with right-open ``[start, end)``."""

    phases: tuple
    eta_base: float

    def __post_init__(self):
        if self.eta_base <= 0:
            raise ValueError("eta_base must be > 0")
        if not self.phases or self.phases[0][0] != 0:
            raise ValueError("phases must start at epoch 0")
        for (s0, e0, m0), (s1, _, _) in zip(self.phases, self.phases[1:]):
            if e0 != s1:
                raise ValueError("phases must be contiguous")
        for s, e, m in self.phases:
            if e <= s or m <= 0:
                raise ValueError(f"bad phase ({s}, {e}, {m})")

    @property
    def total_epochs(self) -> float:
        return self.phases[-1][1]

    def __call__(self, epoch: float) -> float:
        return lr_at(self, epoch)


def _build(table, eta_base_value, total_epochs, iterations_per_epoch):
    if total_epochs < len(table):
        raise ValueError(f"total_epochs={total_epochs} too short for {len(table)} phases")
    if eta_base_value <= 0:
        raise ValueError("eta_base must be > 0")
    scale = total_epochs / REFERENCE_EPOCHS
    bounds = [0.0]
    acc = 0
    for length, _ in table:
        acc += length
        b = acc * scale
        if iterations_per_epoch:
            # snap to the iteration grid so a phase never changes mid-iteration
            b = round(b * iterations_per_epoch) / iterations_per_epoch
        bounds.append(b)
    bounds[-1] = float(total_epochs)
    phases = tuple(
        (bounds[i], bounds[i + 1], mult) for i, (_, mult) in enumerate(table)
    )
    return LrSchedule(phases=phases, eta_base=eta_base_value)


def slow_start_schedule(eta_base, total_epochs=90, iterations_per_epoch=None) -> LrSchedule:
    """0.5, 0.075, 0.01, 0.001 times eta_base over 40/30/15/5 of every 90 epochs."""
    return _build(SLOW_START_PHASES, eta_base, total_epochs, iterations_per_epoch)


def goyal_schedule(eta_base, total_epochs=90, iterations_per_epoch=None) -> LrSchedule:
    """1, 0.1, 0.01, 0.001 times eta_base over 30/30/20/10 of every 90 epochs."""
    return _build(GOYAL_PHASES, eta_base, total_epochs, iterations_per_epoch)


def lr_at(schedule: LrSchedule, epoch: float) -> float:
    if epoch < 0 or epoch >= schedule.total_epochs:
        raise ValueError(f"epoch {epoch} outside [0, {schedule.total_epochs})")
    for start, end, mult in schedule.phases:
        if start <= epoch < end:
            return schedule.eta_base * mult
    raise AssertionError("unreachable: phases cover the range")
