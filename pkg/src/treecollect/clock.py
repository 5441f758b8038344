"""Per-node clocks and time synchronization by reference-point regression.

A node's hardware clock runs at a slightly wrong rate (crystal drift, ppm
scale). Timestamped messages from its parent give (local, global) reference
pairs; a least-squares line through them recovers rate and offset, and the
inverse maps a future global instant to the local alarm value for it.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

SYNC_TABLE_CAPACITY = 8


@dataclass(frozen=True)
class HardwareClock:
    """Free-running local clock: local = (1 + drift_ppm*1e-6) * t + boot_offset."""

    drift_ppm: float
    boot_offset_us: float = 0.0

    def __post_init__(self):
        if abs(self.drift_ppm) > 100.0:
            raise ValueError("drift beyond +/-100 ppm is not a crystal, it is a bug")

    def local_time(self, t_us: float) -> float:
        return (1.0 + self.drift_ppm * 1e-6) * t_us + self.boot_offset_us

    def real_time_for_local(self, local_us: float) -> float:
        return (local_us - self.boot_offset_us) / (1.0 + self.drift_ppm * 1e-6)


@dataclass(frozen=True)
class SkewEstimate:
    """Fitted local->global line: global ~= theta * local + phi."""

    theta_hat: float
    phi_hat: float
    n_points: int

    def global_time(self, local_us: float) -> float:
        return self.theta_hat * local_us + self.phi_hat

    def local_for_global(self, global_us: float) -> float:
        return (global_us - self.phi_hat) / self.theta_hat


@dataclass
class SyncTable:
    """Bounded ring of (local, global) reference points, oldest evicted first."""

    capacity: int = SYNC_TABLE_CAPACITY
    points: list[tuple[float, float]] = field(default_factory=list)

    def add_reference_point(self, local_us: float, global_us: float) -> bool:
        """Append one pair; rejects non-monotone local timestamps."""
        if self.points and local_us <= self.points[-1][0]:
            return False
        self.points.append((local_us, global_us))
        if len(self.points) > self.capacity:
            del self.points[0]
        return True

    def clear(self) -> None:
        self.points.clear()

    def __len__(self) -> int:
        return len(self.points)


def estimate_skew(table: SyncTable) -> SkewEstimate:
    """Least-squares skew/offset from the table.

    With one or two points a rate cannot be trusted: fall back to theta=1 and
    pure offset from the newest pair. Three or more points give the full fit.
    """
    n = len(table.points)
    if n == 0:
        raise ValueError("cannot estimate skew from an empty table")
    if n < 3:
        local, glob = table.points[-1]
        return SkewEstimate(theta_hat=1.0, phi_hat=glob - local, n_points=n)
    pts = np.asarray(table.points, dtype=np.float64)
    local = pts[:, 0]
    glob = pts[:, 1]
    # centre first: raw timestamps are ~1e11 us and squaring them eats floats
    lm = local.mean()
    gm = glob.mean()
    dl = local - lm
    dg = glob - gm
    theta = float(np.dot(dl, dg) / np.dot(dl, dl))
    phi = float(gm - theta * lm)
    return SkewEstimate(theta_hat=theta, phi_hat=phi, n_points=n)


def wakeup_error_trajectory(drift_ppm: float, jitter_us: float, dci_us: float,
                            n_slots: int, rng: np.random.Generator,
                            sync_points: int = 5, sync_interval_us: float = 30e6,
                            trigger_delay_us: float = 120e6,
                            sleep_offset_us: float = 3e6,
                            boot_offset_us: float = 0.0) -> list[float]:
    """Per-slot wake-up error (us) for one child refreshed by its parent.

    Models the life of one node: a burst of timestamped messages before the
    first slot, then one timestamped broadcast per slot that both ends the slot
    and feeds the next alarm. jitter_us is the half-width of the uniform
    timestamping error. Returns |actual wake - intended instant| per slot.
    """
    clock = HardwareClock(drift_ppm=drift_ppm, boot_offset_us=boot_offset_us)
    table = SyncTable()

    def stamp(t_us: float) -> None:
        noise = rng.uniform(-jitter_us, jitter_us) if jitter_us > 0 else 0.0
        table.add_reference_point(clock.local_time(t_us), t_us + noise)

    for j in range(sync_points):
        stamp(j * sync_interval_us)
    trigger = (sync_points - 1) * sync_interval_us + trigger_delay_us

    errors = []
    for k in range(n_slots):
        intended = trigger + (k + 1) * dci_us
        est = estimate_skew(table)
        wake_real = clock.real_time_for_local(est.local_for_global(intended))
        errors.append(abs(wake_real - intended))
        # end-of-slot broadcast refreshes the table for the next alarm
        stamp(intended + sleep_offset_us)
    return errors
