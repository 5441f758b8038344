"""Battery bookkeeping: loaded voltage, SOC from open-circuit voltage, drain.

Remaining charge is tracked in mAh. Terminal voltage under load differs from
the open-circuit voltage by the IR drop across the cell's internal resistance,
so measured voltages are corrected before the SOC curve lookup.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

RATED_CAPACITY_MAH = 2200.0
INTERNAL_R_OHM = 0.15
MEASUREMENT_LOAD_A = 0.010

# (ocv volts, soc fraction) anchors, 4 linear segments
DEFAULT_CURVE_ANCHORS = (
    (3.00, 0.00),
    (3.55, 0.10),
    (3.68, 0.35),
    (3.85, 0.75),
    (4.20, 1.00),
)


def ocv_from_loaded(v_loaded: float, i_load_a: float, r0_ohm: float = INTERNAL_R_OHM) -> float:
    """Open-circuit voltage recovered from a loaded terminal measurement."""
    if i_load_a < 0:
        raise ValueError("load current must be >= 0")
    if r0_ohm < 0:
        raise ValueError("internal resistance must be >= 0")
    return v_loaded + i_load_a * r0_ohm


@dataclass(frozen=True)
class SocOcvCurve:
    """Piecewise-linear map between open-circuit voltage and state of charge."""

    anchors: tuple[tuple[float, float], ...] = DEFAULT_CURVE_ANCHORS

    def __post_init__(self):
        a = self.anchors
        if len(a) != 5:
            raise ValueError("curve needs exactly 5 anchors (4 segments)")
        if a[0][1] != 0.0 or a[-1][1] != 1.0:
            raise ValueError("curve must span soc 0..1")
        for (v0, s0), (v1, s1) in zip(a, a[1:]):
            if v1 <= v0 or s1 <= s0:
                raise ValueError("anchors must increase in both voltage and soc")

    @property
    def v_min(self) -> float:
        return self.anchors[0][0]

    @property
    def v_max(self) -> float:
        return self.anchors[-1][0]

    def soc_from_ocv(self, ocv: float) -> float:
        """SOC fraction for an open-circuit voltage; clamps outside the curve."""
        a = self.anchors
        if ocv <= a[0][0]:
            return 0.0
        if ocv >= a[-1][0]:
            return 1.0
        for (v0, s0), (v1, s1) in zip(a, a[1:]):
            if ocv <= v1:
                return s0 + (s1 - s0) * (ocv - v0) / (v1 - v0)
        raise AssertionError("unreachable")

    def ocv_from_soc(self, soc: float) -> float:
        """Inverse map; clamps soc outside 0..1."""
        a = self.anchors
        if soc <= 0.0:
            return a[0][0]
        if soc >= 1.0:
            return a[-1][0]
        for (v0, s0), (v1, s1) in zip(a, a[1:]):
            if soc <= s1:
                return v0 + (v1 - v0) * (soc - s0) / (s1 - s0)
        raise AssertionError("unreachable")


@dataclass(frozen=True)
class CurrentProfile:
    """Draw per activity. Radio tx and rx currents are nearly equal on purpose."""

    tx_ma: float = 17.4
    rx_ma: float = 18.8
    sleep_ua: float = 6.0
    sense_ma: float = 5.0
    sense_burst_ms: float = 200.0

    def __post_init__(self):
        ref = max(self.tx_ma, self.rx_ma)
        if ref > 0 and abs(self.tx_ma - self.rx_ma) / ref > 0.15:
            raise ValueError("tx and rx currents should be within 15% of each other")


@dataclass
class BatteryState:
    rated_mah: float = RATED_CAPACITY_MAH
    remaining_mah: float = RATED_CAPACITY_MAH
    r0_ohm: float = INTERNAL_R_OHM
    curve: SocOcvCurve = field(default_factory=SocOcvCurve)

    @property
    def soc(self) -> float:
        return self.remaining_mah / self.rated_mah

    def reported_voltage_mv(self, i_load_a: float = MEASUREMENT_LOAD_A) -> float:
        """Terminal voltage (mV) the node would measure under the given load."""
        ocv = self.curve.ocv_from_soc(self.soc)
        return (ocv - i_load_a * self.r0_ohm) * 1000.0


def drain(state: BatteryState, profile: CurrentProfile, radio_on_ms: float = 0.0,
          tx_fraction: float = 0.0, sensed: int = 0, slept_ms: float = 0.0) -> BatteryState:
    """Charge bookkeeping for one accounting interval; floors at empty."""
    if radio_on_ms < 0 or slept_ms < 0 or sensed < 0:
        raise ValueError("durations and counts must be >= 0")
    if not 0.0 <= tx_fraction <= 1.0:
        raise ValueError("tx_fraction must be in 0..1")
    ma_ms = radio_on_ms * (tx_fraction * profile.tx_ma + (1.0 - tx_fraction) * profile.rx_ma)
    ma_ms += sensed * profile.sense_ma * profile.sense_burst_ms
    ma_ms += slept_ms * profile.sleep_ua * 1e-3
    used_mah = ma_ms / 3.6e6
    return replace(state, remaining_mah=max(0.0, state.remaining_mah - used_mah))


@dataclass(frozen=True)
class DaylightWindow:
    """Charging window as seconds of day, start < end (no wrap)."""

    start_s: float = 6 * 3600.0
    end_s: float = 18 * 3600.0

    def __post_init__(self):
        if not 0 <= self.start_s < self.end_s <= 86400:
            raise ValueError("daylight window must satisfy 0 <= start < end <= 86400")

    def overlap_s(self, start_s_of_day: float, duration_s: float) -> float:
        """Seconds of [start, start+duration) that fall inside the window."""
        if duration_s < 0:
            raise ValueError("duration must be >= 0")
        total = 0.0
        t = start_s_of_day
        remaining = duration_s
        while remaining > 0:
            sod = t % 86400.0
            chunk = min(remaining, 86400.0 - sod)
            lo = max(sod, self.start_s)
            hi = min(sod + chunk, self.end_s)
            if hi > lo:
                total += hi - lo
            t += chunk
            remaining -= chunk
        return total


def solar_charge(state: BatteryState, rate_ma: float, charged_s: float) -> BatteryState:
    """Add harvested charge for time actually spent in daylight; caps at rated."""
    if rate_ma < 0 or charged_s < 0:
        raise ValueError("rate and duration must be >= 0")
    gained = rate_ma * charged_s / 3600.0
    return replace(state, remaining_mah=min(state.rated_mah, state.remaining_mah + gained))
