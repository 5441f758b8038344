"""Log-distance radio link model with shadowing, noise and quality tiers."""
from __future__ import annotations

import math
from dataclasses import dataclass

# additive weight offsets per link-quality band (strong links cost nothing,
# weak ones are pushed behind every strong alternative)
TIER_GOOD_DBM = -70.0
TIER_MEDIUM_DBM = -80.0
TIER_FLOOR_DBM = -85.0
TIER_GOOD_COST = 0.0
TIER_MEDIUM_COST = 10_000.0
TIER_LOW_COST = 20_000.0


@dataclass(frozen=True)
class LinkModelParams:
    """Propagation parameters; distances in metres, powers in dBm."""

    tx_power_dbm: float = 0.0
    pl0_db: float = 55.0
    exponent: float = 2.7
    shadow_sigma_db: float = 3.0
    noise_sigma_db: float = 1.0
    sensitivity_dbm: float = -90.0

    def __post_init__(self):
        if self.exponent <= 0:
            raise ValueError("path loss exponent must be positive")
        if self.shadow_sigma_db < 0 or self.noise_sigma_db < 0:
            raise ValueError("sigma values must be >= 0")


@dataclass(frozen=True)
class PairChannel:
    """Static per-pair channel state, fixed for a whole scenario."""

    distance_m: float
    obstacle_penalty_db: float = 0.0
    shadow_offset_db: float = 0.0

    def __post_init__(self):
        if self.distance_m <= 0:
            raise ValueError("pair distance must be positive")


def mean_rssi(params: LinkModelParams, chan: PairChannel) -> float:
    """Noise-free received power for a pair (the per-packet mean)."""
    pl = params.pl0_db + 10.0 * params.exponent * math.log10(chan.distance_m)
    return (params.tx_power_dbm - pl - chan.obstacle_penalty_db
            + chan.shadow_offset_db)


def rssi_sample(params: LinkModelParams, chan: PairChannel, noise_db: float = 0.0) -> float:
    """One received-power sample; noise_db is the per-packet draw, N(0, noise_sigma)."""
    return mean_rssi(params, chan) + noise_db


def packet_delivered(rssi_dbm: float, sensitivity_dbm: float) -> bool:
    """A packet is decodable iff it arrives at or above the radio's sensitivity."""
    return rssi_dbm >= sensitivity_dbm


def tier_cost(avg_rssi_dbm: float) -> float:
    """Additive weight offset for the link's quality band.

    Links below the admission floor have no tier; they must be rejected
    during neighbour finalization, so asking for their cost is an error.
    """
    if avg_rssi_dbm >= TIER_GOOD_DBM:
        return TIER_GOOD_COST
    if avg_rssi_dbm >= TIER_MEDIUM_DBM:
        return TIER_MEDIUM_COST
    if avg_rssi_dbm >= TIER_FLOOR_DBM:
        return TIER_LOW_COST
    raise ValueError(f"rssi {avg_rssi_dbm} dBm is below the admission floor")
