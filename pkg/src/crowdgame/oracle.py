"""Brute-force reference implementations used by tests and certification.

Everything here trades speed for independence: `scalar_rate` re-derives the
rate map with plain scalar arithmetic and shares no helpers with the
vectorized implementation, and the grid searches certify optimality by
exhaustive evaluation rather than by trusting the solver's line search.
"""

from __future__ import annotations

import math

import numpy as np

from .equilibrium import EmptyFeasibleInterval
from .model import GameConfig, InfeasibilityError, utility_rate_space


def scalar_rate(i: int, powers, cfg: GameConfig) -> float:
    """Rate of sensor i recomputed by literal scalar transcription.

    Kept deliberately free of numpy and of the vectorized code path so it can
    serve as a cross-implementation oracle.
    """
    sensors = cfg.sensors
    if not 0 <= i < len(sensors):
        raise IndexError(f"sensor id {i} out of range")
    interference = 0.0
    for j, s in enumerate(sensors):
        if j == i:
            continue
        tx = powers[j] - s.circuit_power
        if tx < 0.0:
            tx = 0.0
        interference += s.channel_gain * tx / (s.ap_distance ** s.path_loss_exp)
    me = sensors[i]
    tx = powers[i] - me.circuit_power
    if tx < 0.0:
        tx = 0.0
    signal = me.channel_gain * tx / (me.ap_distance ** me.path_loss_exp)
    sinr = signal / (interference + cfg.noise_variance)
    # log2(1 + x) = log1p(x)/ln 2; log1p keeps tiny SINRs fully accurate
    return me.bandwidth * math.log1p(sinr) / math.log(2.0)


def _feasible(i: int, x: float, r: np.ndarray, cfg: GameConfig) -> bool:
    r[i] = x
    try:
        utility_rate_space(i, r, cfg)
        return True
    except InfeasibilityError:
        return False


def _upper_bound(i: int, r: np.ndarray, cfg: GameConfig, min_rate: float) -> float:
    """Feasibility boundary of sensor i's rate, probed through the utility."""
    if not _feasible(i, min_rate, r, cfg):
        raise EmptyFeasibleInterval(i, min_rate)
    lo, hi = min_rate, max(1.0, 2.0 * min_rate)
    for _ in range(200):
        if not _feasible(i, hi, r, cfg):
            break
        lo, hi = hi, 2.0 * hi
    else:
        raise RuntimeError("no infeasible upper rate found")
    while hi - lo > 1e-12 * max(1.0, lo):
        mid = 0.5 * (lo + hi)
        if _feasible(i, mid, r, cfg):
            lo = mid
        else:
            hi = mid
    return lo


def grid_best_response(
    i: int,
    r_others,
    cfg: GameConfig,
    grid_points: int,
    min_rate: float = 0.1,
) -> float:
    """Argmax of sensor i's utility over a uniform grid of own-rates.

    Ties resolve toward the smallest rate.  `r_others` holds the rates of
    every sensor except i, in index order.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    others = np.asarray(r_others, dtype=float)
    r = np.insert(others, i, min_rate)
    hi = _upper_bound(i, r, cfg, min_rate)
    best_x, best_u = min_rate, -math.inf
    for x in np.linspace(min_rate, hi, grid_points):
        r[i] = x
        u = utility_rate_space(i, r, cfg)
        if u > best_u:
            best_x, best_u = float(x), u
    return best_x


def grid_certify_ne(
    r_star,
    cfg: GameConfig,
    grid_points: int,
    min_rate: float = 0.1,
) -> float:
    """Worst unilateral grid-deviation gain at the profile r_star.

    A value <= epsilon certifies an epsilon-Nash equilibrium at the grid's
    resolution.
    """
    if grid_points < 2:
        raise ValueError("grid_points must be >= 2")
    r_star = np.asarray(r_star, dtype=float)
    worst = -math.inf
    r = r_star.copy()
    for i in range(cfg.n_sensors):
        current = utility_rate_space(i, r_star, cfg)
        hi = _upper_bound(i, r, cfg, min_rate)
        r[i] = r_star[i]
        best = -math.inf
        for x in np.linspace(min_rate, hi, grid_points):
            r[i] = x
            u = utility_rate_space(i, r, cfg)
            if u > best:
                best = u
        r[i] = r_star[i]
        worst = max(worst, best - current)
    return worst
