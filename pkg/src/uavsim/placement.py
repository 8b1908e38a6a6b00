"""Service point and minimum transmit power for serving a hotspot."""

import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq, minimize

from uavsim._validation import check_positive
from uavsim.channel import LinkBudget, SpatialPoint, density_masses

# stands in for "zero power" when nothing needs to be delivered
POWER_FLOOR_W = 1e-12
DEFAULT_ALTITUDE_BOUNDS = (50.0, 500.0)
N_RESTARTS = 5


@dataclass(frozen=True)
class PlacementResult:
    service_point: SpatialPoint
    min_power_w: float
    achieved_capacity_bps: float


def _required_power(budget, demand_bits, T_s, eta, p_max_w, rtol=1e-10):
    """Smallest power meeting eta * T * C(p) >= demand, or None."""
    if demand_bits <= 0:
        return POWER_FLOOR_W
    target = demand_bits / (eta * T_s)
    c_max = budget.capacity(p_max_w)
    if c_max < target * (1.0 - 1e-12):
        return None
    if budget.capacity(POWER_FLOOR_W) >= target:
        return POWER_FLOOR_W
    if c_max <= target:
        return p_max_w
    # capacity is increasing in p; bracket in log-power
    f = lambda logp: budget.capacity(math.exp(logp)) - target
    logp = brentq(f, math.log(POWER_FLOOR_W), math.log(p_max_w), xtol=1e-12, rtol=rtol)
    p = math.exp(logp)
    # brentq may stop just below the root; step up to the feasible side
    while budget.capacity(p) < target and p < p_max_w:
        p = min(p * (1.0 + 1e-10), p_max_w)
    return p


def min_required_power(x, demand_bits, T_s, eta, hotspot, ue_density, params, p_max_w=20.0):
    """Minimum transmit power at ``x`` that lets the hotspot demand be served.

    Returns None when even ``p_max_w`` falls short, which means the hotspot
    has to be split among several UAVs.
    """
    check_positive(demand_bits, "demand_bits", allow_zero=True)
    check_positive(T_s, "T_s")
    check_positive(eta, "eta")
    masses = density_masses(hotspot, ue_density)
    budget = LinkBudget(x, hotspot.centers(), params, masses)
    return _required_power(budget, demand_bits, T_s, eta, p_max_w)


def _restart_points(seed, span_xy, lo, hi):
    dx, dy = span_xy
    dz = 0.25 * (hi[2] - lo[2])
    offsets = [(dx, 0, 0), (-dx, 0, 0), (0, dy, 0), (0, -dy, 0), (0, 0, -dz)]
    return [np.clip(seed + np.array(o, dtype=float), lo, hi) for o in offsets]


def _search_box(region, masses, altitude_bounds, xy_bounds):
    z_lo, z_hi = map(float, altitude_bounds)
    if not 0 <= z_lo <= z_hi:
        raise ValueError(f"invalid altitude bounds {altitude_bounds}")
    if xy_bounds is None:
        xy_bounds = region.bounds
    xmin, ymin, xmax, ymax = map(float, xy_bounds)
    lo = np.array([xmin, ymin, z_lo])
    hi = np.array([xmax, ymax, z_hi])
    centers = region.centers()
    seed = np.array([*(masses @ centers / masses.sum()), 0.5 * (z_lo + z_hi)])
    return lo, hi, np.clip(seed, lo, hi)


def _multistart(objective, region, lo, hi, seed, n_restarts):
    """Bounded Nelder-Mead from ``seed`` and fixed perturbations of it.

    Returns the best point seen; ties keep the earlier start so the result
    never gets worse than the seed.
    """
    bx0, by0, bx1, by1 = region.bounds
    span = (max(0.25 * (bx1 - bx0), region.cell_size), max(0.25 * (by1 - by0), region.cell_size))
    starts = [seed] + _restart_points(seed, span, lo, hi)[:n_restarts]
    step = np.array([span[0], span[1], max(0.25 * (hi[2] - lo[2]), 1.0)])
    best_val, best_x = math.inf, None
    for start in starts:
        simplex = [start]
        for i in range(3):
            e = np.eye(3)[i] * step[i]
            simplex.append(start + e if start[i] + step[i] <= hi[i] else start - e)
        res = minimize(objective, start, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                       options={"initial_simplex": np.clip(simplex, lo, hi), "xatol": 0.5,
                                "fatol": 1e-7, "maxiter": 400})
        for val, x in ((objective(start), start), (float(res.fun), np.clip(res.x, lo, hi))):
            if val < best_val:
                best_val, best_x = val, x
    return best_x, best_val


def optimal_service_point(hotspot, ue_density, demand_bits, T_s, eta, params,
                          altitude_bounds=DEFAULT_ALTITUDE_BOUNDS, xy_bounds=None,
                          p_max_w=20.0, n_restarts=N_RESTARTS):
    """Place a UAV so that the power needed to meet the demand is smallest.

    Searches on log(power) from the density centroid at mid altitude and from
    ``n_restarts`` fixed perturbations of it. Infeasible points are penalized
    by their capacity shortfall at ``p_max_w`` so the search can climb out.
    ``xy_bounds`` (xmin, ymin, xmax, ymax) defaults to the hotspot grid.
    """
    masses = density_masses(hotspot, ue_density)
    centers = hotspot.centers()
    lo, hi, seed = _search_box(hotspot, masses, altitude_bounds, xy_bounds)
    target = demand_bits / (eta * T_s)
    cache = {}

    def evaluate(v):
        key = tuple(np.round(v, 9))
        if key not in cache:
            budget = LinkBudget(v, centers, params, masses)
            p = _required_power(budget, demand_bits, T_s, eta, p_max_w)
            if p is None:
                shortfall = target / max(budget.capacity(p_max_w), 1e-300) - 1.0
                cache[key] = (math.log(p_max_w) + 1.0 + 10.0 * shortfall, None)
            else:
                cache[key] = (math.log(p), p)
        return cache[key]

    best_x, _ = _multistart(lambda v: evaluate(v)[0], hotspot, lo, hi, seed, n_restarts)
    _, power = evaluate(best_x)
    if power is None:
        raise ValueError("no feasible placement: demand exceeds capacity at p_max from every start")
    capacity = LinkBudget(best_x, centers, params, masses).capacity(power)
    return PlacementResult(SpatialPoint(*best_x), power, capacity)


def max_capacity_point(region, ue_density, params, power_w=20.0,
                       altitude_bounds=DEFAULT_ALTITUDE_BOUNDS, xy_bounds=None,
                       n_restarts=N_RESTARTS):
    """Service point maximizing the region's capacity at a fixed power.

    Returns ``(SpatialPoint, capacity_bps)``.
    """
    masses = density_masses(region, ue_density)
    centers = region.centers()
    lo, hi, seed = _search_box(region, masses, altitude_bounds, xy_bounds)

    def neg_log_capacity(v):
        return -math.log(LinkBudget(v, centers, params, masses).capacity(power_w))

    best_x, best_val = _multistart(neg_log_capacity, region, lo, hi, seed, n_restarts)
    return SpatialPoint(*best_x), math.exp(-best_val)
