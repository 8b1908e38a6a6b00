"""Offload contracts between an overloaded BS and candidate UAVs.

A UAV's *type* for a BS is ``theta = d / (alpha (T - t))`` where ``t`` is its
travel time. The menu offered for every type is ``u(theta) = gamma theta``
(payment per bit) and ``p(theta) = gamma theta^2 / 2`` (transmit power) with
``gamma = 2 alpha^2 T^2 p_h / d^2``, which makes the lowest type break even.
"""

from dataclasses import dataclass

import numpy as np

from uavsim._validation import check_fraction, check_positive
from uavsim.channel import SpatialPoint


@dataclass(frozen=True)
class EconomicParams:
    energy_cost_per_j: float = 1.2
    ue_payment_per_bit: float = 1e-7
    hover_power_w: float = 16.0
    move_power_w: float = 20.0
    p_max_w: float = 20.0

    def __post_init__(self):
        for name in ("energy_cost_per_j", "ue_payment_per_bit", "hover_power_w",
                     "move_power_w", "p_max_w"):
            check_positive(getattr(self, name), name)

    @property
    def alpha(self):
        return self.energy_cost_per_j

    @property
    def beta(self):
        return self.ue_payment_per_bit


@dataclass(frozen=True)
class UavProfile:
    position: SpatialPoint
    speed_m_s: float = 5.0
    energy_j: float = 90000.0
    busy_until_s: float = 0.0
    uid: int = 0

    def __post_init__(self):
        check_positive(self.speed_m_s, "speed_m_s")
        check_positive(self.energy_j, "energy_j", allow_zero=True)


@dataclass(frozen=True)
class TypeValue:
    theta: float
    travel_time_s: float
    m_offset_w: float


@dataclass(frozen=True)
class ContractMenu:
    gamma: float
    demand_bits: float
    T_s: float
    type_interval: tuple

    def unit_payment(self, theta):
        return self.gamma * np.asarray(theta, dtype=float)

    def power(self, theta):
        return 0.5 * self.gamma * np.asarray(theta, dtype=float) ** 2

    def payment(self, theta):
        """Total payment u(theta) * d for the whole demand."""
        return self.unit_payment(theta) * self.demand_bits

    def theta_grid(self, n):
        lo, hi = self.type_interval
        return np.array([lo]) if n == 1 else np.linspace(lo, hi, n)

    def travel_time_of(self, theta, alpha):
        """Invert the type definition: t = T - d / (alpha theta)."""
        return self.T_s - self.demand_bits / (alpha * np.asarray(theta, dtype=float))


def travel_time(uav, service_point):
    """Straight-line flight time at constant speed."""
    return uav.position.distance_to(service_point) / uav.speed_m_s


def uav_type(demand_bits, T_s, travel_time_s, econ):
    if travel_time_s >= T_s:
        raise ValueError("service window exhausted: travel time >= T")
    remaining = T_s - travel_time_s
    theta = demand_bits / (econ.alpha * remaining)
    m_offset = econ.move_power_w * travel_time_s / remaining + econ.hover_power_w
    return TypeValue(theta, travel_time_s, m_offset)


def max_available_power(uav, travel_time_s, T_s, econ):
    """Power left for transmission after flying in and hovering for the service."""
    remaining = T_s - travel_time_s
    if remaining <= 0:
        return 0.0
    spare = uav.energy_j - econ.move_power_w * travel_time_s - econ.hover_power_w * remaining
    return max(spare / remaining, 0.0)


def build_menu(demand_bits, T_s, econ, kappa):
    check_positive(demand_bits, "demand_bits")
    check_fraction(kappa, "kappa")
    alpha = econ.alpha
    gamma = 2.0 * alpha ** 2 * T_s ** 2 * econ.hover_power_w / demand_bits ** 2
    interval = (demand_bits / (alpha * T_s), demand_bits / (alpha * (1.0 - kappa) * T_s))
    return ContractMenu(gamma, demand_bits, T_s, interval)


def uav_utility(menu, accepted_theta, true_type, econ):
    """Operator profit: payment received minus the energy bill."""
    t = true_type.travel_time_s
    remaining = menu.T_s - t
    energy = (menu.power(accepted_theta) + econ.hover_power_w) * remaining + econ.move_power_w * t
    return float(menu.payment(accepted_theta) - econ.alpha * energy)


def bs_utility(menu, theta, true_type, capacity_bps, econ, eta, T_s):
    """BS revenue from the offloaded UEs minus the payment to the UAV.

    ``capacity_bps`` is the hotspot capacity at the menu power, or a callable
    mapping power (W) to capacity.
    """
    if callable(capacity_bps):
        capacity_bps = capacity_bps(float(menu.power(theta)))
    delivered = eta * (T_s - true_type.travel_time_s) * capacity_bps
    return float(econ.beta * delivered - menu.payment(theta))


@dataclass(frozen=True)
class IRReport:
    passed: bool
    min_margin: float
    worst_theta: float
    fixed_m_passed: bool
    fixed_m_min_margin: float


def verify_ir(menu, econ, grid_size=200, M_of_theta=None, tol=1e-9):
    """Check theta u(theta) - p(theta) - M >= 0 on a uniform type grid.

    The physical check recovers ``M(theta)`` from the travel time implied by
    each type (or uses ``M_of_theta`` when given). The fixed-M check holds M
    at the lowest type's value ``p_h``, as in the classical sufficiency proof.
    """
    if grid_size < 1:
        raise ValueError("grid_size must be >= 1")
    theta = menu.theta_grid(grid_size)
    base = theta * menu.unit_payment(theta) - menu.power(theta)
    if M_of_theta is None:
        t = np.clip(menu.travel_time_of(theta, econ.alpha), 0.0, None)
        M = econ.move_power_w * t / (menu.T_s - t) + econ.hover_power_w
    else:
        M = np.asarray([M_of_theta(th) for th in theta], dtype=float)
    margin = base - M
    fixed = base - econ.hover_power_w
    worst = int(np.argmin(margin))
    return IRReport(bool(margin.min() >= -tol), float(margin.min()), float(theta[worst]),
                    bool(fixed.min() >= -tol), float(fixed.min()))


@dataclass(frozen=True)
class ICReport:
    passed: bool
    max_step_gap: int
    monotone: bool
    condition_c_max_rel_err: float


def verify_ic(menu, grid_size=200, u=None, p=None, fd_rtol=1e-6):
    """Grid check of incentive compatibility plus its necessary conditions.

    * best response: argmax over theta' of theta u(theta') - p(theta') must sit
      within one grid step of the true type;
    * monotonicity of u and p across the grid;
    * dp/dtheta = theta du/dtheta by central differences (``fd_rtol``).

    ``u`` and ``p`` override the menu functions, e.g. to test a tampered menu.
    A gap of 0 means every type's best response is exactly its own contract.
    """
    if grid_size < 2:
        raise ValueError("grid_size must be >= 2")
    u = menu.unit_payment if u is None else u
    p = menu.power if p is None else p
    theta = menu.theta_grid(grid_size)
    u_vals = np.asarray(u(theta), dtype=float)
    p_vals = np.asarray(p(theta), dtype=float)

    payoff = theta[:, None] * u_vals[None, :] - p_vals[None, :]
    best = payoff.argmax(axis=1)
    gap = int(np.abs(best - np.arange(grid_size)).max())

    scale_u = max(np.abs(u_vals).max(), np.finfo(float).tiny)
    scale_p = max(np.abs(p_vals).max(), np.finfo(float).tiny)
    monotone = bool(np.all(np.diff(u_vals) >= -1e-12 * scale_u)
                    and np.all(np.diff(p_vals) >= -1e-12 * scale_p))

    h = (theta[-1] - theta[0]) / (grid_size - 1)
    inner = theta[1:-1]
    dp = (np.asarray(p(inner + h)) - np.asarray(p(inner - h))) / (2 * h)
    du = (np.asarray(u(inner + h)) - np.asarray(u(inner - h))) / (2 * h)
    rhs = inner * du
    denom = np.maximum(np.abs(rhs), np.abs(dp))
    denom = np.where(denom > 0, denom, 1.0)
    rel_err = float(np.max(np.abs(dp - rhs) / denom)) if len(inner) else 0.0

    passed = gap <= 1 and monotone and rel_err <= fd_rtol
    return ICReport(passed, gap, monotone, rel_err)


def select_optimal_uav(responses, menu, min_required_power_w, kappa, T_s, p_max_w):
    """Pick the qualified UAV with the smallest type.

    ``responses`` holds ``(uav_id, TypeValue, max_available_power_w)``.
    Returns the chosen id, or None when no UAV qualifies.
    """
    best = None
    for uid, tv, p_avail in responses:
        if tv.travel_time_s > kappa * T_s:
            continue
        power = float(menu.power(tv.theta))
        if not (min_required_power_w <= power <= min(p_avail, p_max_w)):
            continue
        key = (tv.theta, uid)
        if best is None or key < best:
            best = key
    return None if best is None else best[1]
