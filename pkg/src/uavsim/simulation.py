"""Event-driven simulation of UAV offloading for overloaded base stations.

Each overload episode of a BS goes through learning (predictive policy
only), association over a shared FIFO broadcast channel, flight, service for
the rest of the interval ``T`` and then either re-listening or recharging.
Two event-driven baselines skip learning and the contract: they dispatch the
closest UAV or the UAV with the most energy and pay a fixed price per bit.
"""

import heapq
import json
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from uavsim.channel import ChannelParams, LinkBudget, Region, SpatialPoint, uniform_density
from uavsim.contract import (EconomicParams, build_menu, bs_utility, max_available_power,
                             select_optimal_uav, uav_type, uav_utility)
from uavsim.learning import (LearningConfig, RecordStream, TrafficDemandEstimator, count_ues,
                             split_hotspot, total_average_rate)
from uavsim.mixture import cell_values
from uavsim.placement import (DEFAULT_ALTITUDE_BOUNDS, _required_power, max_capacity_point,
                              optimal_service_point)

POLICIES = ("predictive", "closest", "max_energy")


@dataclass(frozen=True)
class SimulationConfig:
    overload_window_s: float = 60.0
    backoff_s: float = 60.0
    max_retries: int = 10
    round_s: float = 1.0
    recharge_s: float = 600.0
    battery_j: float = 90000.0
    n_components: int = 8
    n_ue_components: int = 3
    altitude_bounds: tuple = DEFAULT_ALTITUDE_BOUNDS


@dataclass(frozen=True, eq=False)
class BaseStation:
    """A BS with its service region and recorded downlink transmissions.

    ``capacity_bps`` is the offered load above which the BS is overloaded.
    ``ue_model`` is the true UE location mixture when known; it is used to
    score the capacity actually delivered. ``reference_hotspot`` is the
    congested area the event-driven baselines fly to.
    """

    bs_id: int
    position: SpatialPoint
    region: Region
    records: RecordStream
    capacity_bps: float
    ue_model: object = None
    reference_hotspot: Region = None


@dataclass(eq=False)
class Scenario:
    base_stations: list
    fleet: list
    recharge_stations: list
    econ: EconomicParams = field(default_factory=EconomicParams)
    channel: ChannelParams = field(default_factory=ChannelParams)
    learning: LearningConfig = field(default_factory=LearningConfig)
    sim: SimulationConfig = field(default_factory=SimulationConfig)
    horizon_s: float = 7200.0
    seed: int = 0
    service_map: Region = None
    truth: dict = field(default_factory=dict, repr=False)
    _cache: dict = field(default_factory=dict, repr=False)

    def validate(self):
        if not self.base_stations:
            raise ValueError("malformed scenario: no base stations")
        ids = [bs.bs_id for bs in self.base_stations]
        if len(set(ids)) != len(ids):
            raise ValueError("malformed scenario: duplicate BS ids")
        uids = [u.uid for u in self.fleet]
        if len(set(uids)) != len(uids):
            raise ValueError("malformed scenario: duplicate UAV ids")
        if self.fleet and not self.recharge_stations:
            raise ValueError("malformed scenario: no recharge stations")
        regions = [bs.region for bs in self.base_stations]
        first = regions[0]
        for r in regions[1:]:
            if r.shape != first.shape or r.cell_size != first.cell_size or r.origin != first.origin:
                raise ValueError("malformed scenario: service regions use different grids")
        stack = np.stack([r.mask for r in regions]).astype(int)
        if np.any(stack.sum(axis=0) > 1):
            raise ValueError("malformed scenario: service regions overlap")
        if self.service_map is not None:
            if not np.array_equal(stack.sum(axis=0) == 1, self.service_map.mask):
                raise ValueError("malformed scenario: service regions do not cover the map")
        if self.horizon_s <= 0:
            raise ValueError("malformed scenario: horizon must be positive")
        return self


class BroadcastChannel:
    """Exclusive FIFO grant of the shared association channel."""

    def __init__(self):
        self.holder = None
        self._queue = []

    def acquire(self, bs_id, time):
        """Request the channel; returns the grant time, or None if queued."""
        if self.holder is None and not self._queue:
            self.holder = bs_id
            return time
        heapq.heappush(self._queue, (time, bs_id))
        return None

    def release(self, bs_id, time):
        """Release the channel; returns (next bs id, grant time) or None."""
        if self.holder != bs_id:
            raise RuntimeError(f"protocol violation: BS {bs_id} released a channel held by "
                               f"{self.holder}")
        self.holder = None
        if self._queue:
            _, nxt = heapq.heappop(self._queue)
            self.holder = nxt
            return nxt, time
        return None


@dataclass(frozen=True, eq=False)
class Subarea:
    region: Region
    demand_bits: float
    service_point: SpatialPoint
    min_power_w: float


@dataclass
class _UavState:
    uid: int
    position: SpatialPoint
    speed: float
    energy_j: float
    available_at: float = 0.0
    spent: float = 0.0
    recharged: float = 0.0


@dataclass
class MetricsReport:
    policy: str = None
    fleet_size: int = 0
    total_capacity_bps: float = 0.0
    avg_energy_per_uav_j: float = 0.0
    avg_service_delay_s: float = 0.0
    avg_bs_utility: float = 0.0
    total_uav_utility: float = 0.0
    breakdown: dict = field(default_factory=dict)

    def to_dict(self):
        return asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), sort_keys=True, indent=2) + "\n"


def _sub_seed(*parts):
    return int(np.random.SeedSequence([int(p) for p in parts]).generate_state(1)[0])


def _occupied_bounds(region):
    c = region.centers()
    h = region.cell_size / 2
    return (c[:, 0].min() - h, c[:, 1].min() - h, c[:, 0].max() + h, c[:, 1].max() + h)


def _true_density(bs, region):
    """Per-cell UE density over ``region`` from the true UE model, normalized."""
    if bs.ue_model is None:
        return uniform_density(region)
    values = cell_values(bs.ue_model, region)
    total = values.sum() * region.cell_area
    if total <= 0:
        return uniform_density(region)
    return values / total


def overload_episodes(bs, config, sim, horizon_s):
    """Start times of overload episodes for one BS.

    The BS is overloaded at second ``s`` when its mean offered load over the
    preceding ``overload_window_s`` seconds exceeds ``capacity_bps``. After
    an episode starts, the next one is searched from the end of its learning
    window plus one service interval.
    """
    stream = bs.records.inside(bs.region)
    n = int(math.ceil(horizon_s / config.slot_s))
    w = int(round(sim.overload_window_s / config.slot_s))
    if len(stream) == 0 or w < 1:
        return []
    slots = np.floor(stream.time_s / config.slot_s).astype(int)
    keep = (slots >= 0) & (slots < n)
    load = np.bincount(slots[keep], weights=stream.rate_bps[keep], minlength=n)
    csum = np.concatenate([[0.0], np.cumsum(load)])
    # mean over slots [s - w, s) is available at time s
    means = np.full(n + 1, -np.inf)
    means[w:] = (csum[w:] - csum[:-w]) / w
    over = means > bs.capacity_bps
    episodes = []
    start = 0
    gap = config.learn_window_s + config.service_interval_s
    while start <= n:
        hits = np.flatnonzero(over[start:])
        if len(hits) == 0:
            break
        t0 = float((start + hits[0]) * config.slot_s)
        if t0 >= horizon_s:
            break
        episodes.append(t0)
        start = int(math.ceil((t0 + gap) / config.slot_s))
    return episodes


def plan_predictive(scenario, bs, t0):
    """Learning stage for one episode: demand, hotspot split, service points.

    Returns a list of Subarea, or a string naming why nothing can be planned.
    Results are cached on the scenario so every policy sweep reuses them.
    """
    key = ("predictive", bs.bs_id, t0)
    if key in scenario._cache:
        return scenario._cache[key]
    cfg = scenario.learning
    sim = scenario.sim
    econ = scenario.econ
    params = scenario.channel
    records = bs.records.window(t0, t0 + cfg.learn_window_s).inside(bs.region)
    bounds = _occupied_bounds(bs.region)
    try:
        est = TrafficDemandEstimator(bs.region, sim.n_components, sim.n_ue_components, cfg,
                                     random_state=_sub_seed(scenario.seed, bs.bs_id, t0))
        est.fit(records)

        def cap_fn(part):
            return max_capacity_point(part, est.hotspot_density(part), params, econ.p_max_w,
                                      sim.altitude_bounds, bounds)[1]

        pieces = split_hotspot(est.density_model_, est.hotspot_, cap_fn, cfg)
        plan = []
        for part, demand in pieces:
            res = optimal_service_point(part, est.hotspot_density(part), demand,
                                        cfg.service_interval_s, cfg.efficiency, params,
                                        sim.altitude_bounds, bounds, econ.p_max_w)
            plan.append(Subarea(part, demand, res.service_point, res.min_power_w))
    except ValueError as exc:
        plan = str(exc).split(":")[0]
    scenario._cache[key] = plan
    return plan


def _reference_hotspot(scenario, bs):
    if bs.reference_hotspot is not None:
        return bs.reference_hotspot
    key = ("reference", bs.bs_id)
    if key not in scenario._cache:
        est = TrafficDemandEstimator(bs.region, scenario.sim.n_components, 1, scenario.learning,
                                     random_state=_sub_seed(scenario.seed, bs.bs_id))
        try:
            scenario._cache[key] = est.fit(bs.records).hotspot_
        except ValueError:
            scenario._cache[key] = bs.region
    return scenario._cache[key]


def plan_baseline(scenario, bs, t0):
    """What an event-driven BS knows at detection time.

    Demand is the whole-area average rate per UE times the hotspot UE count
    over ``T``, measured on the overload window. The service point maximizes
    capacity at p_max for a uniform UE spread over the reference hotspot.
    """
    key = ("baseline", bs.bs_id, t0)
    if key in scenario._cache:
        return scenario._cache[key]
    cfg = scenario.learning
    sim = scenario.sim
    hotspot = _reference_hotspot(scenario, bs)
    window = bs.records.window(t0 - sim.overload_window_s, t0).inside(bs.region)
    area_ues = count_ues(window, bs.region, cfg)
    if area_ues == 0:
        plan = "no traffic"
    else:
        # rates observed over the overload window, not the learning window
        rate = total_average_rate(window, cfg) * cfg.learn_window_s / sim.overload_window_s
        rho = rate / area_ues
        q_hot = max(count_ues(window, hotspot, cfg), 1)
        demand = rho * q_hot * cfg.service_interval_s
        pkey = ("baseline_point", bs.bs_id)
        if pkey not in scenario._cache:
            scenario._cache[pkey] = max_capacity_point(
                hotspot, uniform_density(hotspot), scenario.channel, scenario.econ.p_max_w,
                sim.altitude_bounds, _occupied_bounds(bs.region))[0]
        point = scenario._cache[pkey]
        budget = LinkBudget(point, hotspot.centers(), scenario.channel,
                            uniform_density(hotspot) * hotspot.cell_area)
        p_req = _required_power(budget, demand, cfg.service_interval_s, cfg.efficiency,
                                scenario.econ.p_max_w)
        plan = Subarea(hotspot, demand, point, scenario.econ.p_max_w if p_req is None else p_req)
    scenario._cache[key] = plan
    return plan


class _Simulator:
    def __init__(self, scenario, policy, horizon_s):
        self.sc = scenario
        self.policy = policy
        self.horizon = horizon_s
        self.T = scenario.learning.service_interval_s
        self.log = []
        self.heap = []
        self.seq = 0
        self.channel = BroadcastChannel()
        self.bs_jobs = {}
        self.uavs = {u.uid: _UavState(u.uid, u.position, u.speed_m_s, u.energy_j,
                                      u.busy_until_s) for u in scenario.fleet}
        self.bs = {b.bs_id: b for b in scenario.base_stations}
        econ = scenario.econ
        kT = scenario.learning.travel_fraction * self.T
        self.energy_gate = econ.move_power_w * kT + (econ.hover_power_w + econ.p_max_w) * (self.T - kT)

    def emit(self, t, kind, bs=None, uav=None, **payload):
        self.log.append({"t": float(t), "kind": kind, "bs": bs, "uav": uav, "payload": payload})

    # events at equal times run in (priority, bs id) order
    def push(self, t, priority, kind, bs_id, data=None):
        heapq.heappush(self.heap, (t, priority, -1 if bs_id is None else bs_id, self.seq, kind,
                                   bs_id, data))
        self.seq += 1

    def run(self):
        sc = self.sc
        self.emit(0.0, "start", policy=self.policy, fleet_size=len(self.uavs),
                  n_bs=len(self.bs), horizon_s=float(self.horizon))
        for b in sc.base_stations:
            for t0 in overload_episodes(b, sc.learning, sc.sim, self.horizon):
                self.push(t0, 1, "overload", b.bs_id, {"t0": t0})
        while self.heap:
            t, _, _, _, kind, bs_id, data = heapq.heappop(self.heap)
            getattr(self, "_on_" + kind)(t, bs_id, data)
        self.emit(self.log[-1]["t"] if self.log else 0.0, "end", n_events=len(self.log) + 1)
        return self.log

    # --- episode start ---
    def _on_overload(self, t, bs_id, data):
        self.emit(t, "overload", bs_id)
        if self.policy == "predictive":
            self.push(t + self.sc.learning.learn_window_s, 2, "learned", bs_id, data)
        else:
            plan = plan_baseline(self.sc, self.bs[bs_id], data["t0"])
            if isinstance(plan, str):
                self.emit(t, "no_plan", bs_id, reason=plan)
                return
            self._dispatch_baseline(t, bs_id, {"t0": data["t0"], "plan": plan, "retries": 0})

    def _on_learned(self, t, bs_id, data):
        plan = plan_predictive(self.sc, self.bs[bs_id], data["t0"])
        if isinstance(plan, str):
            self.emit(t, "no_plan", bs_id, reason=plan)
            return
        self.emit(t, "learned", bs_id, n_subareas=len(plan),
                  demand_bits=[float(s.demand_bits) for s in plan])
        self._request(t, bs_id, {"t0": data["t0"], "plan": plan, "pending": list(range(len(plan))),
                                 "retries": 0})

    # --- broadcast channel ---
    def _request(self, t, bs_id, job):
        self.bs_jobs.setdefault(bs_id, []).append(job)
        self.emit(t, "channel_request", bs_id)
        granted = self.channel.acquire(bs_id, t)
        if granted is not None:
            self._grant(granted, bs_id)

    def _grant(self, t, bs_id):
        job = self.bs_jobs[bs_id].pop(0)
        self.emit(t, "channel_grant", bs_id, n_rounds=len(job["pending"]))
        job["unserved"] = []
        for k, n in enumerate(job["pending"]):
            self.push(t + k * self.sc.sim.round_s, 0, "round", bs_id, (job, n))
        self.push(t + len(job["pending"]) * self.sc.sim.round_s, 0, "release", bs_id, job)

    def _on_release(self, t, bs_id, job):
        self.emit(t, "channel_release", bs_id)
        nxt = self.channel.release(bs_id, t)
        if job["unserved"]:
            if job["retries"] < self.sc.sim.max_retries:
                retry = {"t0": job["t0"], "plan": job["plan"], "pending": job["unserved"],
                         "retries": job["retries"] + 1}
                self.push(t + self.sc.sim.backoff_s, 2, "retry", bs_id, retry)
            else:
                self.emit(t, "give_up", bs_id, subareas=job["unserved"])
        if nxt is not None:
            self._grant(nxt[1], nxt[0])

    def _on_retry(self, t, bs_id, job):
        self._request(t, bs_id, job)

    def _idle(self, t):
        return [u for uid, u in sorted(self.uavs.items()) if u.available_at <= t]

    def _on_round(self, t, bs_id, payload):
        job, n = payload
        sc = self.sc
        econ = sc.econ
        sub = job["plan"][n]
        kappa = sc.learning.travel_fraction
        menu = build_menu(sub.demand_bits, self.T, econ, kappa)
        responses = []
        types = {}
        for u in self._idle(t):
            tt = u.position.distance_to(sub.service_point) / u.speed
            if tt >= self.T:
                continue
            tv = uav_type(sub.demand_bits, self.T, tt, econ)
            p_avail = max_available_power(u, tt, self.T, econ)
            responses.append((u.uid, tv, p_avail))
            types[u.uid] = (tv, p_avail)
        chosen = select_optimal_uav(responses, menu, sub.min_power_w, kappa, self.T, econ.p_max_w)
        self.emit(t, "round", bs_id, subarea=n, demand_bits=float(sub.demand_bits),
                  service_point=[sub.service_point.x, sub.service_point.y, sub.service_point.z],
                  kappa=kappa, gamma=float(menu.gamma),
                  responses=[[uid, float(tv.theta)] for uid, tv, _ in responses], selected=chosen)
        if chosen is None:
            job["unserved"].append(n)
            return
        tv, p_avail = types[chosen]
        theta = tv.theta
        power = float(menu.power(theta))
        capacity = self._realized_capacity(bs_id, sub, power)
        ir_margin = float(theta * menu.unit_payment(theta) - menu.power(theta) - tv.m_offset_w)
        self._engage(t, bs_id, chosen, sub, tv.travel_time_s, power, capacity, job["t0"],
                     payment=float(menu.payment(theta)),
                     bs_util=bs_utility(menu, theta, tv, capacity, econ,
                                        sc.learning.efficiency, self.T),
                     uav_util=uav_utility(menu, theta, tv, econ),
                     extra={"theta": float(theta), "ir_margin": ir_margin,
                            "p_avail_w": float(p_avail)})

    def _dispatch_baseline(self, t, bs_id, job):
        sc = self.sc
        econ = sc.econ
        sub = job["plan"]
        candidates = []
        for u in self._idle(t):
            tt = u.position.distance_to(sub.service_point) / u.speed
            if tt >= self.T:
                continue
            if u.energy_j < econ.move_power_w * tt + econ.hover_power_w * (self.T - tt):
                continue
            candidates.append((u, tt))
        if not candidates:
            self.emit(t, "dispatch", bs_id, selected=None)
            if job["retries"] < sc.sim.max_retries:
                job = dict(job, retries=job["retries"] + 1)
                self.push(t + sc.sim.backoff_s, 2, "baseline_retry", bs_id, job)
            else:
                self.emit(t, "give_up", bs_id, subareas=[0])
            return
        if self.policy == "closest":
            u, tt = min(candidates, key=lambda c: (c[1], c[0].uid))
        else:
            u, tt = min(candidates, key=lambda c: (-c[0].energy_j, c[0].uid))
        p_avail = max_available_power(u, tt, self.T, econ)
        power = float(min(sub.min_power_w, p_avail, econ.p_max_w))
        capacity = self._realized_capacity(bs_id, sub, power)
        energy = self._energy(tt, power)
        payment = econ.beta * sub.demand_bits
        delivered = sc.learning.efficiency * (self.T - tt) * capacity
        self.emit(t, "dispatch", bs_id, selected=u.uid)
        self._engage(t, bs_id, u.uid, sub, tt, power, capacity, job["t0"], payment=payment,
                     bs_util=float(econ.beta * delivered - payment),
                     uav_util=float(payment - econ.alpha * energy), extra={})

    def _on_baseline_retry(self, t, bs_id, job):
        self._dispatch_baseline(t, bs_id, job)

    # --- service ---
    def _energy(self, travel, power):
        econ = self.sc.econ
        return econ.move_power_w * travel + (econ.hover_power_w + power) * (self.T - travel)

    def _realized_capacity(self, bs_id, sub, power):
        masses = _true_density(self.bs[bs_id], sub.region) * sub.region.cell_area
        return LinkBudget(sub.service_point, sub.region.centers(), self.sc.channel,
                          masses).capacity(power)

    def _engage(self, t, bs_id, uid, sub, travel, power, capacity, t0, payment, bs_util,
                uav_util, extra):
        u = self.uavs[uid]
        energy = self._energy(travel, power)
        u.energy_j -= energy
        u.spent += energy
        u.position = sub.service_point
        u.available_at = t + self.T
        econ = self.sc.econ
        self.emit(t, "associate", bs_id, uid, travel_s=float(travel), power_w=float(power),
                  capacity_bps=float(capacity), T_s=float(self.T), delay_s=float(t + travel - t0),
                  energy_j=float(energy),
                  move_hover_energy_j=float(econ.move_power_w * travel
                                            + econ.hover_power_w * (self.T - travel)),
                  payment=float(payment), bs_utility=float(bs_util),
                  uav_utility=float(uav_util), demand_bits=float(sub.demand_bits),
                  energy_left_j=float(u.energy_j), **extra)
        self.push(t + self.T, 3, "engagement_end", bs_id, uid)

    def _on_engagement_end(self, t, bs_id, uid):
        u = self.uavs[uid]
        if u.energy_j >= self.energy_gate:
            self.emit(t, "relisten", bs_id, uid, energy_j=float(u.energy_j))
            return
        stations = self.sc.recharge_stations
        dists = [u.position.distance_to(s) for s in stations]
        k = int(np.argmin(dists))
        back = t + dists[k] / u.speed + self.sc.sim.recharge_s
        u.recharged += self.sc.sim.battery_j - u.energy_j
        u.energy_j = self.sc.sim.battery_j
        u.position = stations[k]
        u.available_at = back
        self.emit(t, "recharge", bs_id, uid, station=k, ready_at=float(back))


def run_simulation(scenario, policy, horizon_s=None, log_path=None):
    """Run one policy over a scenario; returns (MetricsReport, event log)."""
    if policy not in POLICIES:
        raise ValueError(f"unknown policy {policy!r}; expected one of {POLICIES}")
    scenario.validate()
    horizon_s = scenario.horizon_s if horizon_s is None else horizon_s
    log = _Simulator(scenario, policy, horizon_s).run()
    if log_path is not None:
        write_event_log(log, log_path)
    return collect_metrics(log), log


def event_log_lines(log):
    return "".join(json.dumps(e, sort_keys=True) + "\n" for e in log)


def write_event_log(log, path):
    with open(path, "w") as fh:
        fh.write(event_log_lines(log))


def read_event_log(path):
    with open(path) as fh:
        return [json.loads(line) for line in fh if line.strip()]


def collect_metrics(log):
    """Aggregate an event log into a MetricsReport.

    Capacity is each engagement's capacity averaged over the whole interval
    (zero while flying in). Energy covers flying, hovering and transmitting
    and is averaged over the whole fleet.
    """
    if not log:
        return MetricsReport()
    if log[0]["kind"] != "start" or log[-1]["kind"] != "end" or \
            log[-1]["payload"].get("n_events") != len(log):
        raise ValueError("truncated log: missing start/end markers or event count mismatch")
    head = log[0]["payload"]
    fleet = int(head["fleet_size"])
    n_bs = int(head["n_bs"])
    engaged = [e["payload"] for e in log if e["kind"] == "associate"]
    capacity = sum(p["capacity_bps"] * (p["T_s"] - p["travel_s"]) / p["T_s"] for p in engaged)
    energy = sum(p["energy_j"] for p in engaged)
    move_hover = sum(p["move_hover_energy_j"] for p in engaged)
    delays = [p["delay_s"] for p in engaged]
    n_unserved = sum(len(e["payload"]["subareas"]) for e in log if e["kind"] == "give_up")
    breakdown = {
        "n_episodes": sum(1 for e in log if e["kind"] == "overload"),
        "n_engagements": len(engaged),
        "n_unserved": n_unserved,
        "n_no_plan": sum(1 for e in log if e["kind"] == "no_plan"),
        "n_recharges": sum(1 for e in log if e["kind"] == "recharge"),
        "total_energy_j": float(energy),
        "move_hover_energy_per_uav_j": float(move_hover / fleet) if fleet else 0.0,
        "mean_power_w": float(np.mean([p["power_w"] for p in engaged])) if engaged else 0.0,
        "total_bs_utility": float(sum(p["bs_utility"] for p in engaged)),
    }
    return MetricsReport(
        policy=head["policy"], fleet_size=fleet,
        total_capacity_bps=float(capacity),
        avg_energy_per_uav_j=float(energy / fleet) if fleet else 0.0,
        avg_service_delay_s=float(np.mean(delays)) if delays else 0.0,
        avg_bs_utility=float(breakdown["total_bs_utility"] / n_bs) if n_bs else 0.0,
        total_uav_utility=float(sum(p["uav_utility"] for p in engaged)),
        breakdown=breakdown)
