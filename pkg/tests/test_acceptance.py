"""Acceptance checks; each prints one PASS/FAIL line with its evidence."""

import hashlib
import json
import math
import os
import time
import warnings

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment
from sklearn.mixture import GaussianMixture

from oracles import p_los as oracle_p_los
from oracles import path_loss as oracle_path_loss
from oracles import rate as oracle_rate
from uavsim.channel import (ChannelParams, LinkBudget, Region, SpatialPoint, expected_rate,
                            los_probability, path_loss_db, uniform_density)
from uavsim.cli import main
from uavsim.contract import (EconomicParams, UavProfile, bs_utility, build_menu, max_available_power,
                             select_optimal_uav, travel_time, uav_type, verify_ic, verify_ir)
from uavsim.experiments import METRICS, mre_table, random_contract_case, spearman, sweep_seed
from uavsim.ingest import SyntheticSpec, dwt_congestion_detect
from uavsim.mixture import GaussianMixtureEM, WeightedGaussianMixture, weighted_em
from uavsim.simulation import POLICIES

FLEETS = (2, 6, 10, 14)
SEEDS = range(10)


@pytest.fixture
def verdict(capsys):
    def emit(number, title, ok, detail):
        with capsys.disabled():
            print(f"\n[criterion {number:>2}] {'PASS' if ok else 'FAIL'} {title}: {detail}")
        assert ok, detail
    return emit


def test_c01_contract_feasibility(verdict):
    rng = np.random.default_rng(2024)
    start = time.perf_counter()
    worst_gap, worst_margin, n_bad = 0, math.inf, 0
    for _ in range(1000):
        menu, econ = random_contract_case(rng)
        ic = verify_ic(menu, 200)
        ir = verify_ir(menu, econ, 200)
        worst_gap = max(worst_gap, ic.max_step_gap)
        worst_margin = min(worst_margin, ir.min_margin)
        n_bad += not (ic.max_step_gap == 0 and ic.monotone and ir.min_margin >= -1e-9)
    elapsed = time.perf_counter() - start
    ok = n_bad == 0 and elapsed < 10
    verdict(1, "contract feasibility", ok,
            f"1000 draws, {n_bad} failures, max IC step gap {worst_gap}, "
            f"min IR margin {worst_margin:.3g}, {elapsed:.1f}s")


def test_c02_menu_closed_forms(verdict):
    rng = np.random.default_rng(7)
    worst = 0.0
    for _ in range(10_000):
        econ = EconomicParams(energy_cost_per_j=float(10 ** rng.uniform(-2, 1)),
                              hover_power_w=float(rng.uniform(1, 40)))
        T = float(rng.uniform(10, 3600))
        d = float(10 ** rng.uniform(5, 12))
        t = float(rng.uniform(0, 0.5) * T)
        menu = build_menu(d, T, econ, 0.5)
        theta = uav_type(d, T, t, econ).theta
        p_generic = menu.gamma * theta ** 2 / 2
        ud_generic = menu.gamma * theta * d
        p_closed = econ.hover_power_w * T ** 2 / (T - t) ** 2
        ud_closed = 2 * econ.alpha * econ.hover_power_w * T ** 2 / (T - t)
        worst = max(worst, abs(p_generic - p_closed) / p_closed,
                    abs(ud_generic - ud_closed) / ud_closed,
                    abs(float(menu.power(theta)) - p_closed) / p_closed)
    # alternative closed forms at the lowest type (t = 0) under the defaults
    econ, T, d = EconomicParams(), 1080.0, 1e10
    m = econ.move_power_w
    theta_min = d / (econ.alpha * T)
    p_alt = m * T ** 2 / (4 * econ.alpha * T ** 2)
    u_alt = m * T ** 2 / (2 * T) / d
    margin_alt = theta_min * u_alt - p_alt - econ.hover_power_w
    ok = worst <= 1e-12 and margin_alt < 0
    verdict(2, "menu closed forms", ok,
            f"max rel err {worst:.2e} over 1e4 draws; alternative forms break-even margin "
            f"{margin_alt:.3f} W (< 0, fails)")


def test_c03_monotonicity_and_condition_c(verdict):
    rng = np.random.default_rng(3)
    worst_err, all_monotone = 0.0, True
    for _ in range(200):
        menu, _ = random_contract_case(rng)
        rep = verify_ic(menu, 1000, fd_rtol=1e-6)
        worst_err = max(worst_err, rep.condition_c_max_rel_err)
        theta = menu.theta_grid(1000)
        u, p = menu.unit_payment(theta), menu.power(theta)
        all_monotone &= bool(np.all(np.diff(u) >= -1e-12 * u.max())
                             and np.all(np.diff(p) >= -1e-12 * p.max()) and rep.monotone)
    ok = all_monotone and worst_err <= 1e-6
    verdict(3, "monotone menu and dp = theta du", ok,
            f"200 menus x 1000 points, monotone={all_monotone}, max rel err {worst_err:.2e}")


def test_c04_selection_equivalence(verdict):
    rng = np.random.default_rng(11)
    params, econ, T, kappa, eta = ChannelParams(), EconomicParams(), 1080.0, 0.1, 0.9
    hotspot = Region.disc((0, 0), 60, 10)
    masses = uniform_density(hotspot) * hotspot.cell_area
    agree, nonempty = 0, 0
    for _ in range(100):
        point = SpatialPoint(float(rng.uniform(-30, 30)), float(rng.uniform(-30, 30)),
                             float(rng.uniform(60, 300)))
        budget = LinkBudget(point, hotspot.centers(), params, masses)
        d = float(10 ** rng.uniform(10, 11.6))
        p_min = float(rng.uniform(0, 18))
        menu = build_menu(d, T, econ, kappa)
        responses = []
        for uid in range(int(rng.integers(1, 12))):
            uav = UavProfile(SpatialPoint(*rng.uniform(-600, 600, 2).tolist(), 0.0), 5.0,
                             float(rng.uniform(20000, 90000)), 0.0, uid)
            t = travel_time(uav, point)
            if t >= T:
                continue
            responses.append((uid, uav_type(d, T, t, econ), max_available_power(uav, t, T, econ)))
        chosen = select_optimal_uav(responses, menu, p_min, kappa, T, econ.p_max_w)
        feasible = [(uid, tv) for uid, tv, pa in responses
                    if tv.travel_time_s <= kappa * T
                    and p_min <= float(menu.power(tv.theta)) <= min(pa, econ.p_max_w)]
        brute = None
        if feasible:
            nonempty += 1
            scored = [(-bs_utility(menu, tv.theta, tv, budget.capacity, econ, eta, T), uid)
                      for uid, tv in feasible]
            brute = min(scored)[1]
        agree += chosen == brute
    ok = agree == 100
    verdict(4, "selection equivalence", ok,
            f"{agree}/100 fleets agree ({nonempty} with a nonempty feasible set)")


def test_c05_mixture_correctness(verdict):
    worst_drop, worst_param = 0.0, 0.0
    for seed in range(50):
        rng = np.random.default_rng(seed)
        K = int(rng.integers(2, 4))
        mu = rng.uniform(-300, 300, (K, 2))
        X = np.vstack([m + rng.normal(0, rng.uniform(10, 40), (200, 2)) for m in mu])
        w = rng.gamma(2.0, 1.0, len(X))
        for h in (GaussianMixtureEM(K, random_state=seed, tol=1e-10).fit(X).log_likelihood_history_,
                  WeightedGaussianMixture(K, tol=1e-10).fit(X, sample_weight=w)
                  .log_likelihood_history_):
            worst_drop = max(worst_drop, float(np.max(-np.diff(h) / np.abs(h[:-1]), initial=0)))
        # equal weights: weighted EM against an independent EM from the same start
        c = np.full(len(X), rng.uniform(0.1, 10))
        m0 = X[rng.choice(len(X), K, replace=False)]
        init = (np.full(K, 1 / K), m0, np.tile(np.eye(2) * 900, (K, 1, 1)))
        (pi, means, covs), _, _ = weighted_em(X, c, init, tol=-np.inf, max_iter=100)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            ref = GaussianMixture(K, tol=0, reg_covar=0, max_iter=100, weights_init=init[0],
                                  means_init=m0, precisions_init=np.linalg.inv(init[2])).fit(X)
        r, k = linear_sum_assignment(((means[:, None] - ref.means_[None]) ** 2).sum(-1))
        worst_param = max(worst_param, np.abs(means[r] - ref.means_[k]).max(),
                          np.abs(pi[r] - ref.weights_[k]).max(),
                          np.abs(covs[r] - ref.covariances_[k]).max() / np.abs(ref.covariances_).max())
    rng = np.random.default_rng(99)
    true = np.array([[-150.0, 40.0], [200.0, -60.0]])
    X = np.vstack([true[0] + rng.normal(0, 30, (2500, 2)), true[1] + rng.normal(0, 45, (2500, 2))])
    rec = 0.0
    for means in (GaussianMixtureEM(2, random_state=0).fit(X).means_,
                  WeightedGaussianMixture(2).fit(X, sample_weight=np.ones(len(X))).means_):
        r, k = linear_sum_assignment(((means[:, None] - true[None]) ** 2).sum(-1))
        rec = max(rec, float(np.linalg.norm(means[r] - true[k], axis=1).max()))
    ok = worst_drop <= 1e-9 and worst_param <= 1e-6 and rec <= 5.0
    verdict(5, "mixture correctness", ok,
            f"max LL drop {worst_drop:.1e}, equal-weight param diff {worst_param:.1e}, "
            f"recovery error {rec:.2f} m")


def test_c06_mre_trend(verdict):
    start = time.perf_counter()
    rows = mre_table((1, 2, 3, 4, 5), trials=20, k_values=(1, 3, 10), seed=0)
    elapsed = time.perf_counter() - start
    table = {}
    for ratio, method, value in rows:
        table.setdefault(ratio, {})[method] = value
    in_band = all(0.03 <= table[r]["wem"] <= 0.18 for r in table)
    ordered = all(table[r]["wem"] <= v for r in table if r >= 2 for v in table[r].values())
    ok = in_band and ordered and elapsed < 300
    text = "; ".join(f"{r:g}: wem {t['wem']:.3f} em {t['em']:.3f} "
                     f"kmean {min(v for k, v in t.items() if k.startswith('kmean')):.2f}"
                     for r, t in sorted(table.items()))
    verdict(6, "MRE trend", ok, f"{text}; {elapsed:.0f}s")


@pytest.fixture(scope="module")
def policy_sweep():
    start = time.perf_counter()
    results = []
    for seed in SEEDS:
        results.extend(sweep_seed(seed, POLICIES, FLEETS, SyntheticSpec()))
    elapsed = time.perf_counter() - start
    values = {}
    for policy, fleet, seed, report, _ in results:
        d = report.to_dict()
        for m in METRICS:
            values.setdefault((policy, m), {}).setdefault(fleet, []).append(d[m])
    return values, elapsed


def _means(values, policy, metric):
    return [float(np.mean(values[(policy, metric)][f])) for f in FLEETS]


def _fmt(xs):
    return "/".join(f"{x:.3g}" for x in xs)


def test_c07_policy_ordering(verdict, policy_sweep):
    values, elapsed = policy_sweep
    cap = {p: _means(values, p, "total_capacity_bps") for p in POLICIES}
    en = {p: _means(values, p, "avg_energy_per_uav_j") for p in POLICIES}
    de = {p: _means(values, p, "avg_service_delay_s") for p in POLICIES}
    checks = {
        "capacity": all(a >= b >= c for a, b, c in
                        zip(cap["predictive"], cap["closest"], cap["max_energy"])),
        "energy": all(a <= b <= c for a, b, c in
                      zip(en["closest"], en["predictive"], en["max_energy"])),
        "delay": all(a <= b <= c for a, b, c in
                     zip(de["closest"], de["predictive"], de["max_energy"])),
    }
    fleets = [f for f in FLEETS for _ in SEEDS]
    rho_e = spearman(fleets, [v for f in FLEETS
                              for v in values[("predictive", "avg_energy_per_uav_j")][f]])
    rho_d = spearman(fleets, [v for f in FLEETS
                              for v in values[("predictive", "avg_service_delay_s")][f]])
    checks["trend"] = rho_e <= 0 and rho_d <= 0
    checks["runtime"] = elapsed < 600
    ok = all(checks.values())
    detail = (", ".join(f"{k}={'ok' if v else 'FAIL'}" for k, v in checks.items())
              + f" | capacity P/C/M {_fmt(cap['predictive'])} ; {_fmt(cap['closest'])} ; "
              f"{_fmt(cap['max_energy'])} | energy P/C/M {_fmt(en['predictive'])} ; "
              f"{_fmt(en['closest'])} ; {_fmt(en['max_energy'])} | delay P/C/M "
              f"{_fmt(de['predictive'])} ; {_fmt(de['closest'])} ; {_fmt(de['max_energy'])} "
              f"| spearman energy {rho_e:.2f} delay {rho_d:.2f} | {elapsed:.0f}s")
    verdict(7, "policy ordering", ok, detail)


def test_c08_utility_ordering(verdict, policy_sweep):
    values, _ = policy_sweep
    bs = {p: _means(values, p, "avg_bs_utility") for p in POLICIES}
    uav = {p: _means(values, p, "total_uav_utility") for p in POLICIES}
    bs_ok = all(a > b and a > c for a, b, c in zip(bs["predictive"], bs["closest"],
                                                    bs["max_energy"]))
    uav_ok = all(a > b and a > c for a, b, c in zip(uav["predictive"], uav["closest"],
                                                     uav["max_energy"]))
    detail = (f"bs_utility={'ok' if bs_ok else 'FAIL'}, uav_utility={'ok' if uav_ok else 'FAIL'}"
              f" | BS P/C/M {_fmt(bs['predictive'])} ; {_fmt(bs['closest'])} ; "
              f"{_fmt(bs['max_energy'])} | UAV P/C/M {_fmt(uav['predictive'])} ; "
              f"{_fmt(uav['closest'])} ; {_fmt(uav['max_energy'])}")
    verdict(8, "utility ordering", bs_ok and uav_ok, detail)


def test_c09_channel_oracle(verdict):
    rng = np.random.default_rng(9)
    params = ChannelParams()
    worst = 0.0
    for _ in range(100):
        uav = (rng.uniform(-800, 800), rng.uniform(-800, 800), rng.uniform(10, 600))
        ue = (rng.uniform(-800, 800), rng.uniform(-800, 800), 0.0)
        p = rng.uniform(0.01, 20)
        u, e = SpatialPoint(*uav), SpatialPoint(*ue)
        pairs = [(path_loss_db(u, e, "LOS", params), oracle_path_loss(uav, ue, "LOS")),
                 (path_loss_db(u, e, "NLOS", params), oracle_path_loss(uav, ue, "NLOS")),
                 (los_probability(u, e, params), oracle_p_los(uav, ue)),
                 (expected_rate(u, e, p, params), oracle_rate(uav, ue, p))]
        worst = max(worst, max(abs(a - b) / abs(b) for a, b in pairs))
    verdict(9, "channel oracle", worst <= 1e-9, f"max rel err {worst:.2e} over 100 geometries")


def test_c10_dwt_detection(verdict):
    misses, false_flags = 0, 0
    for seed in range(20):
        rng = np.random.default_rng(seed)
        h = np.arange(168)
        amp = rng.uniform(20, 60)
        x = 100 + amp * np.sin(2 * np.pi * h / 24 + rng.uniform(0, 2 * np.pi))
        x += rng.normal(0, 0.01 * amp, len(h))
        spike = int(rng.integers(0, 168))
        x[spike] += 5 * amp
        flags = set(dwt_congestion_detect(x, 2, 3.0))
        misses += spike not in flags
        false_flags += len(flags - {spike})
    ok = misses == 0 and false_flags == 0
    verdict(10, "DWT detection", ok, f"20 seeds, {misses} missed spikes, {false_flags} false flags")


def _digest(directory):
    out = {}
    for root, _, files in os.walk(directory):
        for f in sorted(files):
            p = os.path.join(root, f)
            with open(p, "rb") as fh:
                out[os.path.relpath(p, directory)] = hashlib.sha256(fh.read()).hexdigest()
    return out


def test_c11_determinism(verdict, tmp_path, fixture_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({
        "seeds": [0, 1], "fleet_sizes": [1, 3], "mre_trials": 2, "ratios": [1.0, 3.0],
        "contract_draws": 100,
        "synthetic": {"n_bs": 2, "map_size_m": 1000.0, "fleet_size": 3, "horizon_s": 1500.0,
                      "busy_start_max_s": 300.0}}))
    data = ["--bs-file", fixture_path("bs.csv"), "--traffic-file", fixture_path("traffic.csv")]
    commands = {
        "ingest": ["ingest", *data],
        "ingest-synthetic": ["ingest", "--synthetic"],
        "detect": ["detect", "--traffic-file", fixture_path("traffic.csv")],
        "learn": ["learn"],
        "contract-check": ["contract-check"],
        "simulate": ["simulate"],
        "compare": ["compare"],
    }
    differing = []
    for name, argv in commands.items():
        digests = []
        for rep in ("a", "b"):
            out = tmp_path / name / rep
            rc = main(argv + ["--config", str(cfg), "--seed", "3", "--out", str(out)])
            assert rc == 0, f"{name} exited {rc}"
            if name == "compare":
                assert main(["report", "--out", str(out)]) == 0
            digests.append(_digest(out))
        if digests[0] != digests[1] or not digests[0]:
            differing.append(name)
    verdict(11, "determinism", not differing,
            f"{len(commands)} commands (+report) repeated; differing: {differing or 'none'}")
