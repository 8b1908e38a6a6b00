"""Batch experiments: demand-prediction error trials and policy sweeps."""

import dataclasses
import math

import numpy as np

from uavsim.contract import EconomicParams, build_menu, verify_ic, verify_ir
from uavsim.ingest import SyntheticSpec, synthetic_scenario, true_demand
from uavsim.learning import TrafficDemandEstimator, mre
from uavsim.simulation import overload_episodes, run_simulation

METRICS = ("total_capacity_bps", "avg_energy_per_uav_j", "avg_service_delay_s",
           "avg_bs_utility", "total_uav_utility")


def mre_trial(ratio, seed, k_values=(1, 3, 10), spec=None, n_components=None):
    """Relative demand errors of WEM, EM and k-mean on one synthetic BS.

    The learning window starts at the first overload of the BS; the actual
    demand is the expected traffic of the UEs inside the detected hotspot
    over one service interval.
    """
    base = spec or SyntheticSpec(n_bs=1, map_size_m=1000.0, fleet_size=0, busy_start_max_s=0.0,
                                 horizon_s=600.0)
    sc = synthetic_scenario(base, ratio=float(ratio), seed=int(seed))
    bs = sc.base_stations[0]
    cfg = sc.learning
    episodes = overload_episodes(bs, cfg, sc.sim, sc.horizon_s)
    t0 = episodes[0] if episodes else sc.truth["bs"][0]["busy_start_s"]
    window = bs.records.window(t0, t0 + cfg.learn_window_s)
    K = sc.sim.n_components if n_components is None else n_components
    est = TrafficDemandEstimator(bs.region, K, sc.sim.n_ue_components, cfg,
                                 random_state=int(seed)).fit(window)
    T = cfg.service_interval_s
    actual = true_demand(sc, bs.bs_id, est.hotspot_, T)
    preds = {"wem": est.predict(T), "em": est.predict_em_baseline(T)}
    for k in k_values:
        preds[f"kmean_k{k}"] = est.predict_kmean_baseline(k, T)
    return {name: abs(p - actual) / actual for name, p in preds.items()}, actual


def mre_table(ratios, trials, k_values=(1, 3, 10), seed=0, spec=None):
    """Rows of (ratio, method, mre) over ``trials`` seeds per ratio."""
    rows = []
    for ratio in ratios:
        errors = {}
        for trial in range(trials):
            err, _ = mre_trial(ratio, seed * 100003 + trial, k_values, spec)
            for name, e in err.items():
                errors.setdefault(name, []).append(e)
        for name in errors:
            rows.append((float(ratio), name, float(np.mean(errors[name]))))
    return rows


def sweep_seed(seed, policies, fleet_sizes, spec=None, keep_logs=False):
    """All (policy, fleet size) runs for one seed on a shared scenario.

    The scenario is generated once with the largest fleet; smaller fleets use
    its first UAVs, and learning/placement results are shared via the cache.
    """
    spec = spec or SyntheticSpec()
    big = synthetic_scenario(spec, seed=int(seed), fleet_size=max(fleet_sizes))
    results = []
    for fleet in fleet_sizes:
        sc = dataclasses.replace(big, fleet=big.fleet[:fleet])
        for policy in policies:
            report, log = run_simulation(sc, policy)
            results.append((policy, int(fleet), int(seed), report, log if keep_logs else None))
    return results


def tidy_rows(results):
    rows = []
    for policy, fleet, seed, report, _ in results:
        d = report.to_dict()
        for m in METRICS:
            rows.append((policy, fleet, seed, m, d[m]))
    return rows


def summarize(rows):
    """Mean of each metric per (policy, fleet size)."""
    acc = {}
    for policy, fleet, _, metric, value in rows:
        acc.setdefault((policy, fleet, metric), []).append(value)
    return {k: (float(np.mean(v)), len(v)) for k, v in sorted(acc.items())}


def spearman(x, y):
    """Spearman rank correlation (average ranks for ties)."""
    from scipy.stats import spearmanr
    rho = spearmanr(x, y).statistic
    return 0.0 if math.isnan(rho) else float(rho)


def random_contract_case(rng):
    """Random (menu, econ) pair with m <= 2 p_h and kappa in (0, 0.5]."""
    p_h = float(rng.uniform(1.0, 40.0))
    econ = EconomicParams(energy_cost_per_j=float(10 ** rng.uniform(-2, 1)),
                          ue_payment_per_bit=float(10 ** rng.uniform(-9, -5)),
                          hover_power_w=p_h, move_power_w=float(rng.uniform(0.01, 2.0) * p_h),
                          p_max_w=float(rng.uniform(1.0, 100.0)))
    T = float(rng.uniform(10.0, 3600.0))
    d = float(10 ** rng.uniform(5, 12))
    kappa = float(rng.uniform(1e-3, 0.5))
    return build_menu(d, T, econ, kappa), econ


def contract_check(draws, seed=0, grid_size=200):
    """IC and physical IR of the optimal menu on random parameter draws."""
    rng = np.random.default_rng(seed)
    failures = []
    worst_ir = math.inf
    for i in range(draws):
        menu, econ = random_contract_case(rng)
        ic = verify_ic(menu, grid_size)
        ir = verify_ir(menu, econ, grid_size)
        worst_ir = min(worst_ir, ir.min_margin)
        if not (ic.passed and ir.passed):
            failures.append({"draw": i, "ic_passed": ic.passed, "ir_passed": ir.passed,
                             "ir_min_margin": ir.min_margin, "ic_max_step_gap": ic.max_step_gap})
    return {"draws": int(draws), "seed": int(seed), "grid_size": int(grid_size),
            "n_failures": len(failures), "worst_ir_margin": float(worst_ir),
            "failures": failures}
