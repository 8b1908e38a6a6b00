"""Command-line front end.

Every command writes plain files into ``--out``: JSON for reports, CSV for
tables and JSON-lines for event logs, plus the effective ``config.json``.
Exit codes: 0 success, 2 user or config error, 3 internal invariant violation.
"""

import argparse
import concurrent.futures
import csv
import dataclasses
import io
import json
import logging
import math
import os
import sys
import warnings

from uavsim.config import RunConfig, load_config
from uavsim.experiments import (METRICS, contract_check, mre_table, summarize, tidy_rows)
from uavsim.ingest import (atomic_write, dwt_congestion_detect, hourly_city_series, load_scenario,
                           parse_dataset, project_and_partition, save_scenario,
                           scenario_from_dataset, synthesize_labels, synthetic_scenario,
                           write_records_csv, _region_to_json)
from uavsim.learning import TrafficDemandEstimator
from uavsim.simulation import (POLICIES, event_log_lines, overload_episodes, plan_predictive,
                               run_simulation, _sub_seed)

log = logging.getLogger("uavsim")


class UserError(Exception):
    """Bad input or configuration (exit code 2)."""


class InvariantError(Exception):
    """An internal check failed (exit code 3)."""


# --- argument helpers -----------------------------------------------------

def _list(cast):
    def parse(text):
        try:
            return tuple(cast(v) for v in text.split(",") if v.strip())
        except ValueError as exc:
            raise argparse.ArgumentTypeError(str(exc)) from exc
    return parse


def _parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="JSON run configuration")
    common.add_argument("--seed", type=int, help="override the configured seeds")
    common.add_argument("--out", default="out", help="output directory")
    common.add_argument("--jobs", type=int, default=1, help="worker processes for sweeps")

    p = argparse.ArgumentParser(prog="uavsim", description="Predictive UAV offloading toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("ingest", parents=[common], help="parse the dataset into record streams")
    s.add_argument("--bs-file")
    s.add_argument("--traffic-file")
    s.add_argument("--synthetic", action="store_true", help="generate a synthetic scenario")
    s.add_argument("--fleet", type=int, help="fleet size of the generated scenario")

    s = sub.add_parser("detect", parents=[common], help="flag congested hours with a Haar DWT")
    s.add_argument("--traffic-file")
    s.add_argument("--bs-file")

    s = sub.add_parser("learn", parents=[common], help="learning stage and demand error table")
    s.add_argument("--scenario", help="scenario directory written by ingest")
    s.add_argument("--ratio", type=_list(float), help="hotspot/area rate ratios")
    s.add_argument("--k", type=_list(int), help="k values of the k-mean baseline")
    s.add_argument("--trials", type=int, help="trials per ratio")

    sub.add_parser("contract-check", parents=[common], help="verify IC/IR on random menus")

    for name, text in (("simulate", "run the deployment simulation"),
                       ("compare", "policy x fleet-size x seed sweep")):
        s = sub.add_parser(name, parents=[common], help=text)
        s.add_argument("--scenario", help="scenario directory written by ingest")
        s.add_argument("--policy", type=_list(str), help="comma-separated policies")
        s.add_argument("--fleet", type=_list(int), help="comma-separated fleet sizes")

    s = sub.add_parser("report", parents=[common], help="summarize a compare sweep")
    s.add_argument("--sweep", help="sweep CSV (default: OUT/sweep.csv)")
    return p


def _effective_config(args):
    cfg = load_config(args.config)
    changes = {}
    if args.seed is not None:
        changes["seeds"] = (args.seed,)
    if getattr(args, "policy", None):
        bad = [x for x in args.policy if x not in POLICIES]
        if bad:
            raise UserError(f"unknown policies {bad}; expected some of {list(POLICIES)}")
        changes["policies"] = args.policy
    if isinstance(getattr(args, "fleet", None), tuple):
        changes["fleet_sizes"] = args.fleet
    if getattr(args, "ratio", None):
        changes["ratios"] = args.ratio
    if getattr(args, "k", None):
        changes["k_values"] = args.k
    if getattr(args, "trials", None) is not None:
        changes["mre_trials"] = args.trials
    for attr, key in (("bs_file", "bs_file"), ("traffic_file", "traffic_file"),
                      ("scenario", "scenario_dir")):
        if getattr(args, attr, None):
            changes[key] = getattr(args, attr)
    try:
        cfg = dataclasses.replace(cfg, **changes)
    except (TypeError, ValueError) as exc:
        raise UserError(str(exc)) from exc
    if cfg.scenario_dir and not os.path.isfile(os.path.join(cfg.scenario_dir, "scenario.json")):
        raise UserError(f"scenario not found: {os.path.join(cfg.scenario_dir, 'scenario.json')}")
    return cfg


def _write_json(path, obj):
    atomic_write(path, json.dumps(obj, sort_keys=True, indent=2) + "\n")


def _csv_text(header, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _need_file(path, what):
    if not path:
        raise UserError(f"missing {what}")
    if not os.path.isfile(path):
        raise UserError(f"{what} not found: {path}")
    return path


# --- commands -------------------------------------------------------------

def cmd_ingest(args, cfg, out):
    seed = cfg.seeds[0]
    if args.synthetic:
        spec = cfg.synthetic
        if args.fleet is not None:
            spec = dataclasses.replace(spec, fleet_size=args.fleet)
        sc = _scenario(dataclasses.replace(cfg, synthetic=spec, scenario_dir=None), seed)
        save_scenario(sc, os.path.join(out, "scenario"))
        write_records_csv({b.bs_id: b.records for b in sc.base_stations},
                          os.path.join(out, "records.csv"))
        _write_json(os.path.join(out, "ingest_summary.json"), {
            "source": "synthetic", "seed": seed, "n_bs": len(sc.base_stations),
            "n_records": {str(b.bs_id): len(b.records) for b in sc.base_stations}})
        return 0
    bs_file = _need_file(cfg.bs_file, "BS file")
    traffic_file = _need_file(cfg.traffic_file, "traffic file")
    parsed = parse_dataset(bs_file, traffic_file, cfg.byte_scale)
    part = project_and_partition(parsed.bs, cfg.learning.grid_cell_m, cfg.margin_m)
    streams = synthesize_labels(parsed.traffic, part.regions, cfg.label_seed + seed)
    write_records_csv(streams, os.path.join(out, "records.csv"))
    fleet = args.fleet if args.fleet is not None else cfg.synthetic.fleet_size
    sc = scenario_from_dataset(parsed, part, streams, fleet_size=fleet, seed=seed)
    save_scenario(sc, os.path.join(out, "scenario"))
    _write_json(os.path.join(out, "ingest_summary.json"), {
        "source": "dataset", "seed": seed, "n_bs": len(parsed.bs),
        "n_traffic_rows": len(parsed.traffic), "dropped": parsed.dropped,
        "n_records": {str(k): len(v) for k, v in sorted(streams.items())}})
    return 0


def cmd_detect(args, cfg, out):
    traffic_file = _need_file(cfg.traffic_file, "traffic file")
    bs_file = cfg.bs_file or traffic_file
    if cfg.bs_file:
        _need_file(bs_file, "BS file")
        parsed = parse_dataset(bs_file, traffic_file, cfg.byte_scale)
    else:
        parsed = _parse_traffic_only(traffic_file, cfg.byte_scale)
    series = hourly_city_series(parsed.traffic)
    flagged = dwt_congestion_detect(series, cfg.dwt_levels, cfg.dwt_threshold)
    _write_json(os.path.join(out, "congestion.json"), {
        "levels": cfg.dwt_levels, "threshold_sigmas": cfg.dwt_threshold,
        "n_hours": int(len(series)), "flagged_hours": sorted(int(h) for h in flagged),
        "series_bytes": [float(v) for v in series]})
    return 0


def _parse_traffic_only(traffic_file, byte_scale):
    """Parse a traffic table without a BS table (the city series needs none)."""
    import tempfile
    with open(traffic_file) as fh:
        ids = sorted({row["id"] for row in csv.DictReader(fh) if row.get("id")})
    with tempfile.NamedTemporaryFile("w", suffix=".csv", delete=False) as tmp:
        tmp.write("id,longitude,latitude\n")
        for i in ids:
            tmp.write(f"{i},0,0\n")
    try:
        return parse_dataset(tmp.name, traffic_file, byte_scale)
    finally:
        os.unlink(tmp.name)


def _scenario(cfg, seed, fleet_size=None):
    if cfg.scenario_dir:
        sc = load_scenario(cfg.scenario_dir)
        sc = dataclasses.replace(sc, seed=seed, _cache={})
        if fleet_size is not None:
            if fleet_size > len(sc.fleet):
                raise UserError(f"scenario has {len(sc.fleet)} UAVs, fleet size {fleet_size} "
                                "requested")
            sc = dataclasses.replace(sc, fleet=sc.fleet[:fleet_size])
        return sc
    spec = cfg.synthetic
    if fleet_size is not None:
        spec = dataclasses.replace(spec, fleet_size=fleet_size)
    if spec.cell_m != cfg.learning.grid_cell_m:
        raise UserError("synthetic.cell_m must equal learning.grid_cell_m")
    sc = synthetic_scenario(spec, seed=seed)
    return dataclasses.replace(sc, econ=cfg.econ, channel=cfg.channel, learning=cfg.learning,
                               sim=cfg.sim)


def learn_report(sc, bs):
    """Learning-stage summary of one BS at its first overload episode."""
    episodes = overload_episodes(bs, sc.learning, sc.sim, sc.horizon_s)
    entry = {"bs_id": bs.bs_id}
    if not episodes:
        entry["status"] = "no overload"
        return entry
    t0 = episodes[0]
    cfg = sc.learning
    window = bs.records.window(t0, t0 + cfg.learn_window_s)
    est = TrafficDemandEstimator(bs.region, sc.sim.n_components, sc.sim.n_ue_components, cfg,
                                 random_state=_sub_seed(sc.seed, bs.bs_id, t0))
    entry["overload_s"] = t0
    try:
        est.fit(window)
    except ValueError as exc:
        entry["status"] = "no hotspot"
        entry["reason"] = str(exc)
        return entry
    entry.update(status="ok", demand_bits=float(est.predict()),
                 hotspot=_region_to_json(est.hotspot_),
                 hotspot_area_m2=float(est.hotspot_.area),
                 hotspot_ue_count=int(est.hotspot_ue_count_))
    plan = plan_predictive(sc, bs, t0)
    if isinstance(plan, str):
        entry["subarea_status"] = plan
        entry["subareas"] = []
    else:
        entry["subareas"] = [{
            "demand_bits": float(s.demand_bits), "area_m2": float(s.region.area),
            "service_point": [s.service_point.x, s.service_point.y, s.service_point.z],
            "min_power_w": float(s.min_power_w), "region": _region_to_json(s.region),
        } for s in plan]
    return entry


def cmd_learn(args, cfg, out):
    seed = cfg.seeds[0]
    sc = _scenario(cfg, seed)
    bs_dir = os.path.join(out, "learn")
    os.makedirs(bs_dir, exist_ok=True)
    for bs in sc.base_stations:
        _write_json(os.path.join(bs_dir, f"bs_{bs.bs_id}.json"), learn_report(sc, bs))
    if not cfg.scenario_dir:
        # ground truth exists only for generated scenarios
        base = dataclasses.replace(cfg.synthetic, n_bs=1, map_size_m=1000.0, fleet_size=0,
                                   busy_start_max_s=0.0, horizon_s=600.0)
        rows = mre_table(cfg.ratios, cfg.mre_trials, cfg.k_values, seed, base)
        methods = ["wem", "em"] + [f"kmean_k{k}" for k in cfg.k_values]
        table = {}
        for ratio, method, value in rows:
            table.setdefault(ratio, {})[method] = value
        atomic_write(os.path.join(out, "mre.csv"), _csv_text(
            ["ratio"] + methods,
            [[repr(r)] + [repr(table[r][m]) for m in methods] for r in sorted(table)]))
    return 0


def cmd_contract_check(args, cfg, out):
    report = contract_check(cfg.contract_draws, cfg.seeds[0])
    _write_json(os.path.join(out, "contract_check.json"), report)
    if report["n_failures"]:
        raise InvariantError(f"{report['n_failures']} of {report['draws']} menus violate IC/IR")
    return 0


def _run_seed(cfg, seed, policies, fleet_sizes):
    """All runs for one seed; the scenario and its learning cache are shared."""
    big = _scenario(cfg, seed, max(fleet_sizes))
    out = []
    for fleet in fleet_sizes:
        sc = dataclasses.replace(big, fleet=big.fleet[:fleet])
        for policy in policies:
            report, events = run_simulation(sc, policy)
            out.append((policy, int(fleet), int(seed), report, event_log_lines(events)))
    return out


def _run_dir(out, policy, fleet, seed):
    return os.path.join(out, "runs", f"{policy}_f{fleet}_s{seed}")


def _write_run(out, policy, fleet, seed, report, log_text):
    d = _run_dir(out, policy, fleet, seed)
    os.makedirs(d, exist_ok=True)
    atomic_write(os.path.join(d, "events.jsonl"), log_text)
    atomic_write(os.path.join(d, "metrics.json"), report.to_json())


def _sweep(cfg, out, jobs):
    seeds = [int(s) for s in cfg.seeds]
    results, failure = [], None
    if jobs > 1 and len(seeds) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(_run_seed, cfg, s, cfg.policies, cfg.fleet_sizes): s
                       for s in seeds}
            for fut in concurrent.futures.as_completed(futures):
                try:
                    results.extend(fut.result())
                except Exception as exc:  # noqa: BLE001 - reported as a partial sweep
                    failure = failure or f"seed {futures[fut]}: {exc}"
    else:
        for s in seeds:
            try:
                results.extend(_run_seed(cfg, s, cfg.policies, cfg.fleet_sizes))
            except Exception as exc:  # noqa: BLE001
                failure = f"seed {s}: {exc}"
                break
    order = {p: i for i, p in enumerate(cfg.policies)}
    results.sort(key=lambda r: (r[2], r[1], order[r[0]]))
    for policy, fleet, seed, report, text in results:
        _write_run(out, policy, fleet, seed, report, text)
    return results, failure


def _sweep_outputs(out, results):
    rows = tidy_rows([(p, f, s, r, None) for p, f, s, r, _ in results])
    atomic_write(os.path.join(out, "sweep.csv"), _csv_text(
        ["policy", "fleet_size", "seed", "metric", "value"],
        [[p, f, s, m, repr(v)] for p, f, s, m, v in rows]))
    summary = [{"policy": p, "fleet_size": f, "metric": m, "mean": mean, "n_runs": n}
               for (p, f, m), (mean, n) in summarize(rows).items()]
    _write_json(os.path.join(out, "summary.json"), summary)


def _check_sweep(cfg, out, results, failure):
    marker = os.path.join(out, "PARTIAL")
    if failure is not None:
        atomic_write(marker, f"sweep aborted: {failure}\ncompleted runs: {len(results)}\n")
        raise InvariantError(f"sweep aborted: {failure}")
    if os.path.exists(marker):
        os.remove(marker)


def cmd_simulate(args, cfg, out):
    cfg = dataclasses.replace(cfg, seeds=cfg.seeds[:1])
    results, failure = _sweep(cfg, out, 1)
    _check_sweep(cfg, out, results, failure)
    return 0


def cmd_compare(args, cfg, out):
    results, failure = _sweep(cfg, out, max(1, args.jobs))
    _sweep_outputs(out, results)
    _check_sweep(cfg, out, results, failure)
    return 0


def _read_sweep(path):
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            return [(r["policy"], int(r["fleet_size"]), int(r["seed"]), r["metric"],
                     float(r["value"])) for r in reader]
    except OSError as exc:
        raise UserError(f"cannot read sweep {path}: {exc.strerror or exc}") from exc
    except (KeyError, ValueError) as exc:
        raise UserError(f"malformed sweep {path}: {exc}") from exc


def sweep_report(rows):
    """Per-fleet policy means and the ordering checks on them."""
    means = summarize(rows)
    fleets = sorted({f for _, f, _, _, _ in rows})
    policies = sorted({p for p, _, _, _, _ in rows})

    def mean(p, f, m):
        return means.get((p, f, m), (math.nan, 0))[0]

    table = {m: {p: [mean(p, f, m) for f in fleets] for p in policies} for m in METRICS}
    checks = {}
    if set(POLICIES) <= set(policies):
        cap = table["total_capacity_bps"]
        checks["capacity_predictive_ge_closest_ge_max_energy"] = all(
            a >= b >= c for a, b, c in zip(cap["predictive"], cap["closest"], cap["max_energy"]))
        for m in ("avg_energy_per_uav_j", "avg_service_delay_s"):
            v = table[m]
            checks[f"{m}_closest_le_predictive_le_max_energy"] = all(
                a <= b <= c for a, b, c in zip(v["closest"], v["predictive"], v["max_energy"]))
        for m in ("avg_bs_utility", "total_uav_utility"):
            v = table[m]
            checks[f"{m}_predictive_exceeds_baselines"] = all(
                a > b and a > c for a, b, c in zip(v["predictive"], v["closest"], v["max_energy"]))
    return {"fleet_sizes": fleets, "means": table, "checks": checks}


def cmd_report(args, cfg, out):
    rows = _read_sweep(args.sweep or os.path.join(out, "sweep.csv"))
    report = sweep_report(rows)
    _write_json(os.path.join(out, "report.json"), report)
    lines = []
    for m, by_policy in report["means"].items():
        lines.append(m)
        for p, vals in by_policy.items():
            lines.append(f"  {p:<11}" + "".join(f"{v:>13.4g}" for v in vals))
    for name, ok in report["checks"].items():
        lines.append(f"{'PASS' if ok else 'FAIL'} {name}")
    atomic_write(os.path.join(out, "report.txt"), "\n".join(lines) + "\n")
    print("\n".join(lines))
    return 0


COMMANDS = {
    "ingest": cmd_ingest,
    "detect": cmd_detect,
    "learn": cmd_learn,
    "contract-check": cmd_contract_check,
    "simulate": cmd_simulate,
    "compare": cmd_compare,
    "report": cmd_report,
}


def main(argv=None):
    level = os.environ.get("UAVSIM_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING),
                        format="%(levelname)s %(name)s: %(message)s")
    if level not in ("DEBUG", "INFO"):
        warnings.simplefilter("ignore")
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code else 0
    try:
        cfg = _effective_config(args)
        out = args.out
        os.makedirs(out, exist_ok=True)
        _write_json(os.path.join(out, "config.json"), cfg.to_dict())
        return COMMANDS[args.command](args, cfg, out)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except InvariantError as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return 3
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
