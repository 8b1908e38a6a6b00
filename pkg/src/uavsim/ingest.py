"""Dataset parsing, service-area partition, label synthesis and scenarios.

The cellular traffic dataset comes as two CSV files: a BS table
(``id, longitude, latitude``) and an hourly traffic table
(``id, hour, users, packets, bytes``). Positions are projected to a local
metric frame, each grid cell is assigned to its closest BS, and every packet
becomes one transmission record with a synthetic time and location.
"""

import base64
import csv
import json
import logging
import math
import os
import warnings
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy.spatial import cKDTree

from uavsim.channel import ChannelParams, Region, SpatialPoint
from uavsim.contract import EconomicParams, UavProfile
from uavsim.learning import LearningConfig, RecordStream
from uavsim.mixture import MixtureModel
from uavsim.simulation import BaseStation, Scenario, SimulationConfig

log = logging.getLogger(__name__)

EARTH_RADIUS_M = 6371008.8
BS_COLUMNS = ("id", "longitude", "latitude")
TRAFFIC_COLUMNS = ("id", "hour", "users", "packets", "bytes")
RECORD_COLUMNS = ("bs_id", "time_s", "x_m", "y_m", "rate_bps")


@dataclass(frozen=True)
class RawBsRecord:
    bs_id: int
    longitude: float
    latitude: float


@dataclass(frozen=True)
class RawTrafficRow:
    bs_id: int
    hour: int
    users: int
    packets: int
    bytes: float


@dataclass
class ParsedDataset:
    bs: list
    traffic: list
    dropped: dict = field(default_factory=dict)


def _read_rows(path, columns):
    try:
        with open(path, newline="") as fh:
            reader = csv.DictReader(fh)
            header = [h.strip().lower() for h in (reader.fieldnames or [])]
            missing = [c for c in columns if c not in header]
            if missing:
                raise ValueError(f"{path}: missing columns {missing}")
            rows = []
            for raw in reader:
                rows.append({k.strip().lower(): (v.strip() if isinstance(v, str) else v)
                             for k, v in raw.items() if k is not None})
            return rows
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc.strerror or exc}") from exc


def _as_int(text):
    value = float(text)
    if not value.is_integer():
        raise ValueError(f"not an integer: {text}")
    return int(value)


def parse_dataset(bs_file, traffic_file, byte_scale=1.0):
    """Read and validate both tables.

    Rows with missing or invalid fields are dropped and counted in
    ``dropped``. Traffic rows repeating a (bs, hour) pair are summed.
    ``byte_scale`` converts the byte column to bytes (1000 for kB).
    """
    dropped = {"bs": 0, "traffic": 0, "unknown_bs": 0}
    bs = {}
    for row in _read_rows(bs_file, BS_COLUMNS):
        try:
            rec = RawBsRecord(_as_int(row["id"]), float(row["longitude"]), float(row["latitude"]))
        except (TypeError, ValueError):
            dropped["bs"] += 1
            continue
        if not (-180 <= rec.longitude <= 180 and -90 <= rec.latitude <= 90) or rec.bs_id in bs:
            dropped["bs"] += 1
            continue
        bs[rec.bs_id] = rec
    if not bs:
        raise ValueError(f"{bs_file}: no valid BS rows")

    merged = {}
    duplicates = 0
    for row in _read_rows(traffic_file, TRAFFIC_COLUMNS):
        try:
            key = (_as_int(row["id"]), _as_int(row["hour"]))
            users, packets = _as_int(row["users"]), _as_int(row["packets"])
            nbytes = float(row["bytes"]) * byte_scale
        except (TypeError, ValueError):
            dropped["traffic"] += 1
            continue
        if key[1] < 0 or users < 0 or packets < 0 or not (nbytes >= 0 and math.isfinite(nbytes)):
            dropped["traffic"] += 1
            continue
        if key[0] not in bs:
            dropped["unknown_bs"] += 1
            continue
        if key in merged:
            duplicates += 1
            u, p, b = merged[key]
            merged[key] = (u + users, p + packets, b + nbytes)
        else:
            merged[key] = (users, packets, nbytes)
    if duplicates:
        warnings.warn(f"{duplicates} duplicate (bs, hour) traffic rows were summed")
    if not merged:
        raise ValueError(f"{traffic_file}: no valid traffic rows")
    traffic = [RawTrafficRow(k[0], k[1], *v) for k, v in sorted(merged.items())]
    return ParsedDataset([bs[k] for k in sorted(bs)], traffic, dropped)


@dataclass(frozen=True)
class Projection:
    """Equirectangular projection about a reference longitude/latitude."""

    lon0: float
    lat0: float

    def forward(self, lon, lat):
        lon, lat = np.asarray(lon, dtype=float), np.asarray(lat, dtype=float)
        x = EARTH_RADIUS_M * np.radians(lon - self.lon0) * math.cos(math.radians(self.lat0))
        y = EARTH_RADIUS_M * np.radians(lat - self.lat0)
        return x, y

    def inverse(self, x, y):
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        lon = self.lon0 + np.degrees(x / (EARTH_RADIUS_M * math.cos(math.radians(self.lat0))))
        lat = self.lat0 + np.degrees(y / EARTH_RADIUS_M)
        return lon, lat


@dataclass(frozen=True, eq=False)
class Partition:
    projection: Projection
    service_map: Region
    positions: dict
    regions: dict


def voronoi_regions(service_map, positions):
    """Assign every map cell to its closest BS (ties go to the smaller id)."""
    ids = sorted(positions)
    pts = np.array([[positions[i].x, positions[i].y] for i in ids])
    centers = service_map.centers()
    _, owner = cKDTree(pts).query(centers)
    rows, cols = service_map.indices()
    regions = {}
    for k, bs_id in enumerate(ids):
        mask = np.zeros(service_map.shape, dtype=bool)
        sel = owner == k
        mask[rows[sel], cols[sel]] = True
        regions[bs_id] = service_map.with_mask(mask)
    return regions


def project_and_partition(bs_table, cell_m=10.0, margin_m=500.0):
    """Project BS coordinates and split the bounding box into closest-BS cells.

    The map is the BS bounding box grown by ``margin_m`` on every side, so a
    single BS still owns a nonempty area.
    """
    if not bs_table:
        raise ValueError("need at least one BS")
    lon = np.array([b.longitude for b in bs_table])
    lat = np.array([b.latitude for b in bs_table])
    proj = Projection(float(lon.mean()), float(lat.mean()))
    x, y = proj.forward(lon, lat)
    seen = {}
    positions = {}
    for b, xi, yi in zip(bs_table, x, y):
        key = (round(float(xi), 6), round(float(yi), 6))
        if key in seen:
            seen[key] += 1
            warnings.warn(f"BS {b.bs_id} duplicates another BS position; shifted by 1 cm")
            xi = xi + 0.01 * seen[key]
        else:
            seen[key] = 0
        positions[b.bs_id] = SpatialPoint(float(xi), float(yi))
    xs = [p.x for p in positions.values()]
    ys = [p.y for p in positions.values()]
    service_map = Region.from_bounds(min(xs) - margin_m, min(ys) - margin_m,
                                     max(xs) + margin_m, max(ys) + margin_m, cell_m)
    return Partition(proj, service_map, positions, voronoi_regions(service_map, positions))


def _label_mixture(region, rng):
    """Random 1-3 component UE mixture with means inside ``region``."""
    k = int(rng.integers(1, 4))
    centers = region.centers()
    means = centers[rng.integers(0, len(centers), size=k)]
    sigmas = rng.uniform(20.0, 80.0, size=k)
    covs = np.array([np.eye(2) * s ** 2 for s in sigmas])
    return MixtureModel("probabilistic", rng.dirichlet(np.ones(k)), means, covs)


def _clip_into(region, xy, tree=None):
    inside = region.contains(xy)
    if np.all(inside):
        return xy
    centers = region.centers()
    tree = tree or cKDTree(centers)
    _, idx = tree.query(xy[~inside])
    xy = xy.copy()
    xy[~inside] = centers[idx]
    return xy


def _split_bits(total_bits, n):
    """Integer bit counts for ``n`` packets summing exactly to ``total_bits``."""
    total = int(round(total_bits))
    base, extra = divmod(total, n)
    bits = np.full(n, base, dtype=np.int64)
    bits[:extra] += 1
    return bits


def synthesize_labels(traffic, regions, seed, hour_s=3600.0, noise_m=3.0, slot_s=1.0):
    """One record per packet, with a uniform second inside its hour.

    Locations come from a per-BS random UE mixture plus isotropic noise and
    are pulled back into the BS region when they fall outside. Each record's
    rate is its share of the hour's bits (bytes evenly split over packets),
    delivered within one slot. Returns ``{bs_id: RecordStream}``.
    """
    by_bs = {}
    for row in traffic:
        by_bs.setdefault(row.bs_id, []).append(row)
    streams = {}
    for bs_id in sorted(by_bs):
        if bs_id not in regions:
            raise ValueError(f"no region for BS {bs_id}")
        region = regions[bs_id]
        rng = np.random.default_rng([int(seed), int(bs_id)])
        model = _label_mixture(region, rng)
        tree = cKDTree(region.centers())
        cols = []
        for row in sorted(by_bs[bs_id], key=lambda r: r.hour):
            if row.packets == 0:
                if row.bytes > 0:
                    warnings.warn(f"BS {bs_id} hour {row.hour}: bytes without packets, skipped")
                continue
            n = row.packets
            t = row.hour * hour_s + rng.integers(0, int(hour_s), size=n).astype(float)
            comp = rng.choice(model.n_components, size=n, p=model.weights)
            sd = np.sqrt(model.covariances[comp, 0, 0])
            xy = model.means[comp] + rng.standard_normal((n, 2)) * sd[:, None]
            xy = xy + rng.standard_normal((n, 2)) * noise_m
            xy = _clip_into(region, xy, tree)
            bits = _split_bits(row.bytes * 8.0, n)
            cols.append(np.column_stack([t, xy, bits / slot_s]))
        arr = np.vstack(cols) if cols else np.zeros((0, 4))
        order = np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0])) if len(arr) else []
        streams[bs_id] = RecordStream.from_array(arr[order])
    return streams


def write_records_csv(streams, path):
    """Canonical record file: bs_id, time_s, x_m, y_m, rate_bps."""
    lines = [",".join(RECORD_COLUMNS)]
    for bs_id in sorted(streams):
        s = streams[bs_id]
        for t, x, y, r in zip(s.time_s.tolist(), s.x.tolist(), s.y.tolist(), s.rate_bps.tolist()):
            lines.append(f"{bs_id},{t!r},{x!r},{y!r},{r!r}")
    atomic_write(path, "\n".join(lines) + "\n")


def read_records_csv(path):
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc}") from exc
    streams = {}
    if data.size == 0:
        return streams
    for bs_id in np.unique(data[:, 0]).astype(int):
        streams[int(bs_id)] = RecordStream.from_array(data[data[:, 0] == bs_id, 1:])
    return streams


def atomic_write(path, text):
    tmp = f"{path}.tmp{os.getpid()}"
    with open(tmp, "w") as fh:
        fh.write(text)
    os.replace(tmp, path)


# --- congestion detection -------------------------------------------------

def haar_dwt(series, levels=2):
    """Multi-level Haar transform. Returns (approximation, details, lengths).

    ``details[j]`` holds the level ``j + 1`` coefficients; odd-length inputs
    are padded by repeating the last value and ``lengths`` records the
    original length at each level for exact inversion.
    """
    a = np.asarray(series, dtype=float).reshape(-1)
    details, lengths = [], []
    for _ in range(levels):
        lengths.append(len(a))
        if len(a) % 2:
            a = np.append(a, a[-1])
        even, odd = a[0::2], a[1::2]
        details.append((even - odd) / math.sqrt(2.0))
        a = (even + odd) / math.sqrt(2.0)
    return a, details, lengths


def haar_idwt(approx, details, lengths):
    a = np.asarray(approx, dtype=float)
    for d, n in zip(reversed(details), reversed(lengths)):
        out = np.empty(2 * len(a))
        out[0::2] = (a + d) / math.sqrt(2.0)
        out[1::2] = (a - d) / math.sqrt(2.0)
        a = out[:n]
    return a


def robust_sigma(values):
    values = np.asarray(values, dtype=float)
    return 1.4826 * float(np.median(np.abs(values - np.median(values))))


def dwt_congestion_detect(series, levels=2, threshold_sigmas=3.0):
    """Hours whose traffic stands out in the Haar detail coefficients.

    A detail coefficient is significant when its magnitude exceeds
    ``threshold_sigmas`` robust standard deviations of its level. Each
    significant coefficient flags the busiest hour under its support, so a
    single spike flags only its own hour.
    """
    x = np.asarray(series, dtype=float).reshape(-1)
    if len(x) < 2 ** levels:
        raise ValueError(f"series too short: need at least {2 ** levels} points, got {len(x)}")
    if not np.all(np.isfinite(x)):
        raise ValueError("series must be finite")
    _, details, _ = haar_dwt(x, levels)
    flagged = set()
    for j, d in enumerate(details, start=1):
        sigma = robust_sigma(d)
        if sigma > 0:
            hits = np.abs(d) > threshold_sigmas * sigma
        else:
            hits = (np.abs(d) > 0) & np.isfinite(threshold_sigmas)
        width = 2 ** j
        for i in np.flatnonzero(hits):
            lo, hi = i * width, min((i + 1) * width, len(x))
            flagged.add(int(lo + np.argmax(x[lo:hi])))
    return sorted(flagged)


def hourly_city_series(traffic):
    """Total bytes per hour across all BSs, indexed from hour 0."""
    hours = max(r.hour for r in traffic) + 1
    out = np.zeros(hours)
    for r in traffic:
        out[r.hour] += r.bytes
    return out


# --- synthetic scenarios --------------------------------------------------

@dataclass(frozen=True)
class SyntheticSpec:
    """Parameters of a synthetic city.

    ``ratio`` is the hotspot-to-area per-UE rate ratio; ``mean_rate_bps`` is
    the area-average rate per UE. UEs transmit as Poisson processes with
    exponential transfer sizes. Before its busy start a BS carries
    ``offpeak_factor`` of its busy load.
    """

    n_bs: int = 4
    map_size_m: float = 2000.0
    cell_m: float = 10.0
    n_clusters: int = 1
    ues_per_bs: int = 300
    hotspot_fraction: float = 0.15
    hotspot_sigma_m: float = 25.0
    ratio: float = 3.0
    mean_rate_bps: float = 2.5e6
    tx_interval_s: float = 10.0
    fleet_size: int = 6
    horizon_s: float = 3600.0
    busy_start_max_s: float = 1200.0
    offpeak_factor: float = 0.3
    overload_factor: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if self.n_bs < 1 or self.fleet_size < 0 or self.ues_per_bs < 1 or self.n_clusters < 1:
            raise ValueError("invalid synthetic spec counts")
        if not 0 < self.hotspot_fraction < 1:
            raise ValueError("hotspot_fraction must lie in (0, 1)")
        if self.ratio < 1 or self.ratio * self.hotspot_fraction >= 1:
            raise ValueError("need 1 <= ratio < 1 / hotspot_fraction")


def ue_rates(spec):
    """(hotspot UE rate, other UE rate) giving area mean ``mean_rate_bps``."""
    phi, r = spec.hotspot_fraction, spec.ratio
    rho = spec.mean_rate_bps
    return r * rho, rho * (1 - r * phi) / (1 - phi)


def _bs_layout(spec, rng):
    n_side = int(math.ceil(math.sqrt(spec.n_bs)))
    step = spec.map_size_m / n_side
    slots = [((i + 0.5) * step, (j + 0.5) * step) for j in range(n_side) for i in range(n_side)]
    pts = []
    for x, y in slots[:spec.n_bs]:
        jitter = rng.uniform(-0.15, 0.15, size=2) * step
        pts.append(SpatialPoint(float(x + jitter[0]), float(y + jitter[1]), 25.0))
    return pts


def _poisson_records(xy, rate_bps, spec, busy_start, rng):
    """Records of stationary UEs over the horizon with an off-peak phase."""
    lam = 1.0 / spec.tx_interval_s
    out = []
    for (x, y), rate in zip(xy, rate_bps):
        n = rng.poisson(lam * spec.horizon_s)
        t = np.sort(rng.uniform(0, spec.horizon_s, size=n))
        keep = (t >= busy_start) | (rng.random(n) < spec.offpeak_factor)
        t = np.floor(t[keep])
        size = rng.exponential(rate * spec.tx_interval_s, size=len(t))
        out.append(np.column_stack([t, np.full(len(t), x), np.full(len(t), y), size]))
    arr = np.vstack(out)
    return arr[np.lexsort((arr[:, 2], arr[:, 1], arr[:, 0]))]


def synthetic_scenario(spec=None, **overrides):
    """Ground-truth city with hotspot UEs, record streams and a UAV fleet.

    ``scenario.truth[bs_id]`` keeps UE positions, true mean rates and hotspot
    membership for scoring demand predictions.
    """
    spec = spec or SyntheticSpec()
    if overrides:
        spec = SyntheticSpec(**{**asdict(spec), **overrides})
    rng = np.random.default_rng(spec.seed)
    cfg = LearningConfig(grid_cell_m=spec.cell_m)
    service_map = Region.from_bounds(0, 0, spec.map_size_m, spec.map_size_m, spec.cell_m)
    positions = _bs_layout(spec, rng)
    regions = voronoi_regions(service_map, {i: p for i, p in enumerate(positions)})
    r_hot, r_other = ue_rates(spec)

    stations, base_stations, truth = [], [], {}
    for bs_id, pos in enumerate(positions):
        region = regions[bs_id]
        centers = region.centers()
        n_hot = int(round(spec.hotspot_fraction * spec.ues_per_bs))
        n_other = spec.ues_per_bs - n_hot
        # hotspot centres stay well inside the region
        near = np.linalg.norm(centers - [pos.x, pos.y], axis=1) < 0.3 * spec.map_size_m / math.sqrt(spec.n_bs)
        pool = centers[near] if near.any() else centers
        hot_means = pool[rng.integers(0, len(pool), size=spec.n_clusters)]
        which = rng.integers(0, spec.n_clusters, size=n_hot)
        hot_xy = hot_means[which] + rng.standard_normal((n_hot, 2)) * spec.hotspot_sigma_m
        hot_xy = _clip_into(region, hot_xy)
        other_xy = centers[rng.integers(0, len(centers), size=n_other)]
        other_xy = other_xy + rng.uniform(-0.5, 0.5, size=other_xy.shape) * spec.cell_m
        xy = np.vstack([hot_xy, other_xy])
        rates = np.concatenate([np.full(n_hot, r_hot), np.full(n_other, r_other)])
        is_hot = np.concatenate([np.ones(n_hot, bool), np.zeros(n_other, bool)])

        busy_start = float(rng.uniform(0, spec.busy_start_max_s))
        records = RecordStream.from_array(_poisson_records(xy, rates, spec, busy_start, rng))
        var = spec.hotspot_sigma_m ** 2
        bg_w = n_other / spec.ues_per_bs
        comp_w = np.full(spec.n_clusters, (1 - bg_w) / spec.n_clusters)
        # background as one broad component over the region
        spread = np.cov(centers.T) + np.eye(2)
        ue_model = MixtureModel("probabilistic", np.append(comp_w, bg_w),
                                np.vstack([hot_means, centers.mean(axis=0)]),
                                np.concatenate([np.tile(np.eye(2) * var, (spec.n_clusters, 1, 1)),
                                                spread[None]]))
        reference = Region.disc((0, 0), 1, spec.cell_m)  # placeholder replaced below
        hot_mask = np.zeros(service_map.shape, dtype=bool)
        g = service_map.grid_centers()
        for m in hot_means:
            hot_mask |= np.hypot(g[..., 0] - m[0], g[..., 1] - m[1]) <= 2 * spec.hotspot_sigma_m
        reference = service_map.with_mask(hot_mask & region.mask)
        base_stations.append(BaseStation(
            bs_id, pos, region, records,
            capacity_bps=spec.overload_factor * float(rates.sum()),
            ue_model=ue_model, reference_hotspot=reference))
        stations.append(SpatialPoint(pos.x, pos.y, 0.0))
        truth[bs_id] = {"ue_xy": xy, "ue_rate_bps": rates, "is_hot": is_hot,
                        "busy_start_s": busy_start, "hotspot_means": hot_means}

    fleet = []
    for uid in range(spec.fleet_size):
        x, y = rng.uniform(0, spec.map_size_m, size=2)
        energy = float(rng.uniform(0.5, 1.0) * 90000.0)
        fleet.append(UavProfile(SpatialPoint(float(x), float(y), 0.0), 5.0, energy, 0.0, uid))
    return Scenario(base_stations, fleet, stations, EconomicParams(), ChannelParams(), cfg,
                    SimulationConfig(), spec.horizon_s, spec.seed, service_map,
                    truth={"spec": spec, "bs": truth})


def true_demand(scenario, bs_id, region, T_s):
    """Expected bits the UEs inside ``region`` request over ``T_s``."""
    t = scenario.truth["bs"][bs_id]
    inside = region.contains(t["ue_xy"])
    return float(T_s * t["ue_rate_bps"][inside].sum())


def measured_ratio(scenario, bs_id, start=None, stop=None):
    """Observed hotspot-to-area per-UE rate ratio from the records."""
    t = scenario.truth["bs"][bs_id]
    bs = scenario.base_stations[[b.bs_id for b in scenario.base_stations].index(bs_id)]
    rec = bs.records
    if start is not None:
        rec = rec.window(start, stop)
    hot_xy = {tuple(p) for p in np.round(t["ue_xy"][t["is_hot"]], 9)}
    is_hot = np.array([tuple(p) in hot_xy for p in np.round(rec.locations, 9)], dtype=bool)
    n_hot = int(t["is_hot"].sum())
    n_all = len(t["is_hot"])
    rho_c = rec.rate_bps[is_hot].sum() / n_hot
    rho = rec.rate_bps.sum() / n_all
    return float(rho_c / rho)


# --- scenario files ---------------------------------------------------------

def _region_to_json(region):
    packed = np.packbits(region.mask.reshape(-1))
    return {"origin": [region.origin.x, region.origin.y], "cell_size": region.cell_size,
            "shape": list(region.shape), "mask": base64.b64encode(packed.tobytes()).decode()}


def _region_from_json(d):
    shape = tuple(d["shape"])
    bits = np.unpackbits(np.frombuffer(base64.b64decode(d["mask"]), dtype=np.uint8))
    mask = bits[:shape[0] * shape[1]].reshape(shape).astype(bool)
    return Region(SpatialPoint(*d["origin"]), d["cell_size"], mask)


def _mixture_to_json(m):
    if m is None:
        return None
    return {"kind": m.kind, "weights": m.weights.tolist(), "means": m.means.tolist(),
            "covariances": m.covariances.tolist()}


def _mixture_from_json(d):
    return None if d is None else MixtureModel(d["kind"], d["weights"], d["means"], d["covariances"])


def scenario_to_json(scenario):
    return {
        "seed": scenario.seed,
        "horizon_s": scenario.horizon_s,
        "econ": asdict(scenario.econ),
        "channel": asdict(scenario.channel),
        "learning": asdict(scenario.learning),
        "sim": asdict(scenario.sim),
        "service_map": None if scenario.service_map is None else _region_to_json(scenario.service_map),
        "recharge_stations": [[s.x, s.y, s.z] for s in scenario.recharge_stations],
        "fleet": [{"uid": u.uid, "position": [u.position.x, u.position.y, u.position.z],
                   "speed_m_s": u.speed_m_s, "energy_j": u.energy_j,
                   "busy_until_s": u.busy_until_s} for u in scenario.fleet],
        "base_stations": [{
            "bs_id": b.bs_id, "position": [b.position.x, b.position.y, b.position.z],
            "region": _region_to_json(b.region), "capacity_bps": b.capacity_bps,
            "ue_model": _mixture_to_json(b.ue_model),
            "reference_hotspot": (None if b.reference_hotspot is None
                                  else _region_to_json(b.reference_hotspot)),
        } for b in scenario.base_stations],
    }


def save_scenario(scenario, directory):
    """Write ``scenario.json`` and the canonical ``records.csv``."""
    os.makedirs(directory, exist_ok=True)
    atomic_write(os.path.join(directory, "scenario.json"),
                 json.dumps(scenario_to_json(scenario), sort_keys=True, indent=1) + "\n")
    write_records_csv({b.bs_id: b.records for b in scenario.base_stations},
                      os.path.join(directory, "records.csv"))


def load_scenario(directory):
    path = os.path.join(directory, "scenario.json")
    try:
        with open(path) as fh:
            d = json.load(fh)
    except OSError as exc:
        raise ValueError(f"cannot read {path}: {exc.strerror or exc}") from exc
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: invalid JSON ({exc})") from exc
    streams = read_records_csv(os.path.join(directory, "records.csv"))
    channel = dict(d["channel"])
    for k in ("excess_loss_los_db", "excess_loss_nlos_db"):
        channel[k] = tuple(channel[k])
    sim = dict(d["sim"])
    sim["altitude_bounds"] = tuple(sim["altitude_bounds"])
    base_stations = [BaseStation(
        b["bs_id"], SpatialPoint(*b["position"]), _region_from_json(b["region"]),
        streams.get(b["bs_id"], RecordStream.empty()), b["capacity_bps"],
        _mixture_from_json(b["ue_model"]),
        None if b["reference_hotspot"] is None else _region_from_json(b["reference_hotspot"]),
    ) for b in d["base_stations"]]
    fleet = [UavProfile(SpatialPoint(*u["position"]), u["speed_m_s"], u["energy_j"],
                        u["busy_until_s"], u["uid"]) for u in d["fleet"]]
    return Scenario(base_stations, fleet, [SpatialPoint(*s) for s in d["recharge_stations"]],
                    EconomicParams(**d["econ"]), ChannelParams(**channel),
                    LearningConfig(**d["learning"]), SimulationConfig(**sim), d["horizon_s"],
                    d["seed"], None if d["service_map"] is None else _region_from_json(d["service_map"]))


def scenario_from_dataset(parsed, partition, streams, fleet_size=6, seed=0, capacity_quantile=0.9,
                          horizon_s=None, hour_s=3600.0):
    """Scenario over ingested data; BS capacity is a quantile of its hourly load."""
    rng = np.random.default_rng(seed)
    hourly = {}
    for r in parsed.traffic:
        hourly.setdefault(r.bs_id, []).append(r.bytes * 8.0 / hour_s)
    base_stations = []
    for b in parsed.bs:
        loads = hourly.get(b.bs_id, [0.0])
        base_stations.append(BaseStation(
            b.bs_id, partition.positions[b.bs_id], partition.regions[b.bs_id],
            streams.get(b.bs_id, RecordStream.empty()),
            float(np.quantile(loads, capacity_quantile))))
    xmin, ymin, xmax, ymax = partition.service_map.bounds
    fleet = [UavProfile(SpatialPoint(float(rng.uniform(xmin, xmax)), float(rng.uniform(ymin, ymax))),
                        5.0, float(rng.uniform(0.5, 1.0) * 90000.0), 0.0, uid)
             for uid in range(fleet_size)]
    stations = [SpatialPoint(p.x, p.y, 0.0) for _, p in sorted(partition.positions.items())]
    if horizon_s is None:
        horizon_s = (max(r.hour for r in parsed.traffic) + 1) * hour_s
    return Scenario(base_stations, fleet, stations, horizon_s=horizon_s, seed=seed,
                    service_map=partition.service_map)
