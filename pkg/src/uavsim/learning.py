"""Learning stage: traffic density, hotspot detection and demand prediction."""

import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage
from scipy.spatial import cKDTree
from sklearn.base import BaseEstimator
from sklearn.utils.validation import check_is_fitted

from uavsim._validation import check_fraction, check_positive
from uavsim.channel import Region
from uavsim.mixture import (
    MixtureModel, WeightedSamples, cell_values, em_fit, mixture_eval, region_integral, wem_fit,
)


@dataclass(frozen=True)
class TransmissionRecord:
    rate_bps: float
    location: tuple
    time_s: float

    def __post_init__(self):
        if self.rate_bps < 0:
            raise ValueError("rate_bps must be >= 0")


@dataclass(frozen=True, eq=False)
class RecordStream:
    """Columnar transmission records: time (s), x, y (m), rate (bits/s)."""

    time_s: np.ndarray
    x: np.ndarray
    y: np.ndarray
    rate_bps: np.ndarray

    def __post_init__(self):
        cols = [np.asarray(getattr(self, n), dtype=float).reshape(-1)
                for n in ("time_s", "x", "y", "rate_bps")]
        if len({len(c) for c in cols}) != 1:
            raise ValueError("record columns must have equal length")
        if np.any(cols[3] < 0):
            raise ValueError("rate_bps must be >= 0")
        for name, col in zip(("time_s", "x", "y", "rate_bps"), cols):
            object.__setattr__(self, name, col)

    @classmethod
    def from_records(cls, records):
        if len(records) == 0:
            return cls.empty()
        arr = np.array([(r.time_s, r.location[0], r.location[1], r.rate_bps) for r in records])
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    @classmethod
    def from_array(cls, arr):
        arr = np.asarray(arr, dtype=float).reshape(-1, 4)
        return cls(arr[:, 0], arr[:, 1], arr[:, 2], arr[:, 3])

    @classmethod
    def empty(cls):
        z = np.zeros(0)
        return cls(z, z, z, z)

    def __len__(self):
        return len(self.time_s)

    @property
    def locations(self):
        return np.column_stack([self.x, self.y])

    def select(self, mask):
        return RecordStream(self.time_s[mask], self.x[mask], self.y[mask], self.rate_bps[mask])

    def window(self, start, stop):
        """Records with ``start <= t < stop``."""
        return self.select((self.time_s >= start) & (self.time_s < stop))

    def inside(self, region):
        return self.select(region.contains(self.locations))

    def to_records(self):
        return [TransmissionRecord(r, (x, y), t)
                for t, x, y, r in zip(self.time_s, self.x, self.y, self.rate_bps)]


def as_stream(records):
    if isinstance(records, RecordStream):
        return records
    if isinstance(records, np.ndarray):
        return RecordStream.from_array(records)
    return RecordStream.from_records(list(records))


@dataclass(frozen=True)
class LearningConfig:
    slot_s: float = 1.0
    learn_window_s: float = 120.0
    service_interval_s: float = 1080.0
    efficiency: float = 0.9
    travel_fraction: float = 0.1
    grid_cell_m: float = 10.0

    def __post_init__(self):
        check_positive(self.slot_s, "slot_s")
        check_positive(self.grid_cell_m, "grid_cell_m")
        if not self.slot_s <= self.learn_window_s < self.service_interval_s:
            raise ValueError("need slot_s <= learn_window_s < service_interval_s")
        check_fraction(self.efficiency, "efficiency")
        check_fraction(self.travel_fraction, "travel_fraction")


@dataclass(frozen=True, eq=False)
class DemandEstimate:
    density_model: MixtureModel
    hotspot: Region
    demand_bits: float
    avg_rate_per_hotspot_ue_bps: float
    hotspot_ue_count: int
    subareas: list = field(default_factory=list)


def snap_locations(xy, cell_m):
    """Snap points to the centers of a ``cell_m`` grid anchored at the origin."""
    return (np.floor(np.asarray(xy, dtype=float) / cell_m) + 0.5) * cell_m


def build_density_samples(records, config):
    """Time-averaged downlink rate at each (grid-snapped) record location."""
    stream = as_stream(records)
    if len(stream) == 0:
        raise ValueError("no transmission records")
    snapped = snap_locations(stream.locations, config.grid_cell_m)
    points, inverse = np.unique(snapped, axis=0, return_inverse=True)
    weights = np.bincount(inverse.reshape(-1), weights=stream.rate_bps * config.slot_s,
                          minlength=len(points))
    weights /= config.learn_window_s
    if not np.any(weights > 0):
        raise ValueError("no positive weight in the transmission records")
    return WeightedSamples(points, weights)


def total_average_rate(records, config):
    """Time-average total rate of all records over the learning window."""
    stream = as_stream(records)
    return float(stream.rate_bps.sum() * config.slot_s / config.learn_window_s)


def estimate_ue_distribution(records, num_components, seed=None, **kwargs):
    stream = as_stream(records)
    n_distinct = len(np.unique(stream.locations, axis=0))
    if n_distinct < num_components:
        raise ValueError(f"{n_distinct} distinct locations, fewer than L={num_components}")
    return em_fit(stream.locations, num_components, seed=seed, **kwargs)


def estimate_traffic_density(records, num_components, config, service_area=None, **kwargs):
    samples = build_density_samples(records, config)
    return wem_fit(samples, num_components, region=service_area, **kwargs)


def detect_hotspot(density_model, service_area, rtol=1e-6):
    """Connected super-average cell set around the densest component mean.

    Raises ``ValueError("no hotspot")`` when no cell exceeds the area average.
    """
    if service_area.is_empty:
        raise ValueError("empty region")
    values = np.zeros(service_area.shape)
    rows, cols = service_area.indices()
    values[rows, cols] = cell_values(density_model, service_area)
    mean_density = values[rows, cols].sum() * service_area.cell_area / service_area.area
    above = service_area.mask & (values > mean_density * (1.0 + rtol))
    if not above.any():
        raise ValueError("no hotspot: no cell exceeds the average traffic density")

    mean_rows, mean_cols = service_area.cell_index(density_model.means)
    candidates = [k for k in range(density_model.n_components)
                  if mean_rows[k] >= 0 and service_area.mask[mean_rows[k], mean_cols[k]]]
    if not candidates:
        raise ValueError("no hotspot: no component mean lies inside the service area")
    at_means = mixture_eval(density_model, density_model.means[candidates])
    # a needle-thin component can peak between cell centers; fall back to
    # the next densest mean whose cell is above average
    order = [candidates[i] for i in np.argsort(-at_means, kind="stable")]
    usable = [k for k in order if above[mean_rows[k], mean_cols[k]]]
    if not usable:
        raise ValueError("no hotspot: no component mean lies in an above-average cell")
    r0, c0 = mean_rows[usable[0]], mean_cols[usable[0]]
    labels, _ = ndimage.label(above)  # default structure is 4-connectivity
    return service_area.with_mask(labels == labels[r0, c0])


def predict_demand(density_model, hotspot, T):
    """Data demand (bits) of the hotspot over an interval of ``T`` seconds."""
    check_positive(T, "T", allow_zero=True)
    return float(T) * region_integral(density_model, hotspot)


def avg_rate_per_ue(density_model, region, ue_count):
    if ue_count <= 0:
        raise ValueError("ue_count must be > 0")
    return region_integral(density_model, region) / ue_count


def count_ues(records, region, config):
    """Distinct grid-snapped record locations inside ``region``."""
    stream = as_stream(records)
    if len(stream) == 0:
        return 0
    snapped = snap_locations(stream.locations, config.grid_cell_m)
    snapped = snapped[region.contains(snapped)]
    return len(np.unique(snapped, axis=0)) if len(snapped) else 0


def partition_by_demand(region, cell_demand, n_parts):
    """Cut ``region`` into ``n_parts`` row-major runs of equal cumulative demand."""
    cell_demand = np.asarray(cell_demand, dtype=float)
    total = cell_demand.sum()
    cum_mid = np.cumsum(cell_demand) - 0.5 * cell_demand
    part = np.minimum((cum_mid / (total / n_parts)).astype(int), n_parts - 1)
    rows, cols = region.indices()
    pieces = []
    for n in range(n_parts):
        sel = part == n
        mask = np.zeros(region.shape, dtype=bool)
        mask[rows[sel], cols[sel]] = True
        pieces.append((region.with_mask(mask), float(cell_demand[sel].sum())))
    return pieces


def split_hotspot(density_model, hotspot, capacity_fn, config, demand_bits=None,
                  max_parts=64):
    """Smallest even split of the hotspot that one UAV per part can serve.

    ``capacity_fn(subregion)`` returns the capacity C(x*(n), p_max) of a UAV
    placed optimally for that subregion. A part of demand d_n is servable
    when ``d_n < eta * T * capacity_fn(part)``.
    """
    T = config.service_interval_s
    eta = config.efficiency
    cell_demand = cell_values(density_model, hotspot) * hotspot.cell_area * T
    if demand_bits is None:
        demand_bits = float(cell_demand.sum())
    elif cell_demand.sum() > 0:
        cell_demand = cell_demand * (demand_bits / cell_demand.sum())

    def servable(part, demand):
        return demand < eta * T * capacity_fn(part)

    rows, cols = hotspot.indices()
    heavy = int(np.argmax(cell_demand))
    single = np.zeros(hotspot.shape, dtype=bool)
    single[rows[heavy], cols[heavy]] = True
    if not servable(hotspot.with_mask(single), cell_demand[heavy]):
        raise ValueError("demand unservable: a single cell exceeds one UAV's capacity")

    for n_parts in range(1, min(max_parts, hotspot.n_cells) + 1):
        pieces = partition_by_demand(hotspot, cell_demand, n_parts)
        if any(p.is_empty for p, _ in pieces):
            continue
        if all(servable(p, d) for p, d in pieces):
            return pieces
    raise ValueError(f"demand unservable with up to {max_parts} subareas")


def mre(predicted, actual, return_skipped=False):
    """Mean relative error; entries with zero actual demand are skipped."""
    predicted = np.asarray(predicted, dtype=float).reshape(-1)
    actual = np.asarray(actual, dtype=float).reshape(-1)
    if predicted.shape != actual.shape:
        raise ValueError("predicted and actual must have equal length")
    ok = actual > 0
    skipped = int((~ok).sum())
    if skipped:
        warnings.warn(f"mre: skipped {skipped} entries with zero actual demand")
    value = float(np.mean(np.abs(predicted[ok] - actual[ok]) / actual[ok])) if ok.any() else math.nan
    return (value, skipped) if return_skipped else value


def em_demand_baseline(ue_model, records, hotspot, T, config):
    """Demand from the UE share in the hotspot times the average total rate."""
    return float(T) * total_average_rate(records, config) * region_integral(ue_model, hotspot)


def kmean_demand_baseline(samples, k, hotspot, T, query_grid=None, sample_cell_m=None):
    """Demand from k-nearest-neighbour averaging of the sampled densities.

    Each hotspot cell gets the mean weight of its ``k`` nearest samples. The
    weights are rates per sampled grid location, so a cell's rate is scaled
    by its area over the sample cell area (``sample_cell_m`` squared).
    ``query_grid`` restricts the query cells to ``hotspot & query_grid``.
    """
    n = len(samples)
    if k > n:
        raise ValueError(f"k={k} exceeds the {n} samples")
    if k < 1:
        raise ValueError("k must be >= 1")
    cells = hotspot if query_grid is None else hotspot.intersection(query_grid)
    weights = samples.weights if samples.weights is not None else np.ones(n)
    density = knn_density(samples.points, weights, cells.centers(), k)
    sample_cell_m = cells.cell_size if sample_cell_m is None else sample_cell_m
    return float(T) * float(density.sum()) * cells.cell_area / sample_cell_m ** 2


def knn_density(points, weights, queries, k):
    """Mean weight of the ``k`` nearest points to each query."""
    _, idx = cKDTree(points).query(queries, k=k)
    idx = np.asarray(idx).reshape(len(queries), k)
    return np.asarray(weights)[idx].mean(axis=1)


def hotspot_ue_density(ue_model, hotspot):
    """UE distribution restricted to the hotspot and renormalized (per m^2)."""
    values = cell_values(ue_model, hotspot)
    total = values.sum() * hotspot.cell_area
    if total <= 0:
        return np.full(hotspot.n_cells, 1.0 / hotspot.area)
    return values / total


class TrafficDemandEstimator(BaseEstimator):
    """Learning-stage estimator for one base station.

    ``fit`` takes the learning-window records (a RecordStream, a list of
    TransmissionRecord or an (n, 4) array of time, x, y, rate) and fits the
    UE distribution, the traffic-density surface and the hotspot.
    ``predict(T)`` returns the hotspot demand in bits over ``T`` seconds.
    """

    def __init__(self, service_area=None, n_components=8, n_ue_components=3, config=None,
                 tol=1e-6, max_iter=500, reg_covar=None, random_state=None):
        self.service_area = service_area
        self.n_components = n_components
        self.n_ue_components = n_ue_components
        self.config = config
        self.tol = tol
        self.max_iter = max_iter
        self.reg_covar = reg_covar
        self.random_state = random_state

    def fit(self, X, y=None):
        if self.service_area is None:
            raise ValueError("service_area is required")
        config = self.config or LearningConfig()
        stream = as_stream(X).inside(self.service_area)
        if len(stream) == 0:
            raise ValueError("no transmission records inside the service area")
        self.samples_ = build_density_samples(stream, config)
        # a bell narrower than half a cell is not resolved by the grid
        reg = (config.grid_cell_m / 2) ** 2 if self.reg_covar is None else self.reg_covar
        self.density_model_ = wem_fit(self.samples_, self.n_components, tol=self.tol,
                                      max_iter=self.max_iter, region=self.service_area,
                                      reg_covar=reg)
        n_ue = min(self.n_ue_components, len(np.unique(stream.locations, axis=0)))
        self.ue_model_ = estimate_ue_distribution(stream, n_ue, seed=self.random_state,
                                                  tol=self.tol, max_iter=self.max_iter)
        self.hotspot_ = detect_hotspot(self.density_model_, self.service_area)
        self.hotspot_ue_count_ = max(count_ues(stream, self.hotspot_, config), 1)
        self.area_ue_count_ = max(count_ues(stream, self.service_area, config), 1)
        self.total_rate_bps_ = total_average_rate(stream, config)
        self.config_ = config
        return self

    def predict(self, T=None):
        check_is_fitted(self, "hotspot_")
        T = self.config_.service_interval_s if T is None else T
        return predict_demand(self.density_model_, self.hotspot_, T)

    @property
    def avg_rate_hotspot_(self):
        """Average rate demand per hotspot UE."""
        return avg_rate_per_ue(self.density_model_, self.hotspot_, self.hotspot_ue_count_)

    @property
    def avg_rate_area_(self):
        """Average rate demand per UE over the whole service area."""
        return avg_rate_per_ue(self.density_model_, self.service_area, self.area_ue_count_)

    def hotspot_density(self, region=None):
        """Normalized UE density over ``region`` (default: the hotspot)."""
        return hotspot_ue_density(self.ue_model_, self.hotspot_ if region is None else region)

    def estimate(self, subareas=()):
        check_is_fitted(self, "hotspot_")
        T = self.config_.service_interval_s
        return DemandEstimate(self.density_model_, self.hotspot_, self.predict(T),
                              self.predict(T) / (T * self.hotspot_ue_count_),
                              self.hotspot_ue_count_, list(subareas))

    def predict_em_baseline(self, T=None):
        check_is_fitted(self, "hotspot_")
        T = self.config_.service_interval_s if T is None else T
        return float(T) * self.total_rate_bps_ * region_integral(self.ue_model_, self.hotspot_)

    def predict_kmean_baseline(self, k, T=None):
        check_is_fitted(self, "hotspot_")
        T = self.config_.service_interval_s if T is None else T
        return kmean_demand_baseline(self.samples_, k, self.hotspot_, T,
                                     sample_cell_m=self.config_.grid_cell_m)
