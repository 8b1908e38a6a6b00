"""Air-to-ground channel, grid regions and hotspot capacity.

Positions live in a local planar frame measured in meters. Rates are in
bits/s, powers in watts and path losses in dB unless a name says otherwise.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from uavsim._validation import check_positive


@dataclass(frozen=True)
class SpatialPoint:
    x: float
    y: float
    z: float = 0.0

    def __post_init__(self):
        for name in ("x", "y", "z"):
            value = float(getattr(self, name))
            if not math.isfinite(value):
                raise ValueError(f"coordinate {name} must be finite, got {value}")
            object.__setattr__(self, name, value)
        if self.z < 0:
            raise ValueError(f"altitude must be >= 0, got {self.z}")

    def as_array(self):
        return np.array([self.x, self.y, self.z])

    def distance_to(self, other):
        return float(np.linalg.norm(self.as_array() - other.as_array()))

    @classmethod
    def from_array(cls, values):
        values = np.asarray(values, dtype=float).reshape(-1)
        z = values[2] if values.size > 2 else 0.0
        return cls(values[0], values[1], z)


@dataclass(frozen=True)
class ChannelParams:
    """Link-level constants; defaults are the dense-urban 2 GHz setting."""

    carrier_hz: float = 2e9
    bandwidth_hz: float = 20e6
    noise_psd_dbm_hz: float = -174.0
    antenna_gain_linear: float = 1.0
    los_a: float = 9.6
    los_b: float = 0.28
    excess_loss_los_db: tuple = (1.6, 8.41)
    excess_loss_nlos_db: tuple = (23.0, 33.78)
    light_speed_m_s: float = 3e8

    def __post_init__(self):
        check_positive(self.carrier_hz, "carrier_hz")
        check_positive(self.bandwidth_hz, "bandwidth_hz")
        check_positive(self.antenna_gain_linear, "antenna_gain_linear")
        check_positive(self.los_a, "los_a")
        check_positive(self.los_b, "los_b")
        check_positive(self.light_speed_m_s, "light_speed_m_s")
        for name in ("excess_loss_los_db", "excess_loss_nlos_db"):
            mu, sigma = getattr(self, name)
            if sigma < 0:
                raise ValueError(f"{name} standard deviation must be >= 0")
            object.__setattr__(self, name, (float(mu), float(sigma)))

    @property
    def noise_power_w(self):
        """Receiver noise power n0 * w in watts."""
        return 10.0 ** ((self.noise_psd_dbm_hz - 30.0) / 10.0) * self.bandwidth_hz


@dataclass(frozen=True, eq=False)
class Region:
    """A set of square grid cells anchored at ``origin`` (lower-left corner).

    ``mask[row, col]`` marks included cells; row indexes y and col indexes x,
    so cell (r, c) has center ``origin + ((c + .5) h, (r + .5) h)``.
    """

    origin: SpatialPoint
    cell_size: float
    mask: np.ndarray = field(repr=False)

    def __post_init__(self):
        check_positive(self.cell_size, "cell_size")
        mask = np.asarray(self.mask, dtype=bool)
        if mask.ndim != 2:
            raise ValueError("mask must be a 2-D boolean grid")
        mask = mask.copy()
        mask.setflags(write=False)
        object.__setattr__(self, "mask", mask)
        if not isinstance(self.origin, SpatialPoint):
            object.__setattr__(self, "origin", SpatialPoint(*self.origin))

    @classmethod
    def from_bounds(cls, xmin, ymin, xmax, ymax, cell_size):
        nx = max(1, int(round((xmax - xmin) / cell_size)))
        ny = max(1, int(round((ymax - ymin) / cell_size)))
        return cls(SpatialPoint(xmin, ymin), cell_size, np.ones((ny, nx), dtype=bool))

    @classmethod
    def disc(cls, center, radius, cell_size):
        cx, cy = float(center[0]), float(center[1])
        n = int(math.ceil(radius / cell_size)) + 1
        base = cls(SpatialPoint(cx - n * cell_size, cy - n * cell_size), cell_size,
                   np.ones((2 * n, 2 * n), dtype=bool))
        g = base.grid_centers()
        inside = (g[..., 0] - cx) ** 2 + (g[..., 1] - cy) ** 2 <= radius ** 2
        return base.with_mask(inside)

    @property
    def shape(self):
        return self.mask.shape

    @property
    def cell_area(self):
        return self.cell_size ** 2

    @property
    def n_cells(self):
        return int(self.mask.sum())

    @property
    def area(self):
        return self.cell_area * self.n_cells

    @property
    def is_empty(self):
        return self.n_cells == 0

    @property
    def bounds(self):
        """(xmin, ymin, xmax, ymax) of the full grid."""
        ny, nx = self.shape
        h = self.cell_size
        return (self.origin.x, self.origin.y, self.origin.x + nx * h, self.origin.y + ny * h)

    def grid_centers(self):
        ny, nx = self.shape
        h = self.cell_size
        xs = self.origin.x + (np.arange(nx) + 0.5) * h
        ys = self.origin.y + (np.arange(ny) + 0.5) * h
        gx, gy = np.meshgrid(xs, ys)
        return np.stack([gx, gy], axis=-1)

    def indices(self):
        """Row/col indices of included cells in row-major order."""
        return np.nonzero(self.mask)

    def centers(self):
        """Centers of included cells, shape (n_cells, 2), row-major order."""
        rows, cols = self.indices()
        h = self.cell_size
        return np.column_stack([self.origin.x + (cols + 0.5) * h, self.origin.y + (rows + 0.5) * h])

    def cell_index(self, xy):
        """Grid (row, col) of each point; -1 where the point is off-grid."""
        xy = np.atleast_2d(np.asarray(xy, dtype=float))
        ny, nx = self.shape
        cols = np.floor((xy[:, 0] - self.origin.x) / self.cell_size).astype(int)
        rows = np.floor((xy[:, 1] - self.origin.y) / self.cell_size).astype(int)
        off = (cols < 0) | (cols >= nx) | (rows < 0) | (rows >= ny)
        rows[off] = -1
        cols[off] = -1
        return rows, cols

    def contains(self, xy):
        rows, cols = self.cell_index(xy)
        inside = rows >= 0
        out = np.zeros(rows.shape, dtype=bool)
        out[inside] = self.mask[rows[inside], cols[inside]]
        return out

    def with_mask(self, mask):
        return Region(self.origin, self.cell_size, mask)

    def _check_same_grid(self, other):
        if (self.shape != other.shape or self.cell_size != other.cell_size
                or self.origin != other.origin):
            raise ValueError("regions are defined on different grids")

    def union(self, other):
        self._check_same_grid(other)
        return self.with_mask(self.mask | other.mask)

    def intersection(self, other):
        self._check_same_grid(other)
        return self.with_mask(self.mask & other.mask)

    def issubset(self, other):
        self._check_same_grid(other)
        return not np.any(self.mask & ~other.mask)

    def centroid(self):
        return self.centers().mean(axis=0)


def _as_xyz(points):
    """Coerce a SpatialPoint, (x, y[, z]) or (n, 2|3) array to an (n, 3) array."""
    if isinstance(points, SpatialPoint):
        return points.as_array()[None, :]
    arr = np.atleast_2d(np.asarray(points, dtype=float))
    if arr.shape[1] == 2:
        arr = np.column_stack([arr, np.zeros(len(arr))])
    return arr


def _link_geometry(uav, ue):
    uav = _as_xyz(uav)[0]
    ue = _as_xyz(ue)
    dist = np.linalg.norm(ue - uav, axis=1)
    if np.any(dist <= 0):
        raise ValueError("degenerate geometry: UAV and UE positions coincide")
    elev = np.arcsin(np.clip((uav[2] - ue[:, 2]) / dist, -1.0, 1.0))
    return dist, elev


def elevation_angle(uav, ue):
    """Elevation angle (radians) of the UAV as seen from the UE."""
    _, elev = _link_geometry(uav, ue)
    return float(elev[0])


def free_space_loss_db(distance_m, params):
    distance_m = np.asarray(distance_m, dtype=float)
    return 20.0 * np.log10(4.0 * np.pi * params.carrier_hz * distance_m / params.light_speed_m_s)


def path_loss_db(uav, ue, link, params, mode="mean", seed=None):
    """Air-to-ground path loss: free-space term plus the excess loss of ``link``.

    In ``"mean"`` mode the excess loss is its mean; in ``"sample"`` mode it is
    drawn from the link's Gaussian using ``seed`` (an int or a Generator).
    """
    dist, _ = _link_geometry(uav, ue)
    link = link.upper()
    if link == "LOS":
        mu, sigma = params.excess_loss_los_db
    elif link == "NLOS":
        mu, sigma = params.excess_loss_nlos_db
    else:
        raise ValueError(f"link must be 'LOS' or 'NLOS', got {link!r}")
    if mode == "mean":
        xi = mu
    elif mode == "sample":
        if seed is None:
            raise ValueError("sample mode requires a seed")
        rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
        xi = rng.normal(mu, sigma)
    else:
        raise ValueError(f"mode must be 'mean' or 'sample', got {mode!r}")
    return float(free_space_loss_db(dist[0], params) + xi)


def _los_prob_from_elevation(elev_rad, params):
    deg = np.degrees(elev_rad)
    return 1.0 / (1.0 + params.los_a * np.exp(-params.los_b * (deg - params.los_a)))


def los_probability(uav, ue, params):
    _, elev = _link_geometry(uav, ue)
    return float(_los_prob_from_elevation(elev, params)[0])


class LinkBudget:
    """Per-UE link terms for one UAV position, reusable across powers.

    Caches LOS probability and SNR-per-watt of both link classes so that
    capacity can be evaluated for many powers without redoing geometry.
    """

    def __init__(self, uav, ue_points, params, weights=None):
        dist, elev = _link_geometry(uav, ue_points)
        self.params = params
        self.p_los = _los_prob_from_elevation(elev, params)
        fspl = free_space_loss_db(dist, params)
        noise = params.noise_power_w
        g = params.antenna_gain_linear
        self.snr_los = g / (10.0 ** ((fspl + params.excess_loss_los_db[0]) / 10.0) * noise)
        self.snr_nlos = g / (10.0 ** ((fspl + params.excess_loss_nlos_db[0]) / 10.0) * noise)
        self.weights = None if weights is None else np.asarray(weights, dtype=float)

    def rates(self, power_w):
        """Expected rate at each UE for transmit power ``power_w``."""
        w = self.params.bandwidth_hz
        r_los = w * np.log2(1.0 + self.snr_los * power_w)
        r_nlos = w * np.log2(1.0 + self.snr_nlos * power_w)
        return self.p_los * r_los + (1.0 - self.p_los) * r_nlos

    def capacity(self, power_w):
        """Weighted sum of expected rates (weights are quadrature masses)."""
        if self.weights is None:
            raise ValueError("LinkBudget built without quadrature weights")
        return float(np.dot(self.weights, self.rates(power_w)))


def expected_rate(uav, ue, power_w, params):
    """Expected downlink rate to one UE, averaging over LOS/NLOS state."""
    check_positive(power_w, "power_w", allow_zero=True)
    return float(LinkBudget(uav, ue, params).rates(power_w)[0])


def density_masses(region, ue_density, tol=1e-3):
    """Quadrature masses of a normalized density over ``region``'s cells.

    ``ue_density`` is either a callable on (n, 2) points or an array of
    per-m^2 density values at ``region.centers()``.
    """
    if region.is_empty:
        raise ValueError("empty region")
    centers = region.centers()
    values = ue_density(centers) if callable(ue_density) else np.asarray(ue_density, dtype=float)
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.shape[0] != centers.shape[0]:
        raise ValueError(f"density has {values.shape[0]} values for {centers.shape[0]} cells")
    if np.any(values < 0) or not np.all(np.isfinite(values)):
        raise ValueError("density values must be finite and nonnegative")
    masses = values * region.cell_area
    total = masses.sum()
    if abs(total - 1.0) > tol:
        raise ValueError(f"density is not normalized over the region (integral {total:.6g})")
    return masses


def hotspot_capacity(uav, power_w, hotspot, ue_density, params):
    """Average rate a UAV offers the hotspot UEs, by midpoint quadrature."""
    check_positive(power_w, "power_w", allow_zero=True)
    masses = density_masses(hotspot, ue_density)
    return LinkBudget(uav, hotspot.centers(), params, masses).capacity(power_w)


def uniform_density(region):
    """Per-cell density values of the uniform distribution over ``region``."""
    if region.is_empty:
        raise ValueError("empty region")
    return np.full(region.n_cells, 1.0 / region.area)
