"""Sensor layouts, empirical norms, and synthetic noisy measurements.

The empirical inner product is the n-point average (u, v)_n =
(1/n) sum_i u(x_i) v(x_i); all data-fit quantities in the package are
expressed in the norm it induces.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np
from scipy.spatial import cKDTree

NOISE_MODELS = ("Y1", "Y2")
DISTRIBUTIONS = ("gaussian", "uniform", "rademacher")
LAYOUTS = ("uniform-grid", "jittered-grid")


@dataclass
class SensorSet:
    """Measurement locations strictly inside the domain.

    ``d_min`` is the smallest pairwise distance, ``d_max`` the covering
    radius sup_x min_i |x - x_i| (estimated on a probe grid for jittered
    layouts), and ``mesh_ratio`` their quotient d_max/d_min.
    """

    dim: int
    points: np.ndarray
    layout: str
    seed: Optional[int]
    spacing: float
    d_min: float
    d_max: float

    @property
    def n(self) -> int:
        return self.points.shape[0]

    @property
    def mesh_ratio(self) -> float:
        return self.d_max / self.d_min if self.n > 1 else 1.0


def make_sensors(dim: int, n: int, layout: str = "uniform-grid", seed: int = 0) -> SensorSet:
    """Build a sensor set on (0,1)^dim.

    Parameters
    ----------
    dim : 1 or 2.
    n : number of sensors; in 2-D with a grid layout n must be a
        perfect square (sqrt(n) points per side).
    layout : "uniform-grid" for the interior lattice i/(m+1);
        "jittered-grid" perturbs each lattice point by at most a
        quarter of the spacing, using ``seed``.
    seed : jitter seed; ignored for the plain grid.
    """
    if dim not in (1, 2):
        raise ValueError("dim must be 1 or 2")
    if layout not in LAYOUTS:
        raise ValueError(f"unknown layout {layout!r}")
    if n < 1:
        raise ValueError("need at least one sensor")

    if n == 1:
        pts = np.full((1, dim), 0.5)
        return SensorSet(dim, pts, layout, seed, 1.0, 1.0, 1.0)

    if dim == 1:
        m = n
        spacing = 1.0 / (n + 1)
        grid = (np.arange(1, n + 1) * spacing)[:, None]
    else:
        m = round(np.sqrt(n))
        if m * m != n:
            raise ValueError("2-D grid layouts need a perfect-square sensor count")
        spacing = 1.0 / (m + 1)
        axis = np.arange(1, m + 1) * spacing
        gx, gy = np.meshgrid(axis, axis, indexing="ij")
        grid = np.column_stack([gx.ravel(), gy.ravel()])

    if layout == "uniform-grid":
        pts = grid
        d_min = spacing
        # covering radius is attained against the domain corner
        d_max = spacing * np.sqrt(float(dim))
    else:
        rng = np.random.default_rng(seed)
        jitter = rng.uniform(-0.25 * spacing, 0.25 * spacing, size=grid.shape)
        pts = grid + jitter
        d_min, d_max = _mesh_quantities(pts)

    if np.any(pts <= 0.0) or np.any(pts >= 1.0):
        raise ValueError("sensors must lie strictly inside the domain")
    return SensorSet(dim, pts, layout, seed, spacing, float(d_min), float(d_max))


def _mesh_quantities(pts: np.ndarray):
    tree = cKDTree(pts)
    dd, _ = tree.query(pts, k=2)
    d_min = dd[:, 1].min()
    probes_per_axis = 256
    axis = (np.arange(probes_per_axis) + 0.5) / probes_per_axis
    if pts.shape[1] == 1:
        probe = axis[:, None]
    else:
        px, py = np.meshgrid(axis, axis, indexing="ij")
        probe = np.column_stack([px.ravel(), py.ravel()])
    dist, _ = tree.query(probe)
    return d_min, dist.max()


def empirical_inner(u, v) -> float:
    """(u, v)_n = (1/n) sum_i u_i v_i."""
    u = np.asarray(u, dtype=float)
    v = np.asarray(v, dtype=float)
    if u.shape != v.shape:
        raise ValueError("empirical inner product needs equal-length samples")
    return float(u @ v / u.size)

def empirical_norm(u) -> float:
    u = np.asarray(u, dtype=float)
    return float(np.sqrt(u @ u / u.size))


@dataclass(frozen=True)
class NoiseSpec:
    """Noise model for synthetic data.

    model "Y1" only promises mean zero and variance at most sigma^2;
    "Y2" additionally promises sub-Gaussian tails. All three built-in
    distributions are scaled to variance exactly sigma^2.
    """

    model: str = "Y1"
    sigma: float = 0.0
    distribution: str = "gaussian"
    seed: int = 0

    def __post_init__(self):
        if self.model not in NOISE_MODELS:
            raise ValueError(f"unknown noise model {self.model!r}")
        if self.distribution not in DISTRIBUTIONS:
            raise ValueError(f"unknown noise distribution {self.distribution!r}")
        if self.sigma < 0:
            raise ValueError("sigma must be nonnegative")


def draw_noise(spec: NoiseSpec, n: int) -> np.ndarray:
    """Independent noise sample of length n, deterministic per seed."""
    rng = np.random.default_rng(spec.seed)
    if spec.distribution == "gaussian":
        return rng.normal(0.0, spec.sigma, size=n)
    if spec.distribution == "uniform":
        return rng.uniform(-np.sqrt(3.0) * spec.sigma, np.sqrt(3.0) * spec.sigma, size=n)
    return spec.sigma * rng.choice([-1.0, 1.0], size=n)


@dataclass
class MeasurementSet:
    """Clean and noise-corrupted sensor readings."""

    values: np.ndarray
    clean: np.ndarray
    spec: NoiseSpec
    sensors: Optional[SensorSet] = None

    @property
    def n(self) -> int:
        return self.values.size

    def noise(self) -> np.ndarray:
        return self.values - self.clean


def synthesize(clean, spec: NoiseSpec, sensors: Optional[SensorSet] = None) -> MeasurementSet:
    """Add synthetic noise to clean sensor readings.

    The draw depends only on ``spec`` (model, sigma, distribution,
    seed) and the sample length, so repeated calls are bit-identical.
    """
    clean = np.asarray(clean, dtype=float)
    if sensors is not None and sensors.n != clean.size:
        raise ValueError("clean data length does not match the sensor count")
    e = draw_noise(spec, clean.size)
    return MeasurementSet(clean + e, clean.copy(), spec, sensors)


def write_measurements(path, ms: MeasurementSet) -> None:
    """Write a measurement set as CSV.

    Comment lines record n, sigma, seed, and the noise model; data
    columns are index, the sensor coordinates, clean, and noisy.
    """
    if ms.sensors is None:
        raise ValueError("measurement set has no sensor locations to serialize")
    coords = ms.sensors.points
    with open(path, "w", newline="") as fh:
        fh.write(f"# n={ms.n} sigma={ms.spec.sigma!r} seed={ms.spec.seed} "
                 f"model={ms.spec.model} distribution={ms.spec.distribution}\n")
        fh.write(f"# layout={ms.sensors.layout} dim={ms.sensors.dim}\n")
        writer = csv.writer(fh)
        writer.writerow(["index"] + [f"x{j}" for j in range(coords.shape[1])] + ["clean", "noisy"])
        for i in range(ms.n):
            writer.writerow(
                [i]
                + [repr(float(c)) for c in coords[i]]
                + [repr(float(ms.clean[i])), repr(float(ms.values[i]))]
            )


def read_measurements(path) -> MeasurementSet:
    """Read a measurement set written by ``write_measurements``."""
    meta = {}
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                for tok in line[1:].split():
                    if "=" in tok:
                        k, v = tok.split("=", 1)
                        meta[k] = v
                continue
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    ncoord = sum(1 for c in header if c.startswith("x"))
    data = np.array([[float(v) for v in row[1:]] for row in reader])
    coords = data[:, :ncoord]
    clean, noisy = data[:, ncoord], data[:, ncoord + 1]
    spec = NoiseSpec(
        model=meta.get("model", "Y1"),
        sigma=float(meta.get("sigma", "0")),
        distribution=meta.get("distribution", "gaussian"),
        seed=int(meta.get("seed", "0")),
    )
    tree_pts = coords if ncoord > 0 else None
    sensors = None
    if tree_pts is not None:
        d_min, d_max = (1.0, 1.0) if len(coords) == 1 else _mesh_quantities(coords)
        sensors = SensorSet(
            int(meta.get("dim", ncoord)), coords, meta.get("layout", "from-file"),
            None, 0.0, float(d_min), float(d_max),
        )
    return MeasurementSet(noisy, clean, spec, sensors)
