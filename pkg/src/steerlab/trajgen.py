"""Reference trajectories and training data.

Generators for the straight / sinusoidal / spiral shapes, chord-equidistant
resampling (waypoints sit exactly one vehicle step apart, so a perfectly
tracking vehicle hops waypoint to waypoint), the bundled closed validation
circuit, randomized pose sampling, and the expert-labeled datasets.
"""

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import brentq

from . import kernels
from .mpc import MpcConfig, MpcInput, mpc_solve
from .vehicle import VehicleParams, VehicleState

NEAREST_WINDOW = 50  # forward search width of nearest_ref_index


@dataclass
class RefTrajectory:
    points: np.ndarray    # (M, 2) world frame
    headings: np.ndarray  # (M,) chord direction to the next point
    spacing: float
    closed: bool = False

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=float)
        self.headings = np.ascontiguousarray(self.headings, dtype=float)

    def __len__(self) -> int:
        return self.points.shape[0]

    def last_usable_index(self, horizon: int) -> int:
        return len(self) - horizon - 1

    def refs_for(self, k: int, horizon: int) -> np.ndarray:
        """Reference points for steps k+1 .. k+horizon."""
        return self.points[k + 1 : k + 1 + horizon]

    def tiled(self, copies: int) -> "RefTrajectory":
        """Unroll a closed track into `copies` laps laid out as one open
        trajectory (the seam chord equals the spacing by construction)."""
        if not self.closed:
            raise ValueError("only closed trajectories can be tiled")
        pts = np.concatenate([self.points] * copies, axis=0)
        heads = np.concatenate([self.headings] * copies, axis=0)
        return RefTrajectory(pts, heads, self.spacing, closed=False)


def _headings_from_points(points: np.ndarray, closed: bool) -> np.ndarray:
    d = np.diff(points, axis=0)
    h = np.arctan2(d[:, 1], d[:, 0])
    if closed:
        seam = math.atan2(points[0, 1] - points[-1, 1], points[0, 0] - points[-1, 0])
        return np.concatenate([h, [seam]])
    return np.concatenate([h, h[-1:]])


def _chord_resample(dense: np.ndarray, spacing: float) -> np.ndarray:
    """Place points along the polyline `dense` so that consecutive placed
    points are exactly `spacing` apart in Euclidean (chord) distance."""
    out = [dense[0].copy()]
    c = dense[0].copy()
    i = 0
    a = dense[0].copy()
    while i < len(dense) - 1:
        b = dense[i + 1]
        e = b - a
        f = a - c
        qa = e @ e
        qb = 2.0 * (f @ e)
        qc = f @ f - spacing * spacing
        disc = qb * qb - 4.0 * qa * qc
        t = -1.0
        if qa > 0.0 and disc >= 0.0:
            t = (-qb + math.sqrt(disc)) / (2.0 * qa)
        if 0.0 <= t <= 1.0:
            c = a + t * e
            out.append(c.copy())
            a = c.copy()  # keep walking the remainder of this segment
        else:
            a = b.copy()
            i += 1
    return np.array(out)


def _polyline_arclength(dense: np.ndarray) -> float:
    return float(np.sum(np.linalg.norm(np.diff(dense, axis=0), axis=1)))


def _walk_chords_closed(dense_closed: np.ndarray, spacing: float, n: int):
    """Walk n chords of length `spacing` around a closed polyline (given
    without its start repeated). Returns (placed points, arc position of
    the last placed point along the polyline)."""
    poly = np.concatenate([dense_closed, dense_closed[:2]], axis=0)
    seg_len = np.linalg.norm(np.diff(poly, axis=0), axis=1)
    arc0 = np.concatenate([[0.0], np.cumsum(seg_len)])
    out = [poly[0].copy()]
    c = poly[0].copy()
    a = poly[0].copy()
    i = 0
    end_arc = 0.0
    while len(out) <= n and i < len(poly) - 1:
        b = poly[i + 1]
        e = b - a
        f = a - c
        qa = e @ e
        qb = 2.0 * (f @ e)
        qc = f @ f - spacing * spacing
        disc = qb * qb - 4.0 * qa * qc
        t = -1.0
        if qa > 0.0 and disc >= 0.0:
            t = (-qb + math.sqrt(disc)) / (2.0 * qa)
        if 0.0 <= t <= 1.0:
            c = a + t * e
            out.append(c.copy())
            a = c.copy()
            # placed points lie on segment i, so their arc position is the
            # segment start plus the in-segment distance
            end_arc = arc0[i] + float(np.linalg.norm(c - poly[i]))
        else:
            a = b.copy()
            i += 1
    return np.array(out), end_arc


def _close_uniform(dense_closed: np.ndarray, spacing: float) -> np.ndarray:
    """Rescale a closed dense polyline so that a whole number of exact
    chords fits around it, then return the placed points (one lap, no
    repeat of the start; the seam chord equals the spacing too)."""
    length = _polyline_arclength(np.concatenate([dense_closed, dense_closed[:1]]))
    n = int(round(length / spacing))
    center = dense_closed.mean(axis=0)

    def miss(scale: float) -> float:
        pts = center + scale * (dense_closed - center)
        placed, end_arc = _walk_chords_closed(pts, spacing, n)
        if len(placed) < n + 1:
            return spacing  # ran out of polyline: loop too short for n chords
        return end_arc - scale * length

    lo = 1.0 - 2.0 * spacing / length
    hi = 1.0 + 2.0 * spacing / length
    scale = brentq(miss, lo, hi, xtol=1e-14, rtol=8.9e-16)
    pts = center + scale * (dense_closed - center)
    placed, _ = _walk_chords_closed(pts, spacing, n)
    return placed[:n]


def gen_straight(length: float, spacing: float) -> RefTrajectory:
    """Straight reference along the x-axis."""
    if length < spacing:
        raise ValueError("length must be at least one spacing")
    n = int(math.floor(length / spacing)) + 1
    pts = np.zeros((n, 2))
    pts[:, 0] = np.arange(n) * spacing
    return RefTrajectory(pts, np.zeros(n), spacing)


def _check_curvature(kappa_max: float, params: VehicleParams, what: str) -> None:
    if kappa_max >= params.max_curvature:
        raise ValueError(
            f"{what}: peak curvature {kappa_max:.3f} 1/m exceeds the vehicle's "
            f"{params.max_curvature:.3f} 1/m at the steering bound"
        )


def gen_sine(
    amplitude: float,
    omega: float,
    length: float,
    spacing: float,
    params: VehicleParams | None = None,
) -> RefTrajectory:
    """Sinusoid y = A*sin(omega*x), resampled to uniform chord spacing."""
    params = params or VehicleParams()
    _check_curvature(amplitude * omega * omega, params, "sine")
    if amplitude == 0.0:
        return gen_straight(length, spacing)
    dx = min(spacing / 50.0, 0.005)
    xs = np.arange(0.0, length + dx, dx)
    dense = np.stack([xs, amplitude * np.sin(omega * xs)], axis=1)
    pts = _chord_resample(dense, spacing)
    return RefTrajectory(pts, _headings_from_points(pts, closed=False), spacing)


def gen_spiral(
    a: float,
    b: float,
    turns: float,
    spacing: float,
    params: VehicleParams | None = None,
) -> RefTrajectory:
    """Archimedean spiral r = a + b*phi, resampled to uniform chord spacing."""
    params = params or VehicleParams()
    # curvature of r = a + b*phi peaks at the innermost point
    kappa0 = (a * a + 2.0 * b * b) / (a * a + b * b) ** 1.5
    _check_curvature(kappa0, params, "spiral")
    phi_end = 2.0 * math.pi * turns
    dphi = min(spacing / 50.0, 0.005) / max(a, 1.0)
    phis = np.arange(0.0, phi_end + dphi, dphi)
    r = a + b * phis
    dense = np.stack([r * np.cos(phis), r * np.sin(phis)], axis=1)
    pts = _chord_resample(dense, spacing)
    return RefTrajectory(pts, _headings_from_points(pts, closed=False), spacing)


def _circuit_dense(params: VehicleParams) -> np.ndarray:
    """Dense centerline of the bundled validation circuit: a rounded
    rectangle whose bottom straight carries a double-S chicane, so the lap
    mixes straights with left and right arcs. All radii keep a >4x margin
    to the vehicle's curvature limit."""
    r_corner = 2.5
    r_chicane = 2.0
    phi = math.radians(40.0)
    top = 20.0
    side = 6.0
    mid = 2.0
    lead = (top - 4.0 * r_chicane * math.sin(phi) - mid) / 2.0

    segs = [
        ("s", lead),
        ("a", -phi, r_chicane),
        ("a", phi, r_chicane),
        ("s", mid),
        ("a", phi, r_chicane),
        ("a", -phi, r_chicane),
        ("s", lead),
        ("a", math.pi / 2, r_corner),
        ("s", side),
        ("a", math.pi / 2, r_corner),
        ("s", top),
        ("a", math.pi / 2, r_corner),
        ("s", side),
        ("a", math.pi / 2, r_corner),
    ]
    ds = 0.002
    pts = [np.zeros(2)]
    pos = np.zeros(2)
    heading = 0.0
    for seg in segs:
        if seg[0] == "s":
            length = seg[1]
            m = max(2, int(math.ceil(length / ds)))
            step = length / m
            direction = np.array([math.cos(heading), math.sin(heading)])
            for _ in range(m):
                pos = pos + step * direction
                pts.append(pos.copy())
        else:
            ang, radius = seg[1], seg[2]
            m = max(2, int(math.ceil(abs(ang) * radius / ds)))
            dang = ang / m
            sign = 1.0 if ang > 0 else -1.0
            center = pos + radius * np.array(
                [-math.sin(heading) * sign, math.cos(heading) * sign]
            )
            for _ in range(m):
                heading += dang
                pos = center - radius * np.array(
                    [-math.sin(heading) * sign, math.cos(heading) * sign]
                )
                pts.append(pos.copy())
    dense = np.array(pts)
    return dense[:-1]  # the last point closes onto the start


def build_validation_track(params: VehicleParams | None = None) -> RefTrajectory:
    """The bundled closed validation circuit at waypoint spacing v*dt."""
    params = params or VehicleParams()
    dense = _circuit_dense(params)
    pts = _close_uniform(dense, params.spacing)
    return RefTrajectory(
        pts, _headings_from_points(pts, closed=True), params.spacing, closed=True
    )


def nearest_ref_index(
    traj: RefTrajectory,
    pos,
    prev_index: int,
    horizon: int = 20,
    window: int = NEAREST_WINDOW,
) -> int:
    """Closest waypoint index within `window` points ahead of prev_index;
    nondecreasing across consecutive calls and saturating at the last index
    that still leaves a full horizon of reference points."""
    last = traj.last_usable_index(horizon)
    if prev_index < 0 or prev_index > last:
        raise ValueError("prev_index outside the usable waypoint range")
    p = np.asarray(pos, dtype=float)
    return int(kernels.nearest_index(traj.points, p[0], p[1], prev_index, window, last))


# --- datasets ---------------------------------------------------------------

TRAJECTORY_KINDS = ("straight", "sine_lo", "sine_hi", "spiral")
DATASET_KINDS = {
    1: ("straight",),
    2: ("straight", "sine_lo", "sine_hi"),
    3: ("straight", "sine_lo", "sine_hi", "spiral"),
}


@dataclass(frozen=True)
class DatasetSpec:
    set_id: int
    samples: int = 50_000
    seed: int = 0
    lateral_range: float = 0.5        # +/- m, normal offset from the anchor
    heading_range: float = math.pi / 6  # +/- rad around the local tangent

    def __post_init__(self):
        if self.set_id not in DATASET_KINDS:
            raise ValueError("set_id must be 1, 2 or 3")
        if self.samples <= 0:
            raise ValueError("samples must be positive")


@dataclass
class Dataset:
    features: np.ndarray  # (S, d)
    labels: np.ndarray    # (S,) expert steering angles
    kind: str             # feature kind: i3 / i21 / i40

    def __len__(self) -> int:
        return self.labels.shape[0]


def trajectory_pool(params: VehicleParams, length: float = 30.0) -> dict:
    """The fixed base shapes the datasets sample poses from."""
    spacing = params.spacing
    return {
        "straight": gen_straight(length, spacing),
        "sine_lo": gen_sine(1.0, 0.5, length, spacing, params),
        "sine_hi": gen_sine(1.0, 1.0, length, spacing, params),
        "spiral": gen_spiral(1.0, 0.2, 2.0, spacing, params),
    }


def sample_initial_pose(
    traj: RefTrajectory,
    rng: np.random.Generator,
    lateral_range: float = 0.5,
    heading_range: float = math.pi / 6,
    horizon: int = 20,
) -> tuple[VehicleState, int]:
    """Random vehicle pose near the trajectory: a uniform anchor waypoint
    (leaving a full horizon ahead), a uniform lateral offset normal to the
    local tangent, and a uniform heading perturbation. Returns the pose and
    its anchor index."""
    hi = traj.last_usable_index(horizon)
    if hi < 0:
        raise ValueError("trajectory shorter than the horizon")
    anchor = int(rng.integers(0, hi + 1))
    lat = float(rng.uniform(-lateral_range, lateral_range)) if lateral_range > 0 else 0.0
    dth = float(rng.uniform(-heading_range, heading_range)) if heading_range > 0 else 0.0
    h = traj.headings[anchor]
    x = traj.points[anchor, 0] - lat * math.sin(h)
    y = traj.points[anchor, 1] + lat * math.cos(h)
    return VehicleState(x, y, h + dth), anchor


def build_dataset(
    spec: DatasetSpec,
    feature_kind: str,
    params: VehicleParams | None = None,
    cfg: MpcConfig | None = None,
) -> tuple[Dataset, dict]:
    """Expert-labeled training set: random poses on the set's trajectory
    shapes, features in the requested encoding, labels from the cold-start
    expert solve. Poses whose solve does not converge are skipped and
    resampled (counted in the returned info dict). Bit-reproducible from
    the spec's seed."""
    from .features import FEATURE_DIMS, build_features  # local: avoid cycle

    params = params or VehicleParams()
    cfg = cfg or MpcConfig(delta_max=params.delta_max)
    if feature_kind not in FEATURE_DIMS:
        raise ValueError(f"unknown feature kind {feature_kind!r}")
    pool = trajectory_pool(params)
    kinds = DATASET_KINDS[spec.set_id]
    rng = np.random.default_rng(spec.seed)
    n = spec.samples
    feats = np.empty((n, FEATURE_DIMS[feature_kind]))
    labels = np.empty(n)
    provenance = []
    skipped = 0
    filled = 0
    while filled < n:
        kind = kinds[int(rng.integers(0, len(kinds)))]
        traj = pool[kind]
        state, anchor = sample_initial_pose(
            traj, rng, spec.lateral_range, spec.heading_range, cfg.horizon
        )
        k = nearest_ref_index(
            traj, (state.x, state.y), max(0, anchor - 10), cfg.horizon
        )
        res = mpc_solve(MpcInput(state, traj.refs_for(k, cfg.horizon)), cfg, params)
        if not res.converged:
            skipped += 1
            continue
        feats[filled] = build_features(feature_kind, state, traj, k, cfg.horizon)
        labels[filled] = res.u[0]
        provenance.append(kind)
        filled += 1
    info = {"skipped": skipped, "provenance": provenance}
    return Dataset(feats, labels, feature_kind), info


# --- file formats -----------------------------------------------------------


def save_dataset(dataset: Dataset, path) -> None:
    d = dataset.features.shape[1]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow([f"f{i}" for i in range(d)] + ["label"])
        for row, label in zip(dataset.features, dataset.labels):
            writer.writerow([format(v, ".17g") for v in row] + [format(label, ".17g")])


def load_dataset(path) -> Dataset:
    from .features import FEATURE_DIMS

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[-1] != "label" or not header[0].startswith("f"):
            raise ValueError(f"{path}: not a dataset file (header {header[:3]}...)")
        rows = [[float(v) for v in row] for row in reader]
    arr = np.array(rows)
    d = arr.shape[1] - 1
    by_dim = {dim: kind for kind, dim in FEATURE_DIMS.items()}
    if d not in by_dim:
        raise ValueError(f"{path}: {d} feature columns match no known input set")
    return Dataset(arr[:, :d], arr[:, d], by_dim[d])


def save_track(traj: RefTrajectory, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["x", "y"])
        for p in traj.points:
            writer.writerow([format(p[0], ".17g"), format(p[1], ".17g")])


def load_track(path, params: VehicleParams | None = None) -> RefTrajectory:
    """Read a track CSV (header x,y; meters). Waypoints are resampled to
    the vehicle's v*dt spacing unless they already carry it."""
    params = params or VehicleParams()
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if [h.strip() for h in header[:2]] != ["x", "y"]:
            raise ValueError(f"{path}: expected header 'x,y'")
        pts = np.array([[float(row[0]), float(row[1])] for row in reader])
    if pts.shape[0] < 2:
        raise ValueError(f"{path}: needs at least two waypoints")
    spacing = params.spacing
    closed = float(np.linalg.norm(pts[-1] - pts[0])) <= 1.5 * spacing
    gaps = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    if np.max(np.abs(gaps - spacing)) > 1e-6:
        pts = _close_uniform(pts, spacing) if closed else _chord_resample(pts, spacing)
    return RefTrajectory(pts, _headings_from_points(pts, closed), spacing, closed)
