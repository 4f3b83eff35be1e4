"""Synthetic axisymmetric parts with planted hole and scratch anomalies.

Parts are surfaces of revolution about the x axis.  A point at axial
position ``x``, radius ``r`` and angle ``phi`` sits at
``(x, r cos phi, r sin phi)``, so z is the height seen by a scanner looking
down the z axis.  Anomalies are applied by displacing sampled points, which
gives exact per-point ground truth.
"""

from __future__ import annotations

import csv
import os
from dataclasses import asdict, dataclass, field

import numpy as np

from .geometry import PointCloud, save_point_cloud

__all__ = [
    "PartSpec",
    "AnomalySpec",
    "NoiseSpec",
    "PRESETS",
    "PRESET_CLUSTERS",
    "HOLE_RANGES",
    "SCRATCH_RANGES",
    "generate_part",
    "inject_anomaly",
    "add_noise",
    "sample_anomaly",
    "generate_sample",
    "generate_corpus",
    "read_manifest",
]

SEGMENT_KINDS = ("step", "cone", "fillet")

HOLE_RANGES = {"depth": (0.9, 1.1), "radius": (0.2, 0.5)}
SCRATCH_RANGES = {"length": (0.6, 1.2), "width": (0.5, 1.1), "height": (0.1, 0.2)}


@dataclass(frozen=True)
class PartSpec:
    """Generatrix of a revolved part.

    ``breakpoints`` holds ``(axial, radius)`` pairs.  Segment ``i`` joins
    breakpoint ``i`` to ``i + 1``:

    * ``step``   constant radius ``r_i`` then a flat shoulder at ``x_{i+1}``
    * ``cone``   straight line between the two radii
    * ``fillet`` half-cosine blend between the two radii

    ``bbox_target`` is the box of the single-view scan; its z edge sets how
    far below the top of the widest section the scan reaches.
    """

    breakpoints: tuple
    segments: tuple
    bbox_target: tuple | None = None
    thread: tuple | None = None  # (pitch, depth, x_start, x_end)
    name: str = "custom"

    def __post_init__(self):
        bp = np.asarray(self.breakpoints, dtype=float)
        if bp.ndim != 2 or bp.shape[1] != 2 or len(bp) < 2:
            raise ValueError("generatrix needs at least two (axial, radius) breakpoints")
        if np.any(np.diff(bp[:, 0]) <= 0):
            raise ValueError("breakpoint axial positions must be strictly increasing")
        if np.any(bp[:, 1] <= 0):
            raise ValueError("radii must be positive")
        if len(self.segments) != len(bp) - 1:
            raise ValueError("need exactly one segment type per consecutive breakpoint pair")
        bad = [s for s in self.segments if s not in SEGMENT_KINDS]
        if bad:
            raise ValueError(f"unknown segment types {bad}")
        if self.thread is not None:
            pitch, depth, x0, x1 = self.thread
            if pitch <= 0 or depth < 0 or x1 <= x0:
                raise ValueError("thread needs pitch > 0, depth >= 0 and x_start < x_end")

    @property
    def axial(self):
        return np.array([b[0] for b in self.breakpoints], dtype=float)

    @property
    def max_radius(self):
        return float(max(b[1] for b in self.breakpoints))

    @property
    def z_min(self):
        """Lowest height seen by the single-view scan."""
        if self.bbox_target is None:
            return 0.0
        return self.max_radius - float(self.bbox_target[2])

    def radius_at(self, x):
        """Radius and dr/dx of the lateral surface at axial positions ``x``."""
        x = np.asarray(x, dtype=float)
        bp = np.asarray(self.breakpoints, dtype=float)
        seg = np.clip(np.searchsorted(bp[:, 0], x, side="right") - 1, 0, len(bp) - 2)
        x0, r0 = bp[seg, 0], bp[seg, 1]
        x1, r1 = bp[seg + 1, 0], bp[seg + 1, 1]
        u = np.clip((x - x0) / (x1 - x0), 0.0, 1.0)
        kinds = np.asarray(self.segments)[seg]
        r = np.where(kinds == "step", r0, r0 + (r1 - r0) * u)
        slope = np.where(kinds == "step", 0.0, (r1 - r0) / (x1 - x0))
        fil = kinds == "fillet"
        if np.any(fil):
            w = 0.5 * (1 - np.cos(np.pi * u))
            dw = 0.5 * np.pi * np.sin(np.pi * u) / (x1 - x0)
            r = np.where(fil, r0 + (r1 - r0) * w, r)
            slope = np.where(fil, (r1 - r0) * dw, slope)
        return r, slope

    def meridian(self, fillet_pieces=64):
        """Polyline ``[(x, r), ...]`` of the generatrix including shoulders."""
        bp = [tuple(map(float, b)) for b in self.breakpoints]
        out = [bp[0]]
        for (x0, r0), (x1, r1), kind in zip(bp[:-1], bp[1:], self.segments):
            if kind == "step":
                out.append((x1, r0))
                if r1 != r0:
                    out.append((x1, r1))
            elif kind == "cone":
                out.append((x1, r1))
            else:
                u = np.linspace(0, 1, fillet_pieces + 1)[1:]
                out.extend(zip(x0 + (x1 - x0) * u, r0 + (r1 - r0) * 0.5 * (1 - np.cos(np.pi * u))))
        return np.asarray(out, dtype=float)

    def thread_offset(self, x, phi):
        """Inward radial offset of the helical thread (triangular profile)."""
        if self.thread is None:
            return np.zeros(np.shape(x))
        pitch, depth, x0, x1 = self.thread
        u = np.mod((x - x0) / pitch - phi / (2 * np.pi), 1.0)
        tri = 2.0 * np.minimum(u, 1.0 - u)
        inside = (x >= x0) & (x <= x1)
        return np.where(inside, depth * tri, 0.0)


@dataclass(frozen=True)
class AnomalySpec:
    """A hole (cone dimple) or scratch (raised flat patch).

    ``axial`` and ``angle`` anchor the defect on the surface; ``orientation``
    rotates a scratch away from the axial direction.  Dimensions are in
    model units.
    """

    kind: str
    axial: float
    angle: float = np.pi / 2
    depth: float = 1.0
    radius: float = 0.35
    length: float = 0.9
    width: float = 0.8
    height: float = 0.15
    orientation: float = 0.0

    def __post_init__(self):
        if self.kind not in ("hole", "scratch"):
            raise ValueError(f"anomaly kind must be 'hole' or 'scratch', got {self.kind!r}")
        dims = (self.depth, self.radius) if self.kind == "hole" else (self.length, self.width, self.height)
        if min(dims) < 0:
            raise ValueError("anomaly dimensions must be non-negative")

    @property
    def reach(self):
        """In-surface distance from the anchor to the farthest affected point."""
        if self.kind == "hole":
            return self.radius
        return 0.5 * float(np.hypot(self.length, self.width))

    def params(self):
        if self.kind == "hole":
            return {"depth": self.depth, "radius": self.radius}
        return {"length": self.length, "width": self.width, "height": self.height,
                "orientation": self.orientation}


@dataclass(frozen=True)
class NoiseSpec:
    sigma: tuple = (0.001, 0.001, 0.001)  # a scalar applies to all three axes
    seed: int = 0

    def __post_init__(self):
        if np.any(np.asarray(self.sigma, dtype=float) < 0):
            raise ValueError("noise sigma must be non-negative")


def _part_from_box(bbox, axial, radii, segments, thread=None, name="custom"):
    # choose the head radius so the single-view box hits both the y and z edges:
    # y/2 = sqrt(R^2 - z_min^2) and z = R - z_min
    y, z = bbox[1], bbox[2]
    head = 0.5 * (y * y / (4 * z) + z)
    radii = [head if r is None else r for r in radii]
    return PartSpec(tuple(zip(axial, radii)), tuple(segments), tuple(bbox), thread, name)


PRESETS = {
    # two cylinders joined by a shoulder
    "part1": _part_from_box((12.8, 10.0, 5.1), (0.0, 6.0, 12.8), (None, 3.5, 3.5),
                            ("step", "step"), name="part1"),
    # wide head, shoulder, plain shank
    "part2": _part_from_box((12.8, 8.0, 3.4), (0.0, 5.2, 12.8), (None, 2.9, 2.9),
                            ("step", "step"), name="part2"),
    # bolt: head, plain shank, threaded section, chamfered tip
    "part3": _part_from_box((28.5, 8.8, 3.6), (0.0, 5.0, 14.0, 27.3, 28.5),
                            (None, 3.0, 3.0, 3.0, 2.4), ("step", "cone", "cone", "cone"),
                            thread=(1.0, 0.15, 14.0, 27.3), name="part3"),
}

PRESET_CLUSTERS = {"part1": 2, "part2": 2, "part3": 4}


def _sample_lateral(meridian, n, rng):
    """Area-uniform samples ``(x, r)`` on the revolved polyline."""
    xa, ra = meridian[:-1, 0], meridian[:-1, 1]
    xb, rb = meridian[1:, 0], meridian[1:, 1]
    slant = np.hypot(xb - xa, rb - ra)
    area = np.pi * (ra + rb) * slant
    piece = rng.choice(len(area), size=n, p=area / area.sum())
    a, b = ra[piece], rb[piece]
    v = rng.random(n)
    # density along the piece proportional to r(t) = a + (b - a) t
    lin = np.abs(b - a) > 1e-12 * np.maximum(a, b)
    t = v.copy()
    aa, bb = a[lin], b[lin]
    t[lin] = (np.sqrt(aa * aa + v[lin] * (bb * bb - aa * aa)) - aa) / (bb - aa)
    x = xa[piece] + (xb[piece] - xa[piece]) * t
    r = a + (b - a) * t
    lateral = xb[piece] != xa[piece]
    return x, r, lateral


def generate_part(spec, num_points=100_000, seed=0, scan_mode="full"):
    """Sample ``num_points`` points uniformly by area on the part surface.

    ``scan_mode='full'`` samples the whole revolution; ``'single_view'``
    keeps only the surface with ``z >= spec.z_min``, like a scan taken from
    above (the corpus uses this).
    End faces are not sampled.
    """
    if num_points < 1000:
        raise ValueError("num_points must be at least 1000")
    if scan_mode not in ("single_view", "full"):
        raise ValueError(f"unknown scan_mode {scan_mode!r}")
    rng = np.random.default_rng(seed)
    meridian = spec.meridian()
    z_min = spec.z_min if scan_mode == "single_view" else -np.inf
    chunks, have = [], 0
    while have < num_points:
        batch = max(2 * (num_points - have), 1000)
        x, r, lateral = _sample_lateral(meridian, batch, rng)
        phi = rng.uniform(0.0, 2 * np.pi, batch)
        r = r - np.where(lateral, spec.thread_offset(x, phi), 0.0)
        y, z = r * np.cos(phi), r * np.sin(phi)
        keep = z >= z_min
        chunks.append(np.column_stack([x, y, z])[keep])
        have += int(keep.sum())
    pts = np.concatenate(chunks)[:num_points]
    meta = {"part": spec, "scan_mode": scan_mode, "seed": seed}
    return PointCloud(pts, np.zeros(len(pts), dtype=np.uint8), meta=meta)


def _surface_frame(spec, x, phi):
    """Outward unit normal, meridian tangent and hoop tangent at (x, phi)."""
    _, slope = spec.radius_at(x)
    c, s = np.cos(phi), np.sin(phi)
    norm = np.sqrt(1 + slope * slope)
    normal = np.stack([-slope, c, s], axis=-1) / norm[..., None]
    merid = np.stack([np.ones_like(c), slope * c, slope * s], axis=-1) / norm[..., None]
    hoop = np.stack([np.zeros_like(c), -s, c], axis=-1)
    return normal, merid, hoop


def _check_anchor(spec, anomaly):
    d = np.min(np.abs(spec.axial - anomaly.axial))
    if d < anomaly.reach:
        raise ValueError(
            f"anomaly anchor at x={anomaly.axial:g} is {d:.3g} from a generatrix breakpoint; "
            f"needs at least {anomaly.reach:.3g}"
        )


def inject_anomaly(cloud, anomaly, part=None):
    """Displace the points covered by ``anomaly`` and label them 1.

    Holes push points inward along their own normal by
    ``depth * (1 - rho / radius)`` where ``rho`` is the in-surface distance
    to the anchor.  Scratches move every point in the ``length x width``
    patch onto the plane lying ``height`` above the tangent plane at the
    anchor.
    """
    part = part if part is not None else cloud.meta.get("part")
    if part is None:
        raise ValueError("inject_anomaly needs the PartSpec (pass part= or use generate_part output)")
    _check_anchor(part, anomaly)
    pts = np.array(cloud.points)
    labels = np.zeros(len(pts), dtype=np.uint8) if cloud.labels is None else np.array(cloud.labels)

    x, phi = pts[:, 0], np.arctan2(pts[:, 2], pts[:, 1])
    r_a, slope_a = (float(v) for v in part.radius_at(anomaly.axial))
    du = (x - anomaly.axial) * np.sqrt(1 + slope_a * slope_a)
    dphi = np.angle(np.exp(1j * (phi - anomaly.angle)))
    dv = r_a * dphi

    if anomaly.kind == "hole":
        rho = np.hypot(du, dv)
        hit = rho < anomaly.radius
        if np.any(hit):
            normal, _, _ = _surface_frame(part, x[hit], phi[hit])
            amount = anomaly.depth * (1 - rho[hit] / anomaly.radius)
            pts[hit] -= normal * amount[:, None]
    else:
        co, si = np.cos(anomaly.orientation), np.sin(anomaly.orientation)
        along = du * co + dv * si
        across = -du * si + dv * co
        hit = (np.abs(along) <= anomaly.length / 2) & (np.abs(across) <= anomaly.width / 2)
        # keep to the near side of the part
        hit &= np.abs(dphi) < np.pi / 2
        if anomaly.height <= 0 or anomaly.length <= 0 or anomaly.width <= 0:
            hit[:] = False
        if np.any(hit):
            anchor_r = r_a - float(part.thread_offset(np.array(anomaly.axial), np.array(anomaly.angle)))
            a = np.array([anomaly.axial, anchor_r * np.cos(anomaly.angle), anchor_r * np.sin(anomaly.angle)])
            n_a, _, _ = _surface_frame(part, np.array(anomaly.axial), np.array(anomaly.angle))
            off = anomaly.height - (pts[hit] - a) @ n_a
            pts[hit] += off[:, None] * n_a
    labels[hit] = 1
    meta = dict(cloud.meta)
    meta["anomaly"] = anomaly
    return PointCloud(pts, labels, cloud.scores, meta)


def add_noise(cloud, spec=NoiseSpec()):
    """Independent Gaussian offsets per axis, reproducible from ``spec.seed``."""
    sigma = np.broadcast_to(np.asarray(spec.sigma, dtype=float), (3,))
    if not np.any(sigma > 0):
        return cloud
    rng = np.random.default_rng(spec.seed)
    noise = rng.standard_normal(cloud.points.shape) * sigma
    return cloud.with_points(cloud.points + noise)


def sample_anomaly(kind, part, rng, angle_span=0.5, clearance=0.5, midrange=False):
    """Draw an in-range anomaly on the upper side of ``part``.

    The anchor keeps ``reach + clearance`` away from every breakpoint and
    within ``angle_span`` radians of the top of the part.  ``midrange``
    fixes the dimensions at the middle of their ranges; the random draws
    are still made so the rng stream stays aligned with the default mode
    (the anchor only moves by the change in allowed axial range).
    """
    if kind not in ("hole", "scratch"):
        raise ValueError(f"unknown anomaly kind {kind!r}")
    ranges = HOLE_RANGES if kind == "hole" else SCRATCH_RANGES
    dims = {k: float(rng.uniform(*v)) for k, v in ranges.items()}
    if midrange:
        dims = {k: 0.5 * (lo + hi) for k, (lo, hi) in ranges.items()}
    extra = {"orientation": float(rng.uniform(0, np.pi))} if kind == "scratch" else {}
    probe = AnomalySpec(kind, 0.0, **dims, **extra)
    gap = probe.reach + clearance
    axial = part.axial
    lo, hi = axial[:-1] + gap, axial[1:] - gap
    width = np.clip(hi - lo, 0, None)
    if width.sum() <= 0:
        raise ValueError("part has no segment long enough for this anomaly")
    seg = rng.choice(len(width), p=width / width.sum())
    x = float(rng.uniform(lo[seg], hi[seg]))
    angle = float(np.pi / 2 + rng.uniform(-angle_span, angle_span))
    return AnomalySpec(kind, x, angle, **dims, **extra)


def generate_sample(preset, kind, seed, num_points=100_000, noise_sigma=0.001, anomaly=None,
                    midrange=False):
    """One labelled sample: part, one anomaly, Gaussian noise."""
    part = PRESETS[preset] if isinstance(preset, str) else preset
    ss = np.random.SeedSequence(seed)
    s_part, s_anom, s_noise = (int(c.generate_state(1)[0]) for c in ss.spawn(3))
    cloud = generate_part(part, num_points, seed=s_part, scan_mode="single_view")
    if anomaly is None:
        anomaly = sample_anomaly(kind, part, np.random.default_rng(s_anom), midrange=midrange)
    cloud = inject_anomaly(cloud, anomaly, part)
    return add_noise(cloud, NoiseSpec((noise_sigma,) * 3, s_noise))


MANIFEST_FIELDS = ["path", "preset", "kind", "seed", "axial", "angle", "depth", "radius",
                   "length", "width", "height", "orientation", "points", "labelled"]


def generate_corpus(out_dir, preset, per_type=10, seed=0, num_points=100_000, fmt="xyz",
                    kinds=("hole", "scratch")):
    """Write ``per_type`` samples per anomaly kind plus ``manifest.csv``.

    Returns the manifest records.
    """
    os.makedirs(out_dir, exist_ok=True)
    records = []
    for k_idx, kind in enumerate(kinds):
        for i in range(per_type):
            sample_seed = int(np.random.SeedSequence([seed, k_idx, i]).generate_state(1)[0])
            cloud = generate_sample(preset, kind, sample_seed, num_points)
            name = f"{preset}_{kind}_{i:03d}.{fmt}"
            save_point_cloud(cloud, os.path.join(out_dir, name), fmt)
            a = cloud.meta["anomaly"]
            rec = {"path": name, "preset": preset, "kind": kind, "seed": sample_seed,
                   "points": len(cloud), "labelled": int(cloud.labels.sum())}
            rec.update({k: v for k, v in asdict(a).items() if k != "kind"})
            if kind == "hole":
                for k in ("length", "width", "height", "orientation"):
                    rec[k] = ""
            else:
                for k in ("depth", "radius"):
                    rec[k] = ""
            records.append(rec)
    with open(os.path.join(out_dir, "manifest.csv"), "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=MANIFEST_FIELDS, lineterminator="\n")
        writer.writeheader()
        for rec in records:
            writer.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in rec.items()})
    return records


def read_manifest(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))
