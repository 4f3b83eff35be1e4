"""Slice a normalized cloud into profiles, fit cubic B-splines, resample.

The result is a profile matrix whose rows are slices (ordered by y) and
whose columns are a common grid of x positions.
"""

from __future__ import annotations

import hashlib
import logging
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.interpolate import BSpline

from .geometry import PointCloud

__all__ = [
    "RawProfile",
    "FunctionalCurve",
    "ProfileMatrix",
    "ProfileError",
    "FitError",
    "slice_into_profiles",
    "fit_functional_curve",
    "default_knot_count",
    "align_domains",
    "columns_for",
    "resample_to_matrix",
    "build_profile_matrix",
    "cloud_fingerprint",
]

log = logging.getLogger(__name__)

DEGREE = 3


class ProfileError(ValueError):
    pass


class FitError(ProfileError):
    pass


@dataclass(frozen=True, eq=False)
class RawProfile:
    slab_index: int
    y_center: float
    points: np.ndarray  # (k, 2) projected (x, z)
    indices: np.ndarray  # original point indices

    @property
    def length(self):
        return float(np.ptp(self.points[:, 0])) if len(self.points) else 0.0


@dataclass(frozen=True, eq=False)
class FunctionalCurve:
    knots: np.ndarray
    coefficients: np.ndarray
    domain: tuple
    rms: float = 0.0
    degree: int = DEGREE

    def __call__(self, x):
        return BSpline(self.knots, self.coefficients, self.degree, extrapolate=False)(x)


@dataclass(frozen=True, eq=False)
class ProfileMatrix:
    """``n x p`` matrix of resampled profiles with its coordinate grids.

    ``point_row`` maps every point of the source cloud to its row, or -1
    when the point's slice was dropped.  ``source`` fingerprints that cloud.
    """

    values: np.ndarray
    row_y: np.ndarray
    col_x: np.ndarray
    point_row: np.ndarray | None = None
    source: str | None = None
    report: dict = field(default_factory=dict)

    def __post_init__(self):
        v = np.asarray(self.values, dtype=float)
        if v.ndim != 2 or v.shape != (len(self.row_y), len(self.col_x)):
            raise ValueError("values shape must be (len(row_y), len(col_x))")
        if not np.all(np.isfinite(v)):
            raise ValueError("profile matrix has non-finite entries")
        if len(self.col_x) > 1 and np.any(np.diff(self.col_x) <= 0):
            raise ValueError("col_x must be strictly increasing")
        if len(self.row_y) > 1 and np.any(np.diff(self.row_y) < 0):
            raise ValueError("rows must be ordered by row_y")

    @property
    def shape(self):
        return self.values.shape

    def dump_csv(self, path):
        """Write the matrix as CSV plus ``<path>.grid.csv`` with the row/column grids."""
        np.savetxt(path, self.values, delimiter=",", fmt="%.17g")
        with open(str(path) + ".grid.csv", "w") as fh:
            fh.write("axis,index,value\n")
            for i, y in enumerate(self.row_y):
                fh.write(f"row_y,{i},{y!r}\n")
            for j, x in enumerate(self.col_x):
                fh.write(f"col_x,{j},{x!r}\n")


def cloud_fingerprint(cloud):
    pts = np.ascontiguousarray(cloud.points)
    return f"{len(pts)}:" + hashlib.sha1(pts.tobytes()).hexdigest()[:16]


def slice_into_profiles(cloud, m_prime=100, l_norm=0.8):
    """Cut the y range into ``m_prime`` equal slabs and project each onto xz.

    Slabs whose x extent is below ``l_norm`` are discarded.  Returns the
    surviving profiles and the list of dropped slab indices.
    """
    if m_prime < 2:
        raise ValueError("m_prime must be at least 2")
    if not 0 <= l_norm <= 1:
        raise ValueError("l_norm must lie in [0, 1]")
    pts = cloud.points
    if len(pts) == 0:
        raise ProfileError("empty cloud")
    y0, y1 = float(pts[:, 1].min()), float(pts[:, 1].max())
    t = (y1 - y0) / m_prime
    if t <= 0:
        raise ProfileError("cloud has no extent along the slicing axis")
    slab = np.clip(np.floor((pts[:, 1] - y0) / t).astype(np.intp), 0, m_prime - 1)
    order = np.argsort(slab, kind="stable")
    starts = np.searchsorted(slab[order], np.arange(m_prime + 1))
    profiles, dropped = [], []
    for k in range(m_prime):
        idx = order[starts[k]:starts[k + 1]]
        if len(idx) == 0:
            dropped.append(k)
            continue
        prof = RawProfile(k, y0 + (k + 0.5) * t, pts[idx][:, [0, 2]], idx)
        if prof.length < l_norm:
            dropped.append(k)
        else:
            profiles.append(prof)
    if not profiles:
        raise ProfileError(f"part too short for l_norm={l_norm}: no profile survived")
    return profiles, dropped


def default_knot_count(num_points):
    return int(np.clip(num_points // 10, 8, 50))


def _second_difference(n):
    d = np.zeros((n - 2, n))
    i = np.arange(n - 2)
    d[i, i], d[i, i + 1], d[i, i + 2] = 1.0, -2.0, 1.0
    return d


def fit_functional_curve(profile, smoothing=0.0, n_knots=None):
    """Least-squares cubic B-spline ``z = f(x)`` with uniform interior knots.

    ``smoothing > 0`` adds a second-difference penalty on the coefficients.
    The domain is ``[min x, max x]`` of the profile's points.
    """
    pts = profile.points if isinstance(profile, RawProfile) else np.asarray(profile, dtype=float)
    if len(pts) < 8 or len(np.unique(pts[:, 0])) < 5:
        raise FitError(f"profile needs >= 8 points with >= 5 distinct x, got {len(pts)}")
    order = np.argsort(pts[:, 0], kind="stable")
    x, z = pts[order, 0], pts[order, 1]
    lo, hi = float(x[0]), float(x[-1])
    k = default_knot_count(len(x)) if n_knots is None else int(n_knots)
    interior = np.linspace(lo, hi, k + 2)[1:-1]
    knots = np.concatenate([[lo] * (DEGREE + 1), interior, [hi] * (DEGREE + 1)])
    ncoef = len(knots) - DEGREE - 1
    basis = BSpline.design_matrix(x, knots, DEGREE).toarray()
    lhs, rhs = basis, z
    if smoothing > 0:
        lhs = np.vstack([basis, np.sqrt(smoothing) * _second_difference(ncoef)])
        rhs = np.concatenate([z, np.zeros(ncoef - 2)])
    coef, _, rank, sv = np.linalg.lstsq(lhs, rhs, rcond=None)
    if rank < ncoef or sv[-1] <= 1e-10 * sv[0]:
        raise FitError(f"rank-deficient spline fit ({rank} of {ncoef} coefficients determined)")
    rms = float(np.sqrt(np.mean((basis @ coef - z) ** 2)))
    return FunctionalCurve(knots, coef, (lo, hi), rms)


def align_domains(curves):
    """Common domain ``(max of lower bounds, min of upper bounds)``."""
    if not curves:
        raise ProfileError("no curves to align")
    d0 = max(c.domain[0] for c in curves)
    d1 = min(c.domain[1] for c in curves)
    if d0 >= d1:
        raise ProfileError(f"no common domain: [{d0:g}, {d1:g}] is empty; l_norm is too lax")
    return d0, d1


def columns_for(ratio):
    """Resample count: 50 columns per unit of bounding-box aspect ratio."""
    return max(int(round(ratio * 50)), 2)


def resample_to_matrix(curves, d0, d1, p, row_y=None):
    """Evaluate every curve at ``p`` uniform points on ``[d0, d1]``.

    Rows come out sorted by ``row_y`` (defaults to curve order).
    """
    if p < 2:
        raise ValueError("p must be at least 2")
    col_x = np.linspace(d0, d1, p)
    row_y = np.arange(len(curves), dtype=float) if row_y is None else np.asarray(row_y, dtype=float)
    order = np.argsort(row_y, kind="stable")
    values = np.empty((len(curves), p))
    for out, i in enumerate(order):
        c = curves[i]
        if c.domain[0] > d0 or c.domain[1] < d1:
            raise ProfileError(f"curve {i} does not cover [{d0:g}, {d1:g}]")
        v = c(col_x)
        if not np.all(np.isfinite(v)):
            raise ProfileError(f"curve {i} evaluates to non-finite values")
        values[out] = v
    return ProfileMatrix(values, row_y[order], col_x)


def build_profile_matrix(cloud, m_prime=100, l_norm=0.8, p=None, smoothing=0.0):
    """Run slicing, fitting, domain alignment and resampling on a normalized cloud."""
    profiles, dropped = slice_into_profiles(cloud, m_prime, l_norm)
    curves, kept, failed = [], [], []
    for prof in profiles:
        try:
            curves.append(fit_functional_curve(prof, smoothing))
            kept.append(prof)
        except FitError as exc:
            warnings.warn(f"dropping slab {prof.slab_index}: {exc}", stacklevel=2)
            failed.append(prof.slab_index)
    if not curves:
        raise ProfileError("every profile failed to fit")
    d0, d1 = align_domains(curves)
    if p is None:
        p = columns_for(cloud.bbox.aspect_ratio())
    mat = resample_to_matrix(curves, d0, d1, p, [pr.y_center for pr in kept])
    point_row = np.full(len(cloud), -1, dtype=np.intp)
    order = np.argsort([pr.y_center for pr in kept], kind="stable")
    for row, i in enumerate(order):
        point_row[kept[i].indices] = row
    report = {
        "m_prime": m_prime,
        "l_norm": l_norm,
        "slab_width": float(np.ptp(cloud.points[:, 1]) / m_prime),
        "rows": len(kept),
        "columns": int(p),
        "domain": [d0, d1],
        "dropped_short_slabs": dropped,
        "dropped_fit_failures": failed,
        "fit_rms": [float(curves[i].rms) for i in order],
        "slab_index": [int(kept[i].slab_index) for i in order],
    }
    log.debug("profile matrix %d x %d over [%g, %g]", len(kept), p, d0, d1)
    return ProfileMatrix(mat.values, mat.row_y, mat.col_x, point_row, cloud_fingerprint(cloud), report)
