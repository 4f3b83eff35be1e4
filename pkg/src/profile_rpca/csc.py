"""Component segmentation and cleaning of a profile matrix.

Columns of the profile matrix are clustered with fuzzy c-means into basic
components; column profiles flagged by a directional-outlyingness test are
then removed, but only near component boundaries.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "FcmResult",
    "Component",
    "ComponentSet",
    "SegmentationError",
    "kmeanspp_init",
    "fcm_memberships",
    "cluster_columns",
    "segment_components",
    "single_component",
    "directional_outlyingness",
    "remove_outlier_profiles",
    "clean_components",
    "default_margin",
]

log = logging.getLogger(__name__)

MAD_FLOOR = 1e-9
MAD_SCALE = 1.4826  # consistency factor for Gaussian data
MAX_REPAIRS = 5


class SegmentationError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class FcmResult:
    memberships: np.ndarray  # (c, p)
    centroids: np.ndarray  # (c, n)
    hard_labels: np.ndarray  # (p,)
    objective: np.ndarray  # objective after every iteration
    n_iter: int
    repairs: int = 0


def kmeanspp_init(data, c, rng):
    """k-means++ seeding: rows of ``data`` picked with probability ~ squared distance."""
    p = len(data)
    centers = [int(rng.integers(p))]
    d2 = ((data - data[centers[0]]) ** 2).sum(axis=1)
    for _ in range(1, c):
        total = d2.sum()
        nxt = int(rng.choice(p, p=d2 / total)) if total > 0 else int(rng.integers(p))
        centers.append(nxt)
        d2 = np.minimum(d2, ((data - data[nxt]) ** 2).sum(axis=1))
    return data[centers].copy()


def fcm_memberships(d2, fuzziness):
    """Membership update for squared distances ``d2`` of shape (c, p)."""
    c, p = d2.shape
    u = np.empty_like(d2)
    zero = d2 <= 0
    hit = zero.any(axis=0)
    if np.any(~hit):
        dd = d2[:, ~hit]
        # u_kj = 1 / sum_l (d_kj / d_lj)^(1/(m-1)), written with inverse powers
        inv = dd ** (-1.0 / (fuzziness - 1.0))
        u[:, ~hit] = inv / inv.sum(axis=0)
    if np.any(hit):
        z = zero[:, hit].astype(float)
        u[:, hit] = z / z.sum(axis=0)
    return u


def _objective(u, d2, fuzziness):
    return float((u ** fuzziness * d2).sum())


def _sq_dist(data, centroids):
    return ((centroids[:, None, :] - data[None, :, :]) ** 2).sum(axis=-1)


def _hard(u):
    return np.argmax(u, axis=0)


def _fcm_run(data, centroids, c, fuzziness, tol, max_iter):
    repairs = 0
    while True:
        d2 = _sq_dist(data, centroids)
        u = fcm_memberships(d2, fuzziness)
        history = []
        n_iter = 0
        for n_iter in range(1, max_iter + 1):
            w = u ** fuzziness
            wsum = w.sum(axis=1, keepdims=True)
            # a cluster with no weight keeps its centroid; repair handles it below
            centroids = np.where(wsum > 0, (w @ data) / np.where(wsum > 0, wsum, 1.0), centroids)
            d2 = _sq_dist(data, centroids)
            u_new = fcm_memberships(d2, fuzziness)
            history.append(_objective(u_new, d2, fuzziness))
            delta = np.abs(u_new - u).max()
            u = u_new
            if delta < tol:
                break
        labels = _hard(u)
        empty = [k for k in range(c) if not np.any(labels == k)]
        if not empty:
            break
        if repairs >= MAX_REPAIRS:
            raise SegmentationError(f"cluster(s) {empty} stayed empty after {MAX_REPAIRS} repairs; use a smaller c")
        repairs += 1
        for k in empty:
            far = int(np.argmax(_sq_dist(data, centroids).min(axis=0)))
            centroids[k] = data[far]
        log.debug("fcm repair %d: re-seeded clusters %s", repairs, empty)
    return FcmResult(u, centroids, labels, np.asarray(history), n_iter, repairs)


def cluster_columns(matrix, c, fuzziness=2.0, tol=1e-6, max_iter=300, seed=0, init=None, n_init=5):
    """Fuzzy c-means over the column profiles of ``matrix``.

    ``matrix`` may be a ProfileMatrix or a plain ``n x p`` array.  Centroids
    start from k-means++ seeding drawn from ``seed``; the run with the lowest
    final objective out of ``n_init`` seedings is kept (first one on ties).
    With an explicit ``init`` (c x n) a single run is made.  Each run
    iterates until the largest membership change is below ``tol``.
    """
    values = getattr(matrix, "values", matrix)
    data = np.asarray(values, dtype=float).T  # one row per column profile
    p = len(data)
    if not 2 <= c <= p / 2:
        raise ValueError(f"need 2 <= c <= p/2, got c={c} for p={p}")
    if fuzziness <= 1:
        raise ValueError("fuzziness must exceed 1")
    if n_init < 1:
        raise ValueError("n_init must be at least 1")
    if init is not None:
        return _fcm_run(data, np.array(init, dtype=float), c, fuzziness, tol, max_iter)
    rng = np.random.default_rng(seed)
    best = None
    for _ in range(n_init):
        res = _fcm_run(data, kmeanspp_init(data, c, rng), c, fuzziness, tol, max_iter)
        if best is None or res.objective[-1] < best.objective[-1]:
            best = res
    return best


@dataclass(eq=False)
class Component:
    label: int
    columns: np.ndarray  # indices into the profile matrix, ascending
    values: np.ndarray  # (n, len(columns)) after cleaning
    removed: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.intp))
    outlyingness: dict | None = None

    @property
    def width(self):
        return len(self.columns)


@dataclass(eq=False)
class ComponentSet:
    components: list
    labels: np.ndarray  # hard label of every matrix column
    boundaries: list  # b means a label change between columns b-1 and b
    p: int

    def check(self):
        seen = np.concatenate([np.concatenate([k.columns, k.removed]) for k in self.components])
        if len(seen) != len(np.unique(seen)):
            raise AssertionError("component column sets overlap")
        if len(seen) != self.p:
            raise AssertionError(f"components cover {len(seen)} of {self.p} columns")
        return True

    @property
    def removed(self):
        if not self.components:
            return np.zeros(0, dtype=np.intp)
        return np.sort(np.concatenate([k.removed for k in self.components]))

    def dump_csv(self, path):
        """Per-column label and outlier statistics."""
        rows = {}
        for comp in self.components:
            out = comp.outlyingness or {}
            for key in ("columns", "mo", "vo", "distance", "flagged"):
                out.setdefault(key, [])
            for j, mo, vo, dist, flag in zip(out["columns"], out["mo"], out["vo"], out["distance"], out["flagged"]):
                rows[int(j)] = (mo, vo, dist, int(flag))
        removed = set(self.removed.tolist())
        with open(path, "w") as fh:
            fh.write("column,label,mo,vo,distance,flagged,removed\n")
            for j in range(self.p):
                mo, vo, dist, flag = rows.get(j, ("", "", "", ""))
                fh.write(f"{j},{self.labels[j]},{mo},{vo},{dist},{flag},{int(j in removed)}\n")


def _boundaries(labels):
    return [int(b) for b in np.nonzero(np.diff(labels) != 0)[0] + 1]


def segment_components(matrix, fcm, min_columns=4):
    """Group columns by hard label; order inside a component is preserved."""
    values = np.asarray(getattr(matrix, "values", matrix), dtype=float)
    labels = np.asarray(getattr(fcm, "hard_labels", fcm), dtype=np.intp)
    if len(labels) != values.shape[1]:
        raise ValueError("labels do not match matrix columns")
    comps = []
    for k in np.unique(labels):
        cols = np.nonzero(labels == k)[0]
        if len(cols) < min_columns:
            raise SegmentationError(
                f"component {k} has only {len(cols)} columns (< {min_columns}); use a smaller c"
            )
        comps.append(Component(int(k), cols, values[:, cols]))
    cs = ComponentSet(comps, labels, _boundaries(labels), values.shape[1])
    cs.check()
    return cs


def single_component(matrix):
    """The whole matrix as one component (segmentation disabled)."""
    values = np.asarray(getattr(matrix, "values", matrix), dtype=float)
    p = values.shape[1]
    return ComponentSet([Component(0, np.arange(p), values)], np.zeros(p, dtype=np.intp), [], p)


def _mad(a, axis):
    med = np.median(a, axis=axis, keepdims=True)
    mad = MAD_SCALE * np.median(np.abs(a - med), axis=axis, keepdims=True)
    return med, np.maximum(mad, MAD_FLOOR)


def directional_outlyingness(values):
    """Mean (MO) and variation (VO) of pointwise outlyingness for every column.

    Pointwise outlyingness of column ``j`` at row ``i`` is
    ``(g_j(i) - median_i) / MAD_i`` with row-wise median and scaled MAD over
    the component's columns.  The returned distance is the squared robust
    Mahalanobis distance of ``(MO, VO)`` with median centre and diagonal
    MAD^2 scatter.
    """
    values = np.asarray(values, dtype=float)
    med, mad = _mad(values, axis=1)
    o = (values - med) / mad
    mo = o.mean(axis=0)
    vo = o.var(axis=0)
    feats = np.column_stack([mo, vo])
    c_med, c_mad = _mad(feats, axis=0)
    dist = (((feats - c_med) / c_mad) ** 2).sum(axis=1)
    return mo, vo, dist


def default_margin(p):
    """About 6% of the columns: spline ringing at a shoulder spans several knot spans."""
    return max(2, int(round(p / 16)))


def _near_boundary(columns, boundaries, margin, p, include_ends):
    marks = list(boundaries)
    if include_ends:
        marks += [0, p]
    near = np.zeros(len(columns), dtype=bool)
    for b in marks:
        near |= (columns >= b - margin) & (columns <= b + margin - 1)
    return near


def remove_outlier_profiles(values, columns, boundaries, margin=2, cutoff=6.0, p=None,
                            include_ends=True, min_columns=4):
    """Drop outlier column profiles that sit within ``margin`` columns of a boundary.

    ``columns`` are the matrix indices of ``values``' columns.  With
    ``include_ends`` the first and last matrix columns also count as
    boundaries.  Returns ``(kept_values, kept_columns, removed_columns, table)``.
    """
    values = np.asarray(values, dtype=float)
    columns = np.asarray(columns, dtype=np.intp)
    if values.shape[1] < min_columns:
        raise SegmentationError(f"component has {values.shape[1]} columns, needs {min_columns}")
    if margin < 1:
        raise ValueError("margin must be at least 1")
    p = int(columns.max()) + 1 if p is None else p
    mo, vo, dist = directional_outlyingness(values)
    flagged = dist > cutoff
    near = _near_boundary(columns, boundaries, margin, p, include_ends)
    drop = flagged & near
    table = {"columns": columns.tolist(), "mo": mo.tolist(), "vo": vo.tolist(),
             "distance": dist.tolist(), "flagged": flagged.tolist(), "near_boundary": near.tolist()}
    if values.shape[1] - drop.sum() < min_columns:
        warnings.warn(
            f"outlier removal would leave fewer than {min_columns} columns; keeping all", stacklevel=2
        )
        drop[:] = False
    return values[:, ~drop], columns[~drop], columns[drop], table


def clean_components(cs, margin=None, cutoff=6.0, include_ends=True):
    """Apply outlier-profile removal to every component of ``cs`` (returns a new set)."""
    margin = default_margin(cs.p) if margin is None else margin
    out = []
    for comp in cs.components:
        vals, cols, removed, table = remove_outlier_profiles(
            comp.values, comp.columns, cs.boundaries, margin, cutoff, cs.p, include_ends
        )
        out.append(Component(comp.label, cols, vals, np.concatenate([comp.removed, removed]), table))
    cleaned = ComponentSet(out, cs.labels, cs.boundaries, cs.p)
    cleaned.check()
    return cleaned
