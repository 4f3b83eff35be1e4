"""Low-rank plus sparse decomposition of profile components.

``solve_rpca`` minimizes ``||L||_* + lam * ||S||_1`` subject to
``L + S = M`` with the inexact augmented Lagrange multiplier method.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .geometry import nearest_neighbor_index

__all__ = [
    "RpcaConfig",
    "RpcaDiagnostics",
    "DecompositionResult",
    "ProvenanceError",
    "shrink",
    "svt",
    "solve_rpca",
    "lambda_for",
    "decompose_components",
    "map_scores_to_cloud",
    "cell_samples",
]

log = logging.getLogger(__name__)

LAMBDA_MODES = ("paper_formula", "inverse_sqrt", "fixed")
CENTER_MODES = ("offset", "row", "column", "both", "none")


class ProvenanceError(ValueError):
    pass


@dataclass(frozen=True)
class RpcaConfig:
    lambda_mode: str = "inverse_sqrt"
    lambda_value: float | None = None  # used by lambda_mode="fixed"
    lambda_scale: float = 0.5  # multiplies the inverse_sqrt weight
    tol: float = 1e-7
    max_iter: int = 1000
    rho: float = 1.5
    mu_max: float = 1e7
    center: str = "offset"
    dual_tol: float | None = None  # also require mu * ||dS|| / ||M|| below this

    def __post_init__(self):
        if self.lambda_mode not in LAMBDA_MODES:
            raise ValueError(f"lambda_mode must be one of {LAMBDA_MODES}")
        if self.lambda_mode == "fixed" and (self.lambda_value is None or self.lambda_value <= 0):
            raise ValueError("lambda_mode='fixed' needs a positive lambda_value")
        if self.lambda_scale <= 0:
            raise ValueError("lambda_scale must be positive")
        if self.tol <= 0:
            raise ValueError("tol must be positive")
        if self.center not in CENTER_MODES and self.center not in (True, False, None):
            raise ValueError(f"center must be one of {CENTER_MODES}")
        if self.rho <= 1:
            raise ValueError("rho must exceed 1")
        if self.dual_tol is not None and self.dual_tol <= 0:
            raise ValueError("dual_tol must be positive")


@dataclass
class RpcaDiagnostics:
    iterations: int
    residual: float
    converged: bool
    lam: float
    rank: int
    nnz: int
    residuals: list = field(default_factory=list)

    def as_dict(self):
        return {"iterations": self.iterations, "residual": self.residual, "converged": self.converged,
                "lambda": self.lam, "rank": self.rank, "nnz": self.nnz, "residual_curve": self.residuals}


def shrink(x, tau):
    """Entrywise soft threshold ``sign(x) * max(|x| - tau, 0)``."""
    return np.sign(x) * np.maximum(np.abs(x) - tau, 0.0)


def svt(x, tau):
    """Singular value soft threshold; returns the matrix and its rank."""
    u, s, vt = np.linalg.svd(x, full_matrices=False)
    s = np.maximum(s - tau, 0.0)
    r = int(np.count_nonzero(s))
    return (u[:, :r] * s[:r]) @ vt[:r], r


def solve_rpca(m, lam, config=RpcaConfig(), row_offsets=False):
    """Split ``m`` into low-rank ``L`` and sparse ``S``.

    With ``row_offsets`` the model is ``M = L + o 1^T + S`` where the row
    offsets ``o`` carry no penalty; they are folded into the returned ``L``.
    Returns ``(L, S, diagnostics)``; hitting ``max_iter`` sets
    ``diagnostics.converged = False`` instead of raising.

    The stop test is the relative constraint residual; with
    ``config.dual_tol`` the dual residual ``mu * ||S_k - S_{k-1}||`` must
    also be small, which is what bounds the objective gap.
    """
    m = np.asarray(m, dtype=float)
    if not np.all(np.isfinite(m)):
        raise ValueError("matrix must be finite")
    if lam <= 0:
        raise ValueError("lambda must be positive")
    norm_fro = np.linalg.norm(m)
    offset = np.median(m, axis=1, keepdims=True) if row_offsets else np.zeros((m.shape[0], 1))
    base = m - offset
    norm_two = np.linalg.norm(base, 2) if base.size else 0.0
    if norm_fro == 0 or norm_two == 0:
        return m.copy(), np.zeros_like(m), RpcaDiagnostics(1, 0.0, True, lam, 0, 0, [0.0])

    # dual start from Lin, Chen & Ma: Y0 = M / max(||M||_2, ||M||_inf / lam)
    y = base / max(norm_two, np.abs(base).max() / lam)
    mu = 1.25 / norm_two
    s = np.zeros_like(m)
    residuals = []
    converged = False
    rank = 0
    it = 0
    for it in range(1, config.max_iter + 1):
        low, rank = svt(m - offset - s + y / mu, 1.0 / mu)
        if row_offsets:
            # exact minimiser of the augmented term over unpenalised offsets
            offset = (m - low - s + y / mu).mean(axis=1, keepdims=True)
        s_prev = s
        s = shrink(m - low - offset + y / mu, lam / mu)
        gap = m - low - offset - s
        y = y + mu * gap
        dual = mu * np.linalg.norm(s - s_prev) / norm_fro
        mu = min(mu * config.rho, config.mu_max)
        res = float(np.linalg.norm(gap) / norm_fro)
        residuals.append(res)
        if res < config.tol and (config.dual_tol is None or dual < config.dual_tol):
            converged = True
            break
    if not converged:
        log.warning("rpca stopped at max_iter=%d with residual %.3g", config.max_iter, res)
    return low + offset, s, RpcaDiagnostics(it, res, converged, lam, rank, int(np.count_nonzero(s)), residuals)


def lambda_for(n, p_bar, mode="inverse_sqrt", value=None, scale=1.0):
    """Sparsity weight for an ``n x p_bar`` component.

    ``inverse_sqrt`` is ``scale / sqrt(max(n, p_bar))``; ``paper_formula``
    is ``(n + p_bar) / 6``; ``fixed`` returns ``value``.
    """
    if n < 1 or p_bar < 1:
        raise ValueError("matrix dimensions must be positive")
    if isinstance(mode, RpcaConfig):
        mode, value, scale = mode.lambda_mode, mode.lambda_value, mode.lambda_scale
    if mode == "paper_formula":
        return (n + p_bar) / 6.0
    if mode == "inverse_sqrt":
        return scale / np.sqrt(max(n, p_bar))
    if mode == "fixed":
        if value is None:
            raise ValueError("fixed lambda needs a value")
        return float(value)
    raise ValueError(f"unknown lambda mode {mode!r}")


@dataclass(eq=False)
class DecompositionResult:
    low_rank: list  # L_k
    sparse: list  # S_k
    columns: list  # matrix column indices of each component
    diagnostics: list
    p: int  # columns of the profile matrix

    @property
    def concatenated(self):
        """All sparse parts side by side, component order."""
        return np.hstack(self.sparse) if self.sparse else np.zeros((0, 0))

    @property
    def column_map(self):
        return np.concatenate(self.columns) if self.columns else np.zeros(0, dtype=np.intp)

    @property
    def converged(self):
        return all(d.converged for d in self.diagnostics)

    def full_sparse(self, fill=np.nan):
        """Sparse part laid out on the profile-matrix grid; missing columns hold ``fill``."""
        n = self.sparse[0].shape[0] if self.sparse else 0
        out = np.full((n, self.p), fill)
        for s, cols in zip(self.sparse, self.columns):
            out[:, cols] = s
        return out

    def report(self):
        return [
            dict(d.as_dict(), columns=[int(c) for c in cols], shape=list(s.shape))
            for d, cols, s in zip(self.diagnostics, self.columns, self.sparse)
        ]


def _center(m, mode):
    """Fixed offset removed before decomposition.

    "row" subtracts each row's median over the component, "column" each
    column's median.  "offset" removes nothing here: the solver estimates
    the row offsets itself.
    """
    if mode in (False, None, "none", "offset"):
        return np.zeros_like(m)
    if mode == "column":
        return np.broadcast_to(np.median(m, axis=0, keepdims=True), m.shape).copy()
    rows = np.median(m, axis=1, keepdims=True)
    if mode in (True, "row"):
        return np.broadcast_to(rows, m.shape).copy()
    if mode == "both":
        return rows + np.median(m - rows, axis=0, keepdims=True)
    raise ValueError(f"unknown centering {mode!r}")


def decompose_components(components, config=RpcaConfig()):
    """Run ``solve_rpca`` on every cleaned component.

    By default every row of a component gets a free, unpenalised offset
    (a slice sitting higher or lower is not an anomaly); the other centring
    modes subtract a fixed median first.  Offsets are folded back into
    ``L`` so ``M_k = L_k + S_k`` holds.
    """
    lows, sparses, cols, diags = [], [], [], []
    for comp in components.components:
        m = np.asarray(comp.values, dtype=float)
        if m.size == 0:
            raise ValueError(f"component {comp.label} is empty")
        center = _center(m, config.center)
        lam = lambda_for(m.shape[0], m.shape[1], config)
        low, s, diag = solve_rpca(m - center, lam, config, row_offsets=config.center == "offset")
        if not diag.converged:
            log.warning("component %d did not converge", comp.label)
        lows.append(low + center)
        sparses.append(s)
        cols.append(np.asarray(comp.columns, dtype=np.intp))
        diags.append(diag)
    return DecompositionResult(lows, sparses, cols, diags, components.p)


def cell_samples(matrix):
    """3-D location of every matrix cell: ``(col_x[j], row_y[i], values[i, j])``."""
    n, p = matrix.values.shape
    xx = np.broadcast_to(matrix.col_x[None, :], (n, p))
    yy = np.broadcast_to(matrix.row_y[:, None], (n, p))
    return np.column_stack([xx.ravel(), yy.ravel(), matrix.values.ravel()])


def map_scores_to_cloud(result, matrix, cloud, check_source=True):
    """Give each point of ``cloud`` the ``|S|`` of its nearest matrix cell.

    Points whose slice was dropped, whose nearest cell lies in a removed
    column, or which fall outside the common x domain get NaN
    (unevaluated).  ``cloud`` must be the normalized cloud ``matrix`` was
    built from.
    """
    from .profiles import cloud_fingerprint

    if matrix.point_row is None or len(matrix.point_row) != len(cloud):
        raise ProvenanceError("profile matrix was not built from this cloud")
    if check_source and matrix.source is not None and matrix.source != cloud_fingerprint(cloud):
        raise ProvenanceError("profile matrix was not built from this cloud")
    if result.p != matrix.values.shape[1] or result.sparse[0].shape[0] != matrix.values.shape[0]:
        raise ProvenanceError("decomposition does not match the profile matrix")
    cell_score = np.abs(result.full_sparse(np.nan)).ravel()
    scores = np.full(len(cloud), np.nan)
    pts = cloud.points
    half = 0.5 * (matrix.col_x[1] - matrix.col_x[0]) if len(matrix.col_x) > 1 else 0.0
    inside = (
        (matrix.point_row >= 0)
        & (pts[:, 0] >= matrix.col_x[0] - half)
        & (pts[:, 0] <= matrix.col_x[-1] + half)
    )
    idx = nearest_neighbor_index(pts[inside], cell_samples(matrix))
    scores[inside] = cell_score[idx]
    return cloud.with_scores(scores)
