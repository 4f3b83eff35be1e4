"""Point-cloud container, file I/O, normalization and nearest-neighbour lookup.

Coordinate convention: y is the slicing axis, z is the height used as the
profile value, x runs along each profile.  Inputs are assumed pre-oriented.
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

__all__ = [
    "PointCloud",
    "Aabb",
    "PointCloudParseError",
    "EmptyInputError",
    "DegenerateCloudError",
    "load_point_cloud",
    "save_point_cloud",
    "normalize_to_unit_bbox",
    "nearest_neighbor_map",
    "nearest_neighbor_index",
]

FORMATS = ("xyz", "csv", "ply")


class PointCloudParseError(ValueError):
    """Raised when a point-cloud file cannot be parsed."""

    def __init__(self, path, line, message):
        self.path = str(path)
        self.line = line
        super().__init__(f"{path}: line {line}: {message}")


class EmptyInputError(ValueError):
    pass


class DegenerateCloudError(ValueError):
    pass


@dataclass(frozen=True)
class Aabb:
    min: np.ndarray
    max: np.ndarray

    def __post_init__(self):
        if np.any(self.min > self.max):
            raise ValueError("Aabb min must be <= max componentwise")

    @classmethod
    def of(cls, points):
        points = np.asarray(points, dtype=float)
        if len(points) == 0:
            raise EmptyInputError("bounding box of an empty point set")
        return cls(points.min(axis=0), points.max(axis=0))

    @property
    def extent(self):
        return self.max - self.min

    def aspect_ratio(self):
        """Longest edge over shortest edge."""
        e = np.sort(self.extent)[::-1]
        if e[2] <= 0:
            raise DegenerateCloudError("bounding box is flat; aspect ratio undefined")
        return float(e[0] / e[2])


@dataclass(frozen=True, eq=False)
class PointCloud:
    """An ``m x 3`` array of points with optional labels and scores.

    ``labels`` is binary ground truth, ``scores`` is a real anomaly score per
    point where NaN marks an unevaluated point.
    """

    points: np.ndarray
    labels: np.ndarray | None = None
    scores: np.ndarray | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float).reshape(-1, 3)
        if not np.all(np.isfinite(pts)):
            raise ValueError("point coordinates must be finite")
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)
        for name, dtype in (("labels", np.uint8), ("scores", float)):
            arr = getattr(self, name)
            if arr is None:
                continue
            arr = np.asarray(arr, dtype=dtype).reshape(-1)
            if len(arr) != len(pts):
                raise ValueError(f"{name} has length {len(arr)}, expected {len(pts)}")
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    def __len__(self):
        return len(self.points)

    def with_points(self, points):
        return PointCloud(points, self.labels, self.scores, dict(self.meta))

    def with_labels(self, labels):
        return PointCloud(self.points, labels, self.scores, dict(self.meta))

    def with_scores(self, scores):
        return PointCloud(self.points, self.labels, scores, dict(self.meta))

    @property
    def bbox(self):
        return Aabb.of(self.points)


def _infer_format(path, fmt):
    if fmt is not None:
        fmt = fmt.lower().replace("-text", "").replace("binary-", "")
        if fmt not in FORMATS:
            raise ValueError(f"unknown point-cloud format {fmt!r}")
        return fmt
    ext = os.path.splitext(str(path))[1].lower().lstrip(".")
    if ext in ("xyz", "txt", "pts"):
        return "xyz"
    if ext in FORMATS:
        return ext
    raise ValueError(f"cannot infer point-cloud format from {path!r}")


def _parse_row(tokens, path, lineno, ncols):
    if len(tokens) != ncols:
        raise PointCloudParseError(path, lineno, f"expected {ncols} values, got {len(tokens)}")
    try:
        return [float(t) for t in tokens]
    except ValueError:
        raise PointCloudParseError(path, lineno, f"non-numeric value in {' '.join(tokens)!r}") from None


def _assemble(path, names, rows):
    if not rows:
        raise EmptyInputError(f"{path}: no points")
    data = np.array(rows, dtype=float)
    cols = {n: data[:, i] for i, n in enumerate(names)}
    for axis in "xyz":
        if axis not in cols:
            raise PointCloudParseError(path, 1, f"missing column {axis!r}")
    labels = cols.get("label")
    if labels is not None:
        if not np.all(np.isin(labels, (0.0, 1.0))):
            raise PointCloudParseError(path, 1, "labels must be 0 or 1")
        labels = labels.astype(np.uint8)
    pts = np.column_stack([cols["x"], cols["y"], cols["z"]])
    if not np.all(np.isfinite(pts)):
        raise PointCloudParseError(path, 1, "non-finite coordinate")
    return PointCloud(pts, labels, cols.get("score"))


def _load_xyz(path):
    names = None
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                if names is None and not rows:
                    header = s.lstrip("#").split()
                    if header[:3] == ["x", "y", "z"]:
                        names = header
                continue
            tokens = s.split()
            if names is None:
                if len(tokens) not in (3, 4):
                    raise PointCloudParseError(path, lineno, f"expected 3 or 4 values, got {len(tokens)}")
                names = ["x", "y", "z", "label"][: len(tokens)]
            rows.append(_parse_row(tokens, path, lineno, len(names)))
    return _assemble(path, names or [], rows)


def _load_csv(path):
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip().lower() for h in next(reader)]
        except StopIteration:
            raise EmptyInputError(f"{path}: empty file") from None
        if not {"x", "y", "z"} <= set(header):
            raise PointCloudParseError(path, 1, "csv header must name x, y and z")
        rows = [
            _parse_row([t.strip() for t in row], path, lineno, len(header))
            for lineno, row in enumerate(reader, start=2)
            if row
        ]
    return _assemble(path, header, rows)


_PLY_TYPES = {
    "double": "<f8", "float64": "<f8", "float": "<f4", "float32": "<f4",
    "uchar": "u1", "uint8": "u1", "char": "i1", "int8": "i1",
    "int": "<i4", "int32": "<i4", "uint": "<u4", "uint32": "<u4",
    "short": "<i2", "int16": "<i2", "ushort": "<u2", "uint16": "<u2",
}


def _load_ply(path):
    with open(path, "rb") as fh:
        if fh.readline().strip() != b"ply":
            raise PointCloudParseError(path, 1, "missing 'ply' magic")
        fields, count, lineno = [], None, 1
        while True:
            raw = fh.readline()
            lineno += 1
            if not raw:
                raise PointCloudParseError(path, lineno, "unterminated header")
            tokens = raw.decode("ascii", "replace").split()
            if not tokens or tokens[0] in ("comment", "obj_info"):
                continue
            if tokens[0] == "format":
                if tokens[1] != "binary_little_endian":
                    raise PointCloudParseError(path, lineno, f"unsupported ply format {tokens[1]!r}")
            elif tokens[0] == "element":
                if tokens[1] != "vertex" or count is not None:
                    raise PointCloudParseError(path, lineno, "only a single vertex element is supported")
                count = int(tokens[2])
            elif tokens[0] == "property":
                if tokens[1] == "list" or tokens[1] not in _PLY_TYPES:
                    raise PointCloudParseError(path, lineno, f"unsupported property {' '.join(tokens[1:])!r}")
                fields.append((tokens[2], _PLY_TYPES[tokens[1]]))
            elif tokens[0] == "end_header":
                break
        if not count:
            raise EmptyInputError(f"{path}: no vertices")
        dtype = np.dtype(fields)
        buf = fh.read(dtype.itemsize * count)
    if len(buf) != dtype.itemsize * count:
        raise PointCloudParseError(path, lineno, "truncated vertex data")
    data = np.frombuffer(buf, dtype=dtype, count=count)
    names = data.dtype.names
    for axis in "xyz":
        if axis not in names:
            raise PointCloudParseError(path, lineno, f"missing property {axis!r}")
    pts = np.column_stack([data[a].astype(float) for a in "xyz"])
    labels = data["label"].astype(np.uint8) if "label" in names else None
    scores = data["score"].astype(float) if "score" in names else None
    return PointCloud(pts, labels, scores)


def load_point_cloud(path, format=None):
    """Read a point cloud from ``xyz`` text, ``csv`` (with header) or binary ``ply``.

    A fourth ``xyz`` column without a ``# x y z ...`` header comment is read
    as the label column.
    """
    fmt = _infer_format(path, format)
    if not os.path.exists(path):
        raise FileNotFoundError(path)
    if os.path.getsize(path) == 0:
        raise EmptyInputError(f"{path}: empty file")
    return {"xyz": _load_xyz, "csv": _load_csv, "ply": _load_ply}[fmt](path)


def _columns(cloud):
    names = ["x", "y", "z"]
    cols = [cloud.points[:, 0], cloud.points[:, 1], cloud.points[:, 2]]
    if cloud.labels is not None:
        names.append("label")
        cols.append(cloud.labels)
    if cloud.scores is not None:
        names.append("score")
        cols.append(cloud.scores)
    return names, cols


def _format_rows(names, cols, sep):
    fmt = sep.join("%d" if n == "label" else "%.17g" for n in names)
    return [fmt % tuple(vals) for vals in zip(*(c.tolist() for c in cols))]


def save_point_cloud(cloud, path, format=None):
    """Write ``cloud``; labels and scores become extra columns/properties."""
    fmt = _infer_format(path, format)
    names, cols = _columns(cloud)
    try:
        if fmt == "ply":
            dtype = [(n, "u1" if n == "label" else "<f8") for n in names]
            data = np.empty(len(cloud), dtype=dtype)
            for n, c in zip(names, cols):
                data[n] = c
            header = ["ply", "format binary_little_endian 1.0", f"element vertex {len(cloud)}"]
            header += [f"property {'uint8' if n == 'label' else 'double'} {n}" for n in names]
            header.append("end_header")
            with open(path, "wb") as fh:
                fh.write(("\n".join(header) + "\n").encode("ascii"))
                fh.write(data.tobytes())
        else:
            sep = "," if fmt == "csv" else " "
            lines = _format_rows(names, cols, sep)
            head = ",".join(names) if fmt == "csv" else ("# " + " ".join(names) if len(names) > 3 else None)
            with open(path, "w") as fh:
                if head is not None:
                    fh.write(head + "\n")
                fh.write("\n".join(lines))
                if lines:
                    fh.write("\n")
    except OSError as exc:
        raise OSError(exc.errno, f"cannot write point cloud: {exc.strerror}", str(path)) from exc


def normalize_to_unit_bbox(cloud):
    """Translate the bbox min corner to the origin and scale the longest edge to 1.

    Returns ``(normalized, scale, offset)`` with
    ``normalized = (points - offset) * scale``.
    """
    if len(cloud) == 0:
        raise EmptyInputError("cannot normalize an empty cloud")
    box = cloud.bbox
    longest = float(box.extent.max())
    if longest <= 0:
        raise DegenerateCloudError("all points are identical")
    scale = 1.0 / longest
    offset = box.min.copy()
    pts = (cloud.points - offset) * scale
    return cloud.with_points(pts), scale, offset


def nearest_neighbor_index(query, reference):
    """Index of the Euclidean-nearest reference point for every query point.

    Exact; ties go to the lowest reference index.
    """
    query = np.asarray(query, dtype=float).reshape(-1, 3)
    reference = np.asarray(reference, dtype=float).reshape(-1, 3)
    if len(reference) == 0:
        raise EmptyInputError("nearest-neighbour reference set is empty")
    if len(query) == 0:
        return np.zeros(0, dtype=np.intp)
    k = min(4, len(reference))
    tree = cKDTree(reference)
    _, cand = tree.query(query, k=k)
    cand = cand.reshape(len(query), k)
    # re-rank candidates with exactly the same arithmetic for every query
    d2 = ((query[:, None, :] - reference[cand]) ** 2).sum(axis=-1)
    order = np.lexsort((cand, d2), axis=-1)
    rows = np.arange(len(query))
    best = cand[rows, order[:, 0]]
    best_d2 = d2[rows, order[:, 0]]
    # when the k-th candidate is as close as the best one there may be
    # more tied points outside the candidate list
    worst = d2[rows, order[:, -1]]
    unsure = np.nonzero((k < len(reference)) & (worst <= best_d2 * (1 + 1e-9) + 1e-300))[0]
    for q in unsure:
        radius = np.sqrt(best_d2[q]) * (1 + 1e-9) + 1e-150
        idx = np.asarray(sorted(tree.query_ball_point(query[q], radius)), dtype=np.intp)
        dd = ((query[q] - reference[idx]) ** 2).sum(axis=-1)
        best[q] = idx[np.argmin(dd)]
    return best


def nearest_neighbor_map(query, reference, values):
    """Give every query point the value of its nearest reference point."""
    if isinstance(query, PointCloud):
        query = query.points
    values = np.asarray(values)
    if len(values) != len(np.asarray(reference).reshape(-1, 3)):
        raise ValueError("reference points and values differ in length")
    return values[nearest_neighbor_index(query, reference)]
