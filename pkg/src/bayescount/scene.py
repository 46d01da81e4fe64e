"""Domain types, the cell-center convention, and on-disk formats.

All geometry lives in grid-cell units: a scene of ``height x width`` cells
with row-major, top-left origin.  Cell ``(i, j)`` is sampled at its center
``(i + 0.5, j + 0.5)``; :func:`cell_centers` is the single place that
convention is encoded.
"""

from __future__ import annotations

import json
import math
import os
from dataclasses import dataclass

import numpy as np

CELL_OFFSET = 0.5

DENSITY_MAGIC = "PDENS"
DENSITY_VERSION = 1


class ValidationError(ValueError):
    """A value violates a domain invariant."""


class FormatError(ValueError):
    """A file does not match its expected layout."""


class ShapeMismatchError(ValueError):
    """Two grids (or a grid and a scene) disagree in shape."""


@dataclass(frozen=True)
class Point2:
    row: float
    col: float

    def __post_init__(self):
        if not (math.isfinite(self.row) and math.isfinite(self.col)):
            raise ValidationError(f"non-finite point ({self.row}, {self.col})")


def cell_centers(height, width, start=0, stop=None):
    """Return ``(rows, cols)`` of the cell centers for flat indices ``[start, stop)``.

    Flat index ``m`` maps to cell ``(m // width, m % width)``.
    """
    if stop is None:
        stop = height * width
    idx = np.arange(start, stop)
    rows = (idx // width).astype(np.float64) + CELL_OFFSET
    cols = (idx % width).astype(np.float64) + CELL_OFFSET
    return rows, cols


def cell_center(i, j):
    return Point2(i + CELL_OFFSET, j + CELL_OFFSET)


@dataclass(frozen=True)
class Scene:
    """Grid extent plus head annotations (already divided by ``stride``)."""

    height: int
    width: int
    points: tuple = ()
    stride: int = 1

    def __post_init__(self):
        for name in ("height", "width", "stride"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, (int, np.integer)) or v <= 0:
                raise ValidationError(f"{name} must be a positive integer, got {v!r}")
        pts = tuple(p if isinstance(p, Point2) else Point2(float(p[0]), float(p[1]))
                    for p in self.points)
        for p in pts:
            if not (0.0 <= p.row <= self.height and 0.0 <= p.col <= self.width):
                raise ValidationError(
                    f"point ({p.row}, {p.col}) outside [0, {self.height}] x [0, {self.width}]")
        object.__setattr__(self, "points", pts)

    @property
    def n(self):
        return len(self.points)

    @property
    def shape(self):
        return (self.height, self.width)

    def points_array(self):
        """Head positions as an ``(N, 2)`` float array of (row, col)."""
        if not self.points:
            return np.zeros((0, 2))
        return np.array([[p.row, p.col] for p in self.points], dtype=np.float64)

    def with_points(self, points):
        return Scene(self.height, self.width, tuple(points), self.stride)


@dataclass(frozen=True, eq=False)
class DensityGrid:
    """Nonnegative count mass per grid cell."""

    values: np.ndarray
    stride: int = 1

    def __post_init__(self):
        v = np.array(self.values, dtype=np.float64)
        if v.ndim != 2 or v.shape[0] < 1 or v.shape[1] < 1:
            raise ValidationError(f"density must be a nonempty 2-D grid, got shape {v.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("density contains non-finite values")
        if np.any(v < 0):
            raise ValidationError("density contains negative values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)

    @property
    def height(self):
        return self.values.shape[0]

    @property
    def width(self):
        return self.values.shape[1]

    @property
    def shape(self):
        return self.values.shape

    def __eq__(self, other):
        if not isinstance(other, DensityGrid):
            return NotImplemented
        return self.stride == other.stride and np.array_equal(self.values, other.values)


@dataclass(frozen=True)
class LossConfig:
    """Parameters of the Bayesian losses.

    ``margin_d`` is an absolute margin in cells; when ``None`` the margin is
    ``d_frac`` times the shorter side of the scene.  ``distance`` picks the
    penalty on count residuals: ``"abs"`` (l1) or ``"squared"``.
    """

    sigma: float = 8.0
    background: bool = False
    margin_d: float | None = None
    d_frac: float = 0.15
    priors: tuple | None = None
    distance: str = "abs"
    truncate: bool = False

    def __post_init__(self):
        if not (self.sigma > 0 and math.isfinite(self.sigma)):
            raise ValidationError(f"sigma must be positive, got {self.sigma}")
        if self.margin_d is not None and not self.margin_d > 0:
            raise ValidationError(f"margin_d must be positive, got {self.margin_d}")
        if not self.d_frac > 0:
            raise ValidationError(f"d_frac must be positive, got {self.d_frac}")
        if self.distance not in ("abs", "squared"):
            raise ValidationError(f"unknown distance {self.distance!r}")
        if self.priors is not None:
            pr = tuple(float(p) for p in self.priors)
            if any(p < 0 or not math.isfinite(p) for p in pr):
                raise ValidationError("priors must be finite and nonnegative")
            if abs(math.fsum(pr) - 1.0) > 1e-12:
                raise ValidationError(f"priors sum to {math.fsum(pr)!r}, not 1")
            object.__setattr__(self, "priors", pr)

    def margin(self, scene):
        if self.margin_d is not None:
            return float(self.margin_d)
        return self.d_frac * min(scene.height, scene.width)

    def n_labels(self, scene):
        return scene.n + (1 if self.background else 0)


# -- scene files -----------------------------------------------------------

def scene_to_json(scene):
    obj = {
        "width": scene.width,
        "height": scene.height,
        "stride": scene.stride,
        "points": [[p.row, p.col] for p in scene.points],
    }
    return json.dumps(obj) + "\n"


def scene_from_json(text):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise FormatError(f"malformed scene JSON: {exc}") from exc
    if not isinstance(obj, dict):
        raise FormatError("scene JSON must be an object")
    try:
        height, width = obj["height"], obj["width"]
        stride = obj.get("stride", 1)
        raw = obj["points"]
    except KeyError as exc:
        raise FormatError(f"scene JSON missing key {exc}") from exc
    if not isinstance(raw, list):
        raise FormatError("'points' must be a list")
    points = []
    for item in raw:
        if (not isinstance(item, list) or len(item) != 2
                or not all(isinstance(c, (int, float)) and not isinstance(c, bool) for c in item)):
            raise FormatError(f"bad point entry {item!r}")
        points.append(Point2(float(item[0]), float(item[1])))
    return Scene(height, width, tuple(points), stride)


def write_scene(scene, path):
    with open(path, "w") as fh:
        fh.write(scene_to_json(scene))


def read_scene(path):
    with open(path) as fh:
        return scene_from_json(fh.read())


# -- density files ---------------------------------------------------------

def _fmt(x):
    return "%.17g" % x


def density_to_text(grid):
    lines = [f"{DENSITY_MAGIC} {DENSITY_VERSION} {grid.height} {grid.width} {grid.stride}"]
    for row in grid.values:
        lines.append(" ".join(_fmt(v) for v in row))
    return "\n".join(lines) + "\n"


def density_from_text(text):
    lines = text.splitlines()
    if not lines:
        raise FormatError("empty density file")
    head = lines[0].split()
    if len(head) != 5 or head[0] != DENSITY_MAGIC:
        raise FormatError(f"bad density header {lines[0]!r}")
    if head[1] != str(DENSITY_VERSION):
        raise FormatError(f"unsupported density version {head[1]}")
    try:
        h, w, stride = int(head[2]), int(head[3]), int(head[4])
    except ValueError as exc:
        raise FormatError(f"bad density header {lines[0]!r}") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != h:
        raise FormatError(f"header declares {h} rows, found {len(body)}")
    try:
        rows = [[float(t) for t in ln.split()] for ln in body]
    except ValueError as exc:
        raise FormatError(f"non-numeric density entry: {exc}") from exc
    if any(len(r) != w for r in rows):
        raise FormatError(f"header declares {w} columns per row")
    return DensityGrid(np.array(rows, dtype=np.float64).reshape(h, w), stride)


def write_density(grid, path):
    with open(path, "w") as fh:
        fh.write(density_to_text(grid))


def read_density(path):
    with open(path) as fh:
        return density_from_text(fh.read())


# -- PGM images ------------------------------------------------------------

def bounds_path(path):
    root, _ = os.path.splitext(os.fspath(path))
    return root + ".bounds.txt"


def write_pgm(path, values, lo=None, hi=None):
    """Write ``values`` as an 8-bit binary PGM after min-max scaling.

    The scaling bounds go to a ``.bounds.txt`` sidecar next to the image so
    the gray levels can be mapped back.  Returns ``(lo, hi)``.
    """
    a = np.asarray(values, dtype=np.float64)
    if a.ndim != 2:
        raise ValidationError("PGM data must be 2-D")
    lo = float(a.min()) if lo is None else float(lo)
    hi = float(a.max()) if hi is None else float(hi)
    span = hi - lo
    if span > 0:
        scaled = np.clip((a - lo) / span, 0.0, 1.0)
    else:
        scaled = np.zeros_like(a)
    img = np.rint(scaled * 255.0).astype(np.uint8)
    with open(path, "wb") as fh:
        fh.write(b"P5\n%d %d\n255\n" % (a.shape[1], a.shape[0]))
        fh.write(img.tobytes())
    with open(bounds_path(path), "w") as fh:
        fh.write(f"min {_fmt(lo)}\nmax {_fmt(hi)}\n")
    return lo, hi


def read_pgm(path):
    """Read a binary (P5, maxval 255) PGM into a uint8 array."""
    with open(path, "rb") as fh:
        data = fh.read()
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(data) and data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            while pos < len(data) and data[pos:pos + 1] != b"\n":
                pos += 1
            continue
        start = pos
        while pos < len(data) and not data[pos:pos + 1].isspace():
            pos += 1
        if start == pos:
            raise FormatError("truncated PGM header")
        tokens.append(data[start:pos])
    if tokens[0] != b"P5":
        raise FormatError(f"not a binary PGM (magic {tokens[0]!r})")
    w, h, maxval = (int(t) for t in tokens[1:])
    if maxval != 255:
        raise FormatError(f"unsupported maxval {maxval}")
    pixels = data[pos + 1:]
    if len(pixels) != w * h:
        raise FormatError(f"expected {w * h} pixel bytes, got {len(pixels)}")
    return np.frombuffer(pixels, dtype=np.uint8).reshape(h, w)


def read_bounds(path):
    out = {}
    with open(bounds_path(path)) as fh:
        for line in fh:
            key, val = line.split()
            out[key] = float(val)
    return out["min"], out["max"]
