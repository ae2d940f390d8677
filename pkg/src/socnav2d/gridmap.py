"""Occupancy grids, map file I/O, coordinate transforms and the static costmap.

World convention: cell (ix, iy) spans the axis-aligned square
[origin + ix*res, origin + (ix+1)*res) x [origin + iy*res, origin + (iy+1)*res).
The occupancy array is indexed ``occupied[iy, ix]`` (row = y). Image row 0 of a
map file maps to the iy = 0 row of cells; see docs/map_format.md.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from PIL import Image
from scipy import ndimage

LETHAL = math.inf

DEFAULT_OCCUPIED_THRESHOLD = 128  # pixel luminance below this is a wall


class MapError(Exception):
    """Raised for unreadable map files or bad metadata."""


class OutOfBoundsError(ValueError):
    """A world point lies outside the grid extent."""


@dataclass(frozen=True)
class OccupancyGrid:
    """Static 2D world: every cell is either free or occupied.

    Immutable after construction; share freely across threads.
    """

    occupied: np.ndarray  # bool, shape (height, width)
    resolution: float  # meters per cell
    origin: tuple[float, float] = (0.0, 0.0)  # world coords of cell (0, 0) corner

    def __post_init__(self):
        occ = np.ascontiguousarray(self.occupied, dtype=bool)
        occ.setflags(write=False)
        object.__setattr__(self, "occupied", occ)
        if occ.ndim != 2 or occ.shape[0] < 1 or occ.shape[1] < 1:
            raise ValueError("grid must be 2D with positive dimensions")
        if self.resolution <= 0:
            raise ValueError("resolution must be positive")

    @property
    def height(self):
        return self.occupied.shape[0]

    @property
    def width(self):
        return self.occupied.shape[1]

    @property
    def extent(self):
        """(x_min, y_min, x_max, y_max) in world meters."""
        x0, y0 = self.origin
        return (x0, y0, x0 + self.width * self.resolution, y0 + self.height * self.resolution)

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def is_occupied(self, ix: int, iy: int) -> bool:
        return bool(self.occupied[iy, ix])

    def world_to_cell(self, point) -> tuple[int, int]:
        """Cell index containing a world point; raises OutOfBoundsError outside."""
        ix = math.floor((point[0] - self.origin[0]) / self.resolution)
        iy = math.floor((point[1] - self.origin[1]) / self.resolution)
        if not self.in_bounds(ix, iy):
            raise OutOfBoundsError(f"point {tuple(point)} outside grid extent {self.extent}")
        return ix, iy

    def cell_to_world(self, cell) -> tuple[float, float]:
        """World coordinates of a cell center."""
        ix, iy = cell
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def occupied_at_point(self, point) -> bool:
        """Occupancy sampled at a world point; out-of-grid counts as occupied."""
        ix = math.floor((point[0] - self.origin[0]) / self.resolution)
        iy = math.floor((point[1] - self.origin[1]) / self.resolution)
        if not self.in_bounds(ix, iy):
            return True
        return bool(self.occupied[iy, ix])


@dataclass(frozen=True)
class Costmap:
    """Per-cell traversal cost over the same geometry as its source grid.

    Free cells carry a base cost of exactly 1.0; walls (and cells within the
    robot radius of one) are LETHAL (infinite) and never expanded by planners.
    """

    cost: np.ndarray  # float64, shape (height, width); LETHAL marks non-traversable
    resolution: float
    origin: tuple[float, float] = (0.0, 0.0)

    def __post_init__(self):
        cost = np.ascontiguousarray(self.cost, dtype=np.float64)
        cost.setflags(write=False)
        object.__setattr__(self, "cost", cost)
        finite = cost[np.isfinite(cost)]
        if finite.size and finite.min() < 1.0:
            raise ValueError("traversable cost must be >= 1")

    @property
    def height(self):
        return self.cost.shape[0]

    @property
    def width(self):
        return self.cost.shape[1]

    def is_lethal(self, ix: int, iy: int) -> bool:
        return not math.isfinite(self.cost[iy, ix])

    def in_bounds(self, ix: int, iy: int) -> bool:
        return 0 <= ix < self.width and 0 <= iy < self.height

    def world_to_cell(self, point) -> tuple[int, int]:
        ix = math.floor((point[0] - self.origin[0]) / self.resolution)
        iy = math.floor((point[1] - self.origin[1]) / self.resolution)
        if not self.in_bounds(ix, iy):
            raise OutOfBoundsError(f"point {tuple(point)} outside costmap")
        return ix, iy

    def cell_to_world(self, cell) -> tuple[float, float]:
        ix, iy = cell
        return (
            self.origin[0] + (ix + 0.5) * self.resolution,
            self.origin[1] + (iy + 0.5) * self.resolution,
        )

    def with_cost(self, cost: np.ndarray) -> "Costmap":
        return Costmap(cost=cost, resolution=self.resolution, origin=self.origin)


def _parse_kv_lines(text: str) -> dict:
    """Parse 'key: value' / 'key = value' / 'key value' lines, '#' comments."""
    out = {}
    for raw in text.splitlines():
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        for sep in (":", "="):
            if sep in line:
                key, _, value = line.partition(sep)
                break
        else:
            parts = line.split(None, 1)
            if len(parts) != 2:
                raise MapError(f"malformed metadata line: {raw!r}")
            key, value = parts
        out[key.strip()] = value.strip()
    return out


def metadata_path(image_path):
    """Sidecar metadata file that belongs to a map image."""
    from pathlib import Path

    p = Path(image_path)
    return p.with_suffix(".meta")


def load_map(path, occupied_threshold: int = DEFAULT_OCCUPIED_THRESHOLD) -> OccupancyGrid:
    """Load a grayscale PGM/PNG map plus its plain-text sidecar metadata.

    Pixels with luminance below ``occupied_threshold`` become occupied. The
    sidecar (same stem, ``.meta`` extension) must define ``resolution``,
    ``origin_x`` and ``origin_y``.
    """
    from pathlib import Path

    img_path = Path(path)
    if not img_path.exists():
        raise MapError(f"map image not found: {img_path}")
    meta_path = metadata_path(img_path)
    if not meta_path.exists():
        raise MapError(f"map metadata not found: {meta_path}")

    try:
        with Image.open(img_path) as img:
            gray = np.asarray(img.convert("L"))
    except Exception as exc:
        raise MapError(f"unreadable map image {img_path}: {exc}") from exc

    kv = _parse_kv_lines(meta_path.read_text())
    missing = [k for k in ("resolution", "origin_x", "origin_y") if k not in kv]
    if missing:
        raise MapError(f"metadata {meta_path} missing keys: {', '.join(missing)}")
    try:
        resolution = float(kv["resolution"])
        origin = (float(kv["origin_x"]), float(kv["origin_y"]))
    except ValueError as exc:
        raise MapError(f"metadata {meta_path} has non-numeric values: {exc}") from exc
    if resolution <= 0:
        raise MapError("resolution must be positive")
    if "occupied_threshold" in kv:
        occupied_threshold = int(kv["occupied_threshold"])

    return OccupancyGrid(occupied=gray < occupied_threshold, resolution=resolution, origin=origin)


def save_map(grid: OccupancyGrid, path) -> None:
    """Write a grid as a binary PGM plus sidecar metadata (round-trips exactly)."""
    from pathlib import Path

    img_path = Path(path)
    pixels = np.where(grid.occupied, 0, 255).astype(np.uint8)
    Image.fromarray(pixels, mode="L").save(img_path)
    meta = (
        f"resolution: {grid.resolution!r}\n"
        f"origin_x: {grid.origin[0]!r}\n"
        f"origin_y: {grid.origin[1]!r}\n"
    )
    metadata_path(img_path).write_text(meta)


def _disc_structure(radius_cells: float) -> np.ndarray:
    """Boolean disc of cell offsets with squared distance <= radius_cells**2."""
    k = int(math.floor(radius_cells + 1e-9))
    if k < 0:
        k = 0
    offsets = np.arange(-k, k + 1)
    dx, dy = np.meshgrid(offsets, offsets)
    return (dx * dx + dy * dy) <= radius_cells * radius_cells + 1e-9


def base_costmap(grid: OccupancyGrid, robot_radius: float) -> Costmap:
    """Static costmap: walls plus a robot_radius disc around them are lethal.

    Inflating by the robot body lets the planners treat the robot as a point.
    Cell distances are measured center to center.
    """
    if robot_radius < 0:
        raise ValueError("robot_radius must be >= 0")
    structure = _disc_structure(robot_radius / grid.resolution)
    lethal = ndimage.binary_dilation(grid.occupied, structure=structure)
    cost = np.ones(grid.occupied.shape, dtype=np.float64)
    cost[lethal] = LETHAL
    return Costmap(cost=cost, resolution=grid.resolution, origin=grid.origin)


def clearance_field(grid: OccupancyGrid) -> np.ndarray:
    """Per-cell distance (meters, center to center) to the nearest occupied cell."""
    if not grid.occupied.any():
        return np.full(grid.occupied.shape, np.inf)
    dist_cells = ndimage.distance_transform_edt(~grid.occupied)
    return dist_cells * grid.resolution


def disc_hits_occupied(grid: OccupancyGrid, center, radius: float) -> bool:
    """True when a disc at a world point overlaps any occupied cell square.

    Exact test against cell rectangles, used both for robot wall collisions
    and for DWA admissibility so the two can never disagree.
    """
    x, y = float(center[0]), float(center[1])
    res = grid.resolution
    x0, y0 = grid.origin
    ix_lo = math.floor((x - radius - x0) / res)
    ix_hi = math.floor((x + radius - x0) / res)
    iy_lo = math.floor((y - radius - y0) / res)
    iy_hi = math.floor((y + radius - y0) / res)
    r2 = radius * radius
    for iy in range(iy_lo, iy_hi + 1):
        for ix in range(ix_lo, ix_hi + 1):
            if not grid.in_bounds(ix, iy):
                continue
            if not grid.occupied[iy, ix]:
                continue
            # closest point of the cell square to the disc center
            cx_lo = x0 + ix * res
            cy_lo = y0 + iy * res
            px = min(max(x, cx_lo), cx_lo + res)
            py = min(max(y, cy_lo), cy_lo + res)
            if (px - x) ** 2 + (py - y) ** 2 < r2:
                return True
    return False
