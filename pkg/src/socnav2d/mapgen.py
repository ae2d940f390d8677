"""Procedural indoor maps: BSP-partitioned rooms joined by door openings,
with optional rectangular clutter. The free region is always one connected
component, so any sampled start can reach any sampled goal."""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, asdict
from pathlib import Path

import numpy as np
from scipy import ndimage

from .gridmap import OccupancyGrid, load_map


@dataclass(frozen=True)
class MapGenParams:
    width_m: float = 20.0
    height_m: float = 20.0
    resolution: float = 0.1
    min_room_m: float = 3.0
    corridor_width_m: float = 1.0  # width of door openings between rooms
    clutter_density: float = 0.02  # rectangles per square meter
    clutter_min_m: float = 0.3
    clutter_max_m: float = 0.9
    max_depth: int = 4

    def __post_init__(self):
        if min(self.width_m, self.height_m, self.resolution, self.min_room_m,
               self.corridor_width_m) <= 0:
            raise ValueError("map generator parameters must be positive")
        if self.clutter_density < 0:
            raise ValueError("clutter_density must be >= 0")


def _split_region(occ, rng, x0, y0, x1, y1, min_room, door, depth):
    """Recursively wall off [x0,x1) x [y0,y1) leaving one door per wall."""
    w = x1 - x0
    h = y1 - y0
    if depth <= 0 or (w < 2 * min_room + 1 and h < 2 * min_room + 1):
        return
    if w >= h and w >= 2 * min_room + 1:
        vertical = True
    elif h >= 2 * min_room + 1:
        vertical = False
    else:
        return
    if vertical:
        s = int(rng.integers(x0 + min_room, x1 - min_room))
        occ[y0:y1, s] = True
        opening = int(rng.integers(y0 + 1, max(y0 + 2, y1 - door - 1)))
        occ[opening : opening + door, s] = False
        _split_region(occ, rng, x0, y0, s, y1, min_room, door, depth - 1)
        _split_region(occ, rng, s + 1, y0, x1, y1, min_room, door, depth - 1)
    else:
        s = int(rng.integers(y0 + min_room, y1 - min_room))
        occ[s, x0:x1] = True
        opening = int(rng.integers(x0 + 1, max(x0 + 2, x1 - door - 1)))
        occ[s, opening : opening + door] = False
        _split_region(occ, rng, x0, y0, x1, s, min_room, door, depth - 1)
        _split_region(occ, rng, x0, s + 1, x1, y1, min_room, door, depth - 1)


def generate_indoor_map(seed: int, params: MapGenParams = MapGenParams()) -> OccupancyGrid:
    """Deterministic indoor layout for a seed: rooms, doors, clutter.

    After clutter placement any free pockets cut off from the main region are
    filled in, so exactly one free component remains.
    """
    rng = np.random.default_rng(seed)
    res = params.resolution
    width = int(round(params.width_m / res))
    height = int(round(params.height_m / res))
    occ = np.zeros((height, width), dtype=bool)
    occ[0, :] = occ[-1, :] = True
    occ[:, 0] = occ[:, -1] = True

    min_room = max(2, int(round(params.min_room_m / res)))
    door = max(1, int(round(params.corridor_width_m / res)))
    _split_region(occ, rng, 1, 1, width - 1, height - 1, min_room, door, params.max_depth)

    n_clutter = int(round(params.clutter_density * params.width_m * params.height_m))
    for _ in range(n_clutter):
        cw = int(round(rng.uniform(params.clutter_min_m, params.clutter_max_m) / res))
        ch = int(round(rng.uniform(params.clutter_min_m, params.clutter_max_m) / res))
        cx = int(rng.integers(1, max(2, width - cw - 1)))
        cy = int(rng.integers(1, max(2, height - ch - 1)))
        occ[cy : cy + ch, cx : cx + cw] = True

    # keep only the largest free component; fill the rest
    labels, count = ndimage.label(~occ)
    if count > 1:
        sizes = ndimage.sum_labels(np.ones_like(labels), labels, index=range(1, count + 1))
        keep = 1 + int(np.argmax(sizes))
        occ[(labels != keep) & (labels > 0)] = True

    return OccupancyGrid(occupied=occ, resolution=res, origin=(0.0, 0.0))


# ------------------------------------------------------------------ map refs

def mapgen_ref(seed: int, params: MapGenParams = MapGenParams()) -> dict:
    return {"kind": "mapgen", "seed": int(seed), "params": asdict(params)}


def file_ref(path) -> dict:
    digest = hashlib.sha256(Path(path).read_bytes()).hexdigest()
    return {"kind": "file", "path": str(path), "sha256": digest}


def grid_from_ref(ref: dict) -> OccupancyGrid:
    """Rebuild a grid from a replay-log / protocol map reference."""
    kind = ref.get("kind")
    if kind == "mapgen":
        return generate_indoor_map(int(ref["seed"]), MapGenParams(**ref.get("params", {})))
    if kind == "file":
        path = Path(ref["path"])
        if "sha256" in ref:
            digest = hashlib.sha256(path.read_bytes()).hexdigest()
            if digest != ref["sha256"]:
                raise ValueError(f"map file {path} does not match its recorded hash")
        return load_map(path)
    raise ValueError(f"unknown map reference kind {kind!r}")
