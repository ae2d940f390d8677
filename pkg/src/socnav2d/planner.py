"""Pedestrian-aware global planning.

Visible pedestrians are inflated into the costmap with anisotropic 2D
Gaussians, stretched along the walking direction and shifted ahead of the
pedestrian so the planner routes around where people are going, not where
they are. A cost-weighted A* then searches the inflated map and the path is
resampled into evenly spaced waypoints.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass

import numpy as np

from .gridmap import Costmap, OutOfBoundsError
from .sensing import PedestrianEstimate

SQRT2 = math.sqrt(2.0)

DEFAULT_WAYPOINT_SPACING = 0.5
REPLAN_TRIGGER_DISTANCE = 0.5  # pedestrian within this of an upcoming waypoint
WAYPOINT_ADVANCE_RADIUS = 0.3
WAYPOINT_REWARD_RADIUS = 0.1


class ProximityMode(enum.Enum):
    """How the Gaussian spread scales with pedestrian distance.

    AS_WRITTEN scales the spread proportionally to distance, so near
    pedestrians get narrow inflation. INVERSE (default) flips the ratio so
    closer pedestrians inflate more, matching the qualitative behavior the
    cost shaping is meant to produce; both are kept selectable.
    """

    AS_WRITTEN = "as_written"
    INVERSE = "inverse"


@dataclass(frozen=True)
class GaussianParams:
    amplitude: float = 1.0  # free-space base cost
    w_x: float = 1.0  # meters, spread along the heading
    w_y: float = 0.7  # meters, lateral spread
    forward_shift: int = 2  # costmap cells ahead of the pedestrian
    max_distance: float = 5.0  # sensor range; normalizes the distance ratio
    proximity_mode: ProximityMode = ProximityMode.INVERSE
    ped_cost_weight: float = 20.0

    def __post_init__(self):
        if not self.w_x > self.w_y > 0:
            raise ValueError("need w_x > w_y > 0")
        if self.forward_shift < 0 or self.max_distance <= 0 or self.ped_cost_weight < 0:
            raise ValueError("bad Gaussian parameters")


@dataclass
class Waypoints:
    """Arc-length samples of a global path; cursor marks the next unvisited one."""

    points: list  # world points, last one is the goal
    spacing: float = DEFAULT_WAYPOINT_SPACING
    cursor: int = 0

    @property
    def goal(self):
        return self.points[-1]

    def remaining(self):
        return self.points[self.cursor :]

    def current(self):
        idx = min(self.cursor, len(self.points) - 1)
        return self.points[idx]

    def upcoming(self, count: int):
        """Next ``count`` waypoints from the cursor, padded with the goal."""
        rem = self.points[self.cursor :]
        out = list(rem[:count])
        while len(out) < count:
            out.append(self.points[-1])
        return out

    def advance(self, position) -> int:
        """Move the cursor past waypoints the robot has reached; returns the
        number of waypoints passed."""
        passed = 0
        while self.cursor < len(self.points) - 1:
            wp = self.points[self.cursor]
            if math.hypot(wp[0] - position[0], wp[1] - position[1]) <= WAYPOINT_ADVANCE_RADIUS:
                self.cursor += 1
                passed += 1
            else:
                break
        return passed


class PlanKind(enum.Enum):
    NEW_PLAN = "new_plan"
    KEPT_OLD_PLAN = "kept_old_plan"
    NO_PATH = "no_path"


@dataclass(frozen=True)
class PlanOutcome:
    kind: PlanKind
    waypoints: Waypoints | None = None
    reason: str | None = None  # "infeasible" or "time-budget-exceeded"


class NoPathError(Exception):
    """Goal unreachable on the given costmap."""


class InvalidEndpointError(Exception):
    """Start or goal out of bounds or on a lethal cell."""


def shifted_center(ped: PedestrianEstimate, params: GaussianParams, resolution: float):
    """Gaussian center: the pedestrian, moved forward_shift cells along its heading."""
    shift = params.forward_shift * resolution
    return (
        ped.world_position[0] + shift * math.cos(ped.world_heading),
        ped.world_position[1] + shift * math.sin(ped.world_heading),
    )


def _distance_ratio(ped_distance: float, params: GaussianParams) -> float:
    if params.proximity_mode is ProximityMode.AS_WRITTEN:
        return max(ped_distance / params.max_distance, 1e-9)
    return min(max(1.0 - ped_distance / params.max_distance, 0.1), 1.0)


def gaussian_cost(query, ped: PedestrianEstimate, params: GaussianParams,
                  resolution: float = 0.1) -> float:
    """Cost contribution of one pedestrian at a world point, in [0, 1].

    Peaks at 1 on the shifted center and decays anisotropically: the spread is
    sigma_x = r*w_x along the heading and sigma_y = r*w_y across it, with r
    the distance ratio of the pedestrian.
    """
    cx, cy = shifted_center(ped, params, resolution)
    dx = query[0] - cx
    dy = query[1] - cy
    cos_h = math.cos(ped.world_heading)
    sin_h = math.sin(ped.world_heading)
    # (d_p cos(theta), d_p sin(theta)) == delta projected onto the heading frame
    along = dx * cos_h + dy * sin_h
    lateral = -dx * sin_h + dy * cos_h
    r = _distance_ratio(ped.distance, params)
    sigma_x = r * params.w_x
    sigma_y = r * params.w_y
    return params.amplitude * math.exp(
        -0.5 * ((along / sigma_x) ** 2 + (lateral / sigma_y) ** 2)
    )


def inflate_pedestrians(base: Costmap, peds, params: GaussianParams) -> Costmap:
    """Add weighted Gaussian pedestrian costs onto a copy of the base costmap.

    cost(cell) = base(cell) + W * sum_over_peds g(cell); lethal stays lethal.
    Contributions are truncated beyond 3 sigma_x of each shifted center
    (< 1.2% of the peak there).
    """
    if not peds:
        return base
    cost = base.cost.copy()
    res = base.resolution
    x0, y0 = base.origin
    xs = x0 + (np.arange(base.width) + 0.5) * res
    ys = y0 + (np.arange(base.height) + 0.5) * res
    for ped in peds:
        cx, cy = shifted_center(ped, params, res)
        r = _distance_ratio(ped.distance, params)
        sigma_x = r * params.w_x
        sigma_y = r * params.w_y
        cutoff = 3.0 * sigma_x
        ix_lo = max(0, int(math.floor((cx - cutoff - x0) / res)))
        ix_hi = min(base.width - 1, int(math.ceil((cx + cutoff - x0) / res)))
        iy_lo = max(0, int(math.floor((cy - cutoff - y0) / res)))
        iy_hi = min(base.height - 1, int(math.ceil((cy + cutoff - y0) / res)))
        if ix_lo > ix_hi or iy_lo > iy_hi:
            continue
        dx = xs[ix_lo : ix_hi + 1][None, :] - cx
        dy = ys[iy_lo : iy_hi + 1][:, None] - cy
        cos_h = math.cos(ped.world_heading)
        sin_h = math.sin(ped.world_heading)
        along = dx * cos_h + dy * sin_h
        lateral = -dx * sin_h + dy * cos_h
        g = params.amplitude * np.exp(
            -0.5 * ((along / sigma_x) ** 2 + (lateral / sigma_y) ** 2)
        )
        g[dx**2 + dy**2 > cutoff * cutoff] = 0.0
        cost[iy_lo : iy_hi + 1, ix_lo : ix_hi + 1] += params.ped_cost_weight * g
    return base.with_cost(cost)


def lethal_pedestrians(base: Costmap, peds, radius: float = 0.3) -> Costmap:
    """Baseline variant: stamp visible pedestrians as static lethal discs.

    ``radius`` is the full disc radius around each pedestrian center; the
    default matches the episode collision threshold.
    """
    if not peds:
        return base
    cost = base.cost.copy()
    res = base.resolution
    x0, y0 = base.origin
    for ped in peds:
        px, py = ped.world_position
        ix_lo = max(0, int(math.floor((px - radius - x0) / res)))
        ix_hi = min(base.width - 1, int(math.ceil((px + radius - x0) / res)))
        iy_lo = max(0, int(math.floor((py - radius - y0) / res)))
        iy_hi = min(base.height - 1, int(math.ceil((py + radius - y0) / res)))
        for iy in range(iy_lo, iy_hi + 1):
            cy = y0 + (iy + 0.5) * res
            for ix in range(ix_lo, ix_hi + 1):
                cx = x0 + (ix + 0.5) * res
                if (cx - px) ** 2 + (cy - py) ** 2 <= radius * radius:
                    cost[iy, ix] = math.inf
    return base.with_cost(cost)


_NEIGHBORS = (
    (1, 0, 1.0),
    (-1, 0, 1.0),
    (0, 1, 1.0),
    (0, -1, 1.0),
    (1, 1, SQRT2),
    (1, -1, SQRT2),
    (-1, 1, SQRT2),
    (-1, -1, SQRT2),
)


def plan_astar(costmap: Costmap, start, goal):
    """8-connected A* on the costmap; edge weight = step length x entered-cell cost.

    ``start`` and ``goal`` are world points. Returns the optimal cell path
    from start to goal inclusive; raises InvalidEndpointError / NoPathError.
    """
    try:
        s = costmap.world_to_cell(start)
        g = costmap.world_to_cell(goal)
    except OutOfBoundsError as exc:
        raise InvalidEndpointError(str(exc)) from exc
    if costmap.is_lethal(*s):
        raise InvalidEndpointError(f"start cell {s} is lethal")
    if costmap.is_lethal(*g):
        raise InvalidEndpointError(f"goal cell {g} is lethal")
    if s == g:
        return [s]

    # plain-python rows beat numpy scalar indexing in this inner loop
    cost_rows = costmap.cost.tolist()
    width, height = costmap.width, costmap.height
    gx, gy = g
    g_score = {s: 0.0}
    came_from = {}
    counter = 0
    heap = [(math.hypot(gx - s[0], gy - s[1]), counter, s)]
    closed = set()
    push = heapq.heappush
    pop = heapq.heappop
    hypot = math.hypot
    inf = math.inf
    while heap:
        _, _, current = pop(heap)
        if current == g:
            path = [current]
            while current in came_from:
                current = came_from[current]
                path.append(current)
            path.reverse()
            return path
        if current in closed:
            continue
        closed.add(current)
        cx, cy = current
        base = g_score[current]
        for dx, dy, step in _NEIGHBORS:
            nx = cx + dx
            ny = cy + dy
            if nx < 0 or nx >= width or ny < 0 or ny >= height:
                continue
            cell_cost = cost_rows[ny][nx]
            if cell_cost == inf:
                continue
            tentative = base + step * cell_cost
            node = (nx, ny)
            if tentative < g_score.get(node, inf):
                g_score[node] = tentative
                came_from[node] = current
                counter += 1
                push(heap, (tentative + hypot(gx - nx, gy - ny), counter, node))
    raise NoPathError(f"no path from cell {s} to cell {g}")


def path_cost(costmap: Costmap, path) -> float:
    """Total cost of a cell path under the planner's edge weighting."""
    total = []
    for (ax, ay), (bx, by) in zip(path, path[1:]):
        step = SQRT2 if ax != bx and ay != by else 1.0
        total.append(step * costmap.cost[by, bx])
    return math.fsum(total)


def path_length_meters(costmap: Costmap, path) -> float:
    res = costmap.resolution
    return math.fsum(
        res * (SQRT2 if ax != bx and ay != by else 1.0)
        for (ax, ay), (bx, by) in zip(path, path[1:])
    )


def extract_waypoints(path, costmap: Costmap, spacing: float = DEFAULT_WAYPOINT_SPACING) -> Waypoints:
    """Resample a cell path into waypoints every ``spacing`` meters of arc length.

    The goal is always the final waypoint; paths shorter than one spacing
    collapse to just the goal.
    """
    if not path:
        raise ValueError("empty path")
    pts = [np.asarray(costmap.cell_to_world(cell)) for cell in path]
    seg_lengths = [float(np.hypot(*(b - a))) for a, b in zip(pts, pts[1:])]
    total = math.fsum(seg_lengths)
    goal = pts[-1]
    if total < spacing:
        return Waypoints(points=[goal], spacing=spacing)

    points = []
    target = 0.0
    walked = 0.0
    seg_idx = 0
    while target < total:
        while seg_idx < len(seg_lengths) and walked + seg_lengths[seg_idx] < target:
            walked += seg_lengths[seg_idx]
            seg_idx += 1
        if seg_idx >= len(seg_lengths):
            break
        frac = (target - walked) / seg_lengths[seg_idx] if seg_lengths[seg_idx] > 0 else 0.0
        points.append(pts[seg_idx] + frac * (pts[seg_idx + 1] - pts[seg_idx]))
        target += spacing
    points.append(goal)
    return Waypoints(points=points, spacing=spacing)


def should_replan(wp: Waypoints, visible) -> bool:
    """True when any visible pedestrian sits within 0.5 m of an upcoming waypoint."""
    for ped in visible:
        px, py = ped.world_position
        for point in wp.remaining():
            if math.hypot(point[0] - px, point[1] - py) <= REPLAN_TRIGGER_DISTANCE:
                return True
    return False


def replan_or_keep(
    old: Waypoints,
    costmap_with_peds: Costmap,
    robot_position,
    goal,
    steps_remaining: int,
    dt: float,
    v_max: float,
) -> PlanOutcome:
    """Try to replan on the pedestrian-inflated map; keep the old path when the
    new one is infeasible or cannot be finished in the remaining time."""
    try:
        path = plan_astar(costmap_with_peds, robot_position, goal)
    except (NoPathError, InvalidEndpointError):
        return PlanOutcome(kind=PlanKind.KEPT_OLD_PLAN, waypoints=old, reason="infeasible")
    travel_time = path_length_meters(costmap_with_peds, path) / v_max
    if travel_time > steps_remaining * dt:
        return PlanOutcome(
            kind=PlanKind.KEPT_OLD_PLAN, waypoints=old, reason="time-budget-exceeded"
        )
    fresh = extract_waypoints(path, costmap_with_peds, old.spacing)
    return PlanOutcome(kind=PlanKind.NEW_PLAN, waypoints=fresh)


# ------------------------------------------------------------------ dumps

COSTMAP_DUMP_HEADER = "socnav2d-costmap 1"


def dump_costmap(costmap: Costmap, fh, peds=(), waypoints=None, path=()) -> None:
    """Write a costmap (plus optional markers) in the portable text format."""
    fh.write(f"{COSTMAP_DUMP_HEADER}\n")
    fh.write(f"width {costmap.width}\n")
    fh.write(f"height {costmap.height}\n")
    fh.write(f"resolution {costmap.resolution!r}\n")
    fh.write(f"origin {costmap.origin[0]!r} {costmap.origin[1]!r}\n")
    for iy in range(costmap.height):
        row = " ".join(
            "inf" if not math.isfinite(v) else repr(float(v)) for v in costmap.cost[iy]
        )
        fh.write(row + "\n")
    for ped in peds:
        fh.write(
            f"ped {float(ped.world_position[0])!r} {float(ped.world_position[1])!r}"
            f" {float(ped.world_heading)!r}\n"
        )
    if waypoints is not None:
        for point in waypoints.points:
            fh.write(f"waypoint {float(point[0])!r} {float(point[1])!r}\n")
    for x, y in path:
        fh.write(f"path {float(x)!r} {float(y)!r}\n")


def load_costmap_dump(fh):
    """Parse a costmap dump; returns (Costmap, peds, waypoints, path)."""
    header = fh.readline().strip()
    if header != COSTMAP_DUMP_HEADER:
        raise ValueError(f"not a costmap dump (header {header!r})")
    meta = {}
    for _ in range(4):
        key, _, value = fh.readline().strip().partition(" ")
        meta[key] = value
    width = int(meta["width"])
    height = int(meta["height"])
    resolution = float(meta["resolution"])
    ox, oy = (float(v) for v in meta["origin"].split())
    rows = []
    for _ in range(height):
        rows.append([float(tok) for tok in fh.readline().split()])
    cost = np.array(rows, dtype=np.float64)
    if cost.shape != (height, width):
        raise ValueError("costmap dump grid has wrong shape")
    peds = []
    waypoints = []
    path = []
    for line in fh:
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "ped":
            peds.append((float(parts[1]), float(parts[2]), float(parts[3])))
        elif parts[0] == "waypoint":
            waypoints.append((float(parts[1]), float(parts[2])))
        elif parts[0] == "path":
            path.append((float(parts[1]), float(parts[2])))
        else:
            raise ValueError(f"unknown costmap dump record {parts[0]!r}")
    return Costmap(cost=cost, resolution=resolution, origin=(ox, oy)), peds, waypoints, path
