"""Footstep planning: occupancy-grid body path search plus step sequencing.

Planning runs in two stages.  First an 8-connected A* finds a collision-free
body path over an inflated occupancy grid.  Second, a greedy follower turns
the path into an alternating left/right footstep sequence using a fixed step
distance and a bounded per-step turn.
"""

from __future__ import annotations

import heapq
import json
import math
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

DEFAULT_CELL_SIZE = 0.1
DEFAULT_STEP_DISTANCE = 0.1
DEFAULT_SIGMA_MAX = math.radians(20.0)
DEFAULT_LOOKAHEAD_CELLS = 3
DEFAULT_STEP_WIDTH = 0.2

_SQRT2 = math.sqrt(2.0)
_NEIGHBORS = ((-1, 0), (1, 0), (0, -1), (0, 1), (-1, -1), (-1, 1), (1, -1), (1, 1))


class PlanningError(RuntimeError):
    """No admissible path or footstep sequence exists for the request."""


def wrap_angle(a: float) -> float:
    """Wrap an angle to (-pi, pi]."""
    a = math.fmod(a, 2.0 * math.pi)
    if a > math.pi:
        a -= 2.0 * math.pi
    elif a <= -math.pi:
        a += 2.0 * math.pi
    return a


@dataclass(frozen=True)
class GridMap:
    """Boolean occupancy grid.  ``occupancy[r, c]`` is True for blocked cells."""

    width: int
    height: int
    occupancy: np.ndarray
    cell_size: float = DEFAULT_CELL_SIZE
    inflation_scale: float = 1.1

    def __post_init__(self) -> None:
        if self.cell_size <= 0.0:
            raise ValueError("cell_size must be positive")
        if self.occupancy.shape != (self.height, self.width):
            raise ValueError("occupancy shape must be (height, width)")
        if self.inflation_scale < 1.0:
            raise ValueError("inflation_scale must be >= 1")

    @classmethod
    def empty(cls, width: int, height: int, cell_size: float = DEFAULT_CELL_SIZE,
              inflation_scale: float = 1.1) -> "GridMap":
        return cls(width, height, np.zeros((height, width), dtype=bool), cell_size, inflation_scale)

    def with_block(self, r0: int, c0: int, r1: int, c1: int) -> "GridMap":
        """Copy of the map with the inclusive cell rectangle marked occupied."""
        occ = self.occupancy.copy()
        occ[r0:r1 + 1, c0:c1 + 1] = True
        return replace(self, occupancy=occ)

    def cell_center(self, cell) -> np.ndarray:
        r, c = cell
        return np.array([(c + 0.5) * self.cell_size, (r + 0.5) * self.cell_size])

    def world_to_cell(self, xy) -> tuple[int, int]:
        return int(math.floor(xy[1] / self.cell_size)), int(math.floor(xy[0] / self.cell_size))

    def in_bounds(self, cell) -> bool:
        r, c = cell
        return 0 <= r < self.height and 0 <= c < self.width

    def is_free(self, cell) -> bool:
        return self.in_bounds(cell) and not self.occupancy[cell[0], cell[1]]


def load_map(source) -> tuple[GridMap, tuple[int, int] | None, tuple[int, int] | None]:
    """Load a map from a JSON file path or an already-parsed dict.

    Schema: ``{width, height, cell_size, occupied: [[r, c], ...],
    start: [r, c], goal: [r, c]}`` with start/goal optional.
    """
    if isinstance(source, (str, Path)):
        data = json.loads(Path(source).read_text())
    else:
        data = source
    occ = np.zeros((data["height"], data["width"]), dtype=bool)
    for r, c in data.get("occupied", []):
        occ[r, c] = True
    grid = GridMap(
        width=data["width"],
        height=data["height"],
        occupancy=occ,
        cell_size=data.get("cell_size", DEFAULT_CELL_SIZE),
        inflation_scale=data.get("inflation_scale", 1.1),
    )
    start = tuple(data["start"]) if "start" in data else None
    goal = tuple(data["goal"]) if "goal" in data else None
    return grid, start, goal


def save_map(grid: GridMap, path, start=None, goal=None) -> None:
    data = {
        "width": grid.width,
        "height": grid.height,
        "cell_size": grid.cell_size,
        "inflation_scale": grid.inflation_scale,
        "occupied": [[int(r), int(c)] for r, c in np.argwhere(grid.occupancy)],
    }
    if start is not None:
        data["start"] = [int(start[0]), int(start[1])]
    if goal is not None:
        data["goal"] = [int(goal[0]), int(goal[1])]
    Path(path).write_text(json.dumps(data, indent=2))


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def inflate(grid: GridMap) -> GridMap:
    """Grow every connected obstacle so its bounding box scales about its centroid.

    The scaled extent is rounded to whole cells (half up), growth is split as
    evenly as possible between the two sides, and the result is clipped to the
    map.  Components are dilated through their bounding boxes, which is exact
    for rectangular obstacles and conservative otherwise.
    """
    occ = grid.occupancy
    out = occ.copy()
    seen = np.zeros_like(occ)
    for r0 in range(grid.height):
        for c0 in range(grid.width):
            if not occ[r0, c0] or seen[r0, c0]:
                continue
            stack = [(r0, c0)]
            seen[r0, c0] = True
            cells = []
            while stack:
                r, c = stack.pop()
                cells.append((r, c))
                for dr, dc in _NEIGHBORS:
                    nr, nc = r + dr, c + dc
                    if grid.in_bounds((nr, nc)) and occ[nr, nc] and not seen[nr, nc]:
                        seen[nr, nc] = True
                        stack.append((nr, nc))
            rows = [c[0] for c in cells]
            cols = [c[1] for c in cells]
            for lo, hi, limit, axis in ((min(rows), max(rows), grid.height, 0),
                                        (min(cols), max(cols), grid.width, 1)):
                extent = hi - lo + 1
                grown = max(extent, _round_half_up(extent * grid.inflation_scale))
                pad_lo = (grown - extent) // 2
                pad_hi = grown - extent - pad_lo
                if axis == 0:
                    out[max(0, min(rows) - pad_lo):min(limit, max(rows) + pad_hi + 1),
                        min(cols):max(cols) + 1] = True
                else:
                    out[min(rows):max(rows) + 1,
                        max(0, min(cols) - pad_lo):min(limit, max(cols) + pad_hi + 1)] = True
    if not np.all(out[occ]):
        raise AssertionError("inflated obstacle set must contain the raw set")
    return replace(grid, occupancy=out)


def plan_path(grid: GridMap, start, goal) -> list[tuple[int, int]]:
    """Minimal-cost 8-connected path from start to goal over free cells.

    Axis moves cost ``cell_size`` and diagonals ``cell_size * sqrt(2)``;
    diagonal moves are allowed only when both adjacent axis cells are free.
    The Euclidean distance to the goal guides the search and ties break on
    (f, h, row-major index), making the result deterministic.
    """
    start = (int(start[0]), int(start[1]))
    goal = (int(goal[0]), int(goal[1]))
    for name, cell in (("start", start), ("goal", goal)):
        if not grid.is_free(cell):
            raise PlanningError(f"{name} cell {cell} is not free")
    occ = grid.occupancy
    cs = grid.cell_size

    def heuristic(cell):
        return cs * math.hypot(cell[0] - goal[0], cell[1] - goal[1])

    g_cost = {start: 0.0}
    parent: dict[tuple[int, int], tuple[int, int]] = {}
    h0 = heuristic(start)
    heap = [(h0, h0, start[0] * grid.width + start[1], start)]
    closed = set()
    while heap:
        f, h, _, cell = heapq.heappop(heap)
        if cell in closed:
            continue
        if cell == goal:
            path = [cell]
            while cell in parent:
                cell = parent[cell]
                path.append(cell)
            return path[::-1]
        closed.add(cell)
        r, c = cell
        for dr, dc in _NEIGHBORS:
            nr, nc = r + dr, c + dc
            nxt = (nr, nc)
            if not grid.in_bounds(nxt) or occ[nr, nc] or nxt in closed:
                continue
            if dr and dc and (occ[r + dr, c] or occ[r, c + dc]):
                continue
            step = cs * _SQRT2 if dr and dc else cs
            cand = g_cost[cell] + step
            if cand < g_cost.get(nxt, math.inf) - 1e-12:
                g_cost[nxt] = cand
                parent[nxt] = cell
                hn = heuristic(nxt)
                heapq.heappush(heap, (cand + hn, hn, nr * grid.width + nc, nxt))
    raise PlanningError(
        f"goal {goal} unreachable from {start}: {len(g_cost)} of "
        f"{int(np.sum(~occ))} free cells reachable")


def path_cost(grid: GridMap, path) -> float:
    cost = 0.0
    for a, b in zip(path, path[1:]):
        dr, dc = abs(a[0] - b[0]), abs(a[1] - b[1])
        cost += grid.cell_size * (_SQRT2 if dr and dc else 1.0)
    return cost


@dataclass(frozen=True)
class FeetState:
    """Pose of both feet plus swing flags (+1 = swing foot, -1 = support)."""

    x_l: float
    y_l: float
    theta_l: float
    phi_l: int
    x_r: float
    y_r: float
    theta_r: float
    phi_r: int

    def __post_init__(self) -> None:
        if self.phi_l not in (-1, 1) or self.phi_r != -self.phi_l:
            raise ValueError("swing flags must be +1/-1 and opposite")

    @property
    def swing_is_left(self) -> bool:
        return self.phi_l == 1

    def left(self) -> np.ndarray:
        return np.array([self.x_l, self.y_l])

    def right(self) -> np.ndarray:
        return np.array([self.x_r, self.y_r])

    def midpoint(self) -> np.ndarray:
        return 0.5 * (self.left() + self.right())


@dataclass(frozen=True)
class StepAction:
    """One step: travel ``distance`` at the swing heading turned by ``angle``."""

    distance: float = DEFAULT_STEP_DISTANCE
    angle: float = 0.0

    def __post_init__(self) -> None:
        if self.distance <= 0.0:
            raise ValueError("step distance must be positive")


def transition(state: FeetState, action: StepAction,
               sigma_max: float = DEFAULT_SIGMA_MAX) -> FeetState:
    """Apply one step: the swing foot moves ``distance`` along its heading
    turned by ``angle``, its heading updates, and the swing flags toggle."""
    if abs(action.angle) > sigma_max + 1e-12:
        raise ValueError(f"step angle {action.angle:.3f} exceeds limit {sigma_max:.3f}")
    if state.swing_is_left:
        heading = state.theta_l + action.angle
        return FeetState(
            x_l=state.x_l + action.distance * math.cos(heading),
            y_l=state.y_l + action.distance * math.sin(heading),
            theta_l=heading, phi_l=-1,
            x_r=state.x_r, y_r=state.y_r, theta_r=state.theta_r, phi_r=1,
        )
    heading = state.theta_r + action.angle
    return FeetState(
        x_l=state.x_l, y_l=state.y_l, theta_l=state.theta_l, phi_l=1,
        x_r=state.x_r + action.distance * math.cos(heading),
        y_r=state.y_r + action.distance * math.sin(heading),
        theta_r=heading, phi_r=-1,
    )


@dataclass(frozen=True)
class Footprint:
    x: float
    y: float
    theta: float
    side: str              # "L" or "R"
    closing: bool = False  # terminal alignment step, exempt from the fixed length

    def xy(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class FootstepPlan:
    """Ordered footprints.  The first two entries are the initial stance
    (first-swing foot's home, then the first support foot); each later entry
    is a new placement.  Step i is supported by ``footprints[i + 1]`` while
    the foot that last stood at ``footprints[i]`` swings to
    ``footprints[i + 2]``.

    ``step_distance`` pins the per-foot displacement of planner output;
    ``None`` skips that check for externally synthesized sequences.
    """

    footprints: tuple[Footprint, ...]
    step_distance: float | None = DEFAULT_STEP_DISTANCE

    def __post_init__(self) -> None:
        fps = self.footprints
        if len(fps) < 2:
            raise ValueError("a plan needs at least the two initial footprints")
        for a, b in zip(fps, fps[1:]):
            if a.side == b.side:
                raise ValueError("footprint sides must alternate")
        if self.step_distance is None:
            return
        for a, b in zip(fps, fps[2:]):
            if b.closing:
                continue
            moved = math.hypot(b.x - a.x, b.y - a.y)
            if abs(moved - self.step_distance) > 1e-9:
                raise ValueError(
                    f"step displacement {moved!r} differs from {self.step_distance!r}")

    @property
    def n_steps(self) -> int:
        return len(self.footprints) - 2

    def support(self, i: int) -> Footprint:
        return self.footprints[i + 1]

    def swing_from(self, i: int) -> Footprint:
        return self.footprints[i]

    def swing_to(self, i: int) -> Footprint:
        return self.footprints[i + 2]

    def truncated(self, n_steps: int) -> "FootstepPlan":
        if n_steps >= self.n_steps:
            return self
        return FootstepPlan(self.footprints[:n_steps + 2], self.step_distance)

    def to_json(self) -> dict:
        return {
            "step_distance": self.step_distance,
            "footprints": [
                {"x": f.x, "y": f.y, "theta": f.theta, "side": f.side, "closing": f.closing}
                for f in self.footprints
            ],
        }

    @classmethod
    def from_json(cls, data: dict) -> "FootstepPlan":
        fps = tuple(Footprint(**f) for f in data["footprints"])
        return cls(fps, data.get("step_distance", DEFAULT_STEP_DISTANCE))


def _as_footprint(state: FeetState, side: str, closing: bool = False) -> Footprint:
    if side == "L":
        return Footprint(state.x_l, state.y_l, state.theta_l, "L", closing)
    return Footprint(state.x_r, state.y_r, state.theta_r, "R", closing)


def footsteps_from_path(path_xy, initial: FeetState,
                        step_distance: float = DEFAULT_STEP_DISTANCE,
                        sigma_max: float = DEFAULT_SIGMA_MAX,
                        lookahead: float = DEFAULT_LOOKAHEAD_CELLS * DEFAULT_CELL_SIZE,
                        grid: GridMap | None = None) -> FootstepPlan:
    """Follow a world-frame waypoint sequence with alternating steps.

    Each step turns the swing heading toward the furthest waypoint within the
    lookahead distance of the feet midpoint (clamped to ``sigma_max``) and
    advances the swing foot by ``step_distance``.  Two closing steps bring the
    feet side by side near the final waypoint.  When a grid is supplied every
    placement is checked against it.
    """
    pts = np.atleast_2d(np.asarray(path_xy, dtype=float))
    if pts.shape[0] == 0:
        raise PlanningError("path is empty")
    goal = pts[-1]

    def check(f: Footprint) -> Footprint:
        if grid is not None and not grid.is_free(grid.world_to_cell((f.x, f.y))):
            raise PlanningError(f"footprint {f.side} at ({f.x:.2f}, {f.y:.2f}) is in collision")
        return f

    state = initial
    first_swing = "L" if state.swing_is_left else "R"
    first_support = "R" if first_swing == "L" else "L"
    prints = [check(_as_footprint(state, first_swing)),
              check(_as_footprint(state, first_support))]
    step_width = float(np.linalg.norm(state.left() - state.right()))

    max_total = int(20 * (np.sum(np.linalg.norm(np.diff(pts, axis=0), axis=1)) / step_distance + 10))
    for _ in range(max_total):
        mid = state.midpoint()
        if np.linalg.norm(goal - mid) <= 0.6 * step_distance:
            break
        dists = np.linalg.norm(pts - mid, axis=1)
        near = np.flatnonzero(dists <= lookahead)
        target = pts[near[-1]] if near.size else pts[int(np.argmin(dists))]
        if np.allclose(target, mid):
            target = goal
        heading = state.theta_l if state.swing_is_left else state.theta_r
        desired = math.atan2(target[1] - mid[1], target[0] - mid[0])
        sigma = max(-sigma_max, min(sigma_max, wrap_angle(desired - heading)))
        moving = "L" if state.swing_is_left else "R"
        state = transition(state, StepAction(step_distance, sigma), sigma_max)
        prints.append(check(_as_footprint(state, moving)))
    else:
        raise PlanningError("step budget exhausted before reaching the goal")

    for _ in range(2):
        moving = "L" if state.swing_is_left else "R"
        if state.swing_is_left:
            sup = state.right()
            heading = state.theta_r
            offset = np.array([-math.sin(heading), math.cos(heading)]) * step_width
            state = FeetState(x_l=sup[0] + offset[0], y_l=sup[1] + offset[1],
                              theta_l=heading, phi_l=-1,
                              x_r=state.x_r, y_r=state.y_r, theta_r=heading, phi_r=1)
        else:
            sup = state.left()
            heading = state.theta_l
            offset = np.array([math.sin(heading), -math.cos(heading)]) * step_width
            state = FeetState(x_l=state.x_l, y_l=state.y_l, theta_l=heading, phi_l=1,
                              x_r=sup[0] + offset[0], y_r=sup[1] + offset[1],
                              theta_r=heading, phi_r=-1)
        prints.append(check(_as_footprint(state, moving, closing=True)))
    return FootstepPlan(tuple(prints), step_distance)


def initial_feet_on_path(path_xy, step_width: float = DEFAULT_STEP_WIDTH,
                         swing_first: str = "R") -> FeetState:
    """Stand astride the first waypoint, heading along the path."""
    pts = np.atleast_2d(np.asarray(path_xy, dtype=float))
    start = pts[0]
    direction = pts[-1] - pts[0]
    for p in pts[1:]:
        if np.linalg.norm(p - start) > 1e-9:
            direction = p - start
            break
    heading = math.atan2(direction[1], direction[0]) if np.linalg.norm(direction) > 1e-12 else 0.0
    lateral = np.array([-math.sin(heading), math.cos(heading)]) * (step_width / 2.0)
    left = start + lateral
    right = start - lateral
    phi_l = 1 if swing_first == "L" else -1
    return FeetState(x_l=left[0], y_l=left[1], theta_l=heading, phi_l=phi_l,
                     x_r=right[0], y_r=right[1], theta_r=heading, phi_r=-phi_l)


def pad_obstacles(grid: GridMap, margin_cells: int) -> GridMap:
    """Chebyshev dilation of the occupied set by a whole number of cells."""
    if margin_cells <= 0:
        return grid
    occ = grid.occupancy
    out = occ.copy()
    for dr in range(-margin_cells, margin_cells + 1):
        for dc in range(-margin_cells, margin_cells + 1):
            if dr == 0 and dc == 0:
                continue
            shifted = np.zeros_like(occ)
            rs = slice(max(0, dr), min(grid.height, grid.height + dr))
            rd = slice(max(0, -dr), min(grid.height, grid.height - dr))
            cs = slice(max(0, dc), min(grid.width, grid.width + dc))
            cd = slice(max(0, -dc), min(grid.width, grid.width - dc))
            shifted[rd, cd] = occ[rs, cs]
            out |= shifted
    return replace(grid, occupancy=out)


def plan_footsteps(grid: GridMap, start_cell, goal_cell,
                   step_distance: float = DEFAULT_STEP_DISTANCE,
                   step_width: float = DEFAULT_STEP_WIDTH,
                   sigma_max: float = DEFAULT_SIGMA_MAX) -> tuple[FootstepPlan, list]:
    """Full pipeline: inflate the map, search a body path, place footsteps.

    The body path is searched on a copy of the inflated map padded by half the
    stance width (rounded up to whole cells) so that footprints straddling the
    path stay on free cells of the inflated map.
    """
    inflated = inflate(grid)
    margin = int(math.ceil((step_width / 2.0 + grid.cell_size / 2.0) / grid.cell_size))
    body_map = pad_obstacles(inflated, margin)
    cells = plan_path(body_map, start_cell, goal_cell)
    pts = [inflated.cell_center(c) for c in cells]
    initial = initial_feet_on_path(pts, step_width)
    plan = footsteps_from_path(
        pts, initial, step_distance, sigma_max,
        lookahead=DEFAULT_LOOKAHEAD_CELLS * grid.cell_size, grid=inflated)
    return plan, cells
