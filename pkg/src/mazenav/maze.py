"""Deterministic grid-maze simulator with egocentric raycast rendering.

The maze is a rectangular grid of unit cells, each free or wall. The agent
occupies a free cell with one of four headings and observes a W-ray color
strip cast over a 90-degree field of view. Wall colors come from a seeded
palette so that different places look different.
"""
from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass
from enum import IntEnum

import numpy as np

from .errors import DisconnectedMap, MissingStart, ParseError

DEFAULT_RAYS = 64
FOV_DEGREES = 90.0

# heading -> unit direction, headings in degrees {0, 90, 180, 270}
_HEADING_VECS = {0: (1, 0), 90: (0, 1), 180: (-1, 0), 270: (0, -1)}


class Action(IntEnum):
    FORWARD = 0
    TURN_LEFT = 1
    TURN_RIGHT = 2


@dataclass(frozen=True)
class Pose:
    x: int
    y: int
    heading: int  # degrees, one of 0/90/180/270


@dataclass(frozen=True)
class MazeMap:
    width: int
    height: int
    occupancy: np.ndarray  # bool (height, width), True = wall
    wall_palette: np.ndarray  # float64 (height, width, 3) in [0, 1]
    start_pose: Pose
    map_seed: int

    def is_wall(self, x: int, y: int) -> bool:
        return bool(self.occupancy[y, x])

    def is_free(self, x: int, y: int) -> bool:
        if not (0 <= x < self.width and 0 <= y < self.height):
            return False
        return not self.occupancy[y, x]

    def free_cells(self) -> list[tuple[int, int]]:
        ys, xs = np.where(~self.occupancy)
        return list(zip(xs.tolist(), ys.tolist()))


def _palette_for(map_seed: int, occupancy: np.ndarray) -> np.ndarray:
    height, width = occupancy.shape
    palette = np.zeros((height, width, 3), dtype=np.float64)
    for y in range(height):
        for x in range(width):
            if occupancy[y, x]:
                rng = np.random.default_rng([map_seed, x, y])
                palette[y, x] = rng.random(3)
    return palette


def load_map(text: str, map_seed: int) -> MazeMap:
    """Parse an ASCII map document and validate it.

    Grammar: '#' wall, '.' free, 'S' start (exactly one); rows rectangular,
    border all '#'.
    """
    rows = [line for line in text.splitlines() if line != ""]
    if not rows:
        raise ParseError("empty map document")
    width = len(rows[0])
    if any(len(r) != width for r in rows):
        raise ParseError("ragged rows")
    height = len(rows)
    if width < 3 or height < 3:
        raise ParseError("map too small")

    occupancy = np.zeros((height, width), dtype=bool)
    start: tuple[int, int] | None = None
    for y, row in enumerate(rows):
        for x, ch in enumerate(row):
            if ch == "#":
                occupancy[y, x] = True
            elif ch == ".":
                pass
            elif ch == "S":
                if start is not None:
                    raise ParseError("multiple start markers")
                start = (x, y)
            else:
                raise ParseError(f"bad character {ch!r} at row {y}, col {x}")
    if start is None:
        raise MissingStart("no start marker")

    border = np.concatenate(
        [occupancy[0, :], occupancy[-1, :], occupancy[:, 0], occupancy[:, -1]]
    )
    if not border.all():
        raise ParseError("border must be all walls")

    # connectivity: BFS from start over free cells
    seen = {start}
    queue = deque([start])
    while queue:
        cx, cy = queue.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = (cx + dx, cy + dy)
            if nxt not in seen and not occupancy[nxt[1], nxt[0]]:
                seen.add(nxt)
                queue.append(nxt)
    n_free = int((~occupancy).sum())
    if len(seen) != n_free:
        raise DisconnectedMap(f"{n_free - len(seen)} free cells unreachable from start")

    palette = _palette_for(map_seed, occupancy)
    palette.setflags(write=False)
    occupancy.setflags(write=False)
    return MazeMap(
        width=width,
        height=height,
        occupancy=occupancy,
        wall_palette=palette,
        start_pose=Pose(start[0], start[1], 0),
        map_seed=map_seed,
    )


def step(maze: MazeMap, pose: Pose, action: Action) -> Pose:
    """Apply one action; blocked forward moves are silent no-ops."""
    if action == Action.TURN_LEFT:
        return Pose(pose.x, pose.y, (pose.heading + 90) % 360)
    if action == Action.TURN_RIGHT:
        return Pose(pose.x, pose.y, (pose.heading - 90) % 360)
    dx, dy = _HEADING_VECS[pose.heading]
    nx, ny = pose.x + dx, pose.y + dy
    if maze.is_free(nx, ny):
        return Pose(nx, ny, pose.heading)
    return pose


def _cast_ray(maze: MazeMap, ox: float, oy: float, angle: float) -> tuple[int, int, float]:
    """Voxel traversal; returns (wall_x, wall_y, d) where d is the ray length
    from the agent cell's boundary to the wall entry point."""
    dx = math.cos(angle)
    dy = math.sin(angle)
    x, y = int(ox), int(oy)
    step_x = 1 if dx > 0 else -1
    step_y = 1 if dy > 0 else -1
    inv_dx = abs(1.0 / dx) if dx != 0.0 else math.inf
    inv_dy = abs(1.0 / dy) if dy != 0.0 else math.inf
    # distance along the ray to the first x/y gridline crossing
    if dx > 0:
        t_max_x = (math.floor(ox) + 1.0 - ox) * inv_dx
    elif dx < 0:
        t_max_x = (ox - math.floor(ox)) * inv_dx
    else:
        t_max_x = math.inf
    if dy > 0:
        t_max_y = (math.floor(oy) + 1.0 - oy) * inv_dy
    elif dy < 0:
        t_max_y = (oy - math.floor(oy)) * inv_dy
    else:
        t_max_y = math.inf

    t_exit = None  # distance at which the ray leaves the agent's own cell
    while True:
        if t_max_x <= t_max_y:
            t = t_max_x
            t_max_x += inv_dx
            x += step_x
        else:
            t = t_max_y
            t_max_y += inv_dy
            y += step_y
        if t_exit is None:
            t_exit = t
        if maze.is_wall(x, y):
            return x, y, t - t_exit


def render(maze: MazeMap, pose: Pose, n_rays: int = DEFAULT_RAYS) -> np.ndarray:
    """Egocentric color strip: (n_rays, 3) float64 in [0, 1].

    Rays sweep the 90-degree field of view centered on the heading; each ray
    returns the color of the first wall hit, shaded by 1/(1+d).
    """
    ox = pose.x + 0.5
    oy = pose.y + 0.5
    base = math.radians(pose.heading)
    half = math.radians(FOV_DEGREES / 2.0)
    angles = base + np.linspace(-half, half, n_rays)
    strip = np.zeros((n_rays, 3), dtype=np.float64)
    for i, angle in enumerate(angles):
        wx, wy, dist = _cast_ray(maze, ox, oy, float(angle))
        strip[i] = maze.wall_palette[wy, wx] / (1.0 + dist)
    return strip


def oracle_distance(maze: MazeMap, a: Pose, b: Pose) -> int:
    """Grid shortest-path length in cells (4-connected BFS), heading ignored.

    Evaluation/baseline use only; never exposed to self-supervised training.
    """
    src = (a.x, a.y)
    dst = (b.x, b.y)
    if src == dst:
        return 0
    dist = {src: 0}
    queue = deque([src])
    while queue:
        cx, cy = queue.popleft()
        for dx, dy in ((1, 0), (-1, 0), (0, 1), (0, -1)):
            nxt = (cx + dx, cy + dy)
            if nxt not in dist and maze.is_free(*nxt):
                dist[nxt] = dist[(cx, cy)] + 1
                if nxt == dst:
                    return dist[nxt]
                queue.append(nxt)
    raise AssertionError("free cells are connected by construction")


def all_poses(maze: MazeMap) -> list[Pose]:
    return [Pose(x, y, h) for (x, y) in maze.free_cells() for h in (0, 90, 180, 270)]


def render_table(maze: MazeMap, n_rays: int = DEFAULT_RAYS) -> dict[Pose, np.ndarray]:
    """Precomputed render for every (free cell, heading); maps are immutable
    so this is a pure cache used by the training loops."""
    return {p: render(maze, p, n_rays) for p in all_poses(maze)}
