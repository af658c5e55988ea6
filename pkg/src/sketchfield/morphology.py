"""Binary morphology on boolean (H, W) grids.

Structuring elements are Euclidean disks: offset (dx, dy) belongs to
disk(r) iff dx*dx + dy*dy <= r*r. disk(1) is the 4-neighbourhood plus
centre, disk(1.5) the full 3x3 square, disk(2) the 13-pixel disc.
"""

from __future__ import annotations

from collections import deque

import numpy as np


def disk_offsets(radius: float) -> list[tuple[int, int]]:
    r = int(np.floor(radius))
    out = []
    for dy in range(-r, r + 1):
        for dx in range(-r, r + 1):
            if dx * dx + dy * dy <= radius * radius + 1e-9:
                out.append((dx, dy))
    return out


def _shift(grid: np.ndarray, dx: int, dy: int, fill: bool) -> np.ndarray:
    h, w = grid.shape
    out = np.full((h, w), fill, dtype=bool)
    ys = slice(max(0, dy), min(h, h + dy))
    xs = slice(max(0, dx), min(w, w + dx))
    ys_src = slice(max(0, -dy), min(h, h - dy))
    xs_src = slice(max(0, -dx), min(w, w - dx))
    out[ys, xs] = grid[ys_src, xs_src]
    return out


def dilate(grid: np.ndarray, radius: float) -> np.ndarray:
    """Union of the grid translated by every disk offset."""
    out = np.zeros_like(grid, dtype=bool)
    for dx, dy in disk_offsets(radius):
        out |= _shift(grid, dx, dy, fill=False)
    return out


def erode(grid: np.ndarray, radius: float, border_value: bool = True) -> np.ndarray:
    """Intersection over disk offsets; `border_value` fills beyond the edge."""
    out = np.ones_like(grid, dtype=bool)
    for dx, dy in disk_offsets(radius):
        out &= _shift(grid, dx, dy, fill=border_value)
    return out


def flood_fill(blocked: np.ndarray, seeds: list[tuple[int, int]]) -> np.ndarray:
    """4-connected reachability from seed (x, y) pixels over non-blocked cells."""
    h, w = blocked.shape
    reached = np.zeros((h, w), dtype=bool)
    queue = deque()
    for x, y in seeds:
        if 0 <= x < w and 0 <= y < h and not blocked[y, x] and not reached[y, x]:
            reached[y, x] = True
            queue.append((x, y))
    while queue:
        x, y = queue.popleft()
        for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
            if 0 <= nx < w and 0 <= ny < h and not blocked[ny, nx] and not reached[ny, nx]:
                reached[ny, nx] = True
                queue.append((nx, ny))
    return reached


def connected_components_4(grid: np.ndarray) -> list[np.ndarray]:
    """Boolean mask per 4-connected true component, discovery order."""
    h, w = grid.shape
    seen = np.zeros_like(grid, dtype=bool)
    comps = []
    for sy in range(h):
        for sx in range(w):
            if grid[sy, sx] and not seen[sy, sx]:
                comp = np.zeros_like(grid, dtype=bool)
                stack = [(sx, sy)]
                seen[sy, sx] = comp[sy, sx] = True
                while stack:
                    x, y = stack.pop()
                    for nx, ny in ((x - 1, y), (x + 1, y), (x, y - 1), (x, y + 1)):
                        if 0 <= nx < w and 0 <= ny < h and grid[ny, nx] and not seen[ny, nx]:
                            seen[ny, nx] = comp[ny, nx] = True
                            stack.append((nx, ny))
                comps.append(comp)
    return comps


def has_holes(region: np.ndarray) -> bool:
    """True if some background pixel cannot reach the border 4-connectedly."""
    h, w = region.shape
    seeds = [(x, 0) for x in range(w)] + [(x, h - 1) for x in range(w)]
    seeds += [(0, y) for y in range(h)] + [(w - 1, y) for y in range(h)]
    outside = flood_fill(region, seeds)
    return bool((~region & ~outside).any())


def boundary_pixels(region: np.ndarray) -> np.ndarray:
    """Region pixels with at least one 4-neighbour outside the region."""
    interior = erode(region, 1.0, border_value=False)
    return region & ~interior
