"""Brute-force BFS component labeling used as an oracle."""

from collections import deque
from itertools import product

import numpy as np


def offsets(connectivity):
    out = []
    for d in product((-1, 0, 1), repeat=3):
        nz = sum(v != 0 for v in d)
        if nz == 0:
            continue
        if connectivity == 6 and nz > 1:
            continue
        if connectivity == 18 and nz > 2:
            continue
        out.append(d)
    return out


def flood_fill_labels(mask, connectivity):
    """Labels assigned in first-visit order of an x-fastest scan."""
    mask = np.asarray(mask, dtype=bool)
    X, Y, Z = mask.shape
    labels = np.zeros(mask.shape, dtype=np.int64)
    nbrs = offsets(connectivity)
    current = 0
    for z in range(Z):
        for y in range(Y):
            for x in range(X):
                if not mask[x, y, z] or labels[x, y, z]:
                    continue
                current += 1
                labels[x, y, z] = current
                queue = deque([(x, y, z)])
                while queue:
                    cx, cy, cz = queue.popleft()
                    for dx, dy, dz in nbrs:
                        nx, ny, nz = cx + dx, cy + dy, cz + dz
                        if 0 <= nx < X and 0 <= ny < Y and 0 <= nz < Z and mask[nx, ny, nz] and not labels[nx, ny, nz]:
                            labels[nx, ny, nz] = current
                            queue.append((nx, ny, nz))
    return labels, current
