"""Periodic square lattice with von Neumann neighbourhoods and game groups."""
from dataclasses import dataclass

import numpy as np

N_NEIGHBORS = 4
GROUP_SIZE = N_NEIGHBORS + 1

# Column order of Lattice.neighbors.
UP, DOWN, LEFT, RIGHT = range(4)


@dataclass(frozen=True)
class Lattice:
    """L x L torus. Agent ids are row-major: ``id = row * L + col``.

    ``neighbors[i]`` holds the up, down, left and right neighbours of ``i``.
    ``groups[i]`` holds the members of the group centred on ``i`` (the centre
    first, then its neighbours in the same order). Since the neighbour
    relation is symmetric, ``groups[i]`` is also the list of centres of the
    five groups that agent ``i`` plays in.
    """

    L: int
    neighbors: np.ndarray
    groups: np.ndarray

    @property
    def N(self) -> int:
        return self.L * self.L

    def coords(self, agent: int) -> tuple[int, int]:
        return divmod(int(agent), self.L)


def build_lattice(L: int) -> Lattice:
    if int(L) != L or L < 3:
        raise ValueError(f"lattice side must be an integer >= 3, got {L!r}")
    L = int(L)
    rows, cols = np.divmod(np.arange(L * L), L)
    neighbors = np.stack(
        [
            ((rows - 1) % L) * L + cols,
            ((rows + 1) % L) * L + cols,
            rows * L + (cols - 1) % L,
            rows * L + (cols + 1) % L,
        ],
        axis=1,
    ).astype(np.int64)
    groups = np.concatenate([np.arange(L * L)[:, None], neighbors], axis=1)
    neighbors.setflags(write=False)
    groups.setflags(write=False)
    return Lattice(L=L, neighbors=neighbors, groups=groups)


def group_members(lat: Lattice, center: int) -> list[int]:
    """Members of the group centred on ``center``: (center, up, down, left, right)."""
    if not 0 <= center < lat.N:
        raise IndexError(f"agent id {center} outside [0, {lat.N})")
    return [int(m) for m in lat.groups[center]]
