"""Finite triangular lattice in axial coordinates.

Sites are ``(row, col)`` pairs with ``0 <= row, col < N``, stored row-major.
The patch is a rhombus: the neighbors of ``(r, c)`` are the in-bounds members
of ``(r, c±1), (r±1, c), (r-1, c+1), (r+1, c-1)``, which gives every interior
site the six neighbors of the infinite triangular lattice.
"""

from dataclasses import dataclass
from typing import Callable, Iterator, List, Tuple

import numpy as np

NEIGHBOR_OFFSETS: Tuple[Tuple[int, int], ...] = (
    (0, 1),
    (0, -1),
    (1, 0),
    (-1, 0),
    (-1, 1),
    (1, -1),
)

SiteId = Tuple[int, int]


@dataclass(frozen=True)
class Lattice:
    side_length: int

    def __post_init__(self):
        if int(self.side_length) != self.side_length or self.side_length < 1:
            raise ValueError(f"lattice side must be a positive integer, got {self.side_length!r}")

    @property
    def site_count(self) -> int:
        return self.side_length * self.side_length

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.side_length, self.side_length)

    def contains(self, site: SiteId) -> bool:
        r, c = site
        return 0 <= r < self.side_length and 0 <= c < self.side_length

    def index(self, site: SiteId) -> int:
        if not self.contains(site):
            raise IndexError(f"site {site} outside T^({self.side_length})")
        return site[0] * self.side_length + site[1]

    def site(self, index: int) -> SiteId:
        if not 0 <= index < self.site_count:
            raise IndexError(f"index {index} outside T^({self.side_length})")
        return divmod(index, self.side_length)

    def sites(self) -> Iterator[SiteId]:
        n = self.side_length
        for r in range(n):
            for c in range(n):
                yield (r, c)

    def neighbors(self, site: SiteId) -> List[SiteId]:
        r, c = site
        return [(r + dr, c + dc) for dr, dc in NEIGHBOR_OFFSETS if self.contains((r + dr, c + dc))]

    def degree(self, site: SiteId) -> int:
        return len(self.neighbors(site))


def build_lattice(N: int) -> Lattice:
    return Lattice(N)


@dataclass(frozen=True)
class DiscretizedPicture:
    """A picture sampled on the lattice; ``values[r, c]`` is the intensity at site (r, c)."""

    lattice: Lattice
    values: np.ndarray
    bound: float

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.shape != self.lattice.shape:
            raise ValueError(f"values shape {values.shape} != lattice shape {self.lattice.shape}")
        if not np.all(np.isfinite(values)):
            raise ValueError("picture values must be finite")
        if not np.all(np.abs(values) < self.bound):
            raise ValueError("picture values must lie strictly inside (-bound, bound)")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_array(cls, values) -> "DiscretizedPicture":
        values = np.asarray(values, dtype=float)
        if values.ndim != 2 or values.shape[0] != values.shape[1]:
            raise ValueError("picture must be a square 2-d array")
        lattice = Lattice(values.shape[0])
        return cls(lattice, values, _bound_for(values))


def _bound_for(values: np.ndarray) -> float:
    top = float(np.max(np.abs(values))) if values.size else 0.0
    return top + np.finfo(float).eps * max(1.0, top)


def grid_points(N: int) -> Tuple[np.ndarray, np.ndarray]:
    """Unit-square coordinates ``(x, y)`` of each site, corner-inclusive.

    Site ``(r, c)`` samples ``(c/(N-1), r/(N-1))``; the single site of
    ``T^(1)`` samples the origin.
    """
    if N == 1:
        return np.zeros((1, 1)), np.zeros((1, 1))
    t = np.arange(N) / (N - 1)
    y, x = np.meshgrid(t, t, indexing="ij")
    return x, y


def discretize(f: Callable[[float, float], float], N: int) -> DiscretizedPicture:
    """Sample a continuous picture ``f(x, y)`` on ``[0, 1]^2`` at the lattice sites."""
    lattice = Lattice(N)
    xs, ys = grid_points(N)
    values = np.empty(lattice.shape)
    for r in range(N):
        for c in range(N):
            values[r, c] = float(f(xs[r, c], ys[r, c]))
    if not np.all(np.isfinite(values)):
        raise ValueError("picture produced non-finite values")
    return DiscretizedPicture(lattice, values, _bound_for(values))


def square_indicator(N: int, side: int, intensity: float = 1.0, corner=None) -> DiscretizedPicture:
    """``intensity`` on an axial ``side x side`` patch, 0 elsewhere.

    The patch is centered unless ``corner=(row, col)`` is given.
    """
    if not 0 <= side <= N:
        raise ValueError(f"square side {side} must lie in [0, {N}]")
    if corner is None:
        corner = ((N - side) // 2, (N - side) // 2)
    r0, c0 = corner
    values = np.zeros((N, N))
    values[r0 : r0 + side, c0 : c0 + side] = intensity
    return DiscretizedPicture(Lattice(N), values, _bound_for(values))


def contains_square(mask, side: int) -> bool:
    """True iff some translate ``{(r+i, c+j) : 0 <= i, j < side}`` is fully marked.

    ``mask`` is a boolean ``(N, N)`` array or anything with a ``marked``
    array attribute.
    """
    marked = np.asarray(getattr(mask, "marked", mask), dtype=bool)
    n = marked.shape[0]
    if side < 1 or side > n:
        raise ValueError(f"square side {side} must lie in [1, {n}]")
    # 2-d prefix sums: count of marked sites in every side x side window
    csum = np.zeros((n + 1, n + 1), dtype=np.int64)
    csum[1:, 1:] = marked.astype(np.int64).cumsum(0).cumsum(1)
    windows = csum[side:, side:] - csum[:-side, side:] - csum[side:, :-side] + csum[:-side, :-side]
    return bool(np.any(windows == side * side))
