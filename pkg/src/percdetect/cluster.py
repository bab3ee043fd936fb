"""Level sets of observed images and their connected clusters."""

from collections import deque
from dataclasses import dataclass
from typing import Dict

import numpy as np

from . import kernels
from .lattice import Lattice
from .noise import ObservedImage


@dataclass(frozen=True)
class SiteMask:
    lattice: Lattice
    marked: np.ndarray

    def __post_init__(self):
        marked = np.ascontiguousarray(self.marked, dtype=bool)
        if marked.shape != self.lattice.shape:
            raise ValueError(f"mask shape {marked.shape} != lattice shape {self.lattice.shape}")
        marked.setflags(write=False)
        object.__setattr__(self, "marked", marked)

    @classmethod
    def from_array(cls, marked) -> "SiteMask":
        marked = np.asarray(marked, dtype=bool)
        return cls(Lattice(marked.shape[0]), marked)

    @classmethod
    def from_sites(cls, lattice: Lattice, sites) -> "SiteMask":
        marked = np.zeros(lattice.shape, dtype=bool)
        for r, c in sites:
            if not lattice.contains((r, c)):
                raise IndexError(f"site {(r, c)} outside T^({lattice.side_length})")
            marked[r, c] = True
        return cls(lattice, marked)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.marked))

    def sites(self):
        return [tuple(int(v) for v in rc) for rc in np.argwhere(self.marked)]


@dataclass(frozen=True)
class ClusterLabeling:
    """``labels[r, c]`` is the smallest linear index in the cluster of (r, c), or -1."""

    labels: np.ndarray
    cluster_sizes: Dict[int, int]
    max_cluster_size: int

    def partition(self):
        """Clusters as a set of frozensets of linear site indices."""
        flat = self.labels.ravel()
        groups: Dict[int, list] = {}
        for i in np.flatnonzero(flat >= 0):
            groups.setdefault(int(flat[i]), []).append(int(i))
        return {frozenset(g) for g in groups.values()}


def _labeling_from_labels(labels: np.ndarray) -> ClusterLabeling:
    marked = labels[labels >= 0]
    ids, counts = np.unique(marked, return_counts=True)
    sizes = {int(i): int(k) for i, k in zip(ids, counts)}
    return ClusterLabeling(labels, sizes, int(counts.max()) if counts.size else 0)


def super_level_set(image: ObservedImage, a: float) -> SiteMask:
    return SiteMask(image.lattice, image.values >= a)


def sub_level_set(image: ObservedImage, a: float) -> SiteMask:
    if a < 0:
        raise ValueError(f"sub level set threshold must be >= 0, got {a}")
    return SiteMask(image.lattice, image.values <= -a)


def label_clusters(mask: SiteMask) -> ClusterLabeling:
    labels, _ = kernels.label(mask.marked)
    return _labeling_from_labels(labels)


def label_clusters_oracle(mask: SiteMask) -> ClusterLabeling:
    """Breadth-first labeling over :meth:`Lattice.neighbors`; shares no code with the kernels."""
    lattice = mask.lattice
    n = lattice.side_length
    labels = np.full(lattice.shape, -1, dtype=np.int64)
    for start in lattice.sites():
        if not mask.marked[start] or labels[start] >= 0:
            continue
        label = start[0] * n + start[1]
        labels[start] = label
        queue = deque([start])
        while queue:
            site = queue.popleft()
            for nb in lattice.neighbors(site):
                if mask.marked[nb] and labels[nb] < 0:
                    labels[nb] = label
                    queue.append(nb)
    return _labeling_from_labels(labels)


def max_cluster_statistic(image: ObservedImage, a: float, side: str = "plus") -> int:
    """Size of the largest cluster in the super (``plus``) or sub (``minus``) level set at ``a``."""
    if side == "plus":
        marked = image.values >= a
    elif side == "minus":
        if a < 0:
            raise ValueError(f"minus-side threshold must be >= 0, got {a}")
        marked = image.values <= -a
    else:
        raise ValueError(f"side must be 'plus' or 'minus', got {side!r}")
    return kernels.max_cluster(marked)[0]


def crossing_cluster_exists(mask: SiteMask) -> bool:
    """Some cluster touches rows 0 and N-1, or columns 0 and N-1."""
    return kernels.crossing(mask.marked)[0]
