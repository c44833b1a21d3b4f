"""Agglomerative clustering and variability-based neighbour clustering (VNC).

Merges are numbered like scipy's linkage: leaves are 0..n-1 and the
cluster formed by merge ``i`` is ``n + i``.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import DataError

LINKAGES = ("ward", "single", "complete")


@dataclass(frozen=True)
class Merge:
    left: int
    right: int
    height: float
    size: int


@dataclass
class Dendrogram:
    labels: list
    merges: list[Merge] = field(default_factory=list)
    method: str = ""

    @property
    def n_leaves(self) -> int:
        return len(self.labels)

    def members(self, cluster: int) -> list[int]:
        n = self.n_leaves
        if cluster < n:
            return [cluster]
        m = self.merges[cluster - n]
        return sorted(self.members(m.left) + self.members(m.right))

    def to_linkage(self) -> np.ndarray:
        return np.array([[m.left, m.right, m.height, m.size] for m in self.merges], dtype=float)

    def cut(self, k: int) -> list[int]:
        """Cluster number per leaf after undoing the last k-1 merges.

        Clusters are numbered by their first leaf in label order.
        """
        n = self.n_leaves
        if not 1 <= k <= n:
            raise DataError(f"cannot cut {n} leaves into {k} clusters")
        parent = list(range(n))

        def find(i):
            while parent[i] != i:
                parent[i] = parent[parent[i]]
                i = parent[i]
            return i

        rep = {i: i for i in range(n)}  # cluster id -> some leaf
        for idx, m in enumerate(self.merges[: n - k]):
            a, b = find(rep[m.left]), find(rep[m.right])
            parent[b] = a
            rep[n + idx] = a
        roots: dict[int, int] = {}
        out = []
        for i in range(n):
            r = find(i)
            roots.setdefault(r, len(roots))
            out.append(roots[r])
        return out

    def to_dict(self) -> dict:
        return {"labels": [str(x) for x in self.labels], "method": self.method,
                "merges": [[m.left, m.right, m.height, m.size] for m in self.merges]}


def _pairwise(points: np.ndarray) -> np.ndarray:
    diff = points[:, None, :] - points[None, :, :]
    return np.sqrt(np.sum(diff ** 2, axis=-1))


def hclust(data, method: str = "ward", labels=None, distance: bool = False) -> Dendrogram:
    """Agglomerative clustering with Lance-Williams updates.

    ``data`` is an (n, d) array of points, or an (n, n) distance matrix when
    ``distance`` is true.  Ward heights follow the Ward.D2 convention
    (Lance-Williams on squared Euclidean distances, heights reported on the
    distance scale).  Ties go to the pair with the smallest cluster ids.
    """
    if method not in LINKAGES:
        raise DataError(f"unknown linkage {method!r}")
    x = np.asarray(data, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    d = x.copy() if distance else _pairwise(x)
    n = d.shape[0]
    if n < 2:
        raise DataError("clustering needs at least two items")
    labels = list(labels) if labels is not None else list(range(n))
    work = d ** 2 if method == "ward" else d.copy()
    active = list(range(n))
    ids = list(range(n))
    sizes = [1] * n
    dist = {(i, j): work[i, j] for i in range(n) for j in range(i + 1, n)}
    merges = []
    for step in range(n - 1):
        best = None
        for a in range(len(active)):
            for b in range(a + 1, len(active)):
                i, j = active[a], active[b]
                key = (dist[(i, j)], min(ids[i], ids[j]), max(ids[i], ids[j]))
                if best is None or key < best[0]:
                    best = (key, i, j)
        (dij, _, _), i, j = best
        ni, nj = sizes[i], sizes[j]
        height = float(np.sqrt(max(dij, 0.0))) if method == "ward" else float(dij)
        left, right = sorted((ids[i], ids[j]))
        merges.append(Merge(left, right, height, ni + nj))
        for k in active:
            if k in (i, j):
                continue
            dik = dist[(min(i, k), max(i, k))]
            djk = dist[(min(j, k), max(j, k))]
            nk = sizes[k]
            if method == "ward":
                new = ((ni + nk) * dik + (nj + nk) * djk - nk * dij) / (ni + nj + nk)
            elif method == "single":
                new = min(dik, djk)
            else:
                new = max(dik, djk)
            dist[(min(i, k), max(i, k))] = new
        active.remove(j)
        sizes[i] = ni + nj
        ids[i] = n + step
    return Dendrogram(labels, merges, method)


def _variability(values: np.ndarray, measure: str) -> float:
    if len(values) < 2:
        return 0.0
    sd = np.std(values, axis=0, ddof=1)
    sd = np.where(np.ptp(values, axis=0) == 0, 0.0, sd)  # exact zero for constant runs
    if measure == "cv":
        mean = np.mean(values, axis=0)
        with np.errstate(divide="ignore", invalid="ignore"):
            sd = np.where(mean != 0, sd / np.abs(mean), 0.0)
    elif measure != "sd":
        raise DataError(f"unknown variability measure {measure!r}")
    return float(np.sum(sd))


def vnc(values, labels=None, measure: str = "sd") -> Dendrogram:
    """Variability-based neighbour clustering of a time-ordered series.

    At each step the two temporally adjacent clusters whose union has the
    smallest variability (sample SD, summed over components for profiles)
    are merged; ties go to the leftmost pair.  The merge height is that
    variability.
    """
    x = np.asarray(values, dtype=float)
    if x.ndim == 1:
        x = x[:, None]
    n = len(x)
    if n < 2:
        raise DataError("VNC needs at least two time points")
    labels = list(labels) if labels is not None else list(range(n))
    segments = [(i, i + 1, i) for i in range(n)]  # start, stop, cluster id
    merges = []
    for step in range(n - 1):
        costs = [_variability(x[segments[k][0]:segments[k + 1][1]], measure)
                 for k in range(len(segments) - 1)]
        k = int(np.argmin(costs))
        (a, _, ia), (_, b, ib) = segments[k], segments[k + 1]
        merges.append(Merge(ia, ib, costs[k], b - a))
        segments[k:k + 2] = [(a, b, n + step)]
    return Dendrogram(labels, merges, f"vnc-{measure}")
