"""Small builders shared by several test modules."""

from __future__ import annotations

import numpy as np

from lsrom.core import Partition, TopologyModel, nearest_center
from lsrom.refine import MicroClusterModel, with_radii


def path_adjacency(n: int) -> np.ndarray:
    adj = np.zeros((n, n), bool)
    for i in range(n - 1):
        adj[i, i + 1] = adj[i + 1, i] = True
    return adj


def model_from(centers, adjacency, x, radii: bool = True) -> MicroClusterModel:
    """Micro-cluster model whose partition is nearest-center assignment of ``x``.

    Every center must win at least one object.
    """
    c = np.asarray(centers, dtype=np.float64)
    grid = c[:, :2].copy() if c.shape[1] >= 2 else np.c_[c[:, 0], np.zeros(len(c))]
    labels = nearest_center(x, c)[0]
    if len(np.unique(labels)) != len(c):
        raise ValueError("every center needs a member")
    m = MicroClusterModel(TopologyModel(c, grid, np.asarray(adjacency, bool)),
                          Partition.from_assignment(x, labels), np.arange(len(c)))
    return with_radii(m) if radii else m


def blobs(rng, centers, sigma, counts):
    xs, ys = [], []
    for lab, (mu, m) in enumerate(zip(centers, counts)):
        xs.append(rng.normal(mu, sigma, (m, len(mu))))
        ys.append(np.full(m, lab))
    return np.vstack(xs), np.concatenate(ys)
