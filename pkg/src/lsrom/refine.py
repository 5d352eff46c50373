"""Micro-cluster construction and refinement.

``kmeans_finetune`` turns trained neurons into micro-cluster centers with
Lloyd iterations. ``remove_bridge_nodes`` then drops centers that are
sparser than their map neighbors (radius ratio below 1), which tend to sit
in the gaps between true clusters and would otherwise chain them together.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DataChunk, Partition, TopologyModel, nearest_center
from .rsom import TrainedSom


@dataclass(frozen=True)
class RemovedNode:
    """A deleted node: ``reason`` is "bridge" (ratio below 1) or "isolated"
    (no neighbors left once the bridges were gone)."""

    index: int
    center: tuple[float, ...]
    ratio: float
    reason: str = "bridge"


@dataclass(frozen=True)
class MicroClusterModel:
    """Micro-cluster centers on the SOM graph with their object partition.

    ``node_ids`` maps each surviving node to its original neuron index.
    ``radii`` are computed on the current (surviving) graph; ``ratios`` are
    the values that decided removal, taken on the pre-removal graph.
    """

    topology: TopologyModel
    partition: Partition
    node_ids: np.ndarray
    radii: np.ndarray | None = None
    ratios: np.ndarray | None = None
    removed: tuple[RemovedNode, ...] = ()
    objective_history: tuple[float, ...] = field(default=())
    iterations: int = 0

    @property
    def size(self) -> int:
        return self.topology.size

    def to_json(self) -> dict:
        return {
            "centers": self.topology.centers.tolist(),
            "adjacencyEdges": [list(e) for e in self.topology.edges()],
            "assignment": self.partition.assignment.tolist(),
            "nodeIds": self.node_ids.tolist(),
            "radii": None if self.radii is None else self.radii.tolist(),
            "ratios": None if self.ratios is None else
            [None if not np.isfinite(r) else float(r) for r in self.ratios],
            "removed": [{"index": r.index, "ratio": r.ratio, "reason": r.reason}
                        for r in self.removed],
        }


def _objective(x, labels, centers) -> float:
    d = x - centers[labels]
    return float(np.einsum("ij,ij->", d, d))


def _compact(labels, k):
    counts = np.bincount(labels, minlength=k)
    keep = np.flatnonzero(counts)
    remap = -np.ones(k, dtype=np.int64)
    remap[keep] = np.arange(keep.size)
    return keep, remap[labels], counts[keep]


def _means(x, labels, k):
    counts = np.bincount(labels, minlength=k)
    sums = np.zeros((k, x.shape[1]))
    np.add.at(sums, labels, x)
    return sums / np.maximum(counts, 1)[:, None], counts


def kmeans_finetune(chunk: DataChunk, som: TrainedSom, max_iters: int = 100) -> MicroClusterModel:
    """Lloyd iterations started from the trained neurons.

    Each iteration recomputes centers as member means and reassigns objects
    to their nearest center; it stops once assignments are stable or after
    ``max_iters`` iterations. Centers that lose all members are deleted with
    their graph node. With ``max_iters=0`` the neurons themselves are kept as
    micro-cluster centers.
    """
    x = chunk.objects
    topo = som.topology
    if topo.centers.shape[1] != x.shape[1]:
        raise ValueError(f"dimension mismatch: chunk f={x.shape[1]}, "
                         f"neurons f={topo.centers.shape[1]}")
    if max_iters < 0:
        raise ValueError("max_iters must be non-negative")
    node_ids = np.arange(topo.size)
    centers = np.array(topo.centers)
    labels = nearest_center(x, centers)[0]
    keep, labels, _ = _compact(labels, centers.shape[0])
    node_ids, centers = node_ids[keep], centers[keep]
    history = [_objective(x, labels, centers)]
    done = 0
    for it in range(1, max_iters + 1):
        centers, _ = _means(x, labels, centers.shape[0])
        history.append(_objective(x, labels, centers))
        new = nearest_center(x, centers)[0]
        keep, new, _ = _compact(new, centers.shape[0])
        node_ids, centers = node_ids[keep], centers[keep]
        stable = keep.size == len(np.unique(labels)) and np.array_equal(new, labels)
        labels = new
        history.append(_objective(x, labels, centers))
        done = it
        if stable:
            break
    else:
        if max_iters > 0:
            centers, _ = _means(x, labels, centers.shape[0])
            history.append(_objective(x, labels, centers))

    sub = topo.subgraph(node_ids, centers=centers)
    part = Partition.from_assignment(x, labels)
    return MicroClusterModel(sub, part, node_ids, objective_history=tuple(history), iterations=done)


def local_radius(topology: TopologyModel, i: int) -> float:
    """Mean squared distance from node ``i`` to its map neighbors."""
    nb = topology.neighbors(i)
    if nb.size == 0:
        raise ValueError(f"node {i} has no neighbors; its local radius is undefined")
    d = topology.centers[nb] - topology.centers[i]
    return float(np.einsum("ij,ij->", d, d) / nb.size)


def local_radii(topology: TopologyModel) -> np.ndarray:
    """Local radius of every node (NaN for isolated nodes)."""
    c = topology.centers
    diff = c[:, None, :] - c[None, :, :]
    d2 = np.einsum("ijk,ijk->ij", diff, diff)
    adj = topology.adjacency
    deg = adj.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        return np.where(deg > 0, (d2 * adj).sum(axis=1) / deg, np.nan)


def radius_ratio(topology: TopologyModel, radii, i: int) -> float:
    """Mean neighbor radius divided by the node's own radius.

    A node with zero radius (coincident with all its neighbors) is maximally
    dense and gets ``+inf``.
    """
    nb = topology.neighbors(i)
    if nb.size == 0:
        raise ValueError(f"node {i} has no neighbors; its radius ratio is undefined")
    radii = np.asarray(radii, dtype=np.float64)
    own = radii[i]
    if own == 0:
        return float("inf")
    return float(radii[nb].sum() / (nb.size * own))


def radius_ratios(topology: TopologyModel, radii) -> np.ndarray:
    radii = np.asarray(radii, dtype=np.float64)
    adj = topology.adjacency
    deg = adj.sum(axis=1)
    out = np.full(topology.size, np.nan)
    has = deg > 0
    nsum = adj.astype(np.float64) @ np.nan_to_num(radii)
    with np.errstate(invalid="ignore", divide="ignore"):
        out[has] = nsum[has] / (deg[has] * radii[has])
    out[has & (radii == 0)] = np.inf
    return out


def with_radii(model: MicroClusterModel) -> MicroClusterModel:
    """Attach radii and ratios computed on the model's current graph."""
    radii = local_radii(model.topology)
    ratios = radius_ratios(model.topology, radii)
    return MicroClusterModel(model.topology.with_centers(model.topology.centers), model.partition,
                             model.node_ids, radii, ratios, model.removed,
                             model.objective_history, model.iterations)


def remove_bridge_nodes(chunk: DataChunk, model: MicroClusterModel) -> MicroClusterModel:
    """Delete every node whose radius ratio is below 1, in one pass.

    Ratios are evaluated once on the incoming graph, so the result does not
    depend on node order. Nodes left without neighbors are dropped too. At
    least one node always survives (the one with the largest ratio). Objects
    are then reassigned to the nearest surviving center and centers are
    recomputed as member means once.
    """
    if model.ratios is None:
        model = with_radii(model)
    topo = model.topology
    ratios = np.asarray(model.ratios)
    # isolated nodes have NaN ratio; treat them as removable only via the isolation rule
    bridge = np.where(np.isnan(ratios), False, ratios < 1.0)
    keep = ~bridge
    if keep.any():
        sub_adj = topo.adjacency[np.ix_(keep, keep)]
        isolated = np.zeros(topo.size, dtype=bool)
        isolated[np.flatnonzero(keep)[sub_adj.sum(axis=1) == 0]] = True
        if (keep & ~isolated).any():
            keep &= ~isolated
    if not keep.any():
        keep[int(np.nanargmax(np.where(np.isnan(ratios), -np.inf, ratios)))] = True
    removed = tuple(
        RemovedNode(int(model.node_ids[i]), tuple(map(float, topo.centers[i])), float(ratios[i]),
                    "bridge" if bridge[i] else "isolated")
        for i in np.flatnonzero(~keep))

    idx = np.flatnonzero(keep)
    x = chunk.objects
    labels = nearest_center(x, topo.centers[idx])[0]
    part = Partition.from_assignment(x, labels)
    # a surviving center keeps at least its own former members, so none empties;
    # guard anyway in case of exact ties across removed nodes
    used = np.unique(labels)
    idx = idx[used]
    sub = topo.subgraph(idx, centers=part.centers)
    radii = local_radii(sub)
    return MicroClusterModel(sub, part, model.node_ids[idx], radii, ratios[idx],
                             model.removed + removed, model.objective_history, model.iterations)
