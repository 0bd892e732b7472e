"""Skeletal graph partitions and body-part hypergraphs on the NTU layout."""

import json
from collections import deque
from dataclasses import dataclass

import numpy as np

from . import ntu


class CoverageError(ValueError):
    """A hypergraph partition leaves a joint uncovered."""


def _inv_sqrt(deg):
    out = np.zeros_like(deg, dtype=np.float64)
    nz = deg > 0
    out[nz] = 1.0 / np.sqrt(deg[nz])
    return out


def normalize_adjacency(a):
    """Symmetric degree normalization ``L^-1/2 A L^-1/2`` with row-sum degrees.

    Zero-degree rows and columns stay zero.
    """
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] != a.shape[1]:
        raise ValueError(f"adjacency must be square, got {a.shape}")
    if np.any(a < 0):
        raise ValueError("adjacency has negative entries")
    d = _inv_sqrt(a.sum(axis=1))
    return d[:, None] * a * d[None, :]


def hop_distance(num_nodes, edges, root):
    adj = [[] for _ in range(num_nodes)]
    for i, j in edges:
        adj[i].append(j)
        adj[j].append(i)
    dist = np.full(num_nodes, -1)
    dist[root] = 0
    queue = deque([root])
    while queue:
        u = queue.popleft()
        for w in adj[u]:
            if dist[w] < 0:
                dist[w] = dist[u] + 1
                queue.append(w)
    return dist


@dataclass(frozen=True, eq=False)
class SkeletalGraph:
    joint_count: int
    edges: tuple
    root_joint: int
    adjacency: np.ndarray  # A, symmetric, no self loops
    masks: np.ndarray  # P x V x V binary: root / centripetal / centrifugal
    partitions: np.ndarray  # P x V x V, masks applied to normalize(A + I)

    @property
    def num_partitions(self):
        return self.partitions.shape[0]

    def permuted(self, perm):
        """Relabel joints so new joint ``k`` is old joint ``perm[k]``."""
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        edges = tuple((int(inv[i]), int(inv[j])) for i, j in self.edges)
        return SkeletalGraph(
            joint_count=self.joint_count,
            edges=edges,
            root_joint=int(inv[self.root_joint]),
            adjacency=self.adjacency[np.ix_(perm, perm)],
            masks=self.masks[:, perm][:, :, perm],
            partitions=self.partitions[:, perm][:, :, perm],
        )


def build_graph(joint_count, edges, root):
    """Spatial-configuration partitioning of ``A + I`` by hop distance to ``root``.

    Entry (i, j) of ``A + I`` goes to the root partition when j is as far from
    the root as i, centripetal when j is closer, centrifugal when farther.
    The normalized partitions sum to ``normalize_adjacency(A + I)``.
    """
    a = np.zeros((joint_count, joint_count))
    for i, j in edges:
        a[i, j] = a[j, i] = 1.0
    hop = hop_distance(joint_count, edges, root)
    if np.any(hop < 0):
        raise ValueError("graph is not connected")
    a_hat = a + np.eye(joint_count)
    near = hop[None, :] < hop[:, None]
    same = hop[None, :] == hop[:, None]
    far = hop[None, :] > hop[:, None]
    masks = np.stack([a_hat * same, a_hat * near, a_hat * far])
    parts = masks * normalize_adjacency(a_hat)[None]
    return SkeletalGraph(
        joint_count=joint_count,
        edges=tuple(edges),
        root_joint=root,
        adjacency=a,
        masks=masks,
        partitions=parts,
    )


def build_ntu_graph():
    return build_graph(ntu.NUM_JOINTS, ntu.BONES, ntu.ROOT_JOINT)


@dataclass(frozen=True, eq=False)
class Hypergraph:
    joint_count: int
    hyperedges: tuple  # tuple of tuples of joint indices
    names: tuple
    incidence: np.ndarray  # V x E
    edge_weights: np.ndarray  # E

    @property
    def num_edges(self):
        return self.incidence.shape[1]

    @property
    def vertex_degree(self):
        return self.incidence @ self.edge_weights

    @property
    def edge_degree(self):
        return self.incidence.sum(axis=0)

    def operator(self):
        """V x V matrix ``Dv^-1/2 H W De^-1 H^T Dv^-1/2``."""
        h = self.incidence
        dv = _inv_sqrt(self.vertex_degree)
        de = self.edge_degree
        de_inv = np.where(de > 0, 1.0 / np.where(de > 0, de, 1.0), 0.0)
        core = h @ np.diag(self.edge_weights * de_inv) @ h.T
        return dv[:, None] * core * dv[None, :]

    def same_edge(self):
        """V x V indicator of joint pairs sharing at least one hyperedge."""
        return ((self.incidence @ self.incidence.T) > 0).astype(np.float64)

    def permuted(self, perm):
        perm = np.asarray(perm)
        inv = np.argsort(perm)
        edges = tuple(tuple(sorted(int(inv[j]) for j in e)) for e in self.hyperedges)
        return make_hypergraph(edges, self.joint_count, self.edge_weights, self.names, require_cover=False)


def make_hypergraph(hyperedges, joint_count=ntu.NUM_JOINTS, weights=None, names=None, require_cover=True):
    hyperedges = tuple(tuple(int(j) for j in e) for e in hyperedges)
    h = np.zeros((joint_count, len(hyperedges)))
    for e, members in enumerate(hyperedges):
        for j in members:
            if not 0 <= j < joint_count:
                raise ValueError(f"joint {j} outside [0, {joint_count})")
            h[j, e] = 1.0
    uncovered = np.flatnonzero(h.sum(axis=1) == 0)
    if require_cover and uncovered.size:
        j = int(uncovered[0])
        label = ntu.JOINT_NAMES[j] if joint_count == ntu.NUM_JOINTS else str(j)
        raise CoverageError(f"joint {j} ({label}) is not in any hyperedge")
    w = np.ones(len(hyperedges)) if weights is None else np.asarray(weights, dtype=np.float64)
    if w.shape != (len(hyperedges),) or np.any(w <= 0):
        raise ValueError("hyperedge weights must be positive, one per hyperedge")
    names = tuple(names) if names is not None else tuple(f"e{i}" for i in range(len(hyperedges)))
    return Hypergraph(joint_count, hyperedges, names, h, w)


def build_bodypart_hypergraph(parts=None):
    """Body-part hypergraph; ``parts`` maps names to joint-index sets."""
    parts = ntu.BODY_PARTS if parts is None else parts
    return make_hypergraph(list(parts.values()), ntu.NUM_JOINTS, names=list(parts.keys()))


def load_hypergraph_config(path):
    """Read ``{"name": [joint, ...], ...}`` (or a list of such objects) from JSON."""
    with open(path) as fh:
        doc = json.load(fh)
    if isinstance(doc, list):
        doc = {item["name"]: item["joints"] for item in doc}
    return build_bodypart_hypergraph({k: tuple(v) for k, v in doc.items()})


def hypergraph_aggregate(x, hg):
    """Vertex -> hyperedge -> vertex mean aggregation of V x F features."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] != hg.joint_count:
        raise ValueError(f"features of shape {x.shape} do not match {hg.joint_count} joints")
    return hg.operator() @ x
