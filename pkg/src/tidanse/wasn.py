"""Ad-hoc network substrate: topologies, tree pruning, in-network sums."""
import copy
import heapq
from collections import deque
from dataclasses import dataclass

import numpy as np

from .errors import DisconnectedGraph, ShapeMismatch


@dataclass(frozen=True)
class Topology:
    """Undirected graph over nodes ``0..num_nodes-1``.

    ``edges`` holds pairs ``(i, j)`` with ``i < j``; ``weights`` is parallel
    to it and only matters for tree pruning.
    """
    num_nodes: int
    edges: tuple
    weights: tuple = None

    def __post_init__(self):
        edges = tuple(sorted({(min(i, j), max(i, j)) for i, j in self.edges}))
        if len(edges) != len(self.edges):
            raise ValueError('duplicate edges')
        if self.weights is None:
            weights = (1.0,) * len(edges)
        else:
            wmap = {(min(i, j), max(i, j)): float(w) for (i, j), w in zip(self.edges, self.weights)}
            weights = tuple(wmap[e] for e in edges)
        object.__setattr__(self, 'edges', edges)
        object.__setattr__(self, 'weights', weights)
        for i, j in edges:
            if i == j:
                raise ValueError(f'self-loop at node {i}')
            if not (0 <= i < self.num_nodes and 0 <= j < self.num_nodes):
                raise ValueError(f'edge ({i}, {j}) out of range')
        if not all(np.isfinite(weights)):
            raise ValueError('edge weights must be finite')
        if not self.is_connected():
            raise DisconnectedGraph(f'topology over {self.num_nodes} nodes is not connected')

    def adjacency(self):
        adj = {k: [] for k in range(self.num_nodes)}
        for (i, j), w in zip(self.edges, self.weights):
            adj[i].append((j, w))
            adj[j].append((i, w))
        return adj

    def is_connected(self):
        if self.num_nodes == 0:
            return False
        adj = self.adjacency()
        seen, todo = {0}, [0]
        while todo:
            v = todo.pop()
            for nb, _ in adj[v]:
                if nb not in seen:
                    seen.add(nb)
                    todo.append(nb)
        return len(seen) == self.num_nodes

    def with_weights(self, weights):
        return Topology(self.num_nodes, self.edges, tuple(weights))


def chain_topology(num_nodes):
    return Topology(num_nodes, tuple((k, k + 1) for k in range(num_nodes - 1)))


def star_topology(num_nodes, center=0):
    return Topology(num_nodes, tuple((center, k) for k in range(num_nodes) if k != center))


def full_topology(num_nodes):
    return Topology(num_nodes, tuple((i, j) for i in range(num_nodes) for j in range(i + 1, num_nodes)))


def random_topology(num_nodes, density, rng):
    """Random connected graph: a random spanning tree plus extra edges.

    Each pair not in the spanning tree is added with probability ``density``.
    """
    order = rng.permutation(num_nodes)
    edges = set()
    for pos in range(1, num_nodes):
        other = order[rng.integers(pos)]
        v = order[pos]
        edges.add((min(v, other), max(v, other)))
    for i in range(num_nodes):
        for j in range(i + 1, num_nodes):
            if (i, j) not in edges and rng.random() < density:
                edges.add((i, j))
    edges = tuple(sorted((int(i), int(j)) for i, j in edges))
    return Topology(num_nodes, edges)


@dataclass(frozen=True)
class Tree:
    """Rooted spanning tree; ``parent[root] == -1``."""
    root: int
    parent: tuple
    children: tuple

    @property
    def num_nodes(self):
        return len(self.parent)

    def edges(self):
        return {(min(v, p), max(v, p)) for v, p in enumerate(self.parent) if p >= 0}

    def depth(self):
        """Hop distance of every node from the root."""
        depth = [0] * self.num_nodes
        for v in self.preorder():
            for c in self.children[v]:
                depth[c] = depth[v] + 1
        return depth

    def preorder(self):
        out, todo = [], [self.root]
        while todo:
            v = todo.pop()
            out.append(v)
            todo.extend(reversed(self.children[v]))
        return out

    def postorder(self):
        """Children before parents; leaves first."""
        out, todo = [], [(self.root, False)]
        while todo:
            v, done = todo.pop()
            if done:
                out.append(v)
                continue
            todo.append((v, True))
            todo.extend((c, False) for c in reversed(self.children[v]))
        return out


def prune_tree(topo, root):
    """Minimum-weight spanning tree grown from ``root`` by Prim's algorithm.

    Among equal-weight candidate edges the one whose in-tree endpoint has the
    lowest index wins, then the lowest outside endpoint.
    """
    if not 0 <= root < topo.num_nodes:
        raise ValueError(f'root {root} out of range')
    if not topo.is_connected():
        raise DisconnectedGraph('cannot span a disconnected topology')
    adj = topo.adjacency()
    parent = [-1] * topo.num_nodes
    in_tree = [False] * topo.num_nodes
    in_tree[root] = True
    heap = [(w, root, nb) for nb, w in adj[root]]
    heapq.heapify(heap)
    while heap:
        w, src, dst = heapq.heappop(heap)
        if in_tree[dst]:
            continue
        in_tree[dst] = True
        parent[dst] = src
        for nb, wn in adj[dst]:
            if not in_tree[nb]:
                heapq.heappush(heap, (wn, dst, nb))
    children = [[] for _ in range(topo.num_nodes)]
    for v, p in enumerate(parent):
        if p >= 0:
            children[p].append(v)
    return Tree(root=root, parent=tuple(parent), children=tuple(tuple(c) for c in children))


def gather_partial_sums(tree, z):
    """Subtree sums accumulated from the leaves towards the root.

    Entry ``v`` of the result is what node ``v`` forwards to its parent:
    its own ``z[v]`` plus everything received from its children.
    """
    if len(z) != tree.num_nodes:
        raise ShapeMismatch(f'{len(z)} signals for {tree.num_nodes} nodes')
    shape = np.shape(z[0])
    if any(np.shape(zk) != shape for zk in z):
        raise ShapeMismatch('all fused signals must share one shape')
    partial = [None] * tree.num_nodes
    for v in tree.postorder():
        acc = np.array(z[v], copy=True)
        for c in tree.children[v]:
            acc = acc + partial[c]
        partial[v] = acc
    return partial


def gather_sum(tree, z):
    """In-network sum of all ``z`` as it arrives at the root."""
    return gather_partial_sums(tree, z)[tree.root]


def flood(tree, payload):
    """Broadcast ``payload`` from the root down the tree.

    Returns ``(copies, hops)``: one independent copy per node and the number
    of hops it travelled.
    """
    copies = [None] * tree.num_nodes
    hops = [0] * tree.num_nodes
    copies[tree.root] = copy.deepcopy(payload)
    todo = deque([tree.root])
    while todo:
        v = todo.popleft()
        for c in tree.children[v]:
            copies[c] = copy.deepcopy(copies[v])
            hops[c] = hops[v] + 1
            todo.append(c)
    return copies, hops


def build_observation(y_k, eta, z_k):
    """Stack local sensor signals over ``eta - z_k``."""
    y_k, eta, z_k = np.asarray(y_k), np.asarray(eta), np.asarray(z_k)
    if eta.shape != z_k.shape:
        raise ShapeMismatch(f'eta {eta.shape} vs z_k {z_k.shape}')
    if y_k.ndim != eta.ndim or y_k.shape[1:] != eta.shape[1:]:
        raise ShapeMismatch(f'y_k {y_k.shape} vs eta {eta.shape}')
    return np.concatenate([y_k, eta - z_k], axis=0)
