"""Breadth-first ordering of a snapshot's new triples around the known graph.

Layer 0 holds triples whose endpoints are both known. Layer ``k`` holds the
remaining triples with an endpoint among the known entities augmented by the
endpoints of layers ``< k``. Triples that never connect end up in one trailing
layer. Inside a layer, triples with more connected endpoints (sum of degrees
in the delta) come first; ties keep input order. Degree stands in for the
betweenness centrality used by the original ordering method, which is too
costly to compute per snapshot.
"""
import numpy as np


def bfs_layers(triples, known_entities) -> np.ndarray:
    t3 = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    known = set(int(e) for e in known_entities)
    layer = np.full(len(t3), -1, dtype=np.int64)
    if len(t3) == 0:
        return layer
    h, t = t3[:, 0], t3[:, 2]
    kmask = np.array([x in known for x in h.tolist()]) & np.array([x in known for x in t.tolist()])
    layer[kmask] = 0
    reached = set(known)
    incident: dict[int, list[int]] = {}
    for i, (a, b) in enumerate(zip(h.tolist(), t.tolist())):
        incident.setdefault(a, []).append(i)
        incident.setdefault(b, []).append(i)
    frontier = set(known)
    k = 1
    while True:
        current = set()
        for e in frontier:
            for i in incident.get(e, ()):
                if layer[i] < 0:
                    current.add(i)
        if not current:
            break
        idx = np.fromiter(sorted(current), dtype=np.int64)
        layer[idx] = k
        new = set(h[idx].tolist()) | set(t[idx].tolist())
        frontier = new - reached
        reached |= new
        k += 1
    layer[layer < 0] = k
    return layer


def order_triples(triples, known_entities) -> np.ndarray:
    """Indices-free ordering: returns the reordered ``(n, 3)`` triple array."""
    t3 = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(t3) == 0:
        return t3
    layer = bfs_layers(t3, known_entities)
    ends = np.concatenate([t3[:, 0], t3[:, 2]])
    deg = np.bincount(ends)
    key = deg[t3[:, 0]] + deg[t3[:, 2]]
    order = np.lexsort((np.arange(len(t3)), -key, layer))
    return t3[order]
