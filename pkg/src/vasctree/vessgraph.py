"""Skeleton-to-graph conversion with calibrated per-segment radii.

Edges are traced as maximal skeleton chains between node pixels (branch
points, endpoints, isolated pixels), so the multigraph is exactly the
degree-2 suppression of the skeleton's pixel adjacency graph: components and
cycle rank carry over unchanged.  Radius sampling excludes a "moat" around
every node (a ball scaled to the local vessel width) so junction-inflated
distance values never enter a segment's radius estimate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import DataError
from .raster import ARTERY, MaskGrid, class_mask, edt
from .skeleton import neighbor_counts, thin

_OFFSETS8 = [(-1, -1), (-1, 0), (-1, 1), (0, -1), (0, 1), (1, -1), (1, 0), (1, 1)]


@dataclass
class Node:
    id: int
    pos: tuple[int, ...]
    kind: str  # "branch" | "end"


@dataclass
class Edge:
    u: int
    v: int
    polyline: np.ndarray  # (n, ndim) lattice-adjacent chain from u to v
    length_px: float
    radius_px: float
    radius_um: float
    radius_samples: np.ndarray = field(default_factory=lambda: np.zeros(0))
    low_confidence: bool = False
    cls: str = "single"


@dataclass
class VesselGraph:
    nodes: list[Node]
    edges: list[Edge]
    spacing: tuple[float, ...] = (1.0, 1.0)
    cls: str = "single"
    um_per_px: float = 1.0

    def incident(self, nid: int) -> list[int]:
        return [i for i, e in enumerate(self.edges) if e.u == nid or e.v == nid]


@dataclass
class BifurcationRecord:
    node_id: int
    r_p_px: float
    r_p_um: float
    children_px: list[float]
    cls: str = "single"


def segment_radius(samples) -> float:
    """Trimmed radius: mean of the samples after dropping 10% at each end."""
    s = np.sort(np.asarray(samples, dtype=np.float64))
    if s.size == 0:
        raise DataError("segment_radius requires at least one sample")
    k = int(0.1 * s.size)
    if k:
        s = s[k:s.size - k]
    return float(s.mean())


def _step_length(poly: np.ndarray) -> float:
    if len(poly) < 2:
        return 0.0
    diffs = np.diff(poly, axis=0)
    return float(np.sqrt((diffs ** 2).sum(axis=1)).sum())


def _offsets(ndim: int):
    if ndim == 2:
        return _OFFSETS8
    offs = [(a, b, c) for a in (-1, 0, 1) for b in (-1, 0, 1) for c in (-1, 0, 1)]
    offs.remove((0, 0, 0))
    return offs


def _trace_chains(fg: np.ndarray, node_mask: np.ndarray):
    """Maximal chains between node pixels plus node-free closed loops.

    Returns a list of polylines (lists of positions).  Chains start and end
    at node pixels; loops are closed polylines anchored at their raster-min
    pixel (first == last position).  Adjacent node pixels produce no chain:
    they belong to one junction cluster.
    """
    offs = _offsets(fg.ndim)
    shape = fg.shape
    ndim = fg.ndim

    def neighbors(p):
        out = []
        for off in offs:
            q = tuple(p[i] + off[i] for i in range(ndim))
            if all(0 <= q[i] < shape[i] for i in range(ndim)) and fg[q]:
                out.append(q)
        return out

    visited = np.zeros_like(fg, dtype=bool)
    chains = []
    node_positions = [tuple(int(c) for c in p) for p in np.argwhere(node_mask)]
    for n in node_positions:
        for q in neighbors(n):
            if node_mask[q] or visited[q]:
                continue
            poly = [n]
            prev, cur = n, q
            while True:
                poly.append(cur)
                if node_mask[cur]:
                    break
                visited[cur] = True
                nxt = None
                for r in neighbors(cur):
                    if r != prev:
                        nxt = r
                        break
                if nxt is None:  # defensive: interior pixels have degree 2
                    break
                prev, cur = cur, nxt
            chains.append(poly)
    remaining = fg & ~visited & ~node_mask
    for anchor in map(tuple, np.argwhere(remaining)):
        anchor = tuple(int(c) for c in anchor)
        if not remaining[anchor]:
            continue
        poly = [anchor]
        remaining[anchor] = False
        prev, cur = anchor, neighbors(anchor)[0]
        while cur != anchor:
            poly.append(cur)
            remaining[cur] = False
            for r in neighbors(cur):
                if r != prev:
                    prev, cur = cur, r
                    break
        poly.append(anchor)
        chains.append(poly)
    return chains


def _moat_mask(shape, nodes_px, radii) -> np.ndarray:
    moat = np.zeros(shape, dtype=bool)
    grids = [np.arange(s) for s in shape]
    for pos, r in zip(nodes_px, radii):
        box = tuple(slice(max(0, p - r), min(s, p + r + 1))
                    for p, s in zip(pos, shape))
        local = sum((grids[d][box[d]].reshape([-1 if i == d else 1 for i in range(len(shape))]) - pos[d]) ** 2
                    for d in range(len(shape)))
        moat[box] |= local <= r * r
    return moat


def extract_graph(mask: MaskGrid, cls: int = ARTERY, um_per_px: float = 1.0,
                  moat_radius: int | None = None) -> VesselGraph:
    """Mask -> thinned skeleton -> calibrated vessel multigraph.

    ``moat_radius`` overrides the adaptive per-node exclusion radius
    max(2, ceil(EDT at the node)).
    """
    cls_name = {1: "artery", 2: "vein"}.get(cls, "single") if mask.labels.max(initial=0) > 1 else "single"
    fg = class_mask(mask, cls)
    if not fg.any():
        return VesselGraph([], [], mask.spacing, cls_name, um_per_px)
    dist = edt(mask, cls).values
    skel = thin(MaskGrid(fg.astype(np.uint8), mask.spacing)).labels.astype(bool)
    counts = neighbor_counts(skel)
    node_mask = skel & ((counts == 1) | (counts >= 3) | (counts == 0))

    # adjacent node pixels form one junction cluster = one graph node
    from .raster import components as _components

    cluster_lab, n_clusters = _components(node_mask)
    cluster_pixels: list[list[tuple[int, ...]]] = [[] for _ in range(n_clusters)]
    for p in map(tuple, np.argwhere(node_mask)):
        cluster_pixels[cluster_lab[p] - 1].append(tuple(int(c) for c in p))
    node_positions = []
    kinds = []
    for pixels in cluster_pixels:
        best = max(pixels, key=lambda p: (dist[p],) + tuple(-c for c in p))
        node_positions.append(best)
        kinds.append("branch" if any(counts[p] >= 3 for p in pixels) else "end")

    def cluster_of(p) -> int:
        return int(cluster_lab[p]) - 1

    moat_px = [p for pixels in cluster_pixels for p in pixels]
    radii = [max(2, int(np.ceil(dist[p]))) if moat_radius is None else moat_radius
             for p in moat_px]
    moat = _moat_mask(skel.shape, moat_px, radii)

    raw_edges = []
    for poly in _trace_chains(skel, node_mask):
        arr = np.asarray(poly, dtype=np.int64)
        start, stop = tuple(arr[0]), tuple(arr[-1])
        if node_mask[start]:
            u = cluster_of(start)
            v = cluster_of(stop) if node_mask[stop] else u
        else:  # node-free loop: anchor becomes a node
            u = v = len(node_positions)
            node_positions.append(start)
            kinds.append("end")
        outside = [p for p in map(tuple, arr) if not moat[p]]
        raw_edges.append({"u": u, "v": v, "poly": arr, "free": outside})

    nodes = [Node(i, p, k) for i, (p, k) in enumerate(zip(node_positions, kinds))]

    # junction-debris cleanup: residual-short edges around branch nodes are
    # absorbed (leaf spurs dropped, branch-branch connectors contracted)
    merged = list(range(len(nodes)))

    def find(a):
        while merged[a] != a:
            merged[a] = merged[merged[a]]
            a = merged[a]
        return a

    alive_edge = [True] * len(raw_edges)
    alive_node = [True] * len(nodes)
    changed = True
    while changed:
        changed = False
        for i, e in enumerate(raw_edges):
            if not alive_edge[i] or len(e["free"]) >= 3:
                continue
            u, v = find(e["u"]), find(e["v"])
            if u == v:
                continue
            ku, kv = nodes[u].kind, nodes[v].kind
            if ku == "branch" and kv == "branch":
                keep, drop = min(u, v), max(u, v)
                merged[drop] = keep
                alive_node[drop] = False
                alive_edge[i] = False
                changed = True
            elif "branch" in (ku, kv) and "end" in (ku, kv):
                leaf = u if ku == "end" else v
                if sum(1 for j, f in enumerate(raw_edges)
                       if alive_edge[j] and j != i and leaf in (find(f["u"]), find(f["v"]))) == 0:
                    alive_edge[i] = False
                    alive_node[leaf] = False
                    changed = True

    id_map = {}
    out_nodes = []
    for n in nodes:
        if alive_node[n.id] and find(n.id) == n.id:
            id_map[n.id] = len(out_nodes)
            out_nodes.append(Node(len(out_nodes), n.pos, n.kind))

    out_edges = []
    for i, e in enumerate(raw_edges):
        if not alive_edge[i]:
            continue
        u = id_map[find(e["u"])]
        v = id_map[find(e["v"])]
        arr = e["poly"]
        if v < u:
            u, v = v, u
            arr = arr[::-1].copy()
        free = e["free"]
        if len(free) >= 3:
            samples = np.array([dist[p] for p in free])
            radius = segment_radius(samples)
            low = False
        elif free:
            samples = np.array([dist[p] for p in free])
            radius = float(samples.mean())
            low = True
        else:
            samples = np.array([dist[tuple(p)] for p in arr])
            radius = float(samples.mean())
            low = True
        out_edges.append(Edge(u, v, arr, _step_length(arr), radius,
                              radius * um_per_px, samples, low, cls_name))
    out_edges.sort(key=lambda e: (e.u, e.v, e.polyline.tolist()))
    return VesselGraph(out_nodes, out_edges, mask.spacing, cls_name, um_per_px)


def bifurcations(g: VesselGraph) -> list[BifurcationRecord]:
    """One record per branch node with >= 3 incident edges.

    Parent = max-radius incident edge; ties broken by longer edge, then
    lower edge id.  Children are the radii of the remaining incident edges,
    in descending order.
    """
    records = []
    for node in g.nodes:
        if node.kind != "branch":
            continue
        inc = [i for i in g.incident(node.id) if g.edges[i].u != g.edges[i].v]
        if len(inc) < 3:
            continue
        ranked = sorted(inc, key=lambda i: (-g.edges[i].radius_px,
                                            -g.edges[i].length_px, i))
        parent = g.edges[ranked[0]]
        children = sorted((g.edges[i].radius_px for i in ranked[1:]), reverse=True)
        records.append(BifurcationRecord(node.id, parent.radius_px,
                                         parent.radius_um, children, g.cls))
    return records


def graph_cycle_rank(g: VesselGraph) -> int:
    """|E| - |V| + #components of the multigraph."""
    parent = list(range(len(g.nodes)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for e in g.edges:
        ra, rb = find(e.u), find(e.v)
        if ra != rb:
            parent[ra] = rb
    comps = len({find(i) for i in range(len(g.nodes))})
    return len(g.edges) - len(g.nodes) + comps


def pixel_cycle_rank(skel: np.ndarray, quotient_nodes: bool = True) -> int:
    """Cycle rank of the skeleton's pixel adjacency graph (8/26-connected).

    With ``quotient_nodes`` each cluster of mutually adjacent node pixels
    (endpoints/branch points) is contracted to a single vertex first, which
    removes the spurious one-pixel triangles that junctions produce in the
    raw adjacency graph; the result then matches the cycle count of the
    vessel graph and the topology of the underlying set.
    """
    fg = np.asarray(skel, dtype=bool)
    positions = list(map(tuple, np.argwhere(fg)))
    index = {p: i for i, p in enumerate(positions)}
    offs = _offsets(fg.ndim)

    group = list(range(len(positions)))
    if quotient_nodes:
        counts = neighbor_counts(fg)
        node_at = {p: (counts[p] != 2) for p in positions}
    else:
        node_at = {p: False for p in positions}

    def find(parent, a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    # first contract node-node adjacencies into cluster vertices
    for p in positions:
        if not node_at[p]:
            continue
        for off in offs:
            q = tuple(p[i] + off[i] for i in range(fg.ndim))
            if q in index and node_at.get(q, False):
                ra, rb = find(group, index[p]), find(group, index[q])
                if ra != rb:
                    group[ra] = rb

    vertices = {find(group, i) for i in range(len(positions))}
    n_edges = 0
    parent = {v: v for v in vertices}

    def pfind(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    for p in positions:
        for off in offs:
            q = tuple(p[i] + off[i] for i in range(fg.ndim))
            if q in index and p < q:
                gp, gq = find(group, index[p]), find(group, index[q])
                if gp == gq and node_at[p] and node_at[q]:
                    continue  # internal cluster adjacency, not an edge
                n_edges += 1
                ra, rb = pfind(gp), pfind(gq)
                if ra != rb:
                    parent[ra] = rb
    comps = len({pfind(v) for v in vertices})
    return n_edges - len(vertices) + comps


def graph_to_json(g: VesselGraph) -> str:
    """Stable serialization: fixed key order, lists for positions."""
    doc = {
        "spacing": list(g.spacing),
        "class": g.cls,
        "nodes": [{"id": n.id, "pos": list(n.pos), "kind": n.kind} for n in g.nodes],
        "edges": [{
            "u": e.u,
            "v": e.v,
            "polyline": [list(map(int, p)) for p in e.polyline],
            "length_px": e.length_px,
            "radius_px": e.radius_px,
            "radius_um": e.radius_um,
            "radius_samples": [float(s) for s in e.radius_samples],
            "low_confidence": bool(e.low_confidence),
        } for e in g.edges],
    }
    return json.dumps(doc, indent=1)


def graph_from_json(text: str) -> VesselGraph:
    try:
        doc = json.loads(text)
        nodes = [Node(n["id"], tuple(n["pos"]), n["kind"]) for n in doc["nodes"]]
        edges = [Edge(e["u"], e["v"], np.asarray(e["polyline"], dtype=np.int64),
                      float(e["length_px"]), float(e["radius_px"]),
                      float(e["radius_um"]),
                      np.asarray(e.get("radius_samples", []), dtype=np.float64),
                      bool(e.get("low_confidence", False)), doc["class"])
                 for e in doc["edges"]]
        spacing = tuple(doc["spacing"])
    except (KeyError, TypeError, ValueError) as exc:
        raise DataError(f"malformed graph JSON: {exc}") from exc
    scale = edges[0].radius_um / edges[0].radius_px if edges else 1.0
    return VesselGraph(nodes, edges, spacing, doc["class"], scale)
