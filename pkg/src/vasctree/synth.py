"""Deterministic synthetic vessel trees with known bifurcation scaling.

Every bifurcation satisfies r_parent^a = 2 * r_child^a exactly in the
ground-truth graph (children at parent * 2^(-1/a)); the raster is drawn with
hard strokes of halfwidth (r - 0.5) so distance-transform radius estimates
land on round-to-nearest(r).  Angle jitter comes from a fixed 64-bit linear
congruential generator (Knuth MMIX constants), so fixtures are bit-stable
across platforms and runs.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError
from .raster import ARTERY, VEIN, MaskGrid, ScalarField, edt
from .vessgraph import Edge, Node, VesselGraph, _step_length

_LCG_A = 6364136223846793005
_LCG_C = 1442695040888963407
_LCG_MASK = (1 << 64) - 1


class _Lcg:
    def __init__(self, seed: int):
        self.state = (seed ^ 0x9E3779B97F4A7C15) & _LCG_MASK
        self.next_uniform()

    def next_uniform(self) -> float:
        self.state = (_LCG_A * self.state + _LCG_C) & _LCG_MASK
        return (self.state >> 11) / float(1 << 53)

    def jitter(self) -> float:
        """Uniform in [-0.1, 0.1]: the +/-10% angle perturbation."""
        return 0.2 * self.next_uniform() - 0.1


@dataclass
class _Segment:
    p0: tuple[float, float]
    p1: tuple[float, float]
    radius: float
    level: int
    parent: int  # index of parent segment, -1 for the trunk


@dataclass
class SynthTree:
    graph: VesselGraph
    mask: MaskGrid
    rm_gt: ScalarField


@dataclass
class AVPair:
    artery_mask: MaskGrid
    vein_mask: MaskGrid
    labeled: MaskGrid
    artery_graph: VesselGraph
    vein_graph: VesselGraph
    disc: tuple[int, int]
    macula_center: tuple[float, float]
    macula_radius: float


def _rotate(d: tuple[float, float], theta: float) -> tuple[float, float]:
    c, s = math.cos(theta), math.sin(theta)
    return (d[0] * c - d[1] * s, d[0] * s + d[1] * c)


def _grow_segments(alpha: float, depth: int, root_radius: float,
                   branch_angle: float, length_ratio: float, seed: int,
                   root_length: float, direction=(-1.0, 0.0)) -> list[_Segment]:
    if alpha <= 0:
        raise DataError("alpha must be positive")
    if depth < 1:
        raise DataError("depth must be >= 1")
    if root_radius < 2:
        raise DataError("root_radius must be >= 2 px")
    rng = _Lcg(seed)
    shrink = 2.0 ** (-1.0 / alpha)
    segments: list[_Segment] = []

    def grow(p0, d, length, radius, level, parent):
        p1 = (p0[0] + length * d[0], p0[1] + length * d[1])
        idx = len(segments)
        segments.append(_Segment(p0, p1, radius, level, parent))
        if level < depth:
            half = math.radians(branch_angle) / 2.0
            for sign in (1.0, -1.0):
                theta = sign * half * (1.0 + rng.jitter())
                grow(p1, _rotate(d, theta), length * length_ratio,
                     radius * shrink, level + 1, idx)

    grow((0.0, 0.0), direction, root_length, float(root_radius), 0, -1)
    return segments


def _segment_distance(a: _Segment, b: _Segment) -> float:
    """Minimum distance between two 2D segments."""
    def pt_seg(p, s):
        v = (s.p1[0] - s.p0[0], s.p1[1] - s.p0[1])
        w = (p[0] - s.p0[0], p[1] - s.p0[1])
        vv = v[0] * v[0] + v[1] * v[1]
        t = 0.0 if vv == 0 else max(0.0, min(1.0, (w[0] * v[0] + w[1] * v[1]) / vv))
        d = (w[0] - t * v[0], w[1] - t * v[1])
        return math.hypot(d[0], d[1])

    return min(pt_seg(a.p0, b), pt_seg(a.p1, b), pt_seg(b.p0, a), pt_seg(b.p1, a))


def _check_collisions(segments: list[_Segment]):
    for i, a in enumerate(segments):
        for j in range(i + 1, len(segments)):
            b = segments[j]
            if b.parent == i or a.parent == j:
                continue
            if a.parent == b.parent and a.level == b.level:
                continue  # siblings share their start point
            if _segment_distance(a, b) < a.radius + b.radius:
                raise DataError(
                    "synthetic branches collide; use a shorter length_ratio, "
                    "a smaller depth, or a larger branch angle (larger canvas)")


def _stroke(canvas: np.ndarray, seg: _Segment, origin: tuple[float, float]):
    # halfwidth r - 0.15: distance values sampled on generically angled
    # strokes then read back the intended radius to within rasterization
    # noise (calibrated against the extraction pipeline)
    p0 = (seg.p0[0] - origin[0], seg.p0[1] - origin[1])
    p1 = (seg.p1[0] - origin[0], seg.p1[1] - origin[1])
    half = max(seg.radius - 0.15, 0.5)
    y0 = max(0, int(math.floor(min(p0[0], p1[0]) - half - 1)))
    y1 = min(canvas.shape[0], int(math.ceil(max(p0[0], p1[0]) + half + 2)))
    x0 = max(0, int(math.floor(min(p0[1], p1[1]) - half - 1)))
    x1 = min(canvas.shape[1], int(math.ceil(max(p0[1], p1[1]) + half + 2)))
    yy, xx = np.mgrid[y0:y1, x0:x1]
    vy, vx = p1[0] - p0[0], p1[1] - p0[1]
    vv = vy * vy + vx * vx
    wy, wx = yy - p0[0], xx - p0[1]
    t = np.clip((wy * vy + wx * vx) / vv, 0.0, 1.0) if vv > 0 else 0.0
    dy, dx = wy - t * vy, wx - t * vx
    canvas[y0:y1, x0:x1] |= dy * dy + dx * dx <= half * half


def _lattice_chain(p0: tuple[int, int], p1: tuple[int, int]) -> np.ndarray:
    """8-adjacent chain of lattice points from p0 to p1."""
    steps = max(abs(p1[0] - p0[0]), abs(p1[1] - p0[1]))
    if steps == 0:
        return np.array([p0], dtype=np.int64)
    ys = np.rint(np.linspace(p0[0], p1[0], steps + 1)).astype(np.int64)
    xs = np.rint(np.linspace(p0[1], p1[1], steps + 1)).astype(np.int64)
    pts = np.stack([ys, xs], axis=1)
    keep = np.ones(len(pts), dtype=bool)
    keep[1:] = (np.diff(pts, axis=0) != 0).any(axis=1)
    return pts[keep]


def _truth_graph(segments: list[_Segment], origin: tuple[float, float],
                 um_per_px: float, cls: str, spacing) -> VesselGraph:
    def lattice(p):
        return (int(round(p[0] - origin[0])), int(round(p[1] - origin[1])))

    node_id: dict[tuple[int, int], int] = {}
    nodes: list[Node] = []

    def get_node(pos, kind):
        if pos not in node_id:
            node_id[pos] = len(nodes)
            nodes.append(Node(len(nodes), pos, kind))
        elif kind == "branch":
            nodes[node_id[pos]].kind = "branch"
        return node_id[pos]

    has_children = {s.parent for s in segments if s.parent >= 0}
    edges = []
    for i, seg in enumerate(segments):
        a, b = lattice(seg.p0), lattice(seg.p1)
        start_kind = "end" if seg.parent == -1 else "branch"
        end_kind = "branch" if i in has_children else "end"
        u = get_node(a, start_kind)
        v = get_node(b, end_kind)
        poly = _lattice_chain(a, b)
        if v < u:
            u, v = v, u
            poly = poly[::-1].copy()
        samples = np.full(max(len(poly), 1), seg.radius, dtype=np.float64)
        edges.append(Edge(u, v, poly, _step_length(poly), seg.radius,
                          seg.radius * um_per_px, samples, False, cls))
    edges.sort(key=lambda e: (e.u, e.v, e.polyline.tolist()))
    return VesselGraph(nodes, edges, spacing, cls, um_per_px)


def _render(segments: list[_Segment], origin=None, shape=None):
    margin = max(s.radius for s in segments) + 2.0
    ys = [c for s in segments for c in (s.p0[0], s.p1[0])]
    xs = [c for s in segments for c in (s.p0[1], s.p1[1])]
    if origin is None:
        origin = (math.floor(min(ys) - margin), math.floor(min(xs) - margin))
    if shape is None:
        shape = (int(math.ceil(max(ys) - origin[0] + margin + 1)),
                 int(math.ceil(max(xs) - origin[1] + margin + 1)))
    canvas = np.zeros(shape, dtype=bool)
    for seg in segments:
        _stroke(canvas, seg, origin)
    return canvas, origin


def gen_tree(alpha: float, depth: int, root_radius: float,
             branch_angle: float = 55.0, length_ratio: float = 0.72,
             seed: int = 0, root_length: float | None = None,
             um_per_px: float = 1.0) -> SynthTree:
    """Binary tree obeying the bifurcation power law at the given exponent."""
    if root_length is None:
        root_length = 10.0 * root_radius
    # trunk tilted off-axis so no segment is lattice-aligned
    segments = _grow_segments(alpha, depth, root_radius, branch_angle,
                              length_ratio, seed, root_length,
                              direction=_rotate((-1.0, 0.0), 0.21))
    _check_collisions(segments)
    canvas, origin = _render(segments)
    mask = MaskGrid(canvas.astype(np.uint8))
    graph = _truth_graph(segments, origin, um_per_px, "single", mask.spacing)
    rm_gt = edt(mask, ARTERY)
    return SynthTree(graph, mask, rm_gt)


def _flip_rows(g: VesselGraph, pivot: int) -> VesselGraph:
    """Exact integer mirror of a graph about a lattice row."""
    nodes = [Node(n.id, (2 * pivot - n.pos[0],) + tuple(n.pos[1:]), n.kind)
             for n in g.nodes]
    edges = []
    for e in g.edges:
        poly = e.polyline.copy()
        poly[:, 0] = 2 * pivot - poly[:, 0]
        edges.append(Edge(e.u, e.v, poly, e.length_px, e.radius_px, e.radius_um,
                          e.radius_samples.copy(), e.low_confidence, "vein"))
    edges.sort(key=lambda e: (e.u, e.v, e.polyline.tolist()))
    return VesselGraph(nodes, edges, g.spacing, "vein", g.um_per_px)


def gen_av_pair(alpha: float, depth: int, root_radius: float,
                branch_angle: float = 55.0, length_ratio: float = 0.72,
                seed: int = 0, um_per_px: float = 1.0,
                artery_scale: float = 1.0) -> AVPair:
    """Mirrored artery/vein trees sharing a root at the disc.

    The vein is the exact integer mirror (about the disc row) of the
    reference tree, so with ``artery_scale`` 1 both trees have identical
    lengths and radii and the hemodynamic path sums coincide exactly.
    ``artery_scale`` uniformly rescales arterial radii for narrowing
    experiments without touching the geometry.
    """
    root_length = 10.0 * root_radius
    master = _grow_segments(alpha, depth, root_radius, branch_angle,
                            length_ratio, seed, root_length,
                            direction=_rotate((0.0, 1.0), 0.45))
    _check_collisions(master)
    art = [_Segment(s.p0, s.p1, s.radius * artery_scale, s.level, s.parent)
           for s in master]

    margin = max(s.radius for s in master) + 2.0
    ys = [c for s in master for c in (s.p0[0], s.p1[0])]
    xs = [c for s in master for c in (s.p0[1], s.p1[1])]
    origin = (math.floor(min(ys) - margin), math.floor(min(xs) - margin))
    disc_row = -origin[0]  # root sits at float row 0.0, an exact lattice row
    shape = (int(math.ceil(max(max(ys) - origin[0],
                                2 * disc_row - (min(ys) - origin[0])) + margin + 1)),
             int(math.ceil(max(xs) - origin[1] + margin + 1)))

    ref_canvas, _ = _render(master, origin, shape)
    a_canvas, _ = _render(art, origin, shape)
    # vein raster: exact row mirror of the reference canvas about the disc row
    v_canvas = np.zeros(shape, dtype=bool)
    rows = np.arange(shape[0])
    src = 2 * disc_row - rows
    ok = (src >= 0) & (src < shape[0])
    v_canvas[rows[ok]] = ref_canvas[src[ok]]

    labels = np.zeros(shape, dtype=np.uint8)
    labels[a_canvas] = ARTERY
    labels[v_canvas] = VEIN
    labels[a_canvas & v_canvas] = 3
    artery_mask = MaskGrid(a_canvas.astype(np.uint8))
    vein_mask = MaskGrid(v_canvas.astype(np.uint8))
    a_graph = _truth_graph(art, origin, um_per_px, "artery", artery_mask.spacing)
    ref_graph = _truth_graph(master, origin, um_per_px, "vein", vein_mask.spacing)
    v_graph = _flip_rows(ref_graph, disc_row)
    disc = (disc_row, int(round(0.0 - origin[1])))
    leaves = [n.pos for g in (a_graph, v_graph) for n in g.nodes
              if n.kind == "end" and n.pos != disc]
    cy = float(np.mean([p[0] for p in leaves]))
    cx = float(np.mean([p[1] for p in leaves]))
    radius = max(math.hypot(p[0] - cy, p[1] - cx) for p in leaves) + 2.0
    return AVPair(artery_mask, vein_mask, MaskGrid(labels), a_graph, v_graph,
                  disc, (cy, cx), radius)
