"""Graph hemodynamics: rooted orientation, flow partitioning, Poiseuille
pressure drops, arteriovenous pressure difference, morphology statistics.

Flow enters each connected component at the node closest to the optic disc
with unit magnitude and splits at every junction according to the local
width-dependent exponent; pressures accumulate Poiseuille drops edge by
edge.  Venous trees run the same arithmetic from the disc outwards with the
physical flow direction reversed: node pressures rise with distance.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .errors import DataError
from .murray import ExponentTable, alpha_target, fixed_table
from .vessgraph import VesselGraph, bifurcations

PI = math.pi


@dataclass(frozen=True)
class SimConfig:
    p_in: float = 76.9            # inlet arterial pressure, mmHg
    p_out: float = 21.0           # outlet venous pressure, mmHg
    eta: float = 1.0              # blood viscosity (consistent units)
    k_scale: float = 1.0          # pixel-to-pressure calibration constant
    disc: tuple[float, ...] = (0.0, 0.0)
    macula_center: tuple[float, ...] = (0.0, 0.0)
    macula_radius: float = 0.0
    venous_sign: str = "paper"    # "paper" or "physical" arteriovenous formula

    def __post_init__(self):
        if self.p_in <= self.p_out:
            raise DataError("inlet pressure must exceed outlet pressure")
        if self.k_scale <= 0 or self.eta < 0:
            raise DataError("K must be positive and viscosity non-negative")
        if self.venous_sign not in ("paper", "physical"):
            raise DataError("venous_sign must be 'paper' or 'physical'")


@dataclass
class FlowEdge:
    u: int                        # upstream node (toward the root)
    v: int                        # downstream node
    length_px: float
    radius_px: float
    radius_um: float
    q: float = 0.0
    resistance: float = 0.0
    dp: float = 0.0


@dataclass
class FlowGraph:
    nodes: list                   # Node records shared with the vessel graph
    edges: list[FlowEdge]
    roots: list[int]
    cls: str = "artery"
    pressures: np.ndarray | None = None
    removed_edges: list[dict] = dc_field(default_factory=list)
    propagated: bool = False

    def children(self, nid: int) -> list[int]:
        return [i for i, e in enumerate(self.edges) if e.u == nid]


def resistance_factor(length_px: float, radius_px: float) -> float:
    """Geometry part of the hydraulic resistance, 8 L / (pi r^4)."""
    if radius_px <= 0:
        raise DataError("radius must be positive")
    return 8.0 * length_px / (PI * radius_px ** 4)


def poiseuille_dp(q: float, length_px: float, radius_px: float,
                  eta: float = 1.0, k_scale: float = 1.0) -> float:
    """Pressure drop K * |Q| * 8 eta L / (pi r^4)."""
    if length_px < 0:
        raise DataError("length must be non-negative")
    return k_scale * abs(q) * eta * resistance_factor(length_px, radius_px)


def partition_flow(q0: float, radii, alpha: float) -> list[float]:
    """Split a parent flow over child radii proportionally to r^alpha.

    The shares sum to the parent flow exactly: the largest share absorbs
    the floating-point remainder.
    """
    r = [float(x) for x in radii]
    if any(x <= 0 for x in r):
        raise DataError("child radii must be positive")
    if q0 < 0:
        raise DataError("parent flow must be non-negative")
    if len(r) == 1:
        return [q0]
    log_r = [alpha * math.log(x) for x in r]
    m = max(log_r)
    shares = [math.exp(l - m) for l in log_r]
    total = math.fsum(shares)
    flows = [q0 * s / total for s in shares]
    # push the compensated-summation residual into whichever flow can
    # absorb it, so the shares sum to the parent flow bit-exactly
    for _ in range(8):
        residual = math.fsum([q0] + [-f for f in flows])
        if residual == 0.0:
            break
        for k in sorted(range(len(flows)), key=lambda i: flows[i]):
            new = flows[k] + residual
            if new != flows[k] and new >= 0.0:
                flows[k] = new
                break
        else:
            break
    return flows


def root_and_orient(g: VesselGraph, disc: tuple[float, ...],
                    cls: str | None = None) -> FlowGraph:
    """Pick the disc-nearest node of each component as root; orient by BFS.

    Cycles are broken on the minimum-resistance spanning forest, so every
    removed (flagged) edge is the highest-resistance edge of the cycle it
    closes; the remaining tree edges are oriented away from the root.
    """
    if not g.nodes:
        raise DataError("cannot orient an empty graph")
    removed: list[dict] = []
    candidates = []
    for i, e in enumerate(g.edges):
        if e.u == e.v:
            removed.append({"edge": i, "u": e.u, "v": e.v, "reason": "self-loop"})
            continue
        rf = resistance_factor(max(e.length_px, 1.0), e.radius_px)
        candidates.append((rf, i))
    candidates.sort()

    parent = list(range(len(g.nodes)))

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    adj: dict[int, list[int]] = {n.id: [] for n in g.nodes}
    for rf, i in candidates:
        e = g.edges[i]
        ra, rb = find(e.u), find(e.v)
        if ra == rb:
            removed.append({"edge": i, "u": e.u, "v": e.v, "reason": "cycle"})
        else:
            parent[ra] = rb
            adj[e.u].append(i)
            adj[e.v].append(i)
    for nid in adj:
        adj[nid].sort()

    visited = {n.id: False for n in g.nodes}
    roots: list[int] = []
    oriented: list[FlowEdge] = []
    order = sorted(g.nodes, key=lambda n: (
        sum((a - b) ** 2 for a, b in zip(n.pos, disc)), n.id))
    for seed in order:
        if visited[seed.id]:
            continue
        roots.append(seed.id)
        visited[seed.id] = True
        queue = [seed.id]
        while queue:
            nid = queue.pop(0)
            for ei in adj[nid]:
                e = g.edges[ei]
                other = e.v if e.u == nid else e.u
                if visited[other]:
                    continue
                visited[other] = True
                oriented.append(FlowEdge(nid, other, e.length_px,
                                         e.radius_px, e.radius_um))
                queue.append(other)
    return FlowGraph(list(g.nodes), oriented, roots,
                     cls or (g.cls if g.cls != "single" else "artery"),
                     None, removed)


def propagate(fg: FlowGraph, cfg: SimConfig,
              table: ExponentTable | None = None) -> FlowGraph:
    """Fill flows, resistances, pressure drops, and node pressures in place.

    Unit inflow enters at each root.  The partition exponent is looked up
    at the parent edge width; at a root (no parent edge) the widest child
    sets the lookup width.
    """
    if fg.propagated:
        return fg
    if table is None:
        table = fixed_table(3.0)
    venous = fg.cls == "vein"
    pressures = np.full(len(fg.nodes), np.nan)
    children_of: dict[int, list[int]] = {}
    for i, e in enumerate(fg.edges):
        children_of.setdefault(e.u, []).append(i)

    for root in fg.roots:
        pressures[root] = cfg.p_out if venous else cfg.p_in
        queue = [(root, 1.0, None)]  # node, inflow, parent edge index
        while queue:
            nid, inflow, parent_ei = queue.pop(0)
            child_idx = children_of.get(nid, [])
            if not child_idx:
                continue
            if parent_ei is not None:
                width = fg.edges[parent_ei].radius_um
            else:
                width = max(fg.edges[i].radius_um for i in child_idx)
            alpha = alpha_target(width, table)
            flows = partition_flow(inflow, [fg.edges[i].radius_px for i in child_idx],
                                   alpha)
            for ei, q in zip(child_idx, flows):
                e = fg.edges[ei]
                e.q = q
                e.resistance = cfg.eta * resistance_factor(e.length_px, e.radius_px)
                e.dp = poiseuille_dp(q, e.length_px, e.radius_px, cfg.eta,
                                     cfg.k_scale)
                if venous:
                    pressures[e.v] = pressures[e.u] + e.dp
                else:
                    pressures[e.v] = pressures[e.u] - e.dp
                queue.append((e.v, q, ei))
    fg.pressures = pressures
    fg.propagated = True
    return fg


def _macular_endpoints(fg: FlowGraph, cfg: SimConfig) -> list[int]:
    has_out = {e.u for e in fg.edges}
    center = np.asarray(cfg.macula_center, dtype=np.float64)
    out = []
    for n in fg.nodes:
        if n.id in has_out or n.id in fg.roots:
            continue
        if fg.pressures is None or not np.isfinite(fg.pressures[n.id]):
            continue
        if math.dist(tuple(map(float, n.pos)), tuple(center)) <= cfg.macula_radius:
            out.append(n.id)
    return out


def delta_p_av(art: FlowGraph, ven: FlowGraph,
               cfg: SimConfig) -> tuple[float, list[dict]]:
    """Arteriovenous pressure difference at the macula plus per-path table.

    Default ("paper") formula: (P_in - P_out) - (mean arterial drop - mean
    venous drop); the "physical" variant subtracts the sum of the two mean
    drops, the series result for inlet-to-outlet traversal.
    """
    for fg, name in ((art, "artery"), (ven, "vein")):
        if not fg.propagated:
            raise DataError(f"{name} graph is not propagated")
    per_path: list[dict] = []
    drops = {}
    for fg, name in ((art, "artery"), (ven, "vein")):
        ends = _macular_endpoints(fg, cfg)
        if not ends:
            raise DataError(f"no macular endpoints for class {name}")
        boundary = cfg.p_out if fg.cls == "vein" else cfg.p_in
        vals = []
        for nid in ends:
            cum = abs(float(fg.pressures[nid]) - boundary)
            vals.append(cum)
            per_path.append({"endpoint": list(fg.nodes[nid].pos),
                             "cum_dp": cum, "class": name})
        drops[name] = math.fsum(vals) / len(vals)
    base = cfg.p_in - cfg.p_out
    if cfg.venous_sign == "paper":
        value = base - (drops["artery"] - drops["vein"])
    else:
        value = base - (drops["artery"] + drops["vein"])
    return value, per_path


@dataclass
class MorphStats:
    branch_angles_deg: list[float]
    radius_continuity: list[float]
    asymmetry: list[float]

    @property
    def mean_angle(self) -> float:
        return float(np.mean(self.branch_angles_deg)) if self.branch_angles_deg else float("nan")

    @property
    def mean_radius_continuity(self) -> float:
        return float(np.mean(self.radius_continuity)) if self.radius_continuity else float("nan")

    @property
    def mean_asymmetry(self) -> float:
        return float(np.mean(self.asymmetry)) if self.asymmetry else float("nan")


def _edge_vector(g: VesselGraph, ei: int, nid: int, steps: int = 5):
    """Direction of the first polyline steps leaving the node."""
    e = g.edges[ei]
    poly = e.polyline
    if len(poly) < 2:
        return None
    pts = poly if e.u == nid else poly[::-1]
    k = min(steps, len(pts) - 1)
    vec = (pts[k] - pts[0]).astype(np.float64)
    norm = np.linalg.norm(vec)
    return vec / norm if norm > 0 else None


def morph_stats(g: VesselGraph) -> MorphStats:
    """Branch angles, radius continuity, and bifurcation asymmetry.

    Angle per child: 180 deg minus the angle between the parent-leaving and
    child-leaving direction vectors (so a straight-through child scores 0
    and a perpendicular child 90).  Radius continuity is the standard
    deviation of the raw radius samples of each endpoint-to-bifurcation
    edge; asymmetry compares the two largest children per junction.
    """
    angles: list[float] = []
    asym: list[float] = []
    for node in g.nodes:
        if node.kind != "branch":
            continue
        inc = [i for i in g.incident(node.id) if g.edges[i].u != g.edges[i].v]
        if len(inc) < 3:
            continue
        ranked = sorted(inc, key=lambda i: (-g.edges[i].radius_px,
                                            -g.edges[i].length_px, i))
        pvec = _edge_vector(g, ranked[0], node.id)
        child_radii = []
        for ei in ranked[1:]:
            child_radii.append(g.edges[ei].radius_px)
            cvec = _edge_vector(g, ei, node.id)
            if pvec is None or cvec is None:
                continue
            cosang = float(np.clip(np.dot(pvec, cvec), -1.0, 1.0))
            angles.append(180.0 - math.degrees(math.acos(cosang)))
        top = sorted(child_radii, reverse=True)[:2]
        if len(top) == 2 and top[0] > 0:
            asym.append(1.0 - top[1] / top[0])
    rc = []
    for e in g.edges:
        kinds = {g.nodes[e.u].kind, g.nodes[e.v].kind}
        if kinds == {"end", "branch"} and len(e.radius_samples) > 0:
            rc.append(float(np.std(e.radius_samples)))
    return MorphStats(angles, rc, asym)
