"""Bond-configuration (random cluster) measures with ghost vertices.

A bond configuration assigns 0/1 to every closure edge and every ghost
edge of a box.  Weights combine Bernoulli edge factors with q^K, where K
counts clusters that contain a box site and no ghost, computed after
pre-wiring the boundary according to a bond boundary condition.

Two ghost schemes appear:

* "single": one ghost, every box site carries a ghost edge with the
  constant-field parameter 1 - exp(-2H);
* two-ghost: sites with positive field link to the plus ghost, negative
  to the minus ghost, with parameters 1 - exp(-2H|h_x|).  The signed
  measure ("indicator" mode) additionally requires the two ghosts to be
  disconnected; the "abs" mode drops that requirement (equivalently wires
  the ghosts), which is the bond marginal for the absolute-value field.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.special import logsumexp

from . import _kernels, rng
from .gibbs import resolve_boundary
from .lattice import Box, Edge, Ghost, edge_order, edge_sets, exterior_boundary, interior_boundary

EDGE_ENUM_CAP = 22


def bond_p_lattice(beta: float) -> float:
    """Open probability of a lattice edge: 1 - exp(-2 beta)."""
    return -math.expm1(-2.0 * beta)


def bond_p_ghost(H: float, habs: float = 1.0) -> float:
    """Open probability of a ghost edge: 1 - exp(-2 H |h_x|)."""
    return -math.expm1(-2.0 * H * habs)


# ------------------------------------------------------------ boundaries


@dataclass(frozen=True)
class BondBoundary:
    """Bond boundary condition: a partition of the exterior-boundary sites
    (plus optionally ghosts) into pre-wired groups.

    kind "free": no pre-wiring.  kind "wired": all exterior sites and the
    listed ghosts form one group.  kind "explicit": the given groups, each
    a tuple of exterior sites and/or Ghost members.
    """

    kind: str
    groups: tuple = ()
    ghosts: tuple = ()

    @staticmethod
    def free() -> "BondBoundary":
        return BondBoundary("free")

    @staticmethod
    def wired(ghosts=(Ghost.PLUS, Ghost.MINUS)) -> "BondBoundary":
        return BondBoundary("wired", ghosts=tuple(ghosts))

    @staticmethod
    def explicit(groups) -> "BondBoundary":
        return BondBoundary("explicit", groups=tuple(tuple(g) for g in groups))

    @staticmethod
    def from_spin_boundary(eta, b: Box, scheme: str = "two") -> "BondBoundary":
        """Wire each boundary site to the ghost matching its spin value;
        free (0) sites stay unwired.  scheme "single" wires +1 sites to the
        single ghost and leaves -1 sites unwired (no negative ghost)."""
        bnd = resolve_boundary(eta, b)
        groups = []
        for z, v in sorted(bnd.items()):
            if v == 0:
                continue
            if scheme == "two":
                groups.append((z, Ghost.PLUS if v > 0 else Ghost.MINUS))
            elif scheme == "single":
                if v > 0:
                    groups.append((z, Ghost.SINGLE))
            else:
                raise ValueError(f"unknown scheme {scheme!r}")
        return BondBoundary.explicit(groups)

    def resolved_groups(self, b: Box) -> tuple:
        if self.kind == "free":
            return ()
        if self.kind == "wired":
            return (tuple(exterior_boundary(b)) + tuple(self.ghosts),)
        if self.kind == "explicit":
            ext = set(exterior_boundary(b))
            for g in self.groups:
                for m in g:
                    if not isinstance(m, Ghost) and tuple(m) not in ext:
                        raise ValueError(f"group member {m} is not an exterior site")
            return self.groups
        raise ValueError(f"unknown boundary kind {self.kind!r}")


# ---------------------------------------------------------- union - find


class ClusterPartition:
    """Deterministic union-find over arbitrary hashable nodes."""

    def __init__(self, nodes):
        self.parent = {v: v for v in nodes}

    def find(self, v):
        p = self.parent
        root = v
        while p[root] != root:
            root = p[root]
        while p[v] != root:
            p[v], v = root, p[v]
        return root

    def union(self, a, b):
        ra, rb = self.find(a), self.find(b)
        if ra != rb:
            self.parent[rb] = ra

    def same(self, a, b) -> bool:
        return self.find(a) == self.find(b)

    def components(self) -> list:
        comp = {}
        for v in self.parent:
            comp.setdefault(self.find(v), set()).add(v)
        return list(comp.values())


def _partition_from(omega: dict, nodes, groups) -> ClusterPartition:
    nodes = set(nodes)
    norm = [tuple(m if isinstance(m, Ghost) else tuple(m) for m in g)
            for g in groups]
    for g in norm:
        nodes.update(g)
    part = ClusterPartition(nodes)
    for g in norm:
        for a, b in zip(g, g[1:]):
            part.union(a, b)
    for e, val in omega.items():
        if val:
            part.union(e.u, e.v)
    return part


def _omega_nodes(omega: dict, b: Box):
    nodes = set(b.site_tuple)
    for e in omega:
        nodes.add(e.u)
        nodes.add(e.v)
    return nodes


def count_clusters(omega: dict, rho: BondBoundary, b: Box,
                   ghost_mode: str = "two", wire_ghosts: bool = False) -> int:
    """Number of clusters that meet the box and contain no ghost, after
    boundary pre-wiring.  wire_ghosts additionally merges the plus and
    minus ghosts (the cluster count is then computed on the merged
    partition).  ghost_mode names the scheme used to build omega; ghosts
    absent from omega are simply not present as nodes."""
    nodes = _omega_nodes(omega, b)
    groups = list(rho.resolved_groups(b))
    if wire_ghosts and ghost_mode == "two":
        present = [g for g in (Ghost.PLUS, Ghost.MINUS) if g in nodes]
        if len(present) == 2:
            groups.append(tuple(present))
    part = _partition_from(omega, nodes, groups)
    count = 0
    for comp in part.components():
        if any(isinstance(v, Ghost) for v in comp):
            continue
        if any(v in b for v in comp):
            count += 1
    return count


# ------------------------------------------------------------- weights


def _edge_log_factors(e: Edge, val: int, beta: float, H: float, habs_map) -> float:
    if e.is_ghost:
        lam = 2.0 * H * habs_map(e.u)
    else:
        lam = 2.0 * beta
    if val:
        p = -math.expm1(-lam)
        return math.log(p) if p > 0.0 else -math.inf
    return -lam


def rc_log_weight_constant(omega: dict, rho: BondBoundary, b: Box,
                           beta: float, H: float, q: int) -> float:
    """Unnormalized log-weight in the single-ghost constant-field scheme."""
    for e in omega:
        if e.is_ghost and e.v is not Ghost.SINGLE:
            raise ValueError("constant-field weight expects single-ghost edges")
    k = count_clusters(omega, rho, b, ghost_mode="single")
    total = k * math.log(q)
    for e, val in omega.items():
        total += _edge_log_factors(e, val, beta, H, lambda z: 1.0)
    return total


def rc_log_weight_general(omega: dict, rho: BondBoundary, b: Box, beta: float,
                          H: float, h, q: int, mode: str) -> float:
    """Unnormalized log-weight in the two-ghost scheme.

    mode "with-indicator": configurations connecting the two ghosts have
    log-weight -inf (returned, not raised).  mode "abs": no indicator.
    """
    if mode not in ("with-indicator", "abs"):
        raise ValueError(f"unknown mode {mode!r}")
    if mode == "with-indicator":
        nodes = _omega_nodes(omega, b)
        if Ghost.PLUS in nodes and Ghost.MINUS in nodes:
            part = _partition_from(omega, nodes, rho.resolved_groups(b))
            if part.same(Ghost.PLUS, Ghost.MINUS):
                return -math.inf
    k = count_clusters(omega, rho, b, ghost_mode="two",
                       wire_ghosts=(mode == "abs"))
    total = k * math.log(q)
    for e, val in omega.items():
        total += _edge_log_factors(e, val, beta, H, lambda z: abs(h[z]))
    return total


# ------------------------------------------------------- exact measure


@dataclass
class RcGraph:
    """Indexed arrays describing one bond-measure instance."""

    box: Box
    nodes: list
    node_index: dict
    edges: list
    p: np.ndarray
    in_lambda: np.ndarray
    is_ghost: np.ndarray
    node_color: np.ndarray
    pm_u: np.ndarray
    pm_v: np.ndarray
    eu: np.ndarray
    ev: np.ndarray
    q: int
    mode: str

    def edge_bit(self, e: Edge) -> int:
        return self.edges.index(e)


def build_rc_graph(b: Box, rho: BondBoundary, beta: float, H: float,
                   h=None, q: int = 2, mode: str = "single") -> RcGraph:
    mode = {"with-indicator": "indicator"}.get(mode, mode)
    if mode == "single":
        es = edge_sets(b, ghost_mode="single")
        habs = lambda z: 1.0
    elif mode in ("indicator", "abs"):
        if h is None:
            raise ValueError("two-ghost modes need the field realization h")
        es = edge_sets(b, ghost_mode="two", h=h)
        habs = lambda z: abs(h[z])
    else:
        raise ValueError(f"unknown mode {mode!r}")
    edges = edge_order(b, es)
    nodes = list(b.site_tuple) + list(exterior_boundary(b))
    ghosts = sorted({e.v for e in edges if e.is_ghost},
                    key=lambda g: (g is not Ghost.SINGLE, g is Ghost.MINUS))
    # a ghost named by the boundary but carrying no edge still pins its
    # class (kept out of the cluster count, colored under the indicator),
    # so it enters the graph as an isolated node
    for g in rho.resolved_groups(b):
        for m in g:
            if isinstance(m, Ghost) and m not in ghosts:
                ghosts.append(m)
    nodes += ghosts
    node_index = {v: i for i, v in enumerate(nodes)}
    n = len(nodes)
    in_lambda = np.zeros(n, dtype=np.uint8)
    is_ghost = np.zeros(n, dtype=np.uint8)
    color = np.full(n, -1, dtype=np.int64)
    for v, i in node_index.items():
        if isinstance(v, Ghost):
            is_ghost[i] = 1
        elif v in b:
            in_lambda[i] = 1
    if mode == "indicator":
        if Ghost.PLUS in node_index:
            color[node_index[Ghost.PLUS]] = 0
        if Ghost.MINUS in node_index:
            color[node_index[Ghost.MINUS]] = 1
    pm_u, pm_v = [], []
    groups = list(rho.resolved_groups(b))
    if mode == "abs":
        present = [g for g in (Ghost.PLUS, Ghost.MINUS) if g in node_index]
        if len(present) == 2:
            groups.append(tuple(present))
    for g in groups:
        members = [m if isinstance(m, Ghost) else tuple(m) for m in g]
        for m in members:
            if m not in node_index:
                raise ValueError(f"boundary group member {m} absent from graph")
        for a, c in zip(members, members[1:]):
            pm_u.append(node_index[a])
            pm_v.append(node_index[c])
    p = np.empty(len(edges), dtype=np.float64)
    eu = np.empty(len(edges), dtype=np.int64)
    ev = np.empty(len(edges), dtype=np.int64)
    for i, e in enumerate(edges):
        eu[i] = node_index[e.u]
        ev[i] = node_index[e.v]
        p[i] = bond_p_ghost(H, habs(e.u)) if e.is_ghost else bond_p_lattice(beta)
    return RcGraph(b, nodes, node_index, edges, p, in_lambda, is_ghost, color,
                   np.array(pm_u, dtype=np.int64), np.array(pm_v, dtype=np.int64),
                   eu, ev, q, mode)


@dataclass
class RcDistribution:
    """Exact distribution over bond configurations; mask bit i is edge
    graph.edges[i]."""

    graph: RcGraph
    log_weights: np.ndarray
    log_z: float
    probs: np.ndarray

    @property
    def edges(self) -> list:
        return self.graph.edges

    def mask_of(self, omega: dict) -> int:
        m = 0
        for i, e in enumerate(self.graph.edges):
            if omega[e]:
                m |= 1 << i
        return m

    def omega_of(self, mask: int) -> dict:
        return {e: (mask >> i) & 1 for i, e in enumerate(self.graph.edges)}

    def prob(self, omega: dict) -> float:
        return float(self.probs[self.mask_of(omega)])

    def event_prob(self, flags) -> float:
        flags = np.asarray(flags)
        return float(self.probs[flags.astype(bool)].sum())

    def edge_marginal(self, e: Edge) -> float:
        i = self.graph.edge_bit(e)
        masks = np.arange(len(self.probs))
        return float(self.probs[(masks >> i) & 1 == 1].sum())

    def marginal(self, sub_edges) -> dict:
        bits = [self.graph.edge_bit(e) for e in sub_edges]
        masks = np.arange(len(self.probs))
        out = {}
        keys = np.zeros(len(self.probs), dtype=np.int64)
        for t, i in enumerate(bits):
            keys |= (((masks >> i) & 1) << t).astype(np.int64)
        for key in np.unique(keys):
            out[tuple((int(key) >> t) & 1 for t in range(len(bits)))] = \
                float(self.probs[keys == key].sum())
        return out

    def tv(self, other: "RcDistribution") -> float:
        if self.graph.edges != other.graph.edges:
            raise ValueError("edge sets differ")
        return 0.5 * float(np.abs(self.probs - other.probs).sum())

    def connect_flags(self, set_a, set_b, lattice_only: bool = False,
                      internal_only: bool = False) -> np.ndarray:
        """Per-mask indicator that set_a reaches set_b; optionally restrict
        paths to lattice nodes and/or to internal edges."""
        g = self.graph
        n_edges = len(g.edges)
        edge_allowed = np.ones(n_edges, dtype=np.uint8)
        for i, e in enumerate(g.edges):
            if internal_only and not (not e.is_ghost and e.u in g.box and e.v in g.box):
                edge_allowed[i] = 0
            elif lattice_only and e.is_ghost:
                edge_allowed[i] = 0
        node_allowed = np.ones(len(g.nodes), dtype=np.uint8)
        if lattice_only or internal_only:
            node_allowed = (~g.is_ghost.astype(bool)).astype(np.uint8)
        if internal_only:
            node_allowed = node_allowed & g.in_lambda
        a = np.array([g.node_index[v] for v in set_a], dtype=np.int64)
        bb = np.array([g.node_index[v] for v in set_b], dtype=np.int64)
        return _kernels.enum_connect_flags(
            len(g.nodes), g.eu, g.ev, edge_allowed, node_allowed,
            g.pm_u, g.pm_v, a, bb, len(self.probs))


def exact_rc_measure(b: Box, rho: BondBoundary, beta: float, H: float,
                     h=None, q: int = 2, mode: str = "single") -> RcDistribution:
    """Exact bond measure by enumerating all 2^E configurations."""
    g = build_rc_graph(b, rho, beta, H, h=h, q=q, mode=mode)
    n_edges = len(g.edges)
    if n_edges > EDGE_ENUM_CAP:
        raise ValueError(f"{n_edges} edges exceeds the enumeration cap {EDGE_ENUM_CAP}")
    logp_open = np.empty(n_edges)
    logp_closed = np.empty(n_edges)
    for i in range(n_edges):
        pi = g.p[i]
        logp_open[i] = math.log(pi) if pi > 0 else -math.inf
        logp_closed[i] = math.log1p(-pi)
    out = np.empty(1 << n_edges, dtype=np.float64)
    _kernels.enum_log_weights(len(g.nodes), g.eu, g.ev, logp_open, logp_closed,
                              g.pm_u, g.pm_v, g.node_color, g.in_lambda,
                              g.is_ghost, math.log(q), out)
    log_z = float(logsumexp(out))
    probs = np.exp(out - log_z)
    return RcDistribution(g, out, log_z, probs)


# --------------------------------------------------------- connectivity


def connected(omega: dict, u, v, restriction=None, rho: BondBoundary | None = None,
              b: Box | None = None) -> bool:
    """Is u joined to v by open edges of omega?  restriction, if given,
    limits usable nodes (paths may only pass through them); rho with b adds
    boundary pre-wiring between allowed nodes."""
    return connected_sets(omega, [u], [v], restriction=restriction, rho=rho, b=b)


def connected_sets(omega: dict, set_a, set_b, restriction=None,
                   rho: BondBoundary | None = None, b: Box | None = None) -> bool:
    nodes = set()
    for e in omega:
        nodes.add(e.u)
        nodes.add(e.v)
    norm = lambda x: x if isinstance(x, Ghost) else tuple(x)
    set_a = [norm(x) for x in set_a]
    set_b = [norm(x) for x in set_b]
    nodes.update(set_a)
    nodes.update(set_b)
    allowed = None
    if restriction is not None:
        allowed = {norm(x) for x in restriction} | set(set_a) | set(set_b)
        nodes &= allowed
        nodes |= set(set_a) | set(set_b)
    part = ClusterPartition(nodes)
    if rho is not None:
        if b is None:
            raise ValueError("rho pre-wiring needs the box")
        for g in rho.resolved_groups(b):
            members = [m if isinstance(m, Ghost) else tuple(m) for m in g]
            members = [m for m in members if m in part.parent]
            for x, y in zip(members, members[1:]):
                part.union(x, y)
    for e, val in omega.items():
        if not val:
            continue
        if allowed is not None and (e.u not in allowed or e.v not in allowed):
            continue
        if e.u in part.parent and e.v in part.parent:
            part.union(e.u, e.v)
    return any(part.same(a, bb) for a in set_a for bb in set_b
               if a in part.parent and bb in part.parent)


# ------------------------------------------------ quenched ES alternation


def sw_sample(state: tuple, b: Box, eta, beta: float, H: float, h,
              gen: np.random.Generator) -> tuple:
    """One Edwards-Sokal alternation step for the quenched measure with
    spin boundary eta: resample bonds given spins, then spins given bonds.
    state is (sigma, omega); returns the next (sigma, omega).

    Bond stage: a closure edge opens w.p. 1-exp(-2 beta) iff its endpoint
    values agree (boundary spins contribute eta; free boundary sites never
    agree); the ghost edge at x opens w.p. 1-exp(-2 H |h_x|) iff the spin
    at x matches the sign of h_x.  Spin stage: clusters pinned by a ghost
    or a nonzero boundary spin take that value; free clusters flip a fair
    coin; boundary values stay quenched.
    """
    sigma, _ = state
    bnd = resolve_boundary(eta, b)
    es = edge_sets(b, ghost_mode="two", h=h)
    edges = edge_order(b, es)
    p1 = bond_p_lattice(beta)
    omega = {}
    u = gen.random(len(edges))
    for i, e in enumerate(edges):
        if e.is_ghost:
            z = e.u
            match = sigma[z] == (1 if e.v is Ghost.PLUS else -1)
            omega[e] = 1 if (match and u[i] <= bond_p_ghost(H, abs(h[z]))) else 0
        else:
            su = sigma[e.u] if e.u in b else bnd[e.u]
            sv = sigma[e.v] if e.v in b else bnd[e.v]
            agree = su == sv and su != 0
            omega[e] = 1 if (agree and u[i] <= p1) else 0
    nodes = set(b.site_tuple) | set(exterior_boundary(b)) | \
        {e.v for e in edges if e.is_ghost}
    part = ClusterPartition(nodes)
    for e, val in omega.items():
        if val:
            part.union(e.u, e.v)
    pins = {}
    for comp in part.components():
        root = part.find(next(iter(comp)))
        val = None
        for v in comp:
            if isinstance(v, Ghost):
                pin = v.sign
            elif v not in b:
                pin = bnd[v]
                if pin == 0:
                    continue
            else:
                continue
            if val is None:
                val = pin
            elif val != pin:
                raise AssertionError("inconsistent cluster pinning")
        pins[root] = val
    coin_u = gen.random(len(nodes))
    coin_order = {v: i for i, v in enumerate(sorted(
        (v for v in nodes if not isinstance(v, Ghost))))}
    new_sigma = {}
    for x in b.site_tuple:
        root = part.find(x)
        val = pins.get(root)
        if val is None:
            rep = min(v for v in part.parent if not isinstance(v, Ghost)
                      and part.find(v) == root)
            val = 1 if coin_u[coin_order[rep]] <= 0.5 else -1
            pins[root] = val
        new_sigma[x] = val
    return new_sigma, omega


# ----------------------------------------------------- theta estimation


@dataclass
class ThetaEstimate:
    beta: float
    H: float
    n: int
    q: int
    estimate: float
    stderr: float
    successes: int
    replicas: int
    gap: int
    burn_in: int
    seed: int
    d: int = 2

    def wilson_interval(self, z: float = 1.959963984540054) -> tuple:
        n, ph = self.replicas, self.estimate
        denom = 1.0 + z * z / n
        center = (ph + z * z / (2 * n)) / denom
        half = z * math.sqrt(ph * (1 - ph) / n + z * z / (4 * n * n)) / denom
        return max(0.0, center - half), min(1.0, center + half)


def theta_n_estimate(beta: float, H: float, n: int, q: int = 2,
                     replicas: int = 10000, gap: int = 2, burn_in: int = 200,
                     seed: int = 0, d: int = 2) -> ThetaEstimate:
    """Monte Carlo estimate of the probability that the origin reaches the
    interior boundary of the radius-n box through internal bonds, under the
    wired constant-field ghost bond measure, via cluster-update sampling.

    Only q=2 is supported by the sampler (the spin representation is an
    Ising model); exact enumeration covers other q at desk scale.
    """
    if q != 2:
        raise ValueError("cluster-update sampling requires q=2")
    b = Box.cube(n, d)
    es = edge_sets(b)
    n_sites = len(b)
    eu = np.array([b.index(e.u) for e in es.internal], dtype=np.int64)
    ev = np.array([b.index(e.v) for e in es.internal], dtype=np.int64)
    p1 = bond_p_lattice(beta)
    p2 = bond_p_ghost(H)
    mult = np.zeros(n_sites, dtype=np.int64)
    for e in es.crossing:
        inside = e.u if e.u in b else e.v
        mult[b.index(inside)] += 1
    attach_p = 1.0 - (1.0 - p1) ** mult * (1.0 - p2)
    origin = b.index((0,) * d)
    inner = np.array([b.index(x) for x in interior_boundary(b)], dtype=np.int64)
    spins = np.ones(n_sites, dtype=np.int8)
    parent = np.empty(n_sites + 1, dtype=np.int64)
    gen = np.random.default_rng(rng.derive_seed(seed, "theta", n, d))
    n_edges = len(eu)

    def one_sweep():
        u_edge = gen.random(n_edges)
        u_attach = gen.random(n_sites)
        u_coin = gen.random(n_sites + 1)
        return _kernels.sw_ghost_sweep(spins, eu, ev, p1, attach_p, u_edge,
                                       u_attach, u_coin, origin, inner, parent)

    for _ in range(burn_in):
        one_sweep()
    successes = 0
    for _ in range(replicas):
        flag = 0
        for _ in range(gap):
            flag = one_sweep()
        successes += flag
    ph = successes / replicas
    stderr = math.sqrt(max(ph * (1.0 - ph), 1e-12) / replicas) if replicas else float("inf")
    return ThetaEstimate(beta, H, n, q, ph, stderr, successes, replicas,
                         gap, burn_in, seed, d)


def theta_exact(beta: float, H: float, n: int, q: int = 2, d: int = 1) -> float:
    """Exact theta by enumeration: any n in d=1; n=1 in d=2 via the
    spin-bond factorization (spin sum times exact subgraph connection
    probabilities)."""
    if d == 1:
        b = Box.cube(n, 1)
        dist = exact_rc_measure(b, BondBoundary.wired(ghosts=(Ghost.SINGLE,)),
                                beta, H, q=q, mode="single")
        flags = dist.connect_flags([(0,)], interior_boundary(b), internal_only=True)
        return dist.event_prob(flags)
    if d == 2 and n == 1 and q == 2:
        from .gibbs import exact_measure
        b = Box.cube(1, 2)
        eff = {s: H for s in b.site_tuple}
        spin_dist = exact_measure(b, "plus", beta, eff)
        es = edge_sets(b)
        eu = np.array([b.index(e.u) for e in es.internal], dtype=np.int64)
        ev = np.array([b.index(e.v) for e in es.internal], dtype=np.int64)
        p_edge = np.full(len(eu), bond_p_lattice(beta))
        targets = np.array([b.index(x) for x in interior_boundary(b)], dtype=np.int64)
        origin = b.index((0, 0))
        total = 0.0
        for cfg, prob in zip(spin_dist.configs, spin_dist.probs):
            active = (cfg[eu] == cfg[ev]).astype(np.uint8)
            r = _kernels.subgraph_connect_prob(len(b), eu, ev, p_edge, active,
                                               origin, targets)
            total += float(prob) * r
        return total
    raise ValueError("exact theta covers d=1 (any n) and d=2 with n=1, q=2")
