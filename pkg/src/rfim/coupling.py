"""Coupled constructions: shared-uniform reveals of bond and spin measures.

Three constructions share one engine idea: reveal elements one at a time,
compare the same uniform against each coupled measure's exact conditional
probability, and record where the coupled configurations agree or differ.

* grand bond coupling: two boundary-conditioned signed bond measures are
  revealed jointly with the dominating wired absolute-field measure, which
  drives an exploration of the cluster of the exterior boundary;
* boundary-condition spin coupling: the grand coupling plus cluster spin
  assignment with shared coins, which confines spin disagreement to the
  wired measure's boundary cluster;
* site exploration coupling: two spin measures revealed site by site
  around the growing disagreement region.

Conditionals are exact (spin-sum over box configurations, or constrained
sums over the full spin table), so instances are capped at small boxes;
the couplings are verification devices, not production samplers.

The stopping time recorded as `tau` is the reveal count at which no
unexplored element of any kind touches the exploration set (adjacency
exhaustion).  For bond reveals, `tau_closure` additionally records the
first reveal count with no adjacent unexplored lattice edge; the
agreement guarantee is asserted from `tau` on, because ghost edges
revealed between the two counts sit on the explored cluster where the
coupled conditionals legitimately differ.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit

from . import _kernels, rng
from .cluster import BondBoundary, ClusterPartition, bond_p_ghost, bond_p_lattice
from .gibbs import HeatBathChain, exact_measure, resolve_boundary, spin_matrix
from .lattice import (Box, Edge, Ghost, covered_exterior, edge_order,
                      edge_sets, exterior_boundary, vertex_order)

SPIN_SUM_CAP = 12


class CouplingInvariantError(AssertionError):
    """A per-run coupling guarantee failed."""


# ------------------------------------------------------------- uniforms


def _edge_token(e: Edge) -> tuple:
    if e.is_ghost:
        return ("g", e.v.name) + tuple(e.u)
    return ("b",) + tuple(e.u) + tuple(e.v)


def _edge_identities(edges) -> np.ndarray:
    return np.array([rng.hash_key(0, "edge-id", _edge_token(e))
                     for e in edges], dtype=np.uint64)


def _edge_uniforms(seed: int, eids: np.ndarray) -> np.ndarray:
    """uniform[i] = keyed_uniform(seed, int(eids[i])): keyed by edge
    identity, vectorized."""
    with np.errstate(over="ignore"):
        h = rng.mix64(np.full(len(eids), np.uint64(int(seed) & (2**64 - 1))))
        h = rng.mix64(h ^ eids)
    return rng.uniform_from_bits(h)


# ----------------------------------------------------------- bond system


def _class_colors(b: Box, rho: BondBoundary, ghosts_present, mode: str):
    """Resolve the boundary partition into per-exterior-site colors.

    Returns ({site: +1/-1 or None}, {ghost: +1/-1}).  A color is the spin
    value forced on any box site that connects there.  Uncolored classes
    are representable only while their total crossing degree stays at one
    (checked by the caller per edge).
    """
    members = list(exterior_boundary(b)) + list(ghosts_present)
    part = ClusterPartition(members)
    for g in rho.resolved_groups(b):
        norm = [m if isinstance(m, Ghost) else tuple(m) for m in g]
        for m in norm:
            if m not in part.parent:
                part.parent[m] = m
        for a, c in zip(norm, norm[1:]):
            part.union(a, c)
    if mode == "abs" and Ghost.PLUS in part.parent and Ghost.MINUS in part.parent:
        part.union(Ghost.PLUS, Ghost.MINUS)
    root_color = {}
    for m in part.parent:
        if not isinstance(m, Ghost):
            continue
        r = part.find(m)
        c = 1 if mode == "abs" else m.sign
        prev = root_color.get(r)
        if prev is not None and prev != c:
            raise ValueError("boundary condition wires the two ghosts together "
                             "under the indicator measure")
        root_color[r] = c
    site_color = {}
    for m in members:
        if isinstance(m, Ghost):
            continue
        site_color[m] = root_color.get(part.find(m))
    ghost_color = {g: root_color[part.find(g)] for g in ghosts_present}
    # classes sharing an uncolored root may carry at most one crossing edge
    uncolored_root = {}
    for m in members:
        if isinstance(m, Ghost):
            continue
        r = part.find(m)
        if r not in root_color:
            uncolored_root[m] = r
    return site_color, ghost_color, uncolored_root


def _measure_arrays(b: Box, edges, configs: np.ndarray, rho: BondBoundary,
                    mode: str):
    """(agree (S,E) uint8, transparent (E,) uint8) for one bond measure."""
    ghosts_present = sorted({e.v for e in edges if e.is_ghost},
                            key=lambda g: g is Ghost.MINUS)
    site_color, ghost_color, uncolored_root = _class_colors(
        b, rho, ghosts_present, mode)
    n_cfg, n = configs.shape
    agree = np.ones((n_cfg, len(edges)), dtype=np.uint8)
    transparent = np.zeros(len(edges), dtype=np.uint8)
    idx = {x: j for j, x in enumerate(b.site_tuple)}
    crossing_load = {}
    for t, e in enumerate(edges):
        if e.is_ghost:
            agree[:, t] = configs[:, idx[e.u]] == ghost_color[e.v]
            continue
        if e.u in b and e.v in b:
            agree[:, t] = configs[:, idx[e.u]] == configs[:, idx[e.v]]
            continue
        x, z = (e.u, e.v) if e.u in b else (e.v, e.u)
        color = site_color[z]
        if color is not None:
            agree[:, t] = configs[:, idx[x]] == color
            continue
        r = uncolored_root[z]
        crossing_load[r] = crossing_load.get(r, 0) + 1
        if crossing_load[r] > 1:
            raise ValueError(
                "boundary class without a fixed value carries more than one "
                "crossing edge; the measure has no box-spin representation")
        transparent[t] = 1
    return agree, transparent


@dataclass
class BondRunResult:
    seed: int
    values: np.ndarray        # (M, E) int8, indexed by edge position
    conds: np.ndarray         # (M, E) float64
    uniforms: np.ndarray      # (E,)
    order: np.ndarray         # (E,) edge index revealed at each step
    tau: int                  # adjacency exhaustion
    tau_closure: int          # first step with no adjacent lattice edge
    checks: dict


class CoupledBondSystem:
    """Joint reveal of several bond measures on one two-ghost edge set.

    measures is a list of (label, boundary, mode); measure 0 drives the
    exploration and is meant to be the dominating wired absolute-field
    measure.  Instances are reusable across seeds: all spin-sum tensors
    are built once.
    """

    def __init__(self, b: Box, beta: float, H: float, h, measures, q: int = 2):
        if q != 2:
            raise ValueError("coupled reveals support q=2 only")
        if len(b) > SPIN_SUM_CAP:
            raise ValueError(f"{len(b)} sites exceeds the coupling cap {SPIN_SUM_CAP}")
        self.box = b
        self.beta = beta
        self.H = H
        self.h = h
        self.labels = [m[0] for m in measures]
        es = edge_sets(b, ghost_mode="two", h=h)
        self.edges = edge_order(b, es)
        E = len(self.edges)
        self.p = np.array([bond_p_ghost(H, abs(h[e.u])) if e.is_ghost
                           else bond_p_lattice(beta) for e in self.edges])
        self.is_closure = np.array([0 if e.is_ghost else 1 for e in self.edges],
                                   dtype=np.uint8)
        self.eids = _edge_identities(self.edges)
        self.nodes = list(b.site_tuple) + list(exterior_boundary(b))
        nid = {x: i for i, x in enumerate(self.nodes)}
        self.end1 = np.full(E, -1, dtype=np.int32)
        self.end2 = np.full(E, -1, dtype=np.int32)
        for t, e in enumerate(self.edges):
            if e.is_ghost:
                self.end1[t] = nid[e.u]
            else:
                self.end1[t] = nid[e.u]
                self.end2[t] = nid[e.v]
        self.frontier0 = np.zeros(len(self.nodes), dtype=np.uint8)
        for z in covered_exterior(b):
            self.frontier0[nid[z]] = 1
        self.ext_seed = np.zeros(len(self.nodes), dtype=np.uint8)
        for z in exterior_boundary(b):
            self.ext_seed[nid[z]] = 1
        self.closure_idx = np.array(
            [t for t in range(E) if self.is_closure[t]], dtype=np.int64)
        self.ceu = self.end1[self.closure_idx].astype(np.int64)
        self.cev = self.end2[self.closure_idx].astype(np.int64)
        configs = spin_matrix(len(b))
        mats = [_measure_arrays(b, self.edges, configs, rho, mode)
                for _, rho, mode in measures]
        self.agree = np.stack([m[0] for m in mats]).astype(np.uint8)
        self.transparent = np.stack([m[1] for m in mats]).astype(np.uint8)

    def boundary_reach(self, driver_values: np.ndarray) -> np.ndarray:
        """Per-node flag: joined to the exterior boundary through open
        lattice edges of the driving configuration."""
        open_flags = driver_values[self.closure_idx].astype(np.uint8)
        return _kernels.open_reach(len(self.nodes), self.ceu, self.cev,
                                   open_flags, self.ext_seed)

    def run(self, seed: int) -> BondRunResult:
        E = len(self.edges)
        M = len(self.labels)
        u = _edge_uniforms(seed, self.eids)
        vals = np.empty((M, E), dtype=np.int8)
        conds = np.empty((M, E), dtype=np.float64)
        order = np.empty(E, dtype=np.int32)
        tau_b, tau_a = _kernels.reveal_coupled(
            self.agree, self.transparent, self.p, self.is_closure,
            self.end1, self.end2, self.frontier0, u, vals, conds, order)
        checks = self._verify(vals, order, tau_b, tau_a, seed)
        return BondRunResult(seed, vals, conds, u, order, tau_a, tau_b, checks)

    def _verify(self, vals, order, tau_b, tau_a, seed) -> dict:
        # guarantees hold on each measure's real edges; an edge that is
        # transparent under a measure is an independent Bernoulli(p)
        # decoration there (it touches no spin), and its value is outside
        # every comparison involving that measure
        E = vals.shape[1]
        in_adj = np.zeros(E, dtype=bool)
        in_adj[order[:tau_a]] = True
        real = self.transparent == 0      # (M, E)
        dominated = (vals[1:] <= vals[0]) | ~real[1:]
        mono_adj = bool((dominated | ~in_adj).all())
        mono_all = bool(dominated.all())
        checks = {
            "monotone_before_tau": mono_adj,
            "monotone_everywhere": mono_all,
            "tau": int(tau_a),
            "tau_closure": int(tau_b),
        }
        if len(vals) >= 3:
            sym = self.transparent[1] == self.transparent[2]
            equal = (vals[1] == vals[2]) | ~sym
            checks["post_tau_equal"] = bool((equal | in_adj).all())
            in_window = np.zeros(E, dtype=bool)
            in_window[order[tau_b:tau_a]] = True
            checks["window_equal"] = bool((equal | ~in_window).all())
            diff = (vals[1] != vals[2]) & sym
            checks["n_disagree"] = int(diff.sum())
            reach = self.boundary_reach(vals[0])
            r1 = np.where(self.end1 >= 0, reach[np.maximum(self.end1, 0)], 0)
            r2 = np.where(self.end2 >= 0, reach[np.maximum(self.end2, 0)], 0)
            touched = (r1 | r2).astype(bool)
            checks["disagreement_reaches_boundary"] = bool(
                touched[diff].all()) if diff.any() else True
            pinned = ("monotone_before_tau", "post_tau_equal",
                      "disagreement_reaches_boundary")
        else:
            pinned = ("monotone_before_tau",)
        bad = [k for k in pinned if not checks[k]]
        if bad:
            raise CouplingInvariantError(
                f"coupling guarantees {bad} failed at seed {seed}")
        return checks


@dataclass
class CouplingTrace:
    """Ordered reveal log of one coupling run."""

    kind: str                 # "bond" or "site"
    labels: list
    elements: list            # edge or site per reveal step
    uniforms: np.ndarray
    values: np.ndarray        # (M, steps) in reveal order
    conds: np.ndarray         # (M, steps)
    tau: int
    checks: dict
    finals: list              # one {element: value} per measure
    tau_closure: int | None = None
    approximate: bool = False
    boundary: dict = field(default_factory=dict)

    def __post_init__(self):
        n = len(self.elements)
        if not (len(self.uniforms) == self.values.shape[1]
                == self.conds.shape[1] == n):
            raise ValueError("trace log length mismatch")

    def explored(self, t: int) -> list:
        return self.elements[:t]

    def to_jsonl(self) -> str:
        def name(el):
            if isinstance(el, Edge):
                u = el.u if not isinstance(el.u, Ghost) else el.u.name
                v = el.v if not isinstance(el.v, Ghost) else el.v.name
                return [list(u) if isinstance(u, tuple) else u,
                        list(v) if isinstance(v, tuple) else v]
            return list(el)

        lines = []
        for t, el in enumerate(self.elements):
            lines.append(json.dumps({
                "step": t,
                "element": name(el),
                "u": float(self.uniforms[t]),
                "values": [int(v) for v in self.values[:, t]],
                "conds": [float(c) for c in self.conds[:, t]],
            }))
        summary = {"tau": self.tau, "labels": self.labels,
                   "checks": self.checks, "approximate": self.approximate}
        if self.tau_closure is not None:
            summary["tau_closure"] = self.tau_closure
        lines.append(json.dumps(summary))
        return "\n".join(lines) + "\n"


def _bond_trace(system: CoupledBondSystem, res: BondRunResult) -> CouplingTrace:
    order = res.order
    elements = [system.edges[i] for i in order]
    finals = [{system.edges[i]: int(res.values[k, i])
               for i in range(len(system.edges))}
              for k in range(len(system.labels))]
    return CouplingTrace("bond", list(system.labels), elements,
                         res.uniforms[order], res.values[:, order],
                         res.conds[:, order], res.tau, res.checks, finals,
                         tau_closure=res.tau_closure)


def grand_rc_coupling(b: Box, beta: float, H: float, h, rho: BondBoundary,
                      rho_p: BondBoundary, seed: int, q: int = 2):
    """Joint reveal of the signed bond measures for boundaries rho and
    rho_p under the dominating wired absolute-field measure.

    Returns (omega_rho, omega_rho_p, omega_wired, trace).  Per-run
    guarantees (domination before tau, agreement after tau, disagreement
    confined to the wired boundary cluster) are asserted internally.

    All measures share one edge list for keying; a crossing edge whose
    exterior site is free under a given boundary is a decoration for that
    measure (independent Bernoulli(p), no spin attached), and the
    guarantees quantify over real edges only.
    """
    system = CoupledBondSystem(
        b, beta, H, h,
        [("wired-abs", BondBoundary.wired(), "abs"),
         ("rho", rho, "indicator"),
         ("rho-prime", rho_p, "indicator")], q=q)
    res = system.run(seed)
    trace = _bond_trace(system, res)
    omega_w = trace.finals[0]
    omega_r = trace.finals[1]
    omega_rp = trace.finals[2]
    return omega_r, omega_rp, omega_w, trace


# -------------------------------------------------- cluster spin assignment


def es_conditional_spins(omega: dict, b: Box, eta, seed: int) -> dict:
    """Spin configuration drawn from the conditional law given bonds.

    Clusters joined to a ghost take that ghost's sign; clusters joined to
    a nonzero boundary spin take its value (the boundary value acts as a
    ghost attachment); remaining clusters get fair coins keyed by their
    first box site in vertex order, so identical clusters across coupled
    runs receive identical coins.  A bond configuration joining opposite
    pins is rejected with the violating pair named.
    """
    bnd = resolve_boundary(eta, b)
    nodes = set(b.site_tuple)
    for e in omega:
        nodes.add(e.u)
        nodes.add(e.v)
    for z, v in bnd.items():
        if v != 0:
            nodes.add(z)
            nodes.add(Ghost.PLUS if v > 0 else Ghost.MINUS)
    part = ClusterPartition(nodes)
    for e, val in omega.items():
        if val:
            part.union(e.u, e.v)
    for z, v in bnd.items():
        if v != 0:
            part.union(z, Ghost.PLUS if v > 0 else Ghost.MINUS)
    pins = {}
    witness = {}
    for node in sorted(nodes, key=str):
        if isinstance(node, Ghost):
            val = node.sign
        elif node not in b and node in bnd and bnd[node] != 0:
            val = bnd[node]
        else:
            continue
        r = part.find(node)
        if r in pins and pins[r] != val:
            raise ValueError(
                f"bond configuration inconsistent with the boundary: "
                f"{witness[r]} (pinned {pins[r]:+d}) and {node} "
                f"(pinned {val:+d}) share a cluster")
        pins[r] = val
        witness[r] = node
    rank = {x: t for t, x in enumerate(vertex_order(b))}
    reps = {}
    for x in b.site_tuple:
        r = part.find(x)
        if r not in reps or rank[x] < rank[reps[r]]:
            reps[r] = x
    sigma = {}
    for x in b.site_tuple:
        r = part.find(x)
        if r in pins:
            sigma[x] = pins[r]
        else:
            u = rng.keyed_uniform(seed, "coin", reps[r])
            sigma[x] = 1 if u <= 0.5 else -1
    return sigma


class IsingBcSystem:
    """Grand bond coupling plus shared-coin spin assignment for two spin
    boundary conditions."""

    def __init__(self, b: Box, beta: float, H: float, h, eta, eta_p, q: int = 2):
        self.box = b
        self.h = h
        self.eta = eta
        self.eta_p = eta_p
        self.bond = CoupledBondSystem(
            b, beta, H, h,
            [("wired-abs", BondBoundary.wired(), "abs"),
             ("eta", BondBoundary.from_spin_boundary(eta, b), "indicator"),
             ("eta-prime", BondBoundary.from_spin_boundary(eta_p, b),
              "indicator")], q=q)

    def run(self, seed: int):
        res = self.bond.run(seed)
        reach = self.bond.boundary_reach(res.values[0])
        nid = {x: i for i, x in enumerate(self.bond.nodes)}
        cplus = {x for x in self.box.site_tuple if reach[nid[x]]}
        coin_seed = rng.derive_seed(seed, "cluster-coins")
        edges = self.bond.edges
        omega = {e: int(res.values[1, t]) for t, e in enumerate(edges)}
        omega_p = {e: int(res.values[2, t]) for t, e in enumerate(edges)}
        sigma = es_conditional_spins(omega, self.box, self.eta, coin_seed)
        sigma_p = es_conditional_spins(omega_p, self.box, self.eta_p, coin_seed)
        mism = [x for x in self.box.site_tuple
                if x not in cplus and sigma[x] != sigma_p[x]]
        res.checks["spins_equal_off_boundary_cluster"] = not mism
        if mism:
            raise CouplingInvariantError(
                f"spin disagreement outside the boundary cluster at {mism} "
                f"(seed {seed})")
        return sigma, sigma_p, cplus, res, omega, omega_p


def ising_bc_coupling(b: Box, beta: float, H: float, h, eta, eta_p, seed: int,
                      q: int = 2):
    """Coupling of the spin measures for boundaries eta and eta_p.

    Returns (sigma_eta, sigma_eta_p, cplus, trace) where cplus is the set
    of box sites joined to the exterior boundary by open lattice edges of
    the dominating wired configuration; the two spin fields provably agree
    off cplus (asserted per run).
    """
    system = IsingBcSystem(b, beta, H, h, eta, eta_p, q=q)
    sigma, sigma_p, cplus, res, _, _ = system.run(seed)
    trace = _bond_trace(system.bond, res)
    return sigma, sigma_p, cplus, trace


# ------------------------------------------------------ site exploration


class SiteExplorationSystem:
    """Site-by-site reveal of two spin measures around the disagreement
    region seeded by their boundary difference."""

    def __init__(self, b: Box, beta: float, H: float, h, eta, eta_p):
        for x in b.site_tuple:
            if h[x] == 0:
                raise ValueError(f"site {x} has zero field value; the "
                                 "exploration requires h_x != 0 everywhere")
        self.box = b
        self.beta = beta
        self.H = H
        self.h = h
        n = len(b)
        eff = {x: H * h[x] for x in b.site_tuple}
        self.dist_a = exact_measure(b, eta, beta, eff)
        self.dist_b = exact_measure(b, eta_p, beta, eff)
        self.bnd_a = resolve_boundary(eta, b)
        self.bnd_b = resolve_boundary(eta_p, b)
        self.boundary_s = {z: int(self.bnd_a[z] != self.bnd_b[z])
                           for z in exterior_boundary(b)}
        self.order = np.array([b.index(x) for x in vertex_order(b)],
                              dtype=np.int64)
        two_d = 2 * b.dim
        self.adj = np.full((n, two_d), -1, dtype=np.int32)
        self.init_adj = np.zeros(n, dtype=np.uint8)
        for j, x in enumerate(b.site_tuple):
            t = 0
            for axis in range(b.dim):
                for step in (-1, 1):
                    w = tuple(c + step * (axis == a) for a, c in enumerate(x))
                    if w in b:
                        self.adj[j, t] = b.index(w)
                        t += 1
                    elif self.boundary_s.get(w, 0):
                        self.init_adj[j] = 1
            # unused slots stay -1
        self.coords = np.array(b.site_tuple, dtype=np.int64)

    def run(self, seed: int):
        n = len(self.box)
        u = rng.coords_uniforms(seed, self.coords, "site-reveal")
        spins_a = np.empty(n, dtype=np.int8)
        spins_b = np.empty(n, dtype=np.int8)
        step_of = np.empty(n, dtype=np.int64)
        conds = np.empty((2, n), dtype=np.float64)
        tau = _kernels.site_reveal(self.dist_a.probs, self.dist_b.probs,
                                   self.order, self.adj, self.init_adj, u,
                                   spins_a, spins_b, step_of, conds)
        post = step_of >= tau
        post_equal = bool((spins_a[post] == spins_b[post]).all())
        checks = {"post_tau_equal": post_equal, "tau": int(tau),
                  "n_disagree": int((spins_a != spins_b).sum())}
        if not post_equal:
            raise CouplingInvariantError(
                f"post-tau site disagreement at seed {seed}")
        return spins_a, spins_b, step_of, conds, u, tau, checks


def site_exploration_coupling(b: Box, beta: float, H: float, h, eta, eta_p,
                              seed: int, approximate: bool = False,
                              sweeps: int = 400):
    """Couple the spin measures for eta and eta_p site by site.

    Returns (sigma_eta, sigma_eta_p, s_field, trace); s_field maps every
    site of the closed box to 1 where the coupled values differ (boundary
    sites: where the boundary conditions differ).  In approximate mode the
    conditionals come from heat-bath estimation instead of exact sums;
    guarantees are then not asserted and the trace is flagged.
    """
    if approximate:
        return _site_exploration_approx(b, beta, H, h, eta, eta_p, seed, sweeps)
    system = SiteExplorationSystem(b, beta, H, h, eta, eta_p)
    spins_a, spins_b, step_of, conds, u, tau, checks = system.run(seed)
    order = np.argsort(step_of, kind="stable")
    elements = [b.site_tuple[int(j)] for j in order]
    sigma = {x: int(spins_a[b.index(x)]) for x in b.site_tuple}
    sigma_p = {x: int(spins_b[b.index(x)]) for x in b.site_tuple}
    s_field = dict(system.boundary_s)
    for x in b.site_tuple:
        s_field[x] = int(sigma[x] != sigma_p[x])
    trace = CouplingTrace(
        "site", ["eta", "eta-prime"], elements, u[order],
        np.stack([spins_a[order], spins_b[order]]),
        conds[:, order], tau, checks,
        [sigma, sigma_p], boundary=dict(system.boundary_s))
    return sigma, sigma_p, s_field, trace


def _site_exploration_approx(b, beta, H, h, eta, eta_p, seed, sweeps):
    """Heat-bath-estimated conditionals; for demonstrations beyond the
    exact cap.  No guarantees are asserted."""
    bnd_a = resolve_boundary(eta, b)
    bnd_b = resolve_boundary(eta_p, b)
    boundary_s = {z: int(bnd_a[z] != bnd_b[z]) for z in exterior_boundary(b)}
    eff = {x: H * h[x] for x in b.site_tuple}
    order = vertex_order(b)
    revealed_a, revealed_b = {}, {}
    s_field = dict(boundary_s)
    elements, us, rows_a, rows_b, ca_list, cb_list = [], [], [], [], [], []

    def estimate(bc, revealed, x, chain_seed):
        chain = HeatBathChain(b, bc, beta, eff, chain_seed, pinned=revealed)
        burn = max(20, sweeps // 5)
        chain.sweep(burn)
        hits = 0
        for s in range(sweeps):
            chain.sweep()
            hits += chain.spin_at(x) == 1
        return hits / sweeps

    def neighbors(x):
        for axis in range(b.dim):
            for step in (-1, 1):
                yield tuple(c + step * (axis == a) for a, c in enumerate(x))

    disagree = set()
    tau = None
    step = 0
    remaining = [x for x in order]
    while remaining:
        pick = None
        for x in remaining:
            adj = any(boundary_s.get(w, 0) for w in neighbors(x) if w not in b) \
                or any(w in disagree for w in neighbors(x))
            if adj:
                pick = x
                break
        if pick is None:
            if tau is None:
                tau = step
            pick = remaining[0]
        remaining.remove(pick)
        u = rng.keyed_uniform(seed, "site-reveal", pick)
        ca = estimate(eta, revealed_a, pick, rng.derive_seed(seed, "hb-a", pick))
        cb = estimate(eta_p, revealed_b, pick, rng.derive_seed(seed, "hb-b", pick))
        sa = 1 if u <= ca else -1
        sb = 1 if u <= cb else -1
        revealed_a[pick] = sa
        revealed_b[pick] = sb
        if sa != sb:
            disagree.add(pick)
        s_field[pick] = int(sa != sb)
        elements.append(pick)
        us.append(u)
        rows_a.append(sa)
        rows_b.append(sb)
        ca_list.append(ca)
        cb_list.append(cb)
        step += 1
    if tau is None:
        tau = step
    trace = CouplingTrace(
        "site", ["eta", "eta-prime"], elements, np.array(us),
        np.array([rows_a, rows_b], dtype=np.int8),
        np.array([ca_list, cb_list]), tau,
        {"approximate": True, "tau": tau}, [dict(revealed_a), dict(revealed_b)],
        approximate=True, boundary=boundary_s)
    return dict(revealed_a), dict(revealed_b), s_field, trace


# ------------------------------------------------- worst-case sign bounds


def sign_bound_a(beta: float, H: float, habs: float, d: int) -> float:
    """Worst-case probability that a site's spin matches its field sign,
    with every neighbor opposing: logistic in 2(H|h| - 2 d beta)."""
    if beta < 0 or H < 0 or habs < 0 or d < 1:
        raise ValueError("arguments must be nonnegative (d >= 1)")
    return float(expit(2.0 * (H * habs - 2.0 * d * beta)))


def domination_p(beta: float, H: float, habs: float, d: int) -> float:
    """Per-site parameter of the independent field dominating the
    disagreement region: 1 - a^2."""
    a = sign_bound_a(beta, H, habs, d)
    return 1.0 - a * a


def dominating_site_sample(b: Box, p_field, boundary_s, seed: int) -> dict:
    """Independent Bernoulli(p_x) site configuration on the box, with the
    given boundary values fixed."""
    out = {z: int(v) for z, v in dict(boundary_s).items()}
    for x in b.site_tuple:
        px = p_field[x]
        if not 0.0 <= px <= 1.0:
            raise ValueError(f"p[{x}] = {px} outside [0,1]")
        out[x] = int(rng.keyed_uniform(seed, "site-perc", x) <= px)
    return out
