"""Numba kernels: the hot loops behind samplers, exact enumerations, and
coupling reveals.

All kernels are single-threaded and branch-deterministic; given identical
inputs they produce identical outputs on any platform.  Union-find uses
path halving with deterministic root choice (smaller index wins) so cluster
roots are reproducible, which matters because cluster coins are keyed by
root identity.
"""

from __future__ import annotations

import numpy as np
from numba import njit

# ---------------------------------------------------------------- union-find


@njit(cache=True, nogil=True, inline="always")
def _find(parent, i):
    r = i
    while parent[r] != r:
        parent[r] = parent[parent[r]]
        r = parent[r]
    return r


@njit(cache=True, nogil=True, inline="always")
def _union(parent, a, b):
    ra = _find(parent, a)
    rb = _find(parent, b)
    if ra == rb:
        return ra
    if ra < rb:
        parent[rb] = ra
        return ra
    parent[ra] = rb
    return rb


@njit(cache=True, nogil=True)
def open_reach(n_nodes, eu, ev, open_flags, seeds):
    """reach[i] = 1 iff node i joins a seed node through open edges."""
    parent = np.empty(n_nodes, dtype=np.int64)
    for i in range(n_nodes):
        parent[i] = i
    for e in range(eu.shape[0]):
        if open_flags[e]:
            _union(parent, eu[e], ev[e])
    seeded = np.zeros(n_nodes, dtype=np.uint8)
    for i in range(n_nodes):
        if seeds[i]:
            seeded[_find(parent, i)] = 1
    reach = np.empty(n_nodes, dtype=np.uint8)
    for i in range(n_nodes):
        reach[i] = seeded[_find(parent, i)]
    return reach


# ---------------------------------------------------------------- heat bath


@njit(cache=True, nogil=True)
def hb_sweep(spins, neigh, bnd, ptable, u, pinned, two_d):
    """One raster-order heat-bath sweep in place.

    spins: (n,) int8 in {-1,+1}; neigh: (n, 2d) int32 site indices, -1 pad;
    bnd: (n,) int32 frozen boundary neighbor sum; ptable: (n, 4d+1) float64,
    ptable[j, m + 2d] = P(spin_j -> +1 | neighbor sum m); u: (n,) float64;
    pinned: (n,) uint8, pinned sites are skipped.
    """
    n = spins.shape[0]
    k = neigh.shape[1]
    for j in range(n):
        if pinned[j]:
            continue
        m = bnd[j]
        for t in range(k):
            idx = neigh[j, t]
            if idx >= 0:
                m += spins[idx]
        if u[j] <= ptable[j, m + two_d]:
            spins[j] = 1
        else:
            spins[j] = -1


# ------------------------------------------------- Swendsen-Wang with ghost


@njit(cache=True, nogil=True)
def sw_ghost_sweep(spins, eu, ev, p_internal, attach_p, u_edge, u_attach,
                   u_coin, origin, inner, parent):
    """One cluster update for the constant-field wired chain.

    Bond stage opens internal edges between agreeing spins w.p. p_internal;
    the returned flag records whether `origin` reaches any site in `inner`
    through those internal bonds alone (measured before boundary and ghost
    attachment).  Plus-spins then attach to the merged boundary-plus-ghost
    blob w.p. attach_p[j]; blob clusters flip to +1, every other cluster
    gets a fair +/-1 coin keyed to its root.

    parent is an (n+1,) int64 scratch array; slot n is the blob.
    """
    n = spins.shape[0]
    blob = n
    for i in range(n + 1):
        parent[i] = i
    for e in range(eu.shape[0]):
        a = eu[e]
        b = ev[e]
        if spins[a] == spins[b] and u_edge[e] <= p_internal:
            _union(parent, a, b)
    flag = 0
    r0 = _find(parent, origin)
    for t in range(inner.shape[0]):
        if _find(parent, inner[t]) == r0:
            flag = 1
            break
    for j in range(n):
        if spins[j] == 1 and u_attach[j] <= attach_p[j]:
            _union(parent, j, blob)
    rblob = _find(parent, blob)
    for j in range(n):
        r = _find(parent, j)
        if r == rblob:
            spins[j] = 1
        elif u_coin[r] <= 0.5:
            spins[j] = 1
        else:
            spins[j] = -1
    return flag


# ------------------------------------------- exact bond-measure enumeration


@njit(cache=True, nogil=True)
def enum_log_weights(n_nodes, eu, ev, logp_open, logp_closed, pm_u, pm_v,
                     node_color, in_lambda, is_ghost, logq, out_logw):
    """Log-weight of every bond configuration on a small edge set.

    Weight = q^K * prod_e p_e^{w_e} (1-p_e)^{1-w_e}, where K counts
    components that contain a box site and no ghost, computed after the
    boundary premerges (pm_u[i] ~ pm_v[i]).  node_color >= 0 pins a node's
    spin class; configurations connecting two differently pinned nodes get
    log-weight -inf (this realizes both consistency with a spin boundary
    and the two-ghost disconnection indicator).

    out_logw has length 2^E for E = len(eu); edge e maps to bit e.
    """
    n_edges = eu.shape[0]
    n_masks = out_logw.shape[0]
    parent = np.empty(n_nodes, dtype=np.int64)
    comp_color = np.empty(n_nodes, dtype=np.int64)
    has_lam = np.empty(n_nodes, dtype=np.uint8)
    has_ghost = np.empty(n_nodes, dtype=np.uint8)
    for mask in range(n_masks):
        logw = 0.0
        for i in range(n_nodes):
            parent[i] = i
        for i in range(pm_u.shape[0]):
            _union(parent, pm_u[i], pm_v[i])
        for e in range(n_edges):
            if (mask >> e) & 1:
                logw += logp_open[e]
                _union(parent, eu[e], ev[e])
            else:
                logw += logp_closed[e]
        ok = True
        for i in range(n_nodes):
            comp_color[i] = -1
            has_lam[i] = 0
            has_ghost[i] = 0
        for i in range(n_nodes):
            r = _find(parent, i)
            if in_lambda[i]:
                has_lam[r] = 1
            if is_ghost[i]:
                has_ghost[r] = 1
            c = node_color[i]
            if c >= 0:
                if comp_color[r] == -1:
                    comp_color[r] = c
                elif comp_color[r] != c:
                    ok = False
        if not ok:
            out_logw[mask] = -np.inf
            continue
        k = 0
        for i in range(n_nodes):
            if parent[i] == i and has_lam[i] and not has_ghost[i]:
                k += 1
        out_logw[mask] = logw + k * logq


@njit(cache=True, nogil=True)
def enum_connect_flags(n_nodes, eu, ev, edge_allowed, node_allowed, pm_u,
                       pm_v, set_a, set_b, n_masks):
    """flags[mask] = 1 iff some path through allowed nodes and open allowed
    edges (plus premerges between allowed nodes) joins set_a to set_b."""
    out = np.zeros(n_masks, dtype=np.uint8)
    parent = np.empty(n_nodes, dtype=np.int64)
    n_edges = eu.shape[0]
    for mask in range(n_masks):
        for i in range(n_nodes):
            parent[i] = i
        for i in range(pm_u.shape[0]):
            if node_allowed[pm_u[i]] and node_allowed[pm_v[i]]:
                _union(parent, pm_u[i], pm_v[i])
        for e in range(n_edges):
            if (mask >> e) & 1 and edge_allowed[e]:
                if node_allowed[eu[e]] and node_allowed[ev[e]]:
                    _union(parent, eu[e], ev[e])
        hit = 0
        for i in range(set_a.shape[0]):
            ra = _find(parent, set_a[i])
            for j in range(set_b.shape[0]):
                if _find(parent, set_b[j]) == ra:
                    hit = 1
                    break
            if hit:
                break
        out[mask] = hit
    return out


@njit(cache=True, nogil=True)
def subgraph_connect_prob(n_nodes, eu, ev, p_edge, active, src, targets):
    """Exact P(src reaches any target) when each active edge e opens
    independently w.p. p_edge[e]; inactive edges stay closed.  Enumerates
    the active edge subsets (2^|active|)."""
    idx = np.empty(eu.shape[0], dtype=np.int64)
    n_act = 0
    for e in range(eu.shape[0]):
        if active[e]:
            idx[n_act] = e
            n_act += 1
    parent = np.empty(n_nodes, dtype=np.int64)
    total = 0.0
    for mask in range(1 << n_act):
        w = 1.0
        for i in range(n_nodes):
            parent[i] = i
        for t in range(n_act):
            e = idx[t]
            if (mask >> t) & 1:
                w *= p_edge[e]
                _union(parent, eu[e], ev[e])
            else:
                w *= 1.0 - p_edge[e]
        if w > 0.0:
            r0 = _find(parent, src)
            for j in range(targets.shape[0]):
                if _find(parent, targets[j]) == r0:
                    total += w
                    break
    return total


# --------------------------------------------------- coupled bond reveals


@njit(cache=True, nogil=True)
def reveal_coupled(agree, transparent, p, is_closure, end1, end2, frontier0,
                   u, out_vals, out_conds, out_order):
    """Shared-uniform sequential reveal of M coupled bond measures.

    agree: (M, S, E) uint8 spin-sum agreement tensor over S box spin
    configurations and E edges; transparent: (M, E) uint8 marking edges
    whose conditional is exactly p[e] under that measure (degree-one free
    exterior sites); is_closure: (E,) uint8, 1 for lattice edges, 0 for
    ghost edges; end1/end2: (E,) int32 frontier-node ids of the lattice
    endpoints (-1 = none); frontier0: (n_nodes,) uint8 initial frontier.

    Measure 0 drives the exploration: the frontier grows across its open
    closure edges.  Edges must be pre-sorted in reveal preference order;
    in the adjacency phase the lowest-index unexplored edge touching the
    frontier is revealed for all measures with the same uniform u[e]; once
    no edge is adjacent the remaining edges are revealed in index order.

    The spin-sum state per measure is g[s] = prod over revealed edges of
    the realized factor (open: p*agree, closed: 1-p) times prod over
    unrevealed non-transparent edges of the marginal (1-p+p*agree).  The
    open conditional is then p[e] * sum(g[agree]) / sum(g), and the update
    multiplies g by: open -> agree (then p), closed -> 1-p on agreeing
    configs and 1 on disagreeing ones (the unrevealed marginal of a
    disagreeing config already equals the closed factor).  g is
    renormalized each step so long reveals cannot underflow.

    Returns (tau_b, tau_a): reveal counts at which no unexplored closure
    edge was adjacent, and at which adjacency was exhausted.
    out_vals: (M, E) int8 indexed by edge; out_conds: (M, E) float64;
    out_order: (E,) int32 edge revealed at each step.
    """
    n_meas, n_sigma, n_edges = agree.shape
    frontier = frontier0.copy()
    g = np.empty((n_meas, n_sigma), dtype=np.float64)
    for k in range(n_meas):
        for s in range(n_sigma):
            w = 1.0
            for e in range(n_edges):
                if not transparent[k, e]:
                    w *= 1.0 - p[e] + p[e] * agree[k, s, e]
            g[k, s] = w
    revealed = np.zeros(n_edges, dtype=np.uint8)
    tau_b = -1
    tau_a = -1
    step = 0
    while True:
        pick = -1
        closure_adjacent = False
        for e in range(n_edges):
            if revealed[e]:
                continue
            adj = False
            if end1[e] >= 0 and frontier[end1[e]]:
                adj = True
            elif end2[e] >= 0 and frontier[end2[e]]:
                adj = True
            if adj:
                if pick < 0:
                    pick = e
                if is_closure[e]:
                    closure_adjacent = True
                    break
        if tau_b < 0 and not closure_adjacent:
            tau_b = step
        if pick < 0:
            tau_a = step
            break
        _reveal_edge(agree, transparent, p, g, u, out_vals, out_conds, pick)
        revealed[pick] = 1
        out_order[step] = pick
        if is_closure[pick] and out_vals[0, pick] == 1:
            frontier[end1[pick]] = 1
            frontier[end2[pick]] = 1
        step += 1
    for e in range(n_edges):
        if not revealed[e]:
            _reveal_edge(agree, transparent, p, g, u, out_vals, out_conds, e)
            revealed[e] = 1
            out_order[step] = e
            step += 1
    return tau_b, tau_a


@njit(cache=True, nogil=True, inline="always")
def _reveal_edge(agree, transparent, p, g, u, out_vals, out_conds, e):
    n_meas, n_sigma = g.shape
    pe = p[e]
    for k in range(n_meas):
        if transparent[k, e]:
            cond = pe
            val = 1 if u[e] <= cond else 0
        else:
            tot = 0.0
            hit = 0.0
            for s in range(n_sigma):
                w = g[k, s]
                tot += w
                if agree[k, s, e]:
                    hit += w
            cond = pe * hit / tot
            val = 1 if u[e] <= cond else 0
            norm = 0.0
            if val == 1:
                for s in range(n_sigma):
                    if agree[k, s, e]:
                        g[k, s] *= pe
                    else:
                        g[k, s] = 0.0
                    norm += g[k, s]
            else:
                for s in range(n_sigma):
                    if agree[k, s, e]:
                        g[k, s] *= 1.0 - pe
                    norm += g[k, s]
            for s in range(n_sigma):
                g[k, s] /= norm
        out_conds[k, e] = cond
        out_vals[k, e] = val


# ----------------------------------------------------- coupled site reveal


@njit(cache=True, nogil=True)
def site_reveal(probs_a, probs_b, order, adj, init_adj, u, out_spins_a,
                out_spins_b, out_step, out_conds):
    """Shared-uniform site-by-site reveal of two spin measures.

    probs_a/probs_b: (2^n,) exact config probabilities, config bit j = +1
    at site j (raster index); order: (n,) site indices in reveal preference
    order; adj: (n, 2d) int32 in-box neighbor indices (-1 pad); init_adj:
    (n,) uint8 marking sites adjacent to an initial boundary disagreement.

    Sites adjacent to the current disagreement region are revealed first
    (lowest preference index among candidates), each with the exact
    one-site conditional given everything revealed so far, using the same
    uniform u[j] in both measures; when nothing is adjacent the remaining
    sites are revealed in preference order.  Returns tau, the reveal count
    at which adjacency ran out.
    """
    n = order.shape[0]
    n_cfg = probs_a.shape[0]
    revealed = np.zeros(n, dtype=np.uint8)
    disagree = np.zeros(n, dtype=np.uint8)
    rev_mask = np.int64(0)
    val_a = np.int64(0)
    val_b = np.int64(0)
    tau = -1
    step = 0
    while True:
        pick = -1
        for t in range(n):
            j = order[t]
            if revealed[j]:
                continue
            adjacent = init_adj[j] == 1
            if not adjacent:
                for r in range(adj.shape[1]):
                    w = adj[j, r]
                    if w >= 0 and disagree[w]:
                        adjacent = True
                        break
            if adjacent:
                pick = j
                break
        if pick < 0:
            tau = step
            break
        rev_mask, val_a, val_b = _reveal_site(
            probs_a, probs_b, u, out_spins_a, out_spins_b, out_conds,
            n_cfg, rev_mask, val_a, val_b, pick)
        revealed[pick] = 1
        out_step[pick] = step
        if out_spins_a[pick] != out_spins_b[pick]:
            disagree[pick] = 1
        step += 1
    for t in range(n):
        j = order[t]
        if not revealed[j]:
            rev_mask, val_a, val_b = _reveal_site(
                probs_a, probs_b, u, out_spins_a, out_spins_b, out_conds,
                n_cfg, rev_mask, val_a, val_b, j)
            revealed[j] = 1
            out_step[j] = step
            step += 1
    return tau


@njit(cache=True, nogil=True, inline="always")
def _reveal_site(probs_a, probs_b, u, out_spins_a, out_spins_b, out_conds,
                 n_cfg, rev_mask, val_a, val_b, j):
    bit = np.int64(1) << j
    tot_a = 0.0
    hit_a = 0.0
    tot_b = 0.0
    hit_b = 0.0
    for c in range(n_cfg):
        cc = np.int64(c)
        if (cc & rev_mask) == val_a:
            w = probs_a[c]
            tot_a += w
            if cc & bit:
                hit_a += w
        if (cc & rev_mask) == val_b:
            w = probs_b[c]
            tot_b += w
            if cc & bit:
                hit_b += w
    ca = hit_a / tot_a
    cb = hit_b / tot_b
    out_conds[0, j] = ca
    out_conds[1, j] = cb
    sa = 1 if u[j] <= ca else -1
    sb = 1 if u[j] <= cb else -1
    out_spins_a[j] = sa
    out_spins_b[j] = sb
    rev_mask = rev_mask | bit
    if sa == 1:
        val_a = val_a | bit
    if sb == 1:
        val_b = val_b | bit
    return rev_mask, val_a, val_b
