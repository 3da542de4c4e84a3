"""Coupled reveal constructions against enumeration oracles.

The main oracle recomputes every reveal step of the bond coupling from the
exactly enumerated bond measures: the conditional of the next edge given
the already revealed values is a ratio of event probabilities in the 2^E
table, with no spin-sum machinery involved.  Spin-level couplings are
checked against exact spin enumeration and against closed-form single-site
probabilities.
"""

import json

import numpy as np
import pytest
from scipy.special import expit

from rfim import rng
from rfim.cluster import BondBoundary, exact_rc_measure
from rfim.coupling import (CoupledBondSystem, CouplingInvariantError,
                           CouplingTrace, IsingBcSystem,
                           SiteExplorationSystem, dominating_site_sample,
                           domination_p, es_conditional_spins,
                           grand_rc_coupling, ising_bc_coupling,
                           sign_bound_a, site_exploration_coupling)
from rfim.gibbs import exact_measure
from rfim.lattice import (Box, Edge, Ghost, covered_exterior, edge_sets,
                          exterior_boundary, sqdist_to_complement)

# ------------------------------------------------------------- oracles


def partial_conditional(dist, assigned, i):
    """P(edge i open | assigned edge values) straight from the enumerated
    configuration table."""
    n = len(dist.probs)
    masks = np.arange(n, dtype=np.int64)
    sel = np.ones(n, dtype=bool)
    for j, v in assigned.items():
        sel &= ((masks >> j) & 1) == v
    den = dist.probs[sel].sum()
    num = dist.probs[sel & (((masks >> i) & 1) == 1)].sum()
    return num / den


def oracle_reveal(system, dists, seed):
    """Replay the coupled reveal with conditionals taken from enumerated
    measures; returns (conds, vals, order, tau_closure, tau) indexed like
    the system output."""
    edges = system.edges
    E = len(edges)
    M = len(dists)
    ends = [(e.u,) if e.is_ghost else (e.u, e.v) for e in edges]
    frontier = set(covered_exterior(system.box))
    revealed = [False] * E
    assigned = [dict() for _ in range(M)]
    conds = np.zeros((M, E))
    vals = np.zeros((M, E), dtype=int)
    order = []
    tau_b = None
    tau_a = None

    def reveal(t, grow):
        u = rng.keyed_uniform(seed, int(system.eids[t]))
        for k in range(M):
            c = partial_conditional(dists[k], assigned[k], t)
            v = 1 if u <= c else 0
            conds[k, t] = c
            vals[k, t] = v
            assigned[k][t] = v
        revealed[t] = True
        order.append(t)
        if grow and not edges[t].is_ghost and vals[0, t] == 1:
            frontier.update(ends[t])

    step = 0
    while True:
        pick = None
        closure_adj = False
        for t in range(E):
            if revealed[t]:
                continue
            if any(w in frontier for w in ends[t]):
                if pick is None:
                    pick = t
                if not edges[t].is_ghost:
                    closure_adj = True
                    break
        if tau_b is None and not closure_adj:
            tau_b = step
        if pick is None:
            tau_a = step
            break
        reveal(pick, grow=True)
        step += 1
    for t in range(E):
        if not revealed[t]:
            reveal(t, grow=False)
    return conds, vals, order, tau_b, tau_a


def emp_tv(counts, probs):
    freq = counts / counts.sum()
    return 0.5 * np.abs(freq - probs).sum()


def mixed_eta(b, zero_sites=(), flip=False):
    out = {}
    for z in exterior_boundary(b):
        if z in zero_sites:
            out[z] = 0
        else:
            v = 1 if (z[0] + z[1]) % 2 == 0 else -1
            out[z] = -v if flip else v
    return out


# ------------------------------------------- bond coupling vs enumeration


def bond_system(b, beta, H, h, m1, m2):
    return CoupledBondSystem(
        b, beta, H, h,
        [("w", BondBoundary.wired(), "abs"), ("a", m1[0], m1[1]),
         ("b", m2[0], m2[1])])


def check_against_oracle(b, beta, H, h, m1, m2, seeds):
    system = bond_system(b, beta, H, h, m1, m2)
    dists = [exact_rc_measure(b, BondBoundary.wired(), beta, H, h=h, mode="abs"),
             exact_rc_measure(b, m1[0], beta, H, h=h, mode=m1[1]),
             exact_rc_measure(b, m2[0], beta, H, h=h, mode=m2[1])]
    for d in dists:
        assert d.graph.edges == system.edges
    for seed in seeds:
        res = system.run(seed)
        conds, vals, order, tau_b, tau_a = oracle_reveal(system, dists, seed)
        assert res.tau == tau_a and res.tau_closure == tau_b
        assert list(res.order) == order
        assert np.array_equal(res.values, vals)
        assert np.abs(res.conds - conds).max() < 1e-10
        for t, e in enumerate(system.edges):
            assert res.uniforms[t] == rng.keyed_uniform(seed, int(system.eids[t]))


def test_reveal_conditionals_match_enumeration_rect():
    b = Box.rect((0, 0), (1, 0))
    h = {(0, 0): 0.0, (1, 0): -0.7}
    eta = mixed_eta(b, zero_sites=((0, 1),))
    eta_p = mixed_eta(b, flip=True)
    check_against_oracle(b, 0.4, 0.35, h,
                         (BondBoundary.from_spin_boundary(eta, b), "indicator"),
                         (BondBoundary.from_spin_boundary(eta_p, b), "indicator"),
                         seeds=(3, 11, 208))


def test_reveal_conditionals_match_enumeration_free_and_explicit():
    b = Box.rect((0, 0), (1, 0))
    h = {(0, 0): 0.9, (1, 0): -0.7}
    grp = BondBoundary.explicit((((-1, 0), (2, 0), Ghost.PLUS),))
    check_against_oracle(b, 0.55, 0.2, h,
                         (BondBoundary.free(), "indicator"),
                         (grp, "indicator"),
                         seeds=(5, 77))


def test_reveal_conditionals_match_enumeration_lshape():
    b = Box.from_sites([(0, 0), (1, 0), (0, 1)])
    h = {(0, 0): 1.0, (1, 0): -0.6, (0, 1): 0.8}
    eta = {z: 0 if z == (0, 2) else (1 if (z[0] + z[1]) % 2 == 0 else -1)
           for z in exterior_boundary(b)}
    eta_p = {z: -1 for z in exterior_boundary(b)}
    check_against_oracle(b, 0.3, 0.5, h,
                         (BondBoundary.from_spin_boundary(eta, b), "indicator"),
                         (BondBoundary.from_spin_boundary(eta_p, b), "indicator"),
                         seeds=(1, 42))


def test_unrepresentable_boundary_rejected():
    # the exterior corner of the L has two crossing edges; leaving it free
    # couples them and the reveal has no per-edge factorization
    b = Box.from_sites([(0, 0), (1, 0), (0, 1)])
    h = {x: 1.0 for x in b.site_tuple}
    eta = {z: 0 if z == (1, 1) else 1 for z in exterior_boundary(b)}
    with pytest.raises(ValueError, match="box-spin representation"):
        bond_system(b, 0.3, 0.4, h,
                    (BondBoundary.from_spin_boundary(eta, b), "indicator"),
                    (BondBoundary.free(), "indicator"))
    grp = BondBoundary.explicit((((-1, 0), (0, -1)),))
    with pytest.raises(ValueError, match="box-spin representation"):
        bond_system(b, 0.3, 0.4, h, (grp, "indicator"),
                    (BondBoundary.from_spin_boundary("plus", b), "indicator"))


def test_indicator_rejects_joined_ghosts_and_big_boxes():
    b = Box.rect((0, 0), (1, 0))
    h = {x: 1.0 for x in b.site_tuple}
    with pytest.raises(ValueError, match="ghosts"):
        bond_system(b, 0.3, 0.4, h, (BondBoundary.wired(), "indicator"),
                    (BondBoundary.free(), "indicator"))
    with pytest.raises(ValueError, match="q=2"):
        CoupledBondSystem(b, 0.3, 0.4, h,
                          [("w", BondBoundary.wired(), "abs")], q=3)
    big = Box.rect((0, 0), (12, 0))
    hb = {x: 1.0 for x in big.site_tuple}
    with pytest.raises(ValueError, match="cap"):
        bond_system(big, 0.3, 0.4, hb, (BondBoundary.free(), "indicator"),
                    (BondBoundary.free(), "indicator"))


def test_grand_coupling_equal_boundaries_identical():
    b = Box.cube(1, 2)
    h = {x: (1.0 if (x[0] + x[1]) % 2 else -0.5) for x in b.site_tuple}
    rho = BondBoundary.from_spin_boundary(mixed_eta(b), b)
    for seed in (0, 9, 314):
        om, om_p, om_w, trace = grand_rc_coupling(b, 0.45, 0.3, h, rho, rho,
                                                  seed=seed)
        assert om == om_p
        assert all(om[e] <= om_w[e] for e in om)
        assert trace.checks["n_disagree"] == 0


def test_grand_coupling_invariants_over_seeds():
    # mixed-sign field with a zero-field site so a box site carries no
    # ghost edge, and free boundary spots so transparent edges occur
    b = Box.cube(1, 2)
    h = {x: [1.0, -1.0, 0.0, 0.75, -0.4, 1.0, -1.0, 0.3, 1.0][i]
         for i, x in enumerate(b.site_tuple)}
    eta = mixed_eta(b, zero_sites=((0, 2), (2, 0)))
    eta_p = mixed_eta(b, flip=True)
    system = bond_system(
        b, 0.45, 0.3, h,
        (BondBoundary.from_spin_boundary(eta, b), "indicator"),
        (BondBoundary.from_spin_boundary(eta_p, b), "indicator"))
    n_disagree = 0
    windows = 0
    for k in range(200):
        res = system.run(rng.derive_seed(17, "inv", k))
        # pinned guarantees re-checked here on top of the internal raise
        assert res.checks["monotone_before_tau"]
        assert res.checks["post_tau_equal"]
        assert res.checks["disagreement_reaches_boundary"]
        n_disagree += res.checks["n_disagree"] > 0
        windows += res.tau_closure < res.tau
    # the run set must actually exercise disagreement and the closure gap
    assert n_disagree > 20
    assert windows > 20


def test_grand_coupling_determinism_and_identity_keying():
    b = Box.cube(1, 2)
    h = {x: (0.8 if x[0] >= 0 else -0.8) for x in b.site_tuple}
    rho = BondBoundary.free()
    rho_p = BondBoundary.from_spin_boundary("plus", b)
    r1 = grand_rc_coupling(b, 0.4, 0.3, h, rho, rho_p, seed=5)
    r2 = grand_rc_coupling(b, 0.4, 0.3, h, rho, rho_p, seed=5)
    assert r1[0] == r2[0] and r1[1] == r2[1] and r1[2] == r2[2]
    # uniforms attach to edge identity: same seed, different second
    # boundary, same uniform at every edge
    r3 = grand_rc_coupling(b, 0.4, 0.3, h, rho,
                           BondBoundary.from_spin_boundary("minus", b), seed=5)
    u1 = dict(zip(r1[3].elements, r1[3].uniforms))
    u3 = dict(zip(r3[3].elements, r3[3].uniforms))
    assert set(u1) == set(u3)
    assert all(u1[e] == u3[e] for e in u1)


def test_grand_coupling_marginal_laws():
    # the coupled reveal must leave each measure's joint law intact
    b = Box.rect((0, 0), (1, 0))
    h = {(0, 0): 0.0, (1, 0): -0.7}
    eta = mixed_eta(b, zero_sites=((0, 1),))
    rho = BondBoundary.from_spin_boundary(eta, b)
    system = bond_system(b, 0.5, 0.4, h,
                         (rho, "indicator"),
                         (BondBoundary.from_spin_boundary("plus", b),
                          "indicator"))
    dist_w = exact_rc_measure(b, BondBoundary.wired(), 0.5, 0.4, h=h, mode="abs")
    dist_r = exact_rc_measure(b, rho, 0.5, 0.4, h=h, mode="indicator")
    assert dist_w.graph.edges == system.edges
    E = len(system.edges)
    pow2 = (1 << np.arange(E)).astype(np.int64)
    n_runs = 20000
    counts_w = np.zeros(len(dist_w.probs))
    counts_r = np.zeros(len(dist_r.probs))
    for k in range(n_runs):
        res = system.run(rng.derive_seed(23, "law", k))
        counts_w[int(res.values[0].astype(np.int64) @ pow2)] += 1
        counts_r[int(res.values[1].astype(np.int64) @ pow2)] += 1
    # full-joint comparison over 2^E atoms carries sampling noise around
    # 0.04 at this run count, so it only screens gross errors; the
    # four-edge marginal is tight
    assert emp_tv(counts_w, dist_w.probs) < 0.06
    assert emp_tv(counts_r, dist_r.probs) < 0.06
    sub = system.edges[:4]
    marg_w = dist_r.marginal(sub)
    masks = np.arange(len(dist_r.probs))
    for key, p_exact in marg_w.items():
        sel = np.ones(len(masks), dtype=bool)
        for t in range(4):
            sel &= ((masks >> t) & 1) == key[t]
        p_emp = counts_r[sel].sum() / n_runs
        assert abs(p_emp - p_exact) < 0.02


# ------------------------------------------------- cluster spin assignment


def test_es_spins_all_closed_gives_independent_keyed_coins():
    b = Box.cube(1, 2)
    es = edge_sets(b, ghost_mode="two", h={x: 1.0 for x in b.site_tuple})
    omega = {e: 0 for e in es.all}
    for seed in (0, 1, 2, 99, 12345):
        sigma = es_conditional_spins(omega, b, "free", seed)
        for x in b.site_tuple:
            expect = 1 if rng.keyed_uniform(seed, "coin", x) <= 0.5 else -1
            assert sigma[x] == expect


def test_es_spins_ghost_and_boundary_pins():
    b = Box.rect((0, 0), (1, 0))
    internal = Edge((0, 0), (1, 0))
    omega = {internal: 1, Edge((0, 0), Ghost.PLUS): 1}
    for seed in range(5):
        sigma = es_conditional_spins(omega, b, "free", seed)
        assert sigma == {(0, 0): 1, (1, 0): 1}
    omega = {internal: 1, Edge((-1, 0), (0, 0)): 1}
    eta = {(-1, 0): -1}
    for seed in range(5):
        sigma = es_conditional_spins(omega, b, eta, seed)
        assert sigma == {(0, 0): -1, (1, 0): -1}


def test_es_spins_conflict_names_the_pair():
    b = Box.rect((0, 0), (1, 0))
    omega = {Edge((0, 0), (1, 0)): 1,
             Edge((0, 0), Ghost.PLUS): 1,
             Edge((1, 0), Ghost.MINUS): 1}
    with pytest.raises(ValueError, match=r"pinned \+1.*pinned -1|pinned -1.*pinned \+1"):
        es_conditional_spins(omega, b, "free", 0)
    # boundary value against ghost pin
    omega = {Edge((-1, 0), (0, 0)): 1, Edge((0, 0), Ghost.PLUS): 1}
    with pytest.raises(ValueError, match="share a cluster"):
        es_conditional_spins(omega, b, {(-1, 0): -1}, 0)


def test_es_spins_coins_keyed_by_cluster_not_by_dict():
    b = Box.cube(1, 2)
    es = edge_sets(b, ghost_mode="two", h={x: 1.0 for x in b.site_tuple})
    omega_full = {e: 0 for e in es.all}
    internal = Edge((0, 0), (0, 1))
    omega_full[internal] = 1
    omega_sparse = {internal: 1}
    s1 = es_conditional_spins(omega_full, b, "free", 7)
    s2 = es_conditional_spins(omega_sparse, b, "free", 7)
    assert s1 == s2
    assert s1[(0, 0)] == s1[(0, 1)]


def test_es_spins_composite_law_matches_exact_measure():
    # bond sample + conditional spins = exact spin measure
    b = Box.rect((0, 0), (1, 1))
    h = {(0, 0): 1.0, (1, 0): -0.8, (0, 1): 0.5, (1, 1): -1.0}
    beta, H = 0.35, 0.45
    eta = mixed_eta(b, zero_sites=((2, 0),))
    rho = BondBoundary.from_spin_boundary(eta, b)
    dist = exact_rc_measure(b, rho, beta, H, h=h, mode="indicator")
    target = exact_measure(b, eta, beta, {x: H * h[x] for x in b.site_tuple})
    gen = np.random.default_rng(rng.derive_seed(31, "es-law"))
    n_runs = 15000
    masks = gen.choice(len(dist.probs), size=n_runs, p=dist.probs)
    counts = np.zeros(len(target.probs))
    for k in range(n_runs):
        omega = dist.omega_of(int(masks[k]))
        sigma = es_conditional_spins(omega, b, eta, rng.derive_seed(31, "coin", k))
        counts[target.config_index(sigma)] += 1
    assert emp_tv(counts, target.probs) < 0.03


# --------------------------------------------- boundary-condition coupling


def test_bc_coupling_equal_boundaries_and_beta_zero():
    b = Box.cube(1, 2)
    h = {x: (1.0 if x[0] >= 0 else -1.0) for x in b.site_tuple}
    for seed in (0, 5):
        s, sp, cplus, tr = ising_bc_coupling(b, 0.4, 0.3, h, "plus", "plus",
                                             seed=seed)
        assert s == sp
    s, sp, cplus, tr = ising_bc_coupling(b, 0.0, 0.3, h, "plus", "minus", seed=2)
    assert cplus == set()
    assert s == sp  # with no open lattice edge every cluster is interior


def test_bc_coupling_invariants_over_seeds():
    b = Box.cube(1, 2)
    h = {x: (0.6 if (x[0] + x[1]) % 2 == 0 else -0.9) for x in b.site_tuple}
    system = IsingBcSystem(b, 0.45, 0.25, h, mixed_eta(b),
                           mixed_eta(b, flip=True))
    disagreements = 0
    for k in range(200):
        sigma, sigma_p, cplus, res, om, om_p = system.run(
            rng.derive_seed(41, "bc", k))
        for x in b.site_tuple:
            if x not in cplus:
                assert sigma[x] == sigma_p[x]
        disagreements += any(sigma[x] != sigma_p[x] for x in b.site_tuple)
        assert all(om[e] <= res.values[0][t]
                   for t, e in enumerate(system.bond.edges))
    assert disagreements > 20


def test_bc_coupling_marginal_law():
    b = Box.rect((0, 0), (1, 1))
    h = {(0, 0): 1.0, (1, 0): -0.8, (0, 1): 0.5, (1, 1): -1.0}
    beta, H = 0.4, 0.35
    eta, eta_p = "plus", mixed_eta(b, flip=True)
    system = IsingBcSystem(b, beta, H, h, eta, eta_p)
    eff = {x: H * h[x] for x in b.site_tuple}
    t_a = exact_measure(b, eta, beta, eff)
    t_b = exact_measure(b, eta_p, beta, eff)
    counts_a = np.zeros(len(t_a.probs))
    counts_b = np.zeros(len(t_b.probs))
    n_runs = 10000
    for k in range(n_runs):
        sigma, sigma_p, _, _, _, _ = system.run(rng.derive_seed(47, "bclaw", k))
        counts_a[t_a.config_index(sigma)] += 1
        counts_b[t_b.config_index(sigma_p)] += 1
    assert emp_tv(counts_a, t_a.probs) < 0.035
    assert emp_tv(counts_b, t_b.probs) < 0.035


# ------------------------------------------------------- site exploration


def test_site_coupling_equal_boundaries_no_disagreement():
    b = Box.cube(1, 2)
    h = {x: (0.5 if (x[0] + x[1]) % 2 == 0 else -0.5) for x in b.site_tuple}
    sigma, sigma_p, s_field, trace = site_exploration_coupling(
        b, 0.4, 0.3, h, "plus", "plus", seed=8)
    assert sigma == sigma_p
    assert all(v == 0 for v in s_field.values())
    assert trace.tau == 0


def test_site_coupling_zero_field_rejected():
    b = Box.rect((0, 0), (1, 0))
    with pytest.raises(ValueError, match="zero field"):
        site_exploration_coupling(b, 0.3, 0.4, {(0, 0): 0.0, (1, 0): 1.0},
                                  "plus", "minus", seed=0)


def test_site_coupling_single_site_disagreement_law():
    b = Box.cube(0, 2)
    x = (0, 0)
    beta, H = 0.3, 0.8
    h = {x: 1.0}
    eff = {x: H * h[x]}
    ca = exact_measure(b, "plus", beta, eff).probs[1]
    cb = exact_measure(b, "minus", beta, eff).probs[1]
    n = 2000
    hits = 0
    for k in range(n):
        _, _, s_field, _ = site_exploration_coupling(b, beta, H, h, "plus",
                                                     "minus", seed=k)
        hits += s_field[x]
    p_exact = abs(ca - cb)
    se = np.sqrt(p_exact * (1 - p_exact) / n)
    assert abs(hits / n - p_exact) <= 3 * se
    assert p_exact <= domination_p(beta, H, 1.0, 2) + 1e-12


def test_site_coupling_disagreement_dominated_by_product_field():
    # weak interaction, strong field: the independent bound must hold with
    # room to spare on the event that any box site disagrees
    b = Box.cube(1, 2)
    beta, H = 0.05, 2.0
    h = {x: (1.0 if (x[0] * 3 + x[1]) % 2 == 0 else -1.0) for x in b.site_tuple}
    system = SiteExplorationSystem(b, beta, H, h, "plus", "minus")
    n = 3000
    hits = 0
    for k in range(n):
        spins_a, spins_b, _, _, _, _, _ = system.run(rng.derive_seed(3, "dom", k))
        hits += bool((spins_a != spins_b).any())
    bound = 1.0 - np.prod([1.0 - domination_p(beta, H, abs(h[x]), 2)
                           for x in b.site_tuple])
    emp = hits / n
    se = np.sqrt(max(emp * (1 - emp), 1e-9) / n)
    assert emp <= bound + 3 * se


def test_site_coupling_marginal_laws():
    b = Box.rect((0, 0), (1, 1))
    h = {(0, 0): 1.0, (1, 0): -0.8, (0, 1): 0.5, (1, 1): -1.0}
    beta, H = 0.35, 0.5
    eta, eta_p = mixed_eta(b), "minus"
    system = SiteExplorationSystem(b, beta, H, h, eta, eta_p)
    eff = {x: H * h[x] for x in b.site_tuple}
    t_a = exact_measure(b, eta, beta, eff)
    t_b = exact_measure(b, eta_p, beta, eff)
    counts_a = np.zeros(len(t_a.probs))
    counts_b = np.zeros(len(t_b.probs))
    n_runs = 15000
    idx_pow = (1 << np.arange(len(b))).astype(np.int64)
    for k in range(n_runs):
        spins_a, spins_b, _, _, _, _, _ = system.run(rng.derive_seed(7, "slaw", k))
        counts_a[int(((spins_a > 0) * idx_pow).sum())] += 1
        counts_b[int(((spins_b > 0) * idx_pow).sum())] += 1
    assert emp_tv(counts_a, t_a.probs) < 0.03
    assert emp_tv(counts_b, t_b.probs) < 0.03


def test_site_coupling_trace_and_boundary_seeds():
    b = Box.cube(1, 2)
    h = {x: 0.7 for x in b.site_tuple}
    eta = mixed_eta(b)
    eta_p = mixed_eta(b, flip=True)
    sigma, sigma_p, s_field, trace = site_exploration_coupling(
        b, 0.4, 0.3, h, eta, eta_p, seed=13)
    for z in exterior_boundary(b):
        assert s_field[z] == (1 if eta[z] != eta_p[z] else 0)
    for x in b.site_tuple:
        assert s_field[x] == (1 if sigma[x] != sigma_p[x] else 0)
    assert len(trace.elements) == len(b)
    assert set(trace.elements) == set(b.site_tuple)
    rec = json.loads(trace.to_jsonl().splitlines()[0])
    assert {"step", "element", "u", "values", "conds"} <= set(rec)
    # deterministic replay
    again = site_exploration_coupling(b, 0.4, 0.3, h, eta, eta_p, seed=13)
    assert again[0] == sigma and again[2] == s_field


def test_site_coupling_approximate_mode_flagged():
    b = Box.rect((0, 0), (1, 0))
    h = {(0, 0): 1.0, (1, 0): -0.5}
    sigma, sigma_p, s_field, trace = site_exploration_coupling(
        b, 0.3, 0.4, h, "plus", "minus", seed=1, approximate=True, sweeps=40)
    assert trace.approximate
    assert set(sigma) == set(b.site_tuple)
    assert set(s_field) == set(b.site_tuple) | set(exterior_boundary(b))
    assert len(trace.elements) == len(b)


# --------------------------------------------------- worst-case sign bound


def test_sign_bound_values():
    assert sign_bound_a(0.0, 0.0, 1.0, 2) == 0.5
    assert sign_bound_a(0.0, 0.0, 0.3, 3) == 0.5
    assert abs(sign_bound_a(0.0, 1.0, 1.0, 2) - 1.0 / (1.0 + np.exp(-2.0))) < 1e-12
    assert abs(domination_p(0.0, 0.0, 1.0, 2) - 0.75) < 1e-15
    v = 1.0 - (1.0 / (1.0 + np.exp(-2.0))) ** 2
    assert abs(domination_p(0.0, 1.0, 1.0, 2) - v) < 1e-12
    assert abs(v - 0.22420) < 5e-6
    assert domination_p(0.5, 60.0, 1.0, 2) < 1e-40
    with pytest.raises(ValueError):
        sign_bound_a(-0.1, 0.0, 1.0, 2)
    with pytest.raises(ValueError):
        sign_bound_a(0.1, 0.0, 1.0, 0)


def test_sign_bound_is_single_site_all_opposing_probability():
    for beta, H, habs in [(0.3, 0.7, 0.8), (0.1, 1.2, 1.0), (0.6, 0.5, 0.25)]:
        b = Box.cube(0, 2)
        x = (0, 0)
        # field points up, all four neighbors pinned down
        dist = exact_measure(b, "minus", beta, {x: H * habs})
        assert abs(dist.probs[1] - sign_bound_a(beta, H, habs, 2)) < 1e-12
        # field points down, all neighbors pinned up
        dist = exact_measure(b, "plus", beta, {x: -H * habs})
        assert abs(dist.probs[0] - sign_bound_a(beta, H, habs, 2)) < 1e-12


def test_dominating_site_sample_extremes_and_product():
    b = Box.cube(1, 2)
    zeros = {x: 0.0 for x in b.site_tuple}
    ones = {x: 1.0 for x in b.site_tuple}
    bnd = {z: 1 for z in exterior_boundary(b)}
    t0 = dominating_site_sample(b, zeros, bnd, seed=4)
    t1 = dominating_site_sample(b, ones, {}, seed=4)
    assert all(t0[x] == 0 for x in b.site_tuple)
    assert all(t0[z] == 1 for z in exterior_boundary(b))
    assert all(t1[x] == 1 for x in b.site_tuple)
    p = {x: domination_p(0.1, 1.5, 1.0, 2) for x in b.site_tuple}
    n = 20000
    both = 0
    for k in range(n):
        t = dominating_site_sample(b, p, {}, seed=rng.derive_seed(2, "prod", k))
        both += t[(0, 0)] and t[(0, 1)]
    target = p[(0, 0)] * p[(0, 1)]
    se = np.sqrt(target * (1 - target) / n)
    assert abs(both / n - target) <= 3 * se
    with pytest.raises(ValueError, match="outside"):
        dominating_site_sample(b, {x: 1.5 for x in b.site_tuple}, {}, seed=0)


def test_independent_field_dominates_connectivity_event():
    # increasing connectivity event under the sampler vs its exact product
    # probability: origin and a fixed neighbor both on
    b = Box.cube(1, 2)
    p = {x: 0.35 if x[0] == 0 else 0.6 for x in b.site_tuple}
    n = 20000
    hit = 0
    for k in range(n):
        t = dominating_site_sample(b, p, {}, seed=rng.derive_seed(9, "conn", k))
        hit += t[(0, 0)] and t[(1, 0)]
    target = p[(0, 0)] * p[(1, 0)]
    se = np.sqrt(target * (1 - target) / n)
    assert abs(hit / n - target) <= 3 * se


def test_depth_classification_on_small_box():
    b = Box.cube(1, 2)
    assert sqdist_to_complement(b, (0, 0)) == 4
    assert sqdist_to_complement(b, (1, 0)) == 1
    assert sqdist_to_complement(b, (1, 1)) == 1


# ------------------------------------------------------------------ trace


def test_trace_log_length_invariant():
    with pytest.raises(ValueError, match="length"):
        CouplingTrace("site", ["a", "b"], [(0, 0)], np.zeros(2),
                      np.zeros((2, 2), dtype=np.int8), np.zeros((2, 2)),
                      0, {}, [{}, {}])


def test_trace_jsonl_round_trip():
    b = Box.rect((0, 0), (1, 0))
    h = {(0, 0): 1.0, (1, 0): -0.5}
    _, _, _, trace = grand_rc_coupling(
        b, 0.4, 0.3, h, BondBoundary.free(),
        BondBoundary.from_spin_boundary("plus", b), seed=6)
    lines = trace.to_jsonl().strip().splitlines()
    assert len(lines) == len(trace.elements) + 1
    for ln in lines[:-1]:
        rec = json.loads(ln)
        assert len(rec["values"]) == 3
    tail = json.loads(lines[-1])
    assert tail["tau"] == trace.tau
    assert tail["tau_closure"] == trace.tau_closure
    assert tail["checks"]["post_tau_equal"]
    assert trace.explored(2) == trace.elements[:2]
