from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from rfim import fields, gibbs, lattice, rng


def brute_force_probs(b, eta, beta, eff):
    """Independent oracle: direct dict-based enumeration with math.exp."""
    sites = b.sites()
    weights = {}
    for assignment in itertools.product((-1, 1), repeat=len(sites)):
        sigma = dict(zip(sites, assignment))
        weights[assignment] = math.exp(gibbs.ising_log_weight(sigma, eta, b, beta, eff))
    z = sum(weights.values())
    return {k: v / z for k, v in weights.items()}


def test_exact_measure_matches_bruteforce_oracle():
    b = lattice.box(1, 1)
    h = fields.sample_field(fields.gaussian(), b, seed=2)
    eff = fields.effective_field(h, 0.4)
    eta = {(-2,): 1, (2,): -1}
    dist = gibbs.exact_measure(b, eta, 0.65, eff)
    oracle = brute_force_probs(b, eta, 0.65, eff)
    for assignment, p in oracle.items():
        sigma = dict(zip(b.sites(), assignment))
        assert dist.prob(sigma) == pytest.approx(p, abs=1e-13)


def test_single_site_conditional_oracle():
    # one site, both neighbors fixed to +1: P(+) = expit(2*(2*beta + eff))
    b = lattice.box(0, 1)
    beta, eff_val = 0.37, -0.21
    dist = gibbs.exact_measure(b, "plus", beta, {(0,): eff_val})
    w_plus = math.exp(2 * beta + eff_val)
    w_minus = math.exp(-2 * beta - eff_val)
    assert dist.prob({(0,): 1}) == pytest.approx(w_plus / (w_plus + w_minus), abs=1e-14)
    assert gibbs.heat_bath_prob(beta, 2.0, eff_val) == pytest.approx(
        w_plus / (w_plus + w_minus), abs=1e-14)


def test_chain_correlation_is_tanh_beta():
    # two free-boundary sites, no field: <s0 s1> = tanh(beta)
    b = lattice.Box.from_sites([(0,), (1,)])
    for beta in (0.2, 0.7, 1.3):
        dist = gibbs.exact_measure(b, "free", beta, {})
        assert dist.pair_expectation((0,), (1,)) == pytest.approx(math.tanh(beta), abs=1e-13)
        assert dist.expectation((0,)) == pytest.approx(0.0, abs=1e-14)


def test_probabilities_normalize():
    b = lattice.box(1, 2)
    h = fields.sample_field(fields.bimodal(), b, seed=9)
    dist = gibbs.exact_measure(b, "minus", 0.3, fields.effective_field(h, 0.5))
    assert dist.probs.sum() == pytest.approx(1.0, abs=1e-12)
    marg = dist.marginal([(0, 0), (1, 0)])
    assert sum(marg.values()) == pytest.approx(1.0, abs=1e-12)
    assert set(marg) == {(a, c) for a in (-1, 1) for c in (-1, 1)}


def test_truncated_two_point_identity():
    b = lattice.box(1, 1)
    h = fields.sample_field(fields.gaussian(), b, seed=5)
    dist = gibbs.exact_measure(b, "plus", 0.45, fields.effective_field(h, 0.2))
    x, y = (-1,), (1,)
    direct = dist.pair_expectation(x, y) - dist.expectation(x) * dist.expectation(y)
    assert dist.truncated_two_point(x, y) == pytest.approx(direct, abs=1e-15)


def test_potts_q2_reduces_to_ising():
    b = lattice.box(1, 1)
    beta, H = 0.52, 0.31
    eta_potts = {(-2,): 1, (2,): 2}
    eta_ising = {(-2,): 1, (2,): -1}
    potts = gibbs.potts_exact_measure(b, eta_potts, beta, H, q=2)
    ising = gibbs.exact_measure(b, eta_ising, beta, {s: H for s in b.sites()})
    pm = potts.marginal(b.sites())
    im = ising.marginal(b.sites())
    for colors, p in pm.items():
        spins = tuple(1 if c == 1 else -1 for c in colors)
        assert p == pytest.approx(im[spins], abs=1e-12)


def test_potts_q3_normalizes_and_orders_colors():
    b = lattice.Box.from_sites([(0,), (1,)])
    potts = gibbs.potts_exact_measure(b, {}, 0.4, 0.2, q=3)
    assert potts.probs.sum() == pytest.approx(1.0, abs=1e-12)
    # field favors color 1
    m = potts.marginal([(0,)])
    assert m[(1,)] > m[(2,)] == pytest.approx(m[(3,)], abs=1e-12)


def test_heat_bath_step_matches_exact_conditional():
    b = lattice.box(1, 1)
    h = fields.sample_field(fields.gaussian(), b, seed=12)
    eff = fields.effective_field(h, 0.6)
    eta = {(-2,): 1, (2,): 0}
    beta = 0.58
    dist = gibbs.exact_measure(b, eta, beta, eff)
    sigma = {(-1,): 1, (0,): -1, (1,): 1}
    for x in b.sites():
        revealed = {s: v for s, v in sigma.items() if s != x}
        exact_cond = dist.conditional_plus(x, revealed)
        m = sum(sigma[y] if y in b else gibbs.resolve_boundary(eta, b)[y]
                for y in b.neighbors(x))
        assert gibbs.heat_bath_prob(beta, m, eff[x]) == pytest.approx(exact_cond, abs=1e-12)
        # the step function realizes exactly this probability
        assert gibbs.heat_bath_step(sigma, x, exact_cond - 1e-9, eta, b, beta, eff) == 1
        assert gibbs.heat_bath_step(sigma, x, exact_cond + 1e-9, eta, b, beta, eff) == -1


def test_kernel_sweep_matches_python_steps():
    b = lattice.box(1, 2)
    h = fields.sample_field(fields.gaussian(), b, seed=3)
    eff = fields.effective_field(h, 0.35)
    eta = {z: (1 if i % 3 == 0 else (0 if i % 3 == 1 else -1))
           for i, z in enumerate(lattice.exterior_boundary(b))}
    beta = 0.44
    chain = gibbs.HeatBathChain(b, eta, beta, eff, seed=77, start="plus")
    sigma = {s: 1 for s in b.sites()}
    gen = np.random.default_rng(rng.derive_seed(77, "heat-bath"))
    for _ in range(5):
        u = gen.random(len(b))
        for j, x in enumerate(b.sites()):
            sigma[x] = gibbs.heat_bath_step(sigma, x, u[j], eta, b, beta, eff)
    chain.sweep(5)
    assert chain.config() == sigma


def test_pinned_sites_stay_fixed():
    b = lattice.box(1, 2)
    chain = gibbs.HeatBathChain(b, "free", 0.4, {}, seed=5, start="minus",
                                pinned={(0, 0): 1})
    chain.sweep(20)
    assert chain.spin_at((0, 0)) == 1


def test_coupled_chains_stay_ordered():
    # shared uniforms preserve the plus-start >= minus-start ordering
    b = lattice.box(2, 2)
    h = fields.sample_field(fields.gaussian(), b, seed=21)
    eff = fields.effective_field(h, 0.3)
    hi = gibbs.HeatBathChain(b, "plus", 0.42, eff, seed=0, start="plus")
    lo = gibbs.HeatBathChain(b, "minus", 0.42, eff, seed=0, start="minus")
    gen = np.random.default_rng(123)
    for _ in range(60):
        gibbs.coupled_sweep([hi, lo], gen)
        assert np.all(hi.spins >= lo.spins)


def test_tv_marginal_symmetry_identity():
    # zero field: TV between plus and minus at one site equals |<s>_plus|
    b = lattice.box(1, 2)
    tv = gibbs.tv_marginal(b, [(0, 0)], "plus", "minus", 0.35, {})
    m = gibbs.exact_measure(b, "plus", 0.35, {}).expectation((0, 0))
    assert tv == pytest.approx(abs(m), abs=1e-12)
    assert gibbs.tv_marginal(b, [(0, 0)], "plus", "plus", 0.35, {}) == pytest.approx(0.0, abs=1e-15)
    # infinite temperature: boundary influence vanishes
    assert gibbs.tv_marginal(b, [(0, 0)], "plus", "minus", 0.0, {}) == pytest.approx(0.0, abs=1e-14)


def test_observables_sample_stream():
    samples = np.array([[1, 1], [1, -1], [-1, 1], [1, 1]], dtype=np.int8)
    obs = gibbs.observables(samples, site_order=[(0,), (1,)])
    assert obs.magnetization((0,)) == pytest.approx(0.5)
    assert obs.magnetization((1,)) == pytest.approx(0.5)
    assert obs.two_point((0,), (1,)) == pytest.approx(0.0)
    assert obs.truncated_two_point((0,), (1,)) == pytest.approx(-0.25)


def test_exact_distribution_sampling_roundtrip():
    b = lattice.Box.from_sites([(0,), (1,)])
    dist = gibbs.exact_measure(b, "free", 0.8, {(0,): 0.3, (1,): -0.2})
    cfgs = dist.sample_configs(40000, seed=4)
    obs = gibbs.observables(cfgs, site_order=b.sites())
    assert obs.magnetization((0,)) == pytest.approx(dist.expectation((0,)), abs=0.02)
    assert obs.two_point((0,), (1,)) == pytest.approx(dist.pair_expectation((0,), (1,)), abs=0.02)


def test_boundary_validation():
    b = lattice.box(1, 1)
    with pytest.raises(ValueError):
        gibbs.resolve_boundary({(-2,): 5}, b)
    with pytest.raises(ValueError):
        gibbs.resolve_boundary("sideways", b)
    with pytest.raises(ValueError):
        gibbs.tv_marginal(b, [(9, 9)], "plus", "minus", 0.1, {})
