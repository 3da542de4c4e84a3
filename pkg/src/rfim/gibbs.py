"""Finite-volume spin measures: exact enumeration, heat-bath dynamics,
observables, and boundary-influence total variation.

Conventions.  Spins live in {-1, +1} on the box sites (raster order).  A
spin boundary assigns each exterior-boundary site a value in {-1, 0, +1};
zero means free (no interaction term).  The quenched weight of a
configuration is

    exp[ beta * sum_internal s_u s_v + beta * sum_crossing s_u eta_v
         + sum_sites eff_x * s_x ]

with eff the per-site effective field (field strength times the quenched
field value).  Exact distributions enumerate all 2^n configurations;
config index m has spin +1 at site j iff bit j of m is set.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.special import expit, logsumexp

from . import _kernels, rng
from .lattice import Box, edge_sets, exterior_boundary

EXACT_SITE_CAP = 20


def resolve_boundary(eta, b: Box) -> dict:
    """Normalize a boundary spec to a {site: -1|0|+1} map on the exterior
    boundary.  Accepts "plus", "minus", "free", or an explicit map (missing
    sites default to free)."""
    ext = exterior_boundary(b)
    if eta == "plus":
        return {z: 1 for z in ext}
    if eta == "minus":
        return {z: -1 for z in ext}
    if eta in ("free", "zero", None):
        return {z: 0 for z in ext}
    if isinstance(eta, dict):
        out = {}
        for z in ext:
            v = int(eta.get(z, 0))
            if v not in (-1, 0, 1):
                raise ValueError(f"boundary value at {z} must be -1, 0, or +1")
            out[z] = v
        return out
    raise ValueError(f"cannot interpret boundary {eta!r}")


def ising_log_weight(sigma: dict, eta, b: Box, beta: float, eff: dict) -> float:
    """Unnormalized log-weight of one spin configuration, by direct sum."""
    bnd = resolve_boundary(eta, b)
    es = edge_sets(b)
    total = 0.0
    for e in es.internal:
        total += beta * sigma[e.u] * sigma[e.v]
    for e in es.crossing:
        inside, outside = (e.u, e.v) if e.u in b else (e.v, e.u)
        total += beta * sigma[inside] * bnd[outside]
    for x in b.site_tuple:
        total += eff.get(x, 0.0) * sigma[x]
    return total


def spin_matrix(n: int) -> np.ndarray:
    """(2^n, n) int8 matrix of all spin configurations; bit j of the row
    index gives the sign at site j."""
    if n > EXACT_SITE_CAP:
        raise ValueError(f"{n} sites exceeds the exact enumeration cap {EXACT_SITE_CAP}")
    m = np.arange(1 << n, dtype=np.int64)
    bits = (m[:, None] >> np.arange(n)[None, :]) & 1
    return (2 * bits - 1).astype(np.int8)


@dataclass
class ExactDistribution:
    """Exact finite distribution over spin configurations."""

    box: Box
    site_order: tuple
    configs: np.ndarray          # (2^n, n) int8
    log_weights: np.ndarray      # (2^n,)
    log_z: float
    probs: np.ndarray            # (2^n,)

    def index_of(self, x) -> int:
        return self.site_order.index(tuple(x))

    def config_index(self, sigma: dict) -> int:
        m = 0
        for j, s in enumerate(self.site_order):
            if sigma[s] == 1:
                m |= 1 << j
        return m

    def prob(self, sigma: dict) -> float:
        return float(self.probs[self.config_index(sigma)])

    def expectation(self, x) -> float:
        j = self.index_of(x)
        return float(self.probs @ self.configs[:, j].astype(np.float64))

    def pair_expectation(self, x, y) -> float:
        jx, jy = self.index_of(x), self.index_of(y)
        prod = (self.configs[:, jx] * self.configs[:, jy]).astype(np.float64)
        return float(self.probs @ prod)

    def truncated_two_point(self, x, y) -> float:
        return self.pair_expectation(x, y) - self.expectation(x) * self.expectation(y)

    def marginal(self, sites) -> dict:
        """Joint law of the listed sites: {(s_1,...,s_k): probability}."""
        idx = [self.index_of(x) for x in sites]
        out = {}
        sub = self.configs[:, idx]
        for row, p in zip(sub, self.probs):
            key = tuple(int(v) for v in row)
            out[key] = out.get(key, 0.0) + float(p)
        return out

    def tv(self, other: "ExactDistribution") -> float:
        if self.site_order != other.site_order:
            raise ValueError("distributions have different site orders")
        return 0.5 * float(np.abs(self.probs - other.probs).sum())

    def tv_marginal_against(self, other: "ExactDistribution", sites) -> float:
        pa = self.marginal(sites)
        pb = other.marginal(sites)
        keys = set(pa) | set(pb)
        return 0.5 * sum(abs(pa.get(k, 0.0) - pb.get(k, 0.0)) for k in keys)

    def sample_configs(self, n: int, seed: int) -> np.ndarray:
        gen = np.random.default_rng(rng.derive_seed(seed, "exact-sample"))
        rows = gen.choice(len(self.probs), size=n, p=self.probs)
        return self.configs[rows]

    def conditional_plus(self, x, revealed: dict) -> float:
        """P(spin at x = +1 | the revealed spins)."""
        mask = np.ones(len(self.probs), dtype=bool)
        for s, v in revealed.items():
            mask &= self.configs[:, self.index_of(s)] == v
        j = self.index_of(x)
        tot = self.probs[mask].sum()
        plus = self.probs[mask & (self.configs[:, j] == 1)].sum()
        return float(plus / tot)


def _linear_coefficients(b: Box, bnd: dict, beta: float, eff: dict) -> np.ndarray:
    coeff = np.zeros(len(b), dtype=np.float64)
    es = edge_sets(b)
    for j, x in enumerate(b.site_tuple):
        coeff[j] = eff.get(x, 0.0)
    for e in es.crossing:
        inside, outside = (e.u, e.v) if e.u in b else (e.v, e.u)
        coeff[b.index(inside)] += beta * bnd[outside]
    return coeff


def exact_measure(b: Box, eta, beta: float, eff: dict) -> ExactDistribution:
    """Exact quenched spin measure by full enumeration."""
    bnd = resolve_boundary(eta, b)
    n = len(b)
    configs = spin_matrix(n)
    coeff = _linear_coefficients(b, bnd, beta, eff)
    logw = configs.astype(np.float64) @ coeff
    es = edge_sets(b)
    for e in es.internal:
        iu, iv = b.index(e.u), b.index(e.v)
        logw += beta * (configs[:, iu] * configs[:, iv]).astype(np.float64)
    log_z = float(logsumexp(logw))
    probs = np.exp(logw - log_z)
    return ExactDistribution(b, b.site_tuple, configs, logw, log_z, probs)


@dataclass
class PottsDistribution:
    """Exact Potts measure; configs hold colors in {1..q}."""

    box: Box
    site_order: tuple
    q: int
    configs: np.ndarray
    probs: np.ndarray

    def marginal(self, sites) -> dict:
        idx = [self.site_order.index(tuple(x)) for x in sites]
        out = {}
        for row, p in zip(self.configs[:, idx], self.probs):
            key = tuple(int(v) for v in row)
            out[key] = out.get(key, 0.0) + float(p)
        return out


def potts_exact_measure(b: Box, eta: dict, beta: float, H: float, q: int,
                        state_cap: int = 1 << 20) -> PottsDistribution:
    """Exact q-state model with weight exp[2*beta*(#agreeing internal edges
    + #crossing edges agreeing with the boundary colors) + 2*H*(#sites in
    color 1)].  eta maps exterior sites to colors in {1..q}, 0 = free.
    At q=2 with colors (1,2) <-> spins (+1,-1) this reproduces the Ising
    measure with constant effective field H."""
    n = len(b)
    if q ** n > state_cap:
        raise ValueError("state space too large for exact Potts enumeration")
    bnd = {z: 0 for z in exterior_boundary(b)}
    bnd.update({tuple(k): int(v) for k, v in (eta or {}).items()})
    digits = np.arange(q ** n, dtype=np.int64)
    configs = np.empty((q ** n, n), dtype=np.int8)
    for j in range(n):
        configs[:, j] = (digits // q ** j) % q + 1
    logw = np.zeros(q ** n, dtype=np.float64)
    es = edge_sets(b)
    for e in es.internal:
        iu, iv = b.index(e.u), b.index(e.v)
        logw += 2.0 * beta * (configs[:, iu] == configs[:, iv])
    for e in es.crossing:
        inside, outside = (e.u, e.v) if e.u in b else (e.v, e.u)
        c = bnd[outside]
        if c:
            logw += 2.0 * beta * (configs[:, b.index(inside)] == c)
    logw += 2.0 * H * (configs == 1).sum(axis=1)
    probs = np.exp(logw - logsumexp(logw))
    return PottsDistribution(b, b.site_tuple, q, configs, probs)


# ------------------------------------------------------------- dynamics


def heat_bath_prob(beta: float, neighbor_sum: float, eff_x: float) -> float:
    """P(new spin = +1) given the signed sum of neighboring spins and
    boundary values plus the site's effective field."""
    return float(expit(2.0 * (beta * neighbor_sum + eff_x)))


def heat_bath_step(sigma: dict, x, u: float, eta, b: Box, beta: float,
                   eff: dict) -> int:
    """Single-site heat-bath update; returns the new spin at x."""
    bnd = resolve_boundary(eta, b)
    m = 0.0
    for y in b.neighbors(x):
        if y in b:
            m += sigma[y]
        else:
            m += bnd[y]
    p_plus = heat_bath_prob(beta, m, eff.get(tuple(x), 0.0))
    return 1 if u <= p_plus else -1


def build_heat_bath_tables(b: Box, eta, beta: float, eff: dict):
    """Precompute kernel arrays: neighbor indices, frozen boundary sums,
    and per-site update probability tables indexed by total neighbor sum."""
    bnd_map = resolve_boundary(eta, b)
    n = len(b)
    two_d = 2 * b.dim
    neigh = np.full((n, two_d), -1, dtype=np.int32)
    bnd = np.zeros(n, dtype=np.int32)
    for j, x in enumerate(b.site_tuple):
        for t, y in enumerate(b.neighbors(x)):
            if y in b:
                neigh[j, t] = b.index(y)
            else:
                bnd[j] += bnd_map[y]
    ptable = np.empty((n, 2 * two_d + 1), dtype=np.float64)
    for j, x in enumerate(b.site_tuple):
        for m in range(-two_d, two_d + 1):
            ptable[j, m + two_d] = heat_bath_prob(beta, m, eff.get(x, 0.0))
    return neigh, bnd, ptable


class HeatBathChain:
    """Raster-sweep Glauber chain for one boundary condition.

    Optionally pins named sites to fixed values (conditional dynamics).
    Coupled chains are built by giving several chains the same sweep
    uniforms; see coupled_sweep.
    """

    def __init__(self, b: Box, eta, beta: float, eff: dict, seed: int,
                 start="plus", pinned: dict | None = None):
        self.box = b
        self.beta = beta
        self.neigh, self.bnd, self.ptable = build_heat_bath_tables(b, eta, beta, eff)
        self.two_d = 2 * b.dim
        n = len(b)
        self.pinned = np.zeros(n, dtype=np.uint8)
        if start == "plus":
            self.spins = np.ones(n, dtype=np.int8)
        elif start == "minus":
            self.spins = -np.ones(n, dtype=np.int8)
        else:
            self.spins = np.array([start[s] for s in b.site_tuple], dtype=np.int8)
        if pinned:
            for s, v in pinned.items():
                j = b.index(s)
                self.pinned[j] = 1
                self.spins[j] = v
        self.gen = np.random.default_rng(rng.derive_seed(seed, "heat-bath"))

    def sweep(self, count: int = 1) -> None:
        n = len(self.spins)
        for _ in range(count):
            u = self.gen.random(n)
            _kernels.hb_sweep(self.spins, self.neigh, self.bnd, self.ptable,
                              u, self.pinned, self.two_d)

    def sweep_with(self, u: np.ndarray) -> None:
        _kernels.hb_sweep(self.spins, self.neigh, self.bnd, self.ptable,
                          u, self.pinned, self.two_d)

    def spin_at(self, x) -> int:
        return int(self.spins[self.box.index(x)])

    def config(self) -> dict:
        return {s: int(v) for s, v in zip(self.box.site_tuple, self.spins)}


def coupled_sweep(chains, gen: np.random.Generator, count: int = 1) -> None:
    """Advance several chains on the same box with shared uniforms (the
    monotone common-random-numbers coupling)."""
    n = len(chains[0].spins)
    for _ in range(count):
        u = gen.random(n)
        for c in chains:
            c.sweep_with(u)


# ---------------------------------------------------------- observables


class Observables:
    """Magnetizations and two-point functions from an exact distribution
    or from a (samples, n_sites) array of sampled configurations."""

    def __init__(self, source, site_order=None):
        if isinstance(source, ExactDistribution):
            self.dist = source
            self.samples = None
            self.site_order = source.site_order
        else:
            if site_order is None:
                raise ValueError("sample streams need an explicit site_order")
            self.dist = None
            self.samples = np.asarray(source, dtype=np.float64)
            self.site_order = tuple(tuple(s) for s in site_order)

    def _col(self, x):
        return self.site_order.index(tuple(x))

    def magnetization(self, x) -> float:
        if self.dist is not None:
            return self.dist.expectation(x)
        return float(self.samples[:, self._col(x)].mean())

    def two_point(self, x, y) -> float:
        if self.dist is not None:
            return self.dist.pair_expectation(x, y)
        prod = self.samples[:, self._col(x)] * self.samples[:, self._col(y)]
        return float(prod.mean())

    def truncated_two_point(self, x, y) -> float:
        return self.two_point(x, y) - self.magnetization(x) * self.magnetization(y)


def observables(source, site_order=None) -> Observables:
    return Observables(source, site_order)


def mean_and_stderr(values) -> tuple:
    v = np.asarray(values, dtype=np.float64)
    n = len(v)
    if n < 2:
        return float(v.mean()), float("inf")
    return float(v.mean()), float(v.std(ddof=1) / math.sqrt(n))


def tv_marginal(b: Box, delta_sites, eta, eta2, beta: float, eff: dict) -> float:
    """Exact total variation between the two boundary conditions' joint
    marginals on delta_sites."""
    for x in delta_sites:
        if tuple(x) not in b:
            raise ValueError(f"site {x} is not in the box")
    da = exact_measure(b, eta, beta, eff)
    db = exact_measure(b, eta2, beta, eff)
    return da.tv_marginal_against(db, delta_sites)
