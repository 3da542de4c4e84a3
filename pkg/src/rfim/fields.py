"""Quenched random field: distributions, realizations, persistence.

A realization assigns one real value per box site, deterministically from
(seed, site coordinates, distribution name).  Because the value at a site
never depends on the box shape, restricting a realization to a sub-box
reproduces exactly what sampling on the sub-box would give; nested-volume
experiments rely on this.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.special import ndtri

from . import rng
from .lattice import Box, coords_array


@dataclass(frozen=True)
class FieldDistribution:
    """A symmetric single-site disorder law.

    inverse_cdf maps uniforms in (0,1) to field values (vectorized).
    abs_below(t) = P(|value| < t), strict inequality; used by threshold
    arithmetic that splits sites by field magnitude.  atom_at_zero is
    P(value == 0).
    """

    name: str
    inverse_cdf: Callable
    abs_below: Callable
    atom_at_zero: float = 0.0


def bimodal() -> FieldDistribution:
    """Fair +/-1 field."""
    return FieldDistribution(
        name="bimodal",
        inverse_cdf=lambda u: np.where(np.asarray(u) < 0.5, 1.0, -1.0),
        abs_below=lambda t: 1.0 if t > 1.0 else 0.0,
    )


def gaussian() -> FieldDistribution:
    """Standard normal field."""
    return FieldDistribution(
        name="gaussian",
        inverse_cdf=lambda u: ndtri(np.asarray(u)),
        abs_below=lambda t: float(math.erf(t / math.sqrt(2.0))) if t > 0 else 0.0,
    )


def general(name: str, inverse_cdf: Callable, abs_below: Callable,
            atom_at_zero: float = 0.0) -> FieldDistribution:
    """Custom law; inverse_cdf must accept numpy arrays of uniforms."""
    return FieldDistribution(name=name, inverse_cdf=inverse_cdf,
                             abs_below=abs_below, atom_at_zero=atom_at_zero)


_BUILTINS = {"bimodal": bimodal, "gaussian": gaussian}


def by_name(name: str) -> FieldDistribution:
    try:
        return _BUILTINS[name]()
    except KeyError:
        raise ValueError(f"unknown field distribution {name!r}") from None


@dataclass(frozen=True)
class FieldRealization:
    """Field values on a box; behaves as a read-only site -> float mapping."""

    box: Box
    values: dict
    dist_name: str
    seed: int

    def __getitem__(self, x) -> float:
        return self.values[tuple(x)]

    def get(self, x, default=0.0) -> float:
        return self.values.get(tuple(x), default)

    def __iter__(self):
        return iter(self.box.site_tuple)

    def to_array(self, site_order=None) -> np.ndarray:
        order = site_order if site_order is not None else self.box.site_tuple
        return np.array([self.values[tuple(s)] for s in order], dtype=np.float64)

    def restrict(self, sub: Box) -> "FieldRealization":
        missing = [s for s in sub.site_tuple if s not in self.values]
        if missing:
            raise ValueError(f"sub-box site {missing[0]} not in realization")
        vals = {s: self.values[s] for s in sub.site_tuple}
        return FieldRealization(sub, vals, self.dist_name, self.seed)

    def map_values(self, fn) -> "FieldRealization":
        return FieldRealization(self.box, {s: float(fn(v)) for s, v in self.values.items()},
                                self.dist_name, self.seed)

    def abs(self) -> "FieldRealization":
        return self.map_values(abs)


def sample_field(dist: FieldDistribution, b: Box, seed: int) -> FieldRealization:
    """Draw one quenched realization; value at x depends only on
    (seed, dist.name, x)."""
    coords = coords_array(b.site_tuple)
    u = rng.coords_uniforms(seed, coords, "field:" + dist.name)
    vals = np.asarray(dist.inverse_cdf(u), dtype=np.float64)
    values = {s: float(v) for s, v in zip(b.site_tuple, vals)}
    return FieldRealization(b, values, dist.name, int(seed))


def constant_field(b: Box, value: float) -> FieldRealization:
    return FieldRealization(b, {s: float(value) for s in b.site_tuple}, "constant", 0)


def effective_field(h: FieldRealization, coupling: float) -> dict:
    """Per-site external-field coefficients: coupling strength times the
    quenched value."""
    return {s: coupling * v for s, v in h.values.items()}


def save_field(h: FieldRealization, path) -> None:
    """Plain-text persistence; values via repr for exact float round-trip.
    Only cube boxes are stored (radius in the header)."""
    if h.box.cube_radius is None:
        raise ValueError("save_field supports cube boxes only")
    lines = [f"# rfim-field v1 dim={h.box.dim} radius={h.box.cube_radius} "
             f"dist={h.dist_name} seed={h.seed}"]
    for s in h.box.site_tuple:
        coord_txt = " ".join(str(c) for c in s)
        lines.append(f"{coord_txt} {h.values[s]!r}")
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def load_field(path) -> FieldRealization:
    with open(path) as f:
        lines = [ln.strip() for ln in f if ln.strip()]
    head = lines[0]
    if not head.startswith("# rfim-field v1 "):
        raise ValueError("not a field file")
    meta = dict(tok.split("=", 1) for tok in head.split()[3:])
    b = Box.cube(int(meta["radius"]), int(meta["dim"]))
    values = {}
    for ln in lines[1:]:
        parts = ln.split()
        site = tuple(int(c) for c in parts[:-1])
        values[site] = float(parts[-1])
    if set(values) != set(b.site_tuple):
        raise ValueError("field file sites do not match the declared box")
    return FieldRealization(b, values, meta["dist"], int(meta["seed"]))
