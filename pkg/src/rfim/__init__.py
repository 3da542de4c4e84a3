"""Random-field Ising model toolkit.

Exact finite-volume Gibbs and cluster measures on small graphs, monotone
grand couplings with revealment traces, Swendsen-Wang and heat-bath
samplers, percolation threshold arithmetic, and a reproducible experiment
harness with a CLI front end.
"""

__version__ = "0.1.0"
