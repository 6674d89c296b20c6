"""Numerical solvers for one-dimensional reflected backward stochastic
Volterra integral equations (RBSVIEs) with a lower obstacle.

The central object is the two-parameter family Y(t) solving

    Y(t) = xi(t) + int_t^T f(t, s, Y(s), Z(t, s)) ds
                 + int_t^T K(t, ds) - int_t^T Z(t, s) dW(s),
    Y(t) >= L(t),  K(t, .) increasing with the Skorohod flatness property.

Modules
-------
grid       time grid and recombining binomial lattice
instances  problem data catalog (driver, terminal, obstacle, dynamics)
snell      per-anchor reflected backward inductions (Snell envelopes)
volterra   Picard fixed point in the diagonal, global and windowed
oracle     brute-force stopping-rule enumeration on small lattices
compare    comparison checks and the monotone approximation scheme
stopping   optimal stopping rules, frontiers and time-inconsistency gaps
mc         regression Monte Carlo cross-validator
cli        command line front end
"""

from rbsvie.grid import TimeGrid, Lattice, build_lattice

__all__ = ["TimeGrid", "Lattice", "build_lattice"]
__version__ = "0.1.0"
