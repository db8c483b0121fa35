"""Numerical laboratory for SDE flows with rough drift on the torus.

Modules
-------
grids      periodic grids, sampled fields, Hölder/Zygmund norm estimators
spectral   FFT derivatives, multipliers, trig interpolation
heat       periodized heat kernel, spectral convolution, derivative scaling
pde        mild-solution solver for  dv/dt + b.grad(v) + lam*v = kappa*Lap(v) + f
zvonkin    drift-regularizing change of variables g = id + v and coefficients
brownian   seeded, replayable Brownian increments with dyadic refinement
flows      Euler-Maruyama flow ensembles, Jacobians, flow-property checks
transport  representation-formula solvers for transport/continuity equations
gronwall   Volterra inequalities: resolvent solver, series constant, refutation
drift      synthetic rough drifts (lacunary cosine series) and mollification
gfd        grid-field binary file format
cli        scenario runner and command-line entry points
"""

__version__ = "0.1.0"
