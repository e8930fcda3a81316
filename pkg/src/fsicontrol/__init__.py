"""Discrete-adjoint optimal control of time-dependent fluid-structure
interaction on moving meshes: monolithic theta-scheme forward solver with a
condensed approximate Newton method, transpose-consistent adjoint solver via
preconditioned Richardson iteration, Vanka-smoothed geometric multigrid, and
a limited-memory BFGS outer loop."""

__version__ = "0.1.0"
