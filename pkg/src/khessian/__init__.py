"""Numerical lab for the k-Hessian Dirichlet problem sigma_k(D^2 u) = 1 on convex rings."""

__version__ = "0.1.0"
