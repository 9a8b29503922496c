"""Compositional hybrid dynamical systems.

Build hybrid systems from JSON descriptions, compose them (products,
coproducts, sequential composition, hierarchies), simulate deterministic
executions with guard event detection, and numerically check the structural
claims that make the compositions meaningful: semiconjugacy residuals,
determinism, trapping regions, and chain directedness.
"""

__version__ = "0.1.0"
