"""Numerical toolkit for moral-hazard contracting with many i.i.d. signals.

Exact type-class evaluation of binary, linear and second-best contracts, and
the large-deviation exponents that govern how fast their cost approaches the
first-best.
"""

__version__ = "0.1.0"
