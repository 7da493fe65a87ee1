"""adiabat: multi-monopole counts on genus-1 mapping tori.

Exact integer topology (Smith normal form, torsion fixed points, spin^c
classification), torus-braid combinatorics, and the numerical realization:
multi-vortex solves on a flat elliptic curve, symplectic parallel transport,
and the gauge-fixed adiabatic Newton refinement on the mapping torus.
"""

__version__ = "0.1.0"
