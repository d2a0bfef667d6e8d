"""Exact and numerical experiments with nilflows on compact nilmanifolds.

Modules: ``algebra`` (graded nilpotent Lie algebras, BCH, transversality,
scaling exponents), ``nilmanifold`` (Malcev coordinates, lattice reduction,
flows and return maps), ``diophantine`` (frequencies, continued fractions,
return counting), ``equidist`` (Weyl sums, Birkhoff averages, decay fits),
``width`` (close returns and width bounds), ``mixing`` (nilautomorphisms and
correlation decay) and ``cli`` (the batch runner).
"""
__version__ = "0.1.0"
