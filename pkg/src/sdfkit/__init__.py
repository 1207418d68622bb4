"""Sparse dynamical features of event-related potentials.

The ERP is modelled as the output of a bank of undamped harmonic oscillators
driven by sparse impulses.  A lasso path over the impulse grid gives one
decomposition per sparsity level, from which two scalar features are taken
and classified with LDA under nested cross-validation.
"""

__version__ = "0.1.0"
