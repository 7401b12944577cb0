"""Two-phase adaptive MCMC for constrained Boltzmann machines.

Adaptation phase: Bayesian optimization (GP surrogate, expected improvement,
DIRECT) tunes the self-avoiding-walk sampler's (k, gamma) against an
autocorrelation-based mixing score.  Sampling phase: a Boltzmann policy over
tuned parameter settings drives a mixture-of-kernels chain.
"""

__version__ = "0.1.0"
