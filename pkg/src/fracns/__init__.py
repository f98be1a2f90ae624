"""fracns: spectral simulation lab for time-fractional stochastic flow models.

Core layers: special-function kernels (specfun), spectral operator calculus
(spectral), trace-class noise and Monte Carlo (stochastic), the mild-solution
fixed-point solver (dynamics) and regularized control synthesis (control).
The FastAPI service (service) and the thin CLI client (cli) sit on top.
"""

__version__ = "0.1.0"
