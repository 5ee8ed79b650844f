"""hypepull: pullback Riemannian metrics and data-adherent geodesics for
Gaussian-process latent variable models with hyperbolic (Lorentz-model)
or Euclidean latent spaces.
"""

__version__ = "0.1.0"

VERSION_STRING = f"hypepull-{__version__}"
