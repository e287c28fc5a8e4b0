# Copula-corrected Laplace approximations for latent Gaussian models
__version__ = "0.3.0"
__author__ = "copula-inla developers"
__description__ = "Laplace approximations for latent Gaussian models with a Gaussian copula correction"
