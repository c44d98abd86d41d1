"""Joint clustering of customers' item-view histories and geographic locations.

A top-level Dirichlet process couples a hierarchical Dirichlet process over
Dirichlet-multinomial topics with one over von Mises-Fisher location
factors on the sphere. Inference is by collapsed Gibbs sampling, serial or
approximately shard-parallel.
"""
__version__ = "0.1.0"
