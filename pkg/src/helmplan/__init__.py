"""helmplan: mesh planning and verification for high-frequency Helmholtz FEM.

The package classifies a scatterer's phase space with billiard ray tracing,
derives per-region mesh budgets from error-propagation matrix inequalities,
certifies the associated weighted-digraph Neumann-series bounds, and verifies
the predicted accuracy regimes by solving the 2-D Helmholtz equation with a
radial PML at desk scale.
"""

__version__ = "0.1.0"

FORMAT_VERSION = 1
