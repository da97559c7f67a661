"""Numerical laboratory for linear cocycles over subshifts of finite type.

Estimates Lyapunov spectra, evaluates finite-horizon Pesin functions,
reconstructs Oseledets splittings from finite data, measures large-deviation
probabilities and returns to Pesin sets, checks holonomy and
pinching/twisting hypotheses, and forges certified counterexample cocycles.
"""

from cocyclelab.subshift import SubshiftSpec, PointWindow, CylinderSet
from cocyclelab.gibbs import PotentialTable, GibbsModel, build_gibbs
from cocyclelab.cocycle import CocycleTable, ScaledMatrix

__all__ = [
    "SubshiftSpec",
    "PointWindow",
    "CylinderSet",
    "PotentialTable",
    "GibbsModel",
    "build_gibbs",
    "CocycleTable",
    "ScaledMatrix",
]

__version__ = "0.1.0"
