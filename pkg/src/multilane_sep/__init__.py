"""Multilane simple exclusion processes: stationary measures, flux and shock classification."""
from .lattice import Config, HBoundary, LaneGeometry, VTopology, H2
from .kernels import MultiLaneRates, TwoLaneRates, normalize, is_weakly_irreducible
from .flux import FluxCurve, G, ShockPair, classify_R0, in_Z, r0, solve_rho_dr

__all__ = [
    "Config", "HBoundary", "LaneGeometry", "VTopology", "H2",
    "MultiLaneRates", "TwoLaneRates", "normalize", "is_weakly_irreducible",
    "FluxCurve", "G", "ShockPair", "classify_R0", "in_Z", "r0", "solve_rho_dr",
]
