"""Structure estimation: terminals on the hole boundary, edge pairing and curve completion."""

from .curves import (
    StructureCurve,
    clothoid_chain,
    fit_polyline,
    generate_curve,
    hermite_curve,
    menger_curvature,
    solve_clothoid,
)
from .matching import (
    DELTA_H,
    EPS_L,
    EdgePair,
    RegionHistogram,
    js_divergence,
    match_pairs,
    noncrossing_matching,
    pair_cost,
    region_histogram,
)
from .terminals import EdgeTerminal, collect_terminals

__all__ = [
    "DELTA_H",
    "EPS_L",
    "EdgePair",
    "EdgeTerminal",
    "RegionHistogram",
    "StructureCurve",
    "clothoid_chain",
    "collect_terminals",
    "fit_polyline",
    "generate_curve",
    "hermite_curve",
    "js_divergence",
    "match_pairs",
    "menger_curvature",
    "noncrossing_matching",
    "pair_cost",
    "region_histogram",
    "solve_clothoid",
]
