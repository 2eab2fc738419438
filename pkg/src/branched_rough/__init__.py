"""Branched rough paths with bracket extensions, controlled calculus and manifold transfer."""

from __future__ import annotations

from .brackets import bracket_polynomial, consistency_report
from .controlled import ControlledPath, VectorFields, davie_solve, identity_controlled, rough_integral
from .forests import Forest, Label, Tree, atom, enumerate_forests, format_forest, parse_forest, parse_label
from .geometry import (
    Atlas,
    Chart,
    Connection,
    ManifoldRoughPath,
    manifold_integral,
    manifold_rde_solve,
    transfer_symbols,
)
from .hopf import AlgElem, antipode_ck, antipode_gl, ck_coproduct, gl_coproduct, gl_product, pairing
from .lift import lift, pushforward, pushforward_bracket
from .polymap import PolyMap
from .rough_path import RoughPath, quasi_geometric_lift, smooth_lift

__version__ = "0.1.0"

__all__ = [
    "AlgElem",
    "Atlas",
    "Chart",
    "Connection",
    "ControlledPath",
    "Forest",
    "Label",
    "ManifoldRoughPath",
    "PolyMap",
    "RoughPath",
    "Tree",
    "VectorFields",
    "antipode_ck",
    "antipode_gl",
    "atom",
    "bracket_polynomial",
    "ck_coproduct",
    "consistency_report",
    "davie_solve",
    "enumerate_forests",
    "format_forest",
    "gl_coproduct",
    "gl_product",
    "identity_controlled",
    "lift",
    "manifold_integral",
    "manifold_rde_solve",
    "pairing",
    "parse_forest",
    "parse_label",
    "pushforward",
    "pushforward_bracket",
    "quasi_geometric_lift",
    "rough_integral",
    "smooth_lift",
    "transfer_symbols",
]
