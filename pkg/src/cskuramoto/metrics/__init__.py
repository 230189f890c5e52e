"""Exact optimal-transport metrics on atomic measures."""
from .transport import (
    IncompatibleMarginalsError,
    TransportPlan,
    adapted_distance,
    aw2,
    solve,
    sq_cost_matrix,
    w2,
    w2_fibered,
)

__all__ = [
    "IncompatibleMarginalsError",
    "TransportPlan",
    "adapted_distance",
    "aw2",
    "solve",
    "sq_cost_matrix",
    "w2",
    "w2_fibered",
]
