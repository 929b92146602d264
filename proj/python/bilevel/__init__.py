"""Bi-level intersection scheduling: space-time High-Level planner and B-spline Low-Level refinement."""

from ._bilevel import (
    Scenario,
    collision_penalty,
    compare,
    export_experiment,
    generate_flow,
    plan,
    reference_trajectory,
    refine,
    simulate,
)

__all__ = [
    "Scenario",
    "collision_penalty",
    "compare",
    "export_experiment",
    "generate_flow",
    "plan",
    "reference_trajectory",
    "refine",
    "simulate",
]
