"""Flexible ALADIN: distributed solvers under random agent polling.

The package pairs two solver engines (consensus and resource-allocation
variants of the ALADIN family) with seeded polling that simulates packet
loss, centralized oracles for ground truth, and diagnostics that measure
the quantities appearing in the convergence guarantees.
"""

__version__ = "0.1.0"

from .objectives import (
    AbsDeviationObjective,
    ConsensusProblem,
    ConsensusSolution,
    ObjectiveFn,
    QuadraticObjective,
    ResourceProblem,
    ResourceSolution,
    TrigQuadraticObjective,
    load_problem,
    solve_consensus_oracle,
    solve_resource_oracle,
)

__all__ = [
    "__version__",
    "ObjectiveFn",
    "QuadraticObjective",
    "AbsDeviationObjective",
    "TrigQuadraticObjective",
    "ConsensusProblem",
    "ResourceProblem",
    "ConsensusSolution",
    "ResourceSolution",
    "solve_consensus_oracle",
    "solve_resource_oracle",
    "load_problem",
]
