"""Batched Frenet-frame trajectory optimization with a differentiable projection layer."""

from .basis import BasisMatrices, TimeGrid, build_basis
from .context import PlanningConfig, PlanningContext
from .errors import (FactorizationError, FrenetPlanError, OptimizationError, ParameterError, SpawnError,
                     TrainingError, UsageError)
from .metacost import MetaCostConfig, meta_cost, select_best
from .planner import BehavioralInput, BoundaryConditions, Planner, PlannerWeights
from .projection import ConstraintWeights, Projector, SceneConstraints, project, residuals

__version__ = "0.1.0"

__all__ = [
    "BasisMatrices", "TimeGrid", "build_basis", "PlanningConfig", "PlanningContext", "FactorizationError",
    "FrenetPlanError", "OptimizationError", "ParameterError", "SpawnError", "TrainingError", "UsageError",
    "MetaCostConfig", "meta_cost", "select_best", "BehavioralInput", "BoundaryConditions", "Planner",
    "PlannerWeights", "ConstraintWeights", "Projector", "SceneConstraints", "project", "residuals",
]
