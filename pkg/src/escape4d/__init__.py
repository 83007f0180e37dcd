"""Deterministic headless escape-room engine with audio cues, baseline agents and analysis tools."""

from .core import Family, SceneSpec, load_scene, save_scene, validate_scene
from .engine import ActionRequest, Interactions, Observation, TrajectoryLog, WorldState, apply_action, observe, run_episode
from .scenegen import GenConfig, generate_scene, generate_suite

__version__ = "0.1.0"

__all__ = [
    "ActionRequest",
    "Family",
    "GenConfig",
    "Interactions",
    "Observation",
    "SceneSpec",
    "TrajectoryLog",
    "WorldState",
    "apply_action",
    "generate_scene",
    "generate_suite",
    "load_scene",
    "observe",
    "run_episode",
    "save_scene",
    "validate_scene",
]
