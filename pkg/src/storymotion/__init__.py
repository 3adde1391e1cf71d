"""Text-driven motion synthesis.

A story becomes a timed schedule of (text, location) segments; clips are
retrieved from a labeled motion database to follow it, and a progressive
mask transformer generates the transitions between them.
"""
from .core import CharacterFrame, Joint, MotionClip, Skeleton, forward_kinematics, matrix_from_rot6d, rot6d_from_matrix
from .database import DatabaseConfig, MotionDatabase, candidates_by_text, load_database, save_database
from .errors import (
    DegenerateRotationError, LLMTransportError, PathNotFoundError, ScheduleParseError, SchemaError, StoryMotionError,
    UnmatchedTextError, ValidationError,
)
from .metrics import MetricReport, TimedPath, evaluate, l2p, l2q, physics_error, reference_trajectory, trajectory_error
from .retrieval import MatchConfig, SynthesisResult, score_candidates, synthesize_sequence
from .scheduler import Scene, Schedule, Scheduler, build_scheduler, find_path, parse_story_via_llm
from .skeletons import smpl_like_skeleton

__version__ = "0.1.0"

__all__ = [
    "CharacterFrame", "DatabaseConfig", "DegenerateRotationError", "Joint", "LLMTransportError", "MatchConfig",
    "MetricReport", "MotionClip", "MotionDatabase", "PathNotFoundError", "Scene", "Schedule", "ScheduleParseError",
    "Scheduler", "SchemaError", "Skeleton", "StoryMotionError", "SynthesisResult", "TimedPath", "UnmatchedTextError",
    "ValidationError", "build_scheduler", "candidates_by_text", "evaluate", "find_path", "forward_kinematics", "l2p",
    "l2q", "load_database", "matrix_from_rot6d", "parse_story_via_llm", "physics_error", "reference_trajectory",
    "rot6d_from_matrix", "save_database", "score_candidates", "smpl_like_skeleton", "synthesize_sequence",
    "trajectory_error",
]
