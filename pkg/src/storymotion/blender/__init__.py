"""Progressive mask transformer for transitions between clips."""
from .blend import Transition, blend_clips, blend_junctions, junction_frames
from .checkpoint import load_checkpoint, save_checkpoint
from .config import BlendConfig
from .gradcheck import GradCheckResult, gradient_check
from .losses import foot_loss, pos_loss, state_loss
from .model import BlendModel, attention_mask, forward, masked_count, masked_frames, progressive_infer
from .train import BlendEvaluation, TrainHistory, evaluate, interpolate_window, train
from .window import MaskedWindow

__all__ = [
    "BlendConfig", "BlendEvaluation", "BlendModel", "GradCheckResult", "MaskedWindow", "TrainHistory",
    "Transition", "attention_mask", "blend_clips", "blend_junctions", "evaluate", "foot_loss", "forward",
    "gradient_check", "interpolate_window", "junction_frames", "load_checkpoint", "masked_count",
    "masked_frames", "pos_loss", "progressive_infer", "save_checkpoint", "state_loss", "train",
]
