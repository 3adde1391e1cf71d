from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from ..errors import ValidationError

ATTENTION_MODES = ("progressive", "vanilla")


@dataclass
class BlendConfig:
    r: int = 3
    T: int = 80  # longest window: two contexts plus the longest gap
    d_model: int = 128
    heads: int = 4
    layers: int = 4
    ffn_dim: int = 512
    kf_hidden: int = 512
    context_len: int = 10
    lambda_c: float = 0.1
    lambda_r: float = 1.0
    lambda_p: float = 1.0
    lambda_s: float = 0.1
    lr: float = 5e-4
    batch_size: int = 32
    epochs: int = 20
    steps_per_epoch: int = 50
    seed: int = 0
    two_stage: bool = False
    attention: str = "progressive"
    min_gap: int = 5
    max_gap: int = 60
    fps: float = 30.0

    def __post_init__(self):
        if self.r < 1:
            raise ValidationError("r must be >= 1")
        if self.context_len < 1:
            raise ValidationError("context_len must be >= 1")
        if min(self.lambda_c, self.lambda_r, self.lambda_p, self.lambda_s) < 0:
            raise ValidationError("loss weights must be >= 0")
        if self.T <= 2 * self.context_len:
            raise ValidationError(f"T={self.T} must exceed 2*context_len={2 * self.context_len}")
        if self.d_model % self.heads:
            raise ValidationError("d_model must be divisible by heads")
        if not 1 <= self.min_gap <= self.max_gap <= self.T - 2 * self.context_len:
            raise ValidationError(f"gap range [{self.min_gap}, {self.max_gap}] does not fit T={self.T}")
        if self.attention not in ATTENTION_MODES:
            raise ValidationError(f"attention must be one of {ATTENTION_MODES}")

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "BlendConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValidationError(f"unknown blend config keys {sorted(unknown)}")
        return cls(**d)
