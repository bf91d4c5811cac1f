"""Declarative experiment configuration models."""

from pydantic import BaseModel, Field, ValidationError, field_validator, model_validator
from typing import Any, Dict, List, Literal, Optional, Type, TypeVar, Union

from yt8m_lab.errors import BadSpecError, InvalidConfigError

ARCHITECTURES = (
    "logreg",
    "moe",
    "moe_c",
    "mlp2000",
    "mlp3000",
    "mlp512_256",
    "mlp_res5",
    "mlp_a",
    "mlp_e",
    "ae_clf",
    "cnn1",
    "mlp2048",
)

ArchitectureName = Literal[
    "logreg", "moe", "moe_c", "mlp2000", "mlp3000", "mlp512_256",
    "mlp_res5", "mlp_a", "mlp_e", "ae_clf", "cnn1", "mlp2048",
]

UINT64_MAX = 2 ** 64 - 1

M = TypeVar("M", bound=BaseModel)


class RegConfig(BaseModel):
    norm: Literal["none", "l1", "l2"] = "none"
    penalty: float = Field(default=0.0, ge=0.0)

    model_config = {"frozen": True}


class OptimizerConfig(BaseModel):
    kind: Literal["sgd", "adam"] = "adam"
    base_learning_rate: float = Field(default=0.01, gt=0.0)
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    batch_size: int = Field(default=128, ge=1)
    max_steps: int = Field(default=1000, ge=0)


class ArchitectureSpec(BaseModel):
    """
    Declarative description of one model architecture.

    Fields left as ``None`` take the architecture's default
    (see ``services.modelzoo``).
    """
    name: ArchitectureName
    num_mixtures: int = Field(default=2, ge=1)
    hidden_sizes: Optional[List[int]] = None
    keep_prob: Optional[float] = None
    output_activation: Optional[Literal["sigmoid", "softmax"]] = None
    reg: Optional[RegConfig] = None
    features: Literal["all", "rgb", "audio"] = "all"
    skip_connections: bool = True
    conv_channels: int = Field(default=32, ge=1)

    model_config = {"frozen": True}

    @field_validator("keep_prob")
    @classmethod
    def _keep_prob_range(cls, v):
        if v is not None and not (0.0 < v <= 1.0):
            raise ValueError("keep_prob must be in (0, 1]")
        return v

    @field_validator("hidden_sizes")
    @classmethod
    def _positive_sizes(cls, v):
        if v is not None and any(size < 1 for size in v):
            raise ValueError("hidden sizes must be positive")
        return v


class SyntheticConfig(BaseModel):
    num_videos: int = Field(default=1000, ge=0)
    num_classes: int = Field(default=25, ge=1)
    rgb_dim: int = Field(default=1024, ge=0)
    audio_dim: int = Field(default=128, ge=0)
    seed: int = Field(default=0, ge=0, le=UINT64_MAX)
    teacher_sparsity: float = Field(default=0.3, gt=0.0, le=1.0)
    noise_std: float = Field(default=0.1, ge=0.0)
    split: int = Field(default=0, ge=0)

    @model_validator(mode="after")
    def _has_features(self):
        if self.rgb_dim + self.audio_dim < 1:
            raise ValueError("rgb_dim + audio_dim must be >= 1")
        return self


class TrainConfig(BaseModel):
    optimizer: OptimizerConfig = Field(default_factory=OptimizerConfig)
    loss: Optional[Literal["sigmoid_ce", "softmax_ce"]] = None
    include_validation: bool = False
    eval_every: int = Field(default=100, ge=1)
    shuffle_seed: int = Field(default=0, ge=0, le=UINT64_MAX)
    checkpoint_path: Optional[str] = None
    k: int = Field(default=20, ge=1)
    monitor_size: int = Field(default=512, ge=1)
    prefetch: int = Field(default=0, ge=0)


class EnsembleSpec(BaseModel):
    """
    Members are architecture specs (model ensembles) or submission paths
    (file averaging). ``{"arch": {...}, "count": n}`` expands to n copies.
    """
    kind: Literal["average_models", "stack_models", "average_files"]
    members: List[Union[ArchitectureSpec, str]]
    meta: Optional[ArchitectureSpec] = None
    k: int = Field(default=20, ge=1)
    freeze_members: bool = False

    @model_validator(mode="before")
    @classmethod
    def _expand_counts(cls, data: Any):
        if isinstance(data, dict) and isinstance(data.get("members"), list):
            expanded = []
            for member in data["members"]:
                if isinstance(member, dict) and "count" in member and "arch" in member:
                    expanded.extend([member["arch"]] * int(member["count"]))
                else:
                    expanded.append(member)
            data = {**data, "members": expanded}
        return data

    @model_validator(mode="after")
    def _check_members(self):
        if len(self.members) < 2:
            raise ValueError("an ensemble needs at least 2 members")
        wants_files = self.kind == "average_files"
        for member in self.members:
            if wants_files != isinstance(member, str):
                raise ValueError(f"member {member!r} does not fit ensemble kind {self.kind}")
        return self


def parse_config(model_cls: Type[M], data: Dict[str, Any], error_cls=InvalidConfigError) -> M:
    """Validate ``data`` into ``model_cls``, mapping pydantic errors to lab errors."""
    try:
        return model_cls.model_validate(data)
    except ValidationError as e:
        details = "; ".join(
            f"{'.'.join(str(p) for p in err['loc']) or model_cls.__name__}: {err['msg']}"
            for err in e.errors()
        )
        raise error_cls(f"invalid {model_cls.__name__}: {details}") from e


def parse_architecture(data: Dict[str, Any]) -> ArchitectureSpec:
    return parse_config(ArchitectureSpec, data, error_cls=BadSpecError)
