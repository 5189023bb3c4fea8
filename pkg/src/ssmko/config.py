"""Model configuration."""
from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ConfigError

LAYER_KINDS = ("mamba1", "ssd", "softmax_attention")
SSM_KINDS = ("mamba1", "ssd")


@dataclass(frozen=True)
class ModelSpec:
    """Architecture hyperparameters for every supported layer kind.

    Fields irrelevant to ``layer_kind`` are ignored. ``inner_dim`` (Mamba-1
    channel count) and ``head_dim`` default to values derived from
    ``embed_dim`` when left as ``None``.
    """

    vocab_size: int
    embed_dim: int
    num_layers: int
    layer_kind: str = "ssd"
    tied_unembedding: bool = True
    norm_eps: float = 1e-6
    # mamba1
    state_dim: int = 8
    inner_dim: int | None = None
    conv_kernel: int = 4
    use_gate: bool = True
    # ssd / softmax_attention
    heads: int = 4
    head_dim: int | None = None
    # mamba1 / ssd
    use_skip: bool = True
    # softmax_attention
    ffn_dim: int | None = None
    max_seq_len: int = 64

    def __post_init__(self):
        if self.layer_kind not in LAYER_KINDS:
            raise ConfigError(f"layer_kind must be one of {LAYER_KINDS}, got {self.layer_kind!r}")
        if self.num_layers < 1:
            raise ConfigError("num_layers must be >= 1")
        if self.embed_dim < 1:
            raise ConfigError("embed_dim must be >= 1")
        if self.vocab_size < 1:
            raise ConfigError("vocab_size must be >= 1")
        if self.norm_eps <= 0:
            raise ConfigError("norm_eps must be positive")
        if self.layer_kind == "mamba1" and (self.state_dim < 1 or self.conv_kernel < 1):
            raise ConfigError("state_dim and conv_kernel must be >= 1")
        if self.layer_kind != "mamba1" and self.heads < 1:
            raise ConfigError("heads must be >= 1")
        if self.layer_kind == "softmax_attention":
            if self.head_dim is None and self.embed_dim % self.heads:
                raise ConfigError("embed_dim must be divisible by heads")
            if self.head_dim is not None and self.head_dim * self.heads != self.embed_dim:
                raise ConfigError("head_dim * heads must equal embed_dim")

    @property
    def channels(self) -> int:
        return self.inner_dim if self.inner_dim is not None else self.embed_dim

    @property
    def head_size(self) -> int:
        if self.head_dim is not None:
            return self.head_dim
        return max(1, self.embed_dim // self.heads)

    @property
    def ffn_size(self) -> int:
        return self.ffn_dim if self.ffn_dim is not None else 4 * self.embed_dim

    @property
    def is_ssm(self) -> bool:
        return self.layer_kind in SSM_KINDS

    @property
    def units(self) -> int:
        """Independent SSMs per layer: channels (Mamba-1) or heads."""
        return self.channels if self.layer_kind == "mamba1" else self.heads

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "ModelSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown ModelSpec fields: {sorted(unknown)}")
        return cls(**data)
