from __future__ import annotations

from dataclasses import asdict, dataclass, fields


class ConfigError(ValueError):
    pass


@dataclass
class TrainConfig:
    """Model, objective and optimizer settings (desk-scale defaults).

    ``lam`` weights the CTC term of ``(1 - lam) * MLE + lam * CTC``.
    """

    lam: float = 0.3
    label_size: int = 256
    v_src: int = 512
    v_tgt: int = 512
    f_dim: int = 16
    d: int = 64
    n_enc: int = 2
    n_dec: int = 2
    n_heads: int = 4
    ffn_dim: int = 256
    k_concat: int = 3
    label_smoothing: float = 0.1
    dropout: float = 0.2
    lr: float = 2e-3
    adam_b1: float = 0.9
    adam_b2: float = 0.98
    adam_eps: float = 1e-9
    warmup_steps: int = 400
    max_steps: int = 3000
    batch_tokens: int = 256
    clip_norm: float = 1.0
    beam_size: int = 8
    max_decode_ratio: float = 2.0
    share_params: bool = False
    ctc_head: bool | None = None
    f64: bool = False
    seed: int = 1

    def __post_init__(self):
        self.validate()

    @property
    def dtype(self):
        import numpy as np

        return np.float64 if self.f64 else np.float32

    @property
    def v_mle(self) -> int:
        # target vocabulary plus the end-of-sentence token (also used as BOS)
        return self.v_tgt + 1

    @property
    def eos(self) -> int:
        return self.v_tgt

    @property
    def has_ctc_head(self) -> bool:
        return self.lam > 0 if self.ctc_head is None else bool(self.ctc_head)

    def validate(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lam: must lie in [0, 1], got {self.lam}")
        for name in ("label_size", "v_src", "v_tgt", "f_dim", "d", "n_heads", "ffn_dim",
                     "k_concat", "warmup_steps", "batch_tokens", "beam_size"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name}: must be positive, got {getattr(self, name)}")
        for name in ("n_enc", "n_dec", "max_steps"):
            if getattr(self, name) < 0:
                raise ConfigError(f"{name}: must be non-negative, got {getattr(self, name)}")
        if self.d % self.n_heads:
            raise ConfigError(f"n_heads: d={self.d} is not divisible by n_heads={self.n_heads}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError(f"dropout: must lie in [0, 1), got {self.dropout}")
        if not 0.0 <= self.label_smoothing < 1.0:
            raise ConfigError(f"label_smoothing: must lie in [0, 1), got {self.label_smoothing}")
        if self.share_params and self.label_size + 1 != self.v_mle:
            raise ConfigError(
                f"share_params: needs label_size + 1 == target vocabulary + 1 "
                f"(label_size={self.label_size}, v_tgt={self.v_tgt})"
            )

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        names = {f.name for f in fields(cls)}
        return cls(**{k: v for k, v in data.items() if k in names})
