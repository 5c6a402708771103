"""Flat run configuration: task, model, mapper and output settings in one place.

Every key has a default.  A JSON file (a flat object) is applied first and
command-line overrides second; unknown keys and type mismatches are
rejected with the offending key named.
"""

from __future__ import annotations

import json
import types
import typing
from dataclasses import MISSING, asdict, dataclass, fields
from pathlib import Path

from colactc.colamap import CoarseMapper, MappingError, MappingKind
from colactc.data import DataError, TaskSpec
from colactc.model.config import ConfigError, TrainConfig
from colactc.model.train import LABEL_SOURCES
from colactc.vocab import ShufflePermutation

RESOLVED_NAME = "resolved_config.json"
KEY_ALIASES = {"lambda": "lam", "mapping_kind": "mapping"}


@dataclass
class RunConfig:
    # task / data
    v_src: int = 512
    v_tgt: int = 512
    f_dim: int = 16
    zipf_s: float = 1.0
    expand_min: int = 3
    expand_max: int = 5
    noise_sigma: float = 0.3
    swap_prob: float = 0.1
    len_min: int = 4
    len_max: int = 12
    data_seed: int = 42
    n_train: int = 4000
    n_valid: int = 500
    train_path: str | None = None
    valid_path: str | None = None
    # objective and model
    lam: float = 0.3
    label_size: int = 256
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
    f64: bool = False
    seed: int = 1
    # coarse labels
    mapping: str = "mod"
    label_source: str = "transcript"
    mapper_seed: int = 0
    perm_file: str | None = None
    random_frozen: bool = False
    # run
    out: str = "runs/default"
    deterministic: bool = False
    eval_every: int = 0

    def __post_init__(self):
        self.validate()

    def label_vocab(self) -> int:
        return self.v_src if self.label_source == "transcript" else self.v_tgt

    def validate(self) -> None:
        for f in fields(self):
            _check_type(f.name, getattr(self, f.name), f.type)
        if self.label_source not in LABEL_SOURCES:
            raise ConfigError(f"label_source: expected one of {', '.join(LABEL_SOURCES)}, got {self.label_source!r}")
        try:
            MappingKind.parse(self.mapping)
        except MappingError as e:
            raise ConfigError(f"mapping: {e}") from None
        if self.eval_every < 0 or self.n_train < 1 or self.n_valid < 0:
            raise ConfigError("n_train must be positive; n_valid and eval_every non-negative")
        V = self.label_vocab()
        if self.lam > 0 and self.label_size > V:
            raise ConfigError(f"label_size: L={self.label_size} exceeds the {self.label_source} vocabulary V={V}")
        if self.lam > 0 and MappingKind.parse(self.mapping) is MappingKind.IDENTITY and self.label_size != V:
            raise ConfigError(f"label_size: identity mapping needs L == V (L={self.label_size}, V={V})")
        try:
            self.task_spec()
        except DataError as e:
            raise ConfigError(f"task: {e}") from None
        self.train_config()

    def task_spec(self) -> TaskSpec:
        return TaskSpec(
            v_src=self.v_src, v_tgt=self.v_tgt, f_dim=self.f_dim, zipf_s=self.zipf_s,
            expand_min=self.expand_min, expand_max=self.expand_max, noise_sigma=self.noise_sigma,
            swap_prob=self.swap_prob, len_min=self.len_min, len_max=self.len_max, seed=self.data_seed,
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig.from_dict(asdict(self))

    def mapper(self) -> CoarseMapper | None:
        if self.lam == 0:
            return None
        perm = ShufflePermutation.load(self.perm_file) if self.perm_file else None
        return CoarseMapper(self.mapping, self.label_vocab(), self.label_size, seed=self.mapper_seed,
                            perm=perm, frozen=self.random_frozen)

    def to_dict(self) -> dict:
        return asdict(self)


_FIELDS = {f.name: f for f in fields(RunConfig)}


def _resolve_type(tp):
    if isinstance(tp, str):
        tp = eval(tp, {"None": None}, {"int": int, "float": float, "str": str, "bool": bool})  # noqa: S307
    return tp


def _check_type(key: str, value, tp) -> None:
    tp = _resolve_type(tp)
    allowed = typing.get_args(tp) if isinstance(tp, types.UnionType) else (tp,)
    for t in allowed:
        if t is type(None) and value is None:
            return
        if t is bool and isinstance(value, bool):
            return
        if t is int and isinstance(value, int) and not isinstance(value, bool):
            return
        if t is float and isinstance(value, (int, float)) and not isinstance(value, bool):
            return
        if t is str and isinstance(value, str):
            return
    names = " or ".join("null" if t is type(None) else t.__name__ for t in allowed)
    raise ConfigError(f"{key}: expected {names}, got {type(value).__name__} {value!r}")


def _normalize(raw: dict, origin: str) -> dict:
    out = {}
    for k, v in raw.items():
        key = KEY_ALIASES.get(k, k.replace("-", "_"))
        if key == "vocab_size":  # shorthand for both sides
            out["v_src"] = out["v_tgt"] = v
            continue
        if key not in _FIELDS:
            raise ConfigError(f"{key}: unknown configuration key (from {origin})")
        if _FIELDS[key].type in ("float", float) and isinstance(v, int) and not isinstance(v, bool):
            v = float(v)
        out[key] = v
    return out


def parse_config(path=None, overrides: dict | None = None, echo: bool = True) -> RunConfig:
    """Resolve defaults <- JSON file <- overrides; optionally write the result under ``out``."""
    values: dict = {}
    if path:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except FileNotFoundError:
            raise ConfigError(f"config: file not found: {path}") from None
        except json.JSONDecodeError as e:
            raise ConfigError(f"config: {path} is not valid JSON ({e.msg} at line {e.lineno})") from None
        if not isinstance(raw, dict):
            raise ConfigError(f"config: {path} must hold a flat JSON object")
        for k, v in raw.items():
            if isinstance(v, (dict, list)):
                raise ConfigError(f"{k}: nested values are not allowed in the flat config")
        values.update(_normalize(raw, str(path)))
    values.update(_normalize({k: v for k, v in (overrides or {}).items() if v is not None}, "flags"))
    cfg = RunConfig(**values)
    if echo:
        write_resolved(cfg)
    return cfg


def write_resolved(cfg: RunConfig) -> Path:
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    p = out / RESOLVED_NAME
    p.write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    return p


def defaults() -> dict:
    return {f.name: f.default for f in fields(RunConfig) if f.default is not MISSING}
