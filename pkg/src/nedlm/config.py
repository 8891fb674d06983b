"""Run configuration: every tunable, serializable as line-oriented key=value."""

from __future__ import annotations

from dataclasses import asdict, dataclass, fields

from .errors import ParameterError, ParseError


@dataclass
class RunConfig:
    seed: int = 13

    # encoder extents
    d_char: int = 16
    max_token_chars: int = 16
    conv_widths: tuple[int, ...] = (1, 2, 3)
    conv_filters: int = 8
    d_tok: int = 32
    d_h: int = 32
    layers: int = 2

    # language-model training
    lm_config: str = "b"
    lm_lr: float = 0.1
    lm_epochs: int = 10
    n_neg_words: int = 64
    n_neg_entities: int = 64
    entity_loss_scale: float = 1.0
    neg_sampling: str = "uniform"  # or "unigram" (counts^0.75)

    # feature binning and ranker
    bins_prior: int = 15
    bins_lexical: int = 10
    train_bins: bool = True
    dropout: float = 0.7
    dropout_both_layers: bool = False
    ranker_lr: float = 0.001
    ranker_epochs: int = 30
    ff_hidden: int = 0  # 0 means half the assembled input extent
    use_prior: bool = True
    use_lexical: bool = True
    joint_finetune: bool = False

    candidate_cap: int = 30

    def validate(self) -> None:
        if self.lm_config not in ("a", "b", "c"):
            raise ParameterError(f"lm_config must be one of a/b/c, got {self.lm_config!r}")
        if self.neg_sampling not in ("uniform", "unigram"):
            raise ParameterError(
                f"neg_sampling must be uniform or unigram, got {self.neg_sampling!r}"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise ParameterError(f"dropout must lie in [0, 1), got {self.dropout}")
        for name in ("d_char", "max_token_chars", "conv_filters", "d_tok", "d_h", "layers"):
            if getattr(self, name) < 1:
                raise ParameterError(f"{name} must be positive")
        if self.max_token_chars < max(self.conv_widths):
            raise ParameterError("max_token_chars shorter than the widest conv filter")
        if self.n_neg_words < 1 or self.n_neg_entities < 1:
            raise ParameterError("negative sample counts must be at least 1")
        if self.bins_prior < 1 or self.bins_lexical < 1:
            raise ParameterError("bin dimensions must be at least 1")

    def with_paper_dims(self) -> "RunConfig":
        """Published-scale extents: 512-d representations, 8192 negatives."""
        cfg = RunConfig(**asdict(self))
        cfg.d_tok = 512
        cfg.d_h = 512
        cfg.n_neg_words = 8192
        cfg.n_neg_entities = 8192
        cfg.bins_prior = 15
        cfg.bins_lexical = 10
        return cfg

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_widths"] = list(self.conv_widths)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        kwargs = dict(d)
        if "conv_widths" in kwargs:
            kwargs["conv_widths"] = tuple(kwargs["conv_widths"])
        known = {f.name for f in fields(cls)}
        unknown = set(kwargs) - known
        if unknown:
            raise ParseError(f"unknown config keys: {sorted(unknown)}")
        return cls(**kwargs)

    def dump(self) -> str:
        return dump_kv(self)

    @classmethod
    def parse(cls, text: str, source: str = "<config>") -> "RunConfig":
        return apply_kv(cls(), text, source)


def dump_kv(obj) -> str:
    """Serialize any flat dataclass as line-oriented key=value."""
    lines = []
    for f in fields(obj):
        value = getattr(obj, f.name)
        if isinstance(value, tuple):
            value = ",".join(str(v) for v in value)
        elif isinstance(value, bool):
            value = "true" if value else "false"
        lines.append(f"{f.name}={value}")
    return "\n".join(lines) + "\n"


def apply_kv(obj, text: str, source: str = "<config>"):
    """Overlay key=value lines onto a dataclass instance, typed by its defaults."""
    known = {f.name for f in fields(obj)}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ParseError(f"{source}:{lineno}: expected key=value")
        key, _, raw = line.partition("=")
        key = key.strip()
        raw = raw.strip()
        if key not in known:
            raise ParseError(f"{source}:{lineno}: unknown key {key!r}")
        current = getattr(obj, key)
        try:
            if isinstance(current, bool):
                if raw.lower() not in ("true", "false"):
                    raise ValueError(f"expected true/false, got {raw!r}")
                value: object = raw.lower() == "true"
            elif isinstance(current, int):
                value = int(raw)
            elif isinstance(current, float):
                value = float(raw)
            elif isinstance(current, tuple):
                value = tuple(int(v) for v in raw.split(",") if v)
            else:
                value = raw
        except ValueError as exc:
            raise ParseError(f"{source}:{lineno}: bad value for {key}: {exc}") from exc
        setattr(obj, key, value)
    return obj
