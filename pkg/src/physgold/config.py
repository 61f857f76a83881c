"""Run configuration shared by all commands, serializable to JSON."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from physgold.alignment import AlignConfig
from physgold.dataset import LoadConfig, SynthConfig
from physgold.fusion import FusionConfig
from physgold.training import LATE_FUSION_CONFIG, Grid, ModelConfig


@dataclass
class RunConfig:
    command: str = ""
    data: str | None = None
    out: str | None = None
    seed: int = 0
    combos: list[str] = field(default_factory=lambda: ["a123"])
    feature_sets: list[str] | None = None
    target: str = "gold"
    load: LoadConfig = field(default_factory=LoadConfig)
    align: AlignConfig = field(default_factory=AlignConfig)
    scale: list[float] | None = field(default_factory=lambda: [-1.0, 1.0])
    model: ModelConfig = field(default_factory=ModelConfig)
    grid: Grid = field(default_factory=Grid)
    late_model: ModelConfig = field(default_factory=lambda: LATE_FUSION_CONFIG)
    fusions: list[str] | None = None
    synth: SynthConfig = field(default_factory=SynthConfig)
    partition: str = "train"

    def fusion_config(self) -> FusionConfig:
        return FusionConfig(self.align, tuple(self.scale) if self.scale is not None else None)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["grid"] = {k: list(v) for k, v in d["grid"].items()}
        d["synth"] = self.synth.to_dict()
        return d

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown config key(s): {', '.join(sorted(unknown))}")
        base = cls()
        kw = {}
        nested = {"load": LoadConfig, "align": AlignConfig, "model": ModelConfig, "late_model": ModelConfig, "grid": Grid}
        for key, value in d.items():
            if key in nested:
                merged = {**asdict(getattr(base, key)), **value}
                if key == "grid":
                    merged = {k: tuple(v) for k, v in merged.items()}
                kw[key] = nested[key](**merged)
            elif key == "synth":
                kw[key] = SynthConfig.from_dict({**base.synth.to_dict(), **value})
            else:
                kw[key] = value
        return cls(**kw)

    @classmethod
    def from_file(cls, path) -> "RunConfig":
        try:
            doc = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: invalid JSON config: {exc}") from None
        if not isinstance(doc, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(doc)

    def echo(self, out_dir) -> Path:
        path = Path(out_dir) / "run_config.json"
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(self.to_json())
        return path
