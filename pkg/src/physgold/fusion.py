"""Agreement-weighted fusion of aligned rater and physiological channels."""

from __future__ import annotations

import enum
import json
import logging
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from physgold.alignment import AlignConfig, ctw_align
from physgold.metrics import pearson
from physgold.signal import SignalBundle, TimeSeries, minmax_scale, znormalize

log = logging.getLogger(__name__)


class ComboId(enum.Enum):
    A123 = ("A1", "A2", "A3")
    A12_EDA = ("A1", "A2", "EDA")
    A12_BPM = ("A1", "A2", "BPM")
    A12_RESP = ("A1", "A2", "RESP")
    A123_EDA_BPM = ("A1", "A2", "A3", "EDA", "BPM")
    A123_EDA_RESP = ("A1", "A2", "A3", "EDA", "RESP")
    A123_BPM_RESP = ("A1", "A2", "A3", "BPM", "RESP")
    A12_EDA_BPM_RESP = ("A1", "A2", "EDA", "BPM", "RESP")
    PHYS_ONLY = ("EDA", "BPM", "RESP")

    @property
    def members(self) -> list[str]:
        return list(self.value)

    @property
    def tag(self) -> str:
        return self.name

    @property
    def cli_name(self) -> str:
        return self.name.lower().replace("_", "-")

    @classmethod
    def parse(cls, text: str) -> "ComboId":
        key = text.strip().upper().replace("-", "_")
        try:
            return cls[key]
        except KeyError:
            choices = ", ".join(c.cli_name for c in cls)
            raise ValueError(f"unknown combo {text!r}; choose from {choices}") from None


@dataclass
class FusionConfig:
    align: AlignConfig = field(default_factory=AlignConfig)
    # None keeps the fused trace in z-space
    scale: tuple[float, float] | None = (-1.0, 1.0)

    def scale_descriptor(self) -> dict:
        if self.scale is None:
            return {"kind": "z"}
        return {"kind": "minmax", "lo": float(self.scale[0]), "hi": float(self.scale[1])}


@dataclass
class GoldStandard:
    series: TimeSeries
    combo: ComboId | None
    weights: dict[str, float]
    alignment_meta: dict
    scale: dict

    def provenance(self) -> dict:
        return {
            "subject": self.series.subject_id,
            "combo": self.combo.tag if self.combo else None,
            "members": list(self.weights),
            "weights": dict(self.weights),
            **self.alignment_meta,
            "scale": self.scale,
        }

    def provenance_json(self) -> str:
        return json.dumps(self.provenance(), indent=2, sort_keys=True) + "\n"


def ewe_weights(bundle: SignalBundle, names: Sequence[str], return_flag: bool = False):
    """Evaluator weights from each channel's correlation with the mean of the others.

    Negative correlations are clipped to zero before normalizing. If nothing
    survives clipping the weights fall back to uniform and the flag is set.
    """
    names = list(names)
    k = len(names)
    if k < 2:
        raise ValueError("EWE needs at least 2 channels")
    stacked = bundle.matrix(names)
    total = stacked.sum(axis=0)
    raw = np.empty(k)
    for idx in range(k):
        others = (total - stacked[idx]) / (k - 1)
        raw[idx] = pearson(stacked[idx], others)
    clipped = np.clip(raw, 0.0, None)
    fallback = not clipped.sum() > 0
    if fallback:
        log.warning("subject %s: no channel agrees with the others, using uniform weights", bundle.subject_id)
        weights = np.full(k, 1.0 / k)
    else:
        weights = clipped / clipped.sum()
    out = {n: float(w) for n, w in zip(names, weights)}
    return (out, fallback) if return_flag else out


def ewe_fuse(bundle: SignalBundle, weights: Mapping[str, float], out_name: str = "GOLD") -> TimeSeries:
    names = list(weights)
    unknown = [n for n in names if n not in bundle]
    if unknown:
        raise ValueError(f"weights name channels not in the bundle: {unknown}")
    w = np.array([weights[n] for n in names], dtype=float)
    if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must be non-negative and sum to 1, got {dict(weights)}")
    fused = w @ bundle.matrix(names)
    return bundle[names[0]].with_values(fused, name=out_name)


def raaw(
    bundle: SignalBundle,
    names: Sequence[str],
    config: FusionConfig | None = None,
    combo: ComboId | None = None,
) -> GoldStandard:
    """Align, weight and fuse ``names`` into a single gold-standard trace."""
    config = config or FusionConfig()
    names = list(names)
    if not names:
        raise ValueError("nothing to fuse")

    if len(names) == 1:
        z = znormalize(bundle[names[0]]).series
        fused = z.with_values(z.values, name="GOLD")
        weights = {names[0]: 1.0}
        meta = {"iterations": 0, "converged": True, "pre_agreement": None, "post_agreement": None, "degenerate": []}
    else:
        zbundle = SignalBundle(bundle.subject_id, {n: znormalize(bundle[n]).series for n in names})
        aligned = ctw_align(zbundle, names, config.align)
        weights = ewe_weights(aligned.aligned, names)
        fused = ewe_fuse(aligned.aligned, weights)
        meta = aligned.summary()

    if config.scale is not None:
        fused = minmax_scale(fused, *config.scale)
    return GoldStandard(fused, combo, weights, meta, config.scale_descriptor())


def build_gold_standard(subject: SignalBundle, combo: ComboId, config: FusionConfig | None = None) -> GoldStandard:
    missing = [n for n in combo.members if n not in subject]
    if missing:
        raise ValueError(f"subject {subject.subject_id}: combo {combo.cli_name} needs missing channel(s) {', '.join(missing)}")
    return raaw(subject, combo.members, config, combo=combo)
