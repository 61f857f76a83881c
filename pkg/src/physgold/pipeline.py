"""Per-subject orchestration used by the command line front end."""

from __future__ import annotations

import json
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from physgold.dataset import (
    LATENT,
    DataFormatError,
    FeatureMatrix,
    LoadConfig,
    list_subjects,
    load_partitions,
    load_subject,
    write_series,
)
from physgold.fusion import ComboId, FusionConfig, GoldStandard, build_gold_standard
from physgold.parallel import parallel_map
from physgold.signal import SignalBundle, TimeSeries


def _load_one(args):
    path, config = args
    return load_subject(path, config)


def load_dataset(root, config: LoadConfig, subjects: Sequence[str] | None = None, jobs: int = 1):
    """``subject -> (bundle, features)`` for every subject directory under ``root``."""
    root = Path(root)
    if not root.is_dir():
        raise DataFormatError(root, None, "dataset root not found")
    subjects = list(subjects) if subjects is not None else list_subjects(root)
    loaded = parallel_map(_load_one, [(root / s, config) for s in subjects], jobs)
    return dict(zip(subjects, loaded))


def _gold_one(args):
    bundle, combo, config = args
    try:
        return build_gold_standard(bundle, combo, config)
    except ValueError as exc:
        return str(exc)


def build_golds(
    bundles: Mapping[str, SignalBundle], combo: ComboId, config: FusionConfig, jobs: int = 1
) -> dict[str, GoldStandard | str]:
    """Gold standard per subject; failures come back as error strings instead of raising."""
    ids = sorted(bundles)
    results = parallel_map(_gold_one, [(bundles[s], combo, config) for s in ids], jobs)
    return dict(zip(ids, results))


def write_gold(out_dir, gold: GoldStandard) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    sid = gold.series.subject_id
    write_series(out_dir / f"{sid}.csv", gold.series)
    (out_dir / f"{sid}.json").write_text(gold.provenance_json())


def read_series_dir(directory, name: str = "GOLD") -> dict[str, TimeSeries]:
    from physgold.dataset import read_channel

    directory = Path(directory)
    if not directory.is_dir():
        raise DataFormatError(directory, None, "directory not found")
    return {p.stem: read_channel(p, p.stem, name) for p in sorted(directory.glob("*.csv"))}


def partitions_for(root, subjects: Sequence[str]) -> dict[str, list[str]]:
    path = Path(root) / "partitions.csv"
    parts = load_partitions(path)
    parts.require_all()
    unknown = [s for s in parts.assignment if s not in subjects]
    if unknown:
        raise DataFormatError(path, None, f"partitioned subject(s) without data: {', '.join(unknown)}")
    return {p: parts.subjects(p) for p in ("train", "devel", "test")}


def targets_for(
    dataset: Mapping[str, tuple[SignalBundle, dict[str, FeatureMatrix]]],
    target: str,
    combo: ComboId,
    config: FusionConfig,
    jobs: int = 1,
) -> dict[str, TimeSeries]:
    """Training labels per subject: a combo gold standard or the synthetic latent."""
    if target == "latent":
        missing = [s for s, (b, _) in dataset.items() if LATENT not in b]
        if missing:
            raise ValueError(f"no latent.csv for subject(s) {', '.join(sorted(missing))}")
        return {s: b[LATENT] for s, (b, _) in sorted(dataset.items())}
    if target != "gold":
        raise ValueError(f"unknown target {target!r}; use 'gold' or 'latent'")
    golds = build_golds({s: b for s, (b, _) in dataset.items()}, combo, config, jobs)
    errors = {s: g for s, g in golds.items() if isinstance(g, str)}
    if errors:
        raise ValueError("; ".join(errors.values()))
    return {s: g.series for s, g in golds.items()}


def write_json(path, doc) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n")


def feature_sets_of(dataset, wanted: Sequence[str] | None) -> list[str]:
    common = None
    for _, feats in dataset.values():
        names = set(feats)
        common = names if common is None else common & names
    available = sorted(common or [])
    if wanted is None:
        if not available:
            raise ValueError("no feature sets shared by all subjects")
        return available
    missing = [w for w in wanted if w not in available]
    if missing:
        raise ValueError(f"feature set(s) {', '.join(missing)} not available; have {', '.join(available) or 'none'}")
    return list(wanted)


def as_prediction(subject_id: str, values: np.ndarray, like: TimeSeries) -> TimeSeries:
    return TimeSeries(subject_id, "PRED", like.fs, values, like.t0)
