"""Windowed training, evaluation, grid search and late fusion for the LSTM regressor."""

from __future__ import annotations

import copy
import itertools
import json
import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from physgold.dataset import Window, segment, window_spans
from physgold.lstm import Adam, NonFiniteGradientError, Params, backward_and_step, init_params, lstm_forward
from physgold.metrics import ccc

log = logging.getLogger(__name__)

HIDDEN_GRID = (32, 64, 128)
LAYER_GRID = (1, 2, 4)
LR_GRID = (0.0001, 0.001, 0.005)
FORMAT = "physgold.lstm/1"


@dataclass
class ModelConfig:
    bidirectional: bool = False
    hidden: int = 64
    layers: int = 1
    lr: float = 0.001
    seed: int = 0
    max_epochs: int = 100
    patience: int = 15
    batch_size: int = 4
    win: int = 300
    hop: int = 50
    allow_off_grid: bool = False

    def validate(self) -> None:
        if not self.allow_off_grid:
            for name, value, grid in (
                ("hidden", self.hidden, HIDDEN_GRID),
                ("layers", self.layers, LAYER_GRID),
                ("lr", self.lr, LR_GRID),
            ):
                if value not in grid:
                    raise ValueError(f"{name}={value} is not in {grid}; set allow_off_grid to use it")
        if self.hidden < 1 or self.layers < 1 or self.lr < 0:
            raise ValueError("hidden and layers must be positive, lr non-negative")
        if self.max_epochs < 1 or self.patience < 0 or self.batch_size < 1:
            raise ValueError("max_epochs >= 1, patience >= 0 and batch_size >= 1 required")

    def label(self) -> str:
        direction = "bi" if self.bidirectional else "uni"
        return f"{direction}-h{self.hidden}-n{self.layers}-lr{self.lr:g}"


# fixed second-stage configuration for decision-level fusion
LATE_FUSION_CONFIG = ModelConfig(bidirectional=False, hidden=64, layers=4, lr=0.001)


@dataclass
class SubjectData:
    subject_id: str
    features: np.ndarray  # T x D
    labels: np.ndarray | None = None  # T

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=float)
        if self.features.ndim == 1:
            self.features = self.features[:, None]
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=float)
            if self.labels.shape[0] != self.features.shape[0]:
                raise ValueError(
                    f"subject {self.subject_id}: {self.features.shape[0]} feature rows vs {self.labels.shape[0]} labels"
                )


@dataclass
class TrainedModel:
    config: ModelConfig
    params: Params
    feature_mean: np.ndarray
    feature_std: np.ndarray
    history: list[dict] = field(default_factory=list)
    best_epoch: int = 0

    @property
    def input_dim(self) -> int:
        return self.feature_mean.size

    def save(self, path) -> None:
        doc = {
            "format": FORMAT,
            "config": asdict(self.config),
            "feature_mean": self.feature_mean.tolist(),
            "feature_std": self.feature_std.tolist(),
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in sorted(self.params.items())},
            "history": self.history,
            "best_epoch": self.best_epoch,
        }
        Path(path).write_text(json.dumps(doc, indent=1) + "\n")

    @classmethod
    def load(cls, path) -> "TrainedModel":
        doc = json.loads(Path(path).read_text())
        if doc.get("format") != FORMAT:
            raise ValueError(f"{path}: not a {FORMAT} model file")
        params = {k: np.array(v["data"], dtype=float).reshape(v["shape"]) for k, v in doc["params"].items()}
        return cls(
            ModelConfig(**doc["config"]),
            params,
            np.array(doc["feature_mean"], dtype=float),
            np.array(doc["feature_std"], dtype=float),
            doc["history"],
            doc["best_epoch"],
        )


def _normalizer(subjects: Sequence[SubjectData]) -> tuple[np.ndarray, np.ndarray]:
    stacked = np.concatenate([s.features for s in subjects], axis=0)
    mean = stacked.mean(axis=0)
    std = stacked.std(axis=0)
    std[std < 1e-12] = 1.0
    return mean, std


def _batches(windows: Sequence[Window], batch_size: int, rng: np.random.Generator):
    # windows of equal length share a batch
    order = rng.permutation(len(windows))
    buckets: dict[int, list[Window]] = {}
    for idx in order:
        buckets.setdefault(len(windows[idx]), []).append(windows[idx])
    batches = []
    for group in buckets.values():
        for k in range(0, len(group), batch_size):
            batches.append(group[k : k + batch_size])
    return [batches[i] for i in rng.permutation(len(batches))]


def predict_array(params: Params, features: np.ndarray, win: int, hop: int) -> np.ndarray:
    """Full-length prediction; overlapping window outputs are averaged."""
    n = features.shape[0]
    spans = window_spans(n, win, hop)
    total = np.zeros(n)
    counts = np.zeros(n)
    by_len: dict[int, list[int]] = {}
    for s, length in spans:
        by_len.setdefault(length, []).append(s)
    for length, starts in by_len.items():
        batch = np.stack([features[s : s + length] for s in starts])
        out, _ = lstm_forward(params, batch)
        for s, row in zip(starts, out):
            total[s : s + length] += row
            counts[s : s + length] += 1
    return total / counts


def predict(model: TrainedModel, features: np.ndarray) -> np.ndarray:
    features = np.asarray(features, dtype=float)
    if features.ndim == 1:
        features = features[:, None]
    if features.shape[1] != model.input_dim:
        raise ValueError(f"model expects {model.input_dim} features, got {features.shape[1]}")
    z = (features - model.feature_mean) / model.feature_std
    return predict_array(model.params, z, model.config.win, model.config.hop)


def partition_ccc(preds: Mapping[str, np.ndarray], gold: Mapping[str, np.ndarray], subjects: Sequence[str]) -> dict:
    """CCC on the concatenation of subjects, plus the mean of per-subject CCCs."""
    missing = [s for s in subjects if s not in gold]
    if missing:
        raise ValueError(f"no gold standard for subject(s) {', '.join(missing)}")
    if not subjects:
        raise ValueError("empty partition")
    p = np.concatenate([preds[s] for s in subjects])
    g = np.concatenate([gold[s] for s in subjects])
    per_subject = [ccc(preds[s], gold[s]) for s in subjects]
    return {"ccc": ccc(p, g), "ccc_subject_mean": float(np.mean(per_subject))}


def train(config: ModelConfig, train_data: Sequence[SubjectData], devel_data: Sequence[SubjectData]) -> TrainedModel:
    """Train with early stopping on devel CCC; the best epoch's parameters are kept."""
    config.validate()
    if not train_data:
        raise ValueError("no training subjects")
    if not devel_data:
        raise ValueError("no development subjects")
    mean, std = _normalizer(train_data)
    windows = []
    for s in train_data:
        windows.extend(segment((s.features - mean) / std, s.labels, config.win, config.hop, s.subject_id))
    devel_x = {s.subject_id: (s.features - mean) / std for s in devel_data}
    devel_y = {s.subject_id: s.labels for s in devel_data}
    devel_ids = sorted(devel_x)

    rng = np.random.default_rng(config.seed)
    params = init_params(mean.size, config.hidden, config.layers, config.bidirectional, rng)
    opt = Adam(config.lr)
    best_params = copy.deepcopy(params)
    best_ccc, best_epoch, stale = -np.inf, 0, 0
    history = []
    for epoch in range(config.max_epochs):
        losses = []
        for batch in _batches(windows, config.batch_size, rng):
            x = np.stack([w.features for w in batch])
            y = np.stack([w.labels for w in batch])
            try:
                losses.append(backward_and_step(params, x, y, opt))
            except NonFiniteGradientError as exc:
                log.warning("epoch %d aborted: %s", epoch, exc)
                break
        preds = {s: predict_array(params, devel_x[s], config.win, config.hop) for s in devel_ids}
        devel_ccc = partition_ccc(preds, devel_y, devel_ids)["ccc"]
        history.append(
            {"epoch": epoch, "train_loss": float(np.mean(losses)) if losses else None, "devel_ccc": devel_ccc}
        )
        if devel_ccc > best_ccc:
            best_ccc, best_epoch, stale = devel_ccc, epoch, 0
            best_params = copy.deepcopy(params)
        else:
            stale += 1
            if stale > config.patience:
                break
    return TrainedModel(config, best_params, mean, std, history, best_epoch)


def evaluate(model: TrainedModel, data: Sequence[SubjectData], partitions: Mapping[str, Sequence[str]]) -> dict:
    """Per-partition CCC for ``partitions`` (name -> subject ids)."""
    by_id = {s.subject_id: s for s in data}
    out = {}
    for part, ids in partitions.items():
        ids = list(ids)
        unknown = [i for i in ids if i not in by_id]
        if unknown:
            raise ValueError(f"no data for subject(s) {', '.join(unknown)}")
        gold = {}
        for i in ids:
            if by_id[i].labels is None:
                raise ValueError(f"no gold standard for subject {i}")
            gold[i] = by_id[i].labels
        preds = {i: predict(model, by_id[i].features) for i in ids}
        out[part] = partition_ccc(preds, gold, ids)
    return out


@dataclass
class Grid:
    bidirectional: Sequence[bool] = (False, True)
    hidden: Sequence[int] = HIDDEN_GRID
    layers: Sequence[int] = LAYER_GRID
    lr: Sequence[float] = LR_GRID

    def configs(self, base: ModelConfig) -> list[ModelConfig]:
        combos = itertools.product(self.bidirectional, self.hidden, self.layers, self.lr)
        return [replace(base, bidirectional=b, hidden=h, layers=n, lr=lr) for b, h, n, lr in combos]


def _train_job(args):
    config, train_data, devel_data = args
    return train(config, train_data, devel_data)


def grid_search(
    grid: Grid,
    train_data: Sequence[SubjectData],
    devel_data: Sequence[SubjectData],
    base: ModelConfig | None = None,
    jobs: int = 1,
) -> tuple[TrainedModel, list[dict]]:
    """Train every grid point; the best devel CCC wins, ties going to the earliest point."""
    from physgold.parallel import parallel_map

    configs = grid.configs(base or ModelConfig())
    if not configs:
        raise ValueError("empty hyperparameter grid")
    models = parallel_map(_train_job, [(c, train_data, devel_data) for c in configs], jobs)
    rows = []
    for idx, (cfg, model) in enumerate(zip(configs, models)):
        best = model.history[model.best_epoch]["devel_ccc"]
        rows.append({"index": idx, "config": cfg.label(), "devel_ccc": best, "epochs": len(model.history)})
    leaderboard = sorted(rows, key=lambda r: (-r["devel_ccc"], r["index"]))
    return models[leaderboard[0]["index"]], leaderboard


def late_fuse(
    prediction_sets: Mapping[str, Mapping[str, np.ndarray]],
    gold: Mapping[str, np.ndarray],
    partitions: Mapping[str, Sequence[str]],
    config: ModelConfig | None = None,
) -> tuple[dict[str, np.ndarray], dict, TrainedModel]:
    """Second-stage LSTM over stacked per-model predictions.

    ``prediction_sets`` maps model name -> subject -> prediction. The fusion
    model trains on ``partitions['train']``, early-stops on ``'devel'`` and is
    scored on every listed partition.
    """
    config = config or LATE_FUSION_CONFIG
    names = sorted(prediction_sets)
    if not names:
        raise ValueError("late fusion needs at least one prediction set")
    subjects = sorted({s for ids in partitions.values() for s in ids})
    stacked = {}
    for s in subjects:
        cols = []
        for n in names:
            if s not in prediction_sets[n]:
                raise ValueError(f"prediction set {n!r} has no subject {s}")
            cols.append(np.asarray(prediction_sets[n][s], dtype=float))
        if len({c.size for c in cols}) != 1 or (s in gold and cols[0].size != np.asarray(gold[s]).size):
            raise ValueError(f"subject {s}: prediction grids differ in length")
        stacked[s] = np.stack(cols, axis=1)

    def subset(part):
        return [SubjectData(s, stacked[s], gold[s]) for s in partitions.get(part, [])]

    model = train(config, subset("train"), subset("devel"))
    fused = {s: predict(model, stacked[s]) for s in subjects}
    scores = {part: partition_ccc(fused, gold, list(ids)) for part, ids in partitions.items() if ids}
    return fused, scores, model
