"""Subject directories, partitions, feature matrices, windowing, and the synthetic generator.

Dataset layout::

    <root>/partitions.csv                    subject_id,partition
    <root>/<subject>/{A1,A2,A3,EDA,BPM,RESP}.csv   timestamp,value
    <root>/<subject>/features/<set>.csv      timestamp,f0,...,f{D-1}
    <root>/<subject>/latent.csv              synthetic data only
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from physgold.signal import (
    DEFAULT_SAVGOL_POLYORDER,
    DEFAULT_SAVGOL_WINDOW,
    SignalBundle,
    TimeSeries,
    resample,
    savitzky_golay,
)

LABEL_FS = 2.0
RATER_CHANNELS = ("A1", "A2", "A3")
PHYSIO_CHANNELS = ("EDA", "BPM", "RESP")
ALL_CHANNELS = RATER_CHANNELS + PHYSIO_CHANNELS
LATENT = "LATENT"
PARTITIONS = ("train", "devel", "test")


class DataFormatError(ValueError):
    """A dataset file is malformed; the message names the file and line."""

    def __init__(self, path, line: int | None, message: str):
        where = f"{path}:{line}" if line is not None else str(path)
        super().__init__(f"{where}: {message}")
        self.path = Path(path)
        self.line = line


@dataclass(eq=False)
class FeatureMatrix:
    subject_id: str
    set_name: str
    fs: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2:
            raise ValueError(f"{self.set_name}: feature matrix must be 2-D")
        if not np.all(np.isfinite(self.values)):
            raise ValueError(f"{self.set_name}: feature matrix contains non-finite entries")

    @property
    def rows(self) -> int:
        return self.values.shape[0]

    @property
    def dims(self) -> int:
        return self.values.shape[1]


@dataclass
class Partitioning:
    assignment: dict[str, str]

    def subjects(self, partition: str) -> list[str]:
        return sorted(s for s, p in self.assignment.items() if p == partition)

    def require_all(self) -> None:
        empty = [p for p in PARTITIONS if not self.subjects(p)]
        if empty:
            raise ValueError(f"partition(s) {', '.join(empty)} have no subjects")

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["subject_id", "partition"])
            for s in sorted(self.assignment):
                w.writerow([s, self.assignment[s]])


@dataclass
class Window:
    subject_id: str
    start: int
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return self.labels.shape[0]


@dataclass
class LoadConfig:
    target_fs: float = LABEL_FS
    savgol_window: int = DEFAULT_SAVGOL_WINDOW
    savgol_polyorder: int = DEFAULT_SAVGOL_POLYORDER
    smooth_physio: bool = True


# -- CSV helpers -----------------------------------------------------------


def _read_rows(path: Path, expected_header: Sequence[str] | None = None) -> tuple[list[str], np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataFormatError(path, 1, "file is empty") from None
        if expected_header is not None and header != list(expected_header):
            raise DataFormatError(path, 1, f"expected header {','.join(expected_header)}, got {','.join(header)}")
        if not header or header[0] != "timestamp":
            raise DataFormatError(path, 1, "first column must be 'timestamp'")
        rows = []
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != len(header):
                raise DataFormatError(path, lineno, f"expected {len(header)} fields, got {len(row)}")
            parsed = []
            for col, cell in zip(header, row):
                try:
                    v = float(cell)
                except ValueError:
                    raise DataFormatError(path, lineno, f"column {col!r}: not a number: {cell!r}") from None
                if not math.isfinite(v):
                    raise DataFormatError(path, lineno, f"column {col!r}: non-finite value {cell!r}")
                parsed.append(v)
            rows.append(parsed)
    if not rows:
        raise DataFormatError(path, None, "no data rows")
    return header, np.array(rows, dtype=float)


def _grid(path: Path, timestamps: np.ndarray) -> tuple[float, float]:
    if timestamps.size < 2:
        raise DataFormatError(path, None, "need at least 2 samples to infer the sampling rate")
    steps = np.diff(timestamps)
    dt = float(np.median(steps))
    if dt <= 0 or np.max(np.abs(steps - dt)) > 1e-6 * max(1.0, dt) + 1e-9:
        bad = int(np.argmax(np.abs(steps - dt))) + 3
        raise DataFormatError(path, bad, "timestamps are not uniformly spaced")
    fs = 1.0 / dt
    fs_rounded = round(fs, 6)
    return float(fs_rounded), float(timestamps[0])


def read_channel(path, subject_id: str, name: str | None = None) -> TimeSeries:
    path = Path(path)
    _, data = _read_rows(path, ["timestamp", "value"])
    fs, t0 = _grid(path, data[:, 0])
    return TimeSeries(subject_id, name or path.stem, fs, data[:, 1], t0)


def write_series(path, ts: TimeSeries) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp", "value"])
        for t, v in zip(ts.timestamps, ts.values):
            w.writerow([repr(float(t)), repr(float(v))])


def read_features(path, subject_id: str) -> FeatureMatrix:
    path = Path(path)
    header, data = _read_rows(path)
    expected = ["timestamp"] + [f"f{k}" for k in range(len(header) - 1)]
    if header != expected or len(header) < 2:
        raise DataFormatError(path, 1, "feature header must be timestamp,f0,...,f{D-1}")
    fs, t0 = _grid(path, data[:, 0])
    return FeatureMatrix(subject_id, path.stem, fs, data[:, 1:], t0)


def write_features(path, fm: FeatureMatrix) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["timestamp"] + [f"f{k}" for k in range(fm.dims)])
        for k, row in enumerate(fm.values):
            w.writerow([repr(fm.t0 + k / fm.fs)] + [repr(float(v)) for v in row])


def load_partitions(path) -> Partitioning:
    path = Path(path)
    assignment: dict[str, str] = {}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or [h.strip() for h in header] != ["subject_id", "partition"]:
            raise DataFormatError(path, 1, "expected header subject_id,partition")
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            if len(row) != 2:
                raise DataFormatError(path, lineno, f"expected 2 fields, got {len(row)}")
            subject, part = row[0].strip(), row[1].strip()
            if part not in PARTITIONS:
                raise DataFormatError(path, lineno, f"unknown partition {part!r}; expected one of {', '.join(PARTITIONS)}")
            if subject in assignment:
                raise DataFormatError(path, lineno, f"subject {subject!r} assigned more than once")
            assignment[subject] = part
    return Partitioning(assignment)


# -- loading ---------------------------------------------------------------


def preprocess_channel(ts: TimeSeries, config: LoadConfig) -> TimeSeries:
    """Bring one channel to the label grid; physiological channels are also smoothed."""
    if ts.fs != config.target_fs:
        ts = resample(ts, config.target_fs)
    if config.smooth_physio and ts.name in PHYSIO_CHANNELS:
        ts = savitzky_golay(ts, config.savgol_window, config.savgol_polyorder)
    return ts


def _trim(items: dict, fs: float, where: Path):
    # items: name -> (t0, n); returns name -> (offset, count)
    start = max(t0 for t0, _ in items.values())
    end = min(t0 + n / fs for t0, n in items.values())
    count = int(round((end - start) * fs))
    if count <= 0:
        raise DataFormatError(where, None, "channels do not overlap in time")
    return {k: (int(round((start - t0) * fs)), count) for k, (t0, _) in items.items()}


def load_subject(
    directory, config: LoadConfig | None = None, channels: Sequence[str] | None = None
) -> tuple[SignalBundle, dict[str, FeatureMatrix]]:
    """Read one subject directory onto the common label grid.

    Channels listed in ``channels`` (default: all known channels present)
    plus ``latent.csv`` if it exists are returned in the bundle.
    """
    config = config or LoadConfig()
    directory = Path(directory)
    subject_id = directory.name
    if not directory.is_dir():
        raise DataFormatError(directory, None, "subject directory not found")
    wanted = list(channels) if channels is not None else [c for c in ALL_CHANNELS if (directory / f"{c}.csv").exists()]
    series = {}
    for name in wanted:
        path = directory / f"{name}.csv"
        if not path.exists():
            raise DataFormatError(path, None, f"missing channel file for {name}")
        raw = read_channel(path, subject_id, name)
        try:
            series[name] = preprocess_channel(raw, config)
        except ValueError as exc:
            raise DataFormatError(path, None, str(exc)) from None
    if (directory / "latent.csv").exists():
        series[LATENT] = read_channel(directory / "latent.csv", subject_id, LATENT)
        if series[LATENT].fs != config.target_fs:
            series[LATENT] = resample(series[LATENT], config.target_fs)

    features = {}
    feat_dir = directory / "features"
    if feat_dir.is_dir():
        for path in sorted(feat_dir.glob("*.csv")):
            fm = read_features(path, subject_id)
            if abs(fm.fs - config.target_fs) > 1e-9:
                raise DataFormatError(path, None, f"features at {fm.fs} Hz, expected the label rate {config.target_fs} Hz")
            features[fm.set_name] = fm

    spans = {("s", k): (ts.t0, len(ts)) for k, ts in series.items()}
    spans.update({("f", k): (fm.t0, fm.rows) for k, fm in features.items()})
    if not spans:
        raise DataFormatError(directory, None, "no channel or feature files")
    cuts = _trim(spans, config.target_fs, directory)
    start_t = max(t0 for t0, _ in spans.values())

    bundle = SignalBundle(subject_id)
    for name, ts in series.items():
        off, n = cuts[("s", name)]
        bundle.add(TimeSeries(subject_id, name, ts.fs, ts.values[off : off + n], start_t))
    trimmed = {}
    for name, fm in features.items():
        off, n = cuts[("f", name)]
        trimmed[name] = FeatureMatrix(subject_id, name, fm.fs, fm.values[off : off + n], start_t)
    return bundle, trimmed


def list_subjects(root) -> list[str]:
    root = Path(root)
    return sorted(p.name for p in root.iterdir() if p.is_dir() and not p.name.startswith("."))


# -- windowing -------------------------------------------------------------


def window_spans(n: int, win: int = 300, hop: int = 50) -> list[tuple[int, int]]:
    """``(start, length)`` pairs tiling ``[0, n)``.

    Full windows start at multiples of ``hop``. If they leave a tail
    uncovered, one shorter window at the next hop start is added provided it
    spans at least 2 steps. Inputs shorter than ``win`` give one window.
    """
    if win < 1 or hop < 1:
        raise ValueError("window and hop must be positive")
    if n <= win:
        return [(0, n)]
    spans = [(s, win) for s in range(0, n - win + 1, hop)]
    last_start = spans[-1][0]
    if last_start + win < n:
        start = last_start + hop
        if n - start >= 2:
            spans.append((start, n - start))
    return spans


def segment(features, labels, win: int = 300, hop: int = 50, subject_id: str | None = None) -> list[Window]:
    feats = features.values if isinstance(features, FeatureMatrix) else np.asarray(features, dtype=float)
    labs = labels.values if isinstance(labels, TimeSeries) else np.asarray(labels, dtype=float)
    if feats.ndim == 1:
        feats = feats[:, None]
    if feats.shape[0] != labs.shape[0]:
        raise ValueError(f"feature rows {feats.shape[0]} != label rows {labs.shape[0]}")
    if subject_id is None:
        subject_id = getattr(features, "subject_id", None) or getattr(labels, "subject_id", "")
    return [
        Window(subject_id, s, feats[s : s + n], labs[s : s + n]) for s, n in window_spans(labs.shape[0], win, hop)
    ]


# -- synthetic data --------------------------------------------------------


@dataclass
class SynthConfig:
    n_subjects: int = 6
    duration_s: float = 300.0
    seed: int = 0
    rater_lag_range: tuple[int, int] = (2, 12)
    rater_noise_sd: float = 1.0
    physio_nonlinearity: str = "sigmoid"
    feature_dims: dict[str, int] = field(default_factory=lambda: {"audio": 16, "video": 16, "text": 16})
    feature_snr: float = 4.0
    physio_fs: float = 16.0

    def validate(self) -> None:
        if self.n_subjects < 1:
            raise ValueError("n_subjects must be at least 1")
        if self.duration_s * LABEL_FS < 2:
            raise ValueError("duration_s must cover at least 2 label steps")
        lo, hi = self.rater_lag_range
        if lo < 0 or hi < lo:
            raise ValueError(f"invalid rater_lag_range {self.rater_lag_range}")
        if self.rater_noise_sd < 0:
            raise ValueError("rater_noise_sd must be non-negative")
        if self.physio_nonlinearity not in ("sigmoid", "linear"):
            raise ValueError(f"unknown physio_nonlinearity {self.physio_nonlinearity!r}")
        if self.feature_snr <= 0:
            raise ValueError("feature_snr must be positive")
        if any(d < 1 for d in self.feature_dims.values()):
            raise ValueError("feature dimensions must be positive")
        ratio = self.physio_fs / LABEL_FS
        if ratio < 1 or abs(ratio - round(ratio)) > 1e-9:
            raise ValueError("physio_fs must be an integer multiple of the label rate")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["rater_lag_range"] = list(self.rater_lag_range)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "SynthConfig":
        d = dict(d)
        if "rater_lag_range" in d:
            d["rater_lag_range"] = tuple(d["rater_lag_range"])
        return cls(**d)

    def subject_ids(self) -> list[str]:
        return [f"s{k:03d}" for k in range(self.n_subjects)]


@dataclass
class SynthSubject:
    subject_id: str
    latent: np.ndarray  # label rate
    raters: dict[str, np.ndarray]  # label rate
    physio: dict[str, np.ndarray]  # physio_fs
    features: dict[str, np.ndarray]  # label rate, T x D
    lags: dict[str, int]


def _smooth_noise(rng: np.random.Generator, n: int, width: int) -> np.ndarray:
    """Unit-variance moving-average filtered white noise."""
    width = max(1, width)
    raw = rng.standard_normal(n + width - 1)
    out = np.convolve(raw, np.ones(width) / width, mode="valid")
    return out / out.std()


def _delay(x: np.ndarray, lag: int) -> np.ndarray:
    if lag <= 0:
        return x.copy()
    return np.concatenate([np.full(lag, x[0]), x[:-lag]])


def _latent_fine(rng: np.random.Generator, n_fine: int, fs: float) -> np.ndarray:
    t = np.arange(n_fine) / fs
    x = np.zeros(n_fine)
    for _ in range(4):
        freq = rng.uniform(1 / 240.0, 1 / 30.0)
        x += rng.uniform(0.5, 1.0) * np.sin(2 * np.pi * freq * t + rng.uniform(0, 2 * np.pi))
    walk = np.cumsum(rng.standard_normal(n_fine)) / np.sqrt(fs)
    walk -= np.polyval(np.polyfit(t, walk, 1), t)
    k = int(10 * fs)  # 10 s smoothing of the random walk
    walk = np.convolve(np.pad(walk, (k // 2, k - 1 - k // 2), mode="edge"), np.ones(k) / k, mode="valid")
    x += 0.5 * walk / max(walk.std(), 1e-12)
    return (x - x.mean()) / x.std()


def _feature_mixes(config: SynthConfig) -> dict[str, np.ndarray]:
    # shared by all subjects so the latent-to-feature map is learnable across them
    mixes = {}
    for k, set_name in enumerate(sorted(config.feature_dims)):
        rng = np.random.default_rng([config.seed, 1_000_003, k])
        mix = rng.standard_normal((2, config.feature_dims[set_name]))
        mix[1] *= 0.5
        mixes[set_name] = mix
    return mixes


def synth_subject(config: SynthConfig, index: int) -> SynthSubject:
    """Generate one subject; randomness depends only on ``(seed, index)``."""
    config.validate()
    rng = np.random.default_rng([config.seed, index])
    sid = config.subject_ids()[index]
    up = int(round(config.physio_fs / LABEL_FS))
    n = int(config.duration_s * LABEL_FS)
    fine = _latent_fine(rng, n * up, config.physio_fs)
    latent = fine.reshape(n, up).mean(axis=1)

    raters, lags = {}, {}
    lo, hi = config.rater_lag_range
    for name in RATER_CHANNELS:
        lag = int(rng.integers(lo, hi + 1))
        gain, offset = rng.uniform(0.5, 1.5), rng.uniform(-0.5, 0.5)
        noise = config.rater_noise_sd * _smooth_noise(rng, n, 8)
        raters[name] = gain * (_delay(latent, lag) + noise) + offset
        lags[name] = lag

    sigmoidal = config.physio_nonlinearity == "sigmoid"
    fs = config.physio_fs
    t = np.arange(n * up) / fs
    # EDA: slow first-order follow of the latent
    eda_drive = _delay(fine, int(3 * fs))
    alpha = 1.0 / (4.0 * fs)
    eda_state = np.empty_like(eda_drive)
    acc = eda_drive[0]
    for k, v in enumerate(eda_drive):
        acc += alpha * (v - acc)
        eda_state[k] = acc
    eda_shape = 1 / (1 + np.exp(-1.5 * eda_state)) if sigmoidal else 0.25 * eda_state
    # phasic skin-conductance responses, more frequent at high arousal
    rate_hz = 0.05 * np.exp(0.8 * fine)
    onsets = rng.random(n * up) < rate_hz / fs
    kernel_t = np.arange(int(20 * fs)) / fs
    kernel = np.exp(-kernel_t / 4.0) - np.exp(-kernel_t / 0.75)
    kernel /= kernel.max()
    phasic = np.convolve(onsets * rng.exponential(0.8, n * up), kernel)[: n * up]
    eda = 2.0 + 6.0 * eda_shape + phasic
    eda += 0.15 * _smooth_noise(rng, n * up, int(4 * fs)) + 0.05 * rng.standard_normal(n * up)

    bpm_drive = _delay(fine, int(1 * fs))
    bpm_shape = np.tanh(0.8 * bpm_drive) if sigmoidal else 0.6 * bpm_drive
    bpm = 75.0 + 12.0 * bpm_shape + 9.0 * _smooth_noise(rng, n * up, int(6 * fs)) + 2.0 * rng.standard_normal(n * up)

    breath_hz = rng.uniform(0.2, 0.33)
    resp = (5.0 + 0.5 * fine) * np.sin(2 * np.pi * breath_hz * t) + 0.35 * fine
    resp += 1.2 * _smooth_noise(rng, n * up, int(6 * fs)) + 0.5 * rng.standard_normal(n * up)
    resp = np.clip(resp, -10.0, 10.0)
    physio = {"EDA": eda, "BPM": bpm, "RESP": resp}

    nuisance = _smooth_noise(rng, n, 20)
    features = {}
    for set_name, mix in _feature_mixes(config).items():
        clean = np.outer(latent, mix[0]) + np.outer(nuisance, mix[1])
        noise_sd = np.sqrt(np.mean(clean**2, axis=0) / config.feature_snr)
        features[set_name] = clean + rng.standard_normal(clean.shape) * noise_sd
    return SynthSubject(sid, latent, raters, physio, features, lags)


def synth_bundle(subject: SynthSubject, config: SynthConfig, load: LoadConfig | None = None) -> SignalBundle:
    """The bundle ``load_subject`` would produce for a generated subject, without touching disk."""
    load = load or LoadConfig()
    bundle = SignalBundle(subject.subject_id)
    series = {n: TimeSeries(subject.subject_id, n, LABEL_FS, v) for n, v in subject.raters.items()}
    series.update({n: TimeSeries(subject.subject_id, n, config.physio_fs, v) for n, v in subject.physio.items()})
    for name, ts in series.items():
        bundle.add(preprocess_channel(ts, load))
    bundle.add(TimeSeries(subject.subject_id, LATENT, LABEL_FS, subject.latent))
    return bundle


def assign_partitions(subject_ids: Sequence[str], seed: int) -> Partitioning:
    """Split roughly 62/17/21 train/devel/test, at least one subject each when possible."""
    ids = list(subject_ids)
    order = np.random.default_rng([seed, 2**31 - 1]).permutation(len(ids))
    n = len(ids)
    n_devel = max(1, round(n * 9 / 53)) if n >= 3 else 0
    n_test = max(1, round(n * 11 / 53)) if n >= 3 else 0
    assignment = {}
    for rank, idx in enumerate(order):
        if rank < n_devel:
            part = "devel"
        elif rank < n_devel + n_test:
            part = "test"
        else:
            part = "train"
        assignment[ids[idx]] = part
    return Partitioning(assignment)


def write_subject(root: Path, subject: SynthSubject, config: SynthConfig) -> None:
    sdir = Path(root) / subject.subject_id
    (sdir / "features").mkdir(parents=True, exist_ok=True)
    sid = subject.subject_id
    for name, values in subject.raters.items():
        write_series(sdir / f"{name}.csv", TimeSeries(sid, name, LABEL_FS, values))
    for name, values in subject.physio.items():
        write_series(sdir / f"{name}.csv", TimeSeries(sid, name, config.physio_fs, values))
    write_series(sdir / "latent.csv", TimeSeries(sid, LATENT, LABEL_FS, subject.latent))
    for set_name, values in subject.features.items():
        write_features(sdir / "features" / f"{set_name}.csv", FeatureMatrix(sid, set_name, LABEL_FS, values))


def _generate_and_write(args) -> str:
    config, index, root = args
    subject = synth_subject(config, index)
    write_subject(root, subject, config)
    return subject.subject_id


def synth_generate(config: SynthConfig, root, jobs: int = 1) -> Partitioning:
    """Write a full synthetic dataset tree under ``root``."""
    from physgold.parallel import parallel_map

    config.validate()
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    parallel_map(_generate_and_write, [(config, k, root) for k in range(config.n_subjects)], jobs)
    parts = assign_partitions(config.subject_ids(), config.seed)
    parts.to_csv(root / "partitions.csv")
    with open(root / "synth_config.json", "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return parts


def iter_dataset(root, subjects: Sequence[str], config: LoadConfig | None = None) -> Iterator:
    for s in subjects:
        yield load_subject(Path(root) / s, config)
