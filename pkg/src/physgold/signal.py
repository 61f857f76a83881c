"""Uniformly sampled channels and the elementary operations applied to them."""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Iterable, NamedTuple, Sequence

import numpy as np

DEFAULT_SAVGOL_WINDOW = 25
DEFAULT_SAVGOL_POLYORDER = 3


@dataclass(frozen=True, eq=False)
class TimeSeries:
    """One real-valued channel sampled at ``fs`` Hz starting at ``t0`` seconds."""

    subject_id: str
    name: str
    fs: float
    values: np.ndarray
    t0: float = 0.0

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if values.ndim != 1 or values.size == 0:
            raise ValueError(f"{self.name}: values must be a non-empty 1-D sequence")
        if not np.all(np.isfinite(values)):
            raise ValueError(f"{self.name}: values must be finite")
        if not self.fs > 0:
            raise ValueError(f"{self.name}: sampling rate must be positive, got {self.fs}")
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    def __len__(self) -> int:
        return self.values.size

    @property
    def timestamps(self) -> np.ndarray:
        return self.t0 + np.arange(self.values.size) / self.fs

    def with_values(self, values, **changes) -> "TimeSeries":
        return replace(self, values=np.asarray(values, dtype=float), **changes)


@dataclass
class SignalBundle:
    """Named channels of one subject sharing a sampling grid."""

    subject_id: str
    channels: dict[str, TimeSeries] = field(default_factory=dict)

    def __post_init__(self):
        self.channels = dict(self.channels)
        self._check()

    def _check(self):
        items = list(self.channels.values())
        if not items:
            return
        ref = items[0]
        for ts in items[1:]:
            if ts.fs != ref.fs or ts.t0 != ref.t0 or len(ts) != len(ref):
                raise ValueError(
                    f"channel {ts.name!r} is not on the grid of {ref.name!r} "
                    f"(fs {ts.fs} vs {ref.fs}, t0 {ts.t0} vs {ref.t0}, n {len(ts)} vs {len(ref)})"
                )

    @classmethod
    def from_arrays(cls, subject_id: str, fs: float, arrays: dict, t0: float = 0.0) -> "SignalBundle":
        return cls(
            subject_id,
            {name: TimeSeries(subject_id, name, fs, np.asarray(v, dtype=float), t0) for name, v in arrays.items()},
        )

    def __getitem__(self, name: str) -> TimeSeries:
        try:
            return self.channels[name]
        except KeyError:
            raise KeyError(f"subject {self.subject_id}: unknown channel {name!r}") from None

    def __contains__(self, name: str) -> bool:
        return name in self.channels

    def __len__(self) -> int:
        return len(next(iter(self.channels.values()))) if self.channels else 0

    @property
    def names(self) -> list[str]:
        return list(self.channels)

    @property
    def fs(self) -> float:
        return next(iter(self.channels.values())).fs

    @property
    def t0(self) -> float:
        return next(iter(self.channels.values())).t0

    def add(self, ts: TimeSeries) -> None:
        self.channels[ts.name] = ts
        self._check()

    def select(self, names: Iterable[str]) -> "SignalBundle":
        return SignalBundle(self.subject_id, {n: self[n] for n in names})

    def matrix(self, names: Sequence[str]) -> np.ndarray:
        """Stack the selected channels as rows of a ``len(names) x T`` array."""
        return np.vstack([self[n].values for n in names])


def resample(ts: TimeSeries, target_fs: float) -> TimeSeries:
    """Block-mean decimation to ``target_fs``; the trailing partial block is dropped."""
    ratio = ts.fs / target_fs
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ValueError(
            f"{ts.name}: cannot resample {ts.fs} Hz to {target_fs} Hz, "
            f"decimation factor {ratio:g} is not a positive integer"
        )
    n_out = len(ts) // m
    if n_out == 0:
        raise ValueError(f"{ts.name}: {len(ts)} samples is shorter than one block of {m}")
    if m == 1:
        return ts.with_values(ts.values.copy(), fs=float(target_fs))
    blocks = ts.values[: n_out * m].reshape(n_out, m)
    return ts.with_values(blocks.mean(axis=1), fs=float(target_fs))


def _fit_eval_weights(offsets: np.ndarray, degree: int) -> np.ndarray:
    # Row vector w such that w @ window = value at offset 0 of the least-squares polynomial.
    vander = np.vander(offsets.astype(float), degree + 1, increasing=True)
    return np.linalg.pinv(vander)[0]


def savgol_weights(window: int, polyorder: int) -> np.ndarray:
    """Centre-point smoothing weights for a symmetric window."""
    half = window // 2
    return _fit_eval_weights(np.arange(-half, half + 1), polyorder)


def savitzky_golay(
    ts: TimeSeries, window: int = DEFAULT_SAVGOL_WINDOW, polyorder: int = DEFAULT_SAVGOL_POLYORDER
) -> TimeSeries:
    """Least-squares polynomial smoothing.

    Interior samples take the centre value of the degree-``polyorder`` fit
    over ``window`` samples. Near the ends the window is truncated to the
    available samples (no padding) and the fit degree is capped so that the
    system stays determined.
    """
    n = len(ts)
    if window % 2 != 1 or window < 1:
        raise ValueError(f"savgol window must be odd, got {window}")
    if polyorder < 0 or polyorder >= window:
        raise ValueError(f"polyorder must be in [0, window), got {polyorder} for window {window}")
    if window > n:
        raise ValueError(f"savgol window {window} exceeds series length {n}")

    x = ts.values
    half = window // 2
    out = np.empty(n)
    w = savgol_weights(window, polyorder)
    if n > 2 * half:
        frames = np.lib.stride_tricks.sliding_window_view(x, window)
        out[half : n - half] = frames @ w
    for i in list(range(min(half, n))) + list(range(max(n - half, half), n)):
        lo, hi = max(0, i - half), min(n, i + half + 1)
        weights = _fit_eval_weights(np.arange(lo, hi) - i, min(polyorder, hi - lo - 1))
        out[i] = weights @ x[lo:hi]
    return ts.with_values(out)


class ZNormalized(NamedTuple):
    series: TimeSeries
    mean: float
    std: float
    degenerate: bool


def znormalize(ts: TimeSeries) -> ZNormalized:
    """Standardize to zero mean and unit population std.

    A constant input yields an all-zero series with ``std == 0`` and
    ``degenerate`` set instead of raising.
    """
    if len(ts) < 2:
        raise ValueError(f"{ts.name}: need at least 2 samples to standardize")
    mean = float(np.mean(ts.values))
    centered = ts.values - mean
    std = float(np.sqrt(np.mean(centered**2)))
    if std <= 1e-12 * max(1.0, abs(mean)):
        return ZNormalized(ts.with_values(np.zeros(len(ts))), mean, 0.0, True)
    return ZNormalized(ts.with_values(centered / std), mean, std, False)


def minmax_scale(ts: TimeSeries, lo: float = -1.0, hi: float = 1.0) -> TimeSeries:
    if not lo < hi:
        raise ValueError(f"minmax_scale needs lo < hi, got [{lo}, {hi}]")
    vmin, vmax = float(ts.values.min()), float(ts.values.max())
    if vmax == vmin:
        return ts.with_values(np.full(len(ts), (lo + hi) / 2))
    scaled = lo + (ts.values - vmin) * ((hi - lo) / (vmax - vmin))
    return ts.with_values(np.clip(scaled, lo, hi))


def mean_signal(bundle: SignalBundle, names: Sequence[str], out_name: str = "MEAN") -> TimeSeries:
    """Pointwise arithmetic mean of the selected channels."""
    names = list(names)
    if not names:
        raise ValueError("mean_signal needs at least one channel name")
    stacked = bundle.matrix(names)
    first = bundle[names[0]]
    return first.with_values(stacked.mean(axis=0), name=out_name)
