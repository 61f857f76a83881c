"""Banded DTW and iterative multi-channel alignment against a mean reference.

For 1-D channels the spatial projection of canonical time warping reduces
to per-channel standardization, so alignment here alternates between
warping every channel onto the current reference and re-averaging.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numba
import numpy as np

from physgold.metrics import pairwise_agreement
from physgold.signal import SignalBundle, znormalize

log = logging.getLogger(__name__)

PHYSIO_CHANNELS = ("EDA", "BPM", "RESP")

# Predecessors within this relative margin count as tied, so rounding noise
# in the inputs cannot flip the path between mathematically equal options.
TIE_RTOL = 1e-9


@numba.njit(cache=True)
def _accumulate(x, y, band):
    nx, ny = x.size, y.size
    acc = np.full((nx, ny), np.inf)
    for i in range(nx):
        lo = max(0, i - band)
        hi = min(ny, i + band + 1)
        for j in range(lo, hi):
            c = abs(x[i] - y[j])
            if i == 0 and j == 0:
                acc[i, j] = c
                continue
            best = np.inf
            if i > 0 and j > 0:
                best = acc[i - 1, j - 1]
            if i > 0 and acc[i - 1, j] < best:
                best = acc[i - 1, j]
            if j > 0 and acc[i, j - 1] < best:
                best = acc[i, j - 1]
            acc[i, j] = c + best
    return acc


@numba.njit(cache=True)
def _backtrack(acc, rtol):
    i, j = acc.shape[0] - 1, acc.shape[1] - 1
    out = np.empty((acc.shape[0] + acc.shape[1] - 1, 2), dtype=np.int64)
    k = 0
    out[k, 0], out[k, 1] = i, j
    while i > 0 or j > 0:
        if i == 0:
            j -= 1
        elif j == 0:
            i -= 1
        else:
            diag, vert, horiz = acc[i - 1, j - 1], acc[i - 1, j], acc[i, j - 1]
            # ties: diagonal, then vertical, then horizontal
            limit = min(diag, vert, horiz)
            limit += rtol * (1.0 + abs(limit))
            if diag <= limit:
                i -= 1
                j -= 1
            elif vert <= limit:
                i -= 1
            else:
                j -= 1
        k += 1
        out[k, 0], out[k, 1] = i, j
    return out[: k + 1][::-1].copy()


@dataclass(frozen=True)
class WarpPath:
    pairs: tuple[tuple[int, int], ...]

    @classmethod
    def diagonal(cls, n: int) -> "WarpPath":
        return cls(tuple((i, i) for i in range(n)))

    def __len__(self) -> int:
        return len(self.pairs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.pairs, dtype=np.int64).reshape(-1, 2)

    def validate(self, nx: int, ny: int) -> None:
        """Raise ``ValueError`` unless this is an admissible path for an ``nx x ny`` grid."""
        if not self.pairs:
            raise ValueError("empty warp path")
        if self.pairs[0] != (0, 0) or self.pairs[-1] != (nx - 1, ny - 1):
            raise ValueError(f"warp path must run from (0, 0) to ({nx - 1}, {ny - 1})")
        steps = np.diff(self.as_array(), axis=0)
        if steps.size and (steps.min() < 0 or steps.max() > 1 or np.any(steps.sum(axis=1) == 0)):
            raise ValueError("warp path steps must advance i, j, or both by exactly 1")

    def is_identity(self) -> bool:
        return all(i == j for i, j in self.pairs)


def dtw(x, y, band: int | None = None) -> tuple[WarpPath, float]:
    """Minimal cumulative ``|x[i] - y[j]|`` over monotone paths with ``|i - j| <= band``."""
    x = np.ascontiguousarray(x, dtype=float)
    y = np.ascontiguousarray(y, dtype=float)
    if x.size == 0 or y.size == 0:
        raise ValueError("dtw inputs must be non-empty")
    if band is None:
        band = max(x.size, y.size)
    band = int(band)
    if band < abs(x.size - y.size):
        raise ValueError(f"band {band} is narrower than the length difference {abs(x.size - y.size)}")
    acc = _accumulate(x, y, band)
    path = _backtrack(acc, TIE_RTOL)
    return WarpPath(tuple((int(i), int(j)) for i, j in path)), float(acc[-1, -1])


def warp_to_reference(x, path: WarpPath, ref_len: int) -> np.ndarray:
    """Project ``x`` onto the reference grid; samples mapped to one reference index are averaged."""
    x = np.asarray(x, dtype=float)
    path.validate(x.size, ref_len)
    pairs = path.as_array()
    sums = np.bincount(pairs[:, 1], weights=x[pairs[:, 0]], minlength=ref_len)
    counts = np.bincount(pairs[:, 1], minlength=ref_len)
    return sums / counts


@dataclass
class AlignConfig:
    band_fraction: float = 0.1
    max_iters: int = 10
    tol: float = 1e-4
    warp_physio: bool = True

    def band(self, length: int) -> int:
        return max(1, int(np.ceil(self.band_fraction * length)))


@dataclass
class AlignmentResult:
    aligned: SignalBundle
    paths: dict[str, WarpPath]
    iterations: int
    converged: bool
    pre_agreement: float
    post_agreement: float
    degenerate: list[str] = field(default_factory=list)

    def summary(self) -> dict:
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "pre_agreement": self.pre_agreement,
            "post_agreement": self.post_agreement,
            "degenerate": list(self.degenerate),
        }

    def paths_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["channel", "i", "j"])
        for name, path in self.paths.items():
            for i, j in path.pairs:
                w.writerow([name, i, j])
        return buf.getvalue()


def ctw_align(bundle: SignalBundle, names: Sequence[str], config: AlignConfig | None = None) -> AlignmentResult:
    """Align the selected channels by iterative DTW against their evolving mean.

    Channels are standardized first. Flat channels are left out of the
    reference and passed through unwarped.
    """
    config = config or AlignConfig()
    names = list(names)
    if len(names) < 2:
        raise ValueError("alignment needs at least 2 channels")

    normed = {}
    degenerate = []
    for n in names:
        z = znormalize(bundle[n])
        normed[n] = z.series
        if z.degenerate:
            degenerate.append(n)
    active = [n for n in names if n not in degenerate]
    if not active:
        raise ValueError(f"subject {bundle.subject_id}: all channels {names} are constant")
    if degenerate:
        log.warning("subject %s: constant channel(s) %s not warped", bundle.subject_id, degenerate)

    zbundle = SignalBundle(bundle.subject_id, normed)
    warpable = [n for n in active if config.warp_physio or n not in PHYSIO_CHANNELS]
    length = len(zbundle)
    band = config.band(length)

    current = {n: normed[n].values for n in names}
    reference = np.mean([current[n] for n in active], axis=0)
    paths = {n: WarpPath.diagonal(length) for n in names}
    converged = False
    iterations = 0
    for iterations in range(1, config.max_iters + 1):
        for n in warpable:
            path, _ = dtw(normed[n].values, reference, band)
            paths[n] = path
            current[n] = warp_to_reference(normed[n].values, path, length)
        new_reference = np.mean([current[n] for n in active], axis=0)
        change = float(np.sqrt(np.mean((new_reference - reference) ** 2)))
        reference = new_reference
        if change < config.tol:
            converged = True
            break

    aligned = SignalBundle(bundle.subject_id, {n: normed[n].with_values(current[n]) for n in names})
    return AlignmentResult(
        aligned=aligned,
        paths=paths,
        iterations=iterations,
        converged=converged,
        pre_agreement=pairwise_agreement(zbundle, names),
        post_agreement=pairwise_agreement(aligned, names),
        degenerate=degenerate,
    )
