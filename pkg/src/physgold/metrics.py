"""Agreement and evaluation statistics.

All moments are population (biased) moments. Channels with zero variance
give a correlation of 0 rather than an error so that downstream weighting
can carry on; callers that care can ask for the degeneracy flag.
"""

from __future__ import annotations

import csv
import io
import itertools
import json
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from physgold.signal import SignalBundle

_EPS = 1e-12


def _pair(x, y, min_len: int = 2) -> tuple[np.ndarray, np.ndarray]:
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < min_len:
        raise ValueError(f"need at least {min_len} samples, got {x.size}")
    return x, y


def _is_flat(centered: np.ndarray, scale: float) -> bool:
    return float(np.max(np.abs(centered))) <= _EPS * max(1.0, scale)


def pearson(x, y, return_flag: bool = False):
    """Pearson correlation. Returns 0.0 (flagged) if either side is constant."""
    x, y = _pair(x, y)
    dx = x - x.mean()
    dy = y - y.mean()
    degenerate = _is_flat(dx, abs(x.mean())) or _is_flat(dy, abs(y.mean()))
    if degenerate:
        r = 0.0
    else:
        r = float(np.dot(dx, dy) / np.sqrt(np.dot(dx, dx) * np.dot(dy, dy)))
        r = min(1.0, max(-1.0, r))
    return (r, degenerate) if return_flag else r


def ccc(x, y) -> float:
    """Concordance correlation coefficient with population moments."""
    x, y = _pair(x, y)
    mx, my = x.mean(), y.mean()
    dx, dy = x - mx, y - my
    cov = np.mean(dx * dy)
    denom = np.mean(dx * dx) + np.mean(dy * dy) + (mx - my) ** 2
    if denom == 0.0:
        # both sides constant and equal; treated like any constant pair
        return 0.0
    return float(2.0 * cov / denom)


def mean_absolute_change(x) -> float:
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 2:
        raise ValueError("mean absolute change needs at least 2 samples")
    return float(np.mean(np.abs(np.diff(x))))


def skewness(x, return_flag: bool = False):
    """Fisher-Pearson coefficient ``m3 / m2**1.5``; 0.0 (flagged) for constant input."""
    x = np.asarray(x, dtype=float).ravel()
    if x.size < 3:
        raise ValueError("skewness needs at least 3 samples")
    d = x - x.mean()
    if _is_flat(d, abs(x.mean())):
        return (0.0, True) if return_flag else 0.0
    m2 = np.mean(d**2)
    m3 = np.mean(d**3)
    g1 = float(m3 / m2**1.5)
    return (g1, False) if return_flag else g1


def pairwise_agreement(bundle: SignalBundle, names: Sequence[str]) -> float:
    """Mean Pearson correlation over all unordered pairs of ``names``."""
    names = list(names)
    if len(names) < 2:
        raise ValueError("pairwise agreement needs at least 2 channels")
    ccs = [pearson(bundle[a].values, bundle[b].values) for a, b in itertools.combinations(names, 2)]
    return float(np.mean(ccs))


@dataclass
class AgreementReport:
    combo_id: str
    per_subject: dict[str, float]
    mu: float
    sd: float

    def to_dict(self) -> dict:
        return {"combo": self.combo_id, "mu": self.mu, "sd": self.sd, "per_subject": dict(self.per_subject)}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["combo", "subject", "cc"])
        for subject in sorted(self.per_subject):
            w.writerow([self.combo_id, subject, repr(self.per_subject[subject])])
        w.writerow([self.combo_id, "mu", repr(self.mu)])
        w.writerow([self.combo_id, "sd", repr(self.sd)])
        return buf.getvalue()


def aggregate_agreement(per_subject: Mapping[str, float], combo_id: str = "") -> AgreementReport:
    if not per_subject:
        raise ValueError("cannot aggregate an empty agreement map")
    ordered = {k: float(per_subject[k]) for k in sorted(per_subject)}
    vals = np.array(list(ordered.values()))
    return AgreementReport(combo_id, ordered, float(vals.mean()), float(vals.std()))


@dataclass
class CorrelationMatrix:
    names: list[str]
    entries: np.ndarray = field(repr=False)

    def to_long_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["row", "col", "cc"])
        for i, a in enumerate(self.names):
            for j, b in enumerate(self.names):
                w.writerow([a, b, repr(float(self.entries[i, j]))])
        return buf.getvalue()


def correlation_matrix(bundles: Sequence[SignalBundle], names: Sequence[str]) -> CorrelationMatrix:
    """Per-subject Pearson matrix averaged over subjects."""
    names = list(names)
    bundles = list(bundles)
    if not bundles:
        raise ValueError("correlation matrix needs at least one subject")
    for b in bundles:
        missing = [n for n in names if n not in b]
        if missing:
            raise ValueError(f"subject {b.subject_id}: missing channel(s) {', '.join(missing)}")
    k = len(names)
    acc = np.zeros((k, k))
    for b in bundles:
        for i in range(k):
            for j in range(i + 1, k):
                acc[i, j] += pearson(b[names[i]].values, b[names[j]].values)
    acc /= len(bundles)
    entries = acc + acc.T
    np.fill_diagonal(entries, 1.0)
    return CorrelationMatrix(names, entries)
