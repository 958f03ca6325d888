"""Weight-dynamics metrics and fixed-point / limit-cycle classification."""
from __future__ import annotations

import csv
import enum
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .errors import ConfigurationError, InputError
from .network import NetworkShape


class Verdict(str, enum.Enum):
    FIXED_POINT = "fixed_point"
    LIMIT_CYCLE = "limit_cycle"
    DIVERGED = "diverged"


@dataclass
class WeightTrajectory:
    """Flattened weight snapshots ``weights[i]`` taken at ``steps[i]``.

    ``layer_sizes`` (optional) lets layerwise norms be computed; without it
    the whole vector is treated as one layer.
    """

    steps: np.ndarray
    weights: np.ndarray
    layer_sizes: tuple[int, ...] | None = None

    def __post_init__(self):
        self.steps = np.asarray(self.steps, dtype=int)
        self.weights = np.asarray(self.weights, dtype=float)
        if self.weights.ndim != 2 or self.weights.shape[0] != self.steps.shape[0]:
            raise InputError("weights must be (n_snapshots, n_weights) matching steps")
        if np.any(np.diff(self.steps) <= 0):
            raise InputError("snapshot steps must be strictly increasing")
        if self.layer_sizes is not None:
            shape = NetworkShape(tuple(self.layer_sizes))
            if shape.n_connections != self.weights.shape[1]:
                raise InputError("layer_sizes do not match snapshot length")

    @classmethod
    def from_snapshots(cls, snapshots, layer_sizes=None) -> "WeightTrajectory":
        return cls([s.step for s in snapshots], np.stack([s.weights for s in snapshots]), layer_sizes)

    def __len__(self):
        return self.steps.shape[0]

    def layer_slices(self) -> list[slice]:
        if self.layer_sizes is None:
            return [slice(0, self.weights.shape[1])]
        out, start = [], 0
        for r, c in NetworkShape(tuple(self.layer_sizes)).weight_shapes:
            out.append(slice(start, start + r * c))
            start += r * c
        return out

    def strided(self, stride: int) -> "WeightTrajectory":
        if stride < 1:
            raise ConfigurationError("stride must be >= 1")
        return WeightTrajectory(self.steps[::stride], self.weights[::stride], self.layer_sizes)


def plasticity_series(traj: WeightTrajectory) -> np.ndarray:
    """Total weight change per step: sum over layers of the Frobenius norm of W_t - W_{t-1}."""
    if len(traj) < 2:
        raise InputError("need at least two snapshots")
    diff = np.diff(traj.weights, axis=0)
    return sum(np.sqrt((diff[:, s] ** 2).sum(axis=1)) for s in traj.layer_slices())


@dataclass
class AttractorReport:
    mean_early: float
    mean_late: float
    rho: float
    verdict: Verdict
    early_fraction: float = 0.05
    dominant_frequency: float | None = None

    @property
    def converged(self) -> bool:
        return self.verdict is Verdict.FIXED_POINT

    def to_dict(self) -> dict:
        d = asdict(self)
        d["verdict"] = self.verdict.value
        return d

    @classmethod
    def from_dict(cls, d: Mapping) -> "AttractorReport":
        d = dict(d)
        d["verdict"] = Verdict(d["verdict"])
        return cls(**d)


def classify_convergence(
    series: np.ndarray,
    rho: float = 0.9,
    early_fraction: float = 0.05,
    growth_factor: float = 10.0,
) -> AttractorReport:
    """Early/late plasticity comparison.

    The rollout counts as converged (fixed point) when the mean late-phase
    plasticity is strictly below ``rho`` times the mean over the first
    ``early_fraction`` of steps.  A network that never changed is a fixed
    point as well.  Non-finite series, and series whose final window exceeds
    ``growth_factor`` times the early mean, are reported as diverged;
    everything else is a limit cycle.
    """
    s = np.asarray(series, dtype=float).ravel()
    if s.size < 2:
        raise InputError("plasticity series needs at least two entries")
    if rho <= 0 or not 0 < early_fraction < 1:
        raise ConfigurationError("need rho > 0 and 0 < early_fraction < 1")
    n_early = min(s.size - 1, max(1, math.ceil(early_fraction * s.size)))
    if not np.all(np.isfinite(s)):
        early = s[:n_early]
        mean_early = float(early.mean()) if np.all(np.isfinite(early)) else float("nan")
        return AttractorReport(mean_early, float("nan"), rho, Verdict.DIVERGED, early_fraction)
    mean_early = float(s[:n_early].mean())
    mean_late = float(s[n_early:].mean())
    if mean_early < 1e-12 or mean_late < rho * mean_early:
        verdict = Verdict.FIXED_POINT
    elif s[-n_early:].mean() > growth_factor * mean_early:
        verdict = Verdict.DIVERGED
    else:
        verdict = Verdict.LIMIT_CYCLE
    return AttractorReport(mean_early, mean_late, rho, verdict, early_fraction)


def _as_matrix(data) -> np.ndarray:
    if isinstance(data, WeightTrajectory):
        return data.weights
    return np.asarray(data, dtype=float)


def pca_embed(traj, k: int = 2) -> tuple[np.ndarray, np.ndarray]:
    """Project snapshots onto their top-``k`` principal directions.

    Returns ``(points, explained_variance_ratio)``.  Each direction is
    signed so its largest-magnitude loading is positive.
    """
    X = _as_matrix(traj)
    if X.ndim != 2 or X.shape[0] < k:
        raise InputError(f"need at least {k} snapshots")
    k_eff = min(k, X.shape[1])
    Xc = X - X.mean(axis=0)
    total = float((Xc ** 2).sum())
    if total <= 0:
        return np.zeros((X.shape[0], k)), np.zeros(k)
    _, s, vt = np.linalg.svd(Xc, full_matrices=False)
    comps = vt[:k_eff]
    pivot = np.abs(comps).argmax(axis=1)
    signs = np.sign(comps[np.arange(k_eff), pivot])
    comps = comps * signs[:, None]
    points = np.zeros((X.shape[0], k))
    points[:, :k_eff] = Xc @ comps.T
    ratios = np.zeros(k)
    ratios[:k_eff] = np.minimum(s[:k_eff] ** 2 / total, 1.0)
    return points, ratios


@dataclass
class SpectrumReport:
    frequencies: np.ndarray
    magnitudes: np.ndarray  # (n_bins,) or (n_bins, n_signals)
    sample_rate: float

    @property
    def resolution(self) -> float:
        return self.frequencies[1] - self.frequencies[0]

    def mean_magnitude(self) -> np.ndarray:
        return self.magnitudes if self.magnitudes.ndim == 1 else self.magnitudes.mean(axis=1)

    def peaks(self, n: int = 1) -> list[float]:
        """The ``n`` strongest non-DC bins, strongest first."""
        mag = self.mean_magnitude()[1:]
        if mag.size == 0 or not np.any(mag > 1e-12):
            return []
        order = np.argsort(-mag, kind="stable")[:n]
        return [float(self.frequencies[i + 1]) for i in order if mag[i] > 1e-12]

    @property
    def dominant_frequency(self) -> float | None:
        p = self.peaks(1)
        return p[0] if p else None


def spectrum(signal, sample_rate: float) -> SpectrumReport:
    """One-sided DFT magnitude of a mean-removed signal (columns = signals)."""
    x = np.asarray(signal, dtype=float)
    if x.shape[0] < 8:
        raise InputError("signal needs at least 8 samples")
    if sample_rate <= 0:
        raise ConfigurationError("sample_rate must be positive")
    n = x.shape[0]
    x = x - x.mean(axis=0)
    mags = np.abs(np.fft.rfft(x, axis=0)) * (2.0 / n)
    freqs = np.fft.rfftfreq(n, d=1.0 / sample_rate)
    return SpectrumReport(freqs, mags, float(sample_rate))


def distance_matrix(traj, stride: int = 1, layerwise: bool = False) -> np.ndarray:
    """Pairwise Euclidean distances between (strided) snapshots.

    With ``layerwise`` and a trajectory that knows its layer sizes, the
    distance is the sum of per-layer Frobenius distances instead.
    """
    if stride < 1:
        raise ConfigurationError("stride must be >= 1")
    X = _as_matrix(traj)[::stride]
    if X.shape[0] < 2:
        raise InputError("need at least two snapshots after striding")
    slices = traj.layer_slices() if (layerwise and isinstance(traj, WeightTrajectory)) else [slice(None)]
    n = X.shape[0]
    D = np.zeros((n, n))
    for p in range(n):
        diff = X - X[p]
        D[p] = sum(np.sqrt((diff[:, s] ** 2).sum(axis=1)) for s in slices)
    D = 0.5 * (D + D.T)
    np.fill_diagonal(D, 0.0)
    return D


def weight_spectrum(traj: WeightTrajectory, sample_rate: float, n_weights: int = 30,
                    rng: np.random.Generator | None = None) -> SpectrumReport:
    """Spectrum of up to ``n_weights`` randomly chosen plastic weights."""
    rng = rng or np.random.default_rng(0)
    n = traj.weights.shape[1]
    idx = np.sort(rng.choice(n, size=min(n_weights, n), replace=False))
    return spectrum(traj.weights[:, idx], sample_rate)


def analyze_trajectory(traj: WeightTrajectory, sample_rate: float, rho: float = 0.9,
                       early_fraction: float = 0.05) -> AttractorReport:
    """Classify a rollout and, for limit cycles, attach the dominant weight frequency."""
    report = classify_convergence(plasticity_series(traj), rho, early_fraction)
    if report.verdict is Verdict.LIMIT_CYCLE and len(traj) >= 8:
        report.dominant_frequency = weight_spectrum(traj, sample_rate).dominant_frequency
    return report


def write_csv(path: str | Path, columns: Mapping[str, Sequence]) -> None:
    """Write equally long columns to CSV with a header row."""
    names = list(columns)
    cols = [np.asarray(columns[n]).ravel() for n in names]
    if len({c.size for c in cols}) > 1:
        raise InputError("CSV columns differ in length")
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names)
        for row in zip(*cols):
            w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])


def read_csv(path: str | Path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows:
        raise InputError(f"{path} is empty")
    header, body = rows[0], rows[1:]
    return {name: np.array([float(r[i]) for r in body]) for i, name in enumerate(header)}


def save_report(report: AttractorReport, path: str | Path) -> None:
    Path(path).write_text(json.dumps(report.to_dict(), indent=1))
