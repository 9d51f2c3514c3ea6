"""OHLCV regime calibration: rolling volatility, 1-D clustering, rates.

The pipeline labels each bar by clustering its trailing log-return
volatility and then estimates the switching generator from the label
sequence.  Rate estimation prefers the matrix logarithm of the empirical
bar-transition matrix, which undoes the aliasing of fast chains observed
at coarse bars; when no real generator log exists (e.g. labels alternating
every bar) it falls back to direct transition counting, whose small-step
limit it matches.
"""

import csv
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime

import numpy as np
import scipy.linalg


@dataclass
class OhlcvSeries:
    timestamps: np.ndarray  # epoch seconds
    open: np.ndarray
    high: np.ndarray
    low: np.ndarray
    close: np.ndarray
    volume: np.ndarray

    def __post_init__(self):
        n = len(self.timestamps)
        for name in ("open", "high", "low", "close", "volume"):
            if len(getattr(self, name)) != n:
                raise ValueError(f"column {name} has wrong length")
        if n < 2:
            raise ValueError("need at least two bars")
        dts = np.diff(self.timestamps)
        if np.any(dts <= 0):
            raise ValueError("timestamps must be strictly increasing")
        if not np.allclose(dts, dts[0], rtol=1e-6, atol=1e-6):
            raise ValueError("bar interval must be constant")
        for name in ("open", "high", "low", "close"):
            if np.any(getattr(self, name) <= 0):
                raise ValueError(f"non-positive prices in column {name}")

    @property
    def bar_seconds(self) -> float:
        return float(self.timestamps[1] - self.timestamps[0])


def _parse_timestamp(raw: str) -> float:
    """Epoch seconds; numeric wins over RFC-3339 when both would parse."""
    raw = raw.strip()
    try:
        return float(raw)
    except ValueError:
        pass
    try:
        return datetime.fromisoformat(raw.replace("Z", "+00:00")).timestamp()
    except ValueError as exc:
        raise ValueError(f"cannot parse timestamp {raw!r}") from exc


def load_ohlcv_csv(path) -> OhlcvSeries:
    """Read a CSV with header timestamp,open,high,low,close,volume."""
    required = ["timestamp", "open", "high", "low", "close", "volume"]
    rows = {name: [] for name in required}
    with open(path, newline="") as handle:
        reader = csv.DictReader(handle)
        header = reader.fieldnames or []
        missing = [c for c in required if c not in header]
        if missing:
            raise ValueError(f"missing column(s) {', '.join(missing)} in {path}")
        for lineno, row in enumerate(reader, start=2):
            try:
                rows["timestamp"].append(_parse_timestamp(row["timestamp"]))
                for name in required[1:]:
                    rows[name].append(float(row[name]))
            except (TypeError, ValueError) as exc:
                raise ValueError(f"{path}:{lineno}: {exc}") from exc
    return OhlcvSeries(
        timestamps=np.array(rows["timestamp"]),
        open=np.array(rows["open"]),
        high=np.array(rows["high"]),
        low=np.array(rows["low"]),
        close=np.array(rows["close"]),
        volume=np.array(rows["volume"]),
    )


def rolling_volatility(series: OhlcvSeries, window: int,
                       annualization: float) -> np.ndarray:
    """Annualized trailing volatility per bar.

    The value at bar t is the sample standard deviation (ddof=1) of the
    last `window` close-to-close log returns, times sqrt(annualization);
    bars without a full window of returns are NaN.
    """
    if window < 2:
        raise ValueError("window must be at least 2")
    n = len(series.close)
    if n <= window:
        raise ValueError("series shorter than the volatility window")
    returns = np.diff(np.log(series.close))
    out = np.full(n, np.nan)
    scale = math.sqrt(annualization)
    for t in range(window, n):
        out[t] = returns[t - window : t].std(ddof=1) * scale
    return out


def kmeans_1d(values, k: int):
    """Lloyd iteration on scalars with deterministic quantile seeding.

    Centers start at the (2j+1)/(2k) quantiles, ties in assignment go to
    the lower cluster, and the result is sorted so centers ascend.
    Returns (centers, labels).
    """
    values = np.asarray(values, dtype=float)
    if k < 1:
        raise ValueError("k must be at least 1")
    if np.unique(values).size < k:
        raise ValueError(f"need at least {k} distinct values for {k} clusters")
    centers = np.quantile(values, [(2 * j + 1) / (2 * k) for j in range(k)])
    labels = np.zeros(values.size, dtype=int)
    for _ in range(300):
        dists = np.abs(values[:, None] - centers[None, :])
        new_labels = np.argmin(dists, axis=1)
        new_centers = centers.copy()
        for j in range(k):
            members = values[new_labels == j]
            if members.size:
                new_centers[j] = members.mean()
        if np.array_equal(new_labels, labels) and np.allclose(new_centers, centers):
            break
        labels, centers = new_labels, new_centers
    order = np.argsort(centers)
    remap = np.empty(k, dtype=int)
    remap[order] = np.arange(k)
    return centers[order], remap[labels]


def estimate_generator(labels, bar_interval_days: float, n_states: int = None,
                       method: str = "auto") -> np.ndarray:
    """Switching generator (per day) from a per-bar label sequence.

    method="auto" takes the matrix logarithm of the empirical one-bar
    transition matrix when it admits a real generator (de-aliased
    estimate), otherwise counts transitions directly:
    mu_ij = (# transitions i->j) / (time spent in state i).
    States never visited get zero rows with a warning.
    """
    labels = np.asarray(labels, dtype=int)
    if labels.size < 2:
        raise ValueError("need at least two bars of labels")
    if bar_interval_days <= 0:
        raise ValueError("bar interval must be positive")
    n = int(labels.max()) + 1 if n_states is None else n_states
    counts = np.zeros((n, n))
    np.add.at(counts, (labels[:-1], labels[1:]), 1.0)
    occupancy = counts.sum(axis=1)  # source bars per state
    missing = np.nonzero(occupancy == 0)[0]
    if missing.size:
        warnings.warn(
            f"states never visited: {missing.tolist()}; their rates are zero"
        )

    if method not in ("auto", "counting"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        G = _generator_from_logm(counts, occupancy, bar_interval_days)
        if G is not None:
            return G
    off = np.zeros((n, n))
    visited = occupancy > 0
    off[visited] = counts[visited] / (occupancy[visited, None] * bar_interval_days)
    np.fill_diagonal(off, 0.0)
    return off - np.diag(off.sum(axis=1))


def _generator_from_logm(counts, occupancy, bar_interval_days):
    """logm(P_hat)/dt when it is a real generator; None otherwise."""
    n = counts.shape[0]
    P = np.eye(n)
    visited = occupancy > 0
    P[visited] = counts[visited] / occupancy[visited, None]
    eigs = np.linalg.eigvals(P)
    if np.any(eigs.real <= 1e-10) or np.any(np.abs(eigs.imag) > 1e-10):
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        G = scipy.linalg.logm(P)
    if np.abs(G.imag).max() > 1e-8:
        return None
    G = G.real / bar_interval_days
    off = G - np.diag(np.diag(G))
    if off.min() < -1e-8 * max(1.0, np.abs(G).max()):
        return None
    off = np.maximum(off, 0.0)
    off[~visited] = 0.0
    return off - np.diag(off.sum(axis=1))


@dataclass
class RegimeCalibration:
    sigmas: np.ndarray              # annualized, ascending (regime 0 = calm)
    generator_per_day: np.ndarray
    centers: np.ndarray
    labels: np.ndarray              # per bar with a defined volatility
    window: int
    annualization: float
    run_lengths: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "schema_version": 1,
            "sigmas": self.sigmas.tolist(),
            "generator_per_day": self.generator_per_day.tolist(),
            "centers": self.centers.tolist(),
            "window": self.window,
            "annualization": self.annualization,
            "run_lengths": self.run_lengths,
        }


def label_runs(labels) -> list:
    runs = []
    for lab in np.asarray(labels, dtype=int):
        if runs and runs[-1][0] == int(lab):
            runs[-1][1] += 1
        else:
            runs.append([int(lab), 1])
    return [tuple(r) for r in runs]


def calibrate(series: OhlcvSeries, window: int = 48,
              annualization: float = 365.0 * 48.0,
              n_regimes: int = 2) -> RegimeCalibration:
    """Full pipeline: rolling volatility, k-means labels, rate estimation.

    Warm-up bars (no full window) are excluded from clustering and rate
    estimation.  The default annualization assumes 30-minute bars on a
    24/7 market (365 * 48 bars per year).
    """
    vol = rolling_volatility(series, window, annualization)
    defined = ~np.isnan(vol)
    values = vol[defined]
    centers, labels = kmeans_1d(values, n_regimes)
    bar_days = series.bar_seconds / 86400.0
    generator = estimate_generator(labels, bar_days, n_states=n_regimes)
    return RegimeCalibration(
        sigmas=centers.copy(),
        generator_per_day=generator,
        centers=centers,
        labels=labels,
        window=window,
        annualization=annualization,
        run_lengths=label_runs(labels),
    )
