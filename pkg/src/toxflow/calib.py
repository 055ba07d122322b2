"""Estimators for binned client-flow data.

Input is a series of flow bins (timestamp, duration, normalized net flow,
optional hedge rate).  Three estimators are provided: the per-day flow
volatility, the per-day drift (the constant-drift MLE: total displacement
over total time), and a correlation proxy for the hedge-feedback
coefficient b built from the flow acceleration.
"""

from __future__ import annotations

import csv
import json
import warnings
from dataclasses import dataclass

import numpy as np

from .model import ValidationError

_HEADERS = (("timestamp", "dt", "dz"), ("timestamp", "dt", "dz", "q"))


@dataclass(frozen=True)
class FlowSeries:
    """Ordered flow bins; timestamps in days, dz normalized by daily volume."""

    timestamp: np.ndarray
    dt: np.ndarray
    dz: np.ndarray
    q: np.ndarray | None = None

    def __post_init__(self):
        for name in ("timestamp", "dt", "dz"):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))
        if self.q is not None:
            object.__setattr__(self, "q", np.asarray(self.q, dtype=float))
        n = self.timestamp.size
        if n == 0:
            raise ValidationError("flow series is empty")
        for name in ("timestamp", "dt", "dz"):
            if getattr(self, name).shape != (n,):
                raise ValidationError("flow series columns must have equal length")
        if self.q is not None and self.q.shape != (n,):
            raise ValidationError("q column length does not match")
        if n > 1 and not np.all(np.diff(self.timestamp) > 0):
            bad = int(np.flatnonzero(np.diff(self.timestamp) <= 0)[0]) + 1
            raise ValidationError(
                f"timestamps must be strictly increasing (record {bad})"
            )
        if not np.all(self.dt > 0):
            bad = int(np.flatnonzero(~(self.dt > 0))[0])
            raise ValidationError(f"bin durations must be positive (record {bad})")

    def __len__(self) -> int:
        return int(self.timestamp.size)

    @property
    def has_hedge(self) -> bool:
        return self.q is not None

    def day_index(self) -> np.ndarray:
        """Integer day label per bin: floor of the timestamp."""
        return np.floor(self.timestamp).astype(int)

    def day_partition(self):
        """Sorted list of (day, indices-into-the-series)."""
        days = self.day_index()
        return [(int(d), np.flatnonzero(days == d)) for d in np.unique(days)]

    @classmethod
    def from_trajectories(cls, trajs, day_offset: float = 1.0, include_q: bool = True):
        """Assemble a series from simulated trajectories, one day per path.

        Accepts any objects carrying arrays ``t``, ``Z`` and ``q`` (the
        trajectory records of the simulator); path i is shifted in time by
        i * day_offset so day labels separate paths.
        """
        ts, dts, dzs, qs = [], [], [], []
        for i, traj in enumerate(trajs):
            t = np.asarray(traj.t, dtype=float)
            Z = np.asarray(traj.Z, dtype=float)
            ts.append(i * day_offset + t[:-1])
            dts.append(np.diff(t))
            dzs.append(np.diff(Z))
            if include_q:
                qs.append(np.asarray(traj.q, dtype=float)[:-1])
        if not ts:
            raise ValidationError("no trajectories given")
        return cls(
            timestamp=np.concatenate(ts),
            dt=np.concatenate(dts),
            dz=np.concatenate(dzs),
            q=np.concatenate(qs) if include_q else None,
        )


# ---- loading ------------------------------------------------------------------

def load_flow_csv(path) -> FlowSeries:
    """Parse a flow CSV with header ``timestamp,dt,dz`` or ``timestamp,dt,dz,q``.

    Rows containing non-finite values are dropped with a warning naming
    their line numbers (1-based, counting the header).  Malformed rows and
    non-increasing timestamps are hard errors.
    """
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            raw_header = next(reader)
        except StopIteration:
            raise ValidationError(f"{path}: empty file") from None
        header = tuple(col.strip().lower() for col in raw_header)
        if header not in _HEADERS:
            raise ValidationError(
                f"{path}: malformed header {','.join(raw_header)!r}; "
                "expected timestamp,dt,dz[,q]"
            )
        width = len(header)
        rows = []
        dropped = []
        for lineno, row in enumerate(reader, start=2):
            if not row or (len(row) == 1 and not row[0].strip()):
                continue
            if len(row) != width:
                raise ValidationError(
                    f"{path}: line {lineno}: expected {width} columns, got {len(row)}"
                )
            try:
                values = [float(col) for col in row]
            except ValueError:
                raise ValidationError(
                    f"{path}: line {lineno}: non-numeric value"
                ) from None
            if not all(np.isfinite(values)):
                dropped.append(lineno)
                continue
            rows.append(values)
    if dropped:
        head = ", ".join(str(x) for x in dropped[:10])
        more = "" if len(dropped) <= 10 else f" (+{len(dropped) - 10} more)"
        warnings.warn(
            f"{path}: dropped {len(dropped)} non-finite rows at lines {head}{more}",
            stacklevel=2,
        )
    if not rows:
        raise ValidationError(f"{path}: no data rows")
    data = np.asarray(rows, dtype=float)
    q = data[:, 3] if width == 4 else None
    return FlowSeries(timestamp=data[:, 0], dt=data[:, 1], dz=data[:, 2], q=q)


# ---- estimators ------------------------------------------------------------------

def estimate_sigma(series: FlowSeries) -> float:
    """Sample std of dz / sqrt(dt): flow volatility per unit time (day)."""
    if len(series) < 2:
        raise ValidationError("need at least 2 bins to estimate sigma")
    scaled = series.dz / np.sqrt(series.dt)
    return float(np.std(scaled, ddof=1))


def estimate_theta_daily(series: FlowSeries):
    """Per-day drift estimates: theta_hat_d = (sum dz) / (sum dt) over day d.

    Returns a sorted list of (day, theta_hat).
    """
    out = []
    for day, idx in series.day_partition():
        total_dt = float(np.sum(series.dt[idx]))
        out.append((day, float(np.sum(series.dz[idx]) / total_dt)))
    return out


def b_proxy_pairs(series: FlowSeries) -> tuple[np.ndarray, np.ndarray]:
    """The (flow acceleration, hedge rate) pairs behind the b proxy.

    The acceleration at an interior stamp is the central second difference
    of cumulative flow per unit time, (dz_j/dt_j - dz_{j-1}/dt_{j-1}) over
    the mean bin width.  It is paired with the hedge rate in force when the
    stencil opens (q_{j-1}): that rate influences both increments of the
    stencil, whereas pairing with the contemporaneous rate picks up the
    desk's mechanical response to the previous increment's noise and biases
    the proxy upward.  Pairs straddling a gap in the series (e.g. between
    concatenated days) are excluded.
    """
    if series.q is None:
        raise ValidationError("flow series has no q column (hedge rates)")
    if len(series) < 3:
        raise ValidationError("need at least 3 bins for the b proxy")
    ts, dt, dz, q = series.timestamp, series.dt, series.dz, series.q
    rate = dz / dt
    step = 0.5 * (dt[1:] + dt[:-1])
    v = (rate[1:] - rate[:-1]) / step
    q_open = q[:-1]
    gap = ts[1:] - (ts[:-1] + dt[:-1])
    keep = np.abs(gap) <= 1e-9 + 0.25 * step
    return v[keep], q_open[keep]


def estimate_b_proxy(series: FlowSeries) -> float:
    """Pearson correlation of flow acceleration with the open hedge rate.

    Reported raw (no rescaling to the units of b); the sign and statistical
    significance are the informative outputs.
    """
    v, q = b_proxy_pairs(series)
    if v.size < 2:
        raise ValidationError("not enough contiguous bins for the b proxy")
    if np.std(q) == 0.0:
        raise ValidationError("degenerate hedge series: q has zero variance")
    if np.std(v) == 0.0:
        raise ValidationError("degenerate flow series: accelerations have zero variance")
    return float(np.corrcoef(v, q)[0, 1])


# ---- artifacts ------------------------------------------------------------------

def write_calibration_json(path, sigma_hat, theta_daily, b_proxy=None) -> None:
    payload = {
        "sigma_hat": sigma_hat,
        "theta_daily": [{"day": d, "theta_hat": v} for d, v in theta_daily],
        "b_proxy": b_proxy,
    }
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_theta_cdf_csv(theta_daily, path) -> None:
    """Empirical CDF of the per-day drift estimates."""
    values = np.sort(np.asarray([v for _, v in theta_daily], dtype=float))
    if values.size == 0:
        raise ValidationError("no daily estimates to export")
    cdf = np.arange(1, values.size + 1) / values.size
    np.savetxt(
        path, np.column_stack([values, cdf]), delimiter=",",
        header="theta_hat,cdf", comments="", fmt="%.17g",
    )
