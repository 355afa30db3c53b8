"""Discrete state-space model of the low-frequency battery ECM.

The state vector stacks the n branch voltages of the decomposed CPE and
the state of charge; the input is [i_k, 1] (cell current plus a constant
channel that carries the OCV intercept); the output is the terminal
voltage. Positive current means discharge. The continuous model is
discretized with forward Euler, which keeps the system matrix diagonal
and makes stability a per-branch corner-frequency condition.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from pathlib import Path
from typing import NamedTuple

import numpy as np
from scipy.signal import lfilter

SECONDS_PER_HOUR = 3600.0

__all__ = [
    "SimulationDivergedError",
    "OcvSegment",
    "CellConfig",
    "ContinuousModel",
    "DiscreteModel",
    "StabilityReport",
    "TimeSeries",
    "SimulationResult",
    "ocv_segment",
    "ocv_eval",
    "build_continuous",
    "discretize",
    "build_discrete",
    "stability_margin",
    "simulate",
    "write_timeseries",
    "read_timeseries",
    "default_cell",
]


class SimulationDivergedError(RuntimeError):
    """Raised when a simulated trajectory leaves the representable range."""


@dataclass(frozen=True)
class OcvSegment:
    """One linear piece of the OCV curve: E = alpha + beta * SOC."""

    alpha: float
    beta: float
    soc_lo: float
    soc_hi: float

    def __post_init__(self):
        for name in ("alpha", "beta", "soc_lo", "soc_hi"):
            object.__setattr__(self, name, float(getattr(self, name)))
        if not self.soc_lo < self.soc_hi:
            raise ValueError(f"need soc_lo < soc_hi, got [{self.soc_lo}, {self.soc_hi}]")

    def volts(self, soc: float) -> float:
        return self.alpha + self.beta * soc


@dataclass(frozen=True)
class CellConfig:
    """Static cell data: capacity, initial SOC, sampling time, OCV curve.

    c_nom is the nominal charge capacity in Ah; it is converted to
    ampere-seconds inside the model because sampling times are seconds.
    The OCV segments must tile [0, 1] without gaps or overlap.
    """

    c_nom: float
    soc0: float
    ts: float
    ocv: tuple[OcvSegment, ...]

    def __post_init__(self):
        object.__setattr__(self, "c_nom", float(self.c_nom))
        object.__setattr__(self, "soc0", float(self.soc0))
        object.__setattr__(self, "ts", float(self.ts))
        object.__setattr__(self, "ocv", tuple(self.ocv))
        if not self.c_nom > 0.0:
            raise ValueError(f"c_nom must be positive, got {self.c_nom}")
        if not 0.0 <= self.soc0 <= 1.0:
            raise ValueError(f"soc0 must lie in [0, 1], got {self.soc0}")
        if not self.ts > 0.0:
            raise ValueError(f"ts must be positive, got {self.ts}")
        if not self.ocv:
            raise ValueError("at least one OCV segment is required")
        segs = sorted(self.ocv, key=lambda s: s.soc_lo)
        if abs(segs[0].soc_lo) > 1e-12 or abs(segs[-1].soc_hi - 1.0) > 1e-12:
            raise ValueError("OCV segments must cover [0, 1]")
        for left, right in zip(segs, segs[1:]):
            if abs(left.soc_hi - right.soc_lo) > 1e-12:
                raise ValueError("OCV segments must be contiguous and non-overlapping")
        object.__setattr__(self, "ocv", tuple(segs))


def ocv_segment(cell: CellConfig, soc: float) -> OcvSegment:
    """Segment containing soc; interior boundaries belong to the left piece."""
    if not 0.0 <= soc <= 1.0:
        raise ValueError(f"soc must lie in [0, 1], got {soc}")
    his = [seg.soc_hi for seg in cell.ocv]
    idx = int(np.searchsorted(his, soc, side="left"))
    idx = min(idx, len(cell.ocv) - 1)
    return cell.ocv[idx]


def ocv_eval(cell: CellConfig, soc: float) -> float:
    """Piecewise-linear open-circuit voltage at the given SOC."""
    return ocv_segment(cell, soc).volts(soc)


@dataclass(frozen=True)
class ContinuousModel:
    """Continuous-time state-space matrices (A, B, C, D)."""

    a_c: np.ndarray
    b_c: np.ndarray
    c_c: np.ndarray
    d_c: np.ndarray


@dataclass(frozen=True)
class DiscreteModel:
    """Forward-Euler discretization; A_d stays diagonal plus an SOC integrator."""

    a_d: np.ndarray
    b_d: np.ndarray
    c_d: np.ndarray
    d_d: np.ndarray
    ts: float
    n: int

    def __post_init__(self):
        object.__setattr__(self, "ts", float(self.ts))
        object.__setattr__(self, "n", int(self.n))
        if self.ts < 0.0:
            raise ValueError(f"ts must be >= 0, got {self.ts}")
        dim = self.n + 1
        if self.a_d.shape != (dim, dim) or self.b_d.shape != (dim, 2):
            raise ValueError("matrix dimensions inconsistent with n")
        if self.c_d.shape != (dim,) or self.d_d.shape != (2,):
            raise ValueError("output dimensions inconsistent with n")
        off_diag = self.a_d - np.diag(np.diagonal(self.a_d))
        if np.count_nonzero(off_diag):
            raise ValueError("a_d must be diagonal")
        if self.a_d[-1, -1] != 1.0:
            raise ValueError("SOC state must be a pure integrator (diagonal entry 1)")

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "ts": self.ts,
            "a_diag": np.diagonal(self.a_d).tolist(),
            "b_current": self.b_d[:, 0].tolist(),
            "c": self.c_d.tolist(),
            "d": self.d_d.tolist(),
        }


class StabilityReport(NamedTuple):
    spectral_radius: float
    is_stable: bool
    soc_eigenvalue: float


@dataclass
class TimeSeries:
    """Uniformly sampled records; positive current is discharge."""

    ts: float
    current: np.ndarray
    voltage: np.ndarray | None = None
    soc: np.ndarray | None = None

    def __post_init__(self):
        self.ts = float(self.ts)
        if not self.ts > 0.0:
            raise ValueError(f"ts must be positive, got {self.ts}")
        self.current = np.asarray(self.current, dtype=float)
        if self.current.ndim != 1 or self.current.size == 0:
            raise ValueError("current must be a non-empty 1-D array")
        for name in ("voltage", "soc"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.asarray(arr, dtype=float)
                if arr.shape != self.current.shape:
                    raise ValueError(f"{name} length does not match current")
                setattr(self, name, arr)

    def __len__(self) -> int:
        return self.current.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.current.size) * self.ts


@dataclass(frozen=True)
class SimulationResult:
    series: TimeSeries
    x_final: np.ndarray
    stable: bool


def build_continuous(theta, n: int, r_inf: float, cell: CellConfig, seg: OcvSegment) -> ContinuousModel:
    """Continuous matrices from the full parameter vector [r_sigma, r1, c1, a, b].

    Branch k obeys dv_k/dt = -v_k/(R_k C_k) + i/C_k and the SOC row is
    the Coulomb counter dSOC/dt = -i/(3600 c_nom); the output row sums
    the branch drops, the OCV segment and the ohmic feedthrough.
    """
    r_sigma, r1, c1, a, b = (float(v) for v in theta)
    if not (0.0 < a < 1.0 and 0.0 < b < 1.0):
        raise ValueError(f"ratios must lie in (0, 1), got a={a}, b={b}")
    k = np.arange(n)
    a_c = np.zeros((n + 1, n + 1))
    a_c[:n, :n] = np.diag(-1.0 / (r1 * c1 * (a * b) ** k))
    b_c = np.zeros((n + 1, 2))
    b_c[:n, 0] = 1.0 / (c1 * b**k)
    b_c[n, 0] = -1.0 / (cell.c_nom * SECONDS_PER_HOUR)
    c_c = np.concatenate([-np.ones(n), [seg.beta]])
    d_c = np.array([-r_sigma - r_inf, seg.alpha])
    for m in (a_c, b_c, c_c, d_c):
        if not np.isfinite(m).all():
            raise ValueError("continuous model has non-finite entries")
    return ContinuousModel(a_c, b_c, c_c, d_c)


def discretize(cont: ContinuousModel, ts: float) -> DiscreteModel:
    """Forward-Euler step: A_d = I + ts*A_c, B_d = ts*B_c, C and D unchanged."""
    if ts < 0.0:
        raise ValueError(f"ts must be >= 0, got {ts}")
    dim = cont.a_c.shape[0]
    return DiscreteModel(
        a_d=np.eye(dim) + ts * cont.a_c,
        b_d=ts * cont.b_c,
        c_d=cont.c_c.copy(),
        d_d=cont.d_c.copy(),
        ts=ts,
        n=dim - 1,
    )


def build_discrete(theta, n: int, r_inf: float, cell: CellConfig, seg: OcvSegment, ts: float) -> DiscreteModel:
    return discretize(build_continuous(theta, n, r_inf, cell, seg), ts)


def stability_margin(model: DiscreteModel) -> StabilityReport:
    """Branch eigenvalues read off the diagonal; the SOC integrator is exempt.

    A branch is stable iff |1 - ts/(R_k C_k)| < 1, i.e. its corner
    frequency stays below f_s/pi.
    """
    lam = np.diagonal(model.a_d)[: model.n]
    rho = float(np.max(np.abs(lam)))
    return StabilityReport(rho, bool(rho < 1.0), float(model.a_d[-1, -1]))


def simulate(model: DiscreteModel, x0, current) -> SimulationResult:
    """Run x_{k+1} = A_d x_k + B_d u_k, y_k = C_d x_k + D_d u_k.

    current may be a TimeSeries (its ts must match the model) or a plain
    array. Exploits the diagonal structure: each branch is a first-order
    recursion evaluated with a linear filter, the SOC row is a cumulative
    sum. Returns the output voltage, the SOC trace aligned with the
    samples, and the state after the last update. An unstable model
    produces a warning, not a failure; non-finite output raises
    SimulationDivergedError naming the first bad sample.
    """
    if isinstance(current, TimeSeries):
        if not math.isclose(current.ts, model.ts, rel_tol=1e-9):
            raise ValueError(f"series ts {current.ts} does not match model ts {model.ts}")
        i = current.current
    else:
        i = np.asarray(current, dtype=float)
    if i.ndim != 1 or i.size == 0:
        raise ValueError("current must be a non-empty 1-D array")
    x0 = np.asarray(x0, dtype=float)
    n = model.n
    if x0.shape != (n + 1,):
        raise ValueError(f"x0 must have length {n + 1}, got {x0.shape}")

    report = stability_margin(model)
    if not report.is_stable:
        warnings.warn(
            f"discrete model is not strictly stable (spectral radius "
            f"{report.spectral_radius:.6g}); response may not decay",
            RuntimeWarning,
            stacklevel=2,
        )

    N = i.size
    lam = np.diagonal(model.a_d)[:n]
    gain_i = model.b_d[:n, 0]
    gain_c = model.b_d[:n, 1]

    y = model.d_d[1] + model.d_d[0] * i

    soc = np.empty(N)
    soc[0] = x0[n]
    steps = model.b_d[n, 0] * i + model.b_d[n, 1]
    if N > 1:
        soc[1:] = x0[n] + np.cumsum(steps[:-1])
    y += model.c_d[n] * soc
    soc_final = x0[n] + np.cumsum(steps)[-1]

    x_final = np.empty(n + 1)
    x_final[n] = soc_final
    with np.errstate(over="ignore", invalid="ignore"):
        for k in range(n):
            forcing = gain_i[k] * i
            if gain_c[k] != 0.0:
                forcing = forcing + gain_c[k]
            zk = lfilter([1.0], [1.0, -lam[k]], forcing)
            vk = np.empty(N)
            vk[0] = x0[k]
            vk[1:] = zk[:-1]
            if x0[k] != 0.0:
                vk[1:] += x0[k] * lam[k] ** np.arange(1, N)
            y += model.c_d[k] * vk
            x_final[k] = lam[k] * vk[-1] + forcing[-1]

    if not np.isfinite(y).all():
        idx = int(np.argmax(~np.isfinite(y)))
        raise SimulationDivergedError(f"non-finite output voltage at sample {idx}")

    series = TimeSeries(ts=model.ts, current=i, voltage=y, soc=soc)
    return SimulationResult(series=series, x_final=x_final, stable=report.is_stable)


def write_timeseries(path, series: TimeSeries) -> None:
    """Write `t,i,v[,soc]` CSV with 17 significant digits per value."""
    if series.voltage is None:
        raise ValueError("dataset CSV requires a voltage column")
    cols = [series.time, series.current, series.voltage]
    header = "t,i,v"
    if series.soc is not None:
        cols.append(series.soc)
        header += ",soc"
    np.savetxt(Path(path), np.column_stack(cols), fmt="%.17g", delimiter=",", header=header, comments="")


def read_timeseries(path) -> TimeSeries:
    """Read a `t,i,v[,soc]` CSV, verifying uniform sampling."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
    names = [c.strip() for c in header.split(",")]
    if names[:3] != ["t", "i", "v"] or (len(names) == 4 and names[3] != "soc") or len(names) > 4:
        raise ValueError(f"unexpected dataset header {header!r}; want t,i,v[,soc]")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2:
        raise ValueError("dataset must contain at least two samples")
    if data.shape[1] != len(names):
        raise ValueError("column count does not match header")
    t = data[:, 0]
    ts = (t[-1] - t[0]) / (t.size - 1)
    if ts <= 0.0 or np.max(np.abs(np.diff(t) - ts)) > 1e-9 * ts:
        raise ValueError("time column is not uniformly sampled")
    soc = data[:, 3] if len(names) == 4 else None
    return TimeSeries(ts=ts, current=data[:, 1], voltage=data[:, 2], soc=soc)


def default_cell(soc0: float = 0.55, ts: float = 1.0, c_nom: float = 60.0) -> CellConfig:
    """Reference NMC-style 60 Ah cell with a 10-segment OCV curve.

    The segment covering SOC in [0.5, 0.6] has intercept 3.18 V and
    slope 1 V per unit SOC, the operating window of the validation
    scenarios; the remaining knots sketch a typical NMC curve.
    """
    knots = np.array([3.00, 3.30, 3.45, 3.55, 3.62, 3.68, 3.78, 3.87, 3.95, 4.05, 4.20])
    edges = np.arange(11) / 10.0
    segments = []
    for k in range(10):
        beta = (knots[k + 1] - knots[k]) / (edges[k + 1] - edges[k])
        alpha = knots[k] - beta * edges[k]
        segments.append(OcvSegment(alpha=alpha, beta=beta, soc_lo=edges[k], soc_hi=edges[k + 1]))
    return CellConfig(c_nom=c_nom, soc0=soc0, ts=ts, ocv=tuple(segments))
