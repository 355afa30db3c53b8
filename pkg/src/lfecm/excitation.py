"""Frequency-regulation excitation and synthetic BMS data generation.

Builds the battery power profile from a grid-frequency record through a
droop characteristic, converts power to cell current against the
simulated terminal voltage, and produces noisy current/voltage channels
the way a BMS would report them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .ladder import CpeTriple, DecompositionConfig, LadderNetwork, decompose
from .model import (
    CellConfig,
    DiscreteModel,
    SimulationDivergedError,
    TimeSeries,
    build_discrete,
    ocv_segment,
    simulate,
)

NOMINAL_FREQUENCY_HZ = 50.0
SATURATION_BAND_HZ = 0.2
DEFAULT_FREQ_COMPONENTS = ((3.0, 0.008), (60.0, 0.025), (600.0, 0.015))

__all__ = [
    "NOMINAL_FREQUENCY_HZ",
    "SATURATION_BAND_HZ",
    "DEFAULT_FREQ_COMPONENTS",
    "FrequencySeries",
    "FcrConfig",
    "NoiseConfig",
    "GeneratedDataset",
    "fcr_power",
    "synth_frequency",
    "read_frequency",
    "write_frequency",
    "power_to_current",
    "generate",
]


@dataclass
class FrequencySeries:
    """Uniformly sampled grid frequency record."""

    ts: float
    freq: np.ndarray
    nominal: float = NOMINAL_FREQUENCY_HZ

    def __post_init__(self):
        self.ts = float(self.ts)
        self.nominal = float(self.nominal)
        if not self.ts > 0.0:
            raise ValueError(f"ts must be positive, got {self.ts}")
        self.freq = np.asarray(self.freq, dtype=float)
        if self.freq.ndim != 1 or self.freq.size == 0:
            raise ValueError("freq must be a non-empty 1-D array")
        if np.any(np.abs(self.freq - self.nominal) > 5.0):
            raise ValueError("frequency values outside the +-5 Hz sanity band")

    def __len__(self) -> int:
        return self.freq.size

    @property
    def time(self) -> np.ndarray:
        return np.arange(self.freq.size) * self.ts


@dataclass(frozen=True)
class FcrConfig:
    """Droop characteristic: power proportional to frequency deviation.

    Saturates at +-p_max once the deviation reaches the regulation band
    edge. The default p_max = droop * 0.2 makes the map continuous.
    """

    droop: float
    p_max: float | None = None

    def __post_init__(self):
        object.__setattr__(self, "droop", float(self.droop))
        if not self.droop > 0.0:
            raise ValueError(f"droop must be positive, got {self.droop}")
        p_max = self.droop * SATURATION_BAND_HZ if self.p_max is None else float(self.p_max)
        object.__setattr__(self, "p_max", p_max)
        if self.p_max < self.droop * SATURATION_BAND_HZ:
            raise ValueError("p_max must cover the linear branch up to the band edge")


@dataclass(frozen=True)
class NoiseConfig:
    """Measurement noise levels of the two BMS channels, plus the seed."""

    sigma_v: float
    sigma_i: float
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "sigma_v", float(self.sigma_v))
        object.__setattr__(self, "sigma_i", float(self.sigma_i))
        if self.sigma_v < 0.0 or self.sigma_i < 0.0:
            raise ValueError("noise standard deviations must be >= 0")


@dataclass(frozen=True)
class GeneratedDataset:
    """Noisy channels plus the clean traces kept for verification."""

    noisy: TimeSeries
    clean: TimeSeries
    ladder: LadderNetwork
    model: DiscreteModel


def fcr_power(freq: FrequencySeries, cfg: FcrConfig) -> np.ndarray:
    """Regulation power in W; positive deviation demands positive power."""
    df = freq.freq - freq.nominal
    p = cfg.droop * df
    p = np.where(df <= -SATURATION_BAND_HZ, -cfg.p_max, p)
    p = np.where(df >= SATURATION_BAND_HZ, cfg.p_max, p)
    return p


def synth_frequency(
    duration: float,
    ts: float,
    seed: int,
    nominal: float = NOMINAL_FREQUENCY_HZ,
    components: tuple[tuple[float, float], ...] = DEFAULT_FREQ_COMPONENTS,
    clip_hz: float = SATURATION_BAND_HZ,
) -> FrequencySeries:
    """Seeded mean-reverting surrogate for a measured grid-frequency trace.

    The deviation from nominal is a sum of independent Ornstein-Uhlenbeck
    components, each given as (reversion time s, stationary std Hz). The
    defaults stack second-scale jitter, the minute-scale regulation
    response and a ten-minute dispatch wander, the timescale mix that
    measured traces show and that the slow battery dynamics need to be
    excited by; the combined spread stays near 0.03 Hz. The sum is
    hard-clipped to the regulation band.
    """
    if duration < ts:
        raise ValueError("duration must be at least one sampling interval")
    if not components:
        raise ValueError("at least one process component is required")
    n = int(round(duration / ts))
    rng = np.random.default_rng(seed)
    dev = np.zeros(n)
    for reversion_time, stationary_std in components:
        if reversion_time <= 0.0 or stationary_std < 0.0:
            raise ValueError(f"invalid component ({reversion_time}, {stationary_std})")
        rho = math.exp(-ts / reversion_time)
        x = rng.normal(0.0, stationary_std)
        innovations = rng.normal(0.0, stationary_std * math.sqrt(1.0 - rho * rho), n - 1)
        comp = np.empty(n)
        comp[0] = x
        for k in range(1, n):
            x = rho * x + innovations[k - 1]
            comp[k] = x
        dev += comp
    np.clip(dev, -clip_hz, clip_hz, out=dev)
    return FrequencySeries(ts=ts, freq=nominal + dev, nominal=nominal)


def write_frequency(path, freq: FrequencySeries) -> None:
    """Write a `t,f` CSV with 17 significant digits per value."""
    np.savetxt(
        Path(path),
        np.column_stack([freq.time, freq.freq]),
        fmt="%.17g",
        delimiter=",",
        header="t,f",
        comments="",
    )


def read_frequency(path, nominal: float = NOMINAL_FREQUENCY_HZ) -> FrequencySeries:
    """Read a `t,f` CSV, verifying uniform sampling."""
    path = Path(path)
    with path.open() as fh:
        header = fh.readline().strip()
    if [c.strip() for c in header.split(",")] != ["t", "f"]:
        raise ValueError(f"unexpected frequency header {header!r}; want t,f")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    if data.shape[0] < 2:
        raise ValueError("frequency record must contain at least two samples")
    t = data[:, 0]
    ts = (t[-1] - t[0]) / (t.size - 1)
    if ts <= 0.0 or np.max(np.abs(np.diff(t) - ts)) > 1e-9 * ts:
        raise ValueError("time column is not uniformly sampled")
    return FrequencySeries(ts=ts, freq=data[:, 1], nominal=nominal)


def power_to_current(power, model: DiscreteModel, x0, v_floor: float = 0.5) -> TimeSeries:
    """Convert a power demand to a cell current series, step by step.

    Each sample divides the requested power by the terminal voltage left
    by the previous step (the rest OCV before the first sample), then
    advances the model with the resulting current. Positive power means
    discharge. The one-step voltage lag keeps the conversion explicit.
    """
    p = np.asarray(power, dtype=float)
    if p.ndim != 1 or p.size == 0:
        raise ValueError("power must be a non-empty 1-D array")
    x = np.asarray(x0, dtype=float).copy()
    n = model.n
    if x.shape != (n + 1,):
        raise ValueError(f"x0 must have length {n + 1}, got {x.shape}")
    a_diag = np.diagonal(model.a_d).copy()
    b_i = model.b_d[:, 0]
    b_c = model.b_d[:, 1]
    c = model.c_d
    d_i, d_c = model.d_d
    N = p.size
    current = np.empty(N)
    voltage = np.empty(N)
    soc = np.empty(N)
    v_prev = float(c @ x + d_c)
    for k in range(N):
        if v_prev < v_floor:
            raise SimulationDivergedError(
                f"terminal voltage {v_prev:.4g} V fell below the {v_floor} V floor at sample {k}"
            )
        i_k = p[k] / v_prev
        v_k = float(c @ x) + d_i * i_k + d_c
        current[k] = i_k
        voltage[k] = v_k
        soc[k] = x[n]
        x = a_diag * x + b_i * i_k + b_c
        v_prev = v_k
    return TimeSeries(ts=model.ts, current=current, voltage=voltage, soc=soc)


def generate(
    p_true: CpeTriple,
    cfg: DecompositionConfig,
    cell: CellConfig,
    current: TimeSeries,
    noise: NoiseConfig,
) -> GeneratedDataset:
    """Simulate the decomposed true model and corrupt both channels.

    The voltage response to the given current is computed from the
    ladder decomposition of the true CPE, then independent zero-mean
    Gaussian noise is added to current and voltage. The channel streams
    are split deterministically from the single seed, so equal seeds
    give byte-identical datasets.
    """
    net = decompose(p_true, cfg)
    seg = ocv_segment(cell, cell.soc0)
    model = build_discrete(
        [p_true.r_sigma, net.r1, net.c1, net.a, net.b], net.n, net.r_inf, cell, seg, current.ts
    )
    x0 = np.zeros(net.n + 1)
    x0[net.n] = cell.soc0
    sim = simulate(model, x0, current)
    clean = sim.series
    stream_v, stream_i = np.random.SeedSequence(noise.seed).spawn(2)
    dv = np.random.default_rng(stream_v).normal(0.0, noise.sigma_v, len(clean))
    di = np.random.default_rng(stream_i).normal(0.0, noise.sigma_i, len(clean))
    noisy = TimeSeries(ts=clean.ts, current=clean.current + di, voltage=clean.voltage + dv)
    return GeneratedDataset(noisy=noisy, clean=clean, ladder=net, model=model)
