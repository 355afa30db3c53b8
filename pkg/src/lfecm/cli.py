"""Command-line harness: decomposition inspection, data generation,
estimation runs, Monte-Carlo campaigns and residual checks.

Every command is deterministic under a fixed --seed and writes a
self-contained bundle (config.json, results.json, CSVs) into --out-dir.
Usage and I/O failures exit nonzero; statistical outcomes such as
estimator non-convergence are reported in the result files with exit
code zero so campaigns keep running.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
import time
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, replace
from pathlib import Path

import numpy as np
from scipy import stats

from .estimation import (
    EstimatorConfig,
    PhysicalBounds,
    derive_bounds,
    estimate,
    objective,
)
from .excitation import (
    FcrConfig,
    FrequencySeries,
    NoiseConfig,
    fcr_power,
    generate,
    power_to_current,
    read_frequency,
    synth_frequency,
)
from .ladder import (
    CpeTriple,
    DecompositionConfig,
    LadderNetwork,
    decompose,
    omega_avg,
    ripple_coefficient,
    z_ladder,
)
from .model import (
    CellConfig,
    TimeSeries,
    build_discrete,
    default_cell,
    ocv_segment,
    read_timeseries,
    stability_margin,
    write_timeseries,
)

MAX_WORKERS_ENV = "LFECM_MAX_WORKERS"

# Bound cases of the validation study: (phi_min, phi_max, q_min, q_max).
CASE_BOUNDS = {
    1: (0.30, 0.70, 1e2, 1e6),
    2: (0.40, 0.60, 1e3, 1e5),
    3: (0.45, 0.55, 1e4, 3e4),
}

R_SIGMA_BOUNDS = (1e-6, 1.0)

__all__ = [
    "CASE_BOUNDS",
    "ErrorStats",
    "ResidualReport",
    "MonteCarloSpec",
    "case_bounds",
    "residual_report",
    "run_montecarlo",
    "main",
]


def case_bounds(case: int) -> PhysicalBounds:
    """PhysicalBounds for one of the three tabulated validation cases."""
    if case not in CASE_BOUNDS:
        raise ValueError(f"unknown bounds case {case}; choose from {sorted(CASE_BOUNDS)}")
    phi_min, phi_max, q_min, q_max = CASE_BOUNDS[case]
    return PhysicalBounds(R_SIGMA_BOUNDS[0], R_SIGMA_BOUNDS[1], q_min, q_max, phi_min, phi_max)


@dataclass(frozen=True)
class ErrorStats:
    """Per-parameter accuracy summary of a replicate campaign."""

    parameter: str
    true_value: float
    mean_estimate: float
    std_estimate: float
    mean_rel_err_pct: float
    min_rel_err_pct: float
    max_rel_err_pct: float


@dataclass
class ResidualReport:
    """Moments, histogram and normality check of a residual series."""

    n: int
    mean: float
    std: float
    std_over_sigma_v: float | None
    bin_edges: list[float]
    bin_counts: list[int]
    normality_statistic: float
    normality_pvalue: float


@dataclass
class MonteCarloSpec:
    """Configuration of a replicate campaign.

    One clean dataset is generated once; every replicate adds fresh
    measurement noise and draws a fresh random initial CPE guess before
    estimating. Replicate seeds derive from (master_seed, index) so the
    outcome is independent of scheduling order.
    """

    n_sim: int
    bounds: PhysicalBounds
    truth: CpeTriple = CpeTriple(0.0014, 22281.0, 0.52)
    sigma_v: float = 5e-4
    sigma_i: float = 0.05 / 3.0
    master_seed: int = 20260201
    estimator: EstimatorConfig = EstimatorConfig()
    droop: float = 400.0
    p_max: float | None = None
    duration: float = 10800.0
    ts: float = 1.0
    soc0: float = 0.55
    c_nom: float = 60.0
    n_branches_true: int = 100
    workers: int | None = None

    def __post_init__(self):
        if self.n_sim < 1:
            raise ValueError("n_sim must be >= 1")


def _resolve_workers(requested: int | None, n_tasks: int) -> int:
    cap = os.environ.get(MAX_WORKERS_ENV)
    workers = requested if requested is not None else (os.cpu_count() or 1)
    if cap is not None:
        workers = min(workers, max(1, int(cap)))
    return max(1, min(workers, n_tasks))


def _clean_dataset(spec: MonteCarloSpec):
    """Excitation current and clean voltage shared by all replicates."""
    cell = default_cell(soc0=spec.soc0, ts=spec.ts, c_nom=spec.c_nom)
    f_s = 1.0 / spec.ts
    freq_seed = int(np.random.SeedSequence(spec.master_seed, spawn_key=(0, 0)).generate_state(1)[0])
    freq = synth_frequency(spec.duration, spec.ts, seed=freq_seed)
    power = fcr_power(freq, FcrConfig(droop=spec.droop, p_max=spec.p_max))
    cfg = DecompositionConfig(n_branches=spec.n_branches_true, f_max=f_s / math.pi)
    net = decompose(spec.truth, cfg)
    seg = ocv_segment(cell, cell.soc0)
    model = build_discrete(
        [spec.truth.r_sigma, net.r1, net.c1, net.a, net.b], net.n, net.r_inf, cell, seg, spec.ts
    )
    x0 = np.zeros(net.n + 1)
    x0[net.n] = cell.soc0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        drive = power_to_current(power, model, x0)
        ds = generate(spec.truth, cfg, cell, drive, NoiseConfig(0.0, 0.0, seed=0))
    return cell, ds.clean


_MC_STATE: dict = {}


def _mc_init(spec: MonteCarloSpec, clean_current, clean_voltage, cell: CellConfig):
    _MC_STATE["spec"] = spec
    _MC_STATE["clean_i"] = clean_current
    _MC_STATE["clean_v"] = clean_voltage
    _MC_STATE["cell"] = cell


def _mc_replicate(index: int) -> dict:
    spec: MonteCarloSpec = _MC_STATE["spec"]
    cell: CellConfig = _MC_STATE["cell"]
    t0 = time.perf_counter()
    try:
        ss = np.random.SeedSequence(spec.master_seed, spawn_key=(1, index))
        noise_seed, init_seed = (int(s) for s in ss.generate_state(2))
        stream_v, stream_i = np.random.SeedSequence(noise_seed).spawn(2)
        n = _MC_STATE["clean_i"].size
        noisy = TimeSeries(
            ts=spec.ts,
            current=_MC_STATE["clean_i"] + np.random.default_rng(stream_i).normal(0.0, spec.sigma_i, n),
            voltage=_MC_STATE["clean_v"] + np.random.default_rng(stream_v).normal(0.0, spec.sigma_v, n),
        )
        cfg = replace(spec.estimator, seed=init_seed)
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RuntimeWarning)
            report = estimate(noisy, spec.bounds, cfg, cell)
        return {
            "index": index,
            "ok": True,
            "p_hat": [report.p_hat.r_sigma, report.p_hat.q_coef, report.p_hat.phi],
            "n_used": report.n_used,
            "converged": report.converged,
            "sse": report.sse,
            "wall_s": time.perf_counter() - t0,
        }
    except Exception as exc:  # replicate failures are results, not crashes
        return {
            "index": index,
            "ok": False,
            "error": f"{type(exc).__name__}: {exc}",
            "wall_s": time.perf_counter() - t0,
        }


def run_montecarlo(spec: MonteCarloSpec) -> dict:
    """Run the campaign and aggregate per-parameter error statistics."""
    cell, clean = _clean_dataset(spec)
    workers = _resolve_workers(spec.workers, spec.n_sim)
    records: list[dict | None] = [None] * spec.n_sim
    if workers == 1:
        _mc_init(spec, clean.current, clean.voltage, cell)
        for i in range(spec.n_sim):
            records[i] = _mc_replicate(i)
    else:
        with ProcessPoolExecutor(
            max_workers=workers,
            initializer=_mc_init,
            initargs=(spec, clean.current, clean.voltage, cell),
        ) as pool:
            for rec in pool.map(_mc_replicate, range(spec.n_sim)):
                records[rec["index"]] = rec

    successes = [r for r in records if r["ok"]]
    failures = [r for r in records if not r["ok"]]
    stats_out = []
    if successes:
        est = np.array([r["p_hat"] for r in successes])
        truth = np.array([spec.truth.r_sigma, spec.truth.q_coef, spec.truth.phi])
        rel = np.abs(est / truth - 1.0) * 100.0
        for j, name in enumerate(("r_sigma", "q_coef", "phi")):
            stats_out.append(
                ErrorStats(
                    parameter=name,
                    true_value=float(truth[j]),
                    mean_estimate=float(est[:, j].mean()),
                    std_estimate=float(est[:, j].std(ddof=1)) if len(successes) > 1 else 0.0,
                    mean_rel_err_pct=float(rel[:, j].mean()),
                    min_rel_err_pct=float(rel[:, j].min()),
                    max_rel_err_pct=float(rel[:, j].max()),
                )
            )
    return {
        "n_sim": spec.n_sim,
        "n_success": len(successes),
        "n_failed": len(failures),
        "replicates": records,
        "error_stats": [asdict(s) for s in stats_out],
        "workers": workers,
    }


def residual_report(residuals, sigma_v: float | None = None) -> ResidualReport:
    """Moments, Freedman-Diaconis histogram and normality test."""
    r = np.asarray(residuals, dtype=float)
    iqr = float(np.subtract(*np.percentile(r, [75, 25])))
    width = 2.0 * iqr / r.size ** (1.0 / 3.0)
    span = float(r.max() - r.min())
    bins = max(1, int(math.ceil(span / width))) if width > 0 and span > 0 else 1
    counts, edges = np.histogram(r, bins=bins)
    stat, pval = stats.normaltest(r)
    return ResidualReport(
        n=int(r.size),
        mean=float(r.mean()),
        std=float(r.std()),
        std_over_sigma_v=float(r.std() / sigma_v) if sigma_v else None,
        bin_edges=[float(e) for e in edges],
        bin_counts=[int(c) for c in counts],
        normality_statistic=float(stat),
        normality_pvalue=float(pval),
    )


def _write_json(path: Path, payload: dict) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _out_dir(args) -> Path:
    out = Path(args.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _dump_config(args, out: Path) -> None:
    payload = {k: v for k, v in vars(args).items() if k != "func"}
    _write_json(out / "config.json", {"command": args.command, "args": payload})


def _parse_sweep(text: str) -> tuple[float, float, int]:
    parts = text.split(":")
    if len(parts) != 3:
        raise argparse.ArgumentTypeError("sweep must be FMIN:FMAX:NPOINTS")
    f_lo, f_hi, npts = float(parts[0]), float(parts[1]), int(parts[2])
    if not 0 < f_lo < f_hi or npts < 2:
        raise argparse.ArgumentTypeError("sweep needs 0 < FMIN < FMAX and NPOINTS >= 2")
    return f_lo, f_hi, npts


def _branch_table(net: LadderNetwork) -> list[dict]:
    rows = []
    for k in range(net.n):
        rows.append(
            {
                "k": k + 1,
                "r": float(net.branch_resistances[k]),
                "c": float(net.branch_capacitances[k]),
                "tau": float(net.time_constants[k]),
                "f": float(net.corner_frequencies[k]),
            }
        )
    return rows


def cmd_decompose(args) -> int:
    out = _out_dir(args)
    _dump_config(args, out)
    p = CpeTriple(args.r_sigma, args.q_coef, args.phi)
    cfg = DecompositionConfig(n_branches=args.n, f_max=args.f_max, delta_phi=args.delta_phi)
    net = decompose(p, cfg)
    w_avg = omega_avg(net.r1, net.c1, net.a, net.b, net.q_const, net.n)
    payload = net.to_dict()
    payload.update(
        {
            "r_sigma": p.r_sigma,
            "q_coef": p.q_coef,
            "phi": p.phi,
            "delta_phi": cfg.delta_phi,
            "omega_avg": w_avg,
            "f_min": net.f_min,
            "f_max": net.f_max,
            "branches": _branch_table(net),
        }
    )
    _write_json(out / "network.json", payload)
    if args.sweep is not None:
        f_lo, f_hi, npts = args.sweep
        f = np.geomspace(f_lo, f_hi, npts)
        z = z_ladder(net, 2.0 * math.pi * f)
        table = np.column_stack([f, z.real, z.imag, np.abs(z), np.angle(z)])
        np.savetxt(out / "sweep.csv", table, fmt="%.17g", delimiter=",",
                   header="f,re,im,mag,phase", comments="")
        print(f"wrote sweep.csv with {npts} rows")
    print(f"decomposed n={net.n} branches, q={net.q_const:.6g}, "
          f"band [{net.f_min:.4g}, {net.f_max:.4g}] Hz -> {out / 'network.json'}")
    return 0


def _load_excitation(args) -> FrequencySeries:
    if args.freq_csv is not None:
        return read_frequency(args.freq_csv)
    return synth_frequency(args.duration, args.ts, seed=args.seed)


def _drive_from_frequency(args, freq: FrequencySeries, p: CpeTriple, cell: CellConfig):
    """Power profile, decomposed truth model and current drive."""
    f_s = 1.0 / freq.ts
    f_max = args.f_max if args.f_max is not None else f_s / math.pi
    cfg = DecompositionConfig(n_branches=args.n, f_max=f_max, delta_phi=args.delta_phi)
    power = fcr_power(freq, FcrConfig(droop=args.droop, p_max=args.p_max))
    net = decompose(p, cfg)
    seg = ocv_segment(cell, cell.soc0)
    model = build_discrete([p.r_sigma, net.r1, net.c1, net.a, net.b], net.n, net.r_inf, cell, seg, freq.ts)
    x0 = np.zeros(net.n + 1)
    x0[net.n] = cell.soc0
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        drive = power_to_current(power, model, x0)
    return cfg, power, drive


def cmd_generate(args) -> int:
    out = _out_dir(args)
    _dump_config(args, out)
    try:
        freq = _load_excitation(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    p = CpeTriple(args.r_sigma, args.q_coef, args.phi)
    cell = default_cell(soc0=args.soc0, ts=freq.ts, c_nom=args.c_nom)
    cfg, power, drive = _drive_from_frequency(args, freq, p, cell)
    noise = NoiseConfig(args.sigma_v, args.sigma_i, seed=args.seed)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        ds = generate(p, cfg, cell, drive, noise)
    write_timeseries(out / "dataset.csv", ds.noisy)
    write_timeseries(out / "dataset_clean.csv", ds.clean)
    seg = ocv_segment(cell, cell.soc0)
    sidecar = {
        "format": "lfecm-dataset",
        "clean": noise.sigma_v == 0.0 and noise.sigma_i == 0.0,
        "n_samples": len(ds.noisy),
        "ts": ds.noisy.ts,
        "truth": {"r_sigma": p.r_sigma, "q_coef": p.q_coef, "phi": p.phi},
        "decomposition": {
            "n": cfg.n_branches,
            "f_max": cfg.f_max,
            "delta_phi": cfg.delta_phi,
            "q": ripple_coefficient(cfg.delta_phi),
        },
        "cell": {"c_nom": cell.c_nom, "soc0": cell.soc0, "ts": cell.ts},
        "noise": {"sigma_v": noise.sigma_v, "sigma_i": noise.sigma_i, "seed": noise.seed},
        "excitation": {
            "source": "csv" if args.freq_csv else "synthetic",
            "droop": args.droop,
            "p_max": args.p_max if args.p_max is not None else args.droop * 0.2,
            "seed": args.seed,
        },
        "model": {
            "n": ds.model.n,
            "ts": ds.model.ts,
            "theta": {
                "r_sigma": p.r_sigma,
                "r1": ds.ladder.r1,
                "c1": ds.ladder.c1,
                "a": ds.ladder.a,
                "b": ds.ladder.b,
            },
            "ocv_segment": {"alpha": seg.alpha, "beta": seg.beta,
                            "soc_lo": seg.soc_lo, "soc_hi": seg.soc_hi},
            "spectral_radius": stability_margin(ds.model).spectral_radius,
        },
    }
    _write_json(out / "dataset.json", sidecar)
    soc = ds.clean.soc
    print(
        f"generated N={len(ds.noisy)} samples at ts={ds.noisy.ts:g} s; "
        f"SOC range [{soc.min():.4f}, {soc.max():.4f}]; "
        f"noise sigma_v={noise.sigma_v:g} V sigma_i={noise.sigma_i:g} A"
    )
    return 0


def _bounds_from_args(args) -> PhysicalBounds:
    if args.case is not None:
        return case_bounds(args.case)
    needed = (args.phi_min, args.phi_max, args.q_min, args.q_max)
    if any(v is None for v in needed):
        raise ValueError("either --case or all of --phi-min/--phi-max/--q-min/--q-max are required")
    return PhysicalBounds(
        args.r_sigma_min, args.r_sigma_max, args.q_min, args.q_max,
        args.phi_min, args.phi_max, args.f_max_lo, args.f_max_hi,
    )


def cmd_estimate(args) -> int:
    out = _out_dir(args)
    _dump_config(args, out)
    try:
        data = read_timeseries(args.data)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    sidecar = None
    sidecar_path = Path(args.sidecar) if args.sidecar else Path(args.data).with_suffix(".json")
    if sidecar_path.exists():
        with sidecar_path.open() as fh:
            sidecar = json.load(fh)
    try:
        pb = _bounds_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    soc0 = sidecar["cell"]["soc0"] if sidecar else args.soc0
    c_nom = sidecar["cell"]["c_nom"] if sidecar else args.c_nom
    cell = default_cell(soc0=soc0, ts=data.ts, c_nom=c_nom)
    cfg = EstimatorConfig(epsilon=args.epsilon, n_rc_max=args.n_rc_max, seed=args.seed)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        report = estimate(data, pb, cfg, cell)
    wall = time.perf_counter() - t0

    r, _ = objective(report.theta_hat, report.n_used, cfg.q, data, cell)
    sigma_v = sidecar["noise"]["sigma_v"] if sidecar else None
    rep = residual_report(r, sigma_v or None)
    v_model = data.voltage - r
    np.savetxt(
        out / "reconstructed.csv",
        np.column_stack([data.time, data.voltage, v_model, r]),
        fmt="%.17g",
        delimiter=",",
        header="t,v_meas,v_model,residual",
        comments="",
    )
    payload = report.to_dict()
    payload["wall_s"] = wall
    _write_json(out / "fit_report.json", payload)
    _write_json(out / "residual_report.json", asdict(rep))

    f_s = 1.0 / data.ts
    f_lo = pb.f_max_lo if pb.f_max_lo is not None else f_s / len(data)
    f_hi = pb.f_max_hi if pb.f_max_hi is not None else (f_s / math.pi) * (1.0 - 1e-9)
    lb, ub = derive_bounds(replace(pb, f_max_lo=f_lo, f_max_hi=f_hi), report.n_used, cfg.q)
    _write_json(out / "bounds.json", {
        "physical": asdict(pb),
        "n": report.n_used,
        "theta_min": {"r_sigma": lb[0], "r1": lb[1], "a": lb[2], "f_max": lb[3]},
        "theta_max": {"r_sigma": ub[0], "r1": ub[1], "a": ub[2], "f_max": ub[3]},
    })

    print(f"n_used={report.n_used} converged={report.converged} sse={report.sse:.6e} ({wall:.1f} s)")
    if sidecar and "truth" in sidecar:
        t = sidecar["truth"]
        rows = [
            ("r_sigma", t["r_sigma"], report.p_hat.r_sigma),
            ("q_coef", t["q_coef"], report.p_hat.q_coef),
            ("phi", t["phi"], report.p_hat.phi),
        ]
        print(f"{'parameter':<10}{'true':>14}{'estimate':>14}{'err %':>10}")
        for name, tv, ev in rows:
            print(f"{name:<10}{tv:>14.6g}{ev:>14.6g}{abs(ev / tv - 1) * 100:>10.4f}")
    else:
        print(
            f"p_hat: r_sigma={report.p_hat.r_sigma:.6g} "
            f"q_coef={report.p_hat.q_coef:.6g} phi={report.p_hat.phi:.6g}"
        )
    print(f"residuals: mean={rep.mean:.3e} V std={rep.std:.4e} V"
          + (f" (std/sigma_v={rep.std_over_sigma_v:.3f})" if rep.std_over_sigma_v else ""))
    _write_json(out / "results.json", {
        "n_used": report.n_used,
        "converged": report.converged,
        "sse": report.sse,
        "p_hat": payload["p_hat"],
        "residuals": {"mean": rep.mean, "std": rep.std},
    })
    return 0


def cmd_montecarlo(args) -> int:
    out = _out_dir(args)
    _dump_config(args, out)
    try:
        pb = _bounds_from_args(args)
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    spec = MonteCarloSpec(
        n_sim=args.n_sim,
        bounds=pb,
        truth=CpeTriple(args.r_sigma, args.q_coef, args.phi),
        sigma_v=args.sigma_v,
        sigma_i=args.sigma_i,
        master_seed=args.seed,
        estimator=EstimatorConfig(epsilon=args.epsilon, n_rc_max=args.n_rc_max),
        droop=args.droop,
        p_max=args.p_max,
        duration=args.duration,
        ts=args.ts,
        soc0=args.soc0,
        c_nom=args.c_nom,
        workers=args.workers,
    )
    t0 = time.perf_counter()
    result = run_montecarlo(spec)
    result["wall_s"] = time.perf_counter() - t0
    _write_json(out / "results.json", result)
    if result["error_stats"]:
        rows = [
            [
                s["parameter"],
                f"{s['true_value']:.6g}",
                f"{s['mean_estimate']:.6g}",
                f"{s['std_estimate']:.4g}",
                f"{s['mean_rel_err_pct']:.5f}",
                f"{s['min_rel_err_pct']:.5f}",
                f"{s['max_rel_err_pct']:.5f}",
            ]
            for s in result["error_stats"]
        ]
        header = ["parameter", "true", "mean", "std", "mean_err_pct", "min_err_pct", "max_err_pct"]
        with (out / "error_stats.csv").open("w") as fh:
            fh.write(",".join(header) + "\n")
            for row in rows:
                fh.write(",".join(row) + "\n")
        print(f"{'parameter':<10}{'true':>12}{'mean':>12}{'mu_err%':>10}{'min%':>10}{'max%':>10}")
        for s in result["error_stats"]:
            print(
                f"{s['parameter']:<10}{s['true_value']:>12.6g}{s['mean_estimate']:>12.6g}"
                f"{s['mean_rel_err_pct']:>10.4f}{s['min_rel_err_pct']:>10.4f}{s['max_rel_err_pct']:>10.4f}"
            )
    print(
        f"{result['n_success']}/{result['n_sim']} replicates succeeded "
        f"in {result['wall_s']:.0f} s with {result['workers']} workers"
    )
    if result["n_failed"] > 0.10 * result["n_sim"]:
        print("error: more than 10% of replicates failed", file=sys.stderr)
        return 1
    return 0


def cmd_fcr(args) -> int:
    out = _out_dir(args)
    _dump_config(args, out)
    try:
        freq = _load_excitation(args)
    except (OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    p = CpeTriple(args.r_sigma, args.q_coef, args.phi)
    cell = default_cell(soc0=args.soc0, ts=freq.ts, c_nom=args.c_nom)
    _, power, drive = _drive_from_frequency(args, freq, p, cell)
    table = np.column_stack(
        [freq.time, freq.freq, freq.freq - freq.nominal, power, drive.current, drive.voltage, drive.soc]
    )
    np.savetxt(out / "fcr.csv", table, fmt="%.17g", delimiter=",",
               header="t,f,df,p,i,v,soc", comments="")
    print(
        f"wrote fcr.csv with {len(freq)} rows; |p| <= {np.abs(power).max():.4g} W; "
        f"SOC range [{drive.soc.min():.4f}, {drive.soc.max():.4f}]"
    )
    return 0


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
    parser.add_argument("--out-dir", default=".", help="output directory (default current)")
    parser.add_argument("--ts", type=float, default=1.0, help="sampling time in s (default 1)")


def _add_truth(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--r-sigma", type=float, default=0.0014, help="series resistance (ohm)")
    parser.add_argument("--q-coef", type=float, default=22281.0, help="CPE coefficient (S*s^phi)")
    parser.add_argument("--phi", type=float, default=0.52, help="CPE exponent")


def _add_cell(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--soc0", type=float, default=0.55, help="initial SOC")
    parser.add_argument("--c-nom", type=float, default=60.0, help="nominal capacity (Ah)")


def _add_excitation(parser: argparse.ArgumentParser) -> None:
    group = parser.add_mutually_exclusive_group()
    group.add_argument("--freq-csv", help="grid frequency CSV (t,f)")
    group.add_argument("--synthetic", action="store_true", help="use the seeded synthetic trace (default)")
    parser.add_argument("--duration", type=float, default=10800.0, help="synthetic duration in s")
    parser.add_argument("--droop", type=float, default=100.0, help="droop in W/Hz")
    parser.add_argument("--p-max", type=float, default=None, help="saturation power in W (default droop*0.2)")
    parser.add_argument("--n", type=int, default=100, help="branch count of the true decomposition")
    parser.add_argument("--delta-phi", type=float, default=0.0, help="phase ripple of the decomposition (rad)")
    parser.add_argument("--f-max", type=float, default=None, help="decomposition f_max (default fs/pi)")


def _add_bounds(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--case", type=int, choices=sorted(CASE_BOUNDS), default=None,
                        help="tabulated bounds case")
    parser.add_argument("--phi-min", type=float, default=None)
    parser.add_argument("--phi-max", type=float, default=None)
    parser.add_argument("--q-min", type=float, default=None)
    parser.add_argument("--q-max", type=float, default=None)
    parser.add_argument("--r-sigma-min", type=float, default=R_SIGMA_BOUNDS[0])
    parser.add_argument("--r-sigma-max", type=float, default=R_SIGMA_BOUNDS[1])
    parser.add_argument("--f-max-lo", type=float, default=None)
    parser.add_argument("--f-max-hi", type=float, default=None)


def _add_estimator(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--epsilon", type=float, default=1e-4, help="relative-change stop threshold")
    parser.add_argument("--n-rc-max", type=int, default=25, help="maximum branch count")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="lfecm",
        description="Low-frequency battery ECM parameter identification toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p_dec = sub.add_parser("decompose", help="decompose a CPE into an RC ladder")
    _add_common(p_dec)
    p_dec.add_argument("--q-coef", type=float, required=True, help="CPE coefficient (S*s^phi)")
    p_dec.add_argument("--phi", type=float, required=True, help="CPE exponent")
    p_dec.add_argument("--n", type=int, required=True, help="branch count")
    p_dec.add_argument("--f-max", type=float, required=True, help="fastest corner frequency (Hz)")
    p_dec.add_argument("--delta-phi", type=float, default=0.0, help="phase ripple (rad)")
    p_dec.add_argument("--r-sigma", type=float, default=0.0014, help="series resistance (ohm)")
    p_dec.add_argument("--sweep", type=_parse_sweep, default=None,
                       help="impedance sweep FMIN:FMAX:NPOINTS (log grid)")
    p_dec.set_defaults(func=cmd_decompose)

    p_gen = sub.add_parser("generate", help="generate a synthetic noisy dataset")
    _add_common(p_gen)
    _add_truth(p_gen)
    _add_cell(p_gen)
    _add_excitation(p_gen)
    p_gen.add_argument("--sigma-v", type=float, default=5e-4, help="voltage noise std (V)")
    p_gen.add_argument("--sigma-i", type=float, default=0.05 / 3.0, help="current noise std (A)")
    p_gen.set_defaults(func=cmd_generate)

    p_est = sub.add_parser("estimate", help="estimate parameters from a dataset CSV")
    _add_common(p_est)
    _add_cell(p_est)
    _add_bounds(p_est)
    _add_estimator(p_est)
    p_est.add_argument("--data", required=True, help="dataset CSV (t,i,v)")
    p_est.add_argument("--sidecar", default=None, help="dataset sidecar JSON (default: <data>.json)")
    p_est.set_defaults(func=cmd_estimate)

    p_mc = sub.add_parser("montecarlo", help="run a replicate campaign")
    _add_common(p_mc)
    _add_truth(p_mc)
    _add_cell(p_mc)
    _add_bounds(p_mc)
    _add_estimator(p_mc)
    p_mc.add_argument("--n-sim", type=int, required=True, help="number of replicates")
    p_mc.add_argument("--sigma-v", type=float, default=5e-4)
    p_mc.add_argument("--sigma-i", type=float, default=0.05 / 3.0)
    p_mc.add_argument("--droop", type=float, default=400.0,
                      help="campaign droop in W/Hz (default 400)")
    p_mc.add_argument("--p-max", type=float, default=None)
    p_mc.add_argument("--duration", type=float, default=10800.0)
    p_mc.add_argument("--workers", type=int, default=None,
                      help=f"parallel workers (default cores, capped by ${MAX_WORKERS_ENV})")
    p_mc.set_defaults(func=cmd_montecarlo)

    p_fcr = sub.add_parser("fcr", help="emit the droop power/current profile")
    _add_common(p_fcr)
    _add_truth(p_fcr)
    _add_cell(p_fcr)
    _add_excitation(p_fcr)
    p_fcr.set_defaults(func=cmd_fcr)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
