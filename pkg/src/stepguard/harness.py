"""Experiment orchestration: seeded trials, ensembles, detection statistics.

A trial is one full solver run with the detector attached. Faulty trials are
paired with the error-free run of the same configuration (the clean
trajectories are deterministic, so one clean run serves a whole ensemble) to
measure each fault's normalized impact. Simulation and detection are
separated: a simulation yields the difference sequence and fault metadata,
and any number of detector configurations can then be replayed over it,
which is how the indicator ablation and threshold sweeps reuse work.

True-positive rates are reported under two definitions: a flag exactly at
the fault's target step, and a flag at that step or the one after. The
false-positive rate pools, over all trials, flags outside the two-step fault
window divided by all checked non-fault steps. Wall-clock timings stay on
the in-memory records only; emitted files depend on nothing but the
configuration and seed, byte for byte.
"""

from __future__ import annotations

import csv
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import presets
from .core import (
    ConfigError,
    NonFiniteValueError,
    SchemePair,
    SolverError,
    difference_norm,
)
from .detector import Detector, DetectorConfig, DetectorVerdict
from .faults import (
    FaultSpec,
    LteNormalizedError,
    ResolvedFault,
    lte_normalized_error,
    make_rng,
    resolve_fault,
)

__all__ = [
    "EnsembleConfig",
    "Simulation",
    "TrialSim",
    "EnsembleSimulation",
    "TrialRecord",
    "ExperimentSummary",
    "simulate",
    "run_detector",
    "simulate_ensemble",
    "summarize",
    "run_trial",
    "run_experiment",
    "run_ablation",
    "kernel_regression",
    "silverman_bandwidth",
    "emit_outputs",
]

L_BINS = (1.0, 3.0)
CURVE_POINTS = 100


@dataclass(frozen=True)
class EnsembleConfig:
    """Declarative description of one experiment ensemble.

    ``fault_mode`` None picks the problem's stock mode; the literal string
    "none" runs a fault-free ensemble. ``sigma2`` None picks the stock
    variance for (problem, scheme, mode). ``dt`` None picks the stock step.
    """

    problem: str
    scheme: str | None = None
    fault_mode: str | None = None
    sigma2: float | None = None
    n_trials: int = 200
    seed: int = 0
    dt: float | None = None
    norm: str = "inf"
    detector: DetectorConfig = DetectorConfig()
    bandwidth: float | None = None
    jobs: int = 1

    def resolved(self) -> "EnsembleConfig":
        scheme = self.scheme or presets.default_scheme(self.problem)
        dt = self.dt if self.dt is not None else presets.default_dt(self.problem, scheme)
        mode = self.fault_mode or presets.default_fault_mode(self.problem)
        sigma2 = self.sigma2
        if mode != "none" and sigma2 is None:
            sigma2 = presets.default_sigma2(self.problem, scheme, mode)
            if sigma2 is None:
                raise ConfigError(
                    f"no stock sigma2 for ({self.problem}, {scheme}, {mode}); pass one"
                )
        return replace(self, scheme=scheme, dt=dt, fault_mode=mode, sigma2=sigma2)


def _copy_state(state):
    if isinstance(state, (tuple, list)):
        return tuple(np.array(s, copy=True) for s in state)
    return np.array(state, copy=True)


@dataclass
class Simulation:
    """Raw outcome of stepping one trial: the difference sequence (step
    ``first_d_step`` onward, contiguous), any immediate non-finite flag, and
    requested base/auxiliary snapshots."""

    n_steps: int
    first_d_step: int | None
    d_values: np.ndarray
    immediate_flag_step: int | None
    status: str  # "ok" | "aborted-nonfinite" | "aborted-solver"
    injections: int
    captured_base: dict
    captured_aux: dict

    def d_at(self, step: int) -> float:
        if self.first_d_step is None:
            raise KeyError(step)
        idx = step - self.first_d_step
        if not 0 <= idx < len(self.d_values):
            raise KeyError(step)
        return float(self.d_values[idx])


def simulate(
    pair: SchemePair,
    norm: str = "inf",
    fault: ResolvedFault | None = None,
    capture_steps=(),
    capture_all: bool = False,
    compute_aux: bool = True,
) -> Simulation:
    """Run one trial to the horizon (or to the first non-finite value)."""
    pair.reset(fault=fault, compute_aux=compute_aux)
    capture_steps = set(capture_steps)
    d_values: list[float] = []
    first_d_step: int | None = None
    captured_base: dict = {}
    captured_aux: dict = {}
    immediate: int | None = None
    status = "ok"
    for step in range(1, pair.grid.n_steps + 1):
        try:
            out = pair.advance()
        except NonFiniteValueError:
            immediate = step
            status = "aborted-nonfinite"
            break
        except SolverError:
            status = "aborted-solver"
            break
        if capture_all or step in capture_steps:
            captured_base[step] = pair.base_snapshot()
        if out is None:
            continue
        if capture_all and out.auxiliary is not None:
            captured_aux[step] = _copy_state(out.auxiliary)
        d = difference_norm(out.base, out.auxiliary, norm)
        if not math.isfinite(d):
            immediate = step
            status = "aborted-nonfinite"
            break
        if first_d_step is None:
            first_d_step = step
        d_values.append(d)
    return Simulation(
        n_steps=pair.grid.n_steps,
        first_d_step=first_d_step,
        d_values=np.asarray(d_values),
        immediate_flag_step=immediate,
        status=status,
        injections=pair.injection_count,
        captured_base=captured_base,
        captured_aux=captured_aux,
    )


@dataclass
class DetectionResult:
    flagged_steps: tuple[int, ...]
    checked_steps: int
    verdicts: list[tuple[int, float, DetectorVerdict]] | None = None


def run_detector(
    sim: Simulation, det_cfg: DetectorConfig, collect_verdicts: bool = False
) -> DetectionResult:
    """Replay a difference sequence through a fresh detector."""
    det = Detector(det_cfg)
    flagged: list[int] = []
    checked = 0
    verdicts: list[tuple[int, float, DetectorVerdict]] | None = [] if collect_verdicts else None
    if sim.first_d_step is not None:
        for offset, d in enumerate(sim.d_values):
            step = sim.first_d_step + offset
            verdict = det.observe(float(d))
            if verdict.j_value is not None:
                checked += 1
            if verdict.flagged:
                flagged.append(step)
            if verdicts is not None:
                verdicts.append((step, float(d), verdict))
    if sim.immediate_flag_step is not None:
        flagged.append(sim.immediate_flag_step)
        checked += 1
    return DetectionResult(tuple(sorted(set(flagged))), checked, verdicts)


@dataclass
class TrialSim:
    """One simulated faulty trial, ready for any detector configuration."""

    trial: int
    seed: int
    fault: ResolvedFault | None
    sim: Simulation
    impact: LteNormalizedError | None
    wall_time_s: float


@dataclass
class EnsembleSimulation:
    config: EnsembleConfig
    clean: Simulation
    trials: list[TrialSim]


def _simulate_one(
    pair: SchemePair,
    cfg: EnsembleConfig,
    clean: Simulation,
    trial: int,
) -> TrialSim:
    t0 = time.perf_counter()
    seed = cfg.seed + trial
    if cfg.fault_mode == "none":
        sim = simulate(pair, cfg.norm)
        return TrialSim(trial, seed, None, sim, None, time.perf_counter() - t0)
    rng = make_rng(seed)
    spec = FaultSpec(mode=cfg.fault_mode, sigma2=cfg.sigma2)
    fault = resolve_fault(spec, pair, cfg.detector.window_p, rng)
    sim = simulate(pair, cfg.norm, fault=fault, capture_steps={fault.step})
    if sim.status == "ok" and sim.injections != 1:
        raise RuntimeError(
            f"trial {trial}: expected exactly one injection, saw {sim.injections}"
        )
    faulty_state = sim.captured_base.get(fault.step)
    if faulty_state is None:
        # The step blew up mid-computation; the impact is off the scale.
        impact = LteNormalizedError(math.inf, math.inf, 0.0, fault.step)
    else:
        impact = lte_normalized_error(
            faulty_state,
            clean.captured_base[fault.step],
            clean.captured_aux[fault.step],
            norm=cfg.norm,
            step=fault.step,
        )
    sim.captured_base.clear()
    return TrialSim(trial, seed, fault, sim, impact, time.perf_counter() - t0)


def _simulate_clean(cfg: EnsembleConfig) -> tuple[SchemePair, Simulation]:
    pair = presets.build_pair(cfg.problem, cfg.scheme, cfg.dt)
    clean = simulate(pair, cfg.norm, capture_all=True)
    if clean.status != "ok":
        raise SolverError(f"error-free run failed with status {clean.status}")
    return pair, clean


def _worker_chunk(cfg: EnsembleConfig, trials: list[int]) -> list[TrialSim]:
    pair, clean = _simulate_clean(cfg)
    return [_simulate_one(pair, cfg, clean, t) for t in trials]


def simulate_ensemble(cfg: EnsembleConfig) -> EnsembleSimulation:
    """Simulate every trial of an ensemble (no detection yet)."""
    cfg = cfg.resolved()
    if cfg.n_trials < 1:
        raise ConfigError(f"n_trials must be >= 1, got {cfg.n_trials}")
    pair, clean = _simulate_clean(cfg)
    indices = list(range(cfg.n_trials))
    if cfg.jobs > 1 and cfg.n_trials > 1:
        chunks = [indices[i :: cfg.jobs] for i in range(cfg.jobs)]
        chunks = [c for c in chunks if c]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            parts = list(pool.map(_worker_chunk, [cfg] * len(chunks), chunks))
        trials = sorted((t for part in parts for t in part), key=lambda t: t.trial)
    else:
        trials = [_simulate_one(pair, cfg, clean, t) for t in indices]
    clean = replace(clean, captured_base={}, captured_aux={})
    return EnsembleSimulation(cfg, clean, trials)


@dataclass(frozen=True)
class TrialRecord:
    """Per-trial outcome. ``wall_time_s`` is informational only and is not
    written to output files (emitted bytes depend only on config and seed)."""

    trial: int
    seed: int
    fault: ResolvedFault | None
    l_value: float | None
    l_numerator: float | None
    l_denominator: float | None
    flagged_steps: tuple[int, ...]
    detected_at_fault: bool | None
    detected_at_fault_or_next: bool | None
    false_positive_flags: int
    checked_steps: int
    n_steps: int
    status: str
    rollback_count: int
    wall_time_s: float


@dataclass
class ExperimentSummary:
    config: EnsembleConfig
    records: list[TrialRecord]
    n_ok: int
    n_aborted_solver: int
    tpr_at_fault: float | None
    tpr_fault_or_next: float | None
    fpr: float
    n_infinite_l: int
    bandwidth: float | None
    curve_l: np.ndarray | None
    curve_tpr: np.ndarray | None

    def tpr_above(self, l_min: float = 3.0, which: str = "next") -> tuple[float | None, int]:
        """Detection rate restricted to trials with impact above l_min.
        Returns (rate or None, matching trial count)."""
        hits = 0
        total = 0
        for rec in self._fault_records():
            if rec.l_value is not None and rec.l_value > l_min:
                total += 1
                hits += bool(
                    rec.detected_at_fault if which == "at" else rec.detected_at_fault_or_next
                )
        return (hits / total if total else None), total

    def binned_tpr(self, edges: tuple[float, ...] = L_BINS, which: str = "next") -> list[tuple[int, float | None]]:
        """(count, rate) per impact bin [0, e1), [e1, e2), ..., [elast, inf].
        Infinite impacts land in the top bin."""
        bounds = (0.0,) + tuple(edges) + (math.inf,)
        out = []
        for lo, hi in zip(bounds[:-1], bounds[1:]):
            hits = 0
            total = 0
            for rec in self._fault_records():
                l = rec.l_value
                if l is None:
                    continue
                if lo <= l < hi or (math.isinf(l) and math.isinf(hi)):
                    total += 1
                    hits += bool(
                        rec.detected_at_fault if which == "at" else rec.detected_at_fault_or_next
                    )
            out.append((total, hits / total if total else None))
        return out

    def _fault_records(self):
        return [r for r in self.records if r.fault is not None and r.status != "aborted-solver"]


def silverman_bandwidth(values) -> float:
    """Rule-of-thumb kernel width from the sample spread."""
    arr = np.asarray([v for v in values if math.isfinite(v)], dtype=float)
    n = arr.size
    if n < 2:
        return 1.0
    sd = float(np.std(arr, ddof=1))
    q75, q25 = np.percentile(arr, [75.0, 25.0])
    candidates = [c for c in (sd, (q75 - q25) / 1.34) if c > 0.0]
    if not candidates:
        return 1.0
    return 0.9 * min(candidates) * n ** (-1 / 5)


def kernel_regression(points_l, points_y, bandwidth: float, grid) -> np.ndarray:
    """Gaussian-kernel local average of y over l, evaluated on the grid."""
    l = np.asarray(points_l, dtype=float)
    y = np.asarray(points_y, dtype=float)
    if l.size == 0:
        raise ValueError("kernel regression needs at least one point")
    if not bandwidth > 0.0:
        raise ValueError(f"bandwidth must be positive, got {bandwidth}")
    x = np.asarray(grid, dtype=float)
    w = np.exp(-((x[:, None] - l[None, :]) ** 2) / (2.0 * bandwidth**2))
    den = w.sum(axis=1)
    num = (w * y[None, :]).sum(axis=1)
    out = np.divide(num, den, out=np.zeros_like(den), where=den > 0.0)
    # Far outside the data every weight underflows; fall back to the nearest
    # sample's value there.
    dead = den <= 0.0
    if np.any(dead):
        nearest = np.abs(x[dead, None] - l[None, :]).argmin(axis=1)
        out[dead] = y[nearest]
    return out


def _curve_grid(l_values: np.ndarray) -> np.ndarray:
    lo = max(1e-2, float(l_values.min()))
    hi = max(float(l_values.max()), lo)
    return np.geomspace(lo, hi, CURVE_POINTS)


def summarize(ensemble: EnsembleSimulation, det_cfg: DetectorConfig | None = None) -> ExperimentSummary:
    """Run detection over every simulated trial and aggregate."""
    cfg = ensemble.config
    det_cfg = det_cfg or cfg.detector
    records: list[TrialRecord] = []
    fp_flags = 0
    fp_steps = 0
    n_at = n_next = n_fault_ok = 0
    n_infinite_l = 0
    for ts in ensemble.trials:
        detection = run_detector(ts.sim, det_cfg)
        flags = detection.flagged_steps
        if ts.fault is None:
            det_at = det_next = None
            false_pos = len(flags)
            nonfault_checked = detection.checked_steps
            l_value = l_num = l_den = None
        else:
            fault_window = {ts.fault.step, ts.fault.step + 1}
            det_at = ts.fault.step in flags
            det_next = det_at or (ts.fault.step + 1) in flags
            false_pos = sum(1 for s in flags if s not in fault_window)
            nonfault_checked = detection.checked_steps - 2
            l_value = ts.impact.value
            l_num = ts.impact.numerator
            l_den = ts.impact.denominator
        rec = TrialRecord(
            trial=ts.trial,
            seed=ts.seed,
            fault=ts.fault,
            l_value=l_value,
            l_numerator=l_num,
            l_denominator=l_den,
            flagged_steps=flags,
            detected_at_fault=det_at,
            detected_at_fault_or_next=det_next,
            false_positive_flags=false_pos,
            checked_steps=detection.checked_steps,
            n_steps=ts.sim.n_steps,
            status=ts.sim.status,
            rollback_count=len(flags),
            wall_time_s=ts.wall_time_s,
        )
        records.append(rec)
        if rec.status == "aborted-solver":
            continue
        fp_flags += false_pos
        fp_steps += max(nonfault_checked, 0)
        if ts.fault is not None:
            n_fault_ok += 1
            n_at += bool(det_at)
            n_next += bool(det_next)
            if l_value is not None and math.isinf(l_value):
                n_infinite_l += 1

    n_aborted = sum(1 for r in records if r.status == "aborted-solver")
    tpr_at = n_at / n_fault_ok if n_fault_ok else None
    tpr_next = n_next / n_fault_ok if n_fault_ok else None
    fpr = fp_flags / fp_steps if fp_steps else 0.0

    curve_l = curve_tpr = None
    bandwidth = None
    points = [
        (r.l_value, float(r.detected_at_fault_or_next))
        for r in records
        if r.fault is not None
        and r.status != "aborted-solver"
        and r.l_value is not None
        and math.isfinite(r.l_value)
    ]
    if points:
        l_vals = np.array([p[0] for p in points])
        y_vals = np.array([p[1] for p in points])
        bandwidth = cfg.bandwidth if cfg.bandwidth is not None else silverman_bandwidth(l_vals)
        curve_l = _curve_grid(l_vals)
        curve_tpr = kernel_regression(l_vals, y_vals, bandwidth, curve_l)

    return ExperimentSummary(
        config=replace(cfg, detector=det_cfg),
        records=records,
        n_ok=len(records) - n_aborted,
        n_aborted_solver=n_aborted,
        tpr_at_fault=tpr_at,
        tpr_fault_or_next=tpr_next,
        fpr=fpr,
        n_infinite_l=n_infinite_l,
        bandwidth=bandwidth,
        curve_l=curve_l,
        curve_tpr=curve_tpr,
    )


def run_experiment(cfg: EnsembleConfig) -> ExperimentSummary:
    return summarize(simulate_ensemble(cfg))


def run_ablation(cfg: EnsembleConfig) -> dict[str, ExperimentSummary]:
    """The same simulated fault stream scored under the combined rule and
    each single indicator alone."""
    ensemble = simulate_ensemble(cfg)
    return {
        mode: summarize(ensemble, replace(cfg.detector, mode=mode))
        for mode in ("both", "jump-only", "variance-only")
    }


def run_trial(
    problem: str,
    scheme: str | None = None,
    fault: FaultSpec | None = None,
    detector: DetectorConfig | None = None,
    seed: int = 0,
    dt: float | None = None,
    norm: str = "inf",
) -> tuple[TrialRecord, DetectionResult]:
    """One seeded trial with full per-step verdicts (the CLI's `trial`)."""
    det_cfg = detector or DetectorConfig()
    cfg = EnsembleConfig(
        problem=problem,
        scheme=scheme,
        fault_mode=fault.mode if fault else "none",
        sigma2=fault.sigma2 if fault else None,
        n_trials=1,
        seed=seed,
        dt=dt,
        norm=norm,
        detector=det_cfg,
    ).resolved()
    pair, clean = _simulate_clean(cfg)
    t0 = time.perf_counter()
    if fault is None:
        ts = TrialSim(0, seed, None, clean, None, time.perf_counter() - t0)
    else:
        rng = make_rng(seed)
        resolved = resolve_fault(fault, pair, det_cfg.window_p, rng)
        sim = simulate(pair, cfg.norm, fault=resolved, capture_steps={resolved.step})
        faulty_state = sim.captured_base.get(resolved.step)
        if faulty_state is None:
            impact = LteNormalizedError(math.inf, math.inf, 0.0, resolved.step)
        else:
            impact = lte_normalized_error(
                faulty_state,
                clean.captured_base[resolved.step],
                clean.captured_aux[resolved.step],
                norm=cfg.norm,
                step=resolved.step,
            )
        ts = TrialSim(0, seed, resolved, sim, impact, time.perf_counter() - t0)
    ensemble = EnsembleSimulation(cfg, clean, [ts])
    summary = summarize(ensemble)
    detail = run_detector(ts.sim, det_cfg, collect_verdicts=True)
    return summary.records[0], detail


# --- output files -----------------------------------------------------------

def _fmt(value) -> str:
    if value is None:
        return ""
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, float):
        return repr(value)
    return str(value)


def _config_header(cfg: EnsembleConfig) -> list[str]:
    det = cfg.detector
    keys = [
        ("problem", cfg.problem),
        ("scheme", cfg.scheme),
        ("fault_mode", cfg.fault_mode),
        ("sigma2", cfg.sigma2),
        ("n_trials", cfg.n_trials),
        ("seed", cfg.seed),
        ("dt", cfg.dt),
        ("norm", cfg.norm),
        ("detector_mode", det.mode),
        ("gamma_up", det.gamma_up),
        ("gamma_down", det.gamma_down),
        ("window_p", det.window_p),
        ("tau_j0", det.tau_j0),
        ("tau_v0", det.tau_v0),
    ]
    return [f"# {k}={_fmt(v)}" for k, v in keys]


TRIAL_COLUMNS = [
    "trial",
    "seed",
    "fault_mode",
    "fault_step",
    "fault_component",
    "fault_stage",
    "fault_scale",
    "sigma2",
    "l_value",
    "l_numerator",
    "l_denominator",
    "flagged_steps",
    "detected_at_fault",
    "detected_at_fault_or_next",
    "false_positive_flags",
    "checked_steps",
    "n_steps",
    "status",
    "rollback_count",
]


def _trial_row(rec: TrialRecord) -> list[str]:
    f = rec.fault
    return [
        _fmt(rec.trial),
        _fmt(rec.seed),
        _fmt(f.mode if f else None),
        _fmt(f.step if f else None),
        _fmt(f.component if f else None),
        _fmt(f.stage if f else None),
        _fmt(f.scale if f else None),
        _fmt(f.sigma2 if f else None),
        _fmt(rec.l_value),
        _fmt(rec.l_numerator),
        _fmt(rec.l_denominator),
        ";".join(str(s) for s in rec.flagged_steps),
        _fmt(rec.detected_at_fault),
        _fmt(rec.detected_at_fault_or_next),
        _fmt(rec.false_positive_flags),
        _fmt(rec.checked_steps),
        _fmt(rec.n_steps),
        rec.status,
        _fmt(rec.rollback_count),
    ]


def _write_csv(path: Path, header_lines: list[str], columns: list[str], rows) -> None:
    with open(path, "w", newline="") as fh:
        for line in header_lines:
            fh.write(line + "\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow(row)


def emit_outputs(summary: ExperimentSummary, out_dir) -> dict[str, Path]:
    """Write trials.csv, summary.csv, and curve.csv under out_dir."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    header = _config_header(summary.config)

    trials_path = out / "trials.csv"
    _write_csv(trials_path, header, TRIAL_COLUMNS, (_trial_row(r) for r in summary.records))

    bins = summary.binned_tpr()
    summary_rows = [
        ("n_trials", _fmt(len(summary.records))),
        ("n_ok", _fmt(summary.n_ok)),
        ("n_aborted_solver", _fmt(summary.n_aborted_solver)),
        ("tpr_at_fault", _fmt(summary.tpr_at_fault)),
        ("tpr_fault_or_next", _fmt(summary.tpr_fault_or_next)),
        ("fpr", _fmt(summary.fpr)),
        ("n_infinite_l", _fmt(summary.n_infinite_l)),
        ("bandwidth", _fmt(summary.bandwidth)),
    ]
    for (count, rate), label in zip(bins, ("l_0_1", "l_1_3", "l_3_inf")):
        summary_rows.append((f"tpr_{label}", _fmt(rate)))
        summary_rows.append((f"n_{label}", _fmt(count)))
    summary_path = out / "summary.csv"
    _write_csv(summary_path, header, ["key", "value"], summary_rows)

    curve_path = out / "curve.csv"
    if summary.curve_l is None:
        _write_csv(curve_path, header, ["l", "tpr"], [])
    else:
        _write_csv(
            curve_path,
            header,
            ["l", "tpr"],
            (
                [_fmt(float(l)), _fmt(float(t))]
                for l, t in zip(summary.curve_l, summary.curve_tpr)
            ),
        )
    return {"trials": trials_path, "summary": summary_path, "curve": curve_path}
