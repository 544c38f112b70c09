"""Command-line interface.

Subcommands:
    solve        error-free run; dump the per-step difference sequence,
                 indicators, thresholds, and flags.
    trial        one seeded faulty trial; dump verdicts and the measured
                 impact.
    experiment   seeded ensemble of faulty trials; write trials.csv,
                 summary.csv, curve.csv.
    ablation     the experiment scored three ways on identical fault
                 streams: combined rule, jump only, variance only.

All options can come from a JSON config file (--config) with sections
"problem", "scheme", "detector", "fault", and "experiment"; explicit flags
win over the file. See the README for the schema.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from pathlib import Path

from .core import ConfigError
from .detector import DetectorConfig
from .faults import FaultSpec
from .harness import (
    EnsembleConfig,
    emit_outputs,
    run_ablation,
    run_experiment,
    run_trial,
)
from . import presets


def _add_common(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", type=Path, help="JSON config file")
    parser.add_argument("--problem", help=f"problem id ({', '.join(presets.PROBLEMS)})")
    parser.add_argument("--scheme", help=f"scheme id ({', '.join(presets.SCHEMES)})")
    parser.add_argument("--dt", type=float, help="time step override")
    parser.add_argument("--norm", help="difference norm: inf (default), one, two")
    parser.add_argument("--detector-mode", dest="detector_mode", help="both | jump | variance")
    parser.add_argument("--gamma-up", dest="gamma_up", type=float, help="threshold increase factor")
    parser.add_argument("--gamma-down", dest="gamma_down", type=float, help="threshold decay factor")
    parser.add_argument("--window-p", dest="window_p", type=int, help="difference window length parameter")
    parser.add_argument("--tau-j0", dest="tau_j0", type=float, help="initial jump threshold")
    parser.add_argument("--tau-v0", dest="tau_v0", type=float, help="initial variance threshold")
    parser.add_argument("--out", type=Path, help="output directory")


def _add_fault(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--fault-mode", dest="fault_mode", help="derivative-eval | linear-rhs | previous-solution")
    parser.add_argument("--sigma2", type=float, help="corruption variance")
    parser.add_argument("--fault-step", dest="fault_step", type=int, help="pin the fault step")
    parser.add_argument("--fault-component", dest="fault_component", type=int, help="pin the corrupted component")
    parser.add_argument("--fault-stage", dest="fault_stage", type=int, help="pin the corrupted stage")
    parser.add_argument("--fault-scale", dest="fault_scale", type=float, help="pin the multiplier instead of drawing it")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="stepguard", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)

    p_solve = sub.add_parser("solve", help="error-free run, dump the difference sequence")
    _add_common(p_solve)

    p_trial = sub.add_parser("trial", help="one seeded faulty trial")
    _add_common(p_trial)
    _add_fault(p_trial)
    p_trial.add_argument("--seed", type=int, help="trial seed (default 0)")

    p_exp = sub.add_parser("experiment", help="seeded ensemble, write CSV outputs")
    _add_common(p_exp)
    _add_fault(p_exp)
    p_exp.add_argument("--seed", type=int, help="experiment seed (default 0)")
    p_exp.add_argument("--trials", type=int, help="trial count (default 200)")
    p_exp.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p_exp.add_argument("--bandwidth", type=float, help="kernel regression bandwidth override")

    p_abl = sub.add_parser("ablation", help="experiment under both/jump-only/variance-only rules")
    _add_common(p_abl)
    _add_fault(p_abl)
    p_abl.add_argument("--seed", type=int, help="experiment seed (default 0)")
    p_abl.add_argument("--trials", type=int, help="trial count (default 200)")
    p_abl.add_argument("--jobs", type=int, help="worker processes (default 1)")
    p_abl.add_argument("--bandwidth", type=float, help="kernel regression bandwidth override")

    return parser


def _load_config(path: Path | None) -> dict:
    if path is None:
        return {}
    with open(path) as fh:
        data = json.load(fh)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: top level must be a JSON object")
    return data


def _pick(args, name, section: dict, key: str, default=None):
    value = getattr(args, name, None)
    if value is not None:
        return value
    if key in section:
        return section[key]
    return default


def _detector_from(args, cfg: dict) -> DetectorConfig:
    det = cfg.get("detector", {})
    return DetectorConfig(
        gamma_up=_pick(args, "gamma_up", det, "gamma_up", 1.4),
        gamma_down=_pick(args, "gamma_down", det, "gamma_down", 0.95),
        window_p=_pick(args, "window_p", det, "window_p", 10),
        tau_j0=_pick(args, "tau_j0", det, "tau_j0", 1.0),
        tau_v0=_pick(args, "tau_v0", det, "tau_v0", 1.0),
        mode=_pick(args, "detector_mode", det, "mode", "both"),
    )


def _problem_scheme(args, cfg: dict) -> tuple[str, str | None, float | None, str]:
    prob = cfg.get("problem", {})
    sch = cfg.get("scheme", {})
    problem = _pick(args, "problem", prob, "id")
    if problem is None:
        raise ConfigError("a problem id is required (--problem or config)")
    scheme = _pick(args, "scheme", sch, "id")
    dt = _pick(args, "dt", prob, "dt")
    norm = _pick(args, "norm", prob, "norm", "inf")
    return problem, scheme, dt, norm


def _fault_from(args, cfg: dict, problem: str, scheme: str | None, dt) -> FaultSpec:
    flt = cfg.get("fault", {})
    mode = _pick(args, "fault_mode", flt, "mode") or presets.default_fault_mode(problem)
    sigma2 = _pick(args, "sigma2", flt, "sigma2")
    if sigma2 is None:
        scheme = scheme or presets.default_scheme(problem)
        sigma2 = presets.default_sigma2(problem, scheme, mode)
        if sigma2 is None:
            raise ConfigError(f"no stock sigma2 for ({problem}, {scheme}, {mode}); pass --sigma2")
    return FaultSpec(
        mode=mode,
        sigma2=sigma2,
        step=_pick(args, "fault_step", flt, "step"),
        component=_pick(args, "fault_component", flt, "component"),
        stage=_pick(args, "fault_stage", flt, "stage"),
        scale=_pick(args, "fault_scale", flt, "scale"),
    )


def _write_step_csv(path: Path, verdicts) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["step", "d", "j", "v", "tau_j", "tau_v", "flagged"])
        for step, d, verdict in verdicts or []:
            writer.writerow(
                [
                    step,
                    repr(d),
                    "" if verdict.j_value is None else repr(verdict.j_value),
                    "" if verdict.v_value is None else repr(verdict.v_value),
                    repr(verdict.thresholds_after[0]),
                    repr(verdict.thresholds_after[1]),
                    int(verdict.flagged),
                ]
            )


def _cmd_solve(args) -> int:
    cfg = _load_config(args.config)
    problem, scheme, dt, norm = _problem_scheme(args, cfg)
    scheme = scheme or presets.default_scheme(problem)
    detector = _detector_from(args, cfg)
    record, detail = run_trial(problem, scheme, None, detector, dt=dt, norm=norm)
    print(
        f"{problem} / {scheme}: {record.n_steps} steps, "
        f"{record.checked_steps} checked, {len(record.flagged_steps)} flagged"
    )
    if record.flagged_steps:
        print("flagged steps: " + ", ".join(str(s) for s in record.flagged_steps))
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "solve.csv"
        _write_step_csv(path, detail.verdicts)
        print(f"wrote {path}")
    return 0


def _cmd_trial(args) -> int:
    cfg = _load_config(args.config)
    problem, scheme, dt, norm = _problem_scheme(args, cfg)
    detector = _detector_from(args, cfg)
    fault = _fault_from(args, cfg, problem, scheme, dt)
    seed = _pick(args, "seed", cfg.get("experiment", {}), "seed", 0)
    record, detail = run_trial(problem, scheme, fault, detector, seed=seed, dt=dt, norm=norm)
    f = record.fault
    print(
        f"fault: mode={f.mode} step={f.step} component={f.component} "
        f"stage={f.stage} scale={f.scale!r}"
    )
    print(
        f"impact L={record.l_value!r} (|B-Bhat|={record.l_numerator!r}, "
        f"|Bhat-Ahat|={record.l_denominator!r})"
    )
    print(
        f"flags: {list(record.flagged_steps)} "
        f"(at fault: {record.detected_at_fault}, at fault or next: {record.detected_at_fault_or_next})"
    )
    if args.out is not None:
        args.out.mkdir(parents=True, exist_ok=True)
        path = args.out / "trial.csv"
        _write_step_csv(path, detail.verdicts)
        print(f"wrote {path}")
    return 0


def _ensemble_config(args, cfg: dict) -> EnsembleConfig:
    problem, scheme, dt, norm = _problem_scheme(args, cfg)
    detector = _detector_from(args, cfg)
    exp = cfg.get("experiment", {})
    flt = cfg.get("fault", {})
    return EnsembleConfig(
        problem=problem,
        scheme=scheme,
        fault_mode=_pick(args, "fault_mode", flt, "mode"),
        sigma2=_pick(args, "sigma2", flt, "sigma2"),
        n_trials=_pick(args, "trials", exp, "trials", 200),
        seed=_pick(args, "seed", exp, "seed", 0),
        dt=dt,
        norm=norm,
        detector=detector,
        bandwidth=_pick(args, "bandwidth", exp, "bandwidth"),
        jobs=_pick(args, "jobs", exp, "jobs", 1),
    )


def _print_summary(tag: str, summary) -> None:
    tpr3, n3 = summary.tpr_above(3.0)
    print(
        f"{tag}: trials={len(summary.records)} "
        f"tpr_at_fault={summary.tpr_at_fault} tpr_fault_or_next={summary.tpr_fault_or_next} "
        f"tpr(L>3)={tpr3} (n={n3}) fpr={summary.fpr:.5f}"
    )


def _cmd_experiment(args) -> int:
    cfg = _ensemble_config(args, _load_config(args.config))
    summary = run_experiment(cfg)
    _print_summary(f"{cfg.problem}/{summary.config.scheme}", summary)
    if args.out is not None:
        paths = emit_outputs(summary, args.out)
        print("wrote " + ", ".join(str(p) for p in paths.values()))
    return 0


def _cmd_ablation(args) -> int:
    cfg = _ensemble_config(args, _load_config(args.config))
    summaries = run_ablation(cfg)
    for mode, summary in summaries.items():
        _print_summary(f"{cfg.problem}/{summary.config.scheme} [{mode}]", summary)
        if args.out is not None:
            paths = emit_outputs(summary, Path(args.out) / mode)
            print("wrote " + ", ".join(str(p) for p in paths.values()))
    return 0


_COMMANDS = {
    "solve": _cmd_solve,
    "trial": _cmd_trial,
    "experiment": _cmd_experiment,
    "ablation": _cmd_ablation,
}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
