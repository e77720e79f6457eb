"""
Seeded experiment runs and their output directories.

A run writes into <output>/<experiment>-<hash[:12]>/: config.json,
records.jsonl and the experiment's own CSV/JSON files. Nothing written there
depends on the clock, so the same (config, seed, version) reproduces the
directory byte for byte; wall time is kept in the run registry only.
"""
from __future__ import annotations

import csv
import json
import logging
import math
import time
from pathlib import Path
from typing import Any, Callable, Iterable, Sequence

import numpy as np
from sqlalchemy.orm import Session

from .. import __version__
from ..core.config import settings
from ..core.errors import ConfigError, RNFError
from ..models.experiment_run import RunStatus
from ..schemas.experiment import ExperimentConfig, ExperimentKind, InitialKind, ResultRecord, canonical_json
from ..schemas.params import ModelKind
from .birkhoff_engine import PHI1, RING, bind, extract_z6_oracle
from .dynamics import action_drift_experiment, integrate
from .normal_form import near_identity_check, pipeline_scaling_experiment, staged_normal_form
from .phase_space import FourierState
from .rational_algebra import closure_audit, homological_audit
from .resonance_sets import Verdict, membership
from .run_service import record_run
from .stochastic_lab import (
    draw_initial_state,
    epsilon_sequence_experiment,
    fit_failure_slope,
    gamma_sweep,
    scaling_invariance_experiment,
)

logger = logging.getLogger(__name__)

DEFAULT_TRIALS = {
    ExperimentKind.SIMULATE: 1,
    ExperimentKind.SURVEY: 2000,
    ExperimentKind.SEQUENCE: 20,
    ExperimentKind.BIRKHOFF_ORACLE: 1,
    ExperimentKind.BRACKET_AUDIT: 200,
    ExperimentKind.PIPELINE: 20,
    ExperimentKind.DRIFT: 50,
}
NEAR_IDENTITY_EPS = (0.05, 0.1)
SCALING_GRID = tuple(float(e) for e in np.geomspace(0.01, 0.1, 6))

Metrics = dict[str, Any]


# --- output directory

def run_directory(cfg: ExperimentConfig) -> Path:
    root = Path(cfg.output or settings.OUTPUT_ROOT)
    return root / f"{cfg.experiment.value}-{cfg.config_hash()[:12]}"


def clean(value: Any) -> Any:
    """JSON-safe copy: NaN and infinities become None, numpy scalars become Python ones."""
    if isinstance(value, dict):
        return {str(k): clean(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [clean(v) for v in value]
    if isinstance(value, np.generic):
        value = value.item()
    if isinstance(value, float) and not math.isfinite(value):
        return None
    return value


class RunOutput:
    def __init__(self, directory: Path):
        self.directory = directory
        directory.mkdir(parents=True, exist_ok=True)
        # a rerun replaces the previous records; appends happen within one run
        (directory / "records.jsonl").write_text("", encoding="utf-8")

    def path(self, name: str) -> Path:
        return self.directory / name

    def write_json(self, name: str, payload: Any) -> Path:
        path = self.path(name)
        path.write_text(json.dumps(clean(payload), sort_keys=True, indent=2) + "\n", encoding="utf-8")
        return path

    def write_csv(self, name: str, fieldnames: Sequence[str], rows: Iterable[dict]) -> Path:
        path = self.path(name)
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.DictWriter(fh, fieldnames=list(fieldnames), lineterminator="\n", extrasaction="ignore")
            writer.writeheader()
            for row in rows:
                writer.writerow({k: _cell(v) for k, v in row.items()})
        return path

    def append_record(self, record: ResultRecord) -> None:
        with open(self.path("records.jsonl"), "a", encoding="utf-8") as fh:
            fh.write(record.to_line() + "\n")


def _cell(v: Any) -> Any:
    if isinstance(v, (dict, list)):
        return canonical_json(clean(v))
    if isinstance(v, float):
        return repr(v)
    return v


def trial_count(cfg: ExperimentConfig) -> int:
    return cfg.trials if cfg.trials is not None else DEFAULT_TRIALS[cfg.experiment]


# --- runners

def run_simulate(cfg: ExperimentConfig, out: RunOutput) -> tuple[Metrics, Metrics]:
    if cfg.initial == InitialKind.PLANE_WAVE:
        if abs(cfg.mode) > cfg.window:
            raise ConfigError(f"plane-wave mode {cfg.mode} lies outside the window {cfg.window}")
        z0 = FourierState.from_modes(cfg.window, {cfg.mode: cfg.eps})
    else:
        _, z0 = draw_initial_state(cfg.law(), cfg.eps, 0)
    traj = integrate(z0, cfg.model, cfg.integrator, s=cfg.s, keep_samples=True)
    d = traj.diagnostics
    rows = []
    for row, z in zip(d.rows(), traj.samples):
        x = z.mode(cfg.mode) if abs(cfg.mode) <= z.window else 0.0j
        rows.append({**row, "I_mode": abs(x) ** 2})
    out.write_csv("diagnostics.csv", ["t", "mass", "energy", "D_s", "norm_s", "torus_dist", "I_mode"], rows)
    metrics = {
        "horizon": cfg.integrator.horizon(),
        "mass_drift": d.mass_drift,
        "energy_drift": d.energy_drift,
        "max_D_s": d.max_action_drift,
        "max_torus_dist": d.max_torus_distance,
        "series": [{"t": r["t"], "D_s": r["D_s"]} for r in rows],
    }
    logger.info(f"simulate: mass drift {d.mass_drift:.3e}, max D_s {d.max_action_drift:.3e}")
    return metrics, {"mass_conserved": d.mass_drift <= 1e-11}


SURVEY_COLUMNS = ["gamma", "seed", "trial", "eps", "verdict", "worst_margin", "k"]


def _monotone(table: list[dict]) -> bool:
    """p_hat nondecreasing as gamma decreases, up to overlapping Wilson intervals."""
    ordered = sorted(table, key=lambda row: -row["gamma"])
    for big, small in zip(ordered, ordered[1:]):
        if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in (small["ci_high"], big["ci_low"])):
            continue
        if small["p_hat"] < big["p_hat"] and small["ci_high"] < big["ci_low"]:
            return False
    return True


def run_survey(cfg: ExperimentConfig, out: RunOutput) -> tuple[Metrics, Metrics]:
    trials = trial_count(cfg)
    if trials == 0:
        out.write_csv("survey.csv", SURVEY_COLUMNS, [])
        logger.info("survey: zero trials requested, wrote an empty table")
        return {"trials": 0, "table": []}, {}
    if trials < 100:
        raise ConfigError(f"survey needs trials = 0 or trials >= 100, got {trials}")
    q = cfg.nonresonance()
    sweep = gamma_sweep(cfg.law(), q, cfg.gammas, trials, which=cfg.which, p=cfg.model)
    rows, table = [], []
    for g, est in sweep:
        rows.extend({"gamma": g, **rec} for rec in est.records)
        table.append({"gamma": g, "failure_rate": est.failure_rate, **est.summary()})
    out.write_csv("survey.csv", SURVEY_COLUMNS, rows)
    metrics: Metrics = {"trials": trials, "table": table}
    verdicts: Metrics = {"monotone": _monotone(table)}
    inconclusive = sum(row["inconclusive"] for row in table) / (trials * len(table))
    verdicts["inconclusive_fraction"] = inconclusive
    verdicts["inconclusive_ok"] = inconclusive <= 0.05
    if len(table) >= 2:
        slope, intercept, r2 = fit_failure_slope([row["gamma"] for row in table], [row["failure_rate"] for row in table])
        metrics["fit"] = {"slope": slope, "intercept": intercept, "r_squared": r2}
        verdicts["slope_nonnegative"] = slope >= 0
        verdicts["fit_ok"] = slope >= 0 and r2 >= 0.8
    return metrics, verdicts


def run_sequence(cfg: ExperimentConfig, out: RunOutput) -> tuple[Metrics, Metrics]:
    trials = trial_count(cfg)
    law, q = cfg.law(), cfg.nonresonance()
    report = epsilon_sequence_experiment(
        cfg.eps, law, q, cfg.n_max, cfg.xn_mode,
        outer_trials=trials, inner_trials=trials, which=cfg.which, p=cfg.model,
    )
    out.write_csv("sequence.csv", ["outer", "inner", "n", "eps", "verdict"], report.records)
    metrics = report.summary()
    verdicts: Metrics = {"outer_fraction": report.outer_fraction}
    if cfg.model.model == ModelKind.NLSP and trials > 0:
        inv = scaling_invariance_experiment(law, q, (0.5, 0.25, 0.125), trials, which=cfg.which, p=cfg.model)
        metrics["scaling_invariance"] = inv
        decided = inv["base_members"] - inv["inconclusive"]
        verdicts["scaling_invariant"] = decided == 0 or inv["kept"] >= 0.99 * decided
    return metrics, verdicts


def run_birkhoff_oracle(cfg: ExperimentConfig, out: RunOutput) -> tuple[Metrics, Metrics]:
    K = cfg.window
    oracle = extract_z6_oracle(cfg.model, K)
    rows, mismatches = [], 0
    for a in range(-K, K + 1):
        for b in range(-K, K + 1):
            if a == b:
                continue
            got = oracle.beta.get((a, b), RING.zero)
            expected = -PHI1 ** 2 / (2 * (a - b) ** 2)
            match = got == expected
            mismatches += not match
            rows.append({
                "a": a, "b": b, "beta": str(got.as_expr()), "expected": str(expected.as_expr()),
                "beta_value": bind(got, cfg.model).real, "match": match,
            })
    out.write_csv("beta.csv", ["a", "b", "beta", "expected", "beta_value", "match"], rows)
    alpha_zero = not any(oracle.alpha.values())
    gamma_zero = not any(oracle.gamma.values())
    logger.info(f"Birkhoff oracle on |a| <= {K}: {len(rows) - mismatches}/{len(rows)} beta entries match")
    metrics = {"window": K, "pairs": len(rows), "mismatches": mismatches, "irreducible_terms": len(oracle.irreducible)}
    verdicts = {"beta_exact": mismatches == 0, "alpha_zero": alpha_zero, "gamma_zero": gamma_zero}
    return metrics, verdicts


def run_bracket_audit(cfg: ExperimentConfig, out: RunOutput) -> tuple[Metrics, Metrics]:
    trials = trial_count(cfg)
    rng = np.random.default_rng(cfg.seed)
    window = min(cfg.window, 4)
    closure = [rec.to_json() for rec in closure_audit(rng, cfg.model, pairs=trials, window=window)]
    homological = homological_audit(rng, cfg.model, inputs=max(trials // 4, 1) if trials else 0, window=window)
    out.write_csv("closure.csv", list(closure[0]) if closure else ["passed"], closure)
    out.write_csv("homological.csv", ["mode", "terms", "chi_tag", "weight_preserved", "residual"], homological)
    passed = sum(rec["passed"] for rec in closure)
    worst = max((row["residual"] for row in homological), default=0.0)
    metrics = {"pairs": len(closure), "passed": passed, "homological_inputs": len(homological), "worst_residual": worst}
    verdicts = {"closure": passed == len(closure), "homological": worst <= 1e-10}
    return metrics, verdicts


def run_pipeline(cfg: ExperimentConfig, out: RunOutput) -> tuple[Metrics, Metrics]:
    p = cfg.model
    staged = staged_normal_form(p, cfg.window, cfg.r)
    grid = cfg.eps_grid or SCALING_GRID
    scaling = pipeline_scaling_experiment(p, cfg.window, cfg.r, grid, s=cfg.s, seed=cfg.seed, staged=staged)
    out.write_csv("scaling.csv", ["eps", "residual"], [{"eps": e, "residual": v} for e, v in zip(scaling.eps, scaling.norms)])
    law = cfg.law()
    near, screened_out = [], 0
    for eps in NEAR_IDENTITY_EPS:
        q = cfg.nonresonance(eps=eps)
        for t in range(trial_count(cfg)):
            _, z = draw_initial_state(law, eps, t)
            if membership(z, q, cfg.which, p).verdict != Verdict.MEMBER:
                screened_out += 1
                continue
            near.append({"trial": t, **near_identity_check(staged, z, eps, p, s=cfg.s, cfg=cfg.integrator).to_json()})
    payload = {"normal_form": staged.to_json(), "scaling": scaling.to_json(), "near_identity": near}
    out.write_json("pipeline.json", payload)
    metrics = {"scaling": scaling.to_json(), "near_identity": near, "screened_out": screened_out,
               "degraded": staged.pipeline.degraded}
    verdicts = {"slope_ok": scaling.within_tolerance, "near_identity": all(row["holds"] for row in near)}
    return metrics, verdicts


DRIFT_COLUMNS = ["eps", "trial", "verdict", "worst_margin", "horizon", "max_D_s", "envelope", "passed", "max_torus_dist", "mass_drift"]


def run_drift(cfg: ExperimentConfig, out: RunOutput) -> tuple[Metrics, Metrics]:
    summary = action_drift_experiment(
        cfg.law(), cfg.model, cfg.nonresonance(), cfg.integrator,
        eps_grid=cfg.eps_grid or None, trials=trial_count(cfg), which=cfg.which,
    )
    out.write_csv("drift.csv", DRIFT_COLUMNS, summary["rows"])
    members, passed = summary["members"], summary["passed"]
    verdicts = {"pass_rate": passed / members if members else None, "drift_ok": members == 0 or passed >= 0.9 * members}
    return summary, verdicts


RUNNERS: dict[ExperimentKind, Callable[[ExperimentConfig, RunOutput], tuple[Metrics, Metrics]]] = {
    ExperimentKind.SIMULATE: run_simulate,
    ExperimentKind.SURVEY: run_survey,
    ExperimentKind.SEQUENCE: run_sequence,
    ExperimentKind.BIRKHOFF_ORACLE: run_birkhoff_oracle,
    ExperimentKind.BRACKET_AUDIT: run_bracket_audit,
    ExperimentKind.PIPELINE: run_pipeline,
    ExperimentKind.DRIFT: run_drift,
}


def run(cfg: ExperimentConfig, db: Session | None = None) -> ResultRecord:
    """Execute one configured experiment; a failing run is registered before the error propagates."""
    out = RunOutput(run_directory(cfg))
    out.write_json("config.json", cfg.hashed_fields())
    digest = cfg.config_hash()
    logger.info(f"run {cfg.experiment.value} ({digest[:12]}) into {out.directory}")
    started = time.perf_counter()
    try:
        metrics, verdicts = RUNNERS[cfg.experiment](cfg, out)
    except RNFError as exc:
        logger.error(f"run {cfg.experiment.value} ({digest[:12]}) failed: {exc}")
        if db is not None:
            record_run(
                db, experiment=cfg.experiment.value, config_hash=digest, version=__version__, seed=cfg.seed,
                status=RunStatus.FAILED, wall_time=time.perf_counter() - started, error=str(exc),
                output_dir=str(out.directory),
            )
        raise
    wall = time.perf_counter() - started
    record = ResultRecord(
        experiment=cfg.experiment, config_hash=digest, version=__version__, seed=cfg.seed,
        metrics=clean(metrics), verdicts=clean(verdicts), wall_time=wall,
    )
    out.append_record(record)
    if db is not None:
        record_run(
            db, experiment=cfg.experiment.value, config_hash=digest, version=__version__, seed=cfg.seed,
            wall_time=wall, metrics={"metrics": record.metrics, "verdicts": record.verdicts},
            output_dir=str(out.directory),
        )
    logger.info(f"run {cfg.experiment.value} done in {wall:.2f}s: {record.verdicts}")
    return record


def load_records(directory: str | Path) -> list[ResultRecord]:
    path = Path(directory) / "records.jsonl"
    if not path.exists():
        raise ConfigError(f"no records.jsonl in {directory}")
    return [ResultRecord.from_line(line) for line in path.read_text(encoding="utf-8").splitlines() if line.strip()]
