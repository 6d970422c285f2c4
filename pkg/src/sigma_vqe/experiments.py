"""Experiment drivers behind the command-line front end.

Each driver takes an :class:`ExperimentConfig`, returns in-memory results and,
when given an output directory, writes CSV traces plus a JSON summary. Traces
are byte-identical for identical configs: timing is only recorded when
``run.record_timing`` is set, and every random stream is derived from the
master seed by key rather than by call order.
"""

from __future__ import annotations

import csv
import io
import json
import logging
import math
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy import optimize, stats

from . import __version__, module_versions
from .ansatz import AnsatzSpec, build_ansatz, init_params
from .circuit import NoiseModel, apply_circuit, apply_circuit_noisy, simulate, state_fidelity_to_rho
from .config import ExperimentConfig, validate
from .diagnostics import (eigendecompose, entanglement_entropy, fidelity, find_scar, gap_ratio,
                          mid_spectrum_min_entropy)
from .estimator import CostSpec, build_grouping, derived_rng, estimate_moments, pure_source, sample_shots, u_statistic
from .evaluators import Evaluator
from .models import ScarModel, build_model
from .optimizers import (AdamState, SpsaHyper, SpsaState, adam_step, cost_gradient, spsa_calibrate,
                         spsa_step)

log = logging.getLogger(__name__)

TRACE_COLUMNS = ("iteration", "cost_estimate", "cost_exact", "fidelity", "grad_norm_or_schedule",
                 "shots_used", "wall_ms")
NOISY_EXTRA_COLUMNS = ("noisy_fidelity",)
SWEEP_COLUMNS = ("index", "e_target", "status", "final_cost", "inverse_cost", "final_fidelity",
                 "iterations", "seed", "error")
BUDGET_COLUMNS = ("shots", "repetition", "seed", "status", "final_fidelity", "final_infidelity",
                  "final_cost_exact", "shots_used", "flags", "error")
NOISY_COLUMNS = ("shots_per_evaluation", "iterations", "status", "spearman_rho", "spearman_p",
                 "fidelity_start", "fidelity_end", "fidelity_improving", "calibration_shots",
                 "shots_used", "error")

INVERSE_COST_REG = 1e-9
HIGH_VARIANCE_SHOTS = 100
SHOT_POLICY = ("S shots per expectation-value evaluation; a PSR iteration uses 2P+1 evaluations "
               "and the cumulative total is logged in shots_used")

# keys for the derived seed streams
_STREAM_INIT = 0
_STREAM_SPSA_CAL = 90
_STREAM_SPSA_DIR = 91
_STREAM_AUDIT = 100
_STREAM_NOISE_CAL = 110


def derived_seed(master: int, *keys: int) -> int:
    """A 63-bit integer seed derived from ``(master, *keys)``."""
    ss = np.random.SeedSequence([int(master), *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))


def inverse_cost(c: float) -> float:
    return 1.0 / (c + INVERSE_COST_REG)


# -- file output ---------------------------------------------------------------------

def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    return str(v)


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def write_csv(path, columns: Sequence[str], rows: Sequence[dict]) -> Path:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(columns)
    for row in rows:
        writer.writerow([_fmt(row.get(c)) for c in columns])
    path = Path(path)
    _atomic_write(path, buf.getvalue())
    return path


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        f = float(obj)
        return f if math.isfinite(f) else None
    return obj


def write_json(path, data: dict) -> Path:
    path = Path(path)
    _atomic_write(path, json.dumps(_jsonable(data), indent=2, sort_keys=True) + "\n")
    return path


def _header(cfg: ExperimentConfig, command: str) -> dict:
    return {"command": command, "version": __version__, "module_versions": module_versions(),
            "config": cfg.to_dict()}


# -- shared setup --------------------------------------------------------------------

@dataclass
class Prepared:
    """Model, ansatz and lazily built measurement data, shared across runs."""
    model: ScarModel
    ansatz: AnsatzSpec
    noise: NoiseModel
    _plan: object = None

    def plan(self):
        if self._plan is None:
            self._plan = build_grouping(self.model.hamiltonian, self.model.hamiltonian_squared)
        return self._plan


def calibrate_noise(ansatz: AnsatzSpec, target_fidelity: float, readout_flip: float = 0.0,
                    p1_ratio: float = 0.1, n_samples: int = 8, seed: int = 0) -> NoiseModel:
    """Tune ``p2`` (with ``p1 = p1_ratio * p2``) so the mean state fidelity of the noisy
    circuit to its ideal output, over random parameter draws, equals the target."""
    rng = derived_rng(seed, _STREAM_NOISE_CAL)
    thetas = rng.uniform(-np.pi, np.pi, size=(n_samples, ansatz.parameter_count))
    ideal = simulate(ansatz, thetas)

    def mean_fid(p2: float) -> float:
        noise = NoiseModel(min(1.0, p1_ratio * p2), p2, readout_flip)
        return float(np.mean([state_fidelity_to_rho(ideal[k], apply_circuit_noisy(ansatz, thetas[k], noise).matrix)
                              for k in range(n_samples)]))

    if mean_fid(1.0) > target_fidelity:
        raise ValueError(f"fidelity {target_fidelity} is unreachable even at p2 = 1")
    p2 = optimize.brentq(lambda p: mean_fid(p) - target_fidelity, 0.0, 1.0, xtol=1e-10)
    return NoiseModel(min(1.0, p1_ratio * p2), p2, readout_flip)


def prepare(cfg: ExperimentConfig) -> Prepared:
    model = build_model(cfg.model.kind, cfg.model.spec())
    ansatz = build_ansatz(cfg.model.n_qubits, cfg.ansatz.depth)
    e = cfg.evaluator
    if e.mode == "shots-noisy" and e.calibrate_fidelity is not None:
        noise = calibrate_noise(ansatz, e.calibrate_fidelity, e.readout_flip, seed=cfg.run.seed)
        log.info("calibrated noise: p1=%.4g p2=%.4g", noise.p1, noise.p2)
    else:
        noise = NoiseModel(e.p1, e.p2, e.readout_flip) if e.mode == "shots-noisy" else NoiseModel()
    return Prepared(model, ansatz, noise)


def _evaluator(cfg: ExperimentConfig, prep: Prepared) -> Evaluator:
    spec = CostSpec(cfg.cost.a, cfg.cost.b, cfg.cost.e_target)
    if cfg.evaluator.mode == "exact":
        return Evaluator(prep.ansatz, prep.model.hamiltonian, spec)
    return Evaluator(prep.ansatz, prep.model.hamiltonian, spec, cfg.evaluator.mode,
                     shots=cfg.evaluator.shots, seed=cfg.run.seed, noise=prep.noise,
                     h2=prep.model.hamiltonian_squared, plan=prep.plan())


# -- single run ----------------------------------------------------------------------

@dataclass
class RunResult:
    rows: list[dict]
    summary: dict
    theta: np.ndarray
    trace_path: Path | None = None
    summary_path: Path | None = None

    @property
    def final(self) -> dict:
        return self.summary["final"]


def run_vqe(cfg: ExperimentConfig, out_dir=None, prepared: Prepared | None = None,
            trace_name: str = "trace.csv", summary_name: str | None = "summary.json") -> RunResult:
    """One optimization from ``|0...0>`` with small random angles."""
    validate(cfg)
    prep = prepared or prepare(cfg)
    ev = _evaluator(cfg, prep)
    ansatz, model = prep.ansatz, prep.model
    scar = model.scar_state
    master = cfg.run.seed
    noisy = cfg.evaluator.mode == "shots-noisy"
    timing = cfg.run.record_timing
    theta = init_params(ansatz.parameter_count, cfg.ansatz.init_scale, derived_seed(master, _STREAM_INIT))
    theta0 = theta.copy()

    def replay(th) -> dict:
        psi = simulate(ansatz, th[None, :])
        eh, eh2 = ev.exact_moments_of_states(psi)
        out = {"cost_exact": float(ev.spec.assemble(eh[0], eh2[0], eh[0] ** 2)), "energy": float(eh[0]),
               "fidelity": fidelity(psi[0], scar) if scar is not None else None}
        if noisy and scar is not None:
            rho = apply_circuit_noisy(ansatz, th, prep.noise).matrix
            out["noisy_fidelity"] = state_fidelity_to_rho(scar.amplitudes, rho)
        return out

    rows: list[dict] = []
    opt = cfg.optimizer
    optimizer_info: dict = {"name": opt.name}
    calibration_shots = 0
    clock = time.perf_counter

    if opt.name == "adam":
        state = AdamState.fresh(ansatz.parameter_count, opt.lr, opt.beta1, opt.beta2, opt.eps)
        optimizer_info.update(lr=opt.lr, beta1=opt.beta1, beta2=opt.beta2, eps=opt.eps)
        for t in range(cfg.run.iterations):
            start = clock()
            g = cost_gradient(ansatz, theta, ev, iteration=t)
            state, update = adam_step(state, g.gradient)
            rep = replay(theta)
            rows.append({"iteration": t, "cost_estimate": g.cost, "cost_exact": rep["cost_exact"],
                         "fidelity": rep["fidelity"], "noisy_fidelity": rep.get("noisy_fidelity"),
                         "grad_norm_or_schedule": float(np.linalg.norm(g.gradient)),
                         "shots_used": ev.shots_used,
                         "wall_ms": (clock() - start) * 1e3 if timing else None})
            theta = theta + update
    else:
        def cost_fn(thetas, iteration, role):
            return ev.costs(thetas, iteration, role)

        if opt.calibrate:
            hyper, n_cal = spsa_calibrate(cost_fn, theta, max(cfg.run.iterations, 1),
                                          derived_rng(master, _STREAM_SPSA_CAL))
            calibration_shots = ev.shots_used
            ev.shots_used = 0
            optimizer_info["calibration_evaluations"] = n_cal
        else:
            hyper = SpsaHyper(opt.a0, opt.c0, opt.A, opt.gamma, opt.alpha)
        optimizer_info.update(a0=hyper.a0, c0=hyper.c0, A=hyper.A, gamma=hyper.gamma, alpha=hyper.alpha)
        state = SpsaState(hyper)
        rng = derived_rng(master, _STREAM_SPSA_DIR)
        for t in range(cfg.run.iterations):
            start = clock()
            state, new_theta, rec = spsa_step(state, theta, cost_fn, rng)
            rep = replay(theta)
            rows.append({"iteration": t, "cost_estimate": rec.c_app, "cost_exact": rep["cost_exact"],
                         "fidelity": rep["fidelity"], "noisy_fidelity": rep.get("noisy_fidelity"),
                         "grad_norm_or_schedule": f"{rec.a_t!r}/{rec.c_t!r}",
                         "shots_used": ev.shots_used,
                         "wall_ms": (clock() - start) * 1e3 if timing else None})
            theta = new_theta

    # final row: replay only, so shot modes spend nothing beyond the optimizer's budget
    rep = replay(theta)
    final_estimate = rep["cost_exact"] if cfg.evaluator.mode == "exact" else None
    rows.append({"iteration": cfg.run.iterations, "cost_estimate": final_estimate,
                 "cost_exact": rep["cost_exact"], "fidelity": rep["fidelity"],
                 "noisy_fidelity": rep.get("noisy_fidelity"), "grad_norm_or_schedule": None,
                 "shots_used": ev.shots_used, "wall_ms": None})

    flags = []
    if cfg.evaluator.mode != "exact" and cfg.evaluator.shots < HIGH_VARIANCE_SHOTS:
        flags.append("high_estimator_variance")
    fid = rep["fidelity"]
    summary = _header(cfg, "run")
    summary.update({
        "seeds": {"master": master, "model": cfg.model.seed,
                  "init": derived_seed(master, _STREAM_INIT)},
        "model": {"kind": model.kind, "n_qubits": model.n_qubits, "scar_known": scar is not None,
                  "scar_energy": model.scar_energy if scar is not None else None,
                  "n_terms": len(model.hamiltonian)},
        "ansatz": ansatz.to_dict(),
        "evaluator": ev.describe(),
        "optimizer": optimizer_info,
        "noise": {"p1": prep.noise.p1, "p2": prep.noise.p2, "readout_flip": prep.noise.readout_flip},
        "initial": {"cost_exact": rows[0]["cost_exact"], "fidelity": rows[0]["fidelity"]},
        "final": {"cost_estimate": final_estimate, "cost_exact": rep["cost_exact"],
                  "energy": rep["energy"], "fidelity": fid,
                  "infidelity": None if fid is None else 1.0 - fid,
                  "inverse_cost": inverse_cost(rep["cost_exact"]),
                  "noisy_fidelity": rep.get("noisy_fidelity")},
        "iterations": cfg.run.iterations,
        "evaluations": ev.evaluations,
        "shots_used": ev.shots_used,
        "calibration_shots": calibration_shots,
        "shot_policy": SHOT_POLICY,
        "flags": flags,
        "initial_theta": theta0,
        "final_theta": theta,
    })
    result = RunResult(rows, summary, theta)
    if out_dir is not None:
        out = Path(out_dir)
        cols = TRACE_COLUMNS + (NOISY_EXTRA_COLUMNS if noisy else ())
        result.trace_path = write_csv(out / trace_name, cols, rows)
        if summary_name:
            result.summary_path = write_json(out / summary_name, summary)
    return result


# -- sweeps and studies ------------------------------------------------------------

def _map(fn: Callable, items: list, workers: int) -> list:
    if workers <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, items))


def _sweep_point(args) -> dict:
    k, e, cfg, out_dir, prep = args
    point = cfg.replace(cost={"e_target": float(e)})
    row = {"index": k, "e_target": float(e), "iterations": cfg.run.iterations, "seed": cfg.run.seed}
    try:
        res = run_vqe(point, None if out_dir is None else Path(out_dir) / "points", prep,
                      trace_name=f"point_{k:03d}.csv", summary_name=None)
    except Exception as exc:  # a failed point becomes a status row
        log.warning("sweep point %d (E_tar=%g) failed: %s", k, e, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row
    c = res.final["cost_exact"]
    row.update(status="ok", final_cost=c, inverse_cost=inverse_cost(c), final_fidelity=res.final["fidelity"])
    return row


@dataclass
class SweepResult:
    rows: list[dict]
    summary: dict
    path: Path | None = None

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows], dtype=float)


def separation_ratios(costs: Sequence[float]) -> np.ndarray:
    """For each point, the median cost over all other points divided by its own cost."""
    c = np.asarray(costs, dtype=float)
    out = np.empty(len(c))
    for k in range(len(c)):
        others = np.delete(c, k)
        others = others[np.isfinite(others)]
        out[k] = np.median(others) / c[k] if len(others) and c[k] > 0 else np.nan
    return out


def half_max_width(x: Sequence[float], y: Sequence[float]) -> float:
    """Width of the contiguous region around the maximum where ``y >= max/2``,
    with linear interpolation at the crossings (clipped to the grid ends)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = int(np.nanargmax(y))
    half = y[k] / 2
    lo = k
    while lo > 0 and y[lo - 1] >= half:
        lo -= 1
    hi = k
    while hi < len(y) - 1 and y[hi + 1] >= half:
        hi += 1
    left = x[lo]
    if lo > 0:
        left = x[lo - 1] + (half - y[lo - 1]) / (y[lo] - y[lo - 1]) * (x[lo] - x[lo - 1])
    right = x[hi]
    if hi < len(y) - 1:
        right = x[hi] + (y[hi] - half) / (y[hi] - y[hi + 1]) * (x[hi + 1] - x[hi])
    return float(right - left)


def sweep_targets(cfg: ExperimentConfig, grid: Sequence[float] | None = None, out_dir=None,
                  prepared: Prepared | None = None) -> SweepResult:
    """Independent runs over a grid of target energies on one shared model instance."""
    validate(cfg)
    grid = list(cfg.sweep.values() if grid is None else grid)
    if not grid:
        raise ValueError("the target-energy grid is empty")
    workers = cfg.run.workers
    prep = prepared or prepare(cfg)
    items = [(k, e, cfg, out_dir, None if workers > 1 else prep) for k, e in enumerate(grid)]
    rows = _map(_sweep_point, items, workers)

    ok = [r for r in rows if r["status"] == "ok"]
    summary = _header(cfg, "sweep")
    summary.update({"grid": grid, "n_failed": len(rows) - len(ok),
                    "scar_energy": prep.model.scar_energy if prep.model.scar_state is not None else None})
    if len(ok) >= 2:
        costs = np.array([r["final_cost"] if r["status"] == "ok" else np.nan for r in rows])
        ratios = separation_ratios(costs)
        k0 = int(np.argmin(np.abs(np.asarray(grid) - prep.model.scar_energy)))
        summary.update({"separation_ratios": ratios, "max_separation_ratio": float(np.nanmax(ratios)),
                        "target_index": k0, "target_separation_ratio": float(ratios[k0])})
        xs = [r["e_target"] for r in ok]
        summary["inverse_cost_half_width"] = half_max_width(xs, [r["inverse_cost"] for r in ok])
        if all(r["final_fidelity"] is not None for r in ok):
            summary["fidelity_half_width"] = half_max_width(xs, [r["final_fidelity"] for r in ok])
    result = SweepResult(rows, summary)
    if out_dir is not None:
        result.path = write_csv(Path(out_dir) / "sweep.csv", SWEEP_COLUMNS, rows)
        write_json(Path(out_dir) / "sweep_summary.json", summary)
    return result


def _budget_point(args) -> dict:
    shots, rep, seed, cfg, out_dir, prep = args
    label = "exact" if shots is None else int(shots)
    row = {"shots": label, "repetition": rep, "seed": seed}
    if shots is None:
        point = cfg.replace(evaluator={"mode": "exact", "shots": 0}, run={"seed": seed})
    else:
        point = cfg.replace(evaluator={"mode": "shots-pure", "shots": int(shots)}, run={"seed": seed})
    try:
        res = run_vqe(point, None if out_dir is None else Path(out_dir) / "traces", prep,
                      trace_name=f"S{label}_rep{rep}.csv", summary_name=None)
    except Exception as exc:
        log.warning("budget point S=%s rep=%d failed: %s", label, rep, exc)
        row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
        return row
    f = res.final["fidelity"]
    row.update(status="ok", final_fidelity=f, final_infidelity=None if f is None else 1 - f,
               final_cost_exact=res.final["cost_exact"], shots_used=res.summary["shots_used"],
               flags=";".join(res.summary["flags"]))
    return row


def count_inversions(values_by_budget: Sequence[float]) -> int:
    """Adjacent pairs, ordered by increasing budget, where infidelity goes up."""
    v = np.asarray(values_by_budget, dtype=float)
    return int(np.sum(v[1:] > v[:-1]))


@dataclass
class BudgetStudy:
    rows: list[dict]
    summary: dict
    path: Path | None = None


def shot_budget_study(cfg: ExperimentConfig, shots: Sequence[int] | None = None,
                      repetitions: int | None = None, include_exact: bool | None = None,
                      out_dir=None) -> BudgetStudy:
    """Runs over shot budgets with matched seeds per repetition, plus an exact baseline."""
    validate(cfg)
    shots = sorted(int(s) for s in (cfg.study.shots if shots is None else shots))
    reps = cfg.study.repetitions if repetitions is None else int(repetitions)
    with_exact = cfg.study.include_exact if include_exact is None else include_exact
    prep = prepare(cfg.replace(evaluator={"mode": "shots-pure", "shots": max(shots + [2])}))
    workers = cfg.run.workers
    items = []
    for rep in range(reps):
        seed = derived_seed(cfg.run.seed, rep)
        budgets: list = ([None] if with_exact else []) + list(shots)
        for s in budgets:
            items.append((s, rep, seed, cfg, out_dir, None if workers > 1 else prep))
    rows = _map(_budget_point, items, workers)

    summary = _header(cfg, "shots")
    summary.update({"shots": shots, "repetitions": reps, "include_exact": with_exact,
                    "shot_policy": SHOT_POLICY})
    per_rep = []
    for rep in range(reps):
        mine = {r["shots"]: r for r in rows if r["repetition"] == rep and r["status"] == "ok"}
        entry = {"repetition": rep, "seed": derived_seed(cfg.run.seed, rep)}
        if all(s in mine and mine[s]["final_infidelity"] is not None for s in shots):
            entry["inversions"] = count_inversions([mine[s]["final_infidelity"] for s in shots])
        if with_exact and "exact" in mine and shots and shots[-1] in mine \
                and mine["exact"]["final_fidelity"] is not None:
            entry["largest_budget_gap_to_exact"] = abs(mine[shots[-1]]["final_fidelity"]
                                                       - mine["exact"]["final_fidelity"])
        per_rep.append(entry)
    summary["per_repetition"] = per_rep
    if all("inversions" in e for e in per_rep):
        summary["total_inversions"] = sum(e["inversions"] for e in per_rep)
    gaps = [e["largest_budget_gap_to_exact"] for e in per_rep if "largest_budget_gap_to_exact" in e]
    if gaps:
        summary["max_gap_to_exact"] = max(gaps)
    summary["flags"] = sorted({f for r in rows for f in (r.get("flags") or "").split(";") if f})
    result = BudgetStudy(rows, summary)
    if out_dir is not None:
        result.path = write_csv(Path(out_dir) / "budget.csv", BUDGET_COLUMNS, rows)
        write_json(Path(out_dir) / "budget_summary.json", summary)
    return result


# -- estimator audit -----------------------------------------------------------------

@dataclass
class AuditReport:
    summary: dict
    samples: dict = field(repr=False, default_factory=dict)


def _stats(x: np.ndarray, exact: float, shots: int) -> dict:
    n = len(x)
    mean = float(np.mean(x))
    se = float(np.std(x, ddof=1) / np.sqrt(n)) if n > 1 else None
    return {"exact": exact, "mc_mean": mean, "mc_se": se, "repetitions": n, "S": shots,
            "bias": mean - exact, "z": (mean - exact) / se if se else None}


def estimator_audit(cfg: ExperimentConfig, repetitions: int | None = None, shots: int | None = None,
                    theta=None, variance_shots: Sequence[int] | None = None, out_dir=None) -> AuditReport:
    """Monte-Carlo check of the moment and cost estimators against exact values at fixed angles."""
    validate(cfg)
    reps = cfg.study.audit_repetitions if repetitions is None else int(repetitions)
    s_main = cfg.study.audit_shots if shots is None else int(shots)
    var_shots = list(cfg.study.variance_shots if variance_shots is None else variance_shots)
    model = build_model(cfg.model.kind, cfg.model.spec())
    ansatz = build_ansatz(cfg.model.n_qubits, cfg.ansatz.depth)
    master = cfg.run.seed
    if theta is None:
        theta = init_params(ansatz.parameter_count, cfg.ansatz.init_scale, derived_seed(master, _STREAM_INIT))
    theta = np.asarray(theta, dtype=float)
    h, h2 = model.hamiltonian, model.hamiltonian_squared
    spec = CostSpec(cfg.cost.a, cfg.cost.b, cfg.cost.e_target)
    plan = build_grouping(h, h2)
    state = apply_circuit(ansatz, theta)
    source = pure_source(state)
    ev = Evaluator(ansatz, h, spec)
    eh, eh2 = (float(v[0]) for v in ev.exact_moments_of_states(state.amplitudes[None, :]))
    exact = {"h": eh, "h2": eh2, "hsq": eh * eh, "cost": float(spec.assemble(eh, eh2, eh * eh))}

    def draw(s: int, n: int) -> dict[str, np.ndarray]:
        out = {k: np.empty(n) for k in ("h", "h2", "hsq", "cost", "naive")}
        for r in range(n):
            batch = sample_shots(source, plan, s, derived_rng(master, _STREAM_AUDIT, s, r))
            m = estimate_moments(batch, plan)
            hsq = u_statistic(m.y_values, m.shots, m.y_counts) if s >= 2 else float("nan")
            out["h"][r], out["h2"][r], out["hsq"][r] = m.h_hat, m.h2_hat, hsq
            out["cost"][r] = spec.assemble(m.h_hat, m.h2_hat, hsq)
            out["naive"][r] = m.h_hat ** 2
        return out

    main = draw(s_main, reps)
    report = {name: _stats(main[name], exact[name], s_main) for name in ("h", "h2", "hsq", "cost")}
    naive = _stats(main["naive"], exact["hsq"], s_main)
    paired = main["naive"] - main["hsq"]
    naive["paired_bias"] = float(np.mean(paired))
    naive["paired_se"] = float(np.std(paired, ddof=1) / np.sqrt(reps)) if reps > 1 else None
    report["naive_hsq"] = naive

    variance_table = []
    samples = {s_main: main}
    for s in var_shots:
        data = samples.get(s) or draw(int(s), reps)
        samples[s] = data
        var = float(np.var(data["cost"], ddof=1)) if reps > 1 else None
        variance_table.append({"shots": int(s), "var_cost": var,
                               "s_times_var": None if var is None else var * s})
    if len(variance_table) >= 2 and reps > 1:
        a, b = variance_table[0], variance_table[-1]
        report["variance_ratio"] = a["var_cost"] / b["var_cost"]
        report["variance_ratio_expected"] = b["shots"] / a["shots"]

    flags = []
    if reps < 2:
        flags.append("se_undefined")
    summary = _header(cfg, "audit")
    summary.update({"repetitions": reps, "shots": s_main, "theta": theta, "n_bases": plan.n_bases,
                    "exact": exact, "estimators": report, "variance_table": variance_table,
                    "flags": flags})
    if out_dir is not None:
        write_json(Path(out_dir) / "audit.json", summary)
        cols = ("quantity", "exact", "mc_mean", "mc_se", "bias", "z", "repetitions", "S")
        rows = [{"quantity": k, **v} for k, v in report.items() if isinstance(v, dict)]
        write_csv(Path(out_dir) / "audit.csv", cols, rows)
        write_csv(Path(out_dir) / "audit_variance.csv", ("shots", "var_cost", "s_times_var"), variance_table)
    return AuditReport(summary, samples)


# -- noisy budget study --------------------------------------------------------------

def trend_statistics(rows: Sequence[dict], window_fraction: float = 0.1) -> dict:
    """Spearman trend of the logged proxy cost and start/end fidelity windows."""
    steps = [r for r in rows if r.get("cost_estimate") is not None and r.get("grad_norm_or_schedule")]
    out: dict = {"spearman_rho": None, "spearman_p": None, "fidelity_start": None,
                 "fidelity_end": None, "fidelity_improving": None}
    if len(steps) >= 3:
        res = stats.spearmanr([r["iteration"] for r in steps], [r["cost_estimate"] for r in steps])
        out["spearman_rho"], out["spearman_p"] = float(res.statistic), float(res.pvalue)
    fids = [r["fidelity"] for r in rows if r.get("fidelity") is not None]
    if len(fids) >= 2:
        w = max(1, int(round(window_fraction * len(fids))))
        out["fidelity_start"] = float(np.mean(fids[:w]))
        out["fidelity_end"] = float(np.mean(fids[-w:]))
        out["fidelity_improving"] = out["fidelity_end"] > out["fidelity_start"]
    return out


@dataclass
class NoisyStudy:
    rows: list[dict]
    summary: dict
    runs: dict = field(repr=False, default_factory=dict)
    path: Path | None = None


def noisy_budget_study(cfg: ExperimentConfig, shots: Sequence[int] | None = None,
                       total_budget: int | None = None, out_dir=None) -> NoisyStudy:
    """SPSA under a fixed total shot budget for several shots-per-evaluation settings."""
    validate(cfg)
    shots = [int(s) for s in (cfg.study.shots if shots is None else shots)]
    total = cfg.study.total_budget if total_budget is None else int(total_budget)
    base = cfg.replace(evaluator={"mode": "shots-noisy"}, optimizer={"name": "spsa"})
    prep = prepare(base.replace(evaluator={"shots": max(shots + [2])}))
    rows, runs = [], {}
    for s in shots:
        iters = total // (2 * s)
        row = {"shots_per_evaluation": s, "iterations": iters}
        point = base.replace(evaluator={"shots": s}, run={"iterations": iters})
        try:
            res = run_vqe(point, None if out_dir is None else Path(out_dir) / "traces", prep,
                          trace_name=f"noisy_S{s}.csv", summary_name=None)
        except Exception as exc:
            log.warning("noisy study S=%d failed: %s", s, exc)
            row.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            rows.append(row)
            continue
        runs[s] = res
        row.update(status="ok", calibration_shots=res.summary["calibration_shots"],
                   shots_used=res.summary["shots_used"], **trend_statistics(res.rows))
        rows.append(row)
    summary = _header(cfg, "noisy")
    summary.update({"total_budget": total, "shots": shots,
                    "noise": {"p1": prep.noise.p1, "p2": prep.noise.p2, "readout_flip": prep.noise.readout_flip},
                    "results": rows})
    result = NoisyStudy(rows, summary, runs)
    if out_dir is not None:
        result.path = write_csv(Path(out_dir) / "noisy.csv", NOISY_COLUMNS, rows)
        write_json(Path(out_dir) / "noisy_summary.json", summary)
    return result


# -- spectral diagnosis --------------------------------------------------------------

LOW_ENTROPY = 1e-8
ZERO_ENERGY_WINDOW = 1e-6


def diagnose_model(cfg: ExperimentConfig, out_dir=None) -> dict:
    """Full spectrum with half-cut entropies, scar identification and gap ratio."""
    validate(cfg)
    model = build_model(cfg.model.kind, cfg.model.spec())
    spectrum = eigendecompose(model.hamiltonian)
    evals, ents = spectrum.eigenvalues, spectrum.entropies
    k = find_scar(spectrum, model.scar_energy)
    low = np.flatnonzero((ents < LOW_ENTROPY) & (np.abs(evals - model.scar_energy) < ZERO_ENERGY_WINDOW))
    scar = {"index": k, "energy": float(evals[k]), "entropy": float(ents[k])}
    if model.scar_state is not None:
        scar["fidelity_to_embedded"] = fidelity(spectrum.eigenvectors[:, k], model.scar_state)
        scar["embedded_state_entropy"] = entanglement_entropy(model.scar_state)
    summary = _header(cfg, "diagnose")
    summary.update({
        "n_levels": len(evals), "cut": spectrum.cut, "gap_ratio": gap_ratio(spectrum),
        "scar_candidate": scar, "low_entropy_zero_energy_count": len(low),
        "mid_spectrum_min_entropy": mid_spectrum_min_entropy(spectrum),
        "energy_range": [float(evals[0]), float(evals[-1])],
    })
    if out_dir is not None:
        Path(out_dir).mkdir(parents=True, exist_ok=True)
        spectrum.write_csv(Path(out_dir) / "spectrum.csv")
        write_json(Path(out_dir) / "diagnose_summary.json", summary)
    summary["spectrum"] = spectrum
    return summary
