"""Command-line harness: phantom generation, sweeps, training, reports.

Subcommands:
  phantom gen   build phantom files (single patient or a cohort)
  sweep         exhaustive 468-combination sweep per phantom -> CSV + SVG
  train         PPO training against existing sweep tables -> log, weights, SVG
  compare       training-vs-exhaustive efficiency summary -> CSV
  impact        one-parameter-at-a-time deviations from the max-dose optimum
  fit-plane     planar regression of max d' on (BMI, lesion size)
  threshold     lowest-dose protocol meeting a detection-accuracy target

Global flags: --config <toml>, --out <dir>, --threads <n>, --seed <int>.
Exit codes: 0 success, 2 input error, 3 numerical failure.
Every run is reproducible from its config: seeds are explicit everywhere and
wall-clock time never feeds any computation.
"""

from __future__ import annotations

import argparse
import csv
import math
import os
import sys
from dataclasses import dataclass, field, fields as dc_fields, replace as dc_replace
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.special import ndtri

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from . import phantom as phantom_mod
from .iq_metrics import MetricError
from .optimizer import (
    OptimizerError,
    PpoHyper,
    SweepTable,
    TrainLog,
    efficiency_report,
    exhaustive_search,
    save_policy,
    train as train_agent,
)
from .phantom import PatientAttrs, Phantom, read_phantom, write_phantom
from .protocol_space import AXES, KV_VALUES, MAS_VALUES, ProtocolParams
from .vct_engine import ScannerConfig

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_NUMERICAL = 3


class InputError(ValueError):
    """Bad file, flag, or config value; maps to exit code 2."""


# ---------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RunConfig:
    scanner: ScannerConfig = field(default_factory=ScannerConfig)
    objective: str = "mean"
    hyper: PpoHyper = field(default_factory=PpoHyper)
    train_steps: int = 300
    cohort_size: int = 3
    n_lesions: int | None = None  # None: cohort draws 1-6 per patient
    eval_seed: int | None = None  # reward-landscape seed (sweep)
    train_seed: int | None = None  # agent init/sampling seed
    phantom_seed: int | None = None  # generation seed
    out_dir: str = "."
    threads: int = 1

    def require(self, name: str) -> int:
        value = getattr(self, name)
        if value is None:
            raise InputError(
                f"{name} is required: pass --seed or set it in the config file "
                f"(seeds are always explicit)"
            )
        return value


def _build(cls, table: dict, where: str):
    names = {f.name for f in dc_fields(cls)}
    unknown = set(table) - names
    if unknown:
        raise InputError(f"unknown key(s) {sorted(unknown)} in [{where}]")
    return cls(**table)


def load_config(path: str | os.PathLike | None) -> RunConfig:
    if path is None:
        return RunConfig()
    p = Path(path)
    if not p.is_file():
        raise InputError(f"config file {p} does not exist")
    with open(p, "rb") as f:
        try:
            data = tomllib.load(f)
        except tomllib.TOMLDecodeError as exc:
            raise InputError(f"config {p} is not valid TOML: {exc}") from None
    known_sections = {"scanner", "training", "evaluation", "cohort", "output"}
    unknown = set(data) - known_sections
    if unknown:
        raise InputError(f"unknown config section(s) {sorted(unknown)}")
    scanner = _build(ScannerConfig, data.get("scanner", {}), "scanner")
    training = dict(data.get("training", {}))
    train_steps = int(training.pop("total_steps", 300))
    train_seed = training.pop("seed", None)
    hyper = _build(PpoHyper, training, "training")
    evaluation = dict(data.get("evaluation", {}))
    objective = evaluation.pop("objective", "mean")
    eval_seed = evaluation.pop("seed", None)
    if evaluation:
        raise InputError(f"unknown key(s) {sorted(evaluation)} in [evaluation]")
    cohort = dict(data.get("cohort", {}))
    cohort_size = int(cohort.pop("size", 3))
    phantom_seed = cohort.pop("seed", None)
    n_lesions = cohort.pop("n_lesions", None)
    if cohort:
        raise InputError(f"unknown key(s) {sorted(cohort)} in [cohort]")
    output = dict(data.get("output", {}))
    out_dir = str(output.pop("dir", "."))
    threads = int(output.pop("threads", 1))
    if output:
        raise InputError(f"unknown key(s) {sorted(output)} in [output]")
    return RunConfig(
        scanner=scanner,
        objective=objective,
        hyper=hyper,
        train_steps=train_steps,
        cohort_size=cohort_size,
        n_lesions=None if n_lesions is None else int(n_lesions),
        eval_seed=None if eval_seed is None else int(eval_seed),
        train_seed=None if train_seed is None else int(train_seed),
        phantom_seed=None if phantom_seed is None else int(phantom_seed),
        out_dir=out_dir,
        threads=threads,
    )


# ---------------------------------------------------------------------------
# small shared helpers


def _load_phantom(path: str) -> Phantom:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"phantom file {p} does not exist")
    with open(p, "rb") as f:
        return read_phantom(f)


def _load_table(path: str) -> SweepTable:
    p = Path(path)
    if not p.is_file():
        raise InputError(f"sweep CSV {p} does not exist")
    return SweepTable.from_csv(p)


def _out_dir(args) -> Path:
    d = Path(args.out if args.out is not None else args.run_config.out_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _mpl():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    plt.rcParams["svg.hashsalt"] = "ct-protopt"
    return plt


# ---------------------------------------------------------------------------
# phantom gen


def cmd_phantom_gen(args) -> int:
    cfg = args.run_config
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else cfg.phantom_seed
    if seed is None:
        raise InputError("phantom gen needs an explicit seed (--seed or [cohort].seed)")
    geom = {}
    if args.fov is not None:
        geom["fov_mm"] = args.fov
    if args.spacing is not None:
        geom["spacing_mm"] = args.spacing
    written: list[Path] = []
    if args.cohort is not None:
        members = phantom_mod.cohort(args.cohort, seed, **geom)
        for _, ph in members:
            path = out / f"{ph.attrs.patient_id}.ctph"
            with open(path, "wb") as f:
                write_phantom(ph, f)
            written.append(path)
    else:
        if args.bmi is None or args.sex is None or args.patient_id is None:
            raise InputError("single-phantom mode needs --patient-id, --bmi and --sex")
        attrs = PatientAttrs(bmi=args.bmi, sex=args.sex, patient_id=args.patient_id)
        n_lesions = args.lesions if args.lesions is not None else (cfg.n_lesions or 3)
        ph = phantom_mod.generate(attrs, n_lesions, seed, contrast_class=args.contrast, **geom)
        path = out / f"{attrs.patient_id}.ctph"
        with open(path, "wb") as f:
            write_phantom(ph, f)
        written.append(path)
    for path in written:
        print(path)
    return EXIT_OK


# ---------------------------------------------------------------------------
# sweep


def _plot_sweep(table: SweepTable, path: Path) -> None:
    plt = _mpl()
    fig, axes = plt.subplots(3, 1, figsize=(9, 8), sharey=True)
    mas_colors = dict(zip(MAS_VALUES, ("#4878cf", "#e8a13c", "#c44e52")))
    for ax, kv in zip(axes, KV_VALUES):
        rows = [r for r in table.rows if r.params.tube_kv == kv]
        for mas in MAS_VALUES:
            xs = [r.index for r in rows if r.params.tube_mas == mas and r.valid]
            ys = [table.objective_of(r) for r in rows if r.params.tube_mas == mas and r.valid]
            ax.scatter(xs, ys, s=8, color=mas_colors[mas], label=f"{mas} mAs")
        ax.set_ylabel("d'")
        ax.set_title(f"{kv} kV")
        ax.grid(True, alpha=0.25)
    axes[0].legend(loc="upper right", fontsize=8)
    axes[-1].set_xlabel("combination index (1..468)")
    best = table.best_row
    fig.suptitle(
        f"{table.patient_id}: exhaustive sweep, best #{best.index} "
        f"d'={table.max_objective:.3f}"
    )
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_sweep(args) -> int:
    cfg = args.run_config
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else cfg.eval_seed
    if seed is None:
        raise InputError("sweep needs an explicit seed (--seed or [evaluation].seed)")
    threads = args.threads if args.threads is not None else cfg.threads
    for path in args.phantoms:
        ph = _load_phantom(path)
        table = exhaustive_search(
            ph,
            cfg.scanner,
            seed,
            workers=threads,
            objective=cfg.objective,
        )
        csv_path = out / f"sweep_{table.patient_id}.csv"
        table.to_csv(csv_path)
        svg_path = out / f"sweep_{table.patient_id}.svg"
        _plot_sweep(table, svg_path)
        best = table.best_row
        print(
            f"{table.patient_id}: best #{best.index} {best.params.to_text()} "
            f"d'={table.max_objective:.4f} -> {csv_path}"
        )
    return EXIT_OK


# ---------------------------------------------------------------------------
# train


def _plot_learning(log: TrainLog, tables: dict[str, SweepTable], path: Path) -> None:
    plt = _mpl()
    ids = log.patient_ids
    fig, axes = plt.subplots(len(ids), 1, figsize=(9, 2.8 * len(ids)), sharex=True)
    if len(ids) == 1:
        axes = [axes]
    for ax, pid in zip(axes, ids):
        recs = [r for r in log.records if r.patient_id == pid]
        xs = [r.step for r in recs]
        ax.plot(xs, [r.d_prime for r in recs], ".", ms=3, alpha=0.5, label="step reward")
        ax.plot(xs, [r.best_so_far for r in recs], "-", lw=1.5, label="best so far")
        oracle = tables[pid].max_objective
        ax.axhline(oracle, ls="--", color="#444444", lw=1, label="exhaustive max")
        gap = oracle - recs[-1].best_so_far
        ax.set_title(f"{pid}  (final gap {gap:.3g})", fontsize=10)
        ax.set_ylabel("d'")
        ax.grid(True, alpha=0.25)
    axes[0].legend(loc="lower right", fontsize=8)
    axes[-1].set_xlabel("training step")
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_train(args) -> int:
    cfg = args.run_config
    out = _out_dir(args)
    seed = args.seed if args.seed is not None else cfg.train_seed
    if seed is None:
        raise InputError("train needs an explicit seed (--seed or [training].seed)")
    phantoms = [_load_phantom(p) for p in args.phantoms]
    tables = {t.patient_id: t for t in (_load_table(p) for p in args.sweeps)}
    missing = [ph.attrs.patient_id for ph in phantoms if ph.attrs.patient_id not in tables]
    if missing:
        raise InputError(f"no sweep table for patient(s): {missing}")
    base_seeds = {tables[ph.attrs.patient_id].base_seed for ph in phantoms}
    if len(base_seeds) != 1:
        raise InputError(f"sweep tables disagree on evaluation seed: {sorted(base_seeds)}")
    net, log = train_agent(
        phantoms,
        tables=tables,
        total_steps=cfg.train_steps,
        hyper=cfg.hyper,
        seed=seed,
        cfg=cfg.scanner,
        objective=cfg.objective,
    )
    log_path = out / "train_log.csv"
    log.to_csv(log_path)
    weights_path = out / "policy.ctppo"
    save_policy(net, weights_path, seed=seed, hyper=cfg.hyper)
    svg_path = out / "learning_curves.svg"
    _plot_learning(log, tables, svg_path)
    report = efficiency_report(log, tables)
    for pid, row in report["per_patient"].items():
        steps = row["steps_to_optimum"]
        print(
            f"{pid}: best d'={row['achieved_best']:.4f} oracle={row['oracle_max']:.4f} "
            f"gap={row['gap']:.3g} unique-to-optimum={steps if steps is not None else 'not reached'}"
        )
    print(f"log -> {log_path}; weights -> {weights_path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# compare


def cmd_compare(args) -> int:
    out = _out_dir(args)
    log = TrainLog.from_csv(Path(args.train_log)) if Path(args.train_log).is_file() else None
    if log is None:
        raise InputError(f"training log {args.train_log} does not exist")
    tables = {t.patient_id: t for t in (_load_table(p) for p in args.sweeps)}
    missing = [pid for pid in log.patient_ids if pid not in tables]
    if missing:
        raise InputError(f"train log references patients without sweep tables: {missing}")
    report = efficiency_report(log, tables)
    path = out / "efficiency.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(
            ["patient_id", "steps_to_optimum", "reduction_percent", "achieved_best", "oracle_max", "gap"]
        )
        for pid, row in report["per_patient"].items():
            steps = row["steps_to_optimum"]
            w.writerow(
                [
                    pid,
                    steps if steps is not None else "not_reached",
                    repr(100.0 * row["reduction"]) if row["reduction"] is not None else "",
                    repr(row["achieved_best"]),
                    repr(row["oracle_max"]),
                    repr(row["gap"]),
                ]
            )
        mean_red = report["mean_reduction"]
        w.writerow(
            ["aggregate", "", repr(100.0 * mean_red) if mean_red is not None else "", "", "", ""]
        )
    for pid, row in report["per_patient"].items():
        red = row["reduction"]
        print(
            f"{pid}: steps_to_optimum={row['steps_to_optimum']} "
            f"reduction={100 * red:.1f}% gap={row['gap']:.3g}"
            if red is not None
            else f"{pid}: optimum not reached (gap {row['gap']:.3g})"
        )
    if report["mean_reduction"] is not None:
        print(f"aggregate mean reduction: {100 * report['mean_reduction']:.1f}%")
    print(f"-> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# impact


@dataclass(frozen=True)
class ImpactRow:
    parameter: str
    from_value: str
    to_value: str
    params_text: str
    d_prime: float | None
    delta_percent: float | None


def impact_rows(table: SweepTable) -> list[ImpactRow]:
    """Baseline = best row at the maximum dose level; then every
    one-parameter deviation (12 of them, RamLak f50 aliases collapse)."""
    by_text = {r.params.to_text(): r for r in table.rows}
    max_mas = max(MAS_VALUES)
    candidates = [r for r in table.rows if r.valid and r.params.tube_mas == max_mas]
    if not candidates:
        raise OptimizerError(f"no valid rows at {max_mas} mAs")
    base = max(candidates, key=lambda r: (table.objective_of(r), -r.index))
    base_val = table.objective_of(base)
    rows = [
        ImpactRow("baseline", "-", "-", base.params.to_text(), base_val, 0.0)
    ]
    field_of = {
        "kv": "tube_kv",
        "mas": "tube_mas",
        "kernel": "kernel",
        "f50": "filter_f50",
        "slice": "slice_mm",
        "pixel": "pixel_mm",
    }
    for ax in AXES:
        fname = field_of[ax.name]
        current = getattr(base.params, fname)
        for value in ax.values:
            if value == current:
                continue
            dev = dc_replace(base.params, **{fname: value})
            row = by_text.get(dev.to_text())
            if row is None or not row.valid:
                rows.append(
                    ImpactRow(ax.name, str(current), str(value), dev.to_text(), None, None)
                )
                continue
            val = table.objective_of(row)
            rows.append(
                ImpactRow(
                    ax.name,
                    str(current),
                    str(value),
                    dev.to_text(),
                    val,
                    100.0 * (val - base_val) / base_val,
                )
            )
    return rows


def _plot_impact(rows: Sequence[ImpactRow], patient_id: str, path: Path) -> None:
    plt = _mpl()
    devs = [r for r in rows if r.parameter != "baseline" and r.delta_percent is not None]
    labels = [f"{r.parameter}: {r.from_value} -> {r.to_value}" for r in devs]
    values = [r.delta_percent for r in devs]
    fig, ax = plt.subplots(figsize=(8, 0.45 * len(devs) + 1.5))
    colors = ["#c44e52" if v < 0 else "#55a868" for v in values]
    ax.barh(range(len(devs)), values, color=colors)
    ax.set_yticks(range(len(devs)))
    ax.set_yticklabels(labels, fontsize=8)
    ax.axvline(0, color="#333333", lw=1)
    ax.set_xlabel("change in d' vs max-dose optimum (%)")
    ax.set_title(f"{patient_id}: single-parameter deviations")
    ax.grid(True, axis="x", alpha=0.25)
    fig.tight_layout()
    fig.savefig(path, format="svg")
    plt.close(fig)


def cmd_impact(args) -> int:
    out = _out_dir(args)
    table = _load_table(args.sweep)
    n_invalid = sum(not r.valid for r in table.rows)
    if n_invalid:
        print(f"warning: {n_invalid} invalid sweep rows excluded", file=sys.stderr)
    rows = impact_rows(table)
    path = out / f"impact_{table.patient_id}.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["parameter", "from", "to", "params", "d_prime", "delta_percent"])
        for r in rows:
            w.writerow(
                [
                    r.parameter,
                    r.from_value,
                    r.to_value,
                    r.params_text,
                    repr(r.d_prime) if r.d_prime is not None else "",
                    repr(r.delta_percent) if r.delta_percent is not None else "",
                ]
            )
    _plot_impact(rows, table.patient_id, out / f"impact_{table.patient_id}.svg")
    for r in rows:
        if r.parameter == "baseline":
            print(f"baseline: {r.params_text} d'={r.d_prime:.4f}")
        elif r.delta_percent is not None:
            print(f"  {r.parameter}: {r.from_value} -> {r.to_value}: {r.delta_percent:+.1f}%")
        else:
            print(f"  {r.parameter}: {r.from_value} -> {r.to_value}: (invalid row)")
    print(f"-> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# fit-plane


@dataclass(frozen=True)
class PlaneFit:
    coef_bmi: float
    coef_lesion: float
    intercept: float
    r_squared: float


def fit_plane(points: Sequence[tuple[float, float, float]]) -> PlaneFit:
    """OLS fit of d' = coef_bmi * BMI + coef_lesion * size + intercept.

    points: (bmi, lesion_size_mm, d_prime) triples, at least 4, not collinear.
    The normal equations are verified to 1e-9 relative as a sanity check on
    the solve.
    """
    if len(points) < 4:
        raise InputError(f"need >= 4 points for a plane fit, got {len(points)}")
    arr = np.asarray(points, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[1] != 3 or not np.all(np.isfinite(arr)):
        raise InputError("points must be finite (bmi, lesion_size, d_prime) triples")
    x = np.column_stack([arr[:, 0], arr[:, 1], np.ones(len(arr))])
    y = arr[:, 2]
    if np.linalg.matrix_rank(x) < 3:
        raise InputError("plane fit is rank-deficient (collinear points)")
    beta, *_ = np.linalg.lstsq(x, y, rcond=None)
    resid = y - x @ beta
    normal_gap = np.linalg.norm(x.T @ resid)
    scale = max(np.linalg.norm(x.T @ y), 1.0)
    if normal_gap > 1e-9 * scale:
        raise ArithmeticError(
            f"normal equations violated: |X'r| = {normal_gap:.3e} vs scale {scale:.3e}"
        )
    ss_res = float(resid @ resid)
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r2 = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return PlaneFit(
        coef_bmi=float(beta[0]),
        coef_lesion=float(beta[1]),
        intercept=float(beta[2]),
        r_squared=float(r2),
    )


def _points_from_pairs(sweeps: Sequence[str], phantoms: Sequence[str]):
    if len(sweeps) != len(phantoms):
        raise InputError("--sweeps and --phantoms must pair up one-to-one")
    points = []
    for spath, ppath in zip(sweeps, phantoms):
        table = _load_table(spath)
        ph = _load_phantom(ppath)
        if ph.attrs.patient_id != table.patient_id:
            raise InputError(
                f"phantom {ph.attrs.patient_id} does not match sweep {table.patient_id}"
            )
        if not ph.lesions:
            raise InputError(f"phantom {ph.attrs.patient_id} has no lesions to size")
        size = max(les.diameter_mm for les in ph.lesions)
        points.append((ph.attrs.bmi, size, table.max_objective))
    return points


def cmd_fit_plane(args) -> int:
    out = _out_dir(args)
    if args.points is not None:
        p = Path(args.points)
        if not p.is_file():
            raise InputError(f"points CSV {p} does not exist")
        points = []
        with open(p, "r", encoding="utf-8", newline="") as f:
            r = csv.reader(f)
            header = next(r)
            if [h.strip() for h in header] != ["bmi", "lesion_size_mm", "d_prime"]:
                raise InputError(
                    "points CSV must have header bmi,lesion_size_mm,d_prime"
                )
            for rec in r:
                points.append((float(rec[0]), float(rec[1]), float(rec[2])))
    elif args.sweeps:
        points = _points_from_pairs(args.sweeps, args.phantoms or [])
    else:
        raise InputError("fit-plane needs --points or paired --sweeps/--phantoms")
    fit = fit_plane(points)
    path = out / "plane_fit.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["coef_bmi", "coef_lesion", "intercept", "r_squared", "n_points"])
        w.writerow(
            [repr(fit.coef_bmi), repr(fit.coef_lesion), repr(fit.intercept), repr(fit.r_squared), len(points)]
        )
    print(
        f"d' = {fit.coef_bmi:+.4f} * BMI {fit.coef_lesion:+.4f} * size {fit.intercept:+.4f}   "
        f"(R^2 = {fit.r_squared:.4f}, n = {len(points)})"
    )
    print(f"-> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# threshold


def min_detectability_for_accuracy(accuracy: float) -> float:
    """Invert A = Phi(d'/sqrt(2)) for the minimum d' hitting the target."""
    if not 0.5 <= accuracy < 1.0:
        raise InputError(f"target accuracy must be in [0.5, 1), got {accuracy}")
    return math.sqrt(2.0) * float(ndtri(accuracy))


def threshold_protocol(table: SweepTable, accuracy: float) -> dict:
    """Lowest-mAs protocol whose d' meets the accuracy target.

    Ties at the lowest feasible dose resolve to the highest d' (then
    enumeration order). Returns a structured result either way.
    """
    d_min = min_detectability_for_accuracy(accuracy)
    feasible = [r for r in table.rows if r.valid and table.objective_of(r) >= d_min]
    if not feasible:
        best = table.best_row
        return {
            "feasible": False,
            "d_prime_min": d_min,
            "accuracy": accuracy,
            "best_available": table.objective_of(best),
            "best_params": best.params.to_text(),
        }
    low_mas = min(r.params.tube_mas for r in feasible)
    at_dose = [r for r in feasible if r.params.tube_mas == low_mas]
    pick = max(at_dose, key=lambda r: (table.objective_of(r), -r.index))
    return {
        "feasible": True,
        "d_prime_min": d_min,
        "accuracy": accuracy,
        "params": pick.params.to_text(),
        "d_prime": table.objective_of(pick),
        "mas": low_mas,
    }


def cmd_threshold(args) -> int:
    out = _out_dir(args)
    table = _load_table(args.sweep)
    result = threshold_protocol(table, args.accuracy)
    path = out / f"threshold_{table.patient_id}.csv"
    with open(path, "w", encoding="utf-8", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["feasible", "accuracy", "d_prime_min", "params", "d_prime"])
        if result["feasible"]:
            w.writerow(
                [1, repr(result["accuracy"]), repr(result["d_prime_min"]), result["params"], repr(result["d_prime"])]
            )
        else:
            w.writerow([0, repr(result["accuracy"]), repr(result["d_prime_min"]), "", ""])
    if result["feasible"]:
        print(
            f"lowest-dose protocol at accuracy >= {args.accuracy}: {result['params']} "
            f"(d' = {result['d_prime']:.4f} >= {result['d_prime_min']:.4f})"
        )
    else:
        print(
            f"no protocol reaches accuracy {args.accuracy} "
            f"(needs d' >= {result['d_prime_min']:.4f}, best available "
            f"{result['best_available']:.4f} at {result['best_params']})"
        )
    print(f"-> {path}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# argument parsing


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="ct-protopt",
        description="CT protocol optimization on synthetic liver-lesion phantoms",
    )
    ap.add_argument("--config", help="TOML run configuration")
    ap.add_argument("--out", help="output directory (default: config or cwd)")
    ap.add_argument("--threads", type=int, help="worker processes for sweeps")
    ap.add_argument("--seed", type=int, help="seed for the chosen command")
    sub = ap.add_subparsers(dest="command", required=True)

    ph = sub.add_parser("phantom", help="phantom file tools")
    ph_sub = ph.add_subparsers(dest="phantom_command", required=True)
    gen = ph_sub.add_parser("gen", help="generate phantom file(s)")
    gen.add_argument("--cohort", type=int, help="generate N cohort patients")
    gen.add_argument("--patient-id")
    gen.add_argument("--bmi", type=float)
    gen.add_argument("--sex", choices=("M", "F"))
    gen.add_argument("--lesions", type=int)
    gen.add_argument("--contrast", type=float, default=phantom_mod.DEFAULT_LESION_CONTRAST)
    gen.add_argument("--fov", type=float, help="phantom field of view in mm")
    gen.add_argument("--spacing", type=float, help="phantom grid spacing in mm")
    gen.set_defaults(func=cmd_phantom_gen)

    sw = sub.add_parser("sweep", help="exhaustive search over all 468 protocols")
    sw.add_argument("phantoms", nargs="+", metavar="PHANTOM")
    sw.set_defaults(func=cmd_sweep)

    tr = sub.add_parser("train", help="PPO training against sweep tables")
    tr.add_argument("--phantoms", nargs="+", required=True)
    tr.add_argument("--sweeps", nargs="+", required=True)
    tr.set_defaults(func=cmd_train)

    cp = sub.add_parser("compare", help="agent-vs-exhaustive efficiency report")
    cp.add_argument("--train-log", required=True)
    cp.add_argument("--sweeps", nargs="+", required=True)
    cp.set_defaults(func=cmd_compare)

    im = sub.add_parser("impact", help="one-parameter deviations from the max-dose optimum")
    im.add_argument("sweep", metavar="SWEEP_CSV")
    im.set_defaults(func=cmd_impact)

    fp = sub.add_parser("fit-plane", help="planar regression of max d' on (BMI, size)")
    fp.add_argument("--points", help="CSV with header bmi,lesion_size_mm,d_prime")
    fp.add_argument("--sweeps", nargs="*")
    fp.add_argument("--phantoms", nargs="*")
    fp.set_defaults(func=cmd_fit_plane)

    th = sub.add_parser("threshold", help="lowest-dose protocol for a target accuracy")
    th.add_argument("sweep", metavar="SWEEP_CSV")
    th.add_argument("--accuracy", type=float, required=True)
    th.set_defaults(func=cmd_threshold)
    return ap


def main(argv: Sequence[str] | None = None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    try:
        args.run_config = load_config(args.config)
        return args.func(args)
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (
        OptimizerError,
        MetricError,
        ArithmeticError,
        np.linalg.LinAlgError,
        phantom_mod.PhantomGenerationError,
    ) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (FileNotFoundError, IsADirectoryError, PermissionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
