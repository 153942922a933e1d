"""Multi-trial harness: per-trial runs, r sweeps, hyperparameter sweeps, CIs.

Output layout under a root directory::

    <root>/<algorithm>/<r>/<trial>/timeseries.csv   t,frac_coop,frac_defect
    <root>/<algorithm>/<r>/<trial>/t<step>.pgm      strategy snapshots
    <root>/<algorithm>/<r>/<trial>/manifest.txt     key=value run manifest
    <root>/sweep.csv                                algorithm,r,n,mean,std,ci_lo,ci_hi
    <root>/raw.csv                                  algorithm,r,trial,seed,final_fraction

Trial ``k`` of a batch uses seed ``base_seed ^ k``; in a sweep ``k`` counts
across the whole r grid, so no two trials of a sweep share a seed.
"""
from __future__ import annotations

import csv
import logging
import math
import traceback
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path
from statistics import NormalDist

import numpy as np

from . import manifest
from .baselines import QConfig, run_fermi, run_qlearning
from .curriculum import (PHASE1_DEFAULT, PHASE2_DEFAULT, ActConfig, PhaseConfig, RunRecord,
                         run_act, run_ppo)
from .game import HALF_HALF, InitScheme, write_pgm
from .ppo import append_training_log, training_log_row

log = logging.getLogger(__name__)

ALGORITHMS = ("ppo-act", "ppo", "qlearning", "fermi")
DEFAULT_HYPER_GRIDS = {
    "alpha": (0.0001, 0.001, 0.01),
    "gamma": (0.9, 0.96, 0.99),
    "delta": (0.1, 0.5, 0.9),
    "rho": (0.0001, 0.001, 0.01),
}
HYPERPARAMETERS = {"alpha": "lr", "gamma": "gamma", "delta": "delta", "rho": "rho",
                   "α": "lr", "γ": "gamma", "δ": "delta", "ρ": "rho"}
_OPTION_KEY = {"lr": "alpha", "gamma": "gamma", "delta": "delta", "rho": "rho"}


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything needed to run one trial of any algorithm except r and seed.

    ``phase2.r`` is overridden by the trial's r. Baselines run for
    ``phase1.epochs + phase2.epochs`` iterations unless ``iterations`` is set,
    so every algorithm shares the curriculum's timeline.
    """

    L: int = 200
    phase1: PhaseConfig = PHASE1_DEFAULT
    phase2: PhaseConfig = PHASE2_DEFAULT
    init: InitScheme = HALF_HALF
    hidden: int = 64
    fermi_noise: float = 0.5
    fermi_async: bool = False
    qlearning: QConfig = QConfig()
    iterations: int | None = None
    window: int = 100
    snapshots: tuple = ()
    phase1_checkpoint: str | None = None

    @property
    def total_iterations(self) -> int:
        if self.iterations is not None:
            return self.iterations
        if self.phase1_checkpoint is not None:
            return self.phase2.epochs
        return self.phase1.epochs + self.phase2.epochs


@dataclass
class TrialSummary:
    algorithm: str
    r: float
    trial: int
    seed: int
    final_fraction: float
    series_path: str | None = None
    error: str | None = None

    @property
    def ok(self) -> bool:
        return self.error is None


@dataclass
class SweepRow:
    algorithm: str
    r: float
    n: int
    mean: float
    std: float
    ci: tuple[float, float] | None


@dataclass
class SweepTable:
    rows: list = field(default_factory=list)

    def row(self, algorithm: str, r: float) -> SweepRow:
        for row in self.rows:
            if row.algorithm == algorithm and math.isclose(row.r, r):
                return row
        raise KeyError((algorithm, r))


def trial_seed(base_seed: int, k: int) -> int:
    return int(base_seed) ^ int(k)


def final_fraction(fractions, window: int = 100) -> float:
    """Mean cooperation fraction over the last ``window`` entries."""
    f = np.asarray(fractions, dtype=np.float64)
    return float(f[-window:].mean())


def run_single(algorithm: str, cfg: ExperimentConfig, r: float, seed: int,
               checkpoint_dir=None, log_every: int = 0) -> RunRecord:
    """One trial of ``algorithm`` at enhancement factor ``r``."""
    if algorithm == "ppo-act":
        act = ActConfig(phase1=replace(cfg.phase1, init=cfg.init),
                        phase2=replace(cfg.phase2, r=r, init=cfg.init),
                        L=cfg.L, hidden=cfg.hidden, seed=seed)
        return run_act(act, snapshots=cfg.snapshots, checkpoint_dir=checkpoint_dir,
                       log_every=log_every, phase1_checkpoint=cfg.phase1_checkpoint)
    if algorithm == "ppo":
        phase = replace(cfg.phase2, r=r, epochs=cfg.total_iterations, init=cfg.init)
        return run_ppo(phase, cfg.L, seed, cfg.hidden, snapshots=cfg.snapshots, log_every=log_every)
    if algorithm == "qlearning":
        return run_qlearning(cfg.L, r, cfg.total_iterations, seed, cfg.init, cfg.qlearning,
                             snapshots=cfg.snapshots)
    if algorithm == "fermi":
        return run_fermi(cfg.L, r, cfg.total_iterations, seed, cfg.init, cfg.fermi_noise,
                         cfg.fermi_async, snapshots=cfg.snapshots)
    raise ValueError(f"unknown algorithm {algorithm!r}; expected one of {ALGORITHMS}")


def trial_dir(root, algorithm: str, r: float, trial: int) -> Path:
    return Path(root) / algorithm / f"{r:.2f}" / f"{trial:03d}"


def write_timeseries(path, fractions) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["t", "frac_coop", "frac_defect"])
        for t, f in enumerate(fractions):
            writer.writerow([t, repr(float(f)), repr(1.0 - float(f))])


def read_timeseries(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([float(row["frac_coop"]) for row in csv.DictReader(fh)])


def _trial_manifest(job, status: str) -> dict:
    algorithm, cfg, r, trial, seed, _, options = job
    items = {}
    if options:
        # Resolved run options, rewritten so the file replays this one trial.
        items.update(options)
        items.update({"algo": algorithm, "r2": repr(float(r)), "seed": str(seed), "trials": "1"})
    items.update(manifest.trial_items(algorithm, cfg, r, trial, seed))
    items["status"] = status
    return items


def _trial_job(job):
    algorithm, cfg, r, trial, seed, out, _ = job
    outdir = trial_dir(out, algorithm, r, trial) if out is not None else None
    try:
        if outdir is not None:
            outdir.mkdir(parents=True, exist_ok=True)
        ckdir = outdir if (outdir is not None and algorithm == "ppo-act") else None
        rec = run_single(algorithm, cfg, r, seed, checkpoint_dir=ckdir)
        summary = TrialSummary(algorithm, r, trial, seed, final_fraction(rec.fractions, cfg.window))
        if outdir is not None:
            series = outdir / "timeseries.csv"
            write_timeseries(series, rec.fractions)
            summary.series_path = str(series)
            for t, snap in sorted(rec.snapshots.items()):
                write_pgm(outdir / f"t{t:05d}.pgm", snap, cfg.L)
            if rec.log_rows:
                append_training_log(outdir / "training_log.csv",
                                    [training_log_row(row["iteration"], row["report"], row["lr"])
                                     for row in rec.log_rows])
            items = _trial_manifest(job, "ok")
            items["checkpoints"] = ",".join(Path(p).name for p in rec.checkpoints)
            items["final_fraction"] = repr(summary.final_fraction)
            manifest.write_manifest(outdir / "manifest.txt", items, content_dir=outdir)
        return summary
    except Exception as exc:  # noqa: BLE001 - a failed trial is recorded, not fatal
        log.error("trial %s r=%s #%d failed: %s", algorithm, r, trial, exc)
        if outdir is not None:
            try:
                items = _trial_manifest(job, "failed")
                items["error"] = f"{type(exc).__name__}: {exc}".replace("\n", " ")
                manifest.write_manifest(outdir / "manifest.txt", items, content_dir=outdir)
            except OSError as io_exc:
                log.error("could not write manifest in %s: %s", outdir, io_exc)
        return TrialSummary(algorithm, r, trial, seed, float("nan"),
                            error=f"{type(exc).__name__}: {exc}\n{traceback.format_exc(limit=3)}")


def _map_jobs(jobs_list, jobs: int):
    if jobs <= 1 or len(jobs_list) <= 1:
        return [_trial_job(j) for j in jobs_list]
    with ProcessPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(_trial_job, jobs_list))


def run_trials(algorithm: str, cfg: ExperimentConfig, r: float, n_trials: int, base_seed: int,
               out=None, jobs: int = 1, options: dict | None = None) -> list[TrialSummary]:
    """Independent trials at one r; results come back in trial order."""
    if n_trials < 1:
        raise ValueError("need at least one trial")
    if algorithm not in ALGORITHMS:
        raise ValueError(f"unknown algorithm {algorithm!r}")
    work = [(algorithm, cfg, float(r), k, trial_seed(base_seed, k), out, options)
            for k in range(n_trials)]
    return _map_jobs(work, jobs)


# -- statistics ----------------------------------------------------------------

def confidence_interval(samples, level: float = 0.95, method: str = "normal",
                        rng: np.random.Generator | None = None, n_boot: int = 2000):
    """Two-sided CI for the mean, clamped to [0, 1]; None when undefined.

    Undefined with fewer than two samples or zero sample spread. ``normal``
    is mean +/- z * s / sqrt(n) with the n-1 standard deviation; ``bootstrap``
    is a percentile bootstrap.
    """
    x = np.asarray(samples, dtype=np.float64)
    if x.size < 2:
        return None
    sd = float(x.std(ddof=1))
    if sd == 0.0:
        return None
    mean = float(x.mean())
    if method == "normal":
        # The customary rounded 1.96 at 95%; exact normal quantile otherwise.
        z = 1.96 if level == 0.95 else NormalDist().inv_cdf(0.5 + level / 2.0)
        half = z * sd / math.sqrt(x.size)
        lo, hi = mean - half, mean + half
    elif method == "bootstrap":
        rng = np.random.default_rng(0) if rng is None else rng
        means = x[rng.integers(0, x.size, (n_boot, x.size))].mean(axis=1)
        lo, hi = np.quantile(means, [(1.0 - level) / 2.0, (1.0 + level) / 2.0])
    else:
        raise ValueError(f"unknown CI method {method!r}")
    return max(0.0, float(lo)), min(1.0, float(hi))


def summarize(algorithm: str, r: float, summaries, level: float = 0.95,
              method: str = "normal") -> SweepRow:
    finals = np.array([s.final_fraction for s in summaries if s.ok])
    if finals.size == 0:
        return SweepRow(algorithm, r, 0, float("nan"), float("nan"), None)
    std = float(finals.std(ddof=1)) if finals.size > 1 else 0.0
    return SweepRow(algorithm, r, int(finals.size), float(finals.mean()), std,
                    confidence_interval(finals, level, method))


def r_grid(start: float = 3.0, stop: float = 6.0, step: float = 0.1) -> list[float]:
    n = int(round((stop - start) / step)) + 1
    return [round(start + k * step, 10) for k in range(n)]


def sweep_r(algorithm: str, cfg: ExperimentConfig, grid, n_trials: int, base_seed: int,
            out=None, jobs: int = 1, ci_method: str = "normal", options: dict | None = None):
    """Trials over an r grid. Returns ``(SweepTable, all TrialSummaries)``."""
    grid = list(grid)
    if not grid:
        raise ValueError("empty r grid")
    # Trial indices run across the whole grid so every seed in a sweep is distinct.
    work = []
    for i, r in enumerate(grid):
        for j in range(n_trials):
            k = i * n_trials + j
            work.append((algorithm, cfg, float(r), k, trial_seed(base_seed, k), out, options))
    results = _map_jobs(work, jobs)
    table = SweepTable()
    for i, r in enumerate(grid):
        chunk = results[i * n_trials:(i + 1) * n_trials]
        table.rows.append(summarize(algorithm, float(r), chunk, method=ci_method))
    return table, results


def sweep_hyperparameter(name: str, values, cfg: ExperimentConfig, grid, n_trials: int,
                         base_seed: int, algorithm: str = "ppo-act", out=None, jobs: int = 1,
                         options: dict | None = None):
    """One r sweep per value of a Phase 2 hyperparameter.

    Returns ``{value: (SweepTable, summaries)}``.
    """
    key = HYPERPARAMETERS.get(name)
    if key is None:
        raise ValueError(f"unknown hyperparameter {name!r}; expected alpha, gamma, delta or rho")
    result = {}
    for value in values:
        sub = replace(cfg, phase2=replace(cfg.phase2, **{key: float(value)}))
        subout = None if out is None else Path(out) / f"{key}={value:g}"
        subopts = None if options is None else dict(options, **{_OPTION_KEY[key]: repr(float(value))})
        result[value] = sweep_r(algorithm, sub, grid, n_trials, base_seed, subout, jobs,
                                options=subopts)
    return result


# -- CSV output ------------------------------------------------------------------

def _fmt(x) -> str:
    return "nan" if x is None or math.isnan(x) else repr(float(x))


def write_sweep_csv(path, tables) -> None:
    """``algorithm,r,n,mean,std,ci_lo,ci_hi``; undefined intervals are ``nan``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "r", "n", "mean", "std", "ci_lo", "ci_hi"])
        for table in tables:
            for row in table.rows:
                lo, hi = row.ci if row.ci is not None else (None, None)
                writer.writerow([row.algorithm, f"{row.r:.2f}", row.n, _fmt(row.mean),
                                 _fmt(row.std), _fmt(lo), _fmt(hi)])


def write_raw_csv(path, summaries) -> None:
    """``algorithm,r,trial,seed,final_fraction`` for every trial (violin data)."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["algorithm", "r", "trial", "seed", "final_fraction"])
        for s in summaries:
            writer.writerow([s.algorithm, f"{s.r:.2f}", s.trial, s.seed, repr(s.final_fraction)])


def read_raw_csv(path) -> list[dict]:
    with open(path, newline="") as fh:
        return [dict(row, final_fraction=float(row["final_fraction"])) for row in csv.DictReader(fh)]
