"""``pgg-act`` command line: run, sweep, hypsweep, phase2-only, verify.

Option precedence is flags, then a ``--config`` key=value file, then the
built-in defaults. Learning hyperparameter flags (alpha, gamma, lambda,
eps-clip, delta, rho) set Phase 2; Phase 1 keeps its exploration settings
(r1, alpha 0.001, gamma 0.99, rho 0.01).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

from . import manifest
from .baselines import QConfig
from .curriculum import PHASE1_DEFAULT, PHASE2_DEFAULT
from .experiments import (ALGORITHMS, DEFAULT_HYPER_GRIDS, HYPERPARAMETERS, ExperimentConfig,
                          SweepTable, r_grid, run_trials, summarize, sweep_hyperparameter, sweep_r,
                          write_raw_csv, write_sweep_csv)
from .game import InitScheme

log = logging.getLogger("pgg_act")

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME, EXIT_VERIFY = 0, 1, 2, 3
SUBCOMMANDS = ("run", "sweep", "hypsweep", "phase2-only", "verify")
RUN_SNAPSHOTS = (0, 10, 100, 1000, 10000)
PHASE2_ONLY_SNAPSHOTS = (0, 1, 10, 100, 1000)


class UsageError(Exception):
    pass


def _positive_int(text):
    value = int(text)
    if value < 1:
        raise ValueError("must be a positive integer")
    return value


def _int_list(text):
    return tuple(sorted({int(x) for x in text.split(",") if x.strip()}))


def _float_list(text):
    values = tuple(float(x) for x in text.split(",") if x.strip())
    if not values:
        raise ValueError("empty list")
    return values


def _grid(text):
    """``start:stop:step`` or a comma-separated list of r values."""
    if ":" in text:
        start, stop, step = (float(x) for x in text.split(":"))
        if step <= 0 or stop < start:
            raise ValueError("need start <= stop and a positive step")
        return tuple(r_grid(start, stop, step))
    return _float_list(text)


def _algo(text):
    if text not in ALGORITHMS:
        raise ValueError(f"expected one of {', '.join(ALGORITHMS)}")
    return text


def _hyper(text):
    if text not in HYPERPARAMETERS:
        raise ValueError("expected alpha, gamma, delta or rho")
    return {"α": "alpha", "γ": "gamma", "δ": "delta", "ρ": "rho"}.get(text, text)


def _bool(text):
    t = str(text).strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError("expected a boolean")


# key -> (converter, default, help). Keys double as config-file keys.
OPTIONS = {
    "algo": (_algo, "ppo-act", "algorithm: " + ", ".join(ALGORITHMS)),
    "L": (_positive_int, 200, "lattice side length"),
    "init": (InitScheme.parse, "half-half",
             "initial field: half-half, bernoulli[:p], all-defect, all-cooperate"),
    "r1": (float, PHASE1_DEFAULT.r, "Phase 1 enhancement factor"),
    "r2": (float, PHASE2_DEFAULT.r, "Phase 2 (target) enhancement factor"),
    "t1": (_positive_int, PHASE1_DEFAULT.epochs, "Phase 1 iterations"),
    "t2": (_positive_int, PHASE2_DEFAULT.epochs, "Phase 2 iterations"),
    "alpha": (float, PHASE2_DEFAULT.lr, "Phase 2 initial learning rate"),
    "gamma": (float, PHASE2_DEFAULT.gamma, "Phase 2 discount factor"),
    "lambda": (float, PHASE2_DEFAULT.lam, "GAE lambda"),
    "eps-clip": (float, PHASE2_DEFAULT.eps, "PPO clip parameter"),
    "delta": (float, PHASE2_DEFAULT.delta, "value loss weight"),
    "rho": (float, PHASE2_DEFAULT.rho, "Phase 2 entropy weight"),
    "trials": (_positive_int, 1, "independent trials per r"),
    "seed": (int, None, "base seed; trial k uses seed ^ k"),
    "jobs": (_positive_int, 1, "worker processes"),
    "out": (str, None, "output root (default $PGG_ACT_OUT or ./pgg_act_out)"),
    "snapshots": (_int_list, None, "comma-separated snapshot iterations"),
    "window": (_positive_int, 100, "iterations averaged for the final fraction"),
    "noise": (float, 0.5, "Fermi selection noise K"),
    "async": (_bool, False, "asynchronous Fermi updates"),
    "q-alpha": (float, 0.1, "Q-learning rate"),
    "q-gamma": (float, 0.9, "Q-learning discount"),
    "q-epsilon": (float, 0.02, "Q-learning exploration rate"),
    "r-grid": (_grid, (3.0, 6.0, 0.1), "sweep grid as start:stop:step or a list"),
    "param": (_hyper, "alpha", "hypsweep parameter: alpha, gamma, delta or rho"),
    "values": (_float_list, None, "hypsweep values (comma-separated)"),
    "checkpoint": (str, None, "Phase 1 checkpoint for phase2-only"),
    "ci": (str, "normal", "confidence interval method: normal or bootstrap"),
}

# Keys a per-trial manifest carries that are not run options.
MANIFEST_ONLY_PREFIXES = ("config.",)
MANIFEST_ONLY_KEYS = {"algorithm", "r", "trial", "status", "content_hash", "checkpoints",
                      "final_fraction", "error", "subcommand", "base_seed",
                      "trials_ok", "trials_failed"}


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="pgg-act", description="PPO with adversarial curriculum transfer "
                     "on the spatial public goods game.")
    parser.add_argument("-v", "--verbose", action="store_true", help="progress logging")
    sub = parser.add_subparsers(dest="subcommand", required=True, parser_class=_Parser)
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="flat key=value configuration file")
        for key, (_, default, help_text) in OPTIONS.items():
            shown = "" if default is None else f" (default {default})"
            p.add_argument(f"--{key}", dest=key, default=argparse.SUPPRESS, metavar="VALUE",
                           help=help_text + shown)
    return parser


def _convert(key: str, raw, source: str):
    if key not in OPTIONS:
        raise UsageError(f"{source}: unknown option {key!r}")
    try:
        return OPTIONS[key][0](raw)
    except (TypeError, ValueError) as exc:
        raise UsageError(f"{source}: invalid value {raw!r} for {key}: {exc}") from None


def _file_options(path: str) -> dict:
    try:
        text = Path(path).read_text(encoding="utf-8")
        pairs = manifest.parse_key_values(text, path)
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc.strerror}") from None
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    out = {}
    for key, value in pairs.items():
        if key in MANIFEST_ONLY_KEYS or key.startswith(MANIFEST_ONLY_PREFIXES):
            continue
        out[key] = _convert(key, value, path)
    return out


def parse_config(argv) -> dict:
    """Resolve options: flags over ``--config`` file over defaults."""
    ns = vars(build_parser().parse_args(argv))
    sub = ns.pop("subcommand")
    verbose = ns.pop("verbose")
    cfg_path = ns.pop("config", None)
    opts = {key: default for key, (_, default, _) in OPTIONS.items()}
    explicit = set()
    if cfg_path:
        file_opts = _file_options(cfg_path)
        opts.update(file_opts)
        explicit.update(file_opts)
    for key, raw in ns.items():
        opts[key] = _convert(key, raw, "command line")
        explicit.add(key)
    if isinstance(opts["init"], str):
        opts["init"] = InitScheme.parse(opts["init"])
    if isinstance(opts["r-grid"], tuple) and "r-grid" not in explicit:
        opts["r-grid"] = tuple(r_grid(*opts["r-grid"]))
    opts["subcommand"] = sub
    opts["verbose"] = verbose
    _validate(opts, explicit)
    return opts


def _validate(opts: dict, explicit: set) -> None:
    sub = opts["subcommand"]
    if sub in ("sweep", "hypsweep") and "seed" not in explicit:
        raise UsageError(f"{sub} requires an explicit --seed")
    if opts["seed"] is None:
        opts["seed"] = 0
    if opts["seed"] < 0:
        raise UsageError("seed must be non-negative")
    if sub == "phase2-only":
        if not opts["checkpoint"]:
            raise UsageError("phase2-only requires --checkpoint")
        if opts["algo"] != "ppo-act":
            raise UsageError("phase2-only applies to --algo ppo-act")
    if opts["ci"] not in ("normal", "bootstrap"):
        raise UsageError("--ci must be normal or bootstrap")
    if opts["L"] < 3:
        raise UsageError("--L must be at least 3")
    try:
        experiment_config(opts)
    except ValueError as exc:
        raise UsageError(str(exc)) from None


def experiment_config(opts: dict) -> ExperimentConfig:
    init = opts["init"]
    phase1 = replace(PHASE1_DEFAULT, r=opts["r1"], epochs=opts["t1"], init=init)
    phase2 = replace(PHASE2_DEFAULT, r=opts["r2"], epochs=opts["t2"], lr=opts["alpha"],
                     gamma=opts["gamma"], lam=opts["lambda"], eps=opts["eps-clip"],
                     delta=opts["delta"], rho=opts["rho"], init=init)
    phase1.validate()
    phase2.validate()
    q = QConfig(opts["q-alpha"], opts["q-gamma"], opts["q-epsilon"])
    q.validate()
    if opts["noise"] <= 0:
        raise ValueError("Fermi noise must be positive")
    p2only = opts["subcommand"] == "phase2-only"
    total = phase2.epochs if p2only else phase1.epochs + phase2.epochs
    default_snaps = PHASE2_ONLY_SNAPSHOTS if p2only else RUN_SNAPSHOTS
    snaps = opts["snapshots"] if opts["snapshots"] is not None else default_snaps
    return ExperimentConfig(
        L=opts["L"], phase1=phase1, phase2=phase2, init=init,
        fermi_noise=opts["noise"], fermi_async=opts["async"], qlearning=q,
        window=opts["window"],
        snapshots=tuple(t for t in snaps if 0 <= t <= total),
        phase1_checkpoint=str(Path(opts["checkpoint"]).resolve()) if p2only else None,
    )


def _option_items(opts: dict) -> dict:
    """Resolved options as config-file text, for manifests."""
    items = {}
    for key in OPTIONS:
        value = opts[key]
        if value is None:
            continue
        if key in ("out", "jobs"):
            continue
        if isinstance(value, tuple):
            value = ",".join(repr(v) if isinstance(v, float) else str(v) for v in value)
        elif isinstance(value, float):
            value = repr(value)
        items[key] = str(value)
    return items


def output_root(opts: dict) -> Path:
    return Path(opts["out"] or os.environ.get("PGG_ACT_OUT") or "pgg_act_out")


def _report(summaries) -> int:
    failed = [s for s in summaries if not s.ok]
    for s in failed:
        log.error("trial %d (r=%.2f, seed %d) failed: %s", s.trial, s.r, s.seed,
                  s.error.splitlines()[0])
    return EXIT_OK if not failed else EXIT_RUNTIME


def _write_run_manifest(root: Path, opts: dict, summaries) -> None:
    items = {"subcommand": opts["subcommand"], **_option_items(opts)}
    items["trials_ok"] = str(sum(s.ok for s in summaries))
    items["trials_failed"] = str(sum(not s.ok for s in summaries))
    items["status"] = "ok" if all(s.ok for s in summaries) else "partial"
    manifest.write_manifest(root / "manifest.txt", items, content_dir=root)


def execute(opts: dict) -> int:
    sub = opts["subcommand"]
    if sub == "verify":
        from .verify import run_all
        results = run_all(opts["seed"])
        for res in results:
            print(f"{'PASS' if res.passed else 'FAIL'}  {res.name}: {res.detail}")
        return EXIT_OK if all(r.passed for r in results) else EXIT_VERIFY

    cfg = experiment_config(opts)
    root = output_root(opts)
    root.mkdir(parents=True, exist_ok=True)
    items = _option_items(opts)
    algo = opts["algo"]
    if sub in ("run", "phase2-only"):
        summaries = run_trials(algo, cfg, opts["r2"], opts["trials"], opts["seed"], root,
                               opts["jobs"], options=items)
        tables = [_table(algo, opts["r2"], summaries, opts["ci"])]
    elif sub == "sweep":
        table, summaries = sweep_r(algo, cfg, opts["r-grid"], opts["trials"], opts["seed"], root,
                                   opts["jobs"], opts["ci"], options=items)
        tables = [table]
    else:
        values = opts["values"] or DEFAULT_HYPER_GRIDS[opts["param"]]
        result = sweep_hyperparameter(opts["param"], values, cfg, opts["r-grid"], opts["trials"],
                                      opts["seed"], algo, root, opts["jobs"], options=items)
        tables, summaries = [], []
        for value, (table, sums) in result.items():
            for row in table.rows:
                row.algorithm = f"{algo}[{opts['param']}={value:g}]"
            tables.append(table)
            summaries.extend(sums)
    write_sweep_csv(root / "sweep.csv", tables)
    write_raw_csv(root / "raw.csv", summaries)
    _write_run_manifest(root, opts, summaries)
    for table in tables:
        for row in table.rows:
            ci = "nan" if row.ci is None else f"{row.ci[0]:.3f}-{row.ci[1]:.3f}"
            print(f"{row.algorithm} r={row.r:.2f} n={row.n} mean={row.mean:.4f} ci={ci}")
    return _report(summaries)


def _table(algo, r, summaries, method):
    return SweepTable([summarize(algo, float(r), summaries, method=method)])


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else argv
    try:
        opts = parse_config(argv)
    except UsageError as exc:
        print(f"pgg-act: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    logging.basicConfig(level=logging.INFO if opts["verbose"] else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return execute(opts)
    except OSError as exc:
        print(f"pgg-act: I/O error on {exc.filename or '?'}: {exc.strerror or exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except (ValueError, FloatingPointError, RuntimeError) as exc:
        print(f"pgg-act: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
