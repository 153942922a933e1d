"""Two-phase adversarial curriculum transfer (ACT) around the PPO learner.

Phase 1 trains the shared network at a generous enhancement factor; the
strategy field, optimiser moments and learning-rate schedule are then reset
while the network weights are carried into Phase 2 at the target factor.

Timeline convention for a phase of T iterations: index 0 is the initial
field and index k the field after k iterations, so a phase yields T + 1
fractions. A full run concatenates Phase 1 indices 0..T1-1 with all of
Phase 2, placing the reset field at global index T1 and the final field at
T1 + T2.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .game import HALF_HALF, InitScheme, cooperation_fraction, cumulative_payoffs, init_strategies
from .lattice import Lattice, build_lattice
from .nn import (OptState, PolicyParams, forward_unique, init_opt, init_params, load_checkpoint,
                 lr_step, save_checkpoint)
from .ppo import STATE_DIM, collect_rollout, compute_gae, encode_states, ppo_update

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class PhaseConfig:
    r: float
    epochs: int
    lr: float = 0.001
    gamma: float = 0.96
    lam: float = 0.95
    eps: float = 0.2
    delta: float = 0.5
    rho: float = 0.001
    init: InitScheme = HALF_HALF
    horizon: int = 1
    ppo_epochs: int = 1
    minibatch: int = 0  # 0 = whole window in one batch

    def validate(self) -> None:
        if not self.r > 1.0:
            raise ValueError(f"enhancement factor must exceed 1, got {self.r}")
        if self.epochs < 1:
            raise ValueError(f"phase needs at least one iteration, got {self.epochs}")
        if self.lr <= 0:
            raise ValueError("learning rate must be positive")
        if not (0.0 <= self.gamma < 1.0 and 0.0 <= self.lam < 1.0):
            raise ValueError("gamma and lambda must lie in [0, 1)")
        if self.eps <= 0 or self.delta < 0 or self.rho < 0:
            raise ValueError("eps must be positive, delta and rho non-negative")
        if self.horizon < 1 or self.ppo_epochs < 1 or self.minibatch < 0:
            raise ValueError("horizon and ppo_epochs must be positive, minibatch non-negative")


# Phase 1 uses the exploration-heavy settings quoted for cooperative policy
# initialisation; Phase 2 uses the default table.
PHASE1_DEFAULT = PhaseConfig(r=5.0, epochs=1000, lr=0.001, gamma=0.99, rho=0.01)
PHASE2_DEFAULT = PhaseConfig(r=4.0, epochs=9000, lr=0.001, gamma=0.96, rho=0.001)


@dataclass
class RunRecord:
    fractions: list = field(default_factory=list)
    snapshots: dict = field(default_factory=dict)
    final_field: np.ndarray | None = None
    checkpoints: list = field(default_factory=list)
    log_rows: list = field(default_factory=list)
    phase_boundary: int | None = None

    def extend(self, other: "RunRecord", offset: int) -> None:
        """Append ``other`` (a phase fragment) starting at global index ``offset``."""
        del self.fractions[offset:]
        self.fractions.extend(other.fractions)
        for t, snap in other.snapshots.items():
            self.snapshots[offset + t] = snap
        for row in other.log_rows:
            self.log_rows.append(dict(row, iteration=row["iteration"] + offset))
        self.final_field = other.final_field
        self.checkpoints.extend(other.checkpoints)


def run_phase(cfg: PhaseConfig, params: PolicyParams, opt: OptState, lat: Lattice,
              rng: np.random.Generator, strategies: np.ndarray | None = None,
              snapshots=(), log_every: int = 0):
    """Train for ``cfg.epochs`` iterations of collect -> GAE -> PPO update.

    Each iteration is one synchronous environment step for the whole
    population. The advantage window holds the last ``cfg.horizon`` steps (by
    default just the newest one) and is bootstrapped with the critic's value
    of the current state. Returns
    ``(params, opt, record)`` with phase-local time indices.
    """
    cfg.validate()
    s = init_strategies(cfg.init, lat, rng) if strategies is None else np.asarray(strategies, np.int8)
    pay = cumulative_payoffs(s, lat, cfg.r)
    wanted = set(int(t) for t in snapshots)
    rec = RunRecord(fractions=[cooperation_fraction(s)])
    if 0 in wanted:
        rec.snapshots[0] = s.copy()
    window = None
    for it in range(1, cfg.epochs + 1):
        opt = lr_step(opt, it - 1)
        step, s, pay, frac = collect_rollout(s, lat, params, cfg.r, 1, rng, payoffs=pay)
        window = step if window is None else window.extend(step, keep=cfg.horizon)
        rec.fractions.append(float(frac[-1]))
        if it in wanted:
            rec.snapshots[it] = s.copy()

        # Values are re-evaluated with the current critic before each update.
        t_len, n = window.rewards.shape
        _, _, values = forward_unique(params, window.states.reshape(t_len * n, -1))
        window.values = values.reshape(t_len, n)
        _, _, boot = forward_unique(params, encode_states(s, pay, lat, cfg.r))
        window.advantages, window.targets = compute_gae(window.rewards, window.values, boot,
                                                        cfg.gamma, cfg.lam)
        params, opt, report = ppo_update(params, opt, window, cfg.eps, cfg.delta, cfg.rho,
                                         cfg.ppo_epochs, cfg.minibatch, rng)
        rec.log_rows.append({"iteration": it, "report": report, "lr": opt.lr})
        if log_every and it % log_every == 0:
            log.info("r=%.2f it=%d frac=%.4f clip=%.4f vf=%.3g ent=%.4f lr=%.2g",
                     cfg.r, it, frac[-1], report.clip, report.value, report.entropy, opt.lr)
    rec.final_field = s
    return params, opt, rec


def act_transition(cfg2: PhaseConfig, params: PolicyParams, lat: Lattice, rng: np.random.Generator):
    """Reset between phases: fresh field and optimiser, weights kept bit-exact."""
    strategies = init_strategies(cfg2.init, lat, rng)
    return strategies, params, init_opt(params, cfg2.lr)


@dataclass(frozen=True)
class ActConfig:
    phase1: PhaseConfig = PHASE1_DEFAULT
    phase2: PhaseConfig = PHASE2_DEFAULT
    L: int = 200
    hidden: int = 64
    seed: int = 0


def trial_rngs(seed: int):
    """Independent generators for network init and for the simulation."""
    init_ss, sim_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(sim_ss)


def run_act(cfg: ActConfig, snapshots=(), checkpoint_dir=None, log_every: int = 0,
            phase1_checkpoint=None) -> RunRecord:
    """Full curriculum run, or Phase 2 alone when ``phase1_checkpoint`` is given.

    Snapshot indices are global (Phase 1 then Phase 2). In Phase-2-only mode
    the record covers Phase 2 alone with local indices.
    """
    cfg.phase1.validate()
    cfg.phase2.validate()
    lat = build_lattice(cfg.L)
    init_rng, rng = trial_rngs(cfg.seed)
    snaps = sorted(set(int(t) for t in snapshots))
    ckdir = Path(checkpoint_dir) if checkpoint_dir is not None else None
    if ckdir is not None:
        ckdir.mkdir(parents=True, exist_ok=True)

    record = RunRecord()
    if phase1_checkpoint is None:
        params = init_params(STATE_DIM, cfg.hidden, init_rng)
        opt = init_opt(params, cfg.phase1.lr)
        t1 = cfg.phase1.epochs
        params, opt, rec1 = run_phase(cfg.phase1, params, opt, lat, rng,
                                      snapshots=[t for t in snaps if t < t1], log_every=log_every)
        record.extend(rec1, 0)
        offset = t1
        if ckdir is not None:
            path = ckdir / "phase1.ckpt"
            save_checkpoint(path, params, opt)
            record.checkpoints.append(str(path))
    else:
        params, _ = load_checkpoint(phase1_checkpoint)
        offset = 0
    strategies, params, opt = act_transition(cfg.phase2, params, lat, rng)
    record.phase_boundary = offset
    params, opt, rec2 = run_phase(cfg.phase2, params, opt, lat, rng, strategies=strategies,
                                  snapshots=[t - offset for t in snaps if t >= offset],
                                  log_every=log_every)
    record.extend(rec2, offset)
    if ckdir is not None:
        path = ckdir / "final.ckpt"
        save_checkpoint(path, params, opt)
        record.checkpoints.append(str(path))
    return record


def run_ppo(phase: PhaseConfig, L: int, seed: int, hidden: int = 64, snapshots=(),
            log_every: int = 0) -> RunRecord:
    """Plain PPO baseline: a freshly initialised network trained in one phase."""
    lat = build_lattice(L)
    init_rng, rng = trial_rngs(seed)
    params = init_params(STATE_DIM, hidden, init_rng)
    opt = init_opt(params, phase.lr)
    params, opt, rec = run_phase(phase, params, opt, lat, rng, snapshots=snapshots, log_every=log_every)
    rec.phase_boundary = 0
    return rec
