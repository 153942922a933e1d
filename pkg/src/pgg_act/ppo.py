"""Population rollouts on the lattice, GAE, and clipped PPO updates.

One actor-critic network is shared by every agent. Each agent contributes one
sample per environment step; a buffer therefore holds (T, N) records.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

from . import kernels
from .game import cooperation_fraction, cumulative_payoffs, max_payoff_scale
from .lattice import N_NEIGHBORS, Lattice
from .nn import (LossReport, NonFiniteError, OptState, PolicyParams, forward_unique,
                 log_softmax, optimizer_step, ppo_objective_and_grad, unique_rows)

STATE_DIM = 3


def encode_states(strategies: np.ndarray, payoffs: np.ndarray, lat: Lattice, r: float) -> np.ndarray:
    """Observation of every agent as an (N, 3) array.

    Columns: own current strategy, fraction of the four neighbours
    cooperating, and own payoff divided by G*(r-1) clipped to [-1, 1].
    """
    counts = kernels.neighbor_counts(np.ascontiguousarray(strategies, dtype=np.int8), lat.neighbors)
    out = np.empty((lat.N, STATE_DIM))
    out[:, 0] = strategies
    out[:, 1] = counts / N_NEIGHBORS
    out[:, 2] = np.clip(payoffs / max_payoff_scale(r), -1.0, 1.0)
    return out


def encode_state(strategies, payoffs, lat: Lattice, agent: int, r: float) -> np.ndarray:
    return encode_states(strategies, payoffs, lat, r)[agent]


@dataclass
class RolloutBuffer:
    """Per-step, per-agent records; every array has leading shape (T, N)."""

    states: np.ndarray
    actions: np.ndarray
    logp: np.ndarray
    values: np.ndarray
    rewards: np.ndarray
    advantages: np.ndarray | None = None
    targets: np.ndarray | None = None

    @property
    def horizon(self) -> int:
        return self.states.shape[0]

    @property
    def n_agents(self) -> int:
        return self.states.shape[1]

    def extend(self, other: "RolloutBuffer", keep: int | None = None) -> "RolloutBuffer":
        """Concatenate along time, keeping at most the last ``keep`` steps."""
        cut = slice(-keep, None) if keep else slice(None)
        return RolloutBuffer(
            states=np.concatenate([self.states, other.states])[cut],
            actions=np.concatenate([self.actions, other.actions])[cut],
            logp=np.concatenate([self.logp, other.logp])[cut],
            values=np.concatenate([self.values, other.values])[cut],
            rewards=np.concatenate([self.rewards, other.rewards])[cut],
        )

    def flat(self) -> dict[str, np.ndarray]:
        if self.advantages is None:
            raise ValueError("advantages not computed for this buffer")
        m = self.horizon * self.n_agents
        return {
            "states": self.states.reshape(m, -1),
            "actions": self.actions.reshape(m).astype(np.int64),
            "old_logp": self.logp.reshape(m),
            "advantages": self.advantages.reshape(m),
            "targets": self.targets.reshape(m),
        }


def sample_actions(params: PolicyParams, states: np.ndarray, rng: np.random.Generator):
    """Draw one action per row. Returns ``(actions, logp, values)``.

    Exactly one uniform per agent is consumed, in agent order.
    """
    logits, _, values = forward_unique(params, states)
    logp_all = log_softmax(logits)
    u = rng.random(states.shape[0])
    actions = (u < np.exp(logp_all[:, 1])).astype(np.int8)
    logp = np.where(actions == 1, logp_all[:, 1], logp_all[:, 0])
    return actions, logp, values


def collect_rollout(strategies, lat: Lattice, params: PolicyParams, r: float, horizon: int,
                    rng: np.random.Generator, payoffs: np.ndarray | None = None):
    """Run ``horizon`` synchronous steps of the shared policy.

    Returns ``(buffer, strategies, payoffs, fractions)`` where the last two
    describe the field after the final step and ``fractions[k]`` is the
    cooperation fraction after step ``k + 1``.
    """
    if horizon < 1:
        raise ValueError("horizon must be >= 1")
    s = np.asarray(strategies, dtype=np.int8)
    pay = cumulative_payoffs(s, lat, r) if payoffs is None else payoffs
    rec = {k: [] for k in ("states", "actions", "logp", "values", "rewards")}
    fractions = []
    for _ in range(horizon):
        obs = encode_states(s, pay, lat, r)
        actions, logp, values = sample_actions(params, obs, rng)
        s = actions
        pay = cumulative_payoffs(s, lat, r)
        for key, val in (("states", obs), ("actions", actions), ("logp", logp),
                         ("values", values), ("rewards", pay)):
            rec[key].append(val)
        fractions.append(cooperation_fraction(s))
    buf = RolloutBuffer(**{k: np.stack(v) for k, v in rec.items()})
    return buf, s, pay, np.array(fractions)


def compute_gae(rewards, values, bootstrap, gamma: float, lam: float):
    """Advantages and value targets by the backward GAE recursion.

    ``rewards`` and ``values`` are (T,) or (T, N); ``bootstrap`` is the value
    of the state after the last step (scalar or (N,)).
    """
    rew = np.asarray(rewards, dtype=np.float64)
    val = np.asarray(values, dtype=np.float64)
    if rew.shape != val.shape or rew.ndim not in (1, 2) or rew.shape[0] < 1:
        raise ValueError(f"rewards {rew.shape} and values {val.shape} must share a (T,) or (T, N) shape")
    if not (0.0 <= gamma < 1.0 and 0.0 <= lam < 1.0):
        raise ValueError("gamma and lambda must lie in [0, 1)")
    squeeze = rew.ndim == 1
    rew2 = rew[:, None] if squeeze else rew
    val2 = val[:, None] if squeeze else val
    boot = np.broadcast_to(np.asarray(bootstrap, dtype=np.float64), rew2.shape[1:]).copy()
    adv, tgt = kernels.gae(np.ascontiguousarray(rew2), np.ascontiguousarray(val2), boot,
                           float(gamma), float(lam))
    if squeeze:
        return adv[:, 0], tgt[:, 0]
    return adv, tgt


def normalize_advantages(adv: np.ndarray, eps: float = 1e-8) -> np.ndarray:
    return (adv - adv.mean()) / (adv.std() + eps)


def ppo_update(params: PolicyParams, opt: OptState, buffer: RolloutBuffer, eps: float,
               delta: float, rho: float, epochs: int, minibatch: int,
               rng: np.random.Generator, normalize: bool = True):
    """Several epochs of minibatch Adam steps on the negated PPO objective.

    ``minibatch=0`` uses the whole buffer as a single batch.

    On a non-finite loss or gradient the original ``(params, opt)`` are kept
    and :class:`NonFiniteError` propagates.
    """
    data = buffer.flat()
    if normalize:
        data["advantages"] = normalize_advantages(data["advantages"])
    m = data["states"].shape[0]
    minibatch = minibatch or m
    uniq, inverse = unique_rows(data["states"])
    sums = np.zeros(6)
    n_batches = 0
    p, o = params, opt
    for _ in range(epochs):
        order = rng.permutation(m)
        for start in range(0, m, minibatch):
            idx = order[start:start + minibatch]
            grads, rep = ppo_objective_and_grad(
                p, data["states"][idx], data["actions"][idx], data["old_logp"][idx],
                data["advantages"][idx], data["targets"][idx], eps, delta, rho,
                dedup=(uniq, inverse[idx]))
            p, o = optimizer_step(o, p, grads)
            sums += (rep.clip, rep.value, rep.entropy, rep.total, rep.mean_ratio, rep.clip_fraction)
            n_batches += 1
    if not p.all_finite():
        raise NonFiniteError("parameters became non-finite during the update")
    report = LossReport(*(sums / max(n_batches, 1)))
    return p, o, report


# -- training log ----------------------------------------------------------------

TRAINING_LOG_FIELDS = ("iteration", "mean_ratio", "clip_fraction", "policy_loss",
                       "value_loss", "entropy", "learning_rate")


def training_log_row(iteration: int, report: LossReport, lr: float) -> dict:
    return {
        "iteration": iteration,
        "mean_ratio": repr(report.mean_ratio),
        "clip_fraction": repr(report.clip_fraction),
        "policy_loss": repr(-report.clip),
        "value_loss": repr(report.value),
        "entropy": repr(report.entropy),
        "learning_rate": repr(lr),
    }


def append_training_log(path, rows) -> None:
    path = Path(path)
    new = not path.exists()
    with path.open("a", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=TRAINING_LOG_FIELDS)
        if new:
            writer.writeheader()
        writer.writerows(rows)
