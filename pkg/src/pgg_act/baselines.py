"""Comparison dynamics: per-agent tabular Q-learning and Fermi imitation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels
from .curriculum import RunRecord, trial_rngs
from .game import InitScheme, cooperation_fraction, cumulative_payoffs, init_strategies
from .lattice import N_NEIGHBORS, Lattice, build_lattice

N_Q_STATES = 2 * (N_NEIGHBORS + 1)


@dataclass(frozen=True)
class QConfig:
    alpha: float = 0.1
    gamma: float = 0.9
    epsilon: float = 0.02

    def validate(self):
        if not 0.0 <= self.epsilon <= 1.0:
            raise ValueError("exploration rate must lie in [0, 1]")
        if not (0.0 < self.alpha <= 1.0 and 0.0 <= self.gamma < 1.0):
            raise ValueError("need 0 < alpha <= 1 and 0 <= gamma < 1")


def q_state_index(strategies: np.ndarray, lat: Lattice) -> np.ndarray:
    """Discrete state = own strategy * 5 + number of cooperating neighbours."""
    s = np.ascontiguousarray(strategies, dtype=np.int8)
    return s.astype(np.int64) * (N_NEIGHBORS + 1) + kernels.neighbor_counts(s, lat.neighbors)


def epsilon_greedy(q_rows: np.ndarray, epsilon: float, rng: np.random.Generator) -> np.ndarray:
    """Pick actions from (N, 2) action values; ties and exploration use a fair coin.

    Consumes two uniforms per agent.
    """
    n = q_rows.shape[0]
    explore = rng.random(n) < epsilon
    coin = rng.random(n) < 0.5
    greedy = np.where(q_rows[:, 1] > q_rows[:, 0], 1,
                      np.where(q_rows[:, 1] < q_rows[:, 0], 0, coin.astype(np.int64)))
    return np.where(explore, coin, greedy).astype(np.int8)


def qlearning_iteration(strategies: np.ndarray, q: np.ndarray, lat: Lattice, r: float,
                        rng: np.random.Generator, cfg: QConfig = QConfig()):
    """One synchronous step: act, play, then update every agent's table in place.

    Returns ``(new_strategies, payoffs)``; ``q`` is (N, 10, 2) and is mutated.
    """
    states = q_state_index(strategies, lat)
    actions = epsilon_greedy(q[np.arange(lat.N), states], cfg.epsilon, rng)
    pay = cumulative_payoffs(actions, lat, r)
    next_states = q_state_index(actions, lat)
    kernels.q_update(q, states, actions.astype(np.int64), pay, next_states, cfg.alpha, cfg.gamma)
    return actions, pay


def fermi_probability(pay_self, pay_other, noise: float):
    """Probability of adopting the other strategy, 1 / (1 + exp((P_self - P_other) / K))."""
    x = (np.asarray(pay_self, dtype=np.float64) - pay_other) / noise
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(x))


def fermi_iteration(strategies: np.ndarray, lat: Lattice, r: float, noise: float,
                    rng: np.random.Generator, asynchronous: bool = False) -> np.ndarray:
    """One Monte Carlo step of Fermi imitation.

    Synchronous: every agent compares with one random neighbour against the
    payoffs of the current field and all adoptions apply at once. Asynchronous:
    N sequential elementary updates of random focal agents.
    """
    if noise <= 0:
        raise ValueError("selection noise K must be positive")
    s = np.ascontiguousarray(strategies, dtype=np.int8)
    n = lat.N
    if asynchronous:
        focal = rng.integers(0, n, n)
        slot = rng.integers(0, N_NEIGHBORS, n)
        u = rng.random(n)
        return kernels.fermi_async(s, lat.groups, lat.neighbors, focal, slot, u, float(r), float(noise))
    pay = cumulative_payoffs(s, lat, r)
    slot = rng.integers(0, N_NEIGHBORS, n)
    u = rng.random(n)
    other = lat.neighbors[np.arange(n), slot]
    adopt = u < fermi_probability(pay, pay[other], noise)
    return np.where(adopt, s[other], s).astype(np.int8)


def _record(snapshots):
    return RunRecord(), set(int(t) for t in snapshots)


def run_fermi(L: int, r: float, iterations: int, seed: int, init: InitScheme,
              noise: float = 0.5, asynchronous: bool = False, snapshots=()) -> RunRecord:
    lat = build_lattice(L)
    _, rng = trial_rngs(seed)
    s = init_strategies(init, lat, rng)
    rec, wanted = _record(snapshots)
    rec.fractions.append(cooperation_fraction(s))
    if 0 in wanted:
        rec.snapshots[0] = s.copy()
    for t in range(1, iterations + 1):
        s = fermi_iteration(s, lat, r, noise, rng, asynchronous)
        rec.fractions.append(cooperation_fraction(s))
        if t in wanted:
            rec.snapshots[t] = s.copy()
    rec.final_field = s
    return rec


def run_qlearning(L: int, r: float, iterations: int, seed: int, init: InitScheme,
                  cfg: QConfig = QConfig(), snapshots=()) -> RunRecord:
    cfg.validate()
    lat = build_lattice(L)
    _, rng = trial_rngs(seed)
    s = init_strategies(init, lat, rng)
    q = np.zeros((lat.N, N_Q_STATES, 2))
    rec, wanted = _record(snapshots)
    rec.fractions.append(cooperation_fraction(s))
    if 0 in wanted:
        rec.snapshots[0] = s.copy()
    for t in range(1, iterations + 1):
        s, _ = qlearning_iteration(s, q, lat, r, rng, cfg)
        rec.fractions.append(cooperation_fraction(s))
        if t in wanted:
            rec.snapshots[t] = s.copy()
    rec.final_field = s
    return rec
