"""Independent oracles and the invariant suite behind ``pgg-act verify``.

The oracles deliberately avoid the vectorised code paths they check: payoffs
come from explicit (row, col) group enumeration, GAE from the explicit double
sum, and gradients from central finite differences.
"""
from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from .game import cumulative_payoffs, group_payoffs
from .lattice import build_lattice
from .nn import PARAM_NAMES, forward, init_params, log_softmax, ppo_objective_and_grad
from .ppo import compute_gae

R_VALUES = (2.0, 3.0, 4.0, 5.0, 6.0)
DISCOUNTS = (0.0, 0.5, 0.95, 0.99)


def brute_force_payoffs(strategies, L: int, r: float) -> np.ndarray:
    """Cumulative payoffs by enumerating every group on the torus.

    Each agent's total is accumulated over its own group and then the groups
    centred on its up, down, left and right neighbours.
    """
    s = np.asarray(strategies).reshape(L, L).tolist()
    steps = ((0, 0), (-1, 0), (1, 0), (0, -1), (0, 1))
    share = [[r * sum(s[(row + dr) % L][(col + dc) % L] for dr, dc in steps) / 5.0
              for col in range(L)] for row in range(L)]
    out = np.zeros(L * L)
    for row in range(L):
        for col in range(L):
            cost = float(s[row][col])
            total = 0.0
            for dr, dc in steps:
                total += share[(row + dr) % L][(col + dc) % L] - cost
            out[row * L + col] = total
    return out


def gae_double_sum(rewards, values, bootstrap: float, gamma: float, lam: float) -> np.ndarray:
    """A_t = sum_l (gamma*lam)^l * delta_{t+l} evaluated term by term."""
    rewards = [float(x) for x in rewards]
    v = [float(x) for x in values] + [float(bootstrap)]
    T = len(rewards)
    deltas = [rewards[t] + gamma * v[t + 1] - v[t] for t in range(T)]
    return np.array([sum((gamma * lam) ** l * deltas[t + l] for l in range(T - t))
                     for t in range(T)])


def _objective(params, batch, eps, delta, rho) -> float:
    _, rep = ppo_objective_and_grad(params, *batch, eps, delta, rho, with_grad=False)
    return rep.total


def gradient_check(params, batch, eps: float = 0.2, delta: float = 0.5, rho: float = 0.01,
                   step: float = 1e-5) -> float:
    """Relative error between the analytic gradient and central differences.

    ``batch`` is ``(states, actions, old_logp, advantages, targets)``. The
    error is ``|g_a - g_n| / max(|g_a|, |g_n|)`` over all parameters.
    """
    grads, _ = ppo_objective_and_grad(params, *batch, eps, delta, rho)
    analytic, numeric = [], []
    for name in PARAM_NAMES:
        arr = getattr(params, name)
        g = getattr(grads, name)
        for idx in np.ndindex(arr.shape):
            orig = arr[idx]
            arr[idx] = orig + step
            up = _objective(params, batch, eps, delta, rho)
            arr[idx] = orig - step
            down = _objective(params, batch, eps, delta, rho)
            arr[idx] = orig
            # grads are of the negated objective.
            numeric.append(-(up - down) / (2.0 * step))
            analytic.append(g[idx])
    a, n = np.array(analytic), np.array(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-300)
    return float(np.linalg.norm(a - n) / scale)


def random_ppo_batch(params, rng: np.random.Generator, size: int = 32, eps: float = 0.2):
    """A batch whose probability ratios sit away from the clip kinks.

    Ratios are drawn from both sides of the clip interval and from inside it,
    and advantages take both signs, so every branch of the surrogate occurs.
    """
    states = rng.normal(size=(size, params.state_dim))
    actions = rng.integers(0, 2, size)
    logits, _, _ = forward(params, states)
    logp = log_softmax(logits)[np.arange(size), actions]
    choices = np.array([1.0 - 2.5 * eps, 1.0 - 0.5 * eps, 1.0 + 0.5 * eps, 1.0 + 2.5 * eps])
    ratio = choices[rng.integers(0, len(choices), size)]
    old_logp = logp - np.log(ratio)
    advantages = rng.normal(size=size)
    advantages[: size // 2] = np.abs(advantages[: size // 2])
    advantages[size // 2:] = -np.abs(advantages[size // 2:])
    targets = rng.normal(size=size)
    return states, actions, old_logp, advantages, targets


@dataclass
class CheckResult:
    name: str
    passed: bool
    detail: str


def check_payoffs(seed: int = 0, fields: int = 200) -> CheckResult:
    rng = np.random.default_rng(seed)
    bad = 0
    for L in (3, 4, 5):
        lat = build_lattice(L)
        for _ in range(fields):
            s = rng.integers(0, 2, L * L).astype(np.int8)
            r = float(rng.choice(R_VALUES))
            if not np.array_equal(cumulative_payoffs(s, lat, r), brute_force_payoffs(s, L, r)):
                bad += 1
    for pattern in itertools.product((0, 1), repeat=5):
        for r in R_VALUES:
            if math.fsum(group_payoffs(pattern, r)) != sum(pattern) * (r - 1.0):
                bad += 1
    return CheckResult("payoff conservation", bad == 0, f"{bad} mismatches")


def check_gae(seed: int = 0, series: int = 100) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(series):
        T = int(rng.integers(1, 9))
        rew, val, boot = rng.normal(size=T), rng.normal(size=T), float(rng.normal())
        for gamma in DISCOUNTS:
            for lam in DISCOUNTS:
                adv, _ = compute_gae(rew, val, boot, gamma, lam)
                worst = max(worst, float(np.max(np.abs(adv - gae_double_sum(rew, val, boot, gamma, lam)))))
    return CheckResult("GAE oracle", worst <= 1e-12, f"max abs error {worst:.3g}")


def check_gradients(seed: int = 0, batches: int = 20, hidden: int = 8) -> CheckResult:
    rng = np.random.default_rng(seed)
    worst = 0.0
    for _ in range(batches):
        params = init_params(3, hidden, rng)
        worst = max(worst, gradient_check(params, random_ppo_batch(params, rng)))
    return CheckResult("gradient check", worst <= 1e-4, f"max relative error {worst:.3g}")


def run_all(seed: int = 0) -> list[CheckResult]:
    return [check_payoffs(seed), check_gae(seed), check_gradients(seed)]
