"""Hot inner loops, each in a numba form and a vectorised numpy form.

The payoff, neighbour-count, GAE and Q-update kernels produce bit-identical
output in both forms: accumulation orders are fixed and no transcendental
functions are evaluated. The asynchronous Fermi loop is the exception, since
numba's ``exp`` and numpy's can differ in the last bit, which occasionally
flips an adoption draw. Random draws are always made by the caller with
numpy and passed in.

The module-level names without suffix (``payoffs``, ``neighbor_counts``,
``gae``, ``q_update``, ``fermi_async``) dispatch to the backend chosen in
``_accel``.
"""
import math

import numpy as np

from ._accel import HAVE_NUMBA, USE_NUMBA, njit

GROUP_SIZE = 5


# -- cumulative payoffs ------------------------------------------------------

def _payoffs_loop(strategies, groups, r):
    n = strategies.shape[0]
    size = groups.shape[1]
    n_coop = np.empty(n, dtype=np.int64)
    for g in range(n):
        c = 0
        for k in range(size):
            c += strategies[groups[g, k]]
        n_coop[g] = c
    out = np.empty(n, dtype=np.float64)
    for i in range(n):
        acc = 0.0
        cost = float(strategies[i])
        for k in range(size):
            acc += r * float(n_coop[groups[i, k]]) / float(size) - cost
        out[i] = acc
    return out


def payoffs_numpy(strategies, groups, r):
    """Cumulative payoff of every agent, summed over its groups in table order.

    ``groups[i]`` lists the members of the group centred on ``i``; because the
    von Neumann neighbourhood is symmetric the same row also lists the centres
    of the groups ``i`` belongs to, and the sum follows that order.
    """
    size = groups.shape[1]
    n_coop = strategies[groups].astype(np.int64).sum(axis=1)
    share = r * n_coop.astype(np.float64) / float(size)
    cost = strategies.astype(np.float64)
    acc = np.zeros(strategies.shape[0])
    for k in range(size):
        acc += share[groups[:, k]] - cost
    return acc


# -- neighbour cooperation counts -------------------------------------------

def _neighbor_counts_loop(strategies, neighbors):
    n = neighbors.shape[0]
    out = np.empty(n, dtype=np.int64)
    for i in range(n):
        c = 0
        for k in range(neighbors.shape[1]):
            c += strategies[neighbors[i, k]]
        out[i] = c
    return out


def neighbor_counts_numpy(strategies, neighbors):
    return strategies[neighbors].astype(np.int64).sum(axis=1)


# -- generalized advantage estimation ---------------------------------------

def _gae_loop(rewards, values, bootstrap, gamma, lam):
    t_len, n = rewards.shape
    adv = np.empty((t_len, n))
    for i in range(n):
        running = 0.0
        next_value = bootstrap[i]
        for t in range(t_len - 1, -1, -1):
            delta = rewards[t, i] + gamma * next_value - values[t, i]
            running = delta + gamma * lam * running
            adv[t, i] = running
            next_value = values[t, i]
    return adv, adv + values


def gae_numpy(rewards, values, bootstrap, gamma, lam):
    """Backward recursion A_t = psi_t + gamma*lam*A_{t+1} along axis 0."""
    t_len = rewards.shape[0]
    adv = np.empty_like(rewards, dtype=np.float64)
    running = np.zeros(rewards.shape[1:])
    next_value = np.asarray(bootstrap, dtype=np.float64)
    for t in range(t_len - 1, -1, -1):
        delta = rewards[t] + gamma * next_value - values[t]
        running = delta + gamma * lam * running
        adv[t] = running
        next_value = values[t]
    return adv, adv + values


# -- tabular Q update ---------------------------------------------------------

def _q_update_loop(q, states, actions, rewards, next_states, alpha, gamma):
    for i in range(q.shape[0]):
        s = states[i]
        a = actions[i]
        nxt = q[i, next_states[i], 0]
        if q[i, next_states[i], 1] > nxt:
            nxt = q[i, next_states[i], 1]
        q[i, s, a] += alpha * (rewards[i] + gamma * nxt - q[i, s, a])


def q_update_numpy(q, states, actions, rewards, next_states, alpha, gamma):
    """In-place one-step Q update, one (state, action) cell per agent."""
    idx = np.arange(q.shape[0])
    nxt = q[idx, next_states].max(axis=1)
    cur = q[idx, states, actions]
    q[idx, states, actions] = cur + alpha * (rewards + gamma * nxt - cur)


# -- asynchronous Fermi imitation --------------------------------------------

def _local_payoff(strategies, groups, i, r):
    size = groups.shape[1]
    acc = 0.0
    cost = float(strategies[i])
    for k in range(size):
        g = groups[i, k]
        c = 0
        for m in range(size):
            c += strategies[groups[g, m]]
        acc += r * float(c) / float(size) - cost
    return acc


def _fermi_async_loop(strategies, groups, neighbors, focal, slot, u, r, noise):
    s = strategies.copy()
    for step in range(focal.shape[0]):
        i = focal[step]
        j = neighbors[i, slot[step]]
        if s[i] == s[j]:
            continue
        pi = _local_payoff(s, groups, i, r)
        pj = _local_payoff(s, groups, j, r)
        if u[step] < 1.0 / (1.0 + math.exp((pi - pj) / noise)):
            s[i] = s[j]
    return s


fermi_async_python = _fermi_async_loop


if HAVE_NUMBA:
    payoffs_numba = njit(_payoffs_loop)
    neighbor_counts_numba = njit(_neighbor_counts_loop)
    gae_numba = njit(_gae_loop)
    q_update_numba = njit(_q_update_loop)
    _local_payoff_jit = njit(_local_payoff)

    def _make_fermi_async():
        local = _local_payoff_jit

        def loop(strategies, groups, neighbors, focal, slot, u, r, noise):
            s = strategies.copy()
            for step in range(focal.shape[0]):
                i = focal[step]
                j = neighbors[i, slot[step]]
                if s[i] == s[j]:
                    continue
                pi = local(s, groups, i, r)
                pj = local(s, groups, j, r)
                if u[step] < 1.0 / (1.0 + math.exp((pi - pj) / noise)):
                    s[i] = s[j]
            return s

        return njit(loop)

    fermi_async_numba = _make_fermi_async()
else:  # pragma: no cover
    payoffs_numba = neighbor_counts_numba = gae_numba = q_update_numba = None
    fermi_async_numba = None


if USE_NUMBA:
    payoffs = payoffs_numba
    neighbor_counts = neighbor_counts_numba
    gae = gae_numba
    q_update = q_update_numba
    fermi_async = fermi_async_numba
else:
    payoffs = payoffs_numpy
    neighbor_counts = neighbor_counts_numpy
    gae = gae_numpy
    q_update = q_update_numpy
    fermi_async = fermi_async_python
