"""Two-layer ReLU actor-critic with hand-written gradients and an Adam optimiser.

Shapes follow the ``h = W x + b`` convention: ``W1`` is (hidden, state_dim),
``W_actor`` is (2, hidden), ``W_critic`` is (1, hidden). Batched inputs are
rows, so a layer is ``X @ W.T + b``. Logit column 0 is defect, column 1 is
cooperate, which makes an action index equal to the strategy it plays.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, replace
from pathlib import Path

import numpy as np

PARAM_NAMES = ("W1", "b1", "W2", "b2", "W_actor", "b_actor", "W_critic", "b_critic")
N_ACTIONS = 2


class NonFiniteError(FloatingPointError):
    """Raised when a loss, gradient or input contains NaN or inf."""


@dataclass
class PolicyParams:
    W1: np.ndarray
    b1: np.ndarray
    W2: np.ndarray
    b2: np.ndarray
    W_actor: np.ndarray
    b_actor: np.ndarray
    W_critic: np.ndarray
    b_critic: np.ndarray

    @property
    def state_dim(self) -> int:
        return self.W1.shape[1]

    @property
    def hidden(self) -> int:
        return self.W1.shape[0]

    def arrays(self) -> dict[str, np.ndarray]:
        return {name: getattr(self, name) for name in PARAM_NAMES}

    def copy(self) -> "PolicyParams":
        return PolicyParams(**{k: v.copy() for k, v in self.arrays().items()})

    def zeros_like(self) -> "PolicyParams":
        return PolicyParams(**{k: np.zeros_like(v) for k, v in self.arrays().items()})

    def map(self, fn) -> "PolicyParams":
        return PolicyParams(**{k: fn(v) for k, v in self.arrays().items()})

    def all_finite(self) -> bool:
        return all(np.isfinite(v).all() for v in self.arrays().values())

    def n_params(self) -> int:
        return sum(v.size for v in self.arrays().values())


def init_params(state_dim: int, hidden: int = 64, rng: np.random.Generator | None = None) -> PolicyParams:
    """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) for every weight and bias."""
    rng = np.random.default_rng() if rng is None else rng

    def layer(fan_out, fan_in):
        bound = 1.0 / np.sqrt(fan_in)
        return rng.uniform(-bound, bound, (fan_out, fan_in)), rng.uniform(-bound, bound, fan_out)

    W1, b1 = layer(hidden, state_dim)
    W2, b2 = layer(hidden, hidden)
    Wa, ba = layer(N_ACTIONS, hidden)
    Wc, bc = layer(1, hidden)
    return PolicyParams(W1, b1, W2, b2, Wa, ba, Wc, bc)


# -- forward -----------------------------------------------------------------

def _trunk(params: PolicyParams, x: np.ndarray):
    pre1 = x @ params.W1.T + params.b1
    h1 = np.maximum(pre1, 0.0)
    pre2 = h1 @ params.W2.T + params.b2
    h2 = np.maximum(pre2, 0.0)
    return pre1, h1, pre2, h2


def log_softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    return z - np.log(np.exp(z).sum(axis=-1, keepdims=True))


def forward(params: PolicyParams, states: np.ndarray):
    """Return ``(logits, probs, value)`` for one state or a batch of row states."""
    x = np.asarray(states, dtype=np.float64)
    single = x.ndim == 1
    x2 = x[None, :] if single else x
    if x2.ndim != 2 or x2.shape[1] != params.state_dim:
        raise ValueError(f"state dimension {x2.shape[-1]} does not match network input {params.state_dim}")
    _, _, _, h = _trunk(params, x2)
    logits = h @ params.W_actor.T + params.b_actor
    probs = np.exp(log_softmax(logits))
    value = (h @ params.W_critic.T)[:, 0] + params.b_critic[0]
    if single:
        return logits[0], probs[0], value[0]
    return logits, probs, value


def unique_rows(x: np.ndarray):
    """Distinct rows of a 2-D float array and the row -> distinct-row index map.

    Same contract as ``np.unique(x, axis=0, return_inverse=True)`` but
    several times faster for tall, narrow arrays.
    """
    x = np.ascontiguousarray(x, dtype=np.float64)
    if x.shape[0] == 0:
        return x, np.zeros(0, dtype=np.int64)
    order = np.lexsort(x.T[::-1])
    xs = x[order]
    new = np.empty(x.shape[0], dtype=bool)
    new[0] = True
    new[1:] = (xs[1:] != xs[:-1]).any(axis=1)
    group = np.cumsum(new) - 1
    inverse = np.empty(x.shape[0], dtype=np.int64)
    inverse[order] = group
    return xs[new], inverse


def forward_unique(params: PolicyParams, states: np.ndarray):
    """Forward pass evaluated once per distinct state row.

    Lattice states take few distinct values, so this is much cheaper than
    :func:`forward` on large populations. Results agree with :func:`forward`
    to rounding (BLAS may order sums differently for different batch shapes).
    """
    uniq, inverse = unique_rows(states)
    logits, probs, value = forward(params, uniq)
    return logits[inverse], probs[inverse], value[inverse]


# -- PPO objective and its gradient ---------------------------------------------

@dataclass
class LossReport:
    """Batch means of the three objective terms plus PPO diagnostics.

    ``total`` is the maximised objective ``clip - delta * value + rho * entropy``.
    """

    clip: float
    value: float
    entropy: float
    total: float
    mean_ratio: float
    clip_fraction: float


def ppo_objective_and_grad(params: PolicyParams, states, actions, old_logp, advantages,
                           targets, eps: float, delta: float, rho: float,
                           with_grad: bool = True, dedup=None):
    """Clipped PPO objective over a batch and the gradient of its negation.

    Returns ``(grads, report)``; ``grads`` is None when ``with_grad`` is false.
    The ReLU derivative at exactly 0 is 0; samples whose clipped branch is
    selected contribute nothing to the policy gradient.

    ``dedup`` may carry a precomputed ``(distinct_states, inverse)`` pair for
    ``states``; rows of ``distinct_states`` absent from the batch are allowed.
    """
    states = np.asarray(states, dtype=np.float64)
    actions = np.asarray(actions, dtype=np.int64)
    old_logp = np.asarray(old_logp, dtype=np.float64)
    advantages = np.asarray(advantages, dtype=np.float64)
    targets = np.asarray(targets, dtype=np.float64)
    b = states.shape[0]
    if b == 0:
        raise ValueError("empty batch")
    if eps <= 0:
        raise ValueError("clip parameter must be positive")
    for name, arr in (("states", states), ("old_logp", old_logp),
                      ("advantages", advantages), ("targets", targets)):
        if not np.isfinite(arr).all():
            raise NonFiniteError(f"non-finite values in {name}")
    if states.ndim != 2 or states.shape[1] != params.state_dim:
        raise ValueError(f"state dimension {states.shape} does not match network input {params.state_dim}")

    # Evaluate the network once per distinct state; per-sample terms are
    # gathered through ``inverse`` and their gradients scattered back.
    uniq, inverse = unique_rows(states) if dedup is None else dedup
    pre1, h1, pre2, h2 = _trunk(params, uniq)
    logits_u = h2 @ params.W_actor.T + params.b_actor
    logp_all_u = log_softmax(logits_u)
    value_u = (h2 @ params.W_critic.T)[:, 0] + params.b_critic[0]

    logp_all = logp_all_u[inverse]
    probs = np.exp(logp_all)
    value = value_u[inverse]
    rows = np.arange(b)
    logp = logp_all[rows, actions]

    ratio = np.exp(logp - old_logp)
    clipped_ratio = np.clip(ratio, 1.0 - eps, 1.0 + eps)
    surr = np.minimum(ratio * advantages, clipped_ratio * advantages)
    flat = ((advantages > 0) & (ratio > 1.0 + eps)) | ((advantages < 0) & (ratio < 1.0 - eps))
    entropy = -(probs * logp_all).sum(axis=1)
    v_err = value - targets

    clip_term = surr.mean()
    value_term = (v_err ** 2).mean()
    entropy_term = entropy.mean()
    report = LossReport(
        clip=float(clip_term),
        value=float(value_term),
        entropy=float(entropy_term),
        total=float(clip_term - delta * value_term + rho * entropy_term),
        mean_ratio=float(ratio.mean()),
        clip_fraction=float(np.mean(np.abs(ratio - 1.0) > eps)),
    )
    if not np.isfinite(report.total):
        raise NonFiniteError("non-finite PPO objective")
    if not with_grad:
        return None, report

    # d(objective)/d(logits), per sample.
    g_logp = np.where(flat, 0.0, ratio * advantages)
    onehot = np.zeros_like(probs)
    onehot[rows, actions] = 1.0
    d_logits = g_logp[:, None] * (onehot - probs)
    d_logits += rho * (-probs * (logp_all + entropy[:, None]))
    # Descent direction is the negated objective, averaged over the batch.
    d_logits *= -1.0 / b
    d_value = (2.0 * delta / b) * v_err

    n_u = uniq.shape[0]
    dz = np.stack([np.bincount(inverse, weights=d_logits[:, k], minlength=n_u)
                   for k in range(N_ACTIONS)], axis=1)
    dv = np.bincount(inverse, weights=d_value, minlength=n_u)

    g_Wa = dz.T @ h2
    g_ba = dz.sum(axis=0)
    g_Wc = dv[None, :] @ h2
    g_bc = np.array([dv.sum()])
    d_h2 = dz @ params.W_actor + dv[:, None] * params.W_critic
    d_pre2 = d_h2 * (pre2 > 0)
    g_W2 = d_pre2.T @ h1
    g_b2 = d_pre2.sum(axis=0)
    d_pre1 = (d_pre2 @ params.W2) * (pre1 > 0)
    g_W1 = d_pre1.T @ uniq
    g_b1 = d_pre1.sum(axis=0)
    grads = PolicyParams(g_W1, g_b1, g_W2, g_b2, g_Wa, g_ba, g_Wc, g_bc)
    return grads, report


def backward(params: PolicyParams, batch, eps: float, delta: float, rho: float):
    """Gradient of the negated PPO objective for a batch.

    ``batch`` is a mapping (or object with attributes) holding ``states``,
    ``actions``, ``old_logp``, ``advantages`` and ``targets``.
    """
    get = batch.__getitem__ if isinstance(batch, dict) else lambda k: getattr(batch, k)
    return ppo_objective_and_grad(params, get("states"), get("actions"), get("old_logp"),
                                  get("advantages"), get("targets"), eps, delta, rho)


# -- optimiser -----------------------------------------------------------------

@dataclass
class OptState:
    """Adam moments, step counter and the scheduled learning rate."""

    m: PolicyParams
    v: PolicyParams
    lr0: float
    lr: float
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    lr_decay: float = 0.5
    lr_period: int = 1000


def init_opt(params: PolicyParams, lr: float, **kw) -> OptState:
    if lr <= 0:
        raise ValueError("learning rate must be positive")
    return OptState(m=params.zeros_like(), v=params.zeros_like(), lr0=lr, lr=lr, **kw)


def optimizer_step(opt: OptState, params: PolicyParams, grads: PolicyParams):
    """One bias-corrected Adam step. Returns new ``(params, opt)``."""
    if not grads.all_finite():
        raise NonFiniteError("non-finite gradient; parameters left unchanged")
    t = opt.step + 1
    c1 = 1.0 - opt.beta1 ** t
    c2 = 1.0 - opt.beta2 ** t
    new_p, new_m, new_v = {}, {}, {}
    for name in PARAM_NAMES:
        g = getattr(grads, name)
        m = opt.beta1 * getattr(opt.m, name) + (1.0 - opt.beta1) * g
        v = opt.beta2 * getattr(opt.v, name) + (1.0 - opt.beta2) * (g * g)
        new_m[name], new_v[name] = m, v
        new_p[name] = getattr(params, name) - opt.lr * (m / c1) / (np.sqrt(v / c2) + opt.eps)
    return PolicyParams(**new_p), replace(opt, m=PolicyParams(**new_m), v=PolicyParams(**new_v), step=t)


def lr_step(opt: OptState, iteration: int) -> OptState:
    """Step schedule: lr0 * decay ** (iteration // period), iteration 0-based."""
    return replace(opt, lr=opt.lr0 * opt.lr_decay ** (iteration // opt.lr_period))


# -- checkpoints -----------------------------------------------------------------
#
# Layout (all little-endian):
#   magic b"PGGACTCK", u32 version, u32 array count, then per array:
#   u16 name length, name (utf-8), u8 ndim, u32 * ndim shape, f8 * size data.

_MAGIC = b"PGGACTCK"
CHECKPOINT_VERSION = 1


def save_checkpoint(path, params: PolicyParams, opt: OptState | None = None) -> None:
    arrays = dict(params.arrays())
    if opt is not None:
        for name in PARAM_NAMES:
            arrays[f"opt.m.{name}"] = getattr(opt.m, name)
            arrays[f"opt.v.{name}"] = getattr(opt.v, name)
        arrays["opt.scalars"] = np.array([opt.lr0, opt.lr, opt.step, opt.beta1, opt.beta2,
                                          opt.eps, opt.lr_decay, opt.lr_period], dtype=np.float64)
    chunks = [_MAGIC, struct.pack("<II", CHECKPOINT_VERSION, len(arrays))]
    for name, arr in arrays.items():
        raw = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f8")
        chunks.append(struct.pack("<H", len(raw)) + raw)
        chunks.append(struct.pack("<B", arr.ndim) + struct.pack(f"<{arr.ndim}I", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    Path(path).write_bytes(b"".join(chunks))


def load_checkpoint(path):
    """Read a checkpoint; returns ``(params, opt_or_None)``."""
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != _MAGIC:
        raise ValueError(f"{path}: not a policy checkpoint")
    version, count = struct.unpack_from("<II", data, 8)
    if version != CHECKPOINT_VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {version}")
    try:
        arrays = _read_arrays(data, count)
        params = PolicyParams(**{name: arrays[name] for name in PARAM_NAMES})
    except (struct.error, ValueError, KeyError) as exc:
        raise ValueError(f"{path}: corrupt or truncated checkpoint ({exc})") from None
    opt = None
    if "opt.scalars" in arrays:
        lr0, lr, step, b1, b2, eps, decay, period = arrays["opt.scalars"]
        opt = OptState(
            m=PolicyParams(**{n: arrays[f"opt.m.{n}"] for n in PARAM_NAMES}),
            v=PolicyParams(**{n: arrays[f"opt.v.{n}"] for n in PARAM_NAMES}),
            lr0=float(lr0), lr=float(lr), step=int(step), beta1=float(b1), beta2=float(b2),
            eps=float(eps), lr_decay=float(decay), lr_period=int(period),
        )
    return params, opt


def _read_arrays(data: bytes, count: int) -> dict:
    pos = 16
    arrays = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<H", data, pos)
        pos += 2
        name = data[pos:pos + nlen].decode("utf-8")
        pos += nlen
        (ndim,) = struct.unpack_from("<B", data, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", data, pos)
        pos += 4 * ndim
        size = int(np.prod(shape)) if ndim else 1
        arrays[name] = np.frombuffer(data, dtype="<f8", count=size, offset=pos).reshape(shape).astype(np.float64)
        pos += 8 * size
    return arrays
