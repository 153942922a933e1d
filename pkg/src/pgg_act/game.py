"""Public goods game: payoffs, strategy initialisation, observables, snapshots.

Strategy fields are flat int8 arrays of length N in row-major order with
1 = cooperate and 0 = defect. Every agent plays one strategy in all five of
its groups.
"""
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .lattice import GROUP_SIZE, Lattice

DEFECT, COOPERATE = 0, 1

_KINDS = ("half-half", "bernoulli", "all-defect", "all-cooperate")


@dataclass(frozen=True)
class InitScheme:
    kind: str
    p: float = 0.5

    def __post_init__(self):
        if self.kind not in _KINDS:
            raise ValueError(f"unknown init scheme {self.kind!r}; expected one of {_KINDS}")
        if not 0.0 <= self.p <= 1.0:
            raise ValueError(f"Bernoulli probability must lie in [0, 1], got {self.p}")

    @classmethod
    def parse(cls, text: str) -> "InitScheme":
        """Parse ``half-half``, ``all-defect``, ``all-cooperate``, ``bernoulli[:p]``."""
        kind, _, arg = text.strip().lower().partition(":")
        kind = kind.replace("_", "-")
        if kind == "bernoulli":
            return cls(kind, float(arg) if arg else 0.5)
        if arg:
            raise ValueError(f"init scheme {kind!r} takes no argument")
        return cls(kind)

    def __str__(self):
        return f"bernoulli:{self.p:g}" if self.kind == "bernoulli" else self.kind


HALF_HALF = InitScheme("half-half")
ALL_DEFECT = InitScheme("all-defect")
ALL_COOPERATE = InitScheme("all-cooperate")


def init_strategies(scheme: InitScheme, lat: Lattice, rng: np.random.Generator) -> np.ndarray:
    """Initial strategy field.

    Half-half puts defectors on the upper ceil(L/2) rows. Only the Bernoulli
    scheme consumes random numbers (exactly N uniforms).
    """
    n = lat.N
    if scheme.kind == "all-defect":
        return np.zeros(n, dtype=np.int8)
    if scheme.kind == "all-cooperate":
        return np.ones(n, dtype=np.int8)
    if scheme.kind == "half-half":
        rows = np.arange(n) // lat.L
        return (rows >= (lat.L + 1) // 2).astype(np.int8)
    return (rng.random(n) < scheme.p).astype(np.int8)


def group_payoffs(strategies, r: float) -> np.ndarray:
    """Payoffs of the members of one group, in the order given."""
    s = np.asarray(strategies, dtype=np.int64)
    size = s.shape[0]
    share = r * float(s.sum()) / float(size)
    return share - s.astype(np.float64)


def cumulative_payoffs(strategies: np.ndarray, lat: Lattice, r: float) -> np.ndarray:
    """Total payoff of each agent over the five groups it belongs to."""
    return kernels.payoffs(np.ascontiguousarray(strategies, dtype=np.int8), lat.groups, float(r))


def cooperation_fraction(strategies: np.ndarray) -> float:
    s = np.asarray(strategies)
    return float(np.count_nonzero(s)) / s.size


def max_payoff_scale(r: float) -> float:
    """Payoff of a cooperator in an all-cooperator neighbourhood, G * (r - 1)."""
    return GROUP_SIZE * (r - 1.0)


# -- snapshots ---------------------------------------------------------------

def write_pgm(path, strategies: np.ndarray, L: int) -> None:
    """Binary P5 graymap: 255 = cooperator (white), 0 = defector (black)."""
    pixels = np.where(np.asarray(strategies).reshape(L, L) > 0, 255, 0).astype(np.uint8)
    header = f"P5\n{L} {L}\n255\n".encode("ascii")
    Path(path).write_bytes(header + pixels.tobytes())


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`; returns a flat int8 strategy field."""
    data = Path(path).read_bytes()
    fields = []
    pos = 0
    while len(fields) < 4:
        while data[pos:pos + 1].isspace():
            pos += 1
        if data[pos:pos + 1] == b"#":
            pos = data.index(b"\n", pos) + 1
            continue
        end = pos
        while not data[end:end + 1].isspace():
            end += 1
        fields.append(data[pos:end])
        pos = end
    if fields[0] != b"P5":
        raise ValueError(f"{path}: not a binary PGM file")
    width, height, maxval = (int(f) for f in fields[1:])
    pixels = np.frombuffer(data[pos + 1:pos + 1 + width * height], dtype=np.uint8)
    if pixels.size != width * height:
        raise ValueError(f"{path}: truncated pixel data")
    return (pixels > maxval // 2).astype(np.int8)
