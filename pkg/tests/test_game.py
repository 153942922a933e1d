import itertools
import math

import numpy as np
import pytest

from pgg_act import kernels
from pgg_act.game import (ALL_DEFECT, HALF_HALF, InitScheme, cooperation_fraction, cumulative_payoffs,
                          group_payoffs, init_strategies, max_payoff_scale, read_pgm, write_pgm)
from pgg_act.lattice import build_lattice
from pgg_act.verify import brute_force_payoffs


def test_group_payoff_hand_values():
    # r=4, three cooperators of five: share 2.4.
    pay = group_payoffs([1, 1, 1, 0, 0], 4.0)
    np.testing.assert_allclose(pay, [1.4, 1.4, 1.4, 2.4, 2.4])


@pytest.mark.parametrize("r", [2.0, 3.0, 4.0, 5.0, 6.0])
def test_group_sum_conservation_all_patterns(r):
    for pattern in itertools.product((0, 1), repeat=5):
        assert math.fsum(group_payoffs(pattern, r)) == sum(pattern) * (r - 1.0)


@pytest.mark.parametrize("L", [3, 4, 5])
def test_cumulative_matches_brute_force(L):
    rng = np.random.default_rng(L)
    lat = build_lattice(L)
    for _ in range(50):
        s = rng.integers(0, 2, L * L).astype(np.int8)
        r = float(rng.choice([2.0, 3.0, 3.7, 4.0, 5.5]))
        np.testing.assert_array_equal(cumulative_payoffs(s, lat, r), brute_force_payoffs(s, L, r))


def test_uniform_fields():
    lat = build_lattice(5)
    np.testing.assert_array_equal(cumulative_payoffs(np.ones(25, np.int8), lat, 4.0), np.full(25, 15.0))
    np.testing.assert_array_equal(cumulative_payoffs(np.zeros(25, np.int8), lat, 4.0), np.zeros(25))


def test_lone_cooperator():
    lat = build_lattice(5)
    s = np.zeros(25, np.int8)
    s[12] = 1
    pay = cumulative_payoffs(s, lat, 5.0)
    assert pay[12] == pytest.approx(5 * (5.0 / 5 - 1))
    assert pay[7] == pytest.approx(2 * 1.0)  # neighbour shares two groups with the cooperator
    assert pay[0] == 0.0


def test_backends_bit_identical():
    rng = np.random.default_rng(1)
    lat = build_lattice(13)
    for _ in range(20):
        s = rng.integers(0, 2, lat.N).astype(np.int8)
        r = float(rng.uniform(1.5, 6.0))
        a = kernels.payoffs_numpy(s, lat.groups, r)
        if kernels.payoffs_numba is not None:
            assert np.array_equal(a, kernels.payoffs_numba(s, lat.groups, r))
        b = kernels.neighbor_counts_numpy(s, lat.neighbors)
        if kernels.neighbor_counts_numba is not None:
            assert np.array_equal(b, kernels.neighbor_counts_numba(s, lat.neighbors))


def test_half_half_layout():
    lat = build_lattice(5)
    s = init_strategies(HALF_HALF, lat, np.random.default_rng(0)).reshape(5, 5)
    assert (s[:3] == 0).all() and (s[3:] == 1).all()


def test_bernoulli_and_uniform_schemes():
    lat = build_lattice(40)
    s = init_strategies(InitScheme.parse("bernoulli:0.3"), lat, np.random.default_rng(0))
    assert abs(cooperation_fraction(s) - 0.3) < 0.03
    assert cooperation_fraction(init_strategies(ALL_DEFECT, lat, None)) == 0.0


@pytest.mark.parametrize("text", ["bernoulli:1.5", "nope", "all-defect:0.2"])
def test_bad_schemes(text):
    with pytest.raises(ValueError):
        InitScheme.parse(text)


def test_underscore_spelling_accepted():
    assert InitScheme.parse("Half_Half") == HALF_HALF


def test_scheme_round_trip():
    for text in ["half-half", "bernoulli:0.25", "all-defect", "all-cooperate"]:
        assert str(InitScheme.parse(text)) == text


def test_max_payoff_scale():
    assert max_payoff_scale(4.0) == 15.0


def test_pgm_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    s = rng.integers(0, 2, 36).astype(np.int8)
    write_pgm(tmp_path / "f.pgm", s, 6)
    data = (tmp_path / "f.pgm").read_bytes()
    assert data.startswith(b"P5\n6 6\n255\n")
    back = read_pgm(tmp_path / "f.pgm")
    np.testing.assert_array_equal(back.ravel(), s)
