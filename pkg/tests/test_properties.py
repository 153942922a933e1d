import numpy as np
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from pgg_act.experiments import confidence_interval
from pgg_act.game import cumulative_payoffs
from pgg_act.lattice import build_lattice
from pgg_act.nn import unique_rows
from pgg_act.ppo import compute_gae, encode_states
from pgg_act.verify import gae_double_sum

sides = st.integers(3, 9)
rs = st.floats(1.1, 8.0, allow_nan=False)
unit = st.floats(0.0, 0.99)


@st.composite
def fields(draw):
    L = draw(sides)
    bits = draw(arrays(np.int8, L * L, elements=st.integers(0, 1)))
    return L, bits


@given(fields(), rs)
def test_total_payoff_conserved(field, r):
    L, s = field
    pay = cumulative_payoffs(s, build_lattice(L), r)
    assert np.isclose(pay.sum(), 5 * (r - 1.0) * s.sum(), rtol=1e-12, atol=1e-9)


@given(fields(), rs, st.integers(0, 8), st.integers(0, 8))
def test_payoffs_translation_equivariant(field, r, dy, dx):
    L, s = field
    lat = build_lattice(L)
    shifted = np.roll(s.reshape(L, L), (dy, dx), axis=(0, 1)).ravel()
    expected = np.roll(cumulative_payoffs(s, lat, r).reshape(L, L), (dy, dx), axis=(0, 1)).ravel()
    assert np.array_equal(cumulative_payoffs(shifted, lat, r), expected)


@given(fields(), rs)
def test_encoding_in_unit_box(field, r):
    L, s = field
    lat = build_lattice(L)
    obs = encode_states(s, cumulative_payoffs(s, lat, r), lat, r)
    assert obs.shape == (L * L, 3) and np.abs(obs).max() <= 1.0
    assert set(np.unique(obs[:, 1])) <= {0.0, 0.25, 0.5, 0.75, 1.0}


finite = st.floats(-100, 100, allow_nan=False)


@given(st.integers(1, 8).flatmap(lambda T: st.tuples(
    arrays(np.float64, T, elements=finite), arrays(np.float64, T, elements=finite))),
    finite, unit, unit)
def test_gae_matches_oracle(series, boot, gamma, lam):
    rew, val = series
    adv, tgt = compute_gae(rew, val, boot, gamma, lam)
    np.testing.assert_allclose(adv, gae_double_sum(rew, val, boot, gamma, lam), rtol=1e-9, atol=1e-9)
    np.testing.assert_allclose(tgt, adv + val, rtol=0, atol=0)


@given(arrays(np.float64, st.tuples(st.integers(0, 60), st.just(3)),
              elements=st.sampled_from([0.0, 0.25, 0.5, -1.0, 1.0])))
def test_unique_rows_reconstructs(x):
    u, inv = unique_rows(x)
    assert np.array_equal(u[inv], x)
    assert len(u) == len({tuple(row) for row in x})


@settings(max_examples=50)
@given(st.lists(st.floats(0.0, 1.0), min_size=2, max_size=60))
def test_ci_contains_mean_or_undefined(samples):
    ci = confidence_interval(samples)
    x = np.asarray(samples)
    if x.std(ddof=1) == 0:
        assert ci is None
    else:
        lo, hi = ci
        assert 0.0 <= lo <= x.mean() + 1e-12 and x.mean() - 1e-12 <= hi <= 1.0
