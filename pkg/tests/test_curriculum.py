from dataclasses import replace

import numpy as np
import pytest

from pgg_act.curriculum import (PHASE1_DEFAULT, PHASE2_DEFAULT, ActConfig, PhaseConfig,
                                act_transition, run_act, run_phase, run_ppo, trial_rngs)
from pgg_act.game import ALL_DEFECT, HALF_HALF, InitScheme, init_strategies
from pgg_act.lattice import build_lattice
from pgg_act.nn import init_opt, init_params, load_checkpoint, optimizer_step


def small_act(seed=0, t1=3, t2=4, init=HALF_HALF, L=6):
    return ActConfig(phase1=replace(PHASE1_DEFAULT, epochs=t1, init=init),
                     phase2=replace(PHASE2_DEFAULT, epochs=t2, init=init), L=L, hidden=16, seed=seed)


def test_phase_defaults():
    assert (PHASE1_DEFAULT.r, PHASE1_DEFAULT.lr, PHASE1_DEFAULT.gamma, PHASE1_DEFAULT.rho) == (5.0, 0.001, 0.99, 0.01)
    assert (PHASE2_DEFAULT.r, PHASE2_DEFAULT.gamma, PHASE2_DEFAULT.rho, PHASE2_DEFAULT.epochs) == (4.0, 0.96, 0.001, 9000)
    assert (PHASE2_DEFAULT.eps, PHASE2_DEFAULT.lam, PHASE2_DEFAULT.delta) == (0.2, 0.95, 0.5)
    assert PHASE1_DEFAULT.epochs == 1000


@pytest.mark.parametrize("bad", [dict(epochs=0), dict(r=1.0), dict(lr=0.0), dict(gamma=1.0),
                                 dict(eps=0.0), dict(horizon=0),
                                 dict(minibatch=-1)])
def test_invalid_phase_rejected(bad):
    with pytest.raises(ValueError):
        replace(PHASE2_DEFAULT, **bad).validate()


def test_transition_keeps_weights_and_resets_optimizer():
    lat = build_lattice(6)
    rng = np.random.default_rng(0)
    p = init_params(3, 8, rng)
    opt = init_opt(p, 0.001)
    p, opt = optimizer_step(opt, p, p.map(lambda a: np.ones_like(a)))
    s, p2, opt2 = act_transition(replace(PHASE2_DEFAULT, lr=0.003), p, lat, rng)
    for name, arr in p.arrays().items():
        assert np.array_equal(arr, getattr(p2, name))
    assert opt2.step == 0 and opt2.lr == 0.003 and opt2.lr0 == 0.003
    assert all(np.all(v == 0) for v in opt2.m.arrays().values())
    assert np.array_equal(s, init_strategies(HALF_HALF, lat, None))


def test_timeline_and_boundary():
    rec = run_act(small_act(t1=3, t2=4))
    assert len(rec.fractions) == 3 + 4 + 1
    assert rec.phase_boundary == 3
    assert rec.fractions[3] == 0.5  # reset half-half field
    assert len(rec.log_rows) == 7
    assert [row["iteration"] for row in rec.log_rows] == list(range(1, 8))


def test_all_defect_reset():
    rec = run_act(small_act(t1=2, t2=2, init=ALL_DEFECT))
    assert rec.fractions[0] == 0.0 and rec.fractions[2] == 0.0


def test_snapshots_global_indices():
    rec = run_act(small_act(t1=3, t2=4), snapshots=(0, 1, 3, 7, 50))
    assert sorted(rec.snapshots) == [0, 1, 3, 7]
    np.testing.assert_array_equal(rec.snapshots[3], init_strategies(HALF_HALF, build_lattice(6), None))
    np.testing.assert_array_equal(rec.snapshots[7], rec.final_field)


def test_deterministic():
    a, b = run_act(small_act(seed=4)), run_act(small_act(seed=4))
    assert a.fractions == b.fractions
    assert np.array_equal(a.final_field, b.final_field)
    c = run_act(small_act(seed=5, init=InitScheme("bernoulli")))
    assert c.fractions != a.fractions


def test_checkpoints_and_phase2_only(tmp_path):
    cfg = small_act(t1=3, t2=4)
    full = run_act(cfg, checkpoint_dir=tmp_path)
    assert [p.split("/")[-1] for p in full.checkpoints] == ["phase1.ckpt", "final.ckpt"]
    params, opt = load_checkpoint(tmp_path / "phase1.ckpt")
    assert opt.step > 0
    only = run_act(cfg, phase1_checkpoint=tmp_path / "phase1.ckpt")
    assert len(only.fractions) == 5 and only.phase_boundary == 0
    assert only.fractions[0] == 0.5


def test_phase_learning_rate_schedule():
    lat = build_lattice(5)
    init_rng, rng = trial_rngs(0)
    p = init_params(3, 8, init_rng)
    cfg = replace(PHASE2_DEFAULT, epochs=3)
    opt = replace(init_opt(p, 0.01), lr_period=2)
    _, opt, rec = run_phase(cfg, p, opt, lat, rng)
    assert [row["lr"] for row in rec.log_rows] == [0.01, 0.01, 0.005]


def test_run_ppo_length():
    rec = run_ppo(replace(PHASE2_DEFAULT, epochs=5), 5, seed=0, hidden=8)
    assert len(rec.fractions) == 6 and rec.phase_boundary == 0


def test_trial_rngs_independent_streams():
    a, b = trial_rngs(0)
    assert a.random() != b.random()
    c, _ = trial_rngs(0)
    assert trial_rngs(0)[0].random() == c.random()


def test_phase_config_is_hashable():
    assert isinstance(hash(PhaseConfig(r=4.0, epochs=1)), int)
