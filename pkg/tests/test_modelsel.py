import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from doorkin.doorsim import generate_trajectory, prismatic_door, revolute_door
from doorkin.geometry import Pose, handle_transform
from doorkin.kinfit import FitConfig, TooFewObservations, Trajectory
from doorkin.modelsel import NoCandidateFits, bic, posteriors, select_model

H = handle_transform([-1, 0, 0], [1.9, 0.3, 1.0])
VOLUME = ((1.0, -0.5, 0.5), (2.5, 1.5, 1.5))
# exp(-dBIC / 2) underflows to 0 past dBIC ~ 1490, so strict positivity is checked on a narrower range
bic_values = st.floats(-700, 700, allow_nan=False)
wide_bic_values = st.floats(-1e6, 1e6, allow_nan=False)


def test_bic_examples():
    assert bic(0.0, 6, 10) == 6 * math.log(10)
    assert bic(0.0, 7, 10) == pytest.approx(16.1181, abs=1e-4)
    assert bic(-5.0, 6, 1) == 10.0
    with pytest.raises(ValueError):
        bic(0.0, 6, 0)


def test_posteriors_examples():
    assert posteriors([3.0, 3.0]).tolist() == [0.5, 0.5]
    np.testing.assert_allclose(posteriors([10.0, 10.0 + 2 * math.log(9)]), [0.9, 0.1], atol=1e-12)
    assert posteriors([42.0]).tolist() == [1.0]
    with pytest.raises(ValueError):
        posteriors([])


@given(st.lists(bic_values, min_size=1, max_size=6), st.floats(-1e3, 1e3))
def test_posteriors_shift_invariant_and_normalized(bics, shift):
    p = posteriors(bics)
    assert abs(p.sum() - 1) <= 1e-9
    assert np.all(p > 0) and np.all(p <= 1)
    np.testing.assert_allclose(posteriors(np.array(bics) + shift), p, atol=1e-9)


@given(st.lists(wide_bic_values, min_size=1, max_size=6))
def test_posteriors_sum_to_one_wide(bics):
    p = posteriors(bics)
    assert abs(p.sum() - 1) <= 1e-9 and p.max() > 0


@given(st.floats(-1e3, 1e3), st.integers(1, 1000))
def test_bic_penalty_gap_is_ln_n(ll, n):
    assert bic(ll, 7, n) - bic(ll, 6, n) == pytest.approx(math.log(n), abs=1e-9)


def test_select_prismatic_with_outliers():
    d = prismatic_door(H, travel_limit=1.0, noise_sigma=0.005, outlier_rate=0.1, outlier_volume=VOLUME)
    sel = select_model(generate_trajectory(d, 40, seed=3))
    assert sel.winner == "prismatic" and sel.posterior("prismatic") > 0.9


def test_select_revolute_with_outliers():
    d = revolute_door(H, 0.8, travel_limit=math.radians(70), noise_sigma=0.005, outlier_rate=0.1,
                      outlier_volume=VOLUME)
    sel = select_model(generate_trajectory(d, 40, seed=3))
    assert sel.winner == "revolute" and sel.posterior("revolute") > 0.9


def test_select_early_arc_is_undecided():
    d = revolute_door(H, 0.8, travel_limit=0.12, noise_sigma=0.005)
    sel = select_model(generate_trajectory(d, 5, seed=1))
    assert 0.0 < sel.posterior("revolute") < 1.0
    assert abs(sum(c.posterior for c in sel.candidates) - 1) <= 1e-9


def test_select_needs_three():
    d = prismatic_door(H)
    with pytest.raises(TooFewObservations):
        select_model(generate_trajectory(d, 2))


def test_single_candidate_wins_with_posterior_one():
    traj = Trajectory([Pose.from_translation([0.1 * i, 0, 0]) for i in range(6)])
    sel = select_model(traj)  # collinear: no finite circle
    assert sel.winner == "prismatic" and sel.posterior("prismatic") == 1.0
    assert "revolute" in sel.errors and sel.bic("revolute") == math.inf


def test_no_candidate_fits():
    with pytest.raises(NoCandidateFits):
        select_model(Trajectory([Pose.identity()] * 4))


def test_winner_has_min_bic_and_report_format():
    d = revolute_door(H, 0.6, noise_sigma=0.004)
    sel = select_model(generate_trajectory(d, 20, seed=8))
    assert sel.bic(sel.winner) == min(c.bic for c in sel.candidates)
    lines = sel.report().splitlines()
    assert lines[-1] == f"winner {sel.winner}"
    kind, b, p = lines[0].split()
    assert kind == "prismatic" and float(b) == sel.bic("prismatic")


def test_tie_goes_to_prismatic(monkeypatch):
    import doorkin.modelsel as ms
    monkeypatch.setattr(ms, "bic", lambda ll, k, n: 1.0)
    d = revolute_door(H, 0.5, noise_sigma=0.0)
    sel = ms.select_model(generate_trajectory(d, 10))
    assert sel.winner == "prismatic"
    assert sel.posterior("prismatic") == sel.posterior("revolute") == 0.5


@pytest.mark.slow
def test_asymptotic_winner_statistics():
    rng = np.random.default_rng(0)
    ok_p = ok_r = 0
    for s in range(100):
        yaw = rng.uniform(-0.6, 0.6)
        h = handle_transform([-math.cos(yaw), -math.sin(yaw), 0], [1.9, 0.3, 1.0])
        d = prismatic_door(h, travel_limit=rng.uniform(0.3, 1.0), noise_sigma=0.005,
                           outlier_rate=0.1, outlier_volume=VOLUME)
        ok_p += select_model(generate_trajectory(d, 30, seed=s)).posterior("prismatic") > 0.9
        d = revolute_door(h, rng.uniform(0.3, 1.2), hinge_side=rng.choice([-1, 1]),
                          travel_limit=rng.uniform(math.radians(60), math.radians(100)),
                          noise_sigma=0.005, outlier_rate=0.1, outlier_volume=VOLUME)
        ok_r += select_model(generate_trajectory(d, 30, seed=s)).posterior("revolute") > 0.9
    assert ok_p >= 95 and ok_r >= 95
