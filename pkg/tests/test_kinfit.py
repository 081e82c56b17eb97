import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from doorkin.doorsim import generate_trajectory, prismatic_door, revolute_door
from doorkin.geometry import ParseError, Pose, handle_transform, rotation_about
from doorkin.kinfit import (AllOutliers, CoincidentPoints, CollinearPoints, DegenerateInliers,
                            FitConfig, NoValidHypothesis, PrismaticModel, RevoluteModel, TooFewObservations,
                            Trajectory, em_gamma, fit_minimal_prismatic, fit_minimal_revolute,
                            gaussian_pdf, mixture_log_likelihood, mlesac_fit, read_traj,
                            refine_on_inliers, residual, write_traj)


def traj_of(points, cls="door"):
    return Trajectory([Pose.from_translation(p) for p in points], cls)


def circle_points(c, n, r, angles):
    n = np.asarray(n, float) / np.linalg.norm(n)
    u = np.cross(n, [1.0, 0, 0]) if abs(n[0]) < 0.9 else np.cross(n, [0, 1.0, 0])
    u /= np.linalg.norm(u)
    v = np.cross(n, u)
    return np.array([np.asarray(c) + r * (math.cos(t) * u + math.sin(t) * v) for t in angles])


def lsq_circle_oracle(pts):
    """Independent fit: SVD plane, then linear least-squares circle (Kasa) in the plane."""
    c0 = pts.mean(axis=0)
    _, _, vt = np.linalg.svd(pts - c0)
    u, v, n = vt
    xy = np.column_stack([(pts - c0) @ u, (pts - c0) @ v])
    A = np.column_stack([2 * xy, np.ones(len(xy))])
    sol = np.linalg.lstsq(A, (xy ** 2).sum(axis=1), rcond=None)[0]
    centre = c0 + sol[0] * u + sol[1] * v
    return centre, n, math.sqrt(sol[2] + sol[0] ** 2 + sol[1] ** 2)


def angle_deg(u, v):
    return math.degrees(math.acos(min(1.0, abs(float(np.dot(u, v))))))


# ---- residuals and minimal fits

def test_residual_examples():
    assert residual(PrismaticModel([0, 0, 0], [0, 0, 1]), Pose.from_translation([1, 0, 5])) == 1.0
    rev = RevoluteModel([0, 0, 0], [0, 0, 1], 1.0)
    assert residual(rev, Pose.from_translation([2, 0, 0])) == 1.0
    assert residual(rev, Pose.from_translation([1, 0, 0.5])) == 0.5


def test_fit_minimal_prismatic():
    m = fit_minimal_prismatic([0, 0, 0], [0, 0, 2])
    np.testing.assert_array_equal(m.a, [0, 0, 0])
    np.testing.assert_array_equal(m.e, [0, 0, 1])
    np.testing.assert_allclose(fit_minimal_prismatic([0, 0, 0], [3, 4, 0]).e, [0.6, 0.8, 0])
    with pytest.raises(CoincidentPoints):
        fit_minimal_prismatic([1, 1, 1], [1, 1, 1])


def test_fit_minimal_revolute_symmetric():
    m = fit_minimal_revolute([1, 0, 0], [0, 1, 0], [-1, 0, 0])
    np.testing.assert_allclose(m.c, 0, atol=1e-15)
    assert m.r == pytest.approx(1.0, abs=1e-15)
    np.testing.assert_allclose(m.n, [0, 0, 1], atol=1e-15)  # counter-clockwise traversal


def test_fit_minimal_revolute_generated():
    pts = circle_points([1, 2, 3], [0, 0, 1], 2.0, [0.1, 1.3, 2.9])
    m = fit_minimal_revolute(*pts)
    np.testing.assert_allclose(m.c, [1, 2, 3], atol=1e-9)
    assert m.r == pytest.approx(2.0, abs=1e-9)
    with pytest.raises(CollinearPoints):
        fit_minimal_revolute([0, 0, 0], [1, 1, 1], [2, 2, 2])


# ---- refinement

def test_refine_noiseless():
    pts = np.array([[0, 0, t] for t in np.linspace(0, 1, 10)]) + [1, 2, 3]
    m = refine_on_inliers(PrismaticModel([1, 2, 3], [0.1, 0, 1]), pts)
    assert residual(m, pts).max() <= 1e-9
    arc = circle_points([0.5, -0.2, 1.0], [0.3, 0.1, 1.0], 0.8, np.linspace(0, 1.5, 12))
    rm = refine_on_inliers(RevoluteModel([0.4, -0.2, 1.0], [0, 0, 1], 0.7), arc)
    assert residual(rm, arc).max() <= 1e-9


def test_refine_noisy_line(rng):
    t = np.linspace(0, 1, 50)
    e = np.array([1.0, 2.0, 0.5]) / np.linalg.norm([1, 2, 0.5])
    truth = np.outer(t, e)
    pts = truth + rng.normal(0, 0.005, truth.shape)
    m = refine_on_inliers(fit_minimal_prismatic(pts[0], pts[-1]), pts)
    oracle_axis = np.linalg.svd(truth - truth.mean(axis=0))[2][0]
    assert angle_deg(m.e, oracle_axis) < 1.0


def test_refine_noisy_arc(rng):
    arc = circle_points([0, 0, 0], [0, 0, 1], 0.8, np.linspace(0, math.pi / 2, 50))
    pts = arc + rng.normal(0, 0.005, arc.shape)
    m = refine_on_inliers(fit_minimal_revolute(pts[0], pts[25], pts[-1]), pts)
    assert abs(m.r - 0.8) < 0.02


def test_refine_does_not_increase_residual_sum(rng):
    arc = circle_points([0, 0, 0], [0, 0, 1], 0.6, np.linspace(0, 1.2, 30))
    pts = arc + rng.normal(0, 0.004, arc.shape)
    start = fit_minimal_revolute(pts[0], pts[15], pts[-1])
    refined = refine_on_inliers(start, pts)
    assert (residual(refined, pts) ** 2).sum() <= (residual(start, pts) ** 2).sum() + 1e-15


def test_refine_degenerate():
    with pytest.raises(DegenerateInliers):
        refine_on_inliers(PrismaticModel([0, 0, 0], [1, 0, 0]), np.zeros((3, 3)))


# ---- mixture likelihood and EM

def test_em_on_zero_errors_closed_form():
    sigma, nu, n = 0.005, 0.7, 50
    phi0 = 1 / (math.sqrt(2 * math.pi) * sigma)
    g = 0.5
    for _ in range(10):
        g = min(max(g * phi0 / (g * phi0 + (1 - g) / nu), 1e-3), 1 - 1e-3)
    gamma, trace = em_gamma(np.zeros(n), sigma, nu, 10)
    assert float(gamma) == pytest.approx(g, rel=1e-12)
    assert trace[-1] == pytest.approx(n * math.log(g * phi0 + (1 - g) / nu), rel=1e-12)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0, 2), min_size=1, max_size=40), st.floats(0.001, 0.1),
       st.floats(0.05, 5), st.floats(0.01, 0.99))
def test_em_monotone(errors, sigma, nu, g0):
    _, trace = em_gamma(np.array(errors), sigma, nu, 15, gamma0=g0)
    assert all(b >= a - 1e-9 * max(1.0, abs(a)) for a, b in zip(trace, trace[1:]))


def test_mixture_log_likelihood_matches_formula():
    e = np.array([0.0, 0.01, 0.3])
    got = mixture_log_likelihood(e, 0.8, 0.005, 2.0)
    want = sum(math.log(0.8 * gaussian_pdf(x, 0.005) + 0.2 / 2.0) for x in e)
    assert got == pytest.approx(want, rel=1e-13)


# ---- MLESAC

H = handle_transform([-1, 0, 0], [1.9, 0.3, 1.0])


def test_mlesac_noiseless_prismatic():
    door = prismatic_door(H, noise_sigma=0.0)
    traj = generate_trajectory(door, 50, seed=0)
    fit = mlesac_fit(traj, "prismatic")
    assert residual(fit.model, traj).max() <= 1e-9
    # all residuals zero: the likelihood is the EM fixed point evaluated at e = 0
    gamma, trace = em_gamma(np.zeros(50), fit.sigma, fit.nu, 10)
    assert fit.log_likelihood == pytest.approx(trace[-1], rel=1e-12)
    assert fit.gamma == pytest.approx(1 - 1e-3)


def test_mlesac_revolute_with_outliers():
    door = revolute_door(H, 0.8, travel_limit=math.radians(100), noise_sigma=0.005, outlier_rate=0.2,
                         outlier_volume=((1.0, 0.0, 0.5), (2.0, 1.0, 1.5)))
    traj, is_out = generate_trajectory(door, 60, seed=4, return_labels=True)
    fit = mlesac_fit(traj, "revolute", FitConfig(nu_volume=1.0))
    assert abs(fit.model.r - 0.8) < 0.02
    assert angle_deg(fit.model.n, door.true_model.n) < 2.0
    assert fit.inlier_flags[~is_out].mean() >= 0.9
    # least-squares oracle on the true inliers agrees
    c, n, r = lsq_circle_oracle(traj.positions[~is_out])
    assert abs(fit.model.r - r) < 0.02


def test_mlesac_too_few():
    with pytest.raises(TooFewObservations):
        mlesac_fit(traj_of([[0, 0, 0]]), "prismatic")
    with pytest.raises(TooFewObservations):
        mlesac_fit(traj_of([[0, 0, 0], [1, 0, 0]]), "revolute")


def test_mlesac_all_outliers():
    rng = np.random.default_rng(3)
    # the best line passes through two points, so gamma is about 2/100
    traj = traj_of(rng.random((100, 3)) * 5)
    with pytest.raises(AllOutliers):
        mlesac_fit(traj, "prismatic", FitConfig(sigma=1e-4))


def test_mlesac_deterministic():
    door = revolute_door(H, 0.6, noise_sigma=0.005, outlier_rate=0.1)
    traj = generate_trajectory(door, 30, seed=1)
    a = mlesac_fit(traj, "revolute", seed=3)
    b = mlesac_fit(traj, "revolute", seed=3)
    assert a.log_likelihood == b.log_likelihood
    assert np.array_equal(a.model.c, b.model.c)


def test_mlesac_rigid_invariance():
    door = revolute_door(H, 0.7, noise_sigma=0.004)
    traj = generate_trajectory(door, 25, seed=2)
    t = Pose(rotation_about([0.3, -0.5, 0.8], 1.1), [0.4, -2.0, 0.7])
    fit = mlesac_fit(traj, "revolute")
    assert fit.nu == pytest.approx(mlesac_fit(Trajectory([t @ p for p in traj.observations]), "revolute").nu)
    moved = Trajectory([t @ p for p in traj.observations])
    np.testing.assert_allclose(residual(fit.model.transformed(t), moved), residual(fit.model, traj),
                               atol=1e-9)
    assert mlesac_fit(moved, "revolute").log_likelihood == pytest.approx(fit.log_likelihood, abs=1e-6)


def test_em_trace_monotone_in_fit():
    door = prismatic_door(H, noise_sigma=0.005, outlier_rate=0.2,
                          outlier_volume=((1.0, 0.0, 0.5), (2.5, 1.0, 1.5)))
    fit = mlesac_fit(generate_trajectory(door, 40, seed=9), "prismatic")
    assert all(b >= a - 1e-9 for a, b in zip(fit.em_trace, fit.em_trace[1:]))


def test_prismatic_beats_revolute_on_line():
    pts = np.array([[0.1 * i, 0.05 * i, 1.0] for i in range(15)])
    traj = traj_of(pts)
    p = mlesac_fit(traj, "prismatic")
    assert residual(p.model, traj).max() <= 1e-9
    # exactly collinear data admit no finite circle at all
    with pytest.raises(NoValidHypothesis):
        mlesac_fit(traj, "revolute")
    bent = pts + np.outer(np.linspace(-1, 1, 15) ** 2, [0, 0, 1e-4])
    r = mlesac_fit(traj_of(bent), "revolute", max_radius=1e6)
    assert residual(p.model, traj).sum() <= residual(r.model, traj).sum()


def test_orientation_follows_motion():
    door = prismatic_door(H, noise_sigma=0.0)
    fit = mlesac_fit(generate_trajectory(door, 10), "prismatic")
    assert fit.model.e @ door.true_model.e > 0.999
    rev = revolute_door(H, 0.5, noise_sigma=0.0)
    fit = mlesac_fit(generate_trajectory(rev, 10), "revolute")
    assert fit.model.n @ rev.true_model.n > 0.999


def test_rotation_residuals_zero_on_true_door():
    rev = revolute_door(H, 0.5, noise_sigma=0.0)
    fit = mlesac_fit(generate_trajectory(rev, 10), "revolute")
    assert fit.rotation_residuals.max() < 1e-6


# ---- files

def test_traj_round_trip(tmp_path):
    traj = generate_trajectory(revolute_door(H, 0.8), 12, seed=5)
    traj = Trajectory(traj.observations, "cabinet_door")
    write_traj(traj, tmp_path / "t.traj")
    back = read_traj(tmp_path / "t.traj")
    assert back.to_text() == traj.to_text()
    assert back.door_class == "cabinet_door"


@pytest.mark.parametrize("text,line", [
    ("TRAJ window 1\n0 0 0 0 0 0 1\n", 1),
    ("TRAJ door 2\n0 0 0 0 0 0 1\n0 0 0 0 0 1\n", 3),
    ("TRAJ door 3\n0 0 0 0 0 0 1\n", None),
    ("POSES door 1\n", 1),
])
def test_traj_parse_errors(tmp_path, text, line):
    (tmp_path / "t.traj").write_text(text)
    with pytest.raises(ParseError) as exc:
        read_traj(tmp_path / "t.traj")
    if line is not None:
        assert exc.value.line == line


def test_model_invariants():
    with pytest.raises(ValueError):
        RevoluteModel([0, 0, 0], [0, 0, 1], 0.0)
    m = PrismaticModel([0, 0, 0], [0, 3, 4])
    assert abs(np.linalg.norm(m.e) - 1) < 1e-12
    assert (PrismaticModel.k, RevoluteModel.k) == (6, 7)
