import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from safeswitch import matops, model
from safeswitch.errors import DimensionError, ModelFormatError, NotPositiveDefiniteError


def scalar_system(a=0.5, b=1.0, c=1.0):
    return model.SystemModel([[a]], [[b]], [[c]], [[1.0]], [[1.0]], [[1.0]], [[1.0]])


def scalar_ctrl(ac, bc, lc, kc, label=model.PRIMARY):
    return model.DynamicController([[ac]], [[bc]], [[lc]], [[kc]], label)


def test_cal_A0_zero_controller():
    sys = scalar_system(0.7)
    np.testing.assert_array_equal(model.build_cal_A0(sys, model.zero_controller(sys)), [[0.7, 0.0], [0.0, 0.0]])


def test_cal_A0_scalar_substitution():
    sys = scalar_system()
    ctrl = scalar_ctrl(0.2, 0.1, 0.3, 0.4, model.FALLBACK)
    np.testing.assert_allclose(model.build_cal_A0(sys, ctrl), [[0.5, 0.4], [0.3, 0.24]], atol=1e-15)


def test_cal_A_lower_triangular_when_gain_zero():
    rng = np.random.default_rng(1)
    sys = model.random_stable_system(1, 3, 2, 2, 0.8)
    ctrl = model.DynamicController(rng.standard_normal((2, 2)), rng.standard_normal((2, 2)),
                                   rng.standard_normal((2, 2)), np.zeros((2, 2)))
    assert np.all(model.build_cal_A1(sys, ctrl)[:3, 3:] == 0)


def test_sigma_examples():
    sys = scalar_system()
    zero = model.zero_controller(sys)
    S = model.build_Sigma(sys, zero.relabel(model.PRIMARY), zero)
    np.testing.assert_array_equal(S, np.diag([1.0, 0.0, 0.0]))
    S = model.build_Sigma(sys, scalar_ctrl(0, 0, 2.0, 0), scalar_ctrl(0, 0, 1.0, 0, model.FALLBACK))
    np.testing.assert_allclose(S, [[1, 0, 0], [0, 1, 2], [0, 2, 4]])


def test_scr_A1_zero_primary_gain():
    sys = scalar_system()
    primary = scalar_ctrl(0.3, 0.7, 0.2, 0.0)
    fallback = scalar_ctrl(0.1, 0.5, 0.4, 0.6, model.FALLBACK)
    S1 = model.build_scr_A1(sys, primary, fallback)
    # third block column is [0; 0; A1] when K1 = 0
    np.testing.assert_allclose(S1[:, 2], [0.0, 0.0, 0.3])


def test_scr_blocks_scalar_substitution():
    a, b, c = 0.5, 1.0, 1.0
    sys = scalar_system(a, b, c)
    A1, B1, L1, K1 = 0.3, 0.7, 0.2, 0.9
    A0, B0, L0, K0 = 0.1, 0.5, 0.4, 0.6
    primary = scalar_ctrl(A1, B1, L1, K1)
    fallback = scalar_ctrl(A0, B0, L0, K0, model.FALLBACK)
    S1 = model.build_scr_A1(sys, primary, fallback)
    S0 = model.build_scr_A0(sys, primary, fallback)
    np.testing.assert_allclose(S1, [[a, 0, b * K1], [L0 * c, A0, B0 * K1], [L1 * c, 0, A1 + B1 * K1]])
    np.testing.assert_allclose(S0, [[a, b * K0, 0], [L0 * c, A0 + B0 * K0, 0], [L1 * c, B1 * K0, A1]])


def test_scr_A0_zero_pattern(optimal_pair):
    sys, primary, fallback = optimal_pair
    S0 = model.build_scr_A0(sys, primary, fallback)
    n, n0 = sys.n, fallback.nc
    assert np.all(S0[: n + n0, n + n0:] == 0)
    np.testing.assert_array_equal(S0[n + n0:, n + n0:], primary.Ac)
    S1 = model.build_scr_A1(sys, primary, fallback)
    assert np.all(S1[:n, n:n + n0] == 0)
    assert np.all(S1[n + n0:, n:n + n0] == 0)


def test_augmented_matrices_reproduce_dynamics():
    sys = model.random_stable_system(5, 3, 2, 2, 0.9)
    rng = np.random.default_rng(0)
    primary = model.DynamicController(*(rng.standard_normal(s) for s in [(4, 4), (4, 2), (4, 2), (2, 4)]))
    fallback = model.DynamicController(*(rng.standard_normal(s) for s in [(2, 2), (2, 2), (2, 2), (2, 2)]),
                                       label=model.FALLBACK)
    x, z0, z1 = rng.standard_normal(3), rng.standard_normal(2), rng.standard_normal(4)
    X = np.concatenate([x, z0, z1])
    for use_primary, scr in ((True, model.build_scr_A1), (False, model.build_scr_A0)):
        u = primary.Kc @ z1 if use_primary else fallback.Kc @ z0
        y = sys.C @ x
        nxt = np.concatenate([
            sys.A @ x + sys.B @ u,
            fallback.Ac @ z0 + fallback.Bc @ u + fallback.Lc @ y,
            primary.Ac @ z1 + primary.Bc @ u + primary.Lc @ y,
        ])
        np.testing.assert_allclose(scr(sys, primary, fallback) @ X, nxt, atol=1e-12)


def test_sigma_tilde_examples():
    Sigma = np.array([[2.0, 0.5], [0.5, 1.0]])
    np.testing.assert_allclose(model.build_sigma_tilde(np.zeros((2, 2)), Sigma), Sigma)
    assert model.build_sigma_tilde(np.array([[0.5]]), np.array([[1.0]]))[0, 0] == pytest.approx(4 / 3)
    nil = np.array([[0.0, 1.0], [0.0, 0.0]])
    np.testing.assert_allclose(model.build_sigma_tilde(nil, Sigma), Sigma + nil @ Sigma @ nil.T, atol=1e-14)


@given(st.integers(0, 10_000), st.integers(1, 5), st.integers(1, 3), st.integers(1, 3))
def test_randomized_structural_properties(seed, n, m, p):
    sys = model.random_stable_system(seed, n, m, p, 0.9)
    primary = model.synth_optimal_controller(sys)
    fallback = model.default_fallback(sys)
    aug = model.AugmentedSystem.build(sys, primary, fallback)
    assert aug.N == n + 1 + n
    assert matops.spectral_radius(aug.scrA0) < 1
    assert matops.spectral_radius(aug.scrA1) < 1
    assert matops.spectral_radius(aug.calA1) < 1
    assert matops.spectral_radius(primary.Ac) < 1
    diff = aug.SigmaTilde - aug.Sigma
    assert np.min(np.linalg.eigvalsh(0.5 * (diff + diff.T))) >= -1e-10 * np.linalg.norm(aug.SigmaTilde, 2)
    assert np.allclose(aug.Sigma, aug.Sigma.T)
    # the optimal controller used as its own fallback also satisfies the stability requirement
    assert matops.spectral_radius(model.build_cal_A0(sys, primary.relabel(model.FALLBACK))) < 1


def test_scalar_optimal_controller():
    sys = scalar_system()
    ctrl = model.synth_optimal_controller(sys)
    # P^2 - 0.25 P - 1 = 0, K* = -a P / (1 + P)
    P = (0.25 + math.sqrt(0.0625 + 4)) / 2
    assert ctrl.Kc[0, 0] == pytest.approx(-0.5 * P / (1 + P), abs=1e-12)
    assert ctrl.Lc[0, 0] == pytest.approx(0.5 * P / (1 + P), abs=1e-12)
    assert ctrl.Ac[0, 0] == pytest.approx(0.5 - ctrl.Lc[0, 0], abs=1e-15)


def test_zero_plant_gives_zero_gains():
    sys = model.SystemModel(np.zeros((2, 2)), np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.eye(2), np.eye(2))
    K, L = model.optimal_gains(sys)
    assert np.allclose(K, 0) and np.allclose(L, 0)


def test_perturb_controller():
    ctrl = scalar_ctrl(0.2, 0.1, 0.3, 0.4)
    assert model.perturb_controller(ctrl, 0.0).equals(ctrl)
    out = model.perturb_controller(ctrl, 1.0)
    np.testing.assert_allclose([out.Ac[0, 0], out.Bc[0, 0], out.Lc[0, 0], out.Kc[0, 0]], [1.2, 1.1, 1.3, 1.4])
    sys = model.random_stable_system(0, 3, 2, 2)
    big = model.perturb_controller(model.synth_optimal_controller(sys), 0.5)
    assert big.Ac.shape == (3, 3) and np.allclose(big.Kc - model.synth_optimal_controller(sys).Kc, 0.5, atol=1e-15)


def test_random_stable_system():
    a = model.random_stable_system(7, 8, 4, 10, 0.95)
    b = model.random_stable_system(7, 8, 4, 10, 0.95)
    assert a.equals(b)
    assert abs(matops.spectral_radius(a.A) - 0.95) <= 1e-9
    assert (a.n, a.m, a.p) == (8, 4, 10)
    assert model.is_controllable(a.A, a.B) and model.is_observable(a.A, a.C)
    with pytest.raises(ValueError):
        model.random_stable_system(0, 2, 1, 1, 1.0)


def test_default_fallback_requires_stable_plant():
    with pytest.raises(ValueError):
        model.default_fallback(scalar_system(1.2))


def test_save_load_round_trip(tmp_path):
    sys = model.random_stable_system(11, 4, 2, 3)
    primary = model.perturb_controller(model.synth_optimal_controller(sys), 0.0137)
    fallback = model.default_fallback(sys)
    path = tmp_path / "m.lqg"
    model.save_model(path, sys, fallback, primary)
    bundle = model.load_model(path)
    assert bundle.system.equals(sys)
    assert bundle.primary.equals(primary) and bundle.primary.label == model.PRIMARY
    assert bundle.fallback.equals(fallback) and bundle.fallback.label == model.FALLBACK


def test_load_comments_and_optional_controllers(tmp_path):
    path = tmp_path / "m.lqg"
    sys = scalar_system()
    model.save_model(path, sys)
    text = "# leading comment\n\n" + path.read_text()
    path.write_text(text)
    bundle = model.load_model(path)
    assert bundle.primary is None and bundle.fallback is None


def _without(text, name):
    lines = text.splitlines()
    i = lines.index(next(ln for ln in lines if ln.startswith(f"matrix {name} ")))
    rows = int(lines[i].split()[2])
    return "\n".join(lines[:i] + lines[i + 1 + rows:]) + "\n"


def test_missing_matrix_named(tmp_path):
    path = tmp_path / "m.lqg"
    model.save_model(path, model.random_stable_system(0, 2, 1, 1))
    path.write_text(_without(path.read_text(), "V"))
    with pytest.raises(ModelFormatError) as exc:
        model.load_model(path)
    assert exc.value.field == "V" and "'V'" in str(exc.value)


def test_dimension_mismatch_rejected(tmp_path):
    path = tmp_path / "m.lqg"
    model.save_model(path, model.random_stable_system(0, 2, 1, 1))
    text = _without(path.read_text(), "B") + "matrix B 3 1\n1\n2\n3\n"
    path.write_text(text)
    with pytest.raises(DimensionError):
        model.load_model(path)


def test_unknown_and_duplicate_names(tmp_path):
    path = tmp_path / "m.lqg"
    model.save_model(path, scalar_system())
    base = path.read_text()
    path.write_text(base + "matrix Z 1 1\n0\n")
    with pytest.raises(ModelFormatError, match="unknown"):
        model.load_model(path)
    path.write_text(base + "matrix A 1 1\n0\n")
    with pytest.raises(ModelFormatError, match="duplicate"):
        model.load_model(path)
    path.write_text("lqg-model v2\n")
    with pytest.raises(ModelFormatError, match="header"):
        model.load_model(path)


def test_non_spd_named():
    with pytest.raises(NotPositiveDefiniteError, match="W"):
        model.SystemModel([[0.5]], [[1.0]], [[1.0]], [[-1.0]], [[1.0]], [[1.0]], [[1.0]])


def test_matrices_read_only():
    sys = scalar_system()
    with pytest.raises(ValueError):
        sys.A[0, 0] = 2.0


def test_incompatible_controller():
    sys = model.random_stable_system(0, 3, 2, 2)
    bad = model.DynamicController(np.zeros((1, 1)), np.zeros((1, 3)), np.zeros((1, 2)), np.zeros((3, 1)))
    with pytest.raises(DimensionError):
        model.build_cal_A1(sys, bad)
