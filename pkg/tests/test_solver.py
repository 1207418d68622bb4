import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from oracles import alpha_max_loop, cd_lasso, objective, random_instance
from sdfkit.errors import ConfigError
from sdfkit.model import build_bank, build_phi, map_back, standardize
from sdfkit.solver import (alpha_max, debias_refit, kkt_violation, lars_path, level_grid,
                           slice_path, solve_slices)

EQ7 = "paper-eq7"


# ------------------------------------------------------------------ alpha_max

def test_alpha_max_zero_response():
    X = np.eye(4) - 0.25
    assert alpha_max(X, np.zeros(4)) == 0.0


def test_alpha_max_single_unit_column():
    x = np.array([1.0, -1.0, 0.0, 0.0]) / np.sqrt(2)
    y = 3 * x + 7.0
    assert alpha_max(x[:, None], y) == pytest.approx(3.0)


def test_alpha_max_matches_loop():
    rng = np.random.default_rng(0)
    for _ in range(10):
        X = rng.normal(size=(8, 5))
        X -= X.mean(axis=0)
        y = rng.normal(size=8)
        assert alpha_max(X, y) == pytest.approx(alpha_max_loop(X, y), rel=1e-12)


# ------------------------------------------------------------------ lars_path

def test_zero_response_single_knot():
    X = np.linalg.qr(np.random.default_rng(1).normal(size=(10, 3)))[0]
    path = lars_path(X - X.mean(axis=0), np.zeros(10), convention=EQ7)
    assert len(path.knots) == 1
    assert path.knots[0].alpha == 0 and path.knots[0].active.size == 0


def test_orthonormal_design_soft_threshold():
    rng = np.random.default_rng(2)
    n, p = 20, 6
    Z = rng.normal(size=(n, p))
    Z -= Z.mean(axis=0)
    X, _ = np.linalg.qr(Z)
    y = X @ rng.normal(size=p) * 4 + 0.1 * rng.normal(size=n) + 2.0
    path = lars_path(X, y, convention=EQ7)
    c = X.T @ (y - y.mean())
    for kn in path.knots:
        expect = np.sign(c) * np.maximum(np.abs(c) - kn.alpha, 0)
        np.testing.assert_allclose(kn.dense(p), expect, atol=1e-8)
    for a in np.linspace(0, np.abs(c).max(), 17):
        beta, _ = path.coef_at(a)
        expect = np.sign(c) * np.maximum(np.abs(c) - a, 0)
        np.testing.assert_allclose(beta, expect, atol=1e-8)


def test_path_knot_invariants():
    rng = np.random.default_rng(3)
    for _ in range(30):
        X, y = random_instance(rng)
        path = lars_path(X, y, convention=EQ7)
        alphas = path.alphas
        assert np.all(np.diff(alphas) < 0)
        assert alphas[0] == pytest.approx(alpha_max(X, y))
        assert path.knots[0].active.size == 0
        for kn in path.knots:
            assert kkt_violation(X, y, kn, path.excluded) <= 1e-8
            assert kn.intercept == pytest.approx(y.mean())
        l1 = [kn.l1 for kn in path.knots]
        assert np.all(np.diff(l1) >= -1e-9)
        obj0 = objective(X, y, np.zeros(X.shape[1]), 0)
        for kn in path.knots:
            assert objective(X, y, kn.dense(X.shape[1]), kn.alpha) <= obj0 + 1e-9


def test_path_matches_coordinate_descent():
    rng = np.random.default_rng(4)
    for _ in range(15):
        X, y = random_instance(rng)
        path = lars_path(X, y, convention=EQ7)
        amax = path.alpha_max
        for a in np.sort(rng.uniform(0.01, 1.0, 5) * amax)[::-1]:
            beta, _ = path.coef_at(a)
            ref = cd_lasso(X, y, a)
            assert objective(X, y, beta, a) == pytest.approx(objective(X, y, ref, a), abs=1e-8)


def test_path_stops_at_alpha_f():
    rng = np.random.default_rng(5)
    X, y = random_instance(rng)
    amax = alpha_max(X, y)
    path = lars_path(X, y, alpha_f=0.3 * amax, convention=EQ7)
    assert path.knots[-1].alpha <= 0.3 * amax + 1e-12
    assert path.knots[-2].alpha > 0.3 * amax


def test_alpha_convention_scales_by_length():
    rng = np.random.default_rng(6)
    X, y = random_instance(rng)
    a = 0.2 * alpha_max(X, y)
    p1 = lars_path(X, y, alpha_f=a, convention=EQ7)
    p2 = lars_path(X, y, alpha_f=a / X.shape[0], convention="normalized-by-L")
    assert p1.alpha_final == pytest.approx(p2.alpha_final)
    np.testing.assert_allclose(p1.knots[-1].dense(X.shape[1]), p2.knots[-1].dense(X.shape[1]))


def test_unknown_convention():
    X, y = random_instance(np.random.default_rng(7))
    with pytest.raises(ConfigError):
        lars_path(X, y, convention="bogus")


def test_duplicate_column_is_excluded_with_diagnostic():
    rng = np.random.default_rng(8)
    X, y = random_instance(rng)
    X = np.hstack([X, X[:, :1]])
    path = lars_path(X, y, convention=EQ7)
    for kn in path.knots:
        assert not {0, X.shape[1] - 1} <= set(kn.active.tolist())
    for kn in path.knots:
        assert kkt_violation(X, y, kn, path.excluded) <= 1e-8


def test_tie_lowest_column_enters_first():
    x = np.array([1.0, -1.0, 0.0, 0.0]) / np.sqrt(2)
    X = np.column_stack([x, x, np.array([0, 0, 1.0, -1.0]) / np.sqrt(2)])
    y = 2 * x
    path = lars_path(X, y, convention=EQ7)
    assert path.knots[1].active[0] == 0


def test_solvable_mask_respected():
    rng = np.random.default_rng(9)
    X, y = random_instance(rng)
    mask = np.ones(X.shape[1], bool)
    mask[::2] = False
    path = lars_path(X, y, convention=EQ7, solvable=mask)
    for kn in path.knots:
        assert mask[kn.active].all()


@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_path_is_deterministic(seed):
    X, y = random_instance(np.random.default_rng(seed))
    a = lars_path(X, y, convention=EQ7)
    b = lars_path(X, y, convention=EQ7)
    assert len(a.knots) == len(b.knots)
    for ka, kb in zip(a.knots, b.knots):
        assert ka.alpha == kb.alpha
        np.testing.assert_array_equal(ka.active, kb.active)
        np.testing.assert_array_equal(ka.coef, kb.coef)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 2**32 - 1))
def test_kkt_property(seed):
    X, y = random_instance(np.random.default_rng(seed))
    path = lars_path(X, y, convention=EQ7)
    for kn in path.knots:
        assert kkt_violation(X, y, kn, path.excluded) <= 1e-8


def test_path_dump_csv():
    X, y = random_instance(np.random.default_rng(10))
    path = lars_path(X, y, convention=EQ7)
    lines = path.to_csv(X, y).splitlines()
    assert lines[0] == "knot,alpha,alpha_user,support_size,l1_norm,objective"
    assert len(lines) == len(path.knots) + 1


# ------------------------------------------------------------------ slicing

def test_level_grid():
    np.testing.assert_array_equal(level_grid(50), [100, 50, 0])
    assert level_grid(2).size == 51
    with pytest.raises(ConfigError):
        level_grid(3)


def test_slices_alpha_and_endpoints():
    rng = np.random.default_rng(11)
    X, y = random_instance(rng)
    amax = alpha_max(X, y)
    af = 0.05 * amax
    path = lars_path(X, y, alpha_f=af, convention=EQ7)
    sl = slice_path(path, step=2)
    assert len(sl) == 51
    for s in sl:
        assert s.alpha == pytest.approx(af + (amax - af) * s.level / 100)
    assert not sl[0].beta_std.any()
    np.testing.assert_allclose(sl[-1].beta_std, path.knots[-1].dense(X.shape[1]))


def test_interpolated_slices_satisfy_kkt():
    from sdfkit.solver import PathKnot
    rng = np.random.default_rng(12)
    for _ in range(20):
        X, y = random_instance(rng)
        path = lars_path(X, y, alpha_f=0.01 * alpha_max(X, y), convention=EQ7)
        for s in slice_path(path, step=5):
            act = np.flatnonzero(s.beta_std)
            kn = PathKnot(s.alpha, act, s.beta_std[act], y.mean())
            assert kkt_violation(X, y, kn, path.excluded) <= 1e-6


def test_snap_returns_knots():
    X, y = random_instance(np.random.default_rng(13))
    path = lars_path(X, y, alpha_f=0.01 * alpha_max(X, y), convention=EQ7)
    knots = [k.dense(X.shape[1]) for k in path.knots]
    for s in slice_path(path, step=10, snap=True):
        assert any(np.array_equal(s.beta_std, k) for k in knots)


def test_degenerate_slice_when_alpha_f_too_large():
    X, y = random_instance(np.random.default_rng(14))
    path = lars_path(X, y, convention=EQ7)
    sl = slice_path(path, alpha_f=2 * path.alpha_max, step=2)
    assert len(sl) == 1 and sl[0].degenerate and not sl[0].beta_std.any()


# ------------------------------------------------------------------ debiasing

@pytest.fixture(scope="module")
def bundle():
    return standardize(build_phi(build_bank(1, 30, 6, 500), 60), 0.55)


def test_debias_empty_support(bundle):
    y = np.random.default_rng(15).normal(size=60)
    path, slices = solve_slices(bundle, y, alpha_f=1e-3, step=50)
    s0 = slices[0]
    assert s0.level == 100
    assert not s0.beta_debiased.any()
    assert s0.intercept == pytest.approx(y.mean())
    assert s0.residual_norm == pytest.approx(np.linalg.norm(y - y.mean()))


def test_debias_full_square_system():
    rng = np.random.default_rng(16)
    A = rng.normal(size=(6, 5))
    from sdfkit.model import RegressorBundle
    raw = RegressorBundle(bank=None, L=6, phi=A, kind=np.zeros(5, int), mode=np.arange(5),
                          time_index=np.zeros(5, int), component=np.zeros(5, int))
    s = standardize(raw, 1.0)
    y = rng.normal(size=6)
    from sdfkit.solver import SparsitySlice
    sl = SparsitySlice(level=0, alpha=0, alpha_user=0, beta_std=np.ones(5), bracket=(0, 0))
    debias_refit(sl, s, y)
    # 5 columns plus intercept interpolate 6 points exactly
    assert sl.residual_norm == pytest.approx(0, abs=1e-9)


def test_debias_never_increases_residual(bundle):
    rng = np.random.default_rng(17)
    for _ in range(10):
        y = bundle.phi @ (rng.normal(size=bundle.n_columns) * (rng.random(bundle.n_columns) < 0.02))
        y = y + rng.normal(size=60) * 0.1
        _, slices = solve_slices(bundle, y, alpha_f=1e-4, step=10)
        for s in slices:
            assert s.residual_norm <= s.residual_norm_std * (1 + 1e-12) + 1e-12
            assert set(np.flatnonzero(s.beta_debiased)) <= set(s.support.tolist())


def test_solve_requires_standardized_bundle():
    raw = build_phi(build_bank(1, 30, 3, 500), 20)
    with pytest.raises(ConfigError):
        solve_slices(raw, np.zeros(20), 1e-3)


def test_debiased_prediction_consistent(bundle):
    rng = np.random.default_rng(18)
    y = rng.normal(size=60)
    _, slices = solve_slices(bundle, y, alpha_f=1e-3, step=25)
    for s in slices:
        pred = bundle.phi @ s.beta_debiased + s.intercept
        assert np.linalg.norm(y - pred) == pytest.approx(s.residual_norm, rel=1e-9, abs=1e-12)
        # un-refitted residual via map_back
        beta = map_back(s.beta_std, bundle)
        r = y - y.mean() - (bundle.phi - bundle.means) @ beta
        assert np.linalg.norm(r) == pytest.approx(s.residual_norm_std, rel=1e-9)


def test_support_matches_oracle_when_well_separated():
    rng = np.random.default_rng(19)
    compared = 0
    for _ in range(40):
        X, y = random_instance(rng)
        path = lars_path(X, y, convention=EQ7)
        lo = max(path.alpha_final, 1e-3 * path.alpha_max)
        for a in rng.uniform(lo, path.alpha_max, 5):
            ref = cd_lasso(X, y, a)
            act = np.abs(ref) > 0
            if act.any() and np.abs(ref[act]).min() <= 1e-6:
                continue
            beta, _ = path.coef_at(a)
            np.testing.assert_array_equal(beta != 0, act)
            compared += 1
    assert compared > 100
