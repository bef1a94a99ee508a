import json
import warnings

import numpy as np
import pytest

from koopman_kernel import collocation as co
from koopman_kernel import dynsys as ds
from koopman_kernel import kernel as kn
from koopman_kernel.errors import InvalidDomain

from conftest import solve_builtin


def test_grid_sampling():
    Z = co.sample(co.Box.cube(-1, 1, 2), co.Grid((60, 60)))
    assert len(Z) == 3600
    for corner in ([-1, -1], [-1, 1], [1, -1], [1, 1]):
        assert np.any(np.all(Z.points == corner, axis=1))
    np.testing.assert_array_equal(co.sample(co.Box([-1.0], [1.0]), co.Grid((2,))).points,
                                  [[-1.0], [1.0]])


def test_halton_by_hand():
    Z = co.sample(co.Box.cube(0, 1, 2), co.Halton(5))
    expected = [[1 / 2, 1 / 3], [1 / 4, 2 / 3], [3 / 4, 1 / 9], [1 / 8, 4 / 9], [5 / 8, 7 / 9]]
    np.testing.assert_allclose(Z.points, expected, rtol=1e-15)
    np.testing.assert_array_equal(Z.points, co.sample(co.Box.cube(0, 1, 2), co.Halton(5)).points)


@pytest.mark.parametrize("scheme", [co.Grid((12, 7)), co.Halton(300)])
def test_collocation_set_invariants(scheme):
    box = co.Box(np.array([1.5, -2.0]), np.array([2.5, 0.5]))
    Z = co.sample(box, scheme)
    assert np.all(box.contains(Z.points, tol=0))
    diff = Z.points[:, None] - Z.points[None]
    dist = np.sqrt((diff**2).sum(-1)) + np.eye(len(Z))
    assert dist.min() > 1e-12


def test_invalid_domains():
    with pytest.raises(InvalidDomain):
        co.Box([0.0, 1.0], [1.0, 1.0])
    with pytest.raises(InvalidDomain):
        co.sample(co.Box.cube(0, 1, 2), co.Grid((3,)))
    with pytest.raises(InvalidDomain):
        co.sample(co.Box.cube(0, 1, 2), co.Halton(0))


def test_build_rhs_and_layout():
    vf = ds.builtin("example1")
    lin = ds.linearize(vf)
    pair = lin.select(target=-1.0)
    pts = np.array([[0.0, 1.0], [0.0, 0.0], [0.4, -0.3]])
    Z = co.CollocationSet(pts, co.Box.cube(-1, 1, 2), None)
    gs = co.build(vf, lin, pair, Z, kn.GaussianKernel([2, 2]))
    assert np.all(gs.rhs[:3] == 0)
    assert gs.rhs[3] == pytest.approx(3.0, abs=1e-13)
    assert gs.rhs[4] == 0.0
    assert isinstance(gs.functionals[0], kn.PointEval)
    assert [f.axis for f in gs.functionals[1:3]] == [1, 2]
    assert all(isinstance(f, kn.PdeOp) for f in gs.functionals[3:])
    assert np.max(np.abs(gs.gram - gs.gram.T)) <= 1e-12
    assert gs.eta == pytest.approx(1e-10 * np.mean(np.diag(gs.gram)))


def test_no_collocation_points_gives_linear_part():
    vf = ds.builtin("duffing")
    lin = ds.linearize(vf)
    gs = co.build(vf, lin, 0, None, kn.GaussianKernel([1.0, 1.0]))
    model = co.solve(gs)
    np.testing.assert_array_equal(model.coefficients, 0)
    x = np.array([0.3, -0.7])
    assert model.eval_phi(x) == pytest.approx(lin.eigenvectors[0] @ x, abs=1e-15)


def test_identity_system():
    k = kn.GaussianKernel([1.0])
    funcs = co.boundary_functionals(1) + [kn.PointEval(np.array([0.5]))]
    Y = np.array([1.0, 0.0, 0.0])
    gs = co.GramSystem(funcs, kn.FunctionalArrays.from_list(funcs, 1), np.eye(3), Y, 0.0,
                       -1.0, np.array([1.0]), np.zeros(1), k)
    np.testing.assert_allclose(co.solve(gs).coefficients, [1.0, 0.0, 0.0], atol=1e-15)


@pytest.mark.parametrize("fixture", ["example1_l1", "example1_l2"])
def test_solved_model_invariants(fixture, request):
    vf, gs, model = request.getfixturevalue(fixture)
    dg = model.diagnostics
    A = co.system_matrix(gs, model.eta)
    resid = A.astype(np.longdouble) @ model.coefficients - gs.rhs
    assert np.max(np.abs(resid)) <= 1e-8 * (1 + np.max(np.abs(gs.rhs)))
    assert dg["representer_residual_inf"] <= dg["representer_tolerance"]
    assert abs(model.eval_h(vf.equilibrium)) <= 1e-6
    assert np.max(np.abs(model.grad_h(vf.equilibrium))) <= 1e-5
    assert np.max(np.abs(model.grad_h_fd(vf.equilibrium))) <= 1e-5


def test_pde_constraint_residual_bound(example1_l1):
    # residual of the regularized solve at PDE rows is exactly eta * c_i
    vf, gs, model = example1_l1
    d = vf.dimension
    r = (gs.gram.astype(np.longdouble) @ model.coefficients - gs.rhs)[d + 1:].astype(float)
    bound = max(1e-6, 10 * model.eta) * (1 + np.abs(gs.rhs[d + 1:]))
    worst = float(np.max(np.abs(r) / bound))
    assert worst <= 1.0, f"PDE residual exceeds its bound by a factor {worst:.3g}"


def test_eval_examples(example1_l1):
    vf, gs, model = example1_l1
    assert model.eval_phi([0.5, 0.5]) == pytest.approx(0.25, abs=1e-2)
    w = np.array([0.6, 0.8])
    zero = co.zero_model(-1.0, w, np.zeros(2), kn.GaussianKernel([1.0, 1.0]))
    assert zero.eval_phi([0.3, 0.2]) == pytest.approx(0.6 * 0.3 + 0.8 * 0.2, abs=1e-16)
    assert model.batch_eval(np.zeros((0, 2))).shape == (0,)


def test_batch_eval_matches_scalar_bitwise(example1_l1):
    _, _, model = example1_l1
    X = co.grid_points(co.Box.cube(-1, 1, 2), (60, 60))
    batch = model.batch_eval(X)
    scalar = np.array([model.eval_phi(x) for x in X[::37]])
    np.testing.assert_array_equal(batch[::37], scalar)
    np.testing.assert_array_equal(model.batch_eval(X[:1000]), batch[:1000])


def test_min_norm_perturbation():
    # small, well conditioned problem with eta = 0 so h* is the exact min-norm interpolant
    vf = ds.builtin("example1")
    lin = ds.linearize(vf)
    kern = kn.GaussianKernel([0.5, 0.5])
    Z = co.sample(co.Box.cube(-1, 1, 2), co.Grid((4, 4)))
    gs = co.build(vf, lin, 1, Z, kern, eta=0.0)
    model = co.solve(gs)
    n = len(gs.rhs)
    rng = np.random.default_rng(3)
    extra = [kn.PointEval(p) for p in rng.uniform(-1, 1, (5, 2))]
    allf = kn.FunctionalArrays.from_list(gs.functionals + extra, 2)
    K = kn.gram(kern, allf)
    KFF, KFE = K[:n, :n], K[:n, n:]
    c_star = np.concatenate([model.coefficients, np.zeros(5)])
    base = c_star @ K @ c_star
    for _ in range(20):
        b = rng.normal(size=5)
        a = -np.linalg.solve(KFF, KFE @ b)
        g = np.concatenate([a, b])
        # g leaves every constraint value unchanged
        assert np.max(np.abs(K[:n] @ g)) <= 1e-8 * (1 + np.max(np.abs(g)))
        for t in (1e-3, 0.1, 1.0):
            c2 = c_star + t * g
            assert c2 @ K @ c2 >= base - 1e-8 * (1 + base)


def test_shift_equivariance():
    off = np.array([0.3, -0.2])
    vf = ds.builtin("example1")
    vs = vf.shifted(off)
    kern = kn.GaussianKernel([2.0, 2.0])
    box = co.Box.cube(-1, 1, 2)
    m0 = co.solve(co.build(vf, ds.linearize(vf), 1, co.sample(box, co.Grid((20, 20))), kern))
    Zs = co.CollocationSet(co.grid_points(box, (20, 20)) + off, box.shifted(off), None)
    m1 = co.solve(co.build(vs, ds.linearize(vs), 1, Zs, kern))
    X = np.random.default_rng(5).uniform(-1, 1, (200, 2))
    np.testing.assert_allclose(m1.batch_eval(X + off), m0.batch_eval(X), rtol=0, atol=1e-8)


def test_serialization_round_trip(example1_l1, tmp_path):
    _, _, model = example1_l1
    text = co.dumps_model(model)
    obj = json.loads(text)
    assert all(isinstance(s, str) for s in obj["coefficients"])
    path = tmp_path / "model.json"
    path.write_text(text)
    back = co.load_model(path)
    X = np.random.default_rng(9).uniform(-1, 1, (300, 2))
    np.testing.assert_allclose(back.batch_eval(X), model.batch_eval(X), rtol=0, atol=1e-15)
    assert co.dumps_model(back) == text


def test_extrapolation_is_flagged(example1_l1):
    _, _, model = example1_l1
    mask = model.extrapolation_mask([[0.0, 0.0], [1.5, 0.0]])
    assert mask.tolist() == [False, True]


def test_ill_conditioned_escalation_is_recorded():
    vf = ds.builtin("duffing")
    lin = ds.linearize(vf)
    gs = co.build(vf, lin, 0, co.sample(co.Box.cube(-2, 2, 2), co.Grid((20, 20))),
                  kn.GaussianKernel([15.0, 15.0]))
    with warnings.catch_warnings(record=True):
        warnings.simplefilter("always")
        model = co.solve(gs)
    dg = model.diagnostics
    assert dg["path"][-1]["result"] in ("ok", "kept most accurate rung")
    assert dg["eta_used"] >= dg["eta_requested"]
    assert [p["eta"] for p in dg["path"]] == sorted(p["eta"] for p in dg["path"])
