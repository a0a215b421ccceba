import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mmnowcast import opflayer, qpsolve
from mmnowcast.grid import SystemInstant, builtin_ieee6
from mmnowcast.qpsolve import QpProblem

from oracles import central_diff, vertex_lp


def test_single_balance():
    p = QpProblem(c=[10.0], A=[[1.0]], b=[50.0], G=[[1.0], [-1.0]], h=[200.0, 0.0], eps=0.0)
    sol = qpsolve.solve(p)
    assert sol.optimal
    assert sol.z[0] == pytest.approx(50.0, abs=1e-9) and sol.value == pytest.approx(500.0, abs=1e-7)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-5, 5), min_size=2, max_size=2),
       st.lists(st.floats(-3, 3), min_size=4, max_size=4),
       st.lists(st.floats(0.5, 4), min_size=2, max_size=2),
       st.lists(st.floats(-2, 2), min_size=2, max_size=2), st.floats(0.5, 6))
def test_box_lp_matches_vertex_oracle(c, lo_hi, width, cut, rhs):
    lo = np.array(lo_hi[:2])
    hi = lo + np.array(width)
    G = np.vstack([np.eye(2), -np.eye(2), [cut]])
    h = np.concatenate([hi, -lo, [rhs + np.dot(cut, lo)]])  # cut keeps the lower corner feasible
    sol = qpsolve.solve(QpProblem(c=c, A=np.zeros((0, 2)), b=[], G=G, h=h, eps=0.0))
    ref, _ = vertex_lp(c, G, h)
    assert sol.optimal
    assert sol.value == pytest.approx(ref, rel=1e-7, abs=1e-7)
    assert sol.residual <= 1e-8


@pytest.fixture(scope="module")
def layer():
    return opflayer.OpfLayer(builtin_ieee6())


def _instants(n, seed=0):
    rng = np.random.default_rng(seed)
    case = builtin_ieee6()
    for _ in range(n):
        load = rng.uniform(60, 290) * case.load_shares()
        true = rng.uniform(0, [110, 124])
        pred = np.clip(true + rng.normal(0, 15, 2), 0.5, None)
        yield SystemInstant(load, true, pred)


def test_eps_regularisation_is_small(layer):
    # the dispatch cost is the LP part c'z; the eps/2 |z|^2 term is only a smoother
    for inst in _instants(10, 1):
        prob = layer.schedule_problem(inst)
        exact = qpsolve.solve(prob.__class__(**{**prob.__dict__, "eps": 0.0}))
        smooth = qpsolve.solve(prob)
        assert abs(prob.c @ smooth.z - exact.value) <= 1e-4


@pytest.mark.parametrize("seed", range(5))
def test_kkt_and_complementarity(layer, seed):
    for inst in _instants(6, 10 + seed):
        sched = layer.schedule(inst, differentiate=False)
        for sol, prob in ((sched.solution, sched.problem),
                          (layer.redispatch(inst, sched, differentiate=False).solution, None)):
            if prob is None:
                prob = layer.redispatch_problem(inst, sched.dispatch)
            res = qpsolve.kkt_residuals(prob, sol.z, sol.nu, sol.mu)
            assert max(res.values()) <= 1e-8
            _, hin = prob.rhs()
            assert np.all(np.abs(sol.mu * (hin - prob.G @ sol.z)) <= 1e-8)
            assert np.all(sol.mu >= 0)


def test_closed_form_sensitivity():
    eps, c, theta = 0.3, 2.0, 1.7
    p = QpProblem(c=[c], A=[[1.0]], b=[0.0], G=np.zeros((0, 1)), h=[], eps=eps, B=[[1.0]], theta=[theta])
    sol = qpsolve.solve(p)
    sm = qpsolve.differentiate(p, sol)
    assert sol.z[0] == pytest.approx(theta)
    assert sm.dz[0, 0] == pytest.approx(1.0)
    assert sm.dvalue[0] == pytest.approx(eps * theta + c)
    assert sm.dvalue_chain[0] == pytest.approx(eps * theta + c)
    assert not sm.approximate


def test_eps_zero_gives_value_gradient_only():
    p = QpProblem(c=[3.0], A=[[1.0]], b=[0.0], G=np.zeros((0, 1)), h=[], eps=0.0, B=[[1.0]], theta=[2.0])
    sm = qpsolve.differentiate(p, qpsolve.solve(p))
    assert sm.dz is None and sm.dvalue[0] == pytest.approx(3.0)


def test_differentiate_requires_optimal():
    p = QpProblem(c=[1.0], A=np.zeros((0, 1)), b=[], G=[[1.0], [-1.0]], h=[-1.0, -1.0])
    sol = qpsolve.solve(p)
    assert sol.status == "infeasible" and sol.certificate is not None
    with pytest.raises(ValueError):
        qpsolve.differentiate(p, sol)


def test_iteration_cap_reports_max_iter():
    rng = np.random.default_rng(3)
    G = np.vstack([np.eye(4), -np.eye(4), rng.normal(size=(6, 4))])
    p = QpProblem(c=rng.normal(size=4), A=np.zeros((0, 4)), b=[], G=G, h=np.ones(14) * 2)
    sol = qpsolve.solve(p, max_iter=2, polish=False)
    assert sol.status == "max_iter" and sol.z.shape == (4,)


def _fd_theta(prob, what, h):
    def f(th):
        s = qpsolve.solve(prob.with_theta(th))
        return s.value if what is None else s.z[what]
    return central_diff(f, prob.theta, h)


def test_value_gradient_matches_fd(layer):
    checked = 0
    for inst in _instants(25, 4):
        for prob in (layer.schedule_problem(inst),):
            sol = qpsolve.solve(prob)
            sm = qpsolve.differentiate(prob, sol)
            if sm.approximate:
                continue
            fd = _fd_theta(prob, None, 1e-4)
            np.testing.assert_allclose(sm.dvalue, fd, rtol=1e-5, atol=1e-6)
            np.testing.assert_allclose(sm.dvalue_chain, sm.dvalue, rtol=1e-5, atol=1e-6)
            checked += 1
    assert checked >= 20


def test_argmin_jacobian_matches_fd():
    """Column by column: every theta direction not flagged as a kink matches FD.

    Equal curtailment prices at the two sites leave an LP tie that only the
    eps term resolves; eps = 1e-3 keeps those argmin components well
    conditioned for finite differences (same code path as the default eps).
    """
    layer = opflayer.OpfLayer(builtin_ieee6(), eps=1e-3)
    checked = flagged = 0
    for inst in _instants(20, 5):
        sched = layer.schedule(inst, differentiate=False)
        prob = layer.redispatch_problem(inst, sched.dispatch)
        sm = qpsolve.differentiate(prob, qpsolve.solve(prob))
        for j in range(prob.k):
            e = np.zeros((prob.k, 1))
            e[j] = 1.0
            if sm.kinked(e):
                flagged += 1
                continue

            def z_of(t, j=j):
                th = prob.theta.copy()
                th[j] = t[0]
                return qpsolve.solve(prob.with_theta(th)).z

            fd = (z_of([prob.theta[j] + 1e-4]) - z_of([prob.theta[j] - 1e-4])) / 2e-4
            np.testing.assert_allclose(sm.dz[:, j], fd, rtol=1e-3, atol=1e-6)
            checked += 1
    assert checked >= 0.6 * (checked + flagged)


def test_dependent_active_rows_are_flagged():
    # z <= theta, -z <= 0 and a duplicate of the first row: at theta = 0 the
    # argmin of min -z is piecewise linear in theta with a corner at zero
    p = QpProblem(c=[-1.0], A=np.zeros((0, 1)), b=[], G=[[1.0], [-1.0], [2.0]], h=[0.0, 0.0, 0.0],
                  H=[[1.0], [0.0], [2.0]], theta=[0.0])
    sm = qpsolve.differentiate(p, qpsolve.solve(p))
    assert sm.approximate


@settings(max_examples=30, deadline=None)
@given(st.floats(50, 600), st.floats(0.1, 60))
def test_value_monotone_in_load(total, extra):
    # with net load positive every extra MW is served by a generator or by the
    # imbalance slack, both at a positive price
    case = builtin_ieee6()
    layer = opflayer.layer_for(case)
    ren = np.array([20.0, 30.0])
    a = layer.schedule(SystemInstant(total * case.load_shares(), ren), differentiate=False).solution.value
    b = layer.schedule(SystemInstant((total + extra) * case.load_shares(), ren), differentiate=False).solution.value
    assert b >= a - 1e-7


def test_slack_active_when_load_exceeds_capacity():
    case = builtin_ieee6()
    res = opflayer.layer_for(case).schedule(SystemInstant(600.0 * case.load_shares(), np.array([10.0, 10.0])),
                                            differentiate=False)
    # at least the capacity shortfall; line limits can strand more
    assert res.slack_up.sum() >= 600.0 - 530.0 - 20.0 - 1e-6


def test_active_hint_fast_path(layer):
    inst = next(_instants(1, 6))
    prob = layer.schedule_problem(inst)
    cold = qpsolve.solve(prob)
    warm = qpsolve.solve(prob, active_hint=cold.active)
    assert warm.iterations == 0 and warm.value == pytest.approx(cold.value, abs=1e-9)


def test_dump_problem(tmp_path, layer):
    prob = layer.schedule_problem(next(_instants(1, 7)))
    qpsolve.dump_problem(prob, tmp_path / "p.txt")
    text = (tmp_path / "p.txt").read_text().splitlines()
    assert text[0].startswith("# qp n=")
    hdr = next(i for i, l in enumerate(text) if l.startswith("A "))
    rows, cols = map(int, text[hdr].split()[1:])
    A = np.loadtxt(text[hdr + 1 : hdr + 1 + rows]).reshape(rows, cols)
    np.testing.assert_array_equal(A, prob.A)


def test_problem_validation():
    with pytest.raises(ValueError):
        QpProblem(c=[1.0], A=[[1.0]], b=[1.0, 2.0], G=np.zeros((0, 1)), h=[])
    with pytest.raises(ValueError):
        QpProblem(c=[1.0], A=np.zeros((0, 1)), b=[], G=np.zeros((0, 1)), h=[], eps=-1.0)
