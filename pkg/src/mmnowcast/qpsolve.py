"""Dense primal-dual interior-point QP solver with KKT sensitivities.

Problems have the form::

    minimise    eps/2 |z|^2 + c'z
    subject to  A z  = b + B theta
                G z <= h + H theta

The small ``eps`` turns the dispatch LPs into strictly convex QPs so that the
argmin is a (piecewise-smooth) function of ``theta``. After the interior-point
phase the solution is polished on the identified active set, which yields an
exact vertex (for LPs) and exact complementarity.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace

import numpy as np
import scipy.linalg as sla

__all__ = [
    "QpProblem",
    "QpSolution",
    "SensitivityMap",
    "solve",
    "differentiate",
    "kkt_residuals",
    "dump_problem",
]

DEGENERACY_TOL = 1e-7
PIVOT_TOL = 1e-12


@dataclass
class QpProblem:
    c: np.ndarray
    A: np.ndarray
    b: np.ndarray
    G: np.ndarray
    h: np.ndarray
    eps: float = 1e-6
    B: np.ndarray | None = None
    H: np.ndarray | None = None
    theta: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        n = self.c.size
        self.A = np.asarray(self.A, dtype=float).reshape(-1, n)
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.G = np.asarray(self.G, dtype=float).reshape(-1, n)
        self.h = np.asarray(self.h, dtype=float).ravel()
        if self.theta is None:
            self.theta = np.zeros(0)
        self.theta = np.asarray(self.theta, dtype=float).ravel()
        k = self.theta.size
        self.B = np.zeros((self.A.shape[0], k)) if self.B is None else np.asarray(self.B, dtype=float).reshape(-1, k)
        self.H = np.zeros((self.G.shape[0], k)) if self.H is None else np.asarray(self.H, dtype=float).reshape(-1, k)
        if self.b.size != self.A.shape[0] or self.B.shape[0] != self.A.shape[0]:
            raise ValueError("equality block dimensions disagree")
        if self.h.size != self.G.shape[0] or self.H.shape[0] != self.G.shape[0]:
            raise ValueError("inequality block dimensions disagree")
        if self.eps < 0:
            raise ValueError("eps must be >= 0")

    @property
    def n(self) -> int:
        return self.c.size

    @property
    def k(self) -> int:
        return self.theta.size

    def rhs(self) -> tuple[np.ndarray, np.ndarray]:
        return self.b + self.B @ self.theta, self.h + self.H @ self.theta

    def with_theta(self, theta) -> "QpProblem":
        return replace(self, theta=np.asarray(theta, dtype=float).copy())

    def objective(self, z) -> float:
        return float(0.5 * self.eps * z @ z + self.c @ z)


@dataclass
class QpSolution:
    z: np.ndarray
    nu: np.ndarray
    mu: np.ndarray
    value: float
    status: str  # optimal | infeasible | max_iter
    iterations: int = 0
    active: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    degenerate: np.ndarray = field(default_factory=lambda: np.zeros(0, bool))
    residual: float = np.inf
    polished: bool = False
    certificate: np.ndarray | None = None

    @property
    def slack(self) -> np.ndarray:
        return self._slack

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


@dataclass
class SensitivityMap:
    dz: np.ndarray | None  # n x k, None when eps == 0
    dvalue: np.ndarray  # k, envelope theorem from the duals
    dvalue_chain: np.ndarray | None  # k, (eps z + c)' dz
    approximate: bool = False
    # d slack / d theta of the weakly active rows (slack and multiplier both ~0)
    degenerate_rates: np.ndarray | None = None
    singular: bool = False

    def kinked(self, directions: np.ndarray | None = None, tol: float = 1e-8) -> bool:
        """True when a weakly active row changes slack along ``directions``
        (k x m), i.e. the active set is about to change and ``dz`` is only a
        one-sided derivative there."""
        if self.singular:
            return True
        if self.degenerate_rates is None or self.degenerate_rates.size == 0:
            return False
        rates = self.degenerate_rates if directions is None else self.degenerate_rates @ directions
        return bool(np.abs(rates).max(initial=0.0) > tol)


def kkt_residuals(problem: QpProblem, z, nu, mu) -> dict[str, float]:
    """Scaled KKT residuals: stationarity, primal (eq / ineq), dual, complementarity."""
    beq, hin = problem.rhs()
    s = hin - problem.G @ z
    cs = 1.0 + np.abs(problem.c).max(initial=0.0)
    bs = 1.0 + np.abs(beq).max(initial=0.0)
    hs = 1.0 + np.abs(hin).max(initial=0.0)
    stat = problem.eps * z + problem.c + problem.A.T @ nu + problem.G.T @ mu
    return {
        "stationarity": float(np.abs(stat).max(initial=0.0) / cs),
        "primal_eq": float(np.abs(problem.A @ z - beq).max(initial=0.0) / bs),
        "primal_ineq": float(max(0.0, (-s).max(initial=0.0)) / hs),
        "dual": float(max(0.0, (-mu).max(initial=0.0)) / cs),
        "complementarity": float(np.abs(mu * s).max(initial=0.0) / (cs * hs)),
    }


def _finish(problem, z, nu, mu, status, iterations, polished=False, certificate=None) -> QpSolution:
    _, hin = problem.rhs()
    s = hin - problem.G @ z
    res = kkt_residuals(problem, z, nu, mu)
    active = mu > np.maximum(s, 0.0)
    degenerate = np.maximum(np.abs(s), np.abs(mu)) < DEGENERACY_TOL
    sol = QpSolution(z=z, nu=nu, mu=mu, value=problem.objective(z), status=status, iterations=iterations,
                     active=active, degenerate=degenerate, residual=max(res.values()), polished=polished,
                     certificate=certificate)
    sol._slack = s
    return sol


def _kkt_matrix(problem: QpProblem, GA: np.ndarray) -> np.ndarray:
    n, me, ma = problem.n, problem.A.shape[0], GA.shape[0]
    K = np.zeros((n + me + ma, n + me + ma))
    K[:n, :n] = problem.eps * np.eye(n)
    K[:n, n : n + me] = problem.A.T
    K[:n, n + me :] = GA.T
    K[n : n + me, :n] = problem.A
    K[n + me :, :n] = GA
    return K


def _solve_dense(K, rhs):
    """LU solve with a pivot check; returns None if the matrix is singular."""
    with warnings.catch_warnings():
        warnings.simplefilter("error", sla.LinAlgWarning)
        try:
            lu, piv = sla.lu_factor(K, check_finite=False)
        except (sla.LinAlgError, sla.LinAlgWarning, ValueError):
            return None
    diag = np.abs(np.diag(lu))
    if diag.size and diag.min() <= PIVOT_TOL * max(diag.max(), 1.0):
        return None
    return sla.lu_solve((lu, piv), rhs, check_finite=False)


def _independent(problem: QpProblem, active: np.ndarray, priority: np.ndarray | None = None) -> np.ndarray:
    """Largest subset of ``active`` rows that is linearly independent together
    with the equality rows, preferring rows with higher ``priority``."""
    rows = np.flatnonzero(active)
    stacked = np.vstack([problem.A, problem.G[rows]])
    if stacked.shape[0] == 0 or np.linalg.matrix_rank(stacked) == stacked.shape[0]:
        return active.copy()
    if priority is not None:
        rows = rows[np.argsort(-priority[rows], kind="stable")]
    basis = []
    if problem.A.shape[0]:
        q, r = np.linalg.qr(problem.A.T)
        keep = np.abs(np.diag(r)) > 1e-10 * max(np.abs(r).max(), 1.0)
        basis = list(q[:, keep].T)
    out = np.zeros_like(active)
    for i in rows:
        v = problem.G[i].copy()
        for u in basis:
            v -= (u @ v) * u
        norm = np.linalg.norm(v)
        if norm > 1e-9 * np.linalg.norm(problem.G[i]):
            basis.append(v / norm)
            out[i] = True
    return out


def _snap_bounds(problem: QpProblem, z: np.ndarray, rows: np.ndarray, hin: np.ndarray) -> None:
    """Put variables exactly on the single-variable bound rows flagged in ``rows``."""
    for r in np.flatnonzero(rows):
        nz = np.flatnonzero(problem.G[r])
        if nz.size == 1:
            with np.errstate(over="ignore"):
                v = hin[r] / problem.G[r, nz[0]]
            if np.isfinite(v):
                z[nz[0]] = v


def _polish(problem: QpProblem, active: np.ndarray, tol: float, priority: np.ndarray | None = None):
    """Solve the equality-constrained QP on ``active`` and verify optimality."""
    beq, hin = problem.rhs()
    n, me = problem.n, problem.A.shape[0]
    active = _independent(problem, active, priority)
    GA = problem.G[active]
    K = _kkt_matrix(problem, GA)
    rhs = np.concatenate([-problem.c, beq, hin[active]])
    sol = _solve_dense(K, rhs)
    if sol is None:
        return None
    z, nu, muA = sol[:n], sol[n : n + me], sol[n + me :]
    cs = 1.0 + np.abs(problem.c).max(initial=0.0)
    hs = 1.0 + np.abs(hin).max(initial=0.0)
    if muA.size and muA.min() < -tol * cs:
        return None
    s = hin - problem.G @ z
    if s.size and s.min() < -tol * hs:
        return None
    _snap_bounds(problem, z, active | (np.abs(s) <= 1e-10 * hs), hin)
    mu = np.zeros(problem.G.shape[0])
    mu[active] = np.maximum(muA, 0.0)
    return z, nu, mu


def _pinned_pairs(problem: QpProblem, hin: np.ndarray) -> list[tuple[int, int, int, float]]:
    """Pairs of single-variable rows ``z_j <= u`` and ``-z_j <= -l`` with ``u == l``.

    Such zero-width boxes leave no strictly feasible interior, so the
    interior-point phase treats them as equalities.
    """
    G = problem.G
    nnz = (G != 0).sum(axis=1)
    upper, lower = {}, {}
    for i in np.flatnonzero(nnz == 1):
        j = int(np.flatnonzero(G[i])[0])
        with np.errstate(over="ignore"):
            bound = hin[i] / G[i, j]
        if not np.isfinite(bound):
            continue
        (upper if G[i, j] > 0 else lower).setdefault(j, []).append((i, bound))
    pairs = []
    for j, ups in upper.items():
        for i, u in ups:
            for k, l in lower.get(j, []):
                if abs(u - l) <= 1e-12 * (1.0 + abs(u)):
                    pairs.append((i, k, j, u))
                    break
            else:
                continue
            break
    return pairs


def _ipm(c, eps, A, beq, G, hin, tol, max_iter):
    n, me, mi = c.size, A.shape[0], G.shape[0]
    cs = 1.0 + np.abs(c).max(initial=0.0)
    bs = 1.0 + np.abs(beq).max(initial=0.0)
    hs = 1.0 + np.abs(hin).max(initial=0.0)
    # regularisation keeps the reduced system non-singular when eps == 0
    reg = max(eps, 1e-10)

    # initial point: least-squares fit to the constraints
    K0 = np.zeros((n + me, n + me))
    K0[:n, :n] = reg * np.eye(n) + G.T @ G
    K0[:n, n:] = A.T
    K0[n:, :n] = A
    rhs0 = np.concatenate([-c + G.T @ hin, beq])
    sol0 = _solve_dense(K0, rhs0)
    if sol0 is None:
        sol0 = np.linalg.lstsq(K0, rhs0, rcond=None)[0]
    z, nu = sol0[:n], sol0[n:]
    s = hin - G @ z
    s = s + max(0.0, 1.0 - s.min(initial=1.0))
    mu = np.ones(mi)

    status, it = "max_iter", 0
    certificate = None
    for it in range(1, max_iter + 1):
        rd = eps * z + c + A.T @ nu + G.T @ mu
        rp = A @ z - beq
        rg = G @ z + s - hin
        gap = float(s @ mu) / max(mi, 1)
        if (np.abs(rd).max(initial=0) <= tol * cs and np.abs(rp).max(initial=0) <= tol * bs
                and np.abs(rg).max(initial=0) <= tol * hs
                and gap <= tol * (1.0 + abs(float(c @ z)))):
            status = "optimal"
            break
        dual_norm = max(np.abs(mu).max(initial=0), np.abs(nu).max(initial=0))
        if dual_norm > 1e12 * cs:
            status = "infeasible"
            certificate = np.concatenate([nu, mu]) / dual_norm
            break

        D = mu / s
        M = np.zeros((n + me, n + me))
        M[:n, :n] = (G.T * D) @ G
        M[np.arange(n), np.arange(n)] += reg
        M[:n, n:] = A.T
        M[n:, :n] = A
        try:
            lu = sla.lu_factor(M, check_finite=False)
        except (sla.LinAlgError, ValueError):
            break

        def newton(rc):
            w = (-rc + mu * rg) / s
            rhs = np.concatenate([-rd - G.T @ w, -rp])
            sol = sla.lu_solve(lu, rhs, check_finite=False)
            dz, dnu = sol[:n], sol[n:]
            Gdz = G @ dz
            return dz, dnu, w + D * Gdz, -rg - Gdz

        dz, dnu, dmu, ds = newton(s * mu)
        ap, ad = _max_step(s, ds), _max_step(mu, dmu)
        mu_aff = float((s + ap * ds) @ (mu + ad * dmu)) / max(mi, 1)
        sigma = (mu_aff / gap) ** 3 if gap > 0 else 0.0
        dz, dnu, dmu, ds = newton(s * mu + ds * dmu - sigma * gap)
        alpha = min(1.0, 0.99 * min(_max_step(s, ds), _max_step(mu, dmu)))
        z = z + alpha * dz
        nu = nu + alpha * dnu
        mu = mu + alpha * dmu
        s = s + alpha * ds
        if not (np.all(np.isfinite(z)) and np.all(np.isfinite(mu))):
            status = "max_iter"
            break

    if status == "max_iter":
        # large persistent infeasibility with growing duals indicates an infeasible problem
        rp_n = max(np.abs(A @ z - beq).max(initial=0) / bs, max(0.0, (G @ z - hin).max(initial=0)) / hs)
        dual_norm = max(np.abs(mu).max(initial=0), np.abs(nu).max(initial=0))
        if rp_n > 1e-6 and dual_norm > 1e6 * cs:
            status = "infeasible"
            certificate = np.concatenate([nu, mu]) / dual_norm
    return z, nu, mu, status, it, certificate


def solve_on_active_set(problem: QpProblem, active: np.ndarray) -> QpSolution | None:
    """The optimum if ``active`` is a correct active-set guess, else None.

    The guess is accepted only when the equality-constrained solution passes
    the full KKT check, so a wrong guess can never produce a wrong answer.
    """
    if active.shape != (problem.G.shape[0],):
        return None
    out = _polish(problem, active, 1e-9)
    if out is None:
        return None
    sol = _finish(problem, *out, "optimal", 0, polished=True)
    return sol if sol.residual <= 1e-8 else None


def solve(problem: QpProblem, tol: float = 1e-10, max_iter: int = 200,
          active_hint: np.ndarray | None = None, polish: bool = True) -> QpSolution:
    """Mehrotra predictor-corrector interior-point method, then active-set polish.

    ``active_hint`` is an optional guess of the active inequality set; when the
    polished solution on that set satisfies the KKT conditions it is returned
    directly without running the interior-point phase.
    """
    if active_hint is not None and polish:
        sol = solve_on_active_set(problem, active_hint)
        if sol is not None:
            return sol

    beq, hin = problem.rhs()
    A, G = problem.A, problem.G
    pairs = _pinned_pairs(problem, hin)
    keep = np.ones(G.shape[0], bool)
    if pairs:
        extra = np.zeros((len(pairs), problem.n))
        for r, (i, k, j, _) in enumerate(pairs):
            extra[r, j] = 1.0
            keep[[i, k]] = False
        A = np.vstack([A, extra])
        beq = np.concatenate([beq, [p[3] for p in pairs]])
    z, nu, mu_k, status, it, certificate = _ipm(problem.c, problem.eps, A, beq, G[keep], hin[keep], tol, max_iter)
    me = problem.A.shape[0]
    mu = np.zeros(G.shape[0])
    mu[keep] = mu_k
    for r, (i, k, j, _) in enumerate(pairs):
        # the equality multiplier splits onto the upper or lower bound row
        w = nu[me + r]
        mu[i], mu[k] = max(w, 0.0), max(-w, 0.0)
    nu = nu[:me]
    if status == "infeasible":
        if certificate is not None:
            certificate = np.concatenate([nu, mu]) / max(np.abs(np.concatenate([nu, mu])).max(initial=0), 1e-300)
        return _finish(problem, z, nu, mu, status, it, certificate=certificate)

    sol = _finish(problem, z, nu, mu, status, it)
    if polish and status == "optimal":
        out = _polish(problem, sol.active, 1e-7, priority=sol.mu)
        if out is not None:
            psol = _finish(problem, *out, "optimal", it, polished=True)
            if psol.residual <= max(sol.residual, 1e-9):
                return psol
        # the subset choice among dependent rows can be wrong on degenerate
        # vertices; the interior-point point is still accurate, so only snap it
        z = sol.z.copy()
        _snap_bounds(problem, z, np.abs(sol.slack) <= 1e-10 * (1.0 + np.abs(hin).max(initial=0.0)), hin)
        ssol = _finish(problem, z, sol.nu, sol.mu, status, it)
        if ssol.residual <= max(sol.residual, 1e-9):
            return ssol
    return sol


def _max_step(v, dv) -> float:
    neg = dv < 0
    if not np.any(neg):
        return 1.0
    return float(min(1.0, (-v[neg] / dv[neg]).min()))


def differentiate(problem: QpProblem, solution: QpSolution) -> SensitivityMap:
    """Sensitivities of the argmin and the optimal value with respect to ``theta``.

    ``dz`` comes from the implicit function theorem applied to the KKT system
    restricted to the active set; ``dvalue`` from the envelope theorem
    ``-(B'nu + H'mu)``. Weakly active rows (slack and multiplier both below
    ``DEGENERACY_TOL``) are left out of the active set, as are active rows that
    are linearly dependent on the kept ones; ``approximate`` is set when one of
    these rows changes slack with ``theta`` or the KKT matrix is singular
    (least-squares fallback).
    """
    if not solution.optimal:
        raise ValueError(f"cannot differentiate a solution with status {solution.status!r}")
    dvalue = -(problem.B.T @ solution.nu + problem.H.T @ solution.mu)
    if problem.eps == 0:
        return SensitivityMap(dz=None, dvalue=dvalue, dvalue_chain=None, approximate=True)
    n = problem.n
    act = _independent(problem, solution.active, solution.mu)
    K = _kkt_matrix(problem, problem.G[act])
    rhs = np.vstack([np.zeros((n, problem.k)), problem.B, problem.H[act]])
    sol = _solve_dense(K, rhs)
    singular = sol is None
    if singular:
        sol = np.linalg.lstsq(K, rhs, rcond=None)[0]
    dz = sol[:n]
    chain = (problem.eps * solution.z + problem.c) @ dz
    # weakly active rows, plus active rows dropped as linearly dependent: either
    # kind changing slack along theta means the active set is about to change
    deg = solution.degenerate | (solution.active & ~act)
    rates = problem.H[deg] - problem.G[deg] @ dz
    out = SensitivityMap(dz=dz, dvalue=dvalue, dvalue_chain=chain, degenerate_rates=rates, singular=singular)
    out.approximate = out.kinked()
    return out


def dump_problem(problem: QpProblem, path) -> None:
    """Write the problem data as labelled plain-text matrices."""
    with open(path, "w") as fh:
        fh.write(f"# qp n={problem.n} m_eq={problem.A.shape[0]} m_in={problem.G.shape[0]} "
                 f"k={problem.k} eps={problem.eps!r}\n")
        for name in ("c", "A", "b", "G", "h", "B", "H", "theta"):
            arr = np.atleast_2d(getattr(problem, name))
            fh.write(f"{name} {arr.shape[0]} {arr.shape[1]}\n")
            np.savetxt(fh, arr, fmt="%.17g")
