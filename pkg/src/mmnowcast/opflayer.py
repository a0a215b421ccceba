"""Two-stage DC-OPF (day-ahead schedule, then real-time redispatch) as a
differentiable layer.

Schedule variables, in order::

    z = [Pg (ng), delta (nb), f (nl), curt (ns), up (nb), down (nb)]

with the predicted renewable output as parameter. Redispatch variables::

    z = [dP+ (ng), dP- (ng), delta (nb), f (nl), curt (ns), up (nb), down (nb)]

with parameter ``[Pg_scheduled (ng), P_true (ns)]``. ``up``/``down`` are the
nodal imbalance slacks, ``curt`` the renewable curtailment.
"""

from __future__ import annotations

import functools
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import qpsolve
from .grid import GridCase, SystemInstant
from .qpsolve import QpProblem, QpSolution

__all__ = [
    "OpfError",
    "ScheduleResult",
    "RedispatchResult",
    "CostBreakdown",
    "CostGradient",
    "OpfLayer",
    "layer_for",
    "schedule",
    "redispatch",
    "system_cost",
    "system_cost_gradient",
    "cost_surface",
    "write_surface_csv",
    "surface_svg",
]

DEFAULT_EPS = 1e-6
KINK_STEP = 1e-4  # MW, offset for one-sided derivatives at a kink
RECENT_SETS = 8  # per stage, tried after the key's own active set


class OpfError(RuntimeError):
    """A dispatch problem failed to solve (should not happen: slacks are unbounded)."""


@dataclass
class ScheduleResult:
    dispatch: np.ndarray  # MW per generator
    angles: np.ndarray  # rad per bus
    flows: np.ndarray  # MW per line
    curtailment: np.ndarray  # MW per site
    slack_up: np.ndarray  # MW per bus
    slack_down: np.ndarray
    cost: float  # C^sch
    energy: float
    curtail_cost: float
    penalty: float
    solution: QpSolution
    problem: QpProblem
    # d dispatch / d prediction (ng x ns) and d C^sch / d prediction (ns)
    d_dispatch: np.ndarray | None = None
    d_cost: np.ndarray | None = None
    approximate: bool = False


@dataclass
class RedispatchResult:
    up: np.ndarray  # dP+ per generator
    down: np.ndarray  # dP- per generator
    angles: np.ndarray
    flows: np.ndarray
    curtailment: np.ndarray
    slack_up: np.ndarray
    slack_down: np.ndarray
    cost: float  # C^rd
    ramping: float
    curtail_cost: float
    penalty: float
    solution: QpSolution
    problem: QpProblem
    d_cost_dispatch: np.ndarray | None = None  # d C^rd / d scheduled dispatch
    approximate: bool = False
    sensitivity: qpsolve.SensitivityMap | None = None


@dataclass(frozen=True)
class CostBreakdown:
    schedule: float
    redispatch: float
    system: float
    items: dict = field(default_factory=dict)

    @property
    def ramping(self) -> float:
        return self.items["redispatch_ramping"]


@dataclass(frozen=True)
class CostGradient:
    cost: CostBreakdown
    grad: np.ndarray  # d C^sys / d prediction, per site
    approximate: bool
    eps_delta: float | None = None  # max |grad(eps) - grad(eps/2)| when requested


class _Assembly:
    """Static constraint matrices for one case."""

    def __init__(self, case: GridCase, eps: float):
        self.case, self.eps = case, eps
        nb, nl, ng, ns = case.n_bus, case.n_line, case.n_gen, case.n_site
        self.sizes = (nb, nl, ng, ns)
        inc, Mg, Ms = case.incidence(), case.gen_map(), case.site_map()
        x = np.array([ln.reactance for ln in case.lines])
        fmax = np.array([ln.limit for ln in case.lines])
        gens = case.generators
        pmin = np.array([g.pmin for g in gens])
        pmax = np.array([g.pmax for g in gens])
        gb = np.array([b.imbalance_penalty for b in case.buses])
        gs = np.array([r.curtail_penalty for r in case.renewables])
        self.cg = np.array([g.cost for g in gens])
        self.cup = np.array([g.cost_up for g in gens])
        self.cdn = np.array([g.cost_down for g in gens])
        self.gs, self.gb = gs, gb
        slack = case.bus_index(case.slack_bus)
        # flow definition rows: f - base * inc' delta / x = 0
        flow_delta = -(case.base_mva / x)[:, None] * inc.T

        # ----------------------------------------------------------- schedule
        n = ng + nb + nl + ns + 2 * nb
        o_pg, o_d, o_f, o_c, o_u, o_w = np.cumsum([0, ng, nb, nl, ns, nb])
        self.sch_slices = dict(pg=slice(o_pg, o_d), delta=slice(o_d, o_f), f=slice(o_f, o_c),
                               curt=slice(o_c, o_u), up=slice(o_u, o_w), down=slice(o_w, n))
        A = np.zeros((nb + nl + 1, n))
        A[:nb, o_pg:o_d] = Mg
        A[:nb, o_f:o_c] = -inc
        A[:nb, o_c:o_u] = -Ms
        A[:nb, o_u:o_w] = np.eye(nb)
        A[:nb, o_w:n] = -np.eye(nb)
        A[nb:nb + nl, o_d:o_f] = flow_delta
        A[nb:nb + nl, o_f:o_c] = np.eye(nl)
        A[nb + nl, o_d + slack] = 1.0
        B = np.zeros((A.shape[0], ns))
        B[:nb] = -Ms
        G, h, H = [], [], []

        def box(offset, size, lo=None, hi=None, hi_param=None):
            for i in range(size):
                if hi is not None or hi_param is not None:
                    row = np.zeros(n)
                    row[offset + i] = 1.0
                    G.append(row)
                    h.append(0.0 if hi is None else hi[i])
                    hp = np.zeros(ns)
                    if hi_param is not None:
                        hp[hi_param[i]] = 1.0
                    H.append(hp)
                if lo is not None:
                    row = np.zeros(n)
                    row[offset + i] = -1.0
                    G.append(row)
                    h.append(-lo[i])
                    H.append(np.zeros(ns))

        box(o_pg, ng, lo=pmin, hi=pmax)
        box(o_f, nl, lo=-fmax, hi=fmax)
        box(o_c, ns, lo=np.zeros(ns), hi_param=np.arange(ns))
        box(o_u, 2 * nb, lo=np.zeros(2 * nb))
        c = np.concatenate([self.cg, np.zeros(nb + nl), gs, gb, gb])
        self.sch = QpProblem(c=c, A=A, b=np.zeros(A.shape[0]), G=np.array(G), h=np.array(h), eps=eps,
                             B=B, H=np.array(H), theta=np.zeros(ns))

        # --------------------------------------------------------- redispatch
        k = ng + ns
        n = 2 * ng + nb + nl + ns + 2 * nb
        o_p, o_m, o_d, o_f, o_c, o_u, o_w = np.cumsum([0, ng, ng, nb, nl, ns, nb])
        self.rd_slices = dict(up=slice(o_p, o_m), down=slice(o_m, o_d), delta=slice(o_d, o_f),
                              f=slice(o_f, o_c), curt=slice(o_c, o_u), sup=slice(o_u, o_w), sdown=slice(o_w, n))
        A = np.zeros((nb + nl + 1, n))
        A[:nb, o_p:o_m] = Mg
        A[:nb, o_m:o_d] = -Mg
        A[:nb, o_f:o_c] = -inc
        A[:nb, o_c:o_u] = -Ms
        A[:nb, o_u:o_w] = np.eye(nb)
        A[:nb, o_w:n] = -np.eye(nb)
        A[nb:nb + nl, o_d:o_f] = flow_delta
        A[nb:nb + nl, o_f:o_c] = np.eye(nl)
        A[nb + nl, o_d + slack] = 1.0
        B = np.zeros((A.shape[0], k))
        B[:nb, :ng] = -Mg
        B[:nb, ng:] = -Ms
        G, h, H = [], [], []

        def row(entries, rhs, hparam=()):
            r = np.zeros(n)
            for j, v in entries:
                r[j] = v
            hp = np.zeros(k)
            for j, v in hparam:
                hp[j] = v
            G.append(r)
            h.append(rhs)
            H.append(hp)

        for g, gen in enumerate(gens):
            row([(o_p + g, 1.0)], gen.ramp_up)
            row([(o_p + g, -1.0)], 0.0)
            row([(o_m + g, 1.0)], gen.ramp_down)
            row([(o_m + g, -1.0)], 0.0)
            # pmin <= Pg_sched + dP+ - dP- <= pmax
            row([(o_p + g, 1.0), (o_m + g, -1.0)], gen.pmax, [(g, -1.0)])
            row([(o_p + g, -1.0), (o_m + g, 1.0)], -gen.pmin, [(g, 1.0)])
        for l in range(nl):
            row([(o_f + l, 1.0)], fmax[l])
            row([(o_f + l, -1.0)], fmax[l])
        for s in range(ns):
            row([(o_c + s, 1.0)], 0.0, [(ng + s, 1.0)])
            row([(o_c + s, -1.0)], 0.0)
        for j in range(2 * nb):
            row([(o_u + j, -1.0)], 0.0)
        c = np.concatenate([self.cup, self.cdn, np.zeros(nb + nl), gs, gb, gb])
        self.rd = QpProblem(c=c, A=A, b=np.zeros(A.shape[0]), G=np.array(G), h=np.array(h), eps=eps,
                            B=B, H=np.array(H), theta=np.zeros(k))


class OpfLayer:
    """Schedule/redispatch solver for one case, with an active-set cache.

    The cache maps a caller-supplied key (for instance a sample index) to the
    last optimal active sets, which are tried first on the next solve of the
    same key; the most recent distinct active sets of each stage are tried
    next. A wrong guess is detected by the KKT check and falls back to the
    interior-point method, so the cache never changes results beyond
    solver tolerance.
    """

    def __init__(self, case: GridCase, eps: float = DEFAULT_EPS):
        self.case, self.eps = case, eps
        self._asm = _Assembly(case, eps)
        self._hints: dict = {}
        self._recent: dict[str, list[np.ndarray]] = {}

    # ---------------------------------------------------------------- problems
    def schedule_problem(self, instant: SystemInstant) -> QpProblem:
        self._check(instant)
        p = self._asm.sch
        b = np.zeros_like(p.b)
        b[: self.case.n_bus] = instant.load
        return QpProblem(c=p.c, A=p.A, b=b, G=p.G, h=p.h, eps=p.eps, B=p.B, H=p.H,
                         theta=instant.predicted.copy())

    def redispatch_problem(self, instant: SystemInstant, dispatch) -> QpProblem:
        self._check(instant)
        p = self._asm.rd
        b = np.zeros_like(p.b)
        b[: self.case.n_bus] = instant.load
        theta = np.concatenate([np.asarray(dispatch, dtype=float), instant.renewable])
        return QpProblem(c=p.c, A=p.A, b=b, G=p.G, h=p.h, eps=p.eps, B=p.B, H=p.H, theta=theta)

    def _check(self, instant: SystemInstant) -> None:
        if instant.load.shape != (self.case.n_bus,):
            raise ValueError(f"load must have one entry per bus ({self.case.n_bus})")
        if instant.renewable.shape != (self.case.n_site,):
            raise ValueError(f"renewables must have one entry per site ({self.case.n_site})")
        if np.any(instant.predicted < 0):
            raise ValueError("predicted renewables must be non-negative")

    def _solve(self, problem: QpProblem, key, stage: str) -> QpSolution:
        # guesses: this key's last active set, then the stage's recent ones
        recent = self._recent.setdefault(stage, [])
        hint = self._hints.get((stage, key)) if key is not None else None
        sol = None
        for guess in ([hint] if hint is not None else []) + recent:
            sol = qpsolve.solve_on_active_set(problem, guess)
            if sol is not None:
                break
        if sol is None:
            sol = qpsolve.solve(problem)
        if not sol.optimal:
            raise OpfError(f"{stage} problem ended with status {sol.status}")
        active = sol.active.copy()
        if key is not None:
            self._hints[(stage, key)] = active
        recent[:] = [active] + [a for a in recent if not np.array_equal(a, active)][: RECENT_SETS - 1]
        return sol

    # ------------------------------------------------------------------ stages
    def schedule(self, instant: SystemInstant, differentiate: bool = True, key=None) -> ScheduleResult:
        prob = self.schedule_problem(instant)
        sol = self._solve(prob, key, "sch")
        sl, asm, z = self._asm.sch_slices, self._asm, sol.z
        energy = float(asm.cg @ z[sl["pg"]])
        curt = float(asm.gs @ z[sl["curt"]])
        pen = float(asm.gb @ (z[sl["up"]] + z[sl["down"]]))
        res = ScheduleResult(
            dispatch=z[sl["pg"]].copy(), angles=z[sl["delta"]].copy(), flows=z[sl["f"]].copy(),
            curtailment=z[sl["curt"]].copy(), slack_up=z[sl["up"]].copy(), slack_down=z[sl["down"]].copy(),
            cost=energy + curt + pen, energy=energy, curtail_cost=curt, penalty=pen, solution=sol, problem=prob,
        )
        if differentiate:
            sens = qpsolve.differentiate(prob, sol)
            res.d_dispatch = sens.dz[sl["pg"]]
            res.d_cost = prob.c @ sens.dz
            res.approximate = sens.approximate
        return res

    def redispatch(self, instant: SystemInstant, sched: ScheduleResult | np.ndarray,
                   differentiate: bool = True, key=None) -> RedispatchResult:
        dispatch = sched.dispatch if isinstance(sched, ScheduleResult) else np.asarray(sched, dtype=float)
        prob = self.redispatch_problem(instant, dispatch)
        sol = self._solve(prob, key, "rd")
        sl, asm, z = self._asm.rd_slices, self._asm, sol.z
        ramp = float(asm.cup @ z[sl["up"]] + asm.cdn @ z[sl["down"]])
        curt = float(asm.gs @ z[sl["curt"]])
        pen = float(asm.gb @ (z[sl["sup"]] + z[sl["sdown"]]))
        res = RedispatchResult(
            up=z[sl["up"]].copy(), down=z[sl["down"]].copy(), angles=z[sl["delta"]].copy(),
            flows=z[sl["f"]].copy(), curtailment=z[sl["curt"]].copy(), slack_up=z[sl["sup"]].copy(),
            slack_down=z[sl["sdown"]].copy(), cost=ramp + curt + pen, ramping=ramp, curtail_cost=curt,
            penalty=pen, solution=sol, problem=prob,
        )
        if differentiate:
            sens = qpsolve.differentiate(prob, sol)
            res.d_cost_dispatch = (prob.c @ sens.dz)[: self.case.n_gen]
            res.approximate = sens.approximate
            res.sensitivity = sens
        return res

    # ------------------------------------------------------------------ totals
    @staticmethod
    def _breakdown(s: ScheduleResult, r: RedispatchResult) -> CostBreakdown:
        items = {
            "schedule_energy": s.energy,
            "schedule_curtailment": s.curtail_cost,
            "schedule_penalty": s.penalty,
            "redispatch_ramping": r.ramping,
            "redispatch_curtailment": r.curtail_cost,
            "redispatch_penalty": r.penalty,
        }
        return CostBreakdown(schedule=s.cost, redispatch=r.cost, system=s.cost + r.cost, items=items)

    def system_cost(self, instant: SystemInstant, key=None) -> CostBreakdown:
        s = self.schedule(instant, differentiate=False, key=key)
        r = self.redispatch(instant, s, differentiate=False, key=key)
        return self._breakdown(s, r)

    def system_cost_gradient(self, instant: SystemInstant, key=None, eps_check: bool = False,
                             resolve_kinks: bool = True) -> CostGradient:
        """dC^sys/d(prediction) per site.

        At a flagged kink the active-set derivative picks one arbitrary piece
        (an exact forecast, where ramping up and down are both at zero, is
        the common case). With ``resolve_kinks`` each component is replaced by
        the mean of its one-sided derivatives, read from the analytic gradient
        ``KINK_STEP`` MW to either side. The result stays flagged.
        """
        s = self.schedule(instant, key=key)
        r = self.redispatch(instant, s, key=key)
        grad = s.d_cost + r.d_cost_dispatch @ s.d_dispatch
        # the redispatch is only perturbed along the schedule's response
        along = np.vstack([s.d_dispatch, np.zeros((self.case.n_site, self.case.n_site))])
        flag = s.approximate or r.sensitivity.kinked(along)
        if flag and resolve_kinks:
            grad = self._kink_average(instant)
        delta = None
        if eps_check:
            half = OpfLayer(self.case, self.eps / 2).system_cost_gradient(instant)
            delta = float(np.abs(half.grad - grad).max(initial=0.0))
        return CostGradient(self._breakdown(s, r), grad, flag, delta)

    def _kink_average(self, instant: SystemInstant) -> np.ndarray:
        pred = instant.predicted
        out = np.empty(self.case.n_site)
        for k in range(self.case.n_site):
            sides = []
            for step in (KINK_STEP, -KINK_STEP):
                p = pred.copy()
                p[k] += step
                if p[k] < 0.0:
                    continue
                g = self.system_cost_gradient(instant.with_prediction(p), resolve_kinks=False)
                sides.append(g.grad[k])
            out[k] = np.mean(sides)
        return out

    def batch(self, loads, truths, preds, keys=None, workers: int = 1, resolve_kinks: bool = True):
        """Per-sample C^sys and its gradient for a batch.

        Returns ``(costs (N,), grads (N, ns), approximate (N,) bool)``. Samples
        are independent; results are collected in index order. Callers that
        only need costs and flags can skip the kink averaging.
        """
        loads, truths, preds = (np.asarray(a, dtype=float) for a in (loads, truths, preds))
        preds = np.maximum(preds, 0.0)
        keys = list(range(len(loads))) if keys is None else list(keys)

        def one(i):
            inst = SystemInstant(loads[i], truths[i], preds[i])
            return self.system_cost_gradient(inst, key=keys[i], resolve_kinks=resolve_kinks)

        idx = range(len(loads))
        if workers > 1:
            with ThreadPoolExecutor(workers) as ex:
                out = list(ex.map(one, idx))
        else:
            out = [one(i) for i in idx]
        costs = np.array([o.cost.system for o in out])
        grads = np.array([o.grad for o in out]).reshape(len(out), self.case.n_site)
        flags = np.array([o.approximate for o in out], dtype=bool)
        return costs, grads, flags


@functools.lru_cache(maxsize=16)
def layer_for(case: GridCase, eps: float = DEFAULT_EPS) -> OpfLayer:
    return OpfLayer(case, eps)


def schedule(case: GridCase, instant: SystemInstant, eps: float = DEFAULT_EPS) -> ScheduleResult:
    return layer_for(case, eps).schedule(instant)


def redispatch(case: GridCase, instant: SystemInstant, sched, eps: float = DEFAULT_EPS) -> RedispatchResult:
    return layer_for(case, eps).redispatch(instant, sched)


def system_cost(case: GridCase, instant: SystemInstant, eps: float = DEFAULT_EPS) -> CostBreakdown:
    return layer_for(case, eps).system_cost(instant)


def system_cost_gradient(case: GridCase, instant: SystemInstant, eps: float = DEFAULT_EPS,
                         eps_check: bool = False) -> CostGradient:
    return layer_for(case, eps).system_cost_gradient(instant, eps_check=eps_check)


# --------------------------------------------------------------- cost surface

def cost_surface(case: GridCase, base: SystemInstant, pv_errors, wind_errors,
                 line_scale: float = 1.0, eps: float = DEFAULT_EPS) -> np.ndarray:
    """C^sys over a grid of prediction errors (prediction = truth + error).

    Rows follow ``pv_errors``, columns ``wind_errors``. Errors are applied to
    every site of the respective kind; predictions are floored at 0.
    """
    pv_errors = np.asarray(pv_errors, dtype=float)
    wind_errors = np.asarray(wind_errors, dtype=float)
    if not (np.all(np.isfinite(pv_errors)) and np.all(np.isfinite(wind_errors))):
        raise ValueError("error grids must be finite")
    if line_scale != 1.0:
        case = case.with_line_scale(line_scale)
    layer = layer_for(case, eps)
    kinds = np.array(case.site_kinds())
    is_pv, is_wind = kinds == "PV", kinds == "Wind"
    out = np.empty((pv_errors.size, wind_errors.size))
    for i, ep in enumerate(pv_errors):
        for j, ew in enumerate(wind_errors):
            pred = base.renewable + ep * is_pv + ew * is_wind
            out[i, j] = layer.system_cost(base.with_prediction(np.maximum(pred, 0.0)), key=("surface", j)).system
    return out


def write_surface_csv(path, pv_errors, wind_errors, surface) -> None:
    with open(path, "w") as fh:
        fh.write("pv_error,wind_error,C_sys\n")
        for i, ep in enumerate(pv_errors):
            for j, ew in enumerate(wind_errors):
                fh.write(f"{float(ep)!r},{float(ew)!r},{float(surface[i, j])!r}\n")


def _color(t: float) -> str:
    # blue -> yellow ramp
    t = min(max(t, 0.0), 1.0)
    r, g, b = int(40 + 215 * t), int(60 + 170 * t), int(160 - 120 * t)
    return f"#{r:02x}{g:02x}{b:02x}"


def surface_svg(path, pv_errors, wind_errors, surface, title: str = "C_sys") -> None:
    """Minimal heatmap: x = wind error, y = PV error."""
    pv_errors, wind_errors = np.asarray(pv_errors), np.asarray(wind_errors)
    cell, left, top = 14, 60, 40
    w = left + cell * wind_errors.size + 90
    h = top + cell * pv_errors.size + 50
    lo, hi = float(surface.min()), float(surface.max())
    span = hi - lo if hi > lo else 1.0
    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="11">',
             f'<text x="{left}" y="20">{title} (min {lo:.1f}, max {hi:.1f} EUR)</text>']
    for i in range(pv_errors.size):
        y = top + cell * (pv_errors.size - 1 - i)
        for j in range(wind_errors.size):
            x = left + cell * j
            parts.append(f'<rect x="{x}" y="{y}" width="{cell}" height="{cell}" '
                         f'fill="{_color((surface[i, j] - lo) / span)}"/>')
    yb = top + cell * pv_errors.size
    parts.append(f'<text x="{left}" y="{yb + 16}">wind error {wind_errors[0]:g} .. {wind_errors[-1]:g} MW</text>')
    parts.append(f'<text x="4" y="{top - 6}">PV error</text>')
    parts.append(f'<text x="4" y="{top + 10}">{pv_errors[-1]:g}</text>')
    parts.append(f'<text x="4" y="{yb}">{pv_errors[0]:g}</text>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")
