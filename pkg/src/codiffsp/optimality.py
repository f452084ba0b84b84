"""Candidate certification.

Three checks at a feasible point z = (x, y_1..y_S):

    check_optimality: multiplier form of the first-order necessary condition.
        Per scenario, fix one zero-offset superdifferential vertex w of the
        objective integrand and one per active constraint; then nonnegative
        multipliers lambda and a vector zeta_s must place (zeta_s, 0) inside
        the hull of {v + w + sum_i lambda_i (v_i + w_i)} over subdifferential
        vertices v, v_i.  The y-block residual of that inclusion is the
        stationarity measure; E[zeta] must lie in -N_A(x).

    smooth_kkt_check: the same condition when every integrand is smooth,
        reduced to a nonnegative least-squares system in the gradients.

    inf_stationarity_measure: sampled lower estimate of the directional
        derivative of the penalized integrand over unit feasible directions;
        nonnegativity indicates approximate inf-stationarity.

The condition quantifies over all superdifferential selections; selections
are enumerated exhaustively only when their count is small, and the
certificate records how many were checked.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np
from scipy.optimize import nnls

from ._minnorm import min_norm_point
from .codiff import codiff, quasidiff
from .errors import InfeasibleCandidate, NotSmooth
from .expectation import block_codiff
from .expr import evaluate, is_smooth_struct
from .model import Point, TwoStageProblem, is_feasible
from .penalty import ENUM_CAP, penalty_integrand

FEAS_TOL = 1e-6
ACT_TOL = 1e-6  # matches solver accuracy; a constraint this close to 0 is active
CONE_TOL = 1e-6
LAMBDA_GRID = 11


@dataclass(frozen=True)
class Certificate:
    """Multiplier certificate; residuals near zero certify the condition.

    empirical is False only when every superdifferential selection was
    enumerated and every scenario reduced to an exact least-squares solve.
    """

    lambdas: np.ndarray  # (S, ell), nonnegative
    zeta: np.ndarray  # (S, d)
    residual_stationarity: float
    residual_complementarity: float
    residual_normal_cone: float
    budget_sum: float  # sum_i max_s lambda_{i,s}
    budget_bound: float | None  # the penalty weight c, when one applies
    checked_selections: int
    empirical: bool
    fallback: bool = False  # selection enumeration overflowed

    def __post_init__(self):
        if self.lambdas.size and self.lambdas.min() < 0:
            raise ValueError("multipliers must be nonnegative")
        for r in (
            self.residual_stationarity,
            self.residual_complementarity,
            self.residual_normal_cone,
        ):
            if r < 0:
                raise ValueError("residuals must be nonnegative")

    @property
    def residuals(self) -> dict[str, float]:
        return {
            "stationarity": self.residual_stationarity,
            "complementarity": self.residual_complementarity,
            "normal_cone": self.residual_normal_cone,
        }

    def to_json(self) -> dict:
        return {
            "lambdas": self.lambdas.tolist(),
            "zeta": self.zeta.tolist(),
            "residuals": self.residuals,
            "budget": {"sum": self.budget_sum, "bound": self.budget_bound},
            "checked_selections": self.checked_selections,
            "empirical": self.empirical,
            "fallback": self.fallback,
        }


TIEBREAK = 1e-3  # x-block pull; squared it must clear the min-norm gap tol


def _pairwise_sum(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return (A[:, None, :] + B[None, :, :]).reshape(-1, A.shape[1])


def _hull_residual(V: np.ndarray, d: int, tiebreak: bool = False) -> tuple[float, np.ndarray]:
    """min ||u_y|| over u in co(V) and the x-block of an attaining u.

    The minimizer's x-block is not unique; with tiebreak the solve also
    weakly minimizes ||u_x||, which favors the normal-cone check (0 lies in
    every normal cone).  The reported residual is the chosen u's ||u_y||.
    """
    if tiebreak:
        W = V.copy()
        W[:, :d] *= TIEBREAK
        _, t = min_norm_point(W)
        u = t @ V
        return float(np.linalg.norm(u[d:])), u[:d]
    q, t = min_norm_point(V[:, d:])
    u = t @ V
    return float(np.linalg.norm(q)), u[:d]


def _selection_residual(
    sub_f: np.ndarray,
    subs: list[np.ndarray],
    lam: np.ndarray,
    d: int,
    tiebreak: bool = False,
) -> tuple[float, np.ndarray]:
    """Residual for fixed multipliers; vertex sets already carry their w."""
    V = sub_f
    for t in range(lam.shape[0]):
        if lam[t] > 0.0:
            V = _pairwise_sum(V, lam[t] * subs[t])
    return _hull_residual(V, d, tiebreak)


def _lambda_search(resfun, n_act: int, c: float):
    """Coarse grid on [0, 10c] then improvement-only coordinate descent."""
    if n_act == 0:
        lam = np.zeros(0)
        return lam, resfun(lam)
    hi = 10.0 * max(c, 1.0)
    best_l = np.zeros(n_act)
    best_r = resfun(best_l)
    if n_act <= 3:
        axes = [np.linspace(0.0, hi, LAMBDA_GRID)] * n_act
        for combo in itertools.product(*axes):
            lam = np.asarray(combo)
            r = resfun(lam)
            if r < best_r:
                best_r, best_l = r, lam
    step = hi / (LAMBDA_GRID - 1)
    while step > 1e-12:
        improved = True
        while improved:
            improved = False
            for j in range(n_act):
                for cand in (best_l[j] - step, best_l[j] + step):
                    if cand < 0.0:
                        continue
                    trial = best_l.copy()
                    trial[j] = cand
                    r = resfun(trial)
                    if r < best_r - 1e-15:
                        best_r, best_l, improved = r, trial, True
        step *= 0.5
    return best_l, best_r


def _scenario_certificate(
    prob: TwoStageProblem,
    z: Point,
    s: int,
    c: float,
    chosen: tuple[int, ...] | None,
):
    """Best (residual, zeta, lambdas, combos_checked, exhaustive, smooth)."""
    d, ell = prob.d, prob.ell
    th = prob.scenarios.params[s]
    qf = quasidiff(codiff(prob.f, z.x, z.y[s], th))
    qgs = [quasidiff(codiff(gi, z.x, z.y[s], th)) for gi in prob.g]
    gvals = [float(evaluate(gi, z.x, z.y[s], th)) for gi in prob.g]
    act = [i for i in range(ell) if gvals[i] >= -ACT_TOL]

    sup_sets = [qf.sup] + [qgs[i].sup for i in act]
    smooth = qf.sub.shape[0] == 1 and all(qgs[i].sub.shape[0] == 1 for i in act)

    if chosen is not None:
        combos = [tuple(chosen[t] for t in range(len(sup_sets)))]
        exhaustive = False
        fallback = False
    else:
        n_sel = math.prod(S.shape[0] for S in sup_sets)
        if n_sel <= ENUM_CAP:
            combos = list(itertools.product(*(range(S.shape[0]) for S in sup_sets)))
            exhaustive = True
            fallback = False
        else:
            # default selection: the smallest-norm vertex of each set
            combos = [
                tuple(int(np.argmin((S * S).sum(axis=1))) for S in sup_sets)
            ]
            exhaustive = False
            fallback = True

    best = None
    for combo in combos:
        wf = sup_sets[0][combo[0]]
        shifted = [qgs[act[t]].sub + sup_sets[1 + t][combo[1 + t]] for t in range(len(act))]
        base = qf.sub + wf
        if smooth:
            grad = base[0]
            if act:
                G = np.stack([sh[0][d:] for sh in shifted], axis=1)
                lam_act, res = nnls(G, -grad[d:])
                res = float(res)
                zeta = grad[:d] + sum(
                    lam_act[t] * shifted[t][0][:d] for t in range(len(act))
                )
            else:
                lam_act = np.zeros(0)
                res = float(np.linalg.norm(grad[d:]))
                zeta = grad[:d].copy()
        else:
            lam_act, _ = _lambda_search(
                lambda lam: _selection_residual(base, shifted, lam, d)[0], len(act), c
            )
            res, zeta = _selection_residual(base, shifted, lam_act, d, tiebreak=True)
        if best is None or res < best[0]:
            lam_full = np.zeros(ell)
            for t, i in enumerate(act):
                lam_full[i] = lam_act[t]
            best = (res, zeta, lam_full)
    res, zeta, lam_full = best
    comp = max((abs(lam_full[i] * gvals[i]) for i in range(ell)), default=0.0)
    return res, zeta, lam_full, comp, len(combos), exhaustive, fallback, smooth


def check_optimality(
    prob: TwoStageProblem,
    c: float,
    z: Point,
    selections=None,
    feas_tol: float = FEAS_TOL,
) -> Certificate:
    """Verify the multiplier condition at a feasible candidate.

    selections, when given, is a per-scenario sequence of vertex indices:
    first into the objective's superdifferential, then one per active
    constraint in index order.  Without it, selections are enumerated when
    their count is at most the enumeration cap, otherwise the smallest-norm
    vertex of each set is used and the certificate is flagged as a fallback.
    """
    ok, rep = is_feasible(prob, z, tol=feas_tol)
    if not ok:
        raise InfeasibleCandidate(
            f"candidate violates feasibility by {rep.max_violation:.3e} "
            f"(tolerance {feas_tol:.1e})"
        )
    c = float(c)
    S, ell = prob.S, prob.ell
    lambdas = np.zeros((S, ell))
    zeta = np.zeros((S, prob.d))
    res_stat = 0.0
    res_comp = 0.0
    checked = 0
    exhaustive_all = True
    fallback_any = False
    smooth_all = True
    for s in range(S):
        chosen = None if selections is None else tuple(selections[s])
        res, zs, lam, comp, n, exh, fb, sm = _scenario_certificate(prob, z, s, c, chosen)
        lambdas[s] = lam
        zeta[s] = zs
        res_stat = max(res_stat, res)
        res_comp = max(res_comp, comp)
        checked += n
        exhaustive_all &= exh
        fallback_any |= fb
        smooth_all &= sm
    e_zeta = prob.scenarios.probs @ zeta
    res_cone = prob.A.normal_residual(z.x, e_zeta, tol=CONE_TOL)
    budget = float(lambdas.max(axis=0).sum()) if ell else 0.0
    return Certificate(
        lambdas=lambdas,
        zeta=zeta,
        residual_stationarity=res_stat,
        residual_complementarity=res_comp,
        residual_normal_cone=res_cone,
        budget_sum=budget,
        budget_bound=c,
        checked_selections=checked,
        empirical=not (exhaustive_all and smooth_all),
        fallback=fallback_any,
    )


def smooth_kkt_check(prob: TwoStageProblem, z: Point, feas_tol: float = FEAS_TOL) -> Certificate:
    """KKT reduction when every integrand is smooth.

    Per scenario, solves the nonnegative least-squares system
    grad_y f + sum_i lambda_i grad_y g_i = 0 over the active constraints and
    aggregates the x-condition through the normal cone of A.
    """
    if not is_smooth_struct(prob.f) or any(not is_smooth_struct(gi) for gi in prob.g):
        raise NotSmooth("smooth_kkt_check requires smooth f and g")
    ok, rep = is_feasible(prob, z, tol=feas_tol)
    if not ok:
        raise InfeasibleCandidate(
            f"candidate violates feasibility by {rep.max_violation:.3e} "
            f"(tolerance {feas_tol:.1e})"
        )
    S, ell, d = prob.S, prob.ell, prob.d
    lambdas = np.zeros((S, ell))
    zeta = np.zeros((S, d))
    res_stat = 0.0
    res_comp = 0.0
    for s in range(S):
        th = prob.scenarios.params[s]
        gf = quasidiff(codiff(prob.f, z.x, z.y[s], th)).sub[0]
        grads = [quasidiff(codiff(gi, z.x, z.y[s], th)).sub[0] for gi in prob.g]
        gvals = [float(evaluate(gi, z.x, z.y[s], th)) for gi in prob.g]
        act = [i for i in range(ell) if gvals[i] >= -ACT_TOL]
        if act:
            G = np.stack([grads[i][d:] for i in act], axis=1)
            lam_act, res = nnls(G, -gf[d:])
            zs = gf[:d] + sum(lam_act[t] * grads[i][:d] for t, i in enumerate(act))
            for t, i in enumerate(act):
                lambdas[s, i] = lam_act[t]
        else:
            res = np.linalg.norm(gf[d:])
            zs = gf[:d].copy()
        zeta[s] = zs
        res_stat = max(res_stat, float(res))
        res_comp = max(
            res_comp,
            max((abs(lambdas[s, i] * gvals[i]) for i in range(ell)), default=0.0),
        )
    e_zeta = prob.scenarios.probs @ zeta
    res_cone = prob.A.normal_residual(z.x, e_zeta, tol=CONE_TOL)
    budget = float(lambdas.max(axis=0).sum()) if ell else 0.0
    return Certificate(
        lambdas=lambdas,
        zeta=zeta,
        residual_stationarity=res_stat,
        residual_complementarity=res_comp,
        residual_normal_cone=res_cone,
        budget_sum=budget,
        budget_bound=None,
        checked_selections=S,
        empirical=False,
    )


def inf_stationarity_measure(
    prob: TwoStageProblem,
    c: float,
    z: Point,
    directions: int = 64,
    seed: int = 0,
) -> float:
    """min over sampled unit feasible directions of the penalized integrand's
    directional derivative at z; nonnegative means approximately
    inf-stationary.  Derivatives are exact quasidifferential values."""
    prob.check_point(z)
    pen = penalty_integrand(prob, float(c))
    shadow = TwoStageProblem(
        d=prob.d, m=prob.m, A=prob.A, f=pen, g=(), scenarios=prob.scenarios
    )
    bc = block_codiff(shadow, z)
    qds = [quasidiff(p) for p in bc.per_scenario]
    rng = np.random.default_rng(seed)
    n = prob.d + prob.S * prob.m
    worst = math.inf
    found = 0
    attempts = 0
    while found < directions and attempts < 50 * directions:
        attempts += 1
        h = rng.standard_normal(n)
        hx = prob.A.tangent_project(z.x, h[: prob.d])
        hY = h[prob.d :].reshape(prob.S, prob.m)
        norm = math.sqrt(float(hx @ hx) + float((hY * hY).sum()))
        if norm < 1e-12:
            continue
        hx /= norm
        hY /= norm
        val = 0.0
        for s in range(prob.S):
            val += float(bc.probs[s]) * float(
                (qds[s].sub @ np.concatenate((hx, hY[s]))).max()
                + (qds[s].sup @ np.concatenate((hx, hY[s]))).min()
            )
        worst = min(worst, val)
        found += 1
    return worst
