"""Penalty terms, the penalized objective, and the nondegeneracy check.

Two penalty terms are supported:

    dist_p: weighted p-norm of per-scenario distances from y_s to the
            second-stage feasible set, restricted to geometries with exact
            projections (boxes in the max norm, Euclidean balls);
    l1_max: expectation of max_i {0, g_i}.

The nondegeneracy checker estimates the uniform constant a > 0 bounding
dist(0, co{sub-vertices of active g_i shifted by a superdifferential
selection}) from below at infeasible points; positivity of that constant is
the sufficient condition under which the l1_max penalty is exact.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from ._minnorm import min_norm_point
from .codiff import codiff, quasidiff
from .errors import Unprojectable, ValidationError
from .expectation import BlockCodiff, _scenario_map, eval_I
from .expr import Expr, add, constant, evaluate, maximum, scale
from .model import Point, TwoStageProblem

TOL_ACT = 1e-9
ENUM_CAP = 16


@dataclass(frozen=True)
class PenaltySpec:
    """Penalty choice: kind in {dist_p, l1_max} and parameter c >= 0."""

    kind: str
    c: float

    def __post_init__(self):
        if self.kind not in ("dist_p", "l1_max"):
            raise ValidationError("PENALTY_KIND", f"unknown penalty kind {self.kind!r}")
        if not (self.c >= 0.0 and math.isfinite(self.c)):
            raise ValidationError("PENALTY_KIND", "penalty parameter c must be >= 0")


# ---------------------------------------------------------------------------
# distance penalty: structural geometry detection
# ---------------------------------------------------------------------------


def _affine_coeffs(e: Expr, dims) -> tuple[float, np.ndarray, np.ndarray, np.ndarray]:
    """Fold an affine-structured DAG into (c0, cx, cy, ct)."""
    d, m, q = dims
    k = e.kind
    if k == "constant":
        return e.value, np.zeros(d), np.zeros(m), np.zeros(q)
    if k == "affine":
        return e.c0, e.cx.copy(), e.cy.copy(), e.ct.copy()
    if k == "add":
        c0, cx, cy, ct = 0.0, np.zeros(d), np.zeros(m), np.zeros(q)
        for ch in e.children:
            a, bx, by, bt = _affine_coeffs(ch, dims)
            c0 += a
            cx += bx
            cy += by
            ct += bt
        return c0, cx, cy, ct
    if k == "scale":
        a, bx, by, bt = _affine_coeffs(e.children[0], dims)
        return e.lam * a, e.lam * bx, e.lam * by, e.lam * bt
    raise Unprojectable(f"constraint is not affine (found {k!r} node)")


def _quad_coeffs(e: Expr, dims):
    """Fold a smooth DAG into (Q, lin, ct, c0) over z = (x, y)."""
    d, m, q = dims
    n = d + m
    k = e.kind
    if k == "quad":
        return e.Q.copy(), e.lin.copy(), np.zeros(q), e.c0
    if k in ("constant", "affine"):
        c0, cx, cy, ct = _affine_coeffs(e, dims)
        return np.zeros((n, n)), np.concatenate((cx, cy)), ct, c0
    if k == "add":
        Q, lin, ct, c0 = np.zeros((n, n)), np.zeros(n), np.zeros(q), 0.0
        for ch in e.children:
            Q2, l2, t2, a2 = _quad_coeffs(ch, dims)
            Q += Q2
            lin += l2
            ct += t2
            c0 += a2
        return Q, lin, ct, c0
    if k == "scale":
        Q, lin, ct, c0 = _quad_coeffs(e.children[0], dims)
        return e.lam * Q, e.lam * lin, e.lam * ct, e.lam * c0
    raise Unprojectable(f"constraint is not smooth (found {k!r} node)")


def _detect_geometry(prob: TwoStageProblem):
    """Classify the second-stage feasible set as ("box", rows) or
    ("ball", data); raise UNPROJECTABLE otherwise.

    Box rows: one (j, scale, affine-part) bound per constraint, where
    g_i <= 0 reads y_j <= bound or y_j >= bound with an (x, theta)-affine
    bound.  Ball: a single quadratic alpha|y - z0|^2 <= R^2(x, theta).
    """
    dims = (prob.d, prob.m, prob.scenarios.q)
    try:
        rows = []
        for i, gi in enumerate(prob.g):
            c0, cx, cy, ct = _affine_coeffs(gi, dims)
            nz = np.flatnonzero(np.abs(cy) > 1e-12)
            if nz.shape[0] != 1:
                raise Unprojectable(
                    f"g[{i}] bounds {nz.shape[0]} recourse coordinates; need exactly 1"
                )
            j = int(nz[0])
            rows.append((j, float(cy[j]), c0, cx, ct))
        return "box", rows
    except Unprojectable:
        pass
    if len(prob.g) != 1:
        raise Unprojectable("distance penalty needs box constraints or a single ball")
    Q, lin, ct, c0 = _quad_coeffs(prob.g[0], dims)
    d, m = prob.d, prob.m
    scale_ref = max(1.0, float(np.abs(Q).max()))
    if np.abs(Q[:d, :]).max(initial=0.0) > 1e-12 * scale_ref:
        raise Unprojectable("ball detection: quadratic term must not involve x")
    Qy = Q[d:, d:]
    alpha2 = float(Qy[0, 0])
    if alpha2 <= 0.0 or np.abs(Qy - alpha2 * np.eye(m)).max() > 1e-12 * scale_ref:
        raise Unprojectable("ball detection: y-block must be a positive multiple of I")
    alpha = 0.5 * alpha2
    z0 = -lin[d:] / (2.0 * alpha)
    return "ball", (alpha, z0, lin[:d], ct, c0)


def _scenario_dist(kind, data, prob, x, y_s, th_s) -> float:
    if kind == "box":
        worst = 0.0
        for j, coef, c0, cx, ct in data:
            aff = c0 + float(cx @ x) + float(ct @ th_s)
            bound = -aff / coef
            gap = y_s[j] - bound if coef > 0 else bound - y_s[j]
            if gap > worst:
                worst = gap
        return worst
    alpha, z0, lx, ct, c0 = data
    beta = c0 + float(lx @ x) + float(ct @ th_s)
    r2 = float(z0 @ z0) - beta / alpha
    if r2 < 0.0:
        raise Unprojectable("ball feasible set is empty at this point")
    return max(0.0, float(np.linalg.norm(y_s - z0)) - math.sqrt(r2))


def phi_dist(prob: TwoStageProblem, z: Point) -> float:
    """(sum_s p_s dist(y_s, G(x, theta_s))^p)^(1/p) for projectable geometry."""
    prob.check_point(z)
    if prob.ell == 0:
        return 0.0
    kind, data = _detect_geometry(prob)
    p = prob.p_exponent
    th = prob.scenarios.params
    total = 0.0
    for s in range(prob.S):
        dist = _scenario_dist(kind, data, prob, z.x, z.y[s], th[s])
        total += float(prob.scenarios.probs[s]) * dist**p
    return total ** (1.0 / p)


def phi_l1(prob: TwoStageProblem, z: Point) -> float:
    """sum_s p_s max_i {0, g_i(x, y_s, theta_s)}; zero exactly on the
    second-stage feasible region (and everywhere when l = 0)."""
    prob.check_point(z)
    if prob.ell == 0:
        return 0.0
    th = prob.scenarios.params
    total = 0.0
    for s in range(prob.S):
        worst = 0.0
        for gi in prob.g:
            v = evaluate(gi, z.x, z.y[s], th[s])
            if v > worst:
                worst = v
        total += float(prob.scenarios.probs[s]) * worst
    return total


def Phi_c(prob: TwoStageProblem, spec: PenaltySpec, z: Point) -> float:
    """Penalized objective eval_I + c * phi."""
    phi = phi_dist(prob, z) if spec.kind == "dist_p" else phi_l1(prob, z)
    return eval_I(prob, z) + spec.c * phi


def penalty_integrand(prob: TwoStageProblem, c: float) -> Expr:
    """Per-scenario integrand f + c * max{0, g_1, ..., g_l} of the l1_max
    penalized objective."""
    if prob.ell == 0 or c == 0.0:
        return prob.f
    return add(prob.f, scale(c, maximum(constant(0.0), *prob.g)))


def penalty_codiff(prob: TwoStageProblem, spec: PenaltySpec, z: Point) -> BlockCodiff:
    """Block codifferential of the l1_max penalized integrand."""
    if spec.kind != "l1_max":
        raise ValidationError(
            "PENALTY_UNSUPPORTED", "codifferential penalty requires kind = l1_max"
        )
    prob.check_point(z)
    integrand = penalty_integrand(prob, spec.c)
    th = prob.scenarios.params
    pairs = _scenario_map(lambda s: codiff(integrand, z.x, z.y[s], th[s]), prob.S)
    return BlockCodiff(
        per_scenario=tuple(pairs), probs=prob.scenarios.probs, d=prob.d, m=prob.m
    )


# ---------------------------------------------------------------------------
# nondegeneracy of the constraint system
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class NondegReport:
    """Empirical lower bound on the constraint-qualification constant."""

    sampled_points: int
    min_hull_distance: float
    threshold_a: float
    witness_x: np.ndarray | None
    witness_y: np.ndarray | None
    witness_scenario: int
    empirical: bool = True


def _best_selection_distance(subs: list[np.ndarray], sups: list[np.ndarray]) -> float:
    """max over superdifferential selections of dist(0, co{sub_i + w_i}).

    The exactness condition is existential in the selection, so the least
    conservative empirical constant takes the best one.  Full enumeration
    when the product of vertex counts is small; greedy ascent otherwise.
    """

    def hull_dist(choice: tuple[int, ...]) -> float:
        Q = np.vstack([subs[i] + sups[i][w] for i, w in enumerate(choice)])
        q, _t = min_norm_point(Q)
        return float(np.linalg.norm(q))

    counts = [W.shape[0] for W in sups]
    total = 1
    for k in counts:
        total *= k
    if total <= ENUM_CAP:
        return max(hull_dist(choice) for choice in itertools.product(*map(range, counts)))
    # greedy coordinate ascent from the smallest-norm vertex of each sup set
    choice = [int(np.argmin(np.linalg.norm(W, axis=1))) for W in sups]
    best = hull_dist(tuple(choice))
    for _sweep in range(5):
        improved = False
        for i, W in enumerate(sups):
            for w in range(W.shape[0]):
                if w == choice[i]:
                    continue
                trial = choice.copy()
                trial[i] = w
                v = hull_dist(tuple(trial))
                if v > best + 1e-15:
                    best, choice, improved = v, trial, True
        if not improved:
            break
    return best


def check_nondegeneracy(
    prob: TwoStageProblem, samples: int = 200, seed: int = 0
) -> NondegReport:
    """Sample infeasible points around the witness and report the smallest
    hull distance dist(0, co{y-part sub-vertices of active g_i + w_i}).

    A reported value bounded away from zero supports (never proves) the
    uniform nondegeneracy condition behind l1_max exactness.
    """
    if prob.ell == 0:
        raise ValidationError("NO_CONSTRAINTS", "nondegeneracy needs l >= 1")
    rng = np.random.default_rng(seed)
    base = prob.witness
    if base is None:
        x0 = prob.A.project(np.zeros(prob.d))
        base = Point(x=x0, y=np.zeros((prob.S, prob.m)))
    th = prob.scenarios.params
    d = prob.d
    scale_r = 2.0 * (1.0 + float(np.linalg.norm(base.y)))

    found = 0
    best = math.inf
    wx = wy = None
    ws = -1
    for k in range(samples):
        # log-spaced radii reach both far-out points and razor-thin
        # boundary crossings where several constraints tie as active
        r = 10.0 ** rng.uniform(-10.0, math.log10(scale_r))
        x = prob.A.project(base.x + rng.normal(size=d) * 0.1)
        for s in range(prob.S):
            u = rng.normal(size=prob.m)
            nu = float(np.linalg.norm(u))
            if nu == 0.0:
                continue
            y_s = base.y[s] + (r / nu) * u
            vals = np.array([evaluate(gi, x, y_s, th[s]) for gi in prob.g])
            vmax = float(vals.max())
            if vmax <= 0.0:
                continue
            found += 1
            active = np.flatnonzero(vals >= vmax - TOL_ACT)
            subs, sups = [], []
            for i in active:
                qd = quasidiff(codiff(prob.g[i], x, y_s, th[s]))
                subs.append(np.unique(qd.sub[:, d:], axis=0))
                sups.append(np.unique(qd.sup[:, d:], axis=0))
            dist = _best_selection_distance(subs, sups)
            if dist < best:
                best = dist
                wx, wy, ws = x.copy(), y_s.copy(), s
    return NondegReport(
        sampled_points=found,
        min_hull_distance=best,
        threshold_a=best,
        witness_x=wx,
        witness_y=wy,
        witness_scenario=ws,
    )
