"""Finite-vertex codifferential calculus for expression DAGs.

A codifferential at a point is a pair of polytopes in R x R^n, stored as
vertex arrays whose first column is the offset coordinate:

    hypo: (k1, 1+n) with max offset exactly 0
    hyper: (k2, 1+n) with min offset exactly 0

The pair gives the uniform first-order expansion

    f(z + D) - f(z) ~= max_{(a,v) in hypo} (a + <v, D>)
                     + min_{(b,w) in hyper} (b + <w, D>)

with error o(|D|).  The calculus rules below produce offsets that satisfy
the zero-at-zero normalization exactly in floating point; the constructors
assert it rather than renormalize.

Quasidifferentials are the zero-offset slices of a codifferential and
represent the directional derivative as max plus min of linear forms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ._minnorm import min_norm_point
from .errors import CodiffspError, DimensionMismatch, VertexCapExceeded
from .expr import Expr, is_smooth_struct

TOL_ZERO = 1e-9
MEMBERSHIP_TOL = 1e-9
MAX_VERTICES = 4096
AUTO_PRUNE_AT = 256


@dataclass(frozen=True, eq=False)
class CodiffPair:
    """Vertex-set codifferential.  Arrays are frozen; never mutate them."""

    hypo: np.ndarray  # (k1, 1+dim)
    hyper: np.ndarray  # (k2, 1+dim)
    dim: int

    def __post_init__(self):
        for name, arr in (("hypo", self.hypo), ("hyper", self.hyper)):
            if arr.ndim != 2 or arr.shape[0] == 0 or arr.shape[1] != 1 + self.dim:
                raise DimensionMismatch(
                    f"{name} must be (k, {1 + self.dim}), got {arr.shape}"
                )
        a = float(self.hypo[:, 0].max())
        b = float(self.hyper[:, 0].min())
        if abs(a) > TOL_ZERO or abs(b) > TOL_ZERO:
            raise CodiffspError(
                "ZERO_AT_ZERO",
                f"offset normalization violated: max hypo offset {a}, min hyper offset {b}",
            )


@dataclass(frozen=True, eq=False)
class QuasidiffPair:
    """Zero-offset slices of a codifferential: sub (k1, dim), sup (k2, dim)."""

    sub: np.ndarray
    sup: np.ndarray
    dim: int


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.ascontiguousarray(arr, dtype=np.float64)
    arr.setflags(write=False)
    return arr


def _pair(hypo: np.ndarray, hyper: np.ndarray) -> CodiffPair:
    hypo = _manage(hypo)
    hyper = _manage(hyper)
    return CodiffPair(hypo=_freeze(hypo), hyper=_freeze(hyper), dim=hypo.shape[1] - 1)


def _minkowski(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    if A.shape[0] * B.shape[0] > MAX_VERTICES:
        # pruning first keeps desk-scale models exact without silent loss
        A = _manage(A)
        B = _manage(B)
        if A.shape[0] * B.shape[0] > MAX_VERTICES:
            raise VertexCapExceeded(A.shape[0] * B.shape[0], MAX_VERTICES)
    return (A[:, None, :] + B[None, :, :]).reshape(-1, A.shape[1])


def _manage(V: np.ndarray) -> np.ndarray:
    if V.shape[0] > MAX_VERTICES:
        raise VertexCapExceeded(V.shape[0], MAX_VERTICES)
    if V.shape[0] > AUTO_PRUNE_AT:
        V = np.unique(V, axis=0)
        if V.shape[0] > AUTO_PRUNE_AT:
            V = _prune_vertices(V)
        if V.shape[0] > MAX_VERTICES:  # pragma: no cover - prune only shrinks
            raise VertexCapExceeded(V.shape[0], MAX_VERTICES)
    return V


def _prune_vertices(V: np.ndarray) -> np.ndarray:
    """Drop every vertex that is a convex combination of the remaining ones."""
    V = np.unique(V, axis=0)
    k = V.shape[0]
    if k <= 2:
        return V
    keep = np.ones(k, dtype=bool)
    for j in range(k):
        keep[j] = False
        others = V[keep]
        if others.shape[0] == 0:
            keep[j] = True
            continue
        q, _t = min_norm_point(others - V[j])
        inside = float(np.linalg.norm(q)) <= MEMBERSHIP_TOL
        if not inside:
            keep[j] = True
    return V[keep]


def codiff(expr: Expr, x, y=(), theta=()) -> CodiffPair:
    """Codifferential of the DAG at (x, y) in the joint space of dimension
    len(x) + len(y).  theta enters as a fixed parameter."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if expr.dims is not None:
        d, m, q = expr.dims
        if (x.shape[0], y.shape[0], theta.shape[0]) != (d, m, q):
            raise DimensionMismatch(
                f"point blocks ({x.shape[0]}, {y.shape[0]}, {theta.shape[0]}) "
                f"do not match declared dims ({d}, {m}, {q})"
            )
    n = x.shape[0] + y.shape[0]
    z = np.concatenate((x, y))
    zero = np.zeros((1, 1 + n))

    vals: dict[int, float] = {}
    pairs: dict[int, tuple[np.ndarray, np.ndarray]] = {}

    def val(e: Expr) -> float:
        key = id(e)
        got = vals.get(key)
        if got is not None:
            return got
        k = e.kind
        if k == "constant":
            v = e.value
        elif k == "affine":
            v = e.c0 + float(e.cx @ x) + float(e.cy @ y) + float(e.ct @ theta)
        elif k == "quad":
            v = 0.5 * float(z @ (e.Q @ z)) + float(e.lin @ z) + e.c0
        elif k == "add":
            v = 0.0
            for ch in e.children:
                v += val(ch)
        elif k == "scale":
            v = e.lam * val(e.children[0])
        elif k == "max":
            v = max(val(ch) for ch in e.children)
        elif k == "min":
            v = min(val(ch) for ch in e.children)
        elif k == "abs":
            v = abs(val(e.children[0]))
        else:  # dc
            v = val(e.children[0]) - val(e.children[1])
        vals[key] = v
        return v

    grads: dict[int, np.ndarray] = {}

    def grad(e: Expr) -> np.ndarray:
        key = id(e)
        got = grads.get(key)
        if got is not None:
            return got
        k = e.kind
        if k == "constant":
            g = np.zeros(n)
        elif k == "affine":
            g = np.concatenate((e.cx, e.cy))
        elif k == "quad":
            g = e.Q @ z + e.lin
        elif k == "add":
            g = np.zeros(n)
            for ch in e.children:
                g = g + grad(ch)
        else:  # scale; smooth subtrees contain no other kinds
            g = e.lam * grad(e.children[0])
        grads[key] = g
        return g

    def smooth_pair(g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        hypo = np.zeros((1, 1 + n))
        hypo[0, 1:] = g
        return hypo, zero.copy()

    def max_rule(
        parts: list[tuple[np.ndarray, np.ndarray]], values: list[float]
    ) -> tuple[np.ndarray, np.ndarray]:
        f = max(values)
        hyper = parts[0][1]
        for _hypo_k, hyper_k in parts[1:]:
            hyper = _minkowski(hyper, hyper_k)
        pieces = []
        for i, (hypo_i, _hyper_i) in enumerate(parts):
            S = hypo_i
            for k2, (_h, hyper_k) in enumerate(parts):
                if k2 != i:
                    S = _minkowski(S, -hyper_k)
            S = S.copy()
            S[:, 0] += values[i] - f
            pieces.append(S)
        return np.vstack(pieces), hyper

    def rec(e: Expr) -> tuple[np.ndarray, np.ndarray]:
        key = id(e)
        got = pairs.get(key)
        if got is not None:
            return got
        # a smooth subtree is one atom: hypo {(0, grad)}, hyper {(0, 0)}.
        # Collapsing here keeps negations of smooth pieces in atom form, so
        # abs(x) yields the two-vertex hypo rather than a swapped hyper.
        if is_smooth_struct(e):
            out = smooth_pair(grad(e))
            pairs[key] = out
            return out
        k = e.kind
        if k == "add":
            hypo, hyper = rec(e.children[0])
            for ch in e.children[1:]:
                h2, g2 = rec(ch)
                hypo = _minkowski(hypo, h2)
                hyper = _minkowski(hyper, g2)
            out = _manage(hypo), _manage(hyper)
        elif k == "scale":
            hypo, hyper = rec(e.children[0])
            if e.lam >= 0.0:
                out = e.lam * hypo, e.lam * hyper
            else:
                out = e.lam * hyper, e.lam * hypo
        elif k == "max":
            parts = [rec(ch) for ch in e.children]
            values = [val(ch) for ch in e.children]
            hypo, hyper = max_rule(parts, values)
            out = _manage(hypo), _manage(hyper)
        elif k == "min":
            # mirror of max: min f_i = -max(-f_i)
            parts = [rec(ch) for ch in e.children]
            values = [val(ch) for ch in e.children]
            neg_parts = [(-hyper_i, -hypo_i) for hypo_i, hyper_i in parts]
            hypo_m, hyper_m = max_rule(neg_parts, [-v for v in values])
            out = _manage(-hyper_m), _manage(-hypo_m)
        elif k == "abs":
            # rewrite as max(u, -u); a smooth u negates to the atom (-grad)
            u = e.children[0]
            v = val(u)
            if is_smooth_struct(u):
                part_p = smooth_pair(grad(u))
                part_n = smooth_pair(-grad(u))
            else:
                hypo, hyper = rec(u)
                part_p = (hypo, hyper)
                part_n = (-hyper, -hypo)
            hm, gm = max_rule([part_p, part_n], [v, -v])
            out = _manage(hm), _manage(gm)
        else:  # dc
            plus, minus = e.children
            hypo_p, hyper_p = rec(plus)
            hypo_q, hyper_q = rec(minus)
            # convex children built by these rules carry hyper = {(0, 0)},
            # so this reduces to [hypo of plus, negated hypo of minus]
            hypo = _minkowski(hypo_p, -hyper_q)
            hyper = _minkowski(hyper_p, -hypo_q)
            # restore min-offset normalization; exact no-op when the minus
            # child's max hypo offset is exactly 0
            shift = hyper[:, 0].min()
            if shift != 0.0:
                hyper = hyper.copy()
                hyper[:, 0] -= shift
            out = _manage(hypo), _manage(hyper)
        pairs[key] = out
        return out

    hypo, hyper = rec(expr)
    return _pair(hypo, hyper)


def expansion_value(cd: CodiffPair, delta) -> float:
    """max over hypo of (a + <v, delta>) plus min over hyper of (b + <w, delta>)."""
    delta = np.asarray(delta, dtype=np.float64).ravel()
    if delta.shape[0] != cd.dim:
        raise DimensionMismatch(f"delta has length {delta.shape[0]}, expected {cd.dim}")
    up = cd.hypo[:, 0] + cd.hypo[:, 1:] @ delta
    dn = cd.hyper[:, 0] + cd.hyper[:, 1:] @ delta
    return float(up.max() + dn.min())


def quasidiff(cd: CodiffPair) -> QuasidiffPair:
    """Zero-offset slices; nonempty by the zero-at-zero normalization."""
    sub = cd.hypo[np.abs(cd.hypo[:, 0]) <= TOL_ZERO, 1:]
    sup = cd.hyper[np.abs(cd.hyper[:, 0]) <= TOL_ZERO, 1:]
    if sub.shape[0] == 0 or sup.shape[0] == 0:
        raise CodiffspError(
            "ZERO_AT_ZERO", "no zero-offset vertices: codifferential is inconsistent"
        )
    return QuasidiffPair(sub=_freeze(sub), sup=_freeze(sup), dim=cd.dim)


def dirderiv(qd: QuasidiffPair, h) -> float:
    """Directional derivative: max over sub of <v,h> plus min over sup of <w,h>."""
    h = np.asarray(h, dtype=np.float64).ravel()
    if h.shape[0] != qd.dim:
        raise DimensionMismatch(f"h has length {h.shape[0]}, expected {qd.dim}")
    return float((qd.sub @ h).max() + (qd.sup @ h).min())


def prune(cd: CodiffPair) -> CodiffPair:
    """Remove non-extreme vertices from both sets.  expansion_value is
    unchanged for every direction."""
    return CodiffPair(
        hypo=_freeze(_prune_vertices(cd.hypo)),
        hyper=_freeze(_prune_vertices(cd.hyper)),
        dim=cd.dim,
    )
