"""Expression DAGs over first-stage variables x, second-stage variables y,
and scenario parameters theta.

The node grammar is deliberately small: affine and quadratic atoms, sums,
scalar multiples, pointwise max/min, absolute value, and an explicit
difference-of-convex node.  There is no general product node; products are
admitted only inside the quadratic atom, which keeps every set produced by
the calculus a polytope with a bounded description.

A quadratic node over z = (x, y) has the value 0.5 * z^T Q z + lin^T z + c0
with Q symmetric; the ``psd`` flag marks structural convexity and is
verified against the spectrum when set.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import CodiffspError, DimensionMismatch, NotDC, ValidationError

Dims = tuple[int, int, int]  # (d, m, q)

_KINDS = ("constant", "affine", "quad", "add", "scale", "max", "min", "abs", "dc")


@dataclass(frozen=True, eq=False)
class Expr:
    """One DAG node.  Construct via the module-level factory functions."""

    kind: str
    children: tuple["Expr", ...] = ()
    dims: Dims | None = None  # None for dimension-free constants
    value: float = 0.0  # constant payload
    c0: float = 0.0  # affine / quad offset
    cx: np.ndarray | None = None
    cy: np.ndarray | None = None
    ct: np.ndarray | None = None
    Q: np.ndarray | None = None
    lin: np.ndarray | None = None
    psd: bool = False
    lam: float = 1.0  # scale payload

    # arithmetic sugar used by the generator and tests
    def __add__(self, other: "Expr") -> "Expr":
        return add(self, other)

    def __sub__(self, other: "Expr") -> "Expr":
        return add(self, scale(-1.0, other))

    def __neg__(self) -> "Expr":
        return scale(-1.0, self)

    def __mul__(self, factor: float) -> "Expr":
        return scale(float(factor), self)

    __rmul__ = __mul__

    def __abs__(self) -> "Expr":
        return absolute(self)


def _frozen(a, shape_len: int | None = None) -> np.ndarray:
    arr = np.asarray(a, dtype=np.float64)
    if shape_len is not None and arr.shape != (shape_len,):
        raise DimensionMismatch(f"expected length {shape_len}, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValidationError("NONFINITE", "non-finite coefficient")
    arr = arr.copy()
    arr.setflags(write=False)
    return arr


def _merge_dims(a: Dims | None, b: Dims | None) -> Dims | None:
    if a is None:
        return b
    if b is None:
        return a
    if a != b:
        raise DimensionMismatch(f"incompatible declared dimensions {a} vs {b}")
    return a


def constant(value: float) -> Expr:
    v = float(value)
    if not np.isfinite(v):
        raise ValidationError("NONFINITE", "non-finite constant")
    return Expr(kind="constant", value=v)


def affine(dims: Dims, c0: float = 0.0, cx=None, cy=None, ct=None) -> Expr:
    """c0 + <cx, x> + <cy, y> + <ct, theta>. Omitted blocks are zero."""
    d, m, q = dims
    c0 = float(c0)
    if not np.isfinite(c0):
        raise ValidationError("NONFINITE", "non-finite constant")
    cx = _frozen(np.zeros(d) if cx is None else cx, d)
    cy = _frozen(np.zeros(m) if cy is None else cy, m)
    ct = _frozen(np.zeros(q) if ct is None else ct, q)
    return Expr(kind="affine", dims=(d, m, q), c0=c0, cx=cx, cy=cy, ct=ct)


def quad(dims: Dims, Q, lin=None, c0: float = 0.0, psd: bool | None = None) -> Expr:
    """0.5 z^T Q z + <lin, z> + c0 over z = (x, y).  theta never enters a quad."""
    d, m, _q = dims
    n = d + m
    Qa = np.asarray(Q, dtype=np.float64)
    if Qa.shape != (n, n):
        raise DimensionMismatch(f"quad matrix must be ({n}, {n}), got {Qa.shape}")
    scale_q = 1.0 + float(np.abs(Qa).max(initial=0.0))
    if np.abs(Qa - Qa.T).max(initial=0.0) > 1e-9 * scale_q:
        raise ValidationError("QUAD_ASYMMETRIC", "quad matrix must be symmetric")
    Qa = 0.5 * (Qa + Qa.T)
    if psd is None:
        psd = bool(np.linalg.eigvalsh(Qa).min(initial=0.0) >= -1e-9 * scale_q)
    elif psd:
        if np.linalg.eigvalsh(Qa).min(initial=0.0) < -1e-9 * scale_q:
            raise ValidationError("QUAD_NOT_PSD", "psd flag set but matrix is indefinite")
    Qa = _frozen(Qa.ravel()).reshape(n, n)
    lin = _frozen(np.zeros(n) if lin is None else lin, n)
    return Expr(kind="quad", dims=dims, Q=Qa, lin=lin, c0=float(c0), psd=bool(psd))


def add(*children: Expr) -> Expr:
    if not children:
        raise ValidationError("PARSE", "add needs at least one child")
    dims = None
    for ch in children:
        dims = _merge_dims(dims, ch.dims)
    return Expr(kind="add", children=tuple(children), dims=dims)


def scale(lam: float, child: Expr) -> Expr:
    lam = float(lam)
    if not np.isfinite(lam):
        raise ValidationError("NONFINITE", "non-finite scale factor")
    return Expr(kind="scale", children=(child,), dims=child.dims, lam=lam)


def maximum(*children: Expr) -> Expr:
    if not children:
        raise ValidationError("PARSE", "max needs at least one child")
    dims = None
    for ch in children:
        dims = _merge_dims(dims, ch.dims)
    return Expr(kind="max", children=tuple(children), dims=dims)


def minimum(*children: Expr) -> Expr:
    if not children:
        raise ValidationError("PARSE", "min needs at least one child")
    dims = None
    for ch in children:
        dims = _merge_dims(dims, ch.dims)
    return Expr(kind="min", children=tuple(children), dims=dims)


def absolute(child: Expr) -> Expr:
    return Expr(kind="abs", children=(child,), dims=child.dims)


def dc(plus: Expr, minus: Expr) -> Expr:
    """Difference plus - minus of two structurally convex expressions."""
    for name, ch in (("plus", plus), ("minus", minus)):
        if not is_convex_struct(ch):
            raise ValidationError(
                "DC_NOT_CONVEX", f"dc {name} child is not structurally convex"
            )
    return Expr(kind="dc", children=(plus, minus), dims=_merge_dims(plus.dims, minus.dims))


@dataclass(frozen=True)
class Space:
    """Factory bound to fixed dimensions, for ergonomic model building."""

    d: int
    m: int
    q: int = 0

    @property
    def dims(self) -> Dims:
        return (self.d, self.m, self.q)

    def constant(self, value: float) -> Expr:
        return constant(value)

    def affine(self, c0: float = 0.0, cx=None, cy=None, ct=None) -> Expr:
        return affine(self.dims, c0=c0, cx=cx, cy=cy, ct=ct)

    def x(self, i: int, coeff: float = 1.0) -> Expr:
        cx = np.zeros(self.d)
        cx[i] = coeff
        return affine(self.dims, cx=cx)

    def y(self, j: int, coeff: float = 1.0) -> Expr:
        cy = np.zeros(self.m)
        cy[j] = coeff
        return affine(self.dims, cy=cy)

    def theta(self, k: int, coeff: float = 1.0) -> Expr:
        ct = np.zeros(self.q)
        ct[k] = coeff
        return affine(self.dims, ct=ct)

    def quad(self, Q, lin=None, c0: float = 0.0, psd: bool | None = None) -> Expr:
        return quad(self.dims, Q, lin=lin, c0=c0, psd=psd)


# ---------------------------------------------------------------------------
# evaluation


def _check_point(dims: Dims | None, x, y, theta):
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    theta = np.asarray(theta, dtype=np.float64).ravel()
    if dims is not None:
        d, m, q = dims
        if x.shape[0] != d:
            raise DimensionMismatch(f"x has length {x.shape[0]}, expected {d}")
        if y.shape[0] != m:
            raise DimensionMismatch(f"y has length {y.shape[0]}, expected {m}")
        if theta.shape[0] != q:
            raise DimensionMismatch(f"theta has length {theta.shape[0]}, expected {q}")
    return x, y, theta


def evaluate(expr: Expr, x, y=(), theta=()) -> float:
    """Evaluate the DAG at a single point.  Deterministic, total on finite input."""
    x, y, theta = _check_point(expr.dims, x, y, theta)
    memo: dict[int, float] = {}

    def rec(e: Expr) -> float:
        key = id(e)
        got = memo.get(key)
        if got is not None:
            return got
        k = e.kind
        if k == "constant":
            v = e.value
        elif k == "affine":
            v = e.c0 + float(e.cx @ x) + float(e.cy @ y) + float(e.ct @ theta)
        elif k == "quad":
            z = np.concatenate((x, y))
            v = 0.5 * float(z @ (e.Q @ z)) + float(e.lin @ z) + e.c0
        elif k == "add":
            v = 0.0
            for ch in e.children:
                v += rec(ch)
        elif k == "scale":
            v = e.lam * rec(e.children[0])
        elif k == "max":
            v = max(rec(ch) for ch in e.children)
        elif k == "min":
            v = min(rec(ch) for ch in e.children)
        elif k == "abs":
            v = abs(rec(e.children[0]))
        elif k == "dc":
            v = rec(e.children[0]) - rec(e.children[1])
        else:  # pragma: no cover
            raise CodiffspError("PARSE", f"unknown node kind {k!r}")
        memo[key] = v
        return v

    return rec(expr)


def evaluate_batch(expr: Expr, X, Y, theta) -> np.ndarray:
    """Vectorized evaluation: X is (N, d), Y is (N, m), theta a single (q,) vector.

    Returns values with shape (N,).  Used by grid oracles and scans.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    theta = np.asarray(theta, dtype=np.float64).ravel()
    n = max(X.shape[0], Y.shape[0])
    if X.shape[0] == 1 and n > 1:
        X = np.broadcast_to(X, (n, X.shape[1]))
    if Y.shape[0] == 1 and n > 1:
        Y = np.broadcast_to(Y, (n, Y.shape[1]))
    memo: dict[int, np.ndarray] = {}

    def rec(e: Expr) -> np.ndarray:
        key = id(e)
        got = memo.get(key)
        if got is not None:
            return got
        k = e.kind
        if k == "constant":
            v = np.full(n, e.value)
        elif k == "affine":
            v = e.c0 + X @ e.cx + Y @ e.cy + float(e.ct @ theta)
        elif k == "quad":
            Z = np.hstack((X, Y))
            v = 0.5 * np.einsum("ij,ij->i", Z @ e.Q, Z) + Z @ e.lin + e.c0
        elif k == "add":
            v = rec(e.children[0]).copy()
            for ch in e.children[1:]:
                v += rec(ch)
        elif k == "scale":
            v = e.lam * rec(e.children[0])
        elif k == "max":
            v = rec(e.children[0])
            for ch in e.children[1:]:
                v = np.maximum(v, rec(ch))
        elif k == "min":
            v = rec(e.children[0])
            for ch in e.children[1:]:
                v = np.minimum(v, rec(ch))
        elif k == "abs":
            v = np.abs(rec(e.children[0]))
        elif k == "dc":
            v = rec(e.children[0]) - rec(e.children[1])
        else:  # pragma: no cover
            raise CodiffspError("PARSE", f"unknown node kind {k!r}")
        memo[key] = v
        return v

    return np.asarray(rec(expr), dtype=np.float64)


# ---------------------------------------------------------------------------
# structural predicates


def _memo_pred(expr: Expr, fn) -> bool:
    memo: dict[int, bool] = {}

    def rec(e: Expr) -> bool:
        key = id(e)
        got = memo.get(key)
        if got is None:
            got = fn(e, rec)
            memo[key] = got
        return got

    return rec(expr)


def is_affine_struct(expr: Expr) -> bool:
    """True when the DAG is affine by construction (no curvature, no kinks)."""

    def fn(e: Expr, rec) -> bool:
        if e.kind in ("constant", "affine"):
            return True
        if e.kind == "add":
            return all(rec(ch) for ch in e.children)
        if e.kind == "scale":
            return rec(e.children[0])
        return False

    return _memo_pred(expr, fn)


def is_convex_struct(expr: Expr) -> bool:
    """Structural convexity: affine atoms, psd quadratics, max of convex,
    nonnegative scales of convex, and sums of convex.  Sound, not complete."""

    def fn(e: Expr, rec) -> bool:
        if e.kind in ("constant", "affine"):
            return True
        if e.kind == "quad":
            return e.psd
        if e.kind == "add":
            return all(rec(ch) for ch in e.children)
        if e.kind == "scale":
            if e.lam >= 0.0:
                return rec(e.children[0])
            return is_affine_struct(e.children[0])
        if e.kind == "max":
            return all(rec(ch) for ch in e.children)
        if e.kind == "abs":
            return is_affine_struct(e.children[0])
        return False

    return _memo_pred(expr, fn)


def is_smooth_struct(expr: Expr) -> bool:
    """True when no max/min/abs/dc node appears on any path."""

    def fn(e: Expr, rec) -> bool:
        if e.kind in ("max", "min", "abs", "dc"):
            return False
        return all(rec(ch) for ch in e.children)

    return _memo_pred(expr, fn)


def dc_parts(expr: Expr) -> tuple[Expr, Expr]:
    """Split into (plus, minus) with expr = plus - minus, both structurally convex.

    Handles explicit dc nodes, structurally convex DAGs (minus = 0), and
    sums/scales of such.  Raises NOT_DC otherwise.
    """
    if is_convex_struct(expr):
        return expr, constant(0.0)
    if expr.kind == "dc":
        return expr.children[0], expr.children[1]
    if expr.kind == "add":
        parts = [dc_parts(ch) for ch in expr.children]
        return add(*(p for p, _ in parts)), add(*(mn for _, mn in parts))
    if expr.kind == "scale":
        p, mn = dc_parts(expr.children[0])
        if expr.lam >= 0.0:
            return scale(expr.lam, p), scale(expr.lam, mn)
        return scale(-expr.lam, mn), scale(-expr.lam, p)
    raise NotDC(f"no structural DC form for node kind {expr.kind!r}")


# ---------------------------------------------------------------------------
# JSON serialization (schema shared with problem files)


def to_json(expr: Expr, dims: Dims) -> dict:
    """Serialize to the file schema.  Constants become zero-coefficient affines."""
    d, m, q = dims
    e = expr
    k = e.kind
    if k == "constant":
        return {
            "kind": "affine",
            "c0": e.value,
            "cx": [0.0] * d,
            "cy": [0.0] * m,
            "ct": [0.0] * q,
        }
    if k == "affine":
        return {
            "kind": "affine",
            "c0": e.c0,
            "cx": e.cx.tolist(),
            "cy": e.cy.tolist(),
            "ct": e.ct.tolist(),
        }
    if k == "quad":
        return {
            "kind": "quad",
            "Q": e.Q.tolist(),
            "lin": e.lin.tolist(),
            "c0": e.c0,
            "psd": bool(e.psd),
        }
    if k in ("add", "max", "min"):
        return {"kind": k, "children": [to_json(ch, dims) for ch in e.children]}
    if k == "scale":
        return {"kind": "scale", "lambda": e.lam, "child": to_json(e.children[0], dims)}
    if k == "abs":
        return {"kind": "abs", "child": to_json(e.children[0], dims)}
    if k == "dc":
        return {
            "kind": "dc",
            "plus": to_json(e.children[0], dims),
            "minus": to_json(e.children[1], dims),
        }
    raise CodiffspError("PARSE", f"unknown node kind {k!r}")  # pragma: no cover


def _req(obj: dict, key: str, where: str):
    if key not in obj:
        raise ValidationError("PARSE", f"missing {key!r} in {where} node")
    return obj[key]


def from_json(obj, dims: Dims) -> Expr:
    """Parse and validate one expression node tree against declared dimensions."""
    if not isinstance(obj, dict):
        raise ValidationError("PARSE", f"expression node must be an object, got {type(obj).__name__}")
    kind = _req(obj, "kind", "expression")
    if kind == "affine":
        return affine(
            dims,
            c0=float(_req(obj, "c0", kind)),
            cx=_req(obj, "cx", kind),
            cy=_req(obj, "cy", kind),
            ct=_req(obj, "ct", kind),
        )
    if kind == "quad":
        return quad(
            dims,
            _req(obj, "Q", kind),
            lin=_req(obj, "lin", kind),
            c0=float(_req(obj, "c0", kind)),
            psd=bool(_req(obj, "psd", kind)),
        )
    if kind == "add":
        return add(*(from_json(ch, dims) for ch in _req(obj, "children", kind)))
    if kind == "scale":
        return scale(float(_req(obj, "lambda", kind)), from_json(_req(obj, "child", kind), dims))
    if kind == "max":
        return maximum(*(from_json(ch, dims) for ch in _req(obj, "children", kind)))
    if kind == "min":
        return minimum(*(from_json(ch, dims) for ch in _req(obj, "children", kind)))
    if kind == "abs":
        return absolute(from_json(_req(obj, "child", kind), dims))
    if kind == "dc":
        return dc(from_json(_req(obj, "plus", kind), dims), from_json(_req(obj, "minus", kind), dims))
    raise ValidationError("PARSE", f"unknown expression kind {kind!r}")
