"""The expectation functional I(x, y) = sum_s p_s f(x, y_s, theta_s).

Its codifferential over the joint space factors scenario-blockwise: one
CodiffPair per scenario, never the exponential product polytope.  All
reductions run in ascending scenario order so results are bit-reproducible
regardless of how many worker threads evaluate the scenarios.
"""

from __future__ import annotations

import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from .codiff import CodiffPair, codiff, dirderiv, expansion_value, quasidiff
from .errors import DimensionMismatch, NonFinite
from .expr import evaluate
from .model import Point, TwoStageProblem


def _thread_count() -> int:
    raw = os.environ.get("CODIFFSP_THREADS", "0").strip()
    try:
        k = int(raw)
    except ValueError:
        k = 0
    if k < 0:
        k = 0
    if k == 0:  # auto: scenario work is tiny; stay serial unless asked
        return 1
    return k


def _scenario_map(fn, S: int) -> list:
    """Apply fn to every scenario index; results returned in index order."""
    k = _thread_count()
    if k <= 1 or S <= 1:
        return [fn(s) for s in range(S)]
    with ThreadPoolExecutor(max_workers=min(k, S)) as pool:
        return list(pool.map(fn, range(S)))


@dataclass(frozen=True, eq=False)
class BlockCodiff:
    """Scenario-factored codifferential of the expectation integrand."""

    per_scenario: tuple[CodiffPair, ...]
    probs: np.ndarray
    d: int
    m: int

    def __post_init__(self):
        if len(self.per_scenario) != self.probs.shape[0]:
            raise DimensionMismatch("one codifferential pair per scenario required")
        for s, cd in enumerate(self.per_scenario):
            if cd.dim != self.d + self.m:
                raise DimensionMismatch(
                    f"scenario {s} pair has dim {cd.dim}, expected {self.d + self.m}"
                )

    @property
    def S(self) -> int:
        return len(self.per_scenario)


def eval_I(prob: TwoStageProblem, z: Point) -> float:
    """Probability-weighted sum of f over scenarios, ascending index order."""
    prob.check_point(z)
    th = prob.scenarios.params
    vals = _scenario_map(lambda s: evaluate(prob.f, z.x, z.y[s], th[s]), prob.S)
    total = 0.0
    for s, v in enumerate(vals):
        if not math.isfinite(v):
            raise NonFinite(f"integrand not finite in scenario {s}")
        total += float(prob.scenarios.probs[s]) * v
    return total


def block_codiff(prob: TwoStageProblem, z: Point) -> BlockCodiff:
    """codiff of f at (x, y_s, theta_s) for every scenario s."""
    prob.check_point(z)
    th = prob.scenarios.params
    pairs = _scenario_map(lambda s: codiff(prob.f, z.x, z.y[s], th[s]), prob.S)
    return BlockCodiff(
        per_scenario=tuple(pairs), probs=prob.scenarios.probs, d=prob.d, m=prob.m
    )


def _join(dx: np.ndarray, dy_s: np.ndarray) -> np.ndarray:
    return np.concatenate((dx, dy_s))


def I_expansion(bc: BlockCodiff, dx, dy) -> float:
    """First-order expansion of I: sum_s p_s expansion_value(pair_s, (dx, dy_s))."""
    dx = np.asarray(dx, dtype=np.float64).ravel()
    dy = np.asarray(dy, dtype=np.float64).reshape(bc.S, -1)
    if dx.shape[0] != bc.d or dy.shape[1] != bc.m:
        raise DimensionMismatch(
            f"direction blocks ({dx.shape[0]}, {dy.shape[1]}) do not match ({bc.d}, {bc.m})"
        )
    total = 0.0
    for s in range(bc.S):
        total += float(bc.probs[s]) * expansion_value(bc.per_scenario[s], _join(dx, dy[s]))
    return total


def I_dirderiv(prob: TwoStageProblem, z: Point, hx, hy) -> float:
    """Directional derivative of I at z: the weighted sum of per-scenario
    directional derivatives along (hx, hy_s)."""
    bc = block_codiff(prob, z)
    hx = np.asarray(hx, dtype=np.float64).ravel()
    hy = np.asarray(hy, dtype=np.float64).reshape(bc.S, -1)
    if hx.shape[0] != bc.d or hy.shape[1] != bc.m:
        raise DimensionMismatch(
            f"direction blocks ({hx.shape[0]}, {hy.shape[1]}) do not match ({bc.d}, {bc.m})"
        )
    total = 0.0
    for s in range(bc.S):
        qd = quasidiff(bc.per_scenario[s])
        total += float(bc.probs[s]) * dirderiv(qd, _join(hx, hy[s]))
    return total
