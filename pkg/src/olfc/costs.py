"""Per-bus disutility functions and the projection operators used by the controller.

Costs are strictly convex piecewise quadratics, continuous but possibly
nonsmooth at breakpoints. The subdifferential at a breakpoint is the closed
interval between the one-sided derivatives; everywhere else it is the
ordinary derivative. Breakpoint membership is decided by exact floating
point comparison: kinks are hit on a measure-zero set and the selection
rule deals with exact hits.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError

SELECTION_RULES = ("minnorm", "left", "right", "midpoint")


@dataclass(frozen=True)
class SubgradientInterval:
    """Closed interval [lo, hi] of subgradients at a point."""

    lo: float
    hi: float

    def __post_init__(self) -> None:
        if not self.lo <= self.hi:
            raise ValidationError(f"subgradient interval requires lo <= hi, got [{self.lo}, {self.hi}]")

    def contains(self, g: float, tol: float = 0.0) -> bool:
        return self.lo - tol <= g <= self.hi + tol


@dataclass(frozen=True)
class Box:
    """Componentwise box constraints, lower <= upper."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self) -> None:
        lower = np.atleast_1d(np.asarray(self.lower, dtype=float))
        upper = np.atleast_1d(np.asarray(self.upper, dtype=float))
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)
        if lower.shape != upper.shape:
            raise ValidationError("box bounds must have matching shapes")
        if np.any(lower > upper):
            raise ValidationError("box requires lower <= upper componentwise")

    @property
    def dim(self) -> int:
        return self.lower.size


@dataclass(frozen=True)
class PiecewiseCost:
    """Strictly convex piecewise quadratic cost on the real line.

    Piece k is a_k x^2 + b_k x + c_k, active on [breakpoints[k-1], breakpoints[k])
    with the obvious unbounded first and last intervals. Validity means: all
    a_k > 0, value continuity and nondecreasing one-sided derivatives at every
    breakpoint.
    """

    a: np.ndarray
    b: np.ndarray
    c: np.ndarray
    breakpoints: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __post_init__(self) -> None:
        a = np.atleast_1d(np.asarray(self.a, dtype=float))
        b = np.atleast_1d(np.asarray(self.b, dtype=float))
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        bp = np.atleast_1d(np.asarray(self.breakpoints, dtype=float))
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "breakpoints", bp)
        if not (a.shape == b.shape == c.shape):
            raise ValidationError("cost coefficient arrays must have equal length")
        if bp.size != a.size - 1:
            raise ValidationError("cost needs exactly one breakpoint between consecutive pieces")
        if not np.all(np.isfinite(a)) or not np.all(np.isfinite(b)) or not np.all(np.isfinite(c)):
            raise ValidationError("cost coefficients must be finite")
        if np.any(a <= 0):
            raise ValidationError("cost pieces must be strictly convex (a > 0)")
        if bp.size and (not np.all(np.isfinite(bp)) or np.any(np.diff(bp) <= 0)):
            raise ValidationError("cost breakpoints must be finite and strictly increasing")
        for k, x in enumerate(bp):
            left = a[k] * x * x + b[k] * x + c[k]
            right = a[k + 1] * x * x + b[k + 1] * x + c[k + 1]
            if abs(left - right) > 1e-9 * max(1.0, abs(left)):
                raise ValidationError(f"cost pieces must agree in value at breakpoint {x} (got {left} vs {right})")
            dleft = 2.0 * a[k] * x + b[k]
            dright = 2.0 * a[k + 1] * x + b[k + 1]
            if dleft > dright + 1e-12 * max(1.0, abs(dleft)):
                raise ValidationError(f"cost derivative must be nondecreasing at breakpoint {x} (convexity)")

    @classmethod
    def from_pieces(cls, pieces: list[dict]) -> "PiecewiseCost":
        """Build from an ordered list of {x_min, x_max, a, b, c} dictionaries.

        x_min of the first piece and x_max of the last must be unbounded
        (null in files); interior interval endpoints must chain exactly.
        """
        if not pieces:
            raise ValidationError("cost needs at least one piece")
        allowed = {"x_min", "x_max", "a", "b", "c"}
        for p in pieces:
            unknown = set(p) - allowed
            if unknown:
                raise ValidationError(f"unknown cost piece fields: {sorted(unknown)}")
            missing = allowed - set(p)
            if missing:
                raise ValidationError(f"cost piece missing fields: {sorted(missing)}")

        def _bound(v: object, which: str) -> float:
            if v is None:
                return -np.inf if which == "lo" else np.inf
            return float(v)

        lo = [_bound(p["x_min"], "lo") for p in pieces]
        hi = [_bound(p["x_max"], "hi") for p in pieces]
        if lo[0] != -np.inf:
            raise ValidationError("first cost piece must have x_min = null (covers the real line)")
        if hi[-1] != np.inf:
            raise ValidationError("last cost piece must have x_max = null (covers the real line)")
        for k in range(len(pieces) - 1):
            if hi[k] != lo[k + 1]:
                raise ValidationError(f"cost pieces must tile the line: piece {k} ends at {hi[k]}, piece {k + 1} starts at {lo[k + 1]}")
        return cls(
            a=np.array([p["a"] for p in pieces], dtype=float),
            b=np.array([p["b"] for p in pieces], dtype=float),
            c=np.array([p["c"] for p in pieces], dtype=float),
            breakpoints=np.array(hi[:-1], dtype=float),
        )

    def to_pieces(self) -> list[dict]:
        """Inverse of from_pieces, for serialization."""
        edges = [None, *self.breakpoints.tolist(), None]
        return [
            {"x_min": edges[k], "x_max": edges[k + 1], "a": float(self.a[k]), "b": float(self.b[k]), "c": float(self.c[k])}
            for k in range(self.a.size)
        ]

    def _piece(self, x: float) -> int:
        return int(np.searchsorted(self.breakpoints, x, side="right"))

    def value(self, x: float) -> float:
        k = self._piece(x)
        return float(self.a[k] * x * x + self.b[k] * x + self.c[k])

    def clarke(self, x: float) -> SubgradientInterval:
        bp = self.breakpoints
        i = int(np.searchsorted(bp, x, side="left"))
        if i < bp.size and x == bp[i]:
            lo = 2.0 * self.a[i] * x + self.b[i]
            hi = 2.0 * self.a[i + 1] * x + self.b[i + 1]
            return SubgradientInterval(lo, hi)
        g = 2.0 * self.a[i] * x + self.b[i]
        return SubgradientInterval(g, g)


def evaluate(cost: PiecewiseCost, x: float) -> float:
    """Value of the active piece at x (the cost is continuous)."""
    return cost.value(x)


def clarke(cost: PiecewiseCost, x: float) -> SubgradientInterval:
    """Clarke subdifferential [f'-(x), f'+(x)]; a singleton off breakpoints."""
    return cost.clarke(x)


def select_subgradient(interval: SubgradientInterval, rule: str = "minnorm") -> float:
    """Deterministic element of the interval under the configured rule.

    minnorm picks 0 when available, else the endpoint nearest 0; left/right
    pick the one-sided derivatives; midpoint averages them.
    """
    if rule == "minnorm":
        if interval.lo <= 0.0 <= interval.hi:
            return 0.0
        return interval.lo if interval.lo > 0.0 else interval.hi
    if rule == "left":
        return interval.lo
    if rule == "right":
        return interval.hi
    if rule == "midpoint":
        return 0.5 * (interval.lo + interval.hi)
    raise ValidationError(f"unknown selection rule {rule!r}, expected one of {SELECTION_RULES}")


class CostBatch:
    """Vectorized evaluation of one cost per bus, padded to a common piece count.

    Semantically identical to the scalar PiecewiseCost methods; exists so the
    simulator's inner loop can evaluate all buses with array operations. The
    equivalence with the scalar path is covered by tests.
    """

    def __init__(self, costs: list[PiecewiseCost]):
        self.costs = list(costs)
        n = len(costs)
        K = max(c.a.size for c in costs)
        self.a = np.empty((n, K))
        self.b = np.empty((n, K))
        self.c = np.empty((n, K))
        self.bp = np.full((n, max(K - 1, 1)), np.inf)
        for j, cost in enumerate(costs):
            k = cost.a.size
            self.a[j, :k] = cost.a
            self.b[j, :k] = cost.b
            self.c[j, :k] = cost.c
            self.a[j, k:] = cost.a[-1]
            self.b[j, k:] = cost.b[-1]
            self.c[j, k:] = cost.c[-1]
            self.bp[j, : k - 1] = cost.breakpoints
        self._rows = np.arange(n)

    def value(self, x: np.ndarray) -> np.ndarray:
        """Per-bus cost values f_j(x_j)."""
        idx = (self.bp <= x[:, None]).sum(axis=1)
        a = self.a[self._rows, idx]
        b = self.b[self._rows, idx]
        c = self.c[self._rows, idx]
        return a * x * x + b * x + c

    def bounds(self, x: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """One-sided derivatives (f'-(x_j), f'+(x_j)) per bus."""
        lo_idx = (self.bp < x[:, None]).sum(axis=1)
        hi_idx = (self.bp <= x[:, None]).sum(axis=1)
        g_lo = 2.0 * self.a[self._rows, lo_idx] * x + self.b[self._rows, lo_idx]
        g_hi = 2.0 * self.a[self._rows, hi_idx] * x + self.b[self._rows, hi_idx]
        return g_lo, g_hi

    def select(self, x: np.ndarray, rule: str = "minnorm") -> np.ndarray:
        """Vectorized select_subgradient over the per-bus Clarke intervals."""
        g_lo, g_hi = self.bounds(x)
        if rule == "minnorm":
            return np.where(g_lo > 0.0, g_lo, np.where(g_hi < 0.0, g_hi, 0.0))
        if rule == "left":
            return g_lo
        if rule == "right":
            return g_hi
        if rule == "midpoint":
            return 0.5 * (g_lo + g_hi)
        raise ValidationError(f"unknown selection rule {rule!r}, expected one of {SELECTION_RULES}")


def normalize_selection_rule(rule: str) -> str:
    """Accept the CLI spelling 'mid' as an alias for 'midpoint'."""
    rule = rule.lower()
    if rule == "mid":
        return "midpoint"
    if rule not in SELECTION_RULES:
        raise ValidationError(f"unknown selection rule {rule!r}, expected one of {SELECTION_RULES} or 'mid'")
    return rule


def project_box(x: np.ndarray, box: Box) -> np.ndarray:
    """Euclidean projection onto the box (componentwise clamp)."""
    x = np.asarray(x, dtype=float)
    if x.shape != box.lower.shape:
        raise ValidationError(f"projection dimension mismatch: x has shape {x.shape}, box has shape {box.lower.shape}")
    return np.clip(x, box.lower, box.upper)


def project_nonneg(x: np.ndarray) -> np.ndarray:
    """Euclidean projection onto the nonnegative orthant."""
    return np.maximum(np.asarray(x, dtype=float), 0.0)
