"""B-spline bases and first-order random-walk penalties."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

TIME_KNOT_SPACING = 91
FATALITY_INTERIOR_KNOTS = 7


@dataclass(frozen=True)
class BasisSpec:
    degree: int = 3
    interior_knots: tuple[float, ...] = ()
    domain: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        lo, hi = self.domain
        if not hi > lo:
            raise ValueError(f"empty basis domain {self.domain}")
        if self.degree < 0:
            raise ValueError("degree must be nonnegative")
        knots = np.asarray(self.interior_knots, dtype=float)
        if knots.size and (np.any(np.diff(knots) <= 0) or knots[0] <= lo or knots[-1] >= hi):
            raise ValueError("interior knots must be strictly increasing and inside the domain")
        object.__setattr__(self, "interior_knots", tuple(float(k) for k in knots))
        object.__setattr__(self, "domain", (float(lo), float(hi)))

    @property
    def n_basis(self) -> int:
        return len(self.interior_knots) + self.degree + 1

    @property
    def knots(self) -> np.ndarray:
        """Full clamped knot vector."""
        lo, hi = self.domain
        return np.r_[[lo] * (self.degree + 1), self.interior_knots, [hi] * (self.degree + 1)]

    def to_dict(self) -> dict:
        return {
            "degree": self.degree,
            "interior_knots": list(self.interior_knots),
            "domain": list(self.domain),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "BasisSpec":
        return cls(int(d["degree"]), tuple(d["interior_knots"]), tuple(d["domain"]))


@dataclass(frozen=True)
class DesignMatrix:
    values: np.ndarray = field(repr=False)
    spec: BasisSpec

    def __post_init__(self):
        self.values.setflags(write=False)

    @property
    def shape(self):
        return self.values.shape

    def __matmul__(self, coef):
        return self.values @ coef


def build_basis(spec: BasisSpec, points) -> DesignMatrix:
    """Evaluate the B-spline basis at ``points`` by the Cox-de Boor recursion.

    The domain is closed: at the upper end the last basis function is 1.
    """
    x = np.atleast_1d(np.asarray(points, dtype=float))
    lo, hi = spec.domain
    bad = (x < lo) | (x > hi) | np.isnan(x)
    if np.any(bad):
        raise ValueError(f"point {x[bad][0]} outside basis domain [{lo}, {hi}]")
    t = spec.knots
    k = spec.degree
    n_spans = len(t) - 1
    # degree 0: indicator of the half-open span; hi belongs to the last nonempty span
    span = np.searchsorted(t, x, side="right") - 1
    span = np.minimum(span, len(t) - k - 2)
    B = np.zeros((x.size, n_spans))
    B[np.arange(x.size), span] = 1.0
    for d in range(1, k + 1):
        nxt = np.zeros((x.size, n_spans - d))
        for i in range(n_spans - d):
            left_den = t[i + d] - t[i]
            right_den = t[i + d + 1] - t[i + 1]
            if left_den > 0:
                nxt[:, i] += (x - t[i]) / left_den * B[:, i]
            if right_den > 0:
                nxt[:, i] += (t[i + d + 1] - x) / right_den * B[:, i + 1]
        B = nxt
    return DesignMatrix(B, spec)


def rw1_penalty(n_basis: int) -> np.ndarray:
    """First-order random-walk penalty ``D'D`` with ``D`` the difference operator."""
    if n_basis < 2:
        raise ValueError("a random-walk penalty needs at least two coefficients")
    D = np.diff(np.eye(n_basis), axis=0)
    return D.T @ D


def penalty_for(n_basis: int) -> np.ndarray:
    """RW1 penalty, or a zero matrix for a single (intercept-only) column."""
    return rw1_penalty(n_basis) if n_basis >= 2 else np.zeros((1, 1))


def equally_spaced_spec(lo: float, hi: float, n_interior: int, degree: int = 3) -> BasisSpec:
    knots = np.linspace(lo, hi, n_interior + 2)[1:-1]
    return BasisSpec(degree, tuple(knots), (lo, hi))


def default_time_spec(n_days: int, spacing: int = TIME_KNOT_SPACING, degree: int = 3) -> BasisSpec:
    """Cubic basis over day indices with roughly one interior knot per quarter."""
    if n_days < 30:
        raise ValueError("the default time basis needs at least 30 days")
    hi = float(n_days - 1)
    return equally_spaced_spec(0.0, hi, math.floor(hi / spacing), degree)


def default_fatality_spec(log_fatalities, n_interior: int = FATALITY_INTERIOR_KNOTS, degree: int = 3) -> BasisSpec:
    """Cubic basis over the observed range of ``ln(fatalities + 1)``."""
    v = np.asarray(log_fatalities, dtype=float)
    lo = float(v.min()) if v.size else 0.0
    hi = float(v.max()) if v.size else 1.0
    if hi <= lo:
        hi = lo + 1.0
    return equally_spaced_spec(lo, hi, n_interior, degree)


def constant_spec(lo: float = 0.0, hi: float = 1.0) -> BasisSpec:
    """Single indicator column: the intercept-only covariate."""
    return BasisSpec(0, (), (lo, hi))
