"""2D vectors, velocity-space half-plane constraints, and the small linear
programs used for collision-free velocity selection.

Conventions: a half-plane permits a velocity v iff (v - point) . normal >= 0,
with `normal` a unit vector pointing into the permitted side. Boundary
directions are the clockwise perpendicular of the normal, so the permitted
side is always to the left of the direction of travel along the boundary.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

# Below this, two boundary directions are treated as parallel.
PARALLEL_EPS = 1e-12


class DegenerateGeometryError(ValueError):
    """Raised when a construction has no well-defined geometry (e.g. coincident centers)."""


@dataclass(frozen=True)
class Vec2:
    """Immutable 2D vector (meters, or m/s in velocity space)."""

    x: float
    y: float

    def __post_init__(self):
        object.__setattr__(self, "x", float(self.x))
        object.__setattr__(self, "y", float(self.y))
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError(f"non-finite vector components ({self.x}, {self.y})")

    def __add__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x + other.x, self.y + other.y)

    def __sub__(self, other: "Vec2") -> "Vec2":
        return Vec2(self.x - other.x, self.y - other.y)

    def __mul__(self, s: float) -> "Vec2":
        return Vec2(self.x * s, self.y * s)

    __rmul__ = __mul__

    def __neg__(self) -> "Vec2":
        return Vec2(-self.x, -self.y)

    def dot(self, other: "Vec2") -> float:
        return self.x * other.x + self.y * other.y

    def cross(self, other: "Vec2") -> float:
        return self.x * other.y - self.y * other.x

    def norm_sq(self) -> float:
        return self.x * self.x + self.y * self.y

    def norm(self) -> float:
        return math.sqrt(self.x * self.x + self.y * self.y)

    def normalized(self) -> "Vec2":
        n = self.norm()
        if n == 0.0:
            raise DegenerateGeometryError("cannot normalize the zero vector")
        return Vec2(self.x / n, self.y / n)

    def left_perp(self) -> "Vec2":
        return Vec2(-self.y, self.x)

    def right_perp(self) -> "Vec2":
        return Vec2(self.y, -self.x)

    def as_array(self) -> np.ndarray:
        return np.array([self.x, self.y])


@dataclass(frozen=True)
class HalfPlane:
    """One velocity-space constraint: permitted(v) iff (v - point) . normal >= 0."""

    point: Vec2
    normal: Vec2

    def __post_init__(self):
        n = self.normal.norm()
        if abs(n - 1.0) > 1e-9:
            raise ValueError(f"half-plane normal must be unit length, got |n|={n}")

    def permits(self, v: Vec2) -> bool:
        return (v - self.point).dot(self.normal) >= 0.0

    def violation(self, v: Vec2) -> float:
        """Signed violation: positive when v is on the forbidden side."""
        return (self.point - v).dot(self.normal)


def _clip_to_disc(v: Vec2, max_speed: float) -> Vec2:
    if v.norm_sq() > max_speed * max_speed:
        scale = max_speed / v.norm()
        return Vec2(v.x * scale, v.y * scale)
    return v


def _lp1(
    constraints: list[HalfPlane],
    index: int,
    v_pref: Vec2,
    max_speed: float,
    opt_direction: Vec2 | None = None,
) -> Vec2 | None:
    """Optimize on the boundary line of constraints[index], subject to the disc
    and all constraints before `index`.

    Minimizes distance to v_pref, or maximizes movement along opt_direction
    when given. Returns None when the restricted problem is infeasible.
    """
    hp = constraints[index]
    p, n = hp.point, hp.normal
    d = n.right_perp()  # boundary direction; permitted side is to its left

    # Chord of the boundary line inside the speed disc.
    dot_pd = p.dot(d)
    disc = dot_pd * dot_pd - p.norm_sq() + max_speed * max_speed
    if disc < 0.0:
        return None
    sq = math.sqrt(disc)
    t_left = -dot_pd - sq
    t_right = -dot_pd + sq

    for j in range(index):
        hp_j = constraints[j]
        denom = d.dot(hp_j.normal)
        num = (hp_j.point - p).dot(hp_j.normal)  # need t * denom >= num
        if abs(denom) <= PARALLEL_EPS:
            if num > 0.0:
                return None
            continue
        t = num / denom
        if denom > 0.0:
            t_left = max(t_left, t)
        else:
            t_right = min(t_right, t)
        if t_left > t_right:
            return None

    if opt_direction is not None:
        t = t_right if opt_direction.dot(d) > 0.0 else t_left
    else:
        t = (v_pref - p).dot(d)
        t = min(max(t, t_left), t_right)
    return Vec2(p.x + t * d.x, p.y + t * d.y)


def solve_lp2(
    constraints: list[HalfPlane], v_pref: Vec2, max_speed: float
) -> tuple[Vec2, int | None]:
    """Pick the velocity closest to v_pref inside all half-planes and the disc
    ||v|| <= max_speed.

    Constraints are added incrementally in index order; when the running
    optimum violates a new constraint the optimum is recomputed on that
    constraint's boundary. Returns (velocity, None) on success, or the
    partial result valid through the last satisfiable prefix together with
    the index of the first unsatisfiable constraint.
    """
    if not (math.isfinite(max_speed) and max_speed > 0.0):
        raise ValueError(f"max_speed must be finite and positive, got {max_speed}")

    result = _clip_to_disc(v_pref, max_speed)
    for i, hp in enumerate(constraints):
        if (result - hp.point).dot(hp.normal) < 0.0:
            new_result = _lp1(constraints, i, v_pref, max_speed)
            if new_result is None:
                return result, i
            result = new_result
    return result, None


def _lp2_direction(
    constraints: list[HalfPlane], opt_direction: Vec2, max_speed: float
) -> tuple[Vec2, int | None]:
    """solve_lp2 variant maximizing v . opt_direction (opt_direction unit)."""
    result = opt_direction * max_speed
    for i, hp in enumerate(constraints):
        if (result - hp.point).dot(hp.normal) < 0.0:
            new_result = _lp1(constraints, i, result, max_speed, opt_direction=opt_direction)
            if new_result is None:
                return result, i
            result = new_result
    return result, None


def solve_lp3(
    constraints: list[HalfPlane], fail_index: int, current: Vec2, max_speed: float
) -> Vec2:
    """Least-bad velocity when the half-plane intersection is empty.

    Minimizes the maximum signed violation over constraints[0..fail_index]
    subject to ||v|| <= max_speed, by optimizing along the failed constraint's
    permitted direction subject to the pairwise equal-violation boundaries
    with every earlier constraint. Constraints after fail_index are ignored.
    """
    if not (0 <= fail_index < len(constraints)):
        raise ValueError(f"fail_index {fail_index} out of range for {len(constraints)} constraints")
    if not (math.isfinite(max_speed) and max_speed > 0.0):
        raise ValueError(f"max_speed must be finite and positive, got {max_speed}")

    hp_f = constraints[fail_index]
    d_f = hp_f.normal.right_perp()

    projected: list[HalfPlane] = []
    for j in range(fail_index):
        hp_j = constraints[j]
        d_j = hp_j.normal.right_perp()
        denom = d_f.cross(d_j)
        if abs(denom) <= PARALLEL_EPS:
            if hp_f.normal.dot(hp_j.normal) > 0.0:
                continue  # same facing: violations differ by a constant
            pt = (hp_f.point + hp_j.point) * 0.5
        else:
            t = d_j.cross(hp_f.point - hp_j.point) / denom
            pt = Vec2(hp_f.point.x + t * d_f.x, hp_f.point.y + t * d_f.y)
        # Boundary of "violates j no more than f": direction is the bisector.
        bisector = (d_j - d_f).normalized()
        projected.append(HalfPlane(pt, bisector.left_perp()))

    result, fail2 = _lp2_direction(projected, hp_f.normal, max_speed)
    # fail2 can only be set through floating-point degeneracy; keep `current` then.
    return result if fail2 is None else current


def max_violation(constraints: list[HalfPlane], v: Vec2, upto: int | None = None) -> float:
    """Maximum signed violation of v over constraints[0..upto] (inclusive)."""
    last = len(constraints) - 1 if upto is None else upto
    return max(c.violation(v) for c in constraints[: last + 1])


# ---------------------------------------------------------------------------
# 2x2 covariance helpers
# ---------------------------------------------------------------------------


def as_mat2(m) -> np.ndarray:
    out = np.asarray(m, dtype=float)
    if out.shape != (2, 2):
        raise ValueError(f"expected a 2x2 matrix, got shape {out.shape}")
    return out


def require_covariance(m: np.ndarray, tol: float = 1e-9) -> np.ndarray:
    """Validate symmetry (within tol) and positive semi-definiteness."""
    m = as_mat2(m)
    if not np.all(np.isfinite(m)):
        raise ValueError("covariance has non-finite entries")
    if abs(m[0, 1] - m[1, 0]) > tol:
        raise ValueError(f"covariance not symmetric: {m[0, 1]} vs {m[1, 0]}")
    eigs = np.linalg.eigvalsh(0.5 * (m + m.T))
    if eigs.min() < -tol:
        raise ValueError(f"covariance not PSD, min eigenvalue {eigs.min()}")
    return m


def psd_clip(m: np.ndarray) -> np.ndarray:
    """Project a symmetric matrix to the PSD cone by clamping eigenvalues at 0."""
    sym = 0.5 * (m + m.T)
    vals, vecs = np.linalg.eigh(sym)
    vals = np.maximum(vals, 0.0)
    return (vecs * vals) @ vecs.T
