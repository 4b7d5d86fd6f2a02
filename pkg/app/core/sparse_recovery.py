"""
Projected sparse recovery: y = Phi m, constrained l1 minimization, support
thresholding, least-squares debiasing and the low-rank residual.

The l1 program min ||x||_1 s.t. ||y - Phi x||_2 <= xi is solved on the LASSO
path: an outer secant search over the multiplier lambda drives the residual
norm to xi, and each inner LASSO is an accelerated proximal-gradient solve.
Phi is an orthogonal projector, so the gradient Lipschitz constant is exactly
1 and the step is fixed. Inner solves are periodically polished into an exact
sign pattern; once a pattern is certified, the residual is quadratic in lambda
on it and the outer root is taken in closed form.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from numpy.typing import NDArray
from scipy import linalg as sla

from app.core.errors import ConvergenceError, DimensionError, SingularSystemError
from app.core.linalg import Matrix, ProjectionOperator, Vector, ls_restricted
from app.core.schemas import SparseRecoveryParams

logger = logging.getLogger(__name__)

RESIDUAL_TOL = 1e-6
MAX_OUTER = 60
POLISH_EVERY = 25
KKT_SLACK = 1e-9
FLOOR_TOL = 1e-10


@dataclass
class RecoveredFrame:
    x_cs: Vector
    support: NDArray[np.int_]
    x_hat: Vector
    l_hat: Vector


class _Pattern(NamedTuple):
    """LASSO solution family x_S(lam) = u - lam * v on a fixed support and sign vector."""

    support: NDArray[np.int_]
    signs: Vector
    u: Vector
    v: Vector

    def x(self, n: int, lam: float) -> Vector:
        out = np.zeros(n)
        out[self.support] = self.u - lam * self.v
        return out

    def holds(self, phi: ProjectionOperator, c: Vector, lam: float) -> bool:
        xs = self.u - lam * self.v
        if np.any(np.sign(xs) != self.signs):
            return False
        corr = c - phi.apply(self.x(phi.n, lam))
        corr[self.support] = 0.0
        slack = lam * (1 + KKT_SLACK) + 1e-12 * max(1.0, float(np.max(np.abs(c))))
        return bool(np.max(np.abs(corr), initial=0.0) <= slack)

    def root(self, phi: ProjectionOperator, c: Vector, target: float) -> float | None:
        """lam > 0 where ||c - Phi x_S(lam)||_2 = target, if the pattern has one."""
        if self.support.size == 0:
            return None
        cols = phi.columns(self.support)
        r_u = c - cols @ self.u
        w = cols @ self.v
        a = float(w @ w)
        if a <= 0.0:
            return None
        b = float(r_u @ w)
        c0 = float(r_u @ r_u)
        disc = b * b - a * (c0 - target * target)
        if disc < 0:
            return None
        lam = (-b + np.sqrt(disc)) / a
        return float(lam) if lam > 0 else None


def _soft(v: Vector, lam: float) -> Vector:
    return np.sign(v) * np.maximum(np.abs(v) - lam, 0.0)


def _polish(phi: ProjectionOperator, c: Vector, lam: float, x: Vector) -> _Pattern | None:
    """Active-set refinement of an approximate LASSO solution into an exact KKT point."""
    n = phi.n
    scale = np.max(np.abs(x), initial=0.0)
    support = np.flatnonzero(np.abs(x) > 1e-8 * scale) if scale > 0 else np.zeros(0, dtype=int)
    signs = np.sign(x[support])

    for _ in range(2 * n + 2):
        if support.size == 0:
            i = int(np.argmax(np.abs(c)))
            if abs(c[i]) <= lam * (1 + KKT_SLACK):
                return _Pattern(support, signs, np.zeros(0), np.zeros(0))
            support = np.array([i])
            signs = np.array([np.sign(c[i])])
            continue
        try:
            factor = sla.cho_factor(phi.gram(support))
        except np.linalg.LinAlgError:
            return None
        if np.min(np.abs(np.diag(factor[0]))) < 1e-7:
            return None
        u = sla.cho_solve(factor, c[support])
        v = sla.cho_solve(factor, signs)
        xs = u - lam * v
        flipped = np.sign(xs) != signs
        if np.any(flipped):
            support = support[~flipped]
            signs = signs[~flipped]
            continue
        pattern = _Pattern(support, signs, u, v)
        corr = c - phi.apply(pattern.x(n, lam))
        corr[support] = 0.0
        i = int(np.argmax(np.abs(corr)))
        if abs(corr[i]) <= lam * (1 + KKT_SLACK) + 1e-12 * max(1.0, float(np.max(np.abs(c)))):
            return pattern
        support = np.append(support, i)
        signs = np.append(signs, np.sign(corr[i]))
    return None


def _lasso(
    phi: ProjectionOperator,
    c: Vector,
    lam: float,
    x0: Vector,
    tol: float,
    max_iter: int,
) -> tuple[Vector, _Pattern | None]:
    """FISTA on 1/2 ||y - Phi x||^2 + lam ||x||_1 with step 1 (c = Phi y)."""
    x = x0.copy()
    z = x.copy()
    tk = 1.0
    obj_prev = np.inf
    for it in range(1, max_iter + 1):
        x_next = _soft(z - (phi.apply(z) - c), lam)
        t_next = 0.5 * (1.0 + np.sqrt(1.0 + 4.0 * tk * tk))
        z = x_next + ((tk - 1.0) / t_next) * (x_next - x)
        x, tk = x_next, t_next
        if it == 5 or it % POLISH_EVERY == 0:
            pattern = _polish(phi, c, lam, x)
            if pattern is not None:
                return pattern.x(phi.n, lam), pattern
            obj = 0.5 * float(x @ phi.apply(x)) - float(c @ x) + lam * float(np.sum(np.abs(x)))
            if abs(obj_prev - obj) <= tol * max(1.0, abs(obj)):
                break
            obj_prev = obj
    pattern = _polish(phi, c, lam, x)
    if pattern is not None:
        return pattern.x(phi.n, lam), pattern
    return x, None


def _duality_gap(phi: ProjectionOperator, y: Vector, x: Vector, xi: float) -> float:
    residual = y - phi.apply(x)
    r = phi.apply(residual)
    scale = np.max(np.abs(r), initial=0.0)
    if scale == 0.0:
        return float(np.sum(np.abs(x)))
    mu = residual / scale
    dual = float(y @ mu) - xi * float(np.linalg.norm(mu))
    return float(np.sum(np.abs(x)) - dual)


def bpdn_solve(
    phi: ProjectionOperator,
    y: Vector,
    xi: float,
    tol: float = 1e-9,
    max_iter: int = 5000,
) -> Vector:
    """
    Solve min ||x||_1 subject to ||y - Phi x||_2 <= xi.

    Args:
        phi: Orthogonal projector operator
        y: Measurement vector
        xi: Noise-ball radius (0 gives the minimum-l1 exact fit)
        tol: Inner relative objective tolerance
        max_iter: Inner iteration cap per multiplier value

    Returns:
        The minimizer x (zero vector when ||y||_2 <= xi)
    """
    y = np.asarray(y, dtype=np.float64)
    if y.shape != (phi.n,):
        raise DimensionError(f"y has shape {y.shape}, expected ({phi.n},)")
    n = phi.n
    if float(np.linalg.norm(y)) <= xi:
        return np.zeros(n)

    c = phi.apply(y)
    floor = float(np.linalg.norm(y - c))
    if floor <= FLOOR_TOL * max(1.0, float(np.linalg.norm(y))):
        # y = Phi m up to round-off
        floor = 0.0
    if xi < floor * (1 - 1e-12):
        raise ConvergenceError(np.inf, f"infeasible: xi = {xi:.3e} below residual floor {floor:.3e}")
    target = float(np.sqrt(max(xi * xi - floor * floor, 0.0)))
    c_norm = float(np.linalg.norm(c))
    lam_hi = float(np.max(np.abs(c)))
    x = np.zeros(n)

    if target <= RESIDUAL_TOL * max(1.0, xi):
        # minimum-l1 exact fit: follow the path down until a pattern certifies at lam -> 0
        lam = lam_hi
        for _ in range(MAX_OUTER):
            lam *= 0.5
            x, pattern = _lasso(phi, c, lam, x, tol, max_iter)
            if pattern is not None and pattern.support.size and pattern.holds(phi, c, 0.0):
                return pattern.x(n, 0.0)
            if lam < 1e-12 * lam_hi:
                break
        residual = float(np.linalg.norm(y - phi.apply(x)))
        if residual <= xi * (1 + RESIDUAL_TOL) + RESIDUAL_TOL:
            return x
        raise ConvergenceError(_duality_gap(phi, y, x, xi))

    lo, res_lo = 0.0, 0.0
    hi, res_hi = lam_hi, c_norm
    lam = min(target, 0.9 * lam_hi)
    for _ in range(MAX_OUTER):
        x, pattern = _lasso(phi, c, lam, x, tol, max_iter)
        res = float(np.linalg.norm(c - phi.apply(x)))
        full = float(np.hypot(floor, res))
        if abs(full - xi) <= RESIDUAL_TOL * max(1.0, xi):
            return x
        if res < target:
            lo, res_lo = lam, res
        else:
            hi, res_hi = lam, res

        candidate = pattern.root(phi, c, target) if pattern is not None else None
        if candidate is not None and lo < candidate < hi and pattern.holds(phi, c, candidate):
            return pattern.x(n, candidate)

        if candidate is not None and lo < candidate < hi:
            lam = candidate
        else:
            lam = lo + (target - res_lo) * (hi - lo) / (res_hi - res_lo)
            if not lo < lam < hi:
                lam = 0.5 * (lo + hi)

    gap = _duality_gap(phi, y, x, xi)
    raise ConvergenceError(gap)


def threshold_support(x_cs: Vector, omega: float) -> NDArray[np.int_]:
    """Indices with |x_i| strictly above omega, ascending."""
    return np.flatnonzero(np.abs(x_cs) > omega)


def debias_ls(phi: ProjectionOperator, y: Vector, support: NDArray[np.int_]) -> Vector:
    """LS fit of y on the support-restricted columns of Phi, zero elsewhere."""
    x = np.zeros(phi.n)
    if len(support) == 0:
        return x
    x[support] = ls_restricted(phi.columns(support), y)
    return x


def _tag(exc: Exception, t: int | None) -> Exception:
    if t is not None:
        exc.args = (f"frame {t}: {exc}",)
    return exc


def recover_frame(
    Phat: Matrix,
    m: Vector,
    params: SparseRecoveryParams,
    t: int | None = None,
) -> RecoveredFrame:
    """Project, solve the l1 program, threshold, debias and subtract."""
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (Phat.shape[0],):
        raise DimensionError(f"frame has shape {m.shape}, basis dimension is {Phat.shape[0]}")
    phi = ProjectionOperator(Phat)
    y = phi.apply(m)
    try:
        x_cs = bpdn_solve(phi, y, params.xi, params.solver_tol, params.solver_max_iter)
        support = threshold_support(x_cs, params.omega)
        x_hat = debias_ls(phi, y, support)
    except (ConvergenceError, SingularSystemError) as exc:
        _tag(exc, t)
        raise
    return RecoveredFrame(x_cs=x_cs, support=support, x_hat=x_hat, l_hat=m - x_hat)
