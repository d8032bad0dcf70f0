"""Matrix-free conjugate gradient for symmetric positive-definite systems.

The caller provides the operator as a closure over ndarray unknowns of any
shape; symmetry and positive definiteness on the discrete space are the
caller's contract.  Starting from zero makes the quadratic energy
1/2 <Ax, x> - <b, x> monotonically nonincreasing along the iterates, which
several competitor-bound checks in the test suite rely on.
"""

from __future__ import annotations

from typing import Callable, NamedTuple

import numpy as np

from .errors import SolverFailure


class CGResult(NamedTuple):
    x: np.ndarray
    iterations: int
    residual: float


def solve_spd(
    apply_operator: Callable[[np.ndarray], np.ndarray],
    rhs: np.ndarray,
    tol: float = 1e-10,
    max_iter: int | None = None,
    x0: np.ndarray | None = None,
) -> CGResult:
    """Solve A x = rhs with ||A x - rhs||_2 <= tol * ||rhs||_2.

    Raises SolverFailure (carrying the final residual) if the tolerance is
    not reached within max_iter iterations (default 10 * unknown count).
    """
    if tol <= 0.0:
        raise ValueError(f"tol must be positive, got {tol}")
    b = np.asarray(rhs, dtype=float)
    if max_iter is None:
        max_iter = 10 * b.size
    norm_b = float(np.sqrt(np.vdot(b, b).real))
    if norm_b == 0.0:
        return CGResult(np.zeros_like(b), 0, 0.0)

    if x0 is None:
        x = np.zeros_like(b)
        r = b.copy()
    else:
        x = np.array(x0, dtype=float)
        r = b - np.asarray(apply_operator(x), dtype=float)
    res = float(np.sqrt(np.vdot(r, r).real))
    if res <= tol * norm_b:
        return CGResult(x, 0, res)

    p = r.copy()
    rs = float(np.vdot(r, r).real)
    for k in range(1, max_iter + 1):
        ap = np.asarray(apply_operator(p), dtype=float)
        pap = float(np.vdot(p, ap).real)
        if pap <= 0.0:
            raise SolverFailure(
                f"operator is not positive definite along a search direction (p.Ap={pap})",
                residual=np.sqrt(rs),
                iterations=k,
            )
        alpha = rs / pap
        x = x + alpha * p
        r = r - alpha * ap
        rs_new = float(np.vdot(r, r).real)
        res = float(np.sqrt(rs_new))
        if res <= tol * norm_b:
            return CGResult(x, k, res)
        p = r + (rs_new / rs) * p
        rs = rs_new
    raise SolverFailure(
        f"conjugate gradient did not converge in {max_iter} iterations "
        f"(residual {res:.3e}, target {tol * norm_b:.3e})",
        residual=res,
        iterations=max_iter,
    )
