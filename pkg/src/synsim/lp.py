"""Linear-program front end over the dense simplex kernel.

Converts min/max problems with inequality and equality rows into the kernel's
standard form (A x = b, x >= 0, b >= 0). Variables are non-negative; that is
the only variable bound the schedulers need.

Backend selection happens once at import: the numba-compiled kernel unless
SYNSIM_PURE_NUMPY is set to a non-empty value other than "0" or numba cannot
be imported, in which case the pure-numpy twin runs. Both produce bit-identical
pivoting sequences; `benchmarks/bench_kernels.py` compares their speed.
"""

import os
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

OPTIMAL = 0
INFEASIBLE = 1
UNBOUNDED = 2

_DEFAULT_MAXITER = 200_000


def _load_backend():
    flag = os.environ.get("SYNSIM_PURE_NUMPY", "").strip()
    if flag not in ("", "0"):
        from synsim import _simplex_np

        return _simplex_np.simplex_core, "numpy"
    try:
        from synsim import _simplex_nb

        return _simplex_nb.simplex_core, "numba"
    except ImportError:
        from synsim import _simplex_np

        return _simplex_np.simplex_core, "numpy"


_CORE, _BACKEND = _load_backend()


def backend_name() -> str:
    """Which kernel is live: "numba" or "numpy"."""
    return _BACKEND


def warmup() -> None:
    """Trigger the one-time jit compile so later solves run at full speed."""
    solve_lp(np.array([1.0]), A_ub=np.array([[1.0]]), b_ub=np.array([2.0]))


@dataclass(frozen=True)
class LPResult:
    status: int  # OPTIMAL / INFEASIBLE / UNBOUNDED
    x: np.ndarray
    objective: float
    iterations: int


def solve_lp(
    c: Sequence[float],
    A_ub: Optional[np.ndarray] = None,
    b_ub: Optional[Sequence[float]] = None,
    A_eq: Optional[np.ndarray] = None,
    b_eq: Optional[Sequence[float]] = None,
    maximize: bool = False,
    maxiter: int = _DEFAULT_MAXITER,
) -> LPResult:
    """Solve min (or max) c.x subject to A_ub x <= b_ub, A_eq x = b_eq, x >= 0.

    Returns a basic feasible solution (vertex) when status == OPTIMAL. A ">="
    row is expressed as a negated "<=" row; the conversion below flips rows
    with negative right-hand sides so the kernel's b >= 0 precondition holds.
    """
    c = np.asarray(c, dtype=np.float64)
    n = c.size
    ub_rows = 0 if A_ub is None else np.asarray(A_ub, dtype=np.float64).reshape(-1, n).shape[0]
    eq_rows = 0 if A_eq is None else np.asarray(A_eq, dtype=np.float64).reshape(-1, n).shape[0]
    m = ub_rows + eq_rows

    A = np.zeros((m, n + ub_rows))
    b = np.zeros(m)
    if ub_rows:
        A[:ub_rows, :n] = np.asarray(A_ub, dtype=np.float64).reshape(ub_rows, n)
        A[:ub_rows, n : n + ub_rows] = np.eye(ub_rows)
        b[:ub_rows] = np.asarray(b_ub, dtype=np.float64).reshape(ub_rows)
    if eq_rows:
        A[ub_rows:, :n] = np.asarray(A_eq, dtype=np.float64).reshape(eq_rows, n)
        b[ub_rows:] = np.asarray(b_eq, dtype=np.float64).reshape(eq_rows)

    neg = b < 0.0
    if neg.any():
        A[neg] = -A[neg]
        b[neg] = -b[neg]

    cc = np.concatenate([-c if maximize else c, np.zeros(ub_rows)])
    status, x_full, obj, iters = _CORE(A, b, cc, maxiter)
    if status == 3:
        raise RuntimeError(f"simplex hit the {maxiter}-iteration safety limit")
    objective = -obj if (maximize and status == OPTIMAL) else obj
    return LPResult(int(status), x_full[:n].copy(), float(objective), int(iters))
