"""Dense two-phase simplex kernel, pure-numpy reference implementation.

The numba twin in `_simplex_nb` jit-compiles this exact function, so the body
sticks to the numpy subset numba supports (loops, slices, preallocated
arrays). `lp.py` picks the backend; set SYNSIM_PURE_NUMPY=1 to force this one.
"""

import numpy as np

PIVOT_TOL = 1e-9
FEAS_TOL = 1e-7


def simplex_core(A, b, c, maxiter):
    """Minimize c.x subject to A x = b, x >= 0, with b >= 0 elementwise.

    Classic tableau method with Bland's smallest-index rule for both the
    entering column and ratio-test ties, so no cycle can repeat a basis.
    Returns (status, x, objective, iterations): status 0 optimal, 1 infeasible,
    2 unbounded, 3 iteration limit. x always has length A.shape[1]; it is the
    basic feasible solution (a vertex) when status == 0.
    """
    m, n = A.shape
    width = n + m + 1
    T = np.zeros((m + 1, width))
    T[:m, :n] = A
    for i in range(m):
        T[i, n + i] = 1.0
        T[i, width - 1] = b[i]
    basis = np.arange(n, n + m)

    # phase 1 cost row: minimize the sum of the artificial variables
    for j in range(width):
        s = 0.0
        for i in range(m):
            s += T[i, j]
        T[m, j] = -s
    for i in range(m):
        T[m, n + i] = 0.0

    iters = 0
    for phase in range(2):
        ncols = n + m if phase == 0 else n
        while True:
            enter = -1
            for j in range(ncols):
                if T[m, j] < -PIVOT_TOL:
                    enter = j
                    break
            if enter < 0:
                break
            leave = -1
            best_ratio = np.inf
            for i in range(m):
                a = T[i, enter]
                if a > PIVOT_TOL:
                    ratio = T[i, width - 1] / a
                    if ratio < best_ratio - 1e-12:
                        best_ratio = ratio
                        leave = i
                    elif ratio <= best_ratio + 1e-12 and leave >= 0:
                        if basis[i] < basis[leave]:
                            leave = i
            if leave < 0:
                return 2, np.zeros(n), 0.0, iters
            piv = T[leave, enter]
            T[leave, :] = T[leave, :] / piv
            for i in range(m + 1):
                if i != leave:
                    f = T[i, enter]
                    if f != 0.0:
                        T[i, :] = T[i, :] - f * T[leave, :]
            basis[leave] = enter
            iters += 1
            if iters > maxiter:
                return 3, np.zeros(n), 0.0, iters

        if phase == 0:
            if -T[m, width - 1] > FEAS_TOL:
                return 1, np.zeros(n), 0.0, iters
            # pivot leftover artificials out; a row with no real-column pivot
            # is redundant and its artificial stays basic at zero
            for i in range(m):
                if basis[i] >= n:
                    piv_col = -1
                    for j in range(n):
                        if abs(T[i, j]) > PIVOT_TOL:
                            piv_col = j
                            break
                    if piv_col >= 0:
                        piv = T[i, piv_col]
                        T[i, :] = T[i, :] / piv
                        for k in range(m + 1):
                            if k != i:
                                f = T[k, piv_col]
                                if f != 0.0:
                                    T[k, :] = T[k, :] - f * T[i, :]
                        basis[i] = piv_col
            # rebuild the cost row for the real objective
            for j in range(width):
                T[m, j] = 0.0
            for j in range(n):
                T[m, j] = c[j]
            for i in range(m):
                bi = basis[i]
                if bi < n:
                    cb = c[bi]
                    if cb != 0.0:
                        T[m, :] = T[m, :] - cb * T[i, :]

    x = np.zeros(n)
    for i in range(m):
        if basis[i] < n:
            x[basis[i]] = T[i, width - 1]
    obj = 0.0
    for j in range(n):
        obj += c[j] * x[j]
    return 0, x, obj, iters
