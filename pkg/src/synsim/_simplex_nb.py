"""Numba-compiled twin of the simplex kernel.

Same source as `_simplex_np.simplex_core`, passed through @njit so repeated
solves inside branch-and-bound stay cheap. First call pays a one-time compile
(cached on disk afterwards). Import fails cleanly when numba is unavailable;
`lp.py` then falls back to the pure-numpy kernel.
"""

from numba import njit

from synsim import _simplex_np

simplex_core = njit(cache=True)(_simplex_np.simplex_core)
