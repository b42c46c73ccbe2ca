"""Hot numeric kernels with numba and pure-numpy implementations.

Each kernel exists twice: a loop version compiled by numba and a vectorized
numpy version. The public names dispatch according to
:data:`fairimprove._accel.USE_NUMBA`; the two variants are also exported
under ``*_numba`` / ``*_numpy`` names so tests and the benchmark can compare
them directly.
"""

import numpy as np

from ._accel import USE_NUMBA, njit

# Cap on elements materialized per chunk by the numpy resampling path.
_CHUNK_ELEMS = 1 << 22


def _resample_sums_loops(values, idx):
    n_draws, size = idx.shape
    n_cols = values.shape[1]
    out = np.zeros((n_draws, n_cols))
    for q in range(n_draws):
        for i in range(size):
            row = idx[q, i]
            for c in range(n_cols):
                out[q, c] += values[row, c]
    return out


def resample_sums_numpy(values, idx):
    """Column sums of ``values`` over each row of resampling indices.

    Parameters
    ----------
    values : ndarray, shape (n, C)
    idx : ndarray of int, shape (Q, L)

    Returns
    -------
    ndarray, shape (Q, C)
        ``out[q, c] = sum_i values[idx[q, i], c]``.
    """
    values = np.ascontiguousarray(values, dtype=np.float64)
    n_draws, size = idx.shape
    out = np.empty((n_draws, values.shape[1]))
    step = max(1, _CHUNK_ELEMS // max(1, size * values.shape[1]))
    for start in range(0, n_draws, step):
        stop = min(n_draws, start + step)
        out[start:stop] = values[idx[start:stop]].sum(axis=1)
    return out


resample_sums_numba = njit(_resample_sums_loops)


def _soft_threshold(z, lam):
    if z > lam:
        return z - lam
    if z < -lam:
        return z + lam
    return 0.0


def _lasso_cd_loops(gram, xty, lam, beta, tol, max_sweeps):
    p = gram.shape[0]
    b = beta.copy()
    grad = xty.copy()
    for j in range(p):
        for k in range(p):
            grad[j] -= gram[j, k] * b[k]
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(p):
            old = b[j]
            rho = grad[j] + gram[j, j] * old
            if rho > lam:
                new = (rho - lam) / gram[j, j]
            elif rho < -lam:
                new = (rho + lam) / gram[j, j]
            else:
                new = 0.0
            diff = new - old
            if diff != 0.0:
                for k in range(p):
                    grad[k] -= gram[k, j] * diff
                b[j] = new
                if abs(diff) > max_delta:
                    max_delta = abs(diff)
        if max_delta < tol:
            return b, sweep + 1
    return b, -1


def lasso_cd_numpy(gram, xty, lam, beta, tol, max_sweeps):
    """Cyclic coordinate descent for the standardized lasso.

    Minimizes ``0.5 * b' G b - c' b + lam * |b|_1`` where ``G`` is the Gram
    matrix of standardized features divided by n and ``c`` the scaled
    cross-product with the centered response. Returns ``(b, sweeps)``;
    ``sweeps`` is -1 when ``max_sweeps`` was exhausted.
    """
    b = np.array(beta, dtype=np.float64)
    grad = xty - gram @ b
    for sweep in range(max_sweeps):
        max_delta = 0.0
        for j in range(b.shape[0]):
            old = b[j]
            new = _soft_threshold(grad[j] + gram[j, j] * old, lam) / gram[j, j]
            diff = new - old
            if diff != 0.0:
                grad -= gram[:, j] * diff
                b[j] = new
                max_delta = max(max_delta, abs(diff))
        if max_delta < tol:
            return b, sweep + 1
    return b, -1


lasso_cd_numba = njit(_lasso_cd_loops)

if USE_NUMBA:
    resample_sums = resample_sums_numba
    lasso_cd = lasso_cd_numba
else:
    resample_sums = resample_sums_numpy
    lasso_cd = lasso_cd_numpy
