"""Convergence diagnostics: rank-normalized split R-hat and effective sample size.

Both functions take an array shaped ``(n_chains, n_draws)`` and return
``None`` when the statistic is undefined (every draw identical).
"""

from __future__ import annotations

import numpy as np
from scipy import stats
from scipy.fft import irfft, next_fast_len, rfft

from ..errors import InputError


def _as_chains(chains, min_chains=2, min_draws=4) -> np.ndarray:
    try:
        arr = np.asarray(chains, dtype=float)
    except ValueError:
        raise InputError("chains must have equal lengths") from None
    if arr.ndim != 2:
        raise InputError(f"expected (n_chains, n_draws) array, got shape {arr.shape}")
    if arr.shape[0] < min_chains or arr.shape[1] < min_draws:
        raise InputError(f"need >= {min_chains} chains of >= {min_draws} draws, got {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise InputError("chains contain non-finite values")
    return arr


def _split(arr: np.ndarray) -> np.ndarray:
    half = arr.shape[1] // 2
    # odd lengths drop the middle draw
    return np.vstack([arr[:, :half], arr[:, arr.shape[1] - half:]])


def _is_constant(arr: np.ndarray) -> bool:
    return bool(np.all(arr == arr.flat[0]))


def rank_normalize(arr: np.ndarray) -> np.ndarray:
    """Pooled fractional ranks mapped to normal scores (Blom offsets)."""
    ranks = stats.rankdata(arr, method="average").reshape(arr.shape)
    return stats.norm.ppf((ranks - 0.375) / (arr.size + 0.25))


def _rhat_classic(arr: np.ndarray) -> float:
    m, n = arr.shape
    means = arr.mean(axis=1)
    B = n * means.var(ddof=1)
    W = arr.var(axis=1, ddof=1).mean()
    var_plus = (n - 1) / n * W + B / n
    return float(np.sqrt(var_plus / W))


def split_rhat(chains, folded: bool = False):
    """Rank-normalized split R-hat.

    With ``folded=True`` returns the maximum of the bulk statistic and the one
    computed on absolute deviations from the median, which is sensitive to
    differences in scale between chains.
    """
    arr = _as_chains(chains)
    if _is_constant(arr):
        return None
    bulk = _rhat_classic(rank_normalize(_split(arr)))
    if not folded:
        return bulk
    dev = np.abs(arr - np.median(arr))
    tail = _rhat_classic(rank_normalize(_split(dev))) if not _is_constant(dev) else bulk
    return max(bulk, tail)


def _autocov(x: np.ndarray) -> np.ndarray:
    """Biased autocovariance of each row via FFT."""
    n = x.shape[-1]
    centered = x - x.mean(axis=-1, keepdims=True)
    size = next_fast_len(2 * n)
    f = rfft(centered, n=size, axis=-1)
    acov = irfft(f * np.conj(f), n=size, axis=-1)[..., :n]
    return acov / n


def _ess_raw(arr: np.ndarray) -> float:
    """Multi-chain ESS with Geyer's initial monotone sequence."""
    m, n = arr.shape
    acov = _autocov(arr)
    chain_var = acov[:, 0] * n / (n - 1.0)
    mean_var = chain_var.mean()
    var_plus = mean_var * (n - 1.0) / n
    if m > 1:
        var_plus += arr.mean(axis=1).var(ddof=1)
    if var_plus <= 0:
        return float("nan")
    rho = 1.0 - (mean_var - acov.mean(axis=0)) / var_plus
    rho[0] = 1.0
    # pair sums P_k = rho_{2k} + rho_{2k+1}; keep the initial positive run
    n_pairs = n // 2
    pairs = rho[: 2 * n_pairs].reshape(n_pairs, 2).sum(axis=1)
    neg = np.flatnonzero(pairs < 0)
    k_max = neg[0] if neg.size else n_pairs
    pairs = pairs[:k_max]
    # initial monotone sequence
    pairs = np.minimum.accumulate(pairs)
    tau = -1.0 + 2.0 * pairs.sum()
    tau = max(tau, 1.0 / np.log10(m * n))
    return float(m * n / tau)


def effective_sample_size(chains, rank_normalized: bool = True):
    """Autocorrelation-based ESS of the pooled draws.

    The default works on rank-normalized split chains ("bulk" ESS). Pass
    ``rank_normalized=False`` for the ESS of the mean of the raw draws, which is
    what Monte-Carlo standard errors of posterior means use.
    """
    arr = _as_chains(chains, min_chains=1)
    if _is_constant(arr):
        return None
    work = _split(arr)
    if rank_normalized:
        work = rank_normalize(work)
    return _ess_raw(work)


def mcse_mean(chains) -> float | None:
    arr = _as_chains(chains, min_chains=1)
    ess = effective_sample_size(arr, rank_normalized=False)
    if ess is None:
        return None
    return float(arr.std(ddof=1) / np.sqrt(ess))


def summarize(draws: np.ndarray, names) -> list:
    """Per-parameter rows: name, mean, sd, 2.5%, 97.5%, R-hat, ESS.

    ``draws`` has shape ``(n_chains, n_draws, n_params)``.
    """
    rows = []
    for k, name in enumerate(names):
        x = draws[:, :, k]
        flat = x.ravel()
        q = np.quantile(flat, [0.025, 0.975], method="midpoint")
        multi = x.shape[0] >= 2 and x.shape[1] >= 4
        rows.append({
            "parameter": name,
            "mean": float(flat.mean()),
            "sd": float(flat.std(ddof=1)) if flat.size > 1 else 0.0,
            "q025": float(q[0]),
            "q975": float(q[1]),
            "rhat": split_rhat(x) if multi else None,
            "ess": effective_sample_size(x) if x.shape[1] >= 4 else None,
        })
    return rows
