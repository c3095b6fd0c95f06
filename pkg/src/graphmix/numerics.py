"""Small numerically careful kernels used across the package.

Likelihood work happens in log space throughout; these helpers keep the
max-subtraction discipline in one place. All functions accept -inf
entries (log of an exact zero) and propagate them without warnings.
"""

import numpy as np

# log of the smallest positive normal double, used to floor degenerate rows
LOG_TINY = float(np.log(np.finfo(np.float64).tiny))


def logsumexp(a, axis=-1, keepdims=False):
    """log(sum(exp(a))) with per-slice max subtraction.

    Slices that are entirely -inf stay -inf instead of producing NaN.
    """
    a = np.asarray(a, dtype=np.float64)
    amax = np.max(a, axis=axis, keepdims=True)
    amax_safe = np.where(np.isfinite(amax), amax, 0.0)
    with np.errstate(divide="ignore"):
        out = np.log(np.sum(np.exp(a - amax_safe), axis=axis, keepdims=True))
    out = out + amax_safe
    out = np.where(np.isfinite(amax), out, amax)
    return out if keepdims else np.squeeze(out, axis=axis)


def xlog(a):
    """Elementwise log mapping exact zeros to -inf without warnings."""
    with np.errstate(divide="ignore"):
        return np.log(a)


def softmax(z, axis=-1):
    z = np.asarray(z, dtype=np.float64)
    z = z - np.max(z, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)
