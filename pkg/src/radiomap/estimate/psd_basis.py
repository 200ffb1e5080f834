"""Non-negative projection of a sampled PSD onto raised-cosine basis functions."""
import numpy as np

from ..field import from_db


def raised_cosine(freqs, center, width, rolloff=0.5):
    """Raised-cosine spectral shape with unit passband; ``width`` is the symbol rate."""
    f = np.abs(np.asarray(freqs, dtype=float) - center)
    t = 1.0 / width
    flat = (1.0 - rolloff) / (2.0 * t)
    edge = (1.0 + rolloff) / (2.0 * t)
    out = np.zeros_like(f)
    out[f <= flat] = 1.0
    taper = (f > flat) & (f <= edge)
    if rolloff > 0:
        out[taper] = 0.5 * (1.0 + np.cos(np.pi * t / rolloff * (f[taper] - flat)))
    return out


def raised_cosine_basis(freqs, centers, width, rolloff=0.5):
    """Matrix of shape (n_freqs, n_bases), one raised-cosine column per center."""
    return np.column_stack([raised_cosine(freqs, c, width, rolloff) for c in centers])


def psd_basis_project(psd, bases, linear=False, tol=1e-10, max_iter=10_000):
    """Non-negative coefficients c minimizing ||bases @ c - psd||^2 (linear domain).

    ``psd`` is in dB unless ``linear`` is set.  Projected gradient descent
    with step 1/L (L the largest eigenvalue of the Gram matrix), stopped when
    the relative objective change falls below ``tol`` or after ``max_iter``
    iterations.
    """
    b = np.asarray(bases, dtype=float)
    p = np.asarray(psd, dtype=float)
    p = p if linear else from_db(p)
    scale = float(np.max(np.abs(p))) if p.size else 0.0
    if scale == 0.0:
        return np.zeros(b.shape[1])
    p = p / scale
    gram = b.T @ b
    bp = b.T @ p
    lip = float(np.linalg.eigvalsh(gram)[-1])
    c = np.maximum(np.linalg.lstsq(b, p, rcond=None)[0], 0.0)

    def objective(c):
        r = b @ c - p
        return 0.5 * float(r @ r)

    f = objective(c)
    for _ in range(max_iter):
        c = np.maximum(c - (gram @ c - bp) / lip, 0.0)
        f_new = objective(c)
        if abs(f - f_new) <= tol * max(f, 1e-300):
            f = f_new
            break
        f = f_new
    return c * scale
