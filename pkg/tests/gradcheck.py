"""Central-difference gradient estimation for testing backward passes."""
import numpy as np


def fd_gradient(build_loss, arr, h=1e-5):
    """Estimate d build_loss / d arr by central differences, entry by entry.

    ``build_loss`` is a zero-argument callable returning a float; it must
    read ``arr`` afresh on every call. ``arr`` is perturbed in place and
    restored.
    """
    flat = arr.reshape(-1)
    grad = np.zeros_like(flat)
    for i in range(flat.size):
        keep = flat[i]
        flat[i] = keep + h
        f_plus = build_loss()
        flat[i] = keep - h
        f_minus = build_loss()
        flat[i] = keep
        grad[i] = (f_plus - f_minus) / (2.0 * h)
    return grad.reshape(arr.shape)


def fd_entry(build_loss, arr, index, h=1e-5):
    """Central-difference estimate of one partial derivative.

    ``index`` flat-indexes ``arr``; the entry is perturbed in place and
    restored, so ``build_loss`` must read ``arr`` afresh on every call.
    """
    flat = arr.reshape(-1)
    keep = flat[index]
    flat[index] = keep + h
    f_plus = build_loss()
    flat[index] = keep - h
    f_minus = build_loss()
    flat[index] = keep
    return (f_plus - f_minus) / (2.0 * h)


def max_rel_err(a, b, floor=1e-6):
    """Worst-case relative disagreement between two arrays.

    Entries where both values are below ``floor`` in magnitude count as
    agreeing exactly, so near-zero gradients do not blow up the ratio.
    """
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(b)), floor)
    rel = np.abs(a - b) / denom
    rel[(np.abs(a) < floor) & (np.abs(b) < floor)] = 0.0
    return float(rel.max()) if rel.size else 0.0
