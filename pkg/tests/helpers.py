"""Shared oracles for the test suite, chiefly central finite differences."""

import numpy as np

from hiformer import tensor as T


def rel_err(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    denom = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return np.linalg.norm(a - b) / denom


def fd_check(make_loss, params, eps=1e-6, rtol=1e-4, atol=1e-9, sample=None, rng=None):
    """Compare tape gradients against central finite differences.

    ``make_loss`` rebuilds the scalar loss from the current contents of the
    parameter tensors; the finite-difference side perturbs ``p.data`` in
    place and never touches the tape, so the two routes stay independent.
    ``sample`` limits the probe to that many randomly chosen entries per
    parameter (all entries when None).  Entries agree when the relative
    error is below ``rtol`` or the absolute gap is below ``atol`` (for an
    O(1) loss the difference quotient itself carries ~1e-10 of rounding
    noise, so tiny gradients cannot meet a purely relative bar).
    """
    for p in params:
        p.zero_grad()
    with T.Tape() as tape:
        loss = make_loss()
        tape.backward(loss)
    for p in params:
        assert p.grad is not None, "parameter received no gradient"
        analytic = p.grad.reshape(-1)
        flat = p.data.reshape(-1)
        if sample is None or sample >= flat.size:
            idxs = range(flat.size)
        else:
            idxs = rng.choice(flat.size, size=sample, replace=False)
        for i in idxs:
            orig = flat[i]
            flat[i] = orig + eps
            f_plus = make_loss().item()
            flat[i] = orig - eps
            f_minus = make_loss().item()
            flat[i] = orig
            numeric = (f_plus - f_minus) / (2.0 * eps)
            if abs(numeric - analytic[i]) < atol:
                continue
            denom = max(abs(numeric), abs(analytic[i]), 1e-8)
            err = abs(numeric - analytic[i]) / denom
            assert err < rtol, f"gradient mismatch at entry {i}: fd={numeric} tape={analytic[i]} rel={err}"
