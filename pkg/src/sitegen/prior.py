"""Gaussian prior over ligand coordinates with graph-Laplacian precision.

Each connected component is sampled in its eigenbasis: nonzero modes get
variance 1/eigenvalue per spatial dimension, and the zero mode (the component
center of mass) is pinned to the requested center.
"""

from __future__ import annotations

import numpy as np

ZERO_EIGENVALUE_TOL = 1e-8


def component_eigensystems(ligand):
    """Eigendecomposition of the Laplacian block of every component."""
    lap = ligand.laplacian()
    systems = []
    for cid in range(ligand.components.max() + 1):
        idx = np.nonzero(ligand.components == cid)[0]
        block = lap[np.ix_(idx, idx)]
        evals, evecs = np.linalg.eigh(block)
        n_zero = int((evals < ZERO_EIGENVALUE_TOL).sum())
        if n_zero != 1:
            raise ValueError(
                f"component {cid}: {n_zero} zero eigenvalues for a connected block"
            )
        systems.append((idx, evals, evecs))
    return systems


def harmonic_prior_sample(ligand, center, rng):
    """Draw one coordinate set: bonded atoms land near each other, every
    component's center of mass sits at `center` (plus nothing else)."""
    center = np.asarray(center, dtype=np.float64)
    out = np.empty((len(ligand), 3))
    for idx, evals, evecs in component_eigensystems(ligand):
        coeff = np.zeros((len(idx), 3))
        nonzero = evals >= ZERO_EIGENVALUE_TOL
        lam = np.clip(evals[nonzero], ZERO_EIGENVALUE_TOL, None)
        coeff[nonzero] = rng.normal(size=(int(nonzero.sum()), 3)) / np.sqrt(lam)[:, None]
        pos = evecs @ coeff
        out[idx] = pos - pos.mean(axis=0) + center
    return out


def pairwise_difference_covariance(laplacian):
    """Oracle: Var(x_i - x_j) per spatial dimension from the Laplacian
    pseudoinverse."""
    pinv = np.linalg.pinv(np.asarray(laplacian, dtype=np.float64))
    d = np.diag(pinv)
    return d[:, None] + d[None, :] - 2.0 * pinv
