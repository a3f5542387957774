"""Pose and sequence quality metrics."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import chem


def rmsd(pred, true):
    """Root-mean-square deviation without alignment; atom order must match."""
    pred = np.asarray(pred, dtype=np.float64)
    true = np.asarray(true, dtype=np.float64)
    if pred.shape != true.shape:
        raise ValueError(f"shape mismatch {pred.shape} vs {true.shape}")
    return float(np.sqrt(np.mean(np.sum((pred - true) ** 2, axis=-1))))


def fraction_below(values, cutoff):
    values = np.asarray(values, dtype=np.float64)
    return float((values < cutoff).mean()) if len(values) else float("nan")


def median(values):
    """Midpoint convention: mean of the two central order statistics."""
    return float(np.median(values)) if len(values) else float("nan")


def rmsd_stats(values):
    values = np.asarray(values, dtype=np.float64)
    return {
        "frac_below_2": fraction_below(values, 2.0),
        "frac_below_5": fraction_below(values, 5.0),
        "median": median(values),
    }


def best_of_k(groups):
    """groups: list of per-complex RMSD lists; keeps the minimum of each."""
    return np.array([min(g) for g in groups if len(g)], dtype=np.float64)


def sequence_recovery(true_types, pred_types, mask=None):
    """Fraction of exact residue-type matches over the masked positions."""
    true_types = np.asarray(true_types, dtype=np.intp)
    pred_types = np.asarray(pred_types, dtype=np.intp)
    if true_types.shape != pred_types.shape:
        raise ValueError(
            f"shape mismatch {true_types.shape} vs {pred_types.shape}"
        )
    if mask is None:
        mask = np.ones(true_types.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    return float((true_types[mask] == pred_types[mask]).mean())


def blosum_score(true_types, pred_types, mask=None):
    """Substitution-matrix similarity normalized by the self-match total,
    sum_i M[t_i, p_i] / sum_i M[t_i, t_i], so a perfect recovery scores 1."""
    true_types = np.asarray(true_types, dtype=np.intp)
    pred_types = np.asarray(pred_types, dtype=np.intp)
    if mask is None:
        mask = np.ones(true_types.shape, dtype=bool)
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return float("nan")
    t = true_types[mask]
    p = pred_types[mask]
    m = chem.BLOSUM62
    return float(m[t, p].sum() / m[t, t].sum())


@dataclass
class EvalRecord:
    sample_id: str
    rmsd: float
    recovery: float = float("nan")
    blosum: float = float("nan")

    def row(self):
        return {
            "sample_id": self.sample_id,
            "rmsd": self.rmsd,
            "recovery": self.recovery,
            "blosum": self.blosum,
        }


def summarize(records, per_complex_rmsds=None):
    """Aggregate table rows; per_complex_rmsds enables the best-of-k line."""
    rmsds = np.array([r.rmsd for r in records], dtype=np.float64)
    out = dict(rmsd_stats(rmsds), n=len(records))
    recov = np.array([r.recovery for r in records], dtype=np.float64)
    blos = np.array([r.blosum for r in records], dtype=np.float64)
    if np.isfinite(recov).any():
        out["recovery"] = float(np.nanmean(recov))
        out["blosum"] = float(np.nanmean(blos))
    if per_complex_rmsds:
        best = best_of_k(per_complex_rmsds)
        out["best_frac_below_2"] = fraction_below(best, 2.0)
        out["best_median"] = median(best)
    return out
