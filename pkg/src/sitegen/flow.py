"""Conditional flow matching over ligand coordinates (and residue types in
design mode): training steps, Euler inference, and trajectory analysis."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .invnet import cross_entropy_loss, torsion_loss
from .model import mask_rows
from .prior import harmonic_prior_sample

DEFAULT_SIGMA = 0.5
DEFAULT_STEPS = 20
SELF_CONDITION_RATE = 0.5

DEFAULT_WEIGHTS = {
    "l_cfm": 1.0,
    "l_refine": 1.0,
    "l_type": 0.2,  # discrete loss weight
    "l_torsion": 0.5,
}


class TrainStepError(RuntimeError):
    pass


class IntegrationError(RuntimeError):
    pass


@dataclass
class LossReport:
    l_cfm: float
    l_refine: float
    l_type: float
    l_torsion: float
    weights: dict

    @property
    def total(self):
        return sum(self.weights[k] * getattr(self, k) for k in self.weights)

    def row(self):
        return {
            "l_cfm": self.l_cfm,
            "l_refine": self.l_refine,
            "l_type": self.l_type,
            "l_torsion": self.l_torsion,
            "total": self.total,
        }


@dataclass
class FlowState:
    t: float
    x_t: np.ndarray
    x1_estimate: np.ndarray
    residue_probs: np.ndarray | None = None


def interpolate(x0, x1, t, sigma, rng):
    """Gaussian around the straight-line point: N(t*x1 + (1-t)*x0, sigma^2)."""
    mu = t * x1 + (1.0 - t) * x0
    if sigma > 0:
        mu = mu + rng.normal(scale=sigma, size=mu.shape)
    return mu


def _coordinate_mse(pred, target):
    diff = ad.sub(pred, ad.Node(target))
    return ad.mean(ad.mul(diff, diff))


def sample_losses(sample, model, sigma, rng, train=True):
    """Draw one conditional-path point for a sample and evaluate all heads.

    Half of the steps use a fresh prior draw as the self-conditioning input;
    the other half use a detached first model pass.
    """
    x1 = sample.ligand.coords
    center = sample.pocket.center
    t = float(rng.uniform())
    x0 = harmonic_prior_sample(sample.ligand, center, rng)
    x = interpolate(x0, x1, t, sigma, rng)
    x_sc = harmonic_prior_sample(sample.ligand, center, rng)
    a_sc = mask_rows(len(sample.pocket))

    if rng.uniform() > SELF_CONDITION_RATE:
        first = model.forward(sample, x, x_sc, a_sc, t, train=train)
        x_sc = first.prediction.detach().value
        if first.logits is not None:
            probs = first.probabilities().detach().value
            a_sc = np.concatenate([probs, np.zeros((len(probs), 1))], axis=1)

    out = model.forward(sample, x, x_sc, a_sc, t, train=train)

    losses = {
        "l_cfm": _coordinate_mse(out.prediction, x1),
        "l_type": ad.Node(0.0),
        "l_torsion": ad.Node(0.0),
    }
    inter = [_coordinate_mse(p, x1) for p in out.layer_preds[:-1]]
    losses["l_refine"] = sum(inter[1:], inter[0]) if inter else ad.Node(0.0)
    if out.logits is not None:
        losses["l_type"] = cross_entropy_loss(
            out.logits, sample.pocket.types(), np.ones(len(sample.pocket), dtype=bool)
        )
        if sample.torsions is not None:
            mask = np.isfinite(sample.torsions)
            losses["l_torsion"] = torsion_loss(out.torsions, sample.torsions, mask)
    return losses


def train_step(batch, model, rng, sigma=DEFAULT_SIGMA, weights=None,
               lr=0.001, betas=(0.9, 0.999), eps=1e-8):
    """One optimizer step over a batch; returns the batch-mean LossReport."""
    weights = dict(DEFAULT_WEIGHTS if weights is None else weights)
    sums = {k: None for k in DEFAULT_WEIGHTS}
    for sample in batch:
        losses = sample_losses(sample, model, sigma, rng, train=True)
        if not np.isfinite(float(sum(l.value for l in losses.values()))):
            raise TrainStepError(f"non-finite loss for sample {sample.sample_id!r}")
        for k, l in losses.items():
            sums[k] = l if sums[k] is None else ad.add(sums[k], l)

    scale = 1.0 / len(batch)
    means = {k: ad.mul(v, scale) for k, v in sums.items()}
    total = None
    for k, w in weights.items():
        term = ad.mul(means[k], w)
        total = term if total is None else ad.add(total, term)
    ad.backward(total)
    ad.adam_update(model.parameters(), lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)
    return LossReport(
        l_cfm=float(means["l_cfm"].value),
        l_refine=float(means["l_refine"].value),
        l_type=float(means["l_type"].value),
        l_torsion=float(means["l_torsion"].value),
        weights=weights,
    )


def euler_integrate(model, sample, steps=DEFAULT_STEPS, rng=None,
                    forward=None):
    """Integrate the learned field from the prior with an Euler scheme.

    Runs `steps` model evaluations and `steps - 1` position updates and
    returns (trajectory, final coordinate estimate, final residue
    probabilities or None).  `forward` can replace the model pass (used by
    the oracle-exactness checks).
    """
    if steps < 1:
        raise ValueError(f"steps={steps} must be >= 1")
    rng = np.random.default_rng() if rng is None else rng
    center = sample.pocket.center
    x_t = harmonic_prior_sample(sample.ligand, center, rng)
    x_sc = harmonic_prior_sample(sample.ligand, center, rng)
    a_sc = mask_rows(len(sample.pocket))
    if forward is None:
        def forward(sample, x_t, x_sc, a_sc, t):
            out = model.forward(sample, x_t, x_sc, a_sc, t, train=False)
            probs = out.probabilities()
            return out.prediction.value, None if probs is None else probs.value

    dt = 1.0 / steps
    t = 0.0
    trajectory = []
    probs = None
    x1_est = x_t
    for step in range(steps):
        x1_est, probs = forward(sample, x_t, x_sc, a_sc, t)
        if not np.isfinite(x1_est).all():
            raise IntegrationError(f"non-finite coordinates at step {step}")
        trajectory.append(
            FlowState(t=t, x_t=x_t.copy(), x1_estimate=x1_est.copy(),
                      residue_probs=None if probs is None else probs.copy())
        )
        if step < steps - 1:
            x_t = x_t + dt * (x1_est - x_t) / (1.0 - t)
            t += dt
        x_sc = x1_est
        if probs is not None:
            a_sc = np.concatenate([probs, np.zeros((len(probs), 1))], axis=1)
    return trajectory, x1_est, probs


def entropy_trace(trajectory):
    """Per step: RMSD of the x1 estimate to the final estimate, and mean
    Shannon entropy (nats) of the residue probability rows."""
    final = trajectory[-1].x1_estimate
    rows = []
    for state in trajectory:
        rmsd = float(
            np.sqrt(np.mean(np.sum((state.x1_estimate - final) ** 2, axis=-1)))
        )
        entropy = float("nan")
        if state.residue_probs is not None:
            p = np.clip(state.residue_probs, 1e-12, 1.0)
            entropy = float(-(p * np.log(p)).sum(axis=-1).mean())
        rows.append((state.t, rmsd, entropy))
    return rows
