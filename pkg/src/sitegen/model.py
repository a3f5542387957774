"""Full network: refinement stack, plus the invariant design stack when
residue types are being generated."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from . import chem
from .equinet import EquiNetConfig, RefinementStack
from .invnet import InvariantStack, InvNetConfig, residue_probabilities

MODE_DOCK = "harmonicflow"
MODE_DESIGN = "flowsite"


def mask_rows(n_res):
    """Residue self-conditioning input meaning "no estimate yet"."""
    rows = np.zeros((n_res, 21))
    rows[:, chem.MASK_TYPE] = 1.0
    return rows


@dataclass
class ModelOutput:
    layer_preds: list  # K Nodes of ligand coordinates
    final_scalars: object
    logits: object | None = None
    torsions: object | None = None

    @property
    def prediction(self):
        return self.layer_preds[-1]

    def probabilities(self):
        return residue_probabilities(self.logits) if self.logits is not None else None


@dataclass
class SiteModel:
    mode: str = MODE_DOCK
    equi_cfg: EquiNetConfig = field(default_factory=EquiNetConfig)
    inv_cfg: InvNetConfig = field(default_factory=InvNetConfig)
    seed: int = 0

    def __post_init__(self):
        from .nn import ParamRegistry

        if self.mode not in (MODE_DOCK, MODE_DESIGN):
            raise ValueError(f"unknown mode {self.mode!r}")
        self.reg = ParamRegistry(np.random.default_rng(self.seed))
        self.tfn = RefinementStack(self.reg, self.equi_cfg)
        self.inv = None
        if self.mode == MODE_DESIGN:
            self.inv = InvariantStack(
                self.reg, self.inv_cfg, n_scalar_in=self.equi_cfg.n_scalar
            )

    def parameters(self):
        return self.reg.values()

    def forward(self, sample, x_t, x_sc, a_sc, t, train=True):
        """One pass of the vector field.

        In docking mode the pocket's true residue types condition the
        refinement stack; in design mode they are hidden behind the mask
        token and only the self-conditioning estimate a_sc is visible.
        """
        if self.mode == MODE_DOCK:
            types = sample.pocket.types()
        else:
            types = np.full(len(sample.pocket), chem.MASK_TYPE, dtype=np.intp)
        preds, scalars = self.tfn(
            sample.ligand, sample.pocket, x_t, x_sc, types, t, train=train
        )
        out = ModelOutput(layer_preds=preds, final_scalars=scalars)
        if self.inv is not None:
            if a_sc is None:
                a_sc = mask_rows(len(sample.pocket))
            out.logits, out.torsions, _ = self.inv(
                sample.ligand, sample.pocket, preds[-1], scalars, a_sc, t
            )
        return out
