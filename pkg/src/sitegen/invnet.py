"""Invariant graph-attention stack over the predicted complex, with the
residue-type and side-chain torsion heads.

Every input is a function of interatomic distances or of backbone dihedral
cosines, so the outputs are unchanged under any rigid motion or reflection
of the coordinates.  There is no aggregation over all nodes anywhere: state
moves only along graph edges.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import chem, moldata, nn

VIRTUAL_ATOM_OFFSET = 1.5  # Angstrom from Calpha along the negated N/C bisector


@dataclass
class InvNetConfig:
    layers: int = 4
    hidden: int = 64
    rbf_count: int = 16
    rbf_max: float = 30.0
    time_rbf_count: int = 16
    n_torsions: int = 4


def virtual_atom(residue):
    """Deterministic fifth point of the backbone frame: 1.5 A from Calpha
    along the negated unit bisector of the N and C bond directions."""
    u1 = residue.n - residue.ca
    u1 /= np.linalg.norm(u1)
    u2 = residue.c - residue.ca
    u2 /= np.linalg.norm(u2)
    bis = u1 + u2
    bis /= np.linalg.norm(bis)
    return residue.ca - VIRTUAL_ATOM_OFFSET * bis


def frame_points(pocket):
    """(L, 5, 3): N, CA, C, O, virtual atom per residue."""
    pts = np.zeros((len(pocket), 5, 3))
    for i, r in enumerate(pocket.residues):
        pts[i, :4] = r.backbone()
        pts[i, 4] = virtual_atom(r)
    return pts


def _dihedral(p0, p1, p2, p3):
    b0 = p1 - p0
    b1 = p2 - p1
    b2 = p3 - p2
    n1 = np.cross(b0, b1)
    n2 = np.cross(b1, b2)
    m = np.cross(n1, b1 / np.linalg.norm(b1))
    return np.arctan2(np.dot(m, n2), np.dot(n1, n2))


def backbone_dihedral_encodings(pocket):
    """Per-residue (cos, cos 2x) of phi, psi, omega; zero without a
    chain-consecutive neighbor.  Cosine-only keeps reflection invariance."""
    out = np.zeros((len(pocket), 6))
    res = pocket.residues
    for i, r in enumerate(res):
        prev = res[i - 1] if i > 0 else None
        nxt = res[i + 1] if i + 1 < len(res) else None
        if prev is not None and (prev.chain != r.chain or r.resseq - prev.resseq != 1):
            prev = None
        if nxt is not None and (nxt.chain != r.chain or nxt.resseq - r.resseq != 1):
            nxt = None
        if prev is not None:
            phi = _dihedral(prev.c, r.n, r.ca, r.c)
            omega = _dihedral(prev.ca, prev.c, r.n, r.ca)
            out[i, 0:2] = [np.cos(phi), np.cos(2 * phi)]
            out[i, 4:6] = [np.cos(omega), np.cos(2 * omega)]
        if nxt is not None:
            psi = _dihedral(r.n, r.ca, r.c, nxt.n)
            out[i, 2:4] = [np.cos(psi), np.cos(2 * psi)]
    return out


class GATLayer:
    def __init__(self, reg, name, hidden):
        self.hidden = hidden
        self.pi = {}
        self.xi = {}
        self.omega = {}
        for kind in ("ll", "pp", "lp", "pl"):
            self.pi[kind] = nn.MLP(reg, f"{name}.pi_{kind}", 3 * hidden, hidden, 1)
            self.xi[kind] = nn.MLP(reg, f"{name}.xi_{kind}", 2 * hidden, hidden, hidden)
            self.omega[kind] = nn.MLP(reg, f"{name}.om_{kind}", 3 * hidden, hidden, hidden)

    def __call__(self, h, edges, efeat):
        """h: (N, hidden) node Node; edges: kind -> (src, dst) arrays in the
        combined index space; efeat: kind -> edge feature Node."""
        n_nodes = h.value.shape[0]
        logit_parts, val_parts, dst_parts = [], [], []
        new_efeat = {}
        for kind, (src, dst) in edges.items():
            if len(src) == 0:
                continue
            e = efeat[kind]
            cat = ad.concat([h[src], e, h[dst]], axis=1)
            logit_parts.append(self.pi[kind](cat))
            val_parts.append(self.xi[kind](ad.concat([e, h[src]], axis=1)))
            dst_parts.append(dst)

        if not logit_parts:
            return h, efeat

        logits = ad.reshape(ad.concat(logit_parts, axis=0), (-1,))
        dst_all = np.concatenate(dst_parts)
        attn = _segment_softmax(logits, dst_all, n_nodes)
        values = ad.concat(val_parts, axis=0)
        weighted = ad.mul(values, _tile_cols(attn, self.hidden))
        aggregated = ad.segment_sum(weighted, dst_all, n_nodes)

        # nodes with no incoming edges keep their features
        has_edge = np.zeros(n_nodes)
        has_edge[dst_all] = 1.0
        keep = np.repeat((1.0 - has_edge)[:, None], self.hidden, axis=1)
        h_new = ad.add(aggregated, ad.mul(h, ad.Node(keep)))

        for kind, (src, dst) in edges.items():
            if len(src) == 0:
                new_efeat[kind] = efeat[kind]
                continue
            new_efeat[kind] = self.omega[kind](
                ad.concat([h_new[src], efeat[kind], h_new[dst]], axis=1)
            )
        return h_new, new_efeat


def _segment_softmax(logits, seg, num):
    """Softmax of (E,) logits over groups sharing a destination node."""
    seg_max = np.full(num, -np.inf)
    np.maximum.at(seg_max, seg, logits.value)
    seg_max[~np.isfinite(seg_max)] = 0.0
    shifted = ad.sub(logits, ad.Node(seg_max[seg]))
    e = ad.exp(shifted)
    denom = ad.segment_sum(e, seg, num)
    return ad.div(e, denom[seg])


def _tile_cols(x, c):
    """(E,) -> (E, C)."""
    def bw(g):
        return (g.sum(axis=1),)

    return ad.Node(np.repeat(x.value[:, None], c, axis=1), (x,), bw, op="tile_cols")


class InvariantStack:
    """Graph attention layers plus residue-type and torsion heads."""

    def __init__(self, reg, cfg=None, n_scalar_in=32):
        self.cfg = cfg or InvNetConfig()
        c = self.cfg
        self.centers, self.width = nn.rbf_centers(0.0, c.rbf_max, c.rbf_count)
        self.t_centers, self.t_width = nn.rbf_centers(0.0, 1.0, c.time_rbf_count)
        geo_dim = 10 * c.rbf_count + 6  # intra-frame distances + dihedral encodings
        self.lig_embed = nn.Linear(
            reg, "inv.lig_embed", moldata.NUM_LIGAND_FEATURES + n_scalar_in, c.hidden
        )
        self.res_embed = nn.Linear(reg, "inv.res_embed", geo_dim + 21 + n_scalar_in, c.hidden)
        self.time_embed = nn.Linear(reg, "inv.time_embed", c.time_rbf_count, c.hidden)
        self.edge_embed = {
            "ll": nn.Linear(reg, "inv.edge_ll", c.rbf_count, c.hidden),
            "pp": nn.Linear(reg, "inv.edge_pp", 25 * c.rbf_count, c.hidden),
            "lp": nn.Linear(reg, "inv.edge_lp", 4 * c.rbf_count, c.hidden),
            "pl": nn.Linear(reg, "inv.edge_pl", 4 * c.rbf_count, c.hidden),
        }
        self.layers = [GATLayer(reg, f"inv.layer{l}", c.hidden) for l in range(c.layers)]
        self.type_head = nn.Linear(reg, "inv.type_head", c.hidden, chem.NUM_AA)
        self.torsion_head = nn.Linear(reg, "inv.torsion_head", c.hidden, 2 * c.n_torsions)

    def __call__(self, ligand, pocket, lig_pred, tfn_scalars, a_sc, t):
        """lig_pred: Node (n, 3) predicted ligand coordinates; a_sc: (L, 21)
        residue self-conditioning rows.  Returns (residue logits, torsion
        outputs (L, T, 2), ligand node features)."""
        c = self.cfg
        n_lig, n_res = len(ligand), len(pocket)
        pts = frame_points(pocket)

        lig_in = ad.concat(
            [
                ad.Node(
                    np.asarray(
                        _normalized_features(ligand), dtype=np.float64
                    )
                ),
                tfn_scalars[np.arange(n_lig)],
            ],
            axis=1,
        )
        geo = np.concatenate(
            [_intra_frame_encodings(pts, self.centers, self.width),
             backbone_dihedral_encodings(pocket)],
            axis=1,
        )
        res_in = ad.concat(
            [
                ad.Node(geo),
                ad.Node(np.asarray(a_sc, dtype=np.float64)),
                tfn_scalars[n_lig + np.arange(n_res)],
            ],
            axis=1,
        )
        h = ad.concat([self.lig_embed(lig_in), self.res_embed(res_in)], axis=0)
        t_emb = nn.rbf_embed_values(np.array([t]), self.t_centers, self.t_width)
        h = ad.add(h, nn._tile_rows(self.time_embed(ad.Node(t_emb)), n_lig + n_res))

        edges, efeat = self._build_edges(ligand, pocket, lig_pred, pts)
        for layer in self.layers:
            h, efeat = layer(h, edges, efeat)

        res_h = h[n_lig + np.arange(n_res)]
        logits = self.type_head(res_h)
        torsions = ad.reshape(self.torsion_head(res_h), (n_res, c.n_torsions, 2))
        return logits, torsions, h

    def _build_edges(self, ligand, pocket, lig_pred, pts):
        n_lig = len(ligand)
        lig_xyz = lig_pred.value  # topology from detached coordinates
        graph = moldata.build_radius_graph(lig_xyz, pocket)
        edges, efeat = {}, {}

        if len(graph.ll):
            src, dst = graph.ll[:, 0], graph.ll[:, 1]
            d = ad.norm_last(ad.sub(lig_pred[src], lig_pred[dst]))
            efeat["ll"] = self.edge_embed["ll"](
                nn.rbf_embed(d, self.centers, self.width)
            )
            edges["ll"] = (src, dst)

        if len(graph.pp):
            src, dst = graph.pp[:, 0], graph.pp[:, 1]
            d = np.linalg.norm(
                pts[src][:, :, None, :] - pts[dst][:, None, :, :], axis=-1
            ).reshape(len(src), 25)
            feats = nn.rbf_embed_values(d, self.centers, self.width).reshape(len(src), -1)
            efeat["pp"] = self.edge_embed["pp"](ad.Node(feats))
            edges["pp"] = (src + n_lig, dst + n_lig)

        for kind, pairs in (("lp", graph.lp), ("pl", graph.pl)):
            if not len(pairs):
                continue
            if kind == "lp":
                lig_idx, res_idx = pairs[:, 0], pairs[:, 1]
                src, dst = lig_idx, res_idx + n_lig
            else:
                res_idx, lig_idx = pairs[:, 0], pairs[:, 1]
                src, dst = res_idx + n_lig, lig_idx
            cols = []
            for a in range(4):  # distances to N, CA, C, O
                diff = ad.sub(lig_pred[lig_idx], ad.Node(pts[res_idx, a]))
                cols.append(nn.rbf_embed(ad.norm_last(diff), self.centers, self.width))
            efeat[kind] = self.edge_embed[kind](ad.concat(cols, axis=1))
            edges[kind] = (src, dst)
        return edges, efeat


def _intra_frame_encodings(pts, centers, width):
    """RBFs of the 10 distinct pairwise distances among a residue's five
    frame points."""
    idx = np.triu_indices(5, k=1)
    d = np.linalg.norm(pts[:, idx[0]] - pts[:, idx[1]], axis=-1)
    return nn.rbf_embed_values(d, centers, width).reshape(len(pts), -1)


def _normalized_features(ligand):
    from .equinet import normalize_ligand_features

    return normalize_ligand_features(ligand.features)


def residue_probabilities(logits):
    return ad.softmax(logits, axis=-1)


def cross_entropy_loss(logits, targets, mask):
    """Mean cross-entropy of true types over masked residues."""
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return ad.Node(0.0)
    idx = np.nonzero(mask)[0]
    logp = ad.log_softmax(logits, axis=-1)
    picked = logp[(idx, np.asarray(targets, dtype=np.intp)[idx])]
    return ad.mul(ad.mean(picked), -1.0)


TORSION_NORM_PENALTY = 0.02


def torsion_loss(pred, true_angles, mask):
    """Angular + norm-penalty loss on (sin, cos) torsion outputs.

    pred: Node (L, T, 2); true_angles: (L, T) radians; mask: (L, T) bool.
    Mean over valid torsions of || s/|s| - (sin a, cos a) ||^2 plus
    0.02 * mean | |s| - 1 |.
    """
    mask = np.asarray(mask, dtype=bool)
    if not mask.any():
        return ad.Node(0.0)
    idx = np.nonzero(mask.ravel())[0]
    flat = ad.reshape(pred, (-1, 2))[idx]
    target = np.stack(
        [np.sin(true_angles.ravel()[idx]), np.cos(true_angles.ravel()[idx])], axis=1
    )
    norms = ad.norm_last(flat, keepdims=True, eps=1e-12)
    unit = ad.div(flat, ad.concat([norms, norms], axis=1))
    diff = ad.sub(unit, ad.Node(target))
    angular = ad.mean(ad.sum_(ad.mul(diff, diff), axis=1))
    dev = ad.sub(ad.reshape(norms, (-1,)), 1.0)
    penalty = ad.mean(ad.sqrt(ad.add(ad.mul(dev, dev), 1e-12)))
    return ad.add(angular, ad.mul(penalty, TORSION_NORM_PENALTY))
