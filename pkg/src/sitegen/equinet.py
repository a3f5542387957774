"""Equivariant refinement stack: scalar + 3-vector features, order <= 1.

The tensor-product algebra is plain scalar/dot/cross arithmetic.  Message
wiring per edge, with r the unit source-to-destination direction and (s, v)
the source features:

  scalar out:  [w1 * s,  w2 * (v . r)]
  vector out:  [w3 * v,  w4 * (r x (r x v)),  w5_c * s_c * r]

The double cross keeps every vector channel polar, so the stack is
equivariant under reflections as well as rotations.  All path weights come
from an edge network over (edge embedding, destination scalars, source
scalars); each of the four edge kinds has its own weights.

Geometry entering a layer is detached: gradients of intermediate position
losses stop at the layer that produced them, matching the per-layer graph
rebuild contract.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from . import moldata, nn

EDGE_KINDS = ("ll", "pp", "lp", "pl")


def tp_l1(scalars_a, vectors_a, scalars_b, vectors_b, weights):
    """Order-1 tensor product with per-channel path weights.

    a carries one scalar and one vector channel (the spherical-harmonic
    side); b carries C channels of each.  weights is a 5-tuple
    (w_ss, w_dot, w_sv, w_cross, w_vs), each (E, C).

    Returns (scalars (E, 2C), vectors (E, 3C)) with blocks in the order
    [s_a*s_b, v_a.v_b] and [s_a*v_b, v_a x v_b, s_b*v_a].
    """
    s_a, v_a = ad.as_node(scalars_a), ad.as_node(vectors_a)
    s_b, v_b = ad.as_node(scalars_b), ad.as_node(vectors_b)
    w_ss, w_dot, w_sv, w_cross, w_vs = [ad.as_node(w) for w in weights]
    c = s_b.value.shape[1]

    s_a_t = _tile_channels(s_a, c)
    v_a_t = _tile_vec_channels(v_a, c)

    out_s = ad.concat(
        [ad.mul(w_ss, ad.mul(s_a_t, s_b)), ad.mul(w_dot, ad.dot_last(v_a_t, v_b))],
        axis=1,
    )
    out_v = ad.concat(
        [
            ad.scale_vectors(ad.mul(w_sv, s_a_t), v_b),
            ad.scale_vectors(w_cross, ad.cross(v_a_t, v_b)),
            ad.scale_vectors(ad.mul(w_vs, s_b), v_a_t),
        ],
        axis=1,
    )
    return out_s, out_v


def _tile_channels(s, c):
    """(E, 1) -> (E, C)."""
    def bw(g):
        return (g.sum(axis=1, keepdims=True),)

    return ad.Node(np.repeat(s.value, c, axis=1), (s,), bw, op="tile_channels")


def _tile_vec_channels(v, c):
    """(E, 1, 3) -> (E, C, 3)."""
    def bw(g):
        return (g.sum(axis=1, keepdims=True),)

    return ad.Node(np.repeat(v.value, c, axis=1), (v,), bw, op="tile_vec_channels")


@dataclass
class EquiNetConfig:
    layers: int = 6
    n_scalar: int = 32
    n_vector: int = 8
    rbf_count: int = 32
    rbf_max: float = 50.0
    time_rbf_count: int = 16
    hidden: int = 64


class RefinementLayer:
    def __init__(self, reg, name, cfg):
        self.cfg = cfg
        ns, nv = cfg.n_scalar, cfg.n_vector
        n_paths = 2 * ns + 3 * nv
        self.psi = {}
        for kind in EDGE_KINDS:
            extra = cfg.rbf_count if kind == "ll" else 0  # self-conditioning block
            self.psi[kind] = nn.MLP(
                reg, f"{name}.psi_{kind}", cfg.rbf_count + extra + 2 * ns, cfg.hidden, n_paths
            )
        self.mix_s = nn.Linear(reg, f"{name}.mix_s", ns + nv, ns)
        self.mix_v = nn.VecLinear(reg, f"{name}.mix_v", 2 * nv + ns, nv)
        self.bn_s = nn.ScalarBatchNorm(reg, f"{name}.bn_s", ns)
        self.bn_v = nn.VectorBatchNorm(reg, f"{name}.bn_v", nv)
        self.phi = nn.VecLinear(reg, f"{name}.phi", nv, 1, zero=True)

    def __call__(self, s, v, lig_pos, pocket, sc_rbf, centers, width, train):
        """One message round plus a ligand position increment.

        lig_pos is a detached numpy array; returns (s, v, position delta Node).
        """
        cfg = self.cfg
        ns, nv = cfg.n_scalar, cfg.n_vector
        n_lig = len(lig_pos)
        ca = pocket.ca_coords()
        pos = np.concatenate([lig_pos, ca])
        n_nodes = len(pos)
        graph = moldata.build_radius_graph(lig_pos, pocket)

        msg_s_parts, msg_v_parts, dst_parts = [], [], []
        for kind in EDGE_KINDS:
            edges = getattr(graph, kind)
            dists = getattr(graph, f"{kind}_dist")
            if len(edges) == 0:
                continue
            src = edges[:, 0].copy()
            dst = edges[:, 1].copy()
            if kind in ("pp", "pl"):
                src = src + n_lig
            if kind in ("pp", "lp"):
                dst = dst + n_lig
            rel = pos[src] - pos[dst]
            safe = np.maximum(dists, 1e-9)
            direction = rel / safe[:, None]

            efeat = nn.rbf_embed_values(dists, centers, width)
            if kind == "ll":
                efeat = np.concatenate([efeat, sc_rbf[edges[:, 0], edges[:, 1]]], axis=1)
            psi_in = ad.concat([ad.Node(efeat), s[dst], s[src]], axis=1)
            w = self.psi[kind](psi_in)
            w_ss = w[:, :ns]
            w_dot = w[:, ns : ns + nv]
            w_sv = w[:, ns + nv : ns + 2 * nv]
            w_cross = w[:, ns + 2 * nv : ns + 3 * nv]
            w_vs = w[:, ns + 3 * nv :]

            s_src = s[src]
            v_src = v[src]
            dir_t = ad.Node(np.repeat(direction[:, None, :], nv, axis=1))
            msg_s = ad.concat(
                [ad.mul(w_ss, s_src), ad.mul(w_dot, ad.dot_last(v_src, dir_t))], axis=1
            )
            double_cross = ad.cross(dir_t, ad.cross(dir_t, v_src))
            msg_v = ad.concat(
                [
                    ad.scale_vectors(w_sv, v_src),
                    ad.scale_vectors(w_cross, double_cross),
                    ad.outer_last(ad.mul(w_vs, s_src), ad.Node(direction)),
                ],
                axis=1,
            )
            msg_s_parts.append(msg_s)
            msg_v_parts.append(msg_v)
            dst_parts.append(dst)

        if msg_s_parts:
            dst_all = np.concatenate(dst_parts)
            counts = np.bincount(dst_all, minlength=n_nodes).astype(np.float64)
            inv = 1.0 / np.maximum(counts, 1.0)
            agg_s = ad.segment_sum(ad.concat(msg_s_parts, axis=0), dst_all, n_nodes)
            agg_v = ad.segment_sum(ad.concat(msg_v_parts, axis=0), dst_all, n_nodes)
            agg_s = ad.mul(agg_s, ad.Node(np.repeat(inv[:, None], ns + nv, axis=1)))
            agg_v = ad.scale_vectors(
                ad.Node(np.repeat(inv[:, None], 2 * nv + ns, axis=1)), agg_v
            )
            s = ad.add(s, self.bn_s(self.mix_s(agg_s), train))
            v = ad.add(v, self.bn_v(self.mix_v(agg_v), train))

        delta = ad.reshape(self.phi(v[np.arange(n_lig)]), (n_lig, 3))
        return s, v, delta


class RefinementStack:
    """K refinement layers producing per-layer ligand position predictions."""

    def __init__(self, reg, cfg=None):
        self.cfg = cfg or EquiNetConfig()
        c = self.cfg
        self.centers, self.width = nn.rbf_centers(0.0, c.rbf_max, c.rbf_count)
        self.t_centers, self.t_width = nn.rbf_centers(0.0, 1.0, c.time_rbf_count)
        self.lig_embed = nn.Linear(reg, "tfn.lig_embed", moldata.NUM_LIGAND_FEATURES, c.n_scalar)
        self.res_embed = nn.Linear(reg, "tfn.res_embed", 21, c.n_scalar)
        self.time_embed = nn.Linear(reg, "tfn.time_embed", c.time_rbf_count, c.n_scalar)
        self.vec_init = nn.VecLinear(reg, "tfn.vec_init", 3, c.n_vector)
        self.layers = [
            RefinementLayer(reg, f"tfn.layer{k}", c) for k in range(c.layers)
        ]

    def initial_features(self, ligand, pocket, residue_types, t):
        c = self.cfg
        n_lig, n_res = len(ligand), len(pocket)
        lig_feats = normalize_ligand_features(ligand.features)
        type_onehot = np.zeros((n_res, 21))
        type_onehot[np.arange(n_res), residue_types] = 1.0

        s_lig = self.lig_embed(ad.Node(lig_feats))
        s_res = self.res_embed(ad.Node(type_onehot))
        s = ad.concat([s_lig, s_res], axis=0)
        t_emb = nn.rbf_embed_values(np.array([t]), self.t_centers, self.t_width)
        t_row = self.time_embed(ad.Node(t_emb))
        s = ad.add(s, nn._tile_rows(t_row, n_lig + n_res))

        bb = pocket.backbone_coords()  # (L, 4, 3): N, CA, C, O
        anchors = np.stack([bb[:, 0] - bb[:, 1], bb[:, 2] - bb[:, 1], bb[:, 3] - bb[:, 1]], axis=1)
        v_res = self.vec_init(ad.Node(anchors))
        v_lig = ad.Node(np.zeros((n_lig, c.n_vector, 3)))
        v = ad.concat([v_lig, v_res], axis=0)
        return s, v

    def __call__(self, ligand, pocket, x_t, x_sc, residue_types, t, train=True,
                 frozen_positions=None):
        """Run the stack; returns (per-layer prediction Nodes, final scalars).

        frozen_positions pins each layer's entry positions to the given
        arrays instead of the running predictions.  Gradient checks use this:
        the backward pass treats per-layer positions as constants, so the
        finite-difference function must hold them fixed too.
        """
        c = self.cfg
        s, v = self.initial_features(ligand, pocket, residue_types, t)
        sc_d = np.linalg.norm(x_sc[:, None] - x_sc[None, :], axis=-1)
        sc_rbf = nn.rbf_embed_values(sc_d, self.centers, self.width)

        cur = np.asarray(x_t, dtype=np.float64)
        preds = []
        for k, layer in enumerate(self.layers):
            if frozen_positions is not None:
                cur = np.asarray(frozen_positions[k], dtype=np.float64)
            s, v, delta = layer(
                s, v, cur, pocket, sc_rbf, self.centers, self.width, train
            )
            pred = ad.add(ad.Node(cur), delta)
            preds.append(pred)
            cur = pred.value.copy()  # detached for the next graph rebuild
        return preds, s


def normalize_ligand_features(features):
    """Scale raw chemistry features to O(1) inputs."""
    f = features.astype(np.float64).copy()
    f[:, 0] /= 10.0  # atomic number
    f[:, 2] /= 4.0   # degree
    f[:, 4] /= 4.0   # implicit valence
    f[:, 5] /= 4.0   # hydrogen count
    f[:, 6] /= 4.0   # hybridization code
    f[:, 8] /= 3.0   # ring count
    return f
