import numpy as np
import pytest

from sitegen import chem, moldata

from conftest import make_complex, make_pocket, write_backbone_file, write_ligand_file


BACKBONE_RECORD = (
    "ATOM      1  {name:<3s} ALA A   1    {x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00           {el}"
)


def backbone_text(names=("N", "CA", "C", "O"), resseq=1, offset=0.0):
    lines = []
    for i, name in enumerate(names):
        el = name[0]
        lines.append(
            f"ATOM  {i + 1:>5d}  {name:<3s} ALA A{resseq:>4d}    "
            f"{offset + i * 1.5:8.3f}{0.0:8.3f}{0.0:8.3f}  1.00  0.00           {el}"
        )
    return "\n".join(lines)


class TestParseBackbone:
    def test_single_residue(self):
        pocket, warnings = moldata.parse_backbone(backbone_text())
        assert len(pocket) == 1
        assert warnings == 0
        assert pocket.residues[0].rtype == chem.AA_INDEX["A"]
        np.testing.assert_allclose(pocket.residues[0].n, [0.0, 0.0, 0.0])

    def test_extra_atom_kept_as_sidechain(self):
        text = backbone_text(("N", "CA", "C", "O", "CB"))
        pocket, warnings = moldata.parse_backbone(text)
        assert len(pocket) == 1
        assert warnings == 0
        assert len(pocket.residues[0].sidechain) == 1

    def test_missing_oxygen_drops_residue(self):
        text = backbone_text(("N", "CA", "C")) + "\n" + backbone_text(resseq=2)
        pocket, warnings = moldata.parse_backbone(text)
        assert len(pocket) == 1
        assert warnings == 1

    def test_empty_input_rejected(self):
        with pytest.raises(moldata.ParseError):
            moldata.parse_backbone("")

    def test_altloc_b_skipped(self):
        text = backbone_text()
        text = text.replace("ATOM      1  N  ", "ATOM      1  N  ").replace(
            "    0.000", "    0.000", 1
        )
        lines = text.splitlines()
        # duplicate the N record with altloc B and shifted coordinates
        dup = lines[0][:16] + "B" + lines[0][17:30] + f"{99.0:8.3f}" + lines[0][38:]
        pocket, _ = moldata.parse_backbone("\n".join(lines + [dup]))
        np.testing.assert_allclose(pocket.residues[0].n, [0.0, 0.0, 0.0])

    def test_decreasing_resseq_rejected(self):
        text = backbone_text(resseq=5) + "\n" + backbone_text(resseq=2, offset=20.0)
        with pytest.raises(moldata.ParseError):
            moldata.parse_backbone(text)


def hetatm(serial, x, y, z, el="C", resname="LIG"):
    return (
        f"HETATM{serial:>5d}  {el}{serial:<2d} {resname} L   1    "
        f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00          {el:>2s}"
    )


class TestParseLigand:
    def test_conect_bond(self):
        text = "\n".join([hetatm(1, 0, 0, 0), hetatm(2, 5, 0, 0), "CONECT    1    2"])
        lig = moldata.parse_ligand(text)
        assert len(lig) == 2
        assert lig.bonds.sum() == 2  # symmetric pair
        assert lig.components.max() == 0

    def test_distant_atoms_unbonded(self):
        text = "\n".join([hetatm(1, 0, 0, 0), hetatm(2, 10, 0, 0)])
        lig = moldata.parse_ligand(text)
        assert lig.bonds.sum() == 0
        assert lig.components.max() == 1

    def test_carbon_pair_inferred_bond(self):
        # 1.5 < 1.3 * (0.76 + 0.76)
        text = "\n".join([hetatm(1, 0, 0, 0), hetatm(2, 1.5, 0, 0)])
        lig = moldata.parse_ligand(text)
        assert lig.bonds.sum() == 2

    def test_water_excluded(self):
        text = "\n".join([hetatm(1, 0, 0, 0), hetatm(2, 3, 0, 0, el="O", resname="HOH")])
        lig = moldata.parse_ligand(text)
        assert len(lig) == 1

    def test_empty_rejected(self):
        with pytest.raises(moldata.ParseError):
            moldata.parse_ligand("")

    def test_isolated_ion_allowed(self):
        lig = moldata.parse_ligand(hetatm(1, 0, 0, 0, el="S"))
        assert len(lig) == 1
        assert lig.bonds.sum() == 0

    def test_feature_side_channel(self):
        text = "\n".join([hetatm(1, 0, 0, 0), hetatm(2, 1.5, 0, 0)])
        feats = "0 " + " ".join(["1"] * 15) + "\n1 " + " ".join(["2"] * 15)
        raw = moldata.parse_ligand(text)
        table = moldata.parse_feature_file(feats, len(raw))
        lig = moldata.parse_ligand(text, features=table)
        assert lig.features[0, 7] == 1.0
        assert lig.features[1, 7] == 2.0
        # element and degree slots are always recomputed
        assert lig.features[0, 0] == 6
        assert lig.features[0, 2] == 1

    def test_feature_file_bad_width(self):
        with pytest.raises(moldata.ParseError):
            moldata.parse_feature_file("0 1 2 3", 1)


def chain_ligand(coords):
    n = len(coords)
    bonds = np.zeros((n, n), dtype=bool)
    for i in range(n - 1):
        bonds[i, i + 1] = bonds[i + 1, i] = True
    feats = np.zeros((n, moldata.NUM_LIGAND_FEATURES))
    return moldata.LigandGraph(
        elements=np.full(n, 6, dtype=np.intp), features=feats, bonds=bonds,
        coords=np.asarray(coords, dtype=np.float64),
    )


class TestMultiligand:
    def test_close_pair_grouped(self):
        a = chain_ligand([[0, 0, 0], [1.5, 0, 0]])
        b = chain_ligand([[4.5, 0, 0], [6.0, 0, 0]])  # min cross distance 3
        merged = moldata.group_multiligand([a, b])
        assert len(merged) == 4
        assert merged.components.max() == 1

    def test_far_pair_kept_apart(self):
        a = chain_ligand([[0, 0, 0], [1.5, 0, 0]])
        b = chain_ligand([[7.5, 0, 0], [9.0, 0, 0]])  # min cross distance 6
        merged = moldata.group_multiligand([a, b])
        assert len(merged) == 2

    def test_transitive_grouping(self):
        a = chain_ligand([[0, 0, 0]])
        b = chain_ligand([[3, 0, 0]])
        c = chain_ligand([[6, 0, 0]])  # A-C distance 6, linked through B
        merged = moldata.group_multiligand([a, b, c])
        assert len(merged) == 3

    def test_matches_bruteforce_closure(self):
        rng = np.random.default_rng(0)
        for _ in range(10):
            mols = [
                chain_ligand(rng.uniform(0, 12, size=(int(rng.integers(1, 4)), 3)))
                for _ in range(5)
            ]
            merged = moldata.group_multiligand(mols)
            # brute force transitive closure of the 4 A relation
            m = len(mols)
            adj = np.eye(m, dtype=bool)
            for i in range(m):
                for j in range(m):
                    d = np.linalg.norm(
                        mols[i].coords[:, None] - mols[j].coords[None, :], axis=-1
                    ).min()
                    adj[i, j] |= d <= 4.0
            for _ in range(m):
                adj = adj @ adj
            expect = sum(len(mols[j]) for j in range(m) if adj[0, j])
            assert len(merged) == expect


class TestPockets:
    def _protein_with_ligand(self, dists):
        rng = np.random.default_rng(1)
        residues = []
        for i, d in enumerate(dists):
            from conftest import make_residue

            ca = np.array([d, 0.0, 0.0])
            residues.append(make_residue(0, "A", i + 1, ca, rng, with_sidechain=False))
        protein = moldata.PocketBackbone(residues)
        lig = np.zeros((1, 3))
        return protein, lig

    def test_distance_cutoff_14(self):
        protein, lig = self._protein_with_ligand([13.0, 15.0])
        rng = np.random.default_rng(0)
        pocket = moldata.extract_distance_pocket(protein, lig, rng, sigma_d=0, sigma_c=0)
        assert len(pocket) == 1
        assert pocket.residues[0].resseq == 1

    def test_center_single_close_residue(self):
        protein, lig = self._protein_with_ligand([5.0, 20.0])
        rng = np.random.default_rng(0)
        pocket = moldata.extract_distance_pocket(protein, lig, rng, sigma_d=0, sigma_c=0)
        np.testing.assert_allclose(pocket.center, protein.residues[0].ca)

    def test_noisy_membership_reproducible(self):
        protein, lig = self._protein_with_ligand([12.0, 13.5, 14.5, 16.0])
        a = moldata.extract_distance_pocket(protein, lig, np.random.default_rng(7))
        b = moldata.extract_distance_pocket(protein, lig, np.random.default_rng(7))
        assert [r.resseq for r in a.residues] == [r.resseq for r in b.residues]
        np.testing.assert_array_equal(a.center, b.center)

    def test_empty_pocket_names_complex(self):
        protein, lig = self._protein_with_ligand([50.0])
        with pytest.raises(moldata.PocketError, match="cplx9"):
            moldata.extract_distance_pocket(
                protein, lig, np.random.default_rng(0), sigma_d=0, complex_id="cplx9"
            )

    @pytest.mark.parametrize(
        "diameter,radius", [(6.0, 10.0), (20.0, 12.0), (0.0, 7.0)]
    )
    def test_radius_formula(self, diameter, radius):
        protein, _ = self._protein_with_ligand([5.0, radius - 0.5, radius + 0.5])
        if diameter > 0:
            lig = np.array([[0.0, 0.0, 0.0], [diameter, 0.0, 0.0]])
            # place ligand so residue 0 stays the 8 A anchor
            lig -= lig.mean(axis=0)
            lig += protein.residues[0].ca + np.array([2.0, 0.0, 0.0])
        else:
            lig = protein.residues[0].ca[None, :] + np.array([[2.0, 0.0, 0.0]])
        rng = np.random.default_rng(0)
        pocket = moldata.extract_radius_pocket(protein, lig, rng, sigma_d=0, sigma_c=0)
        # the anchor residue's Calpha is the center of mass; membership is by
        # distance to it
        com = protein.residues[0].ca
        ca = protein.ca_coords()
        expect = (np.linalg.norm(ca - com, axis=-1) < radius).sum()
        assert len(pocket) == expect


class TestRadiusGraph:
    def _pocket_at(self, positions):
        from conftest import make_residue

        rng = np.random.default_rng(2)
        residues = [
            make_residue(0, "A", i + 1, np.asarray(p, dtype=np.float64), rng,
                         with_sidechain=False)
            for i, p in enumerate(positions)
        ]
        return moldata.PocketBackbone(residues)

    def test_cutoffs(self):
        pocket = self._pocket_at([[0, 0, 0], [49, 0, 0]])
        g = moldata.build_radius_graph(np.array([[0.0, 29.0, 0.0]]), pocket)
        assert len(g.pp) == 2  # both directions at 49 A
        assert len(g.lp) == 1 and len(g.pl) == 1  # only the 29 A cross pair

        pocket = self._pocket_at([[0, 0, 0], [51, 0, 0]])
        g = moldata.build_radius_graph(np.array([[0.0, 31.0, 0.0]]), pocket)
        assert len(g.pp) == 0
        assert len(g.lp) == 0

    def test_single_node_no_self_edges(self):
        pocket = self._pocket_at([[0, 0, 0]])
        g = moldata.build_radius_graph(np.array([[100.0, 100.0, 100.0]]), pocket)
        assert len(g.ll) == 0 and len(g.pp) == 0 and len(g.lp) == 0

    def test_matches_bruteforce(self):
        rng = np.random.default_rng(3)
        lig = rng.uniform(0, 60, size=(6, 3))
        pocket = self._pocket_at(rng.uniform(0, 60, size=(5, 3)))
        g = moldata.build_radius_graph(lig, pocket)
        ca = pocket.ca_coords()
        ll = sum(
            1
            for i in range(6)
            for j in range(6)
            if i != j and np.linalg.norm(lig[i] - lig[j]) <= 50.0
        )
        lp = sum(
            1
            for i in range(6)
            for j in range(5)
            if np.linalg.norm(lig[i] - ca[j]) <= 30.0
        )
        assert len(g.ll) == ll
        assert len(g.lp) == lp and len(g.pl) == lp


class TestFakeLigand:
    def _clustered_protein(self, n=20):
        """A compact blob so central residues have many contacts."""
        rng = np.random.default_rng(5)
        from conftest import make_residue

        residues = []
        for i in range(n):
            angle = 2.4 * i
            r = 2.2 * np.sqrt(i + 1)
            ca = np.array([r * np.cos(angle), r * np.sin(angle), 0.3 * (i % 4)])
            residues.append(make_residue(1, "A", i + 1, ca, rng))
        return moldata.PocketBackbone(residues)

    def test_window_removed(self):
        protein = self._clustered_protein()
        sample = moldata.make_fake_ligand(protein, np.random.default_rng(0))
        assert sample is not None
        kept = {r.resseq for r in sample.pocket.residues}
        all_seqs = {r.resseq for r in protein.residues}
        removed = all_seqs - kept
        # removed set is a contiguous +-7 window clipped to the chain
        chosen = sorted(removed)
        assert max(chosen) - min(chosen) <= 14
        assert all(
            abs(a - (min(chosen) + i)) == 0 for i, a in enumerate(chosen)
        )

    def test_contact_threshold(self):
        # a sparse line of residues never reaches 4 non-window contacts
        rng = np.random.default_rng(1)
        from conftest import make_residue

        residues = [
            make_residue(1, "A", i + 1, np.array([i * 30.0, 0.0, 0.0]), rng)
            for i in range(10)
        ]
        protein = moldata.PocketBackbone(residues)
        assert moldata.make_fake_ligand(protein, np.random.default_rng(0)) is None

    def test_ligand_atoms_are_c_ca_sidechain(self):
        protein = self._clustered_protein()
        sample = moldata.make_fake_ligand(protein, np.random.default_rng(0))
        kept = {r.resseq for r in sample.pocket.residues}
        removed = sorted({r.resseq for r in protein.residues} - kept)
        # locate the source residue: its C and CA open the fake ligand
        found = [
            r for r in protein.residues
            if r.resseq in removed
            and np.allclose(sample.ligand.coords[0], r.c)
            and np.allclose(sample.ligand.coords[1], r.ca)
        ]
        assert len(found) == 1
        assert len(sample.ligand) == 2 + len(found[0].sidechain)


class TestContacts:
    def test_contact_mask(self, toy_complex):
        mask = moldata.contact_mask(toy_complex.pocket, toy_complex.ligand.coords)
        np.testing.assert_array_equal(mask, toy_complex.contact_mask)
        assert mask.any()


class TestClustering:
    def test_identical_sequences_one_cluster(self):
        assert moldata.cluster_sequences(["ACDE", "ACDE", "ACDE"]) == [0, 0, 0]

    def test_disjoint_sequences_two_clusters(self):
        labels = moldata.cluster_sequences(["AAAA", "CCCC"])
        assert labels[0] != labels[1]

    def test_half_identity_joins(self):
        labels = moldata.cluster_sequences(["AAAA", "AACC"])
        assert labels[0] == labels[1]

    def test_identity_hand_case(self):
        assert moldata._global_alignment_identity("AAAA", "AACC") == pytest.approx(0.5)
        assert moldata._global_alignment_identity("AAAA", "CCCC") == 0.0

    def test_empty(self):
        assert moldata.cluster_sequences([]) == []

    def test_representative_property(self):
        rng = np.random.default_rng(0)
        seqs = [
            "".join(rng.choice(list(chem.AA_ORDER), size=int(rng.integers(5, 15))))
            for _ in range(12)
        ]
        labels = moldata.cluster_sequences(seqs)
        # the representative is the longest member of its cluster (ties by
        # order); every member matches it at >= 0.30 identity
        for cid in set(labels):
            members = [s for s, l in zip(seqs, labels) if l == cid]
            rep = max(members, key=len)
            for s in members:
                assert moldata._global_alignment_identity(rep, s) >= 0.30


class TestRoundTrip:
    def test_backbone_file_round_trip(self, tmp_path):
        sample = make_complex(3)
        path = tmp_path / "protein.bb"
        write_backbone_file(path, sample.pocket)
        parsed, warnings = moldata.parse_backbone(path.read_text())
        assert warnings == 0
        assert len(parsed) == len(sample.pocket)
        np.testing.assert_allclose(
            parsed.ca_coords(), sample.pocket.ca_coords(), atol=1e-3
        )
        np.testing.assert_array_equal(parsed.types(), sample.pocket.types())

    def test_ligand_file_round_trip(self, tmp_path):
        sample = make_complex(3)
        path = tmp_path / "ligand.lig"
        write_ligand_file(path, sample.ligand)
        parsed = moldata.parse_ligand(path.read_text())
        assert len(parsed) == len(sample.ligand)
        np.testing.assert_allclose(parsed.coords, sample.ligand.coords, atol=1e-3)
        np.testing.assert_array_equal(parsed.bonds, sample.ligand.bonds)
