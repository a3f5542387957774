"""Shared fixtures: small synthetic complexes and structure-file writers."""

import numpy as np
import pytest

from sitegen import chem, moldata

BACKBONE_OFFSETS = {
    # rough ideal geometry relative to Calpha, Angstrom
    "N": np.array([-1.46, 0.0, 0.0]),
    "C": np.array([0.55, 1.42, 0.0]),
    "O": np.array([0.45, 2.35, 0.85]),
}


def make_residue(rtype, chain, resseq, ca, rng, with_sidechain=True):
    jitter = rng.normal(scale=0.05, size=(3, 3))
    n = ca + BACKBONE_OFFSETS["N"] + jitter[0]
    c = ca + BACKBONE_OFFSETS["C"] + jitter[1]
    o = ca + BACKBONE_OFFSETS["O"] + jitter[2]
    side = np.zeros((0, 3))
    side_el = ()
    if with_sidechain and chem.AA_ORDER[rtype] != "G":
        side = ca[None, :] + np.array([[0.7, -1.2, 0.6]]) + rng.normal(scale=0.05, size=(1, 3))
        side_el = ("C",)
    return moldata.Residue(
        rtype=rtype, chain=chain, resseq=resseq,
        n=n, ca=ca, c=c, o=o, sidechain=side, sidechain_elements=side_el,
    )


def make_pocket(n_res, rng, chain="A", start=1, spacing=3.8, curl=0.35):
    """Residues along a gentle helix so frames stay non-degenerate."""
    residues = []
    for i in range(n_res):
        angle = curl * i
        ca = np.array(
            [6.0 * np.cos(angle), 6.0 * np.sin(angle), spacing * i * 0.4]
        )
        rtype = int(rng.integers(chem.NUM_AA))
        residues.append(make_residue(rtype, chain, start + i, ca, rng))
    return moldata.PocketBackbone(residues)


def make_chain_ligand(n_atoms, rng, center=None, bond_length=1.5):
    """A bonded heteroatom chain with a mild random walk shape.

    Elements cycle through C/N/O/S so atoms are distinguishable by their
    features; an all-carbon chain is reversal-symmetric, which makes the
    atom assignment ill-posed when starting from the symmetric prior."""
    coords = [np.zeros(3)]
    direction = np.array([1.0, 0.0, 0.0])
    for _ in range(n_atoms - 1):
        step = direction + rng.normal(scale=0.4, size=3)
        step = step / np.linalg.norm(step) * bond_length
        coords.append(coords[-1] + step)
        direction = step / np.linalg.norm(step)
    coords = np.stack(coords)
    coords -= coords.mean(axis=0)
    if center is not None:
        coords += center
    bonds = np.zeros((n_atoms, n_atoms), dtype=bool)
    for i in range(n_atoms - 1):
        bonds[i, i + 1] = bonds[i + 1, i] = True
    elements = np.array(
        [(6, 7, 8, 16)[i % 4] for i in range(n_atoms)], dtype=np.intp
    )
    feats = np.zeros((n_atoms, moldata.NUM_LIGAND_FEATURES))
    feats[:, 0] = elements
    feats[:, 2] = bonds.sum(axis=1)
    return moldata.LigandGraph(
        elements=elements, features=feats, bonds=bonds, coords=coords
    )


def make_complex(seed, n_atoms=8, n_res=10, sample_id=None):
    """Toy complex: pocket ring plus a ligand threaded near its center,
    close enough that at least one residue is in contact."""
    rng = np.random.default_rng(seed)
    pocket = make_pocket(n_res, rng)
    ca = pocket.ca_coords()
    center = ca.mean(axis=0)
    # pull the ligand toward the nearest residue so contacts exist
    nearest = ca[np.linalg.norm(ca - center, axis=1).argmin()]
    lig_center = 0.45 * center + 0.55 * nearest
    ligand = make_chain_ligand(n_atoms, rng, center=lig_center)
    mask = moldata.contact_mask(pocket, ligand.coords)
    if not mask.any():
        # nudge the first ligand atom onto a residue's side chain region
        shift = nearest - ligand.coords[0]
        ligand.coords += shift * 0.8
        mask = moldata.contact_mask(pocket, ligand.coords)
    pocket.center = ligand.coords.mean(axis=0)
    return moldata.ComplexSample(
        ligand=ligand,
        pocket=pocket,
        contact_mask=mask,
        sample_id=sample_id or f"toy{seed}",
    )


@pytest.fixture
def toy_complex():
    return make_complex(0)


@pytest.fixture
def toy_complexes():
    return [make_complex(s, n_atoms=6 + s, n_res=8 + s) for s in range(3)]


def write_backbone_file(path, pocket):
    lines = []
    serial = 1
    for r in pocket.residues:
        resname = chem.ONE_TO_THREE[chem.AA_ORDER[r.rtype]]
        atoms = [("N", "N", r.n), ("CA", "C", r.ca), ("C", "C", r.c), ("O", "O", r.o)]
        for k, (xyz, el) in enumerate(zip(r.sidechain, r.sidechain_elements)):
            atoms.append((f"{el}B{k:d}"[:4], el, xyz))
        for name, elem, xyz in atoms:
            lines.append(
                f"ATOM  {serial:>5d} {name:<4s} {resname:<3s} {r.chain}{r.resseq:>4d}    "
                f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}  1.00  0.00          {elem:>2s}"
            )
            serial += 1
    path.write_text("\n".join(lines) + "\n")


def write_ligand_file(path, ligand):
    lines = []
    for i in range(len(ligand)):
        sym = {6: "C", 7: "N", 8: "O", 16: "S"}.get(int(ligand.elements[i]), "C")
        xyz = ligand.coords[i]
        lines.append(
            f"HETATM{i + 1:>5d} {sym + str(i):<4s} LIG L   1    "
            f"{xyz[0]:8.3f}{xyz[1]:8.3f}{xyz[2]:8.3f}  1.00  0.00          {sym:>2s}"
        )
    for i, j in zip(*np.nonzero(np.triu(ligand.bonds))):
        lines.append(f"CONECT{i + 1:>5d}{j + 1:>5d}")
    path.write_text("\n".join(lines) + "\n")


def write_manifest(path, rows):
    """rows: list of (sample_id, backbone_path, ligand_path, feature_path)."""
    lines = ["\t".join(str(c) for c in row) for row in rows]
    path.write_text("\n".join(lines) + "\n")
