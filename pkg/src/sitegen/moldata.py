"""Structure-file parsing, ligand/protein graphs, pockets, and splits.

File formats are the fixed-column ATOM/HETATM/CONECT text records: atom name
in columns 13-16, resname 18-20, chain 22, resseq 23-26, coordinates in
columns 31-38 / 39-46 / 47-54 (Angstrom), element in 77-78 when present.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import chem

CONTACT_CUTOFF = 4.0  # heavy-atom contact distance, Angstrom

# Ligand atom feature layout: ten feature groups in 15 columns.
# 0 atomic number, 1 chirality, 2 degree, 3 formal charge, 4 implicit
# valence, 5 hydrogen count, 6 hybridization code, 7 aromatic flag,
# 8 ring count, 9..14 ring-size-5/6 membership flags.
NUM_LIGAND_FEATURES = 15


class ParseError(ValueError):
    pass


class PocketError(ValueError):
    pass


@dataclass
class Residue:
    rtype: int  # 0..19, or chem.MASK_TYPE when unknown
    chain: str
    resseq: int
    n: np.ndarray
    ca: np.ndarray
    c: np.ndarray
    o: np.ndarray
    sidechain: np.ndarray = field(default_factory=lambda: np.zeros((0, 3)))
    sidechain_elements: tuple = ()

    def backbone(self):
        return np.stack([self.n, self.ca, self.c, self.o])

    def heavy_atoms(self):
        return np.concatenate([self.backbone(), self.sidechain], axis=0)


@dataclass
class PocketBackbone:
    residues: list
    center: np.ndarray | None = None

    def __post_init__(self):
        by_chain = {}
        for r in self.residues:
            prev = by_chain.get(r.chain)
            if prev is not None and r.resseq <= prev:
                raise ParseError(
                    f"residue order not increasing in chain {r.chain} at {r.resseq}"
                )
            by_chain[r.chain] = r.resseq

    def __len__(self):
        return len(self.residues)

    def ca_coords(self):
        return np.stack([r.ca for r in self.residues])

    def backbone_coords(self):
        return np.stack([r.backbone() for r in self.residues])

    def types(self):
        return np.array([r.rtype for r in self.residues], dtype=np.intp)

    def subset(self, keep):
        return PocketBackbone([self.residues[i] for i in keep], center=self.center)


@dataclass
class LigandGraph:
    elements: np.ndarray  # atomic numbers, (n,)
    features: np.ndarray  # (n, NUM_LIGAND_FEATURES)
    bonds: np.ndarray  # symmetric boolean adjacency, zero diagonal
    components: np.ndarray = None  # filled from bonds when omitted
    coords: np.ndarray | None = None

    def __post_init__(self):
        n = len(self.elements)
        if n < 1:
            raise ParseError("ligand has zero heavy atoms")
        self.bonds = np.asarray(self.bonds, dtype=bool)
        if self.bonds.shape != (n, n):
            raise ParseError(f"adjacency shape {self.bonds.shape} for {n} atoms")
        if not np.array_equal(self.bonds, self.bonds.T) or self.bonds.diagonal().any():
            raise ParseError("adjacency must be symmetric with zero diagonal")
        if self.components is None:
            self.components = connected_components(self.bonds)

    def __len__(self):
        return len(self.elements)

    def laplacian(self):
        a = self.bonds.astype(np.float64)
        return np.diag(a.sum(axis=1)) - a


@dataclass
class RadiusGraph:
    """Edge lists per kind; cross edges are atom-to-Calpha distances."""

    ll: np.ndarray  # (E, 2) int pairs, both directions stored
    pp: np.ndarray
    lp: np.ndarray  # ligand -> protein
    pl: np.ndarray  # protein -> ligand
    ll_dist: np.ndarray
    pp_dist: np.ndarray
    lp_dist: np.ndarray
    pl_dist: np.ndarray


@dataclass
class ComplexSample:
    ligand: LigandGraph  # coords hold the ground-truth pose
    pocket: PocketBackbone
    contact_mask: np.ndarray
    sample_id: str
    torsions: np.ndarray | None = None  # (L, 4) radians, NaN where undefined


def connected_components(adj):
    """Union-find over a boolean adjacency; returns component id per node."""
    n = adj.shape[0]
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i, j in zip(*np.nonzero(adj)):
        ri, rj = find(int(i)), find(int(j))
        if ri != rj:
            parent[ri] = rj
    roots = [find(i) for i in range(n)]
    relabel = {}
    out = np.empty(n, dtype=np.intp)
    for i, r in enumerate(roots):
        out[i] = relabel.setdefault(r, len(relabel))
    return out


def _parse_coords(line, lineno):
    try:
        return np.array(
            [float(line[30:38]), float(line[38:46]), float(line[46:54])]
        )
    except (ValueError, IndexError):
        raise ParseError(f"unparsable coordinates on line {lineno}")


def _element_of(line):
    elem = line[76:78].strip() if len(line) >= 78 else ""
    if not elem:
        name = line[12:16].strip()
        stripped = "".join(c for c in name if c.isalpha())
        if stripped[:2].upper() in chem.ATOMIC_NUMBER and len(stripped) > 1:
            elem = stripped[:2]
        else:
            elem = stripped[:1]
    return elem.upper()


def parse_backbone(text):
    """Assemble residues from fixed-column ATOM records.

    Only N/CA/C/O records define the backbone; other heavy atoms are kept as
    side-chain atoms.  Residues missing any backbone atom are dropped.
    Returns (PocketBackbone, warning_count).
    """
    rows = {}
    order = []
    rejected = 0
    total = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if not line.startswith("ATOM"):
            continue
        total += 1
        altloc = line[16]
        if altloc not in (" ", "A"):
            continue
        try:
            xyz = _parse_coords(line, lineno)
        except ParseError:
            rejected += 1
            continue
        name = line[12:16].strip()
        elem = _element_of(line)
        if elem == "H":
            continue
        resname = line[17:20].strip()
        chain = line[21]
        try:
            resseq = int(line[22:26])
        except ValueError:
            rejected += 1
            continue
        key = (chain, resseq)
        if key not in rows:
            rows[key] = {"resname": resname, "atoms": {}, "side": [], "side_el": []}
            order.append(key)
        if name in ("N", "CA", "C", "O"):
            rows[key]["atoms"][name] = xyz
        else:
            rows[key]["side"].append(xyz)
            rows[key]["side_el"].append(elem)
    if total and rejected / total > 0.10:
        raise ParseError(f"{rejected} of {total} ATOM records rejected")

    residues = []
    warnings = 0
    for key in order:
        rec = rows[key]
        if any(a not in rec["atoms"] for a in ("N", "CA", "C", "O")):
            warnings += 1
            continue
        one = chem.THREE_TO_ONE.get(rec["resname"])
        rtype = chem.AA_INDEX[one] if one else chem.MASK_TYPE
        side = (
            np.stack(rec["side"]) if rec["side"] else np.zeros((0, 3))
        )
        residues.append(
            Residue(
                rtype=rtype,
                chain=key[0],
                resseq=key[1],
                n=rec["atoms"]["N"],
                ca=rec["atoms"]["CA"],
                c=rec["atoms"]["C"],
                o=rec["atoms"]["O"],
                sidechain=side,
                sidechain_elements=tuple(rec["side_el"]),
            )
        )
    if not residues:
        raise ParseError("no complete residues found")
    return PocketBackbone(residues), warnings


def infer_bonds(elements, coords):
    """Bond iff distance < 1.3 x (sum of covalent radii)."""
    n = len(elements)
    radii = np.array([chem.COVALENT_RADIUS.get(_symbol(e), chem.DEFAULT_COVALENT_RADIUS) for e in elements])
    d = np.linalg.norm(coords[:, None] - coords[None, :], axis=-1)
    cutoff = chem.BOND_INFERENCE_FACTOR * (radii[:, None] + radii[None, :])
    bonds = d < cutoff
    np.fill_diagonal(bonds, False)
    return bonds


_NUM_TO_SYMBOL = {v: k for k, v in chem.ATOMIC_NUMBER.items()}


def _symbol(atomic_number):
    return _NUM_TO_SYMBOL.get(int(atomic_number), "C")


def parse_ligand(text, features=None):
    """Ligand graph from HETATM plus optional CONECT records.

    Waters are excluded.  Without CONECT records, bonds are inferred from
    covalent radii.  Chemistry-perception feature slots stay zero unless a
    side-channel feature array is supplied.
    """
    serials = []
    elements = []
    coords = []
    conect = []
    have_conect = False
    rejected = 0
    total = 0
    for lineno, line in enumerate(text.splitlines(), start=1):
        if line.startswith("CONECT"):
            ints = [int(tok) for tok in line[6:].split() if tok.lstrip("-").isdigit()]
            if len(ints) >= 2:
                have_conect = True
                conect.append(ints)
            continue
        if not line.startswith("HETATM"):
            continue
        total += 1
        if line[17:20].strip() == "HOH":
            continue
        elem = _element_of(line)
        if elem == "H":
            continue
        try:
            xyz = _parse_coords(line, lineno)
            serial = int(line[6:11])
        except (ParseError, ValueError):
            rejected += 1
            continue
        serials.append(serial)
        elements.append(chem.atomic_number(elem))
        coords.append(xyz)
    if total and rejected / total > 0.10:
        raise ParseError(f"{rejected} of {total} HETATM records rejected")
    if not elements:
        raise ParseError("ligand has zero heavy atoms")

    n = len(elements)
    coords = np.stack(coords)
    elements = np.array(elements, dtype=np.intp)
    index_of = {s: i for i, s in enumerate(serials)}
    if have_conect:
        bonds = np.zeros((n, n), dtype=bool)
        for ints in conect:
            a = index_of.get(ints[0])
            if a is None:
                continue
            for s in ints[1:]:
                b = index_of.get(s)
                if b is not None and b != a:
                    bonds[a, b] = bonds[b, a] = True
    else:
        bonds = infer_bonds(elements, coords)

    feats = np.zeros((n, NUM_LIGAND_FEATURES))
    if features is not None:
        features = np.asarray(features, dtype=np.float64)
        if features.shape != (n, NUM_LIGAND_FEATURES):
            raise ParseError(
                f"feature array shape {features.shape}, expected {(n, NUM_LIGAND_FEATURES)}"
            )
        feats = features.copy()
    feats[:, 0] = elements
    feats[:, 2] = bonds.sum(axis=1)
    return LigandGraph(elements=elements, features=feats, bonds=bonds, coords=coords)


def parse_feature_file(text, n_atoms):
    """Side-channel feature table: one line per atom, index then 15 values."""
    feats = np.zeros((n_atoms, NUM_LIGAND_FEATURES))
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#")[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) != NUM_LIGAND_FEATURES + 1:
            raise ParseError(
                f"feature line {lineno}: expected {NUM_LIGAND_FEATURES + 1} fields, got {len(parts)}"
            )
        idx = int(parts[0])
        if not 0 <= idx < n_atoms:
            raise ParseError(f"feature line {lineno}: atom index {idx} out of range")
        feats[idx] = [float(p) for p in parts[1:]]
    return feats


def split_components(ligand):
    """Break a parsed ligand into its connected molecules."""
    out = []
    for cid in range(ligand.components.max() + 1):
        keep = np.nonzero(ligand.components == cid)[0]
        out.append(
            LigandGraph(
                elements=ligand.elements[keep],
                features=ligand.features[keep],
                bonds=ligand.bonds[np.ix_(keep, keep)],
                coords=None if ligand.coords is None else ligand.coords[keep],
            )
        )
    return out


def group_multiligand(ligands, primary=0):
    """Merge molecules into one multi-ligand by single-linkage on the 4 A
    heavy-atom pair relation; returns the group containing `primary`."""
    m = len(ligands)
    adj = np.zeros((m, m), dtype=bool)
    for i in range(m):
        for j in range(i + 1, m):
            d = np.linalg.norm(
                ligands[i].coords[:, None] - ligands[j].coords[None, :], axis=-1
            )
            adj[i, j] = adj[j, i] = d.min() <= CONTACT_CUTOFF
    groups = connected_components(adj)
    members = [i for i in range(m) if groups[i] == groups[primary]]

    sizes = [len(ligands[i]) for i in members]
    total = sum(sizes)
    bonds = np.zeros((total, total), dtype=bool)
    offset = 0
    elements, feats, coords = [], [], []
    for i in members:
        k = len(ligands[i])
        bonds[offset : offset + k, offset : offset + k] = ligands[i].bonds
        elements.append(ligands[i].elements)
        feats.append(ligands[i].features)
        coords.append(ligands[i].coords)
        offset += k
    return LigandGraph(
        elements=np.concatenate(elements),
        features=np.concatenate(feats),
        bonds=bonds,
        coords=np.concatenate(coords),
    )


def contact_mask(pocket, ligand_coords):
    """Residues with any heavy atom within 4 A of a ligand heavy atom."""
    mask = np.zeros(len(pocket), dtype=bool)
    for i, r in enumerate(pocket.residues):
        d = np.linalg.norm(r.heavy_atoms()[:, None] - ligand_coords[None, :], axis=-1)
        mask[i] = d.min() <= CONTACT_CUTOFF
    return mask


def _pocket_center(ca, noisy_dist, sigma_c, rng):
    close = noisy_dist < 8.0
    if not close.any():
        # fall back to the nearest residue so the center stays defined
        close = noisy_dist == noisy_dist.min()
    center = ca[close].mean(axis=0)
    if sigma_c > 0:
        center = center + rng.normal(scale=sigma_c, size=3)
    return center


def extract_distance_pocket(protein, ligand_coords, rng, sigma_d=0.5, sigma_c=0.2,
                            complex_id=""):
    """Residues whose noisy min Calpha-to-ligand distance is below 14 A."""
    ca = protein.ca_coords()
    dist = np.linalg.norm(ca[:, None] - ligand_coords[None, :], axis=-1).min(axis=1)
    noisy = dist + (rng.normal(scale=sigma_d, size=len(dist)) if sigma_d > 0 else 0.0)
    keep = np.nonzero(noisy < 14.0)[0]
    if len(keep) == 0:
        raise PocketError(f"empty distance pocket for complex {complex_id!r}")
    pocket = protein.subset(keep)
    pocket.center = _pocket_center(ca, noisy, sigma_c, rng)
    return pocket


def extract_radius_pocket(protein, ligand_coords, rng, sigma_d=0.5, sigma_c=0.2,
                          complex_id=""):
    """Residues within 7 + min(5, diameter/2) A of the true 8 A contact
    center, under noisy distances."""
    ca = protein.ca_coords()
    dist = np.linalg.norm(ca[:, None] - ligand_coords[None, :], axis=-1).min(axis=1)
    close = dist <= 8.0
    if not close.any():
        close = dist == dist.min()
    com = ca[close].mean(axis=0)
    diameter = 0.0
    if len(ligand_coords) > 1:
        diameter = np.linalg.norm(
            ligand_coords[:, None] - ligand_coords[None, :], axis=-1
        ).max()
    radius = 7.0 + min(5.0, diameter / 2.0)
    center_dist = np.linalg.norm(ca - com, axis=-1)
    noisy = center_dist + (
        rng.normal(scale=sigma_d, size=len(ca)) if sigma_d > 0 else 0.0
    )
    keep = np.nonzero(noisy < radius)[0]
    if len(keep) == 0:
        raise PocketError(f"empty radius pocket for complex {complex_id!r}")
    pocket = protein.subset(keep)
    noisy_lig = dist + (rng.normal(scale=sigma_d, size=len(dist)) if sigma_d > 0 else 0.0)
    pocket.center = _pocket_center(ca, noisy_lig, sigma_c, rng)
    return pocket


def build_radius_graph(ligand_coords, pocket):
    """Edges at <= 50 A within a molecule kind and <= 30 A across."""
    ca = pocket.ca_coords()
    nl, np_ = len(ligand_coords), len(ca)

    def pairs(xa, xb, cutoff, exclude_self):
        d = np.linalg.norm(xa[:, None] - xb[None, :], axis=-1)
        keep = d <= cutoff
        if exclude_self:
            np.fill_diagonal(keep, False)
        idx = np.argwhere(keep)
        return idx, d[keep]

    ll, ll_d = pairs(ligand_coords, ligand_coords, 50.0, True)
    pp, pp_d = pairs(ca, ca, 50.0, True)
    lp, lp_d = pairs(ligand_coords, ca, 30.0, False)
    pl = lp[:, ::-1].copy()
    return RadiusGraph(
        ll=ll, pp=pp, lp=lp, pl=pl,
        ll_dist=ll_d, pp_dist=pp_d, lp_dist=lp_d, pl_dist=lp_d.copy(),
    )


FAKE_LIGAND_WINDOW = 7
FAKE_LIGAND_MIN_CONTACTS = 4


def make_fake_ligand(protein, rng, complex_id="fake"):
    """Turn one well-buried residue into a training ligand.

    Candidates need >= 4 other residues with a heavy atom within 4 A,
    not counting residues within +-7 chain positions.  The chosen residue
    and its window are removed from the returned pocket.
    """
    residues = protein.residues
    n = len(residues)
    heavy = [r.heavy_atoms() for r in residues]

    def in_window(a, b):
        return (
            residues[a].chain == residues[b].chain
            and abs(residues[a].resseq - residues[b].resseq) <= FAKE_LIGAND_WINDOW
        )

    candidates = []
    for i in range(n):
        contacts = 0
        for j in range(n):
            if i == j or in_window(i, j):
                continue
            d = np.linalg.norm(heavy[i][:, None] - heavy[j][None, :], axis=-1)
            if d.min() <= CONTACT_CUTOFF:
                contacts += 1
        if contacts >= FAKE_LIGAND_MIN_CONTACTS:
            candidates.append(i)
    if not candidates:
        return None

    chosen = candidates[int(rng.integers(len(candidates)))]
    res = residues[chosen]
    # drop backbone N and O; keep C, CA, and the side chain
    coords = np.concatenate([np.stack([res.c, res.ca]), res.sidechain])
    elements = np.array(
        [6, 6] + [chem.atomic_number(e) for e in res.sidechain_elements], dtype=np.intp
    )
    bonds = infer_bonds(elements, coords)
    feats = np.zeros((len(elements), NUM_LIGAND_FEATURES))
    feats[:, 0] = elements
    feats[:, 2] = bonds.sum(axis=1)
    ligand = LigandGraph(elements=elements, features=feats, bonds=bonds, coords=coords)

    keep = [j for j in range(n) if j != chosen and not in_window(chosen, j)]
    if not keep:
        return None
    pocket = protein.subset(keep)
    mask = contact_mask(pocket, coords)
    if not mask.any():
        return None
    return ComplexSample(
        ligand=ligand, pocket=pocket, contact_mask=mask, sample_id=complex_id
    )


def _global_alignment_identity(a, b):
    """Needleman-Wunsch with match +1, mismatch 0, linear gap -1; identity is
    matches over alignment length."""
    la, lb = len(a), len(b)
    score = np.zeros((la + 1, lb + 1))
    score[:, 0] = -np.arange(la + 1)
    score[0, :] = -np.arange(lb + 1)
    for i in range(1, la + 1):
        match = score[i - 1, :-1] + (np.frombuffer(a.encode(), dtype=np.uint8)[i - 1] ==
                                     np.frombuffer(b.encode(), dtype=np.uint8))
        for j in range(1, lb + 1):
            score[i, j] = max(match[j - 1], score[i - 1, j] - 1, score[i, j - 1] - 1)
    # traceback
    i, j = la, lb
    matches = 0
    length = 0
    while i > 0 or j > 0:
        if i > 0 and j > 0 and score[i, j] == score[i - 1, j - 1] + (a[i - 1] == b[j - 1]):
            matches += a[i - 1] == b[j - 1]
            i, j = i - 1, j - 1
        elif i > 0 and score[i, j] == score[i - 1, j] - 1:
            i -= 1
        else:
            j -= 1
        length += 1
    return matches / length if length else 0.0


def cluster_sequences(sequences, threshold=0.30):
    """Greedy longest-first clustering by global-alignment identity."""
    if not sequences:
        return []
    order = sorted(range(len(sequences)), key=lambda i: (-len(sequences[i]), i))
    reps = []  # (cluster id, representative sequence)
    labels = [None] * len(sequences)
    for idx in order:
        seq = sequences[idx]
        for cid, rep in reps:
            if _global_alignment_identity(rep, seq) >= threshold:
                labels[idx] = cid
                break
        else:
            cid = len(reps)
            reps.append((cid, seq))
            labels[idx] = cid
    return labels
