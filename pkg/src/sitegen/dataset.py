"""Manifest-driven dataset assembly: files -> ComplexSample instances."""

from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from . import moldata


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    sample_id: str
    backbone_path: str
    ligand_path: str
    feature_path: str | None = None


def parse_manifest(text, base_dir="."):
    """One sample per line: backbone ligand [features|-] id, whitespace
    separated.  Paths resolve relative to the manifest's directory."""
    entries = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#")[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) == 3:
            backbone, ligand, sample_id = parts
            feature = None
        elif len(parts) == 4:
            backbone, ligand, feature, sample_id = parts
            if feature == "-":
                feature = None
        else:
            raise ManifestError(
                f"manifest line {lineno}: expected 3 or 4 fields, got {len(parts)}"
            )
        resolve = lambda p: p if os.path.isabs(p) else os.path.join(base_dir, p)
        entries.append(
            ManifestEntry(
                sample_id=sample_id,
                backbone_path=resolve(backbone),
                ligand_path=resolve(ligand),
                feature_path=resolve(feature) if feature else None,
            )
        )
    if not entries:
        raise ManifestError("manifest lists no samples")
    ids = [e.sample_id for e in entries]
    if len(set(ids)) != len(ids):
        dupes = sorted({i for i in ids if ids.count(i) > 1})
        raise ManifestError(f"duplicate sample ids {dupes}")
    return entries


def load_manifest(path):
    with open(path) as fh:
        return parse_manifest(fh.read(), base_dir=os.path.dirname(path) or ".")


@dataclass
class LoadedComplex:
    entry: ManifestEntry
    protein: moldata.PocketBackbone
    ligand: moldata.LigandGraph
    warnings: int = 0


def load_complex(entry):
    with open(entry.backbone_path) as fh:
        protein, warnings = moldata.parse_backbone(fh.read())
    with open(entry.ligand_path) as fh:
        ligand_text = fh.read()
    features = None
    if entry.feature_path:
        raw = moldata.parse_ligand(ligand_text)
        with open(entry.feature_path) as fh:
            features = moldata.parse_feature_file(fh.read(), len(raw))
    ligand = moldata.parse_ligand(ligand_text, features=features)
    if ligand.components.max() > 0:
        ligand = moldata.group_multiligand(moldata.split_components(ligand))
    return LoadedComplex(entry=entry, protein=protein, ligand=ligand)


def make_sample(loaded, pocket_mode, rng, sigma_d=0.5, sigma_c=0.2):
    """Extract a pocket and build the training/inference unit.

    Noise is drawn from `rng`, so pockets differ across epochs; pass a
    freshly seeded generator for reproducible inference.
    """
    extract = (
        moldata.extract_distance_pocket
        if pocket_mode == "distance"
        else moldata.extract_radius_pocket
    )
    pocket = extract(
        loaded.protein, loaded.ligand.coords, rng,
        sigma_d=sigma_d, sigma_c=sigma_c, complex_id=loaded.entry.sample_id,
    )
    mask = moldata.contact_mask(pocket, loaded.ligand.coords)
    if not mask.any():
        raise moldata.PocketError(
            f"no contact residues for complex {loaded.entry.sample_id!r}"
        )
    return moldata.ComplexSample(
        ligand=loaded.ligand,
        pocket=pocket,
        contact_mask=mask,
        sample_id=loaded.entry.sample_id,
    )


def load_dataset(manifest_path):
    """Parse every complex up front; returns (loaded list, skipped id list)."""
    entries = load_manifest(manifest_path)
    loaded, skipped = [], []
    for entry in entries:
        try:
            loaded.append(load_complex(entry))
        except (OSError, moldata.ParseError):
            skipped.append(entry.sample_id)
    if entries and len(skipped) > len(entries) / 2:
        raise ManifestError(
            f"{len(skipped)} of {len(entries)} samples unreadable: {skipped[:5]}"
        )
    return loaded, skipped
