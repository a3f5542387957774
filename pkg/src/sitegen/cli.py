"""Command-line surface: train, sample, eval, prior, trace."""

from __future__ import annotations

import argparse
import os
import sys

import numpy as np

from . import checkpoint as ckpt
from . import chem, dataset, flow, metrics, moldata, report
from .config import ConfigError, load_config
from .equinet import EquiNetConfig
from .invnet import InvNetConfig
from .model import MODE_DESIGN, SiteModel


class CliError(RuntimeError):
    pass


def build_model(cfg):
    equi = EquiNetConfig(
        layers=cfg.layers, n_scalar=cfg.n_scalar, n_vector=cfg.n_vector
    )
    inv = InvNetConfig(layers=cfg.inv_layers, hidden=cfg.hidden)
    return SiteModel(mode=cfg.mode, equi_cfg=equi, inv_cfg=inv, seed=cfg.seed)


def _sample_rng(cfg, sample_id, salt=0):
    """Deterministic per-complex generator so sampling and eval agree on the
    extracted pocket."""
    return np.random.default_rng(
        [cfg.seed, salt] + list(sample_id.encode())
    )


def _pose_lines(ligand, coords):
    lines = []
    for i in range(len(ligand)):
        sym = moldata._symbol(ligand.elements[i])
        name = f"{sym}{i + 1}"[:4]
        x, y, z = coords[i]
        lines.append(
            f"HETATM{i + 1:>5d} {name:<4s} LIG L   1    "
            f"{x:8.3f}{y:8.3f}{z:8.3f}  1.00  0.00          {sym:>2s}"
        )
    return lines


def write_pose(path, ligand, coords):
    with open(path, "w") as fh:
        fh.write("\n".join(_pose_lines(ligand, coords)) + "\n")


def read_pose_coords(path):
    coords = []
    with open(path) as fh:
        for line in fh:
            if line.startswith("HETATM"):
                coords.append(
                    [float(line[30:38]), float(line[38:46]), float(line[46:54])]
                )
    if not coords:
        raise moldata.ParseError(f"no HETATM records in {path}")
    return np.array(coords)


def _loaded_by_id(loaded, sample_id):
    by_id = {lc.entry.sample_id: lc for lc in loaded}
    if sample_id not in by_id:
        raise CliError(
            f"unknown complex id {sample_id!r}; available: {sorted(by_id)}"
        )
    return by_id[sample_id]


def _sequence(types):
    return "".join(chem.AA_ORDER[t] for t in types)


def cmd_train(cfg, out_dir):
    loaded, skipped = dataset.load_dataset(cfg.manifest)
    model = build_model(cfg)
    rng = np.random.default_rng(cfg.seed)
    log_path = os.path.join(out_dir, "loss_log.tsv")
    if os.path.exists(log_path):
        os.remove(log_path)
    columns = ["epoch", "l_cfm", "l_refine"]
    if cfg.mode == MODE_DESIGN:
        columns += ["l_type", "l_torsion"]
    columns += ["total", "skipped"]

    best_score = -np.inf
    skip_warnings = 0
    for epoch in range(1, cfg.epochs + 1):
        samples = []
        epoch_skipped = 0
        for lc in loaded:
            use_fake = (
                cfg.fake_ligand_prob > 0
                and rng.uniform() < cfg.fake_ligand_prob
            )
            sample = None
            if use_fake:
                sample = moldata.make_fake_ligand(
                    lc.protein, rng, complex_id=f"{lc.entry.sample_id}:fake"
                )
            if sample is None:
                try:
                    sample = dataset.make_sample(lc, cfg.pocket_mode, rng)
                except moldata.PocketError:
                    epoch_skipped += 1
                    continue
            samples.append(sample)
        if len(samples) < max(1, len(loaded) / 2):
            raise CliError(
                f"epoch {epoch}: {epoch_skipped} of {len(loaded)} samples unusable"
            )
        skip_warnings += epoch_skipped

        order = rng.permutation(len(samples))
        reports = []
        for start in range(0, len(order), cfg.batch_size):
            batch = [samples[i] for i in order[start : start + cfg.batch_size]]
            reports.append(
                flow.train_step(
                    batch, model, rng, sigma=cfg.sigma,
                    weights=cfg.weights(), lr=cfg.lr,
                )
            )
        row = {"epoch": epoch, "skipped": epoch_skipped}
        for key in ("l_cfm", "l_refine", "l_type", "l_torsion", "total"):
            vals = [getattr(r, key) if key != "total" else r.total for r in reports]
            row[key] = float(np.mean(vals))
        report.append_row(log_path, row, columns)

        if epoch % cfg.val_every == 0 or epoch == cfg.epochs:
            score = _validate(cfg, model, loaded, epoch)
            if score >= best_score:
                best_score = score
                _save(cfg, model, rng, epoch, os.path.join(out_dir, "best.ckpt"))
    _save(cfg, model, rng, cfg.epochs, os.path.join(out_dir, "last.ckpt"))
    report.plot_loss_curve(log_path, os.path.join(out_dir, "loss_curve.png"))
    print(f"trained {cfg.epochs} epochs; best validation score {best_score:.4f}")
    if skip_warnings or skipped:
        print(f"warning: {skip_warnings + len(skipped)} samples skipped in total")


def _validate(cfg, model, loaded, epoch):
    """One inference pass per complex; %<2 A for docking, contact recovery
    for design."""
    scores = []
    for lc in loaded:
        rng = _sample_rng(cfg, lc.entry.sample_id, salt=epoch)
        try:
            sample = dataset.make_sample(lc, cfg.pocket_mode, rng)
        except moldata.PocketError:
            continue
        _, x1, probs = flow.euler_integrate(model, sample, steps=cfg.steps, rng=rng)
        if cfg.mode == MODE_DESIGN and probs is not None:
            pred = probs.argmax(axis=1)
            scores.append(
                metrics.sequence_recovery(
                    sample.pocket.types(), pred, sample.contact_mask
                )
            )
        else:
            scores.append(float(metrics.rmsd(x1, sample.ligand.coords) < 2.0))
    return float(np.mean(scores)) if scores else 0.0


def _save(cfg, model, rng, epoch, path):
    snapshot = cfg.to_dict()
    snapshot.pop("out_dir")  # run-local, would break byte-identical reruns
    ckpt.save_checkpoint(
        path, model.parameters(), config=snapshot, epoch=epoch,
        rng_state=ckpt.rng_state(rng),
    )


def _load_model(cfg, path):
    if not path:
        raise CliError("no checkpoint given (--checkpoint or config)")
    model = build_model(cfg)
    header = ckpt.load_checkpoint(path, model.parameters())
    return model, header


def cmd_sample(cfg, out_dir, checkpoint_path, sample_id, count):
    model, _ = _load_model(cfg, checkpoint_path)
    loaded, _ = dataset.load_dataset(cfg.manifest)
    lc = _loaded_by_id(loaded, sample_id)
    written = []
    for i in range(count):
        rng = np.random.default_rng([cfg.seed + i] + list(sample_id.encode()))
        pocket_rng = _sample_rng(cfg, sample_id)
        sample = dataset.make_sample(lc, cfg.pocket_mode, pocket_rng)
        _, x1, probs = flow.euler_integrate(model, sample, steps=cfg.steps, rng=rng)
        pose_path = os.path.join(out_dir, f"{sample_id}_{i:03d}.pose")
        write_pose(pose_path, sample.ligand, x1)
        written.append(pose_path)
        if cfg.mode == MODE_DESIGN and probs is not None:
            seq_path = os.path.join(out_dir, f"{sample_id}_{i:03d}.seq")
            with open(seq_path, "w") as fh:
                fh.write(_sequence(probs.argmax(axis=1)) + "\n")
            written.append(seq_path)
    print(f"wrote {len(written)} files for {sample_id} to {out_dir}")


def cmd_eval(cfg, out_dir, predictions_dir, manifest_path):
    loaded, _ = dataset.load_dataset(manifest_path or cfg.manifest)
    if not os.path.isdir(predictions_dir):
        raise CliError(f"predictions directory {predictions_dir!r} does not exist")
    names = sorted(os.listdir(predictions_dir))
    rows = []
    per_complex = []
    all_rmsds = []
    missing = []
    failed = 0
    for lc in loaded:
        sid = lc.entry.sample_id
        poses = [n for n in names if n.startswith(f"{sid}_") and n.endswith(".pose")]
        if not poses:
            missing.append(sid)
            continue
        pocket_rng = _sample_rng(cfg, sid)
        sample = dataset.make_sample(lc, cfg.pocket_mode, pocket_rng)
        rmsds = []
        recov, blos = [], []
        for name in poses:
            try:
                coords = read_pose_coords(os.path.join(predictions_dir, name))
                r = metrics.rmsd(coords, sample.ligand.coords)
            except (moldata.ParseError, ValueError):
                failed += 1
                rows.append(
                    {"sample_id": f"{sid}:{name}", "rmsd": float("nan"),
                     "recovery": float("nan"), "blosum": float("nan"),
                     "status": "failed"}
                )
                continue
            rmsds.append(r)
            seq_name = name[: -len(".pose")] + ".seq"
            rec = metrics.EvalRecord(sample_id=f"{sid}:{name}", rmsd=r)
            if seq_name in names:
                with open(os.path.join(predictions_dir, seq_name)) as fh:
                    seq = fh.read().strip()
                if len(seq) == len(sample.pocket) and set(seq) <= set(chem.AA_ORDER):
                    pred = np.array([chem.AA_INDEX[c] for c in seq], dtype=np.intp)
                    rec.recovery = metrics.sequence_recovery(
                        sample.pocket.types(), pred, sample.contact_mask
                    )
                    rec.blosum = metrics.blosum_score(
                        sample.pocket.types(), pred, sample.contact_mask
                    )
                    recov.append(rec.recovery)
                    blos.append(rec.blosum)
                else:
                    failed += 1
            row = rec.row()
            row["status"] = "ok"
            rows.append(row)
        if rmsds:
            per_complex.append(rmsds)
            all_rmsds.extend(rmsds)

    columns = ["sample_id", "rmsd", "recovery", "blosum", "status"]
    report.write_table(os.path.join(out_dir, "eval_samples.tsv"), rows, columns)
    records = [
        metrics.EvalRecord(
            sample_id=r["sample_id"], rmsd=r["rmsd"],
            recovery=r.get("recovery", float("nan")),
            blosum=r.get("blosum", float("nan")),
        )
        for r in rows
    ]
    summary = metrics.summarize(records, per_complex_rmsds=per_complex)
    summary["failed"] = failed
    summary["missing"] = len(missing)
    report.write_table(
        os.path.join(out_dir, "eval_summary.tsv"), [summary], list(summary)
    )
    if all_rmsds:
        report.plot_rmsd_histogram(
            all_rmsds, os.path.join(out_dir, "rmsd_histogram.png")
        )
    for key, val in summary.items():
        print(f"{key}\t{report.format_value(val)}")
    if missing:
        print(f"missing predictions for: {missing}", file=sys.stderr)
        return 1
    return 0


def cmd_prior(cfg, out_dir, sample_id, count):
    loaded, _ = dataset.load_dataset(cfg.manifest)
    lc = _loaded_by_id(loaded, sample_id)
    pocket_rng = _sample_rng(cfg, sample_id)
    sample = dataset.make_sample(lc, cfg.pocket_mode, pocket_rng)
    rng = np.random.default_rng(cfg.seed)
    from .prior import harmonic_prior_sample

    bond_pairs = np.argwhere(np.triu(sample.ligand.bonds))
    sq_dists = []
    for i in range(count):
        x0 = harmonic_prior_sample(sample.ligand, sample.pocket.center, rng)
        if i < 100:  # cap file output; statistics use every draw
            write_pose(
                os.path.join(out_dir, f"{sample_id}_prior{i:03d}.pose"),
                sample.ligand, x0,
            )
        if len(bond_pairs):
            d = x0[bond_pairs[:, 0]] - x0[bond_pairs[:, 1]]
            sq_dists.append((d**2).sum(axis=1).mean())
    if sq_dists:
        print(f"mean bonded-pair squared distance\t{np.mean(sq_dists):.6g}")
    else:
        print("ligand has no bonds")


def cmd_trace(cfg, out_dir, checkpoint_path, sample_id):
    model, _ = _load_model(cfg, checkpoint_path)
    loaded, _ = dataset.load_dataset(cfg.manifest)
    lc = _loaded_by_id(loaded, sample_id)
    rng = np.random.default_rng([cfg.seed] + list(sample_id.encode()))
    pocket_rng = _sample_rng(cfg, sample_id)
    sample = dataset.make_sample(lc, cfg.pocket_mode, pocket_rng)
    trajectory, _, _ = flow.euler_integrate(model, sample, steps=cfg.steps, rng=rng)
    rows = flow.entropy_trace(trajectory)
    table = [
        {"t": t, "rmsd_to_final": r, "mean_entropy": e} for t, r, e in rows
    ]
    report.write_table(
        os.path.join(out_dir, f"{sample_id}_trace.tsv"), table,
        ["t", "rmsd_to_final", "mean_entropy"],
    )
    report.plot_trace(rows, os.path.join(out_dir, f"{sample_id}_trace.png"))
    print(f"wrote {len(rows)} trace rows for {sample_id}")


def _add_common(p):
    p.add_argument("--config", help="key=value config file")
    p.add_argument("--seed", type=int, help="base random seed")
    p.add_argument("--out", default=None, help="output directory")
    p.add_argument("--manifest", help="complex manifest file")
    p.add_argument(
        "--set", action="append", default=[], metavar="KEY=VALUE",
        help="override any config field",
    )


def _make_config(args):
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, _, val = item.partition("=")
        overrides[key.strip()] = val.strip()
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.manifest:
        overrides["manifest"] = args.manifest
    if args.out:
        overrides["out_dir"] = args.out
    return load_config(args.config, overrides)


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="sitegen",
        description="Flow-matching ligand pose generation and pocket design.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train a model from a manifest")
    _add_common(p)

    p = sub.add_parser("sample", help="generate poses for one complex")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--id", required=True, dest="sample_id")
    p.add_argument("--count", type=int, default=10)

    p = sub.add_parser("eval", help="score predictions against ground truth")
    _add_common(p)
    p.add_argument("--predictions", required=True)

    p = sub.add_parser("prior", help="draw harmonic prior samples")
    _add_common(p)
    p.add_argument("--id", required=True, dest="sample_id")
    p.add_argument("--count", type=int, default=1000)

    p = sub.add_parser("trace", help="per-step inference trajectory analysis")
    _add_common(p)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--id", required=True, dest="sample_id")

    args = parser.parse_args(argv)
    try:
        cfg = _make_config(args)
        out_dir = args.out or cfg.out_dir
        os.makedirs(out_dir, exist_ok=True)
        if args.command == "train":
            cmd_train(cfg, out_dir)
        elif args.command == "sample":
            cmd_sample(cfg, out_dir, args.checkpoint, args.sample_id, args.count)
        elif args.command == "eval":
            return cmd_eval(cfg, out_dir, args.predictions, cfg.manifest)
        elif args.command == "prior":
            cmd_prior(cfg, out_dir, args.sample_id, args.count)
        elif args.command == "trace":
            cmd_trace(cfg, out_dir, args.checkpoint, args.sample_id)
    except (ConfigError, CliError, dataset.ManifestError, moldata.ParseError,
            moldata.PocketError, ckpt.CheckpointError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
