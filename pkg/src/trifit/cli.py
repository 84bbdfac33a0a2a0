"""Command-line entry point: ``trifit <subcommand> ...``."""

from __future__ import annotations

import argparse
import csv
import io
import json
import os
import sys
from pathlib import Path

import numpy as np

from . import store
from .checkpoint import Checkpoint, OptimizerState, load_checkpoint, save_checkpoint
from .core_data import binarize_by_assay, format_variant_csv, split_by_fold
from .embedding import DYNAMICS_SEED, MOCK_SEED, N_NEIGHBORS, SEQ_DIM, STRUCTURE_SEED
from .evaluation import aggregate_reports, ece, per_position_accuracy, router_utilization
from .fusion import ABLATIONS, FusionConfig, FusionModel, ablation_config
from .gnm import CROSS_CORRELATION_MODES, DEFAULT_CUTOFF, DEFAULT_N_MODES, gnm_features
from .pipeline import (
    context_sequence_embeddings,
    dynamics_embeddings,
    load_structures,
    load_variants,
    mock_sequence_embeddings,
    structure_embeddings,
)
from .structure_io import format_pdb
from .synth import SynthConfig, generate
from .trainer import EmbeddingSet, TrainConfig, jsonl_logger, make_batch, predict, train


def _default_seed() -> int:
    return int(os.environ.get("TRIFIT_SEED", "0"))


def _report_errors(errors) -> int:
    for pid, msg in errors:
        print(f"error: {pid}: {msg}", file=sys.stderr)
    if errors:
        print(f"{len(errors)} item(s) failed", file=sys.stderr)
    return 1 if errors else 0


def _write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")


# --- synth / embedding ------------------------------------------------------


def cmd_synth(args) -> int:
    out = Path(args.out)
    (out / "structures").mkdir(parents=True, exist_ok=True)
    (out / "variants").mkdir(parents=True, exist_ok=True)
    config = SynthConfig(
        n_proteins=args.n_proteins,
        variants_per_protein=args.variants_per_protein,
        seed=_default_seed() if args.seed is None else args.seed,
        mock_seed=args.mock_seed,
    )
    structures, variants, manifest = generate(config)
    for pid, s in structures.items():
        (out / "structures" / f"{pid}.pdb").write_text(format_pdb(s))
        group = [v for v in variants if v.protein_id == pid]
        (out / "variants" / f"{pid}.csv").write_text(format_variant_csv(group))
    _write_json(out / "synth_manifest.json", manifest)
    print(f"wrote {len(structures)} proteins, {len(variants)} variants to {out}", file=sys.stderr)
    return 0


def _write_store(path, modality, entries, dim) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    store.store_write(path, modality, entries, dim)
    print(f"wrote {len(entries)} {store.MODALITY_NAMES[modality]} embeddings to {path}", file=sys.stderr)


def cmd_embed_dyn(args) -> int:
    structures = load_structures(args.structures)
    variants = load_variants(args.variants)
    entries, errors = dynamics_embeddings(
        structures, variants, args.cutoff, args.modes, args.seed, args.cross_correlation
    )
    _write_store(args.out, store.DYN, entries, 256)
    if args.gnm_csv:
        _export_gnm(structures, Path(args.gnm_csv), args.cutoff, args.modes)
    return _report_errors(errors)


def _export_gnm(structures, directory: Path, cutoff, n_modes) -> None:
    directory.mkdir(parents=True, exist_ok=True)
    for pid, s in structures.items():
        try:
            g = gnm_features(s, cutoff, n_modes)
        except ValueError:
            continue
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["residue_index", "b", "s"] + [f"U{k + 1}" for k in range(n_modes)] + [f"C{k + 1}" for k in range(n_modes)])
        for i, num in enumerate(s.residue_index):
            w.writerow([int(num), repr(g.b[i]), repr(g.s[i])] + [repr(x) for x in g.U[i]] + [repr(x) for x in g.C[i]])
        (directory / f"{pid}_gnm.csv").write_text(buf.getvalue())


def cmd_embed_struct(args) -> int:
    structures = load_structures(args.structures)
    variants = load_variants(args.variants)
    entries, errors = structure_embeddings(structures, variants, args.k, args.seed)
    _write_store(args.out, store.STR, entries, 512)
    return _report_errors(errors)


def cmd_compose_seq(args) -> int:
    variants = load_variants(args.variants)
    if args.mock:
        if not args.structures:
            raise SystemExit("--mock needs --structures for the wild-type sequences")
        entries, errors = mock_sequence_embeddings(load_structures(args.structures), variants, args.mock_seed, args.dim)
        dim = args.dim
    else:
        if not (args.context and args.tokens):
            raise SystemExit("give --mock or both --context and --tokens")
        tag, dim, contexts = store.store_read(args.context)
        if tag != store.CONTEXT:
            raise SystemExit(f"{args.context} is not a context store (tag {tag})")
        tag, tdim, tokens = store.store_read(args.tokens)
        if tag != store.TOKENS or tdim != dim:
            raise SystemExit(f"{args.tokens} is not a matching token-table store")
        entries, errors = context_sequence_embeddings(contexts, store.token_table_from_entries(tokens), variants)
    _write_store(args.out, store.SEQ, entries, dim)
    return _report_errors(errors)


# --- train / eval -----------------------------------------------------------


def _load_embeddings(args) -> EmbeddingSet:
    tables = []
    for path, tag in ((args.seq, store.SEQ), (args.str, store.STR), (args.dyn, store.DYN)):
        got, _, entries = store.store_read(path)
        if got != tag:
            raise SystemExit(f"{path}: expected modality tag {tag}, found {got}")
        tables.append(entries)
    return EmbeddingSet(*tables)


def _labelled_split(args):
    records = binarize_by_assay(load_variants(args.variants), args.quantile)
    return split_by_fold(records)


def _merged_config(args) -> dict:
    """Config file values, overridden by any flag given on the command line."""
    cfg = {"train": TrainConfig(seed=_default_seed()).to_dict(), "ablate": "full", "quantile": 0.30}
    if args.config:
        user = json.loads(Path(args.config).read_text())
        cfg["train"].update(user.get("train", {}))
        for key in ("ablate", "quantile", "fusion"):
            if key in user:
                cfg[key] = user[key]
    for key in ("lr_max", "weight_decay", "epochs", "lam", "tau", "batch_size", "seed"):
        value = getattr(args, key, None)
        if value is not None:
            cfg["train"][key] = value
    if args.ablate is not None:
        cfg["ablate"] = args.ablate
    if args.quantile is not None:
        cfg["quantile"] = args.quantile
    if cfg["ablate"] == "no-ctr":
        cfg["train"]["lam"] = 0.0
    base = FusionConfig.from_dict(cfg["fusion"]) if "fusion" in cfg else None
    cfg["fusion"] = ablation_config(cfg["ablate"], base).to_dict()
    return cfg


def cmd_train(args) -> int:
    cfg = _merged_config(args)
    args.quantile = cfg["quantile"]
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "config.json", cfg)
    split = _labelled_split(args)
    embeddings = _load_embeddings(args)
    train_config = TrainConfig(**cfg["train"])
    fusion_config = FusionConfig.from_dict(cfg["fusion"])
    lines: list[str] = []
    result = train(split, embeddings, train_config, fusion_config, log=jsonl_logger(lines))
    (out / "train_log.jsonl").write_text("\n".join(lines) + "\n")
    _write_json(out / "history.json", result.history.to_dict())
    st = result.optimizer_state
    meta = {"fusion": cfg["fusion"], "train": cfg["train"], "ablate": cfg["ablate"],
            "quantile": cfg["quantile"], "best_epoch": result.history.best_epoch}
    ckpt = Checkpoint(
        seed=train_config.seed,
        meta=meta,
        params=result.model.params,
        state=OptimizerState(st["epoch"], st["step"], st["m"], st["v"]),
    )
    save_checkpoint(out / "checkpoint.tfck", ckpt)
    best = result.history.epochs[result.history.best_epoch]
    print(f"best epoch {result.history.best_epoch} val AUROC {best.val_auroc}", file=sys.stderr)
    return 0


def load_model(path) -> tuple[FusionModel, dict]:
    ckpt = load_checkpoint(path)
    config = FusionConfig.from_dict(ckpt.meta["fusion"])
    params = {k: v.astype(np.float64) for k, v in ckpt.params.items()}
    return FusionModel(config, params=params), ckpt.meta


PRED_FIELDS = ["protein_id", "position", "wt", "mut", "label", "p_functional", "w1", "w2", "w3", "w4"]


def cmd_eval(args) -> int:
    model, meta = load_model(args.checkpoint)
    if args.quantile is None:
        args.quantile = meta.get("quantile", 0.30)
    split = _labelled_split(args)
    records = getattr(split, args.split)
    if not records:
        raise SystemExit(f"split {args.split!r} is empty")
    embeddings = _load_embeddings(args)
    batch = make_batch(records, embeddings, model.config.modalities)
    probs, weights = predict(model, batch)
    report, per_assay = aggregate_reports(probs, batch.labels, [r.protein_id for r in records], args.aggregate)
    pooled, _ = aggregate_reports(probs, batch.labels, [r.protein_id for r in records], "pooled")
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(
        out / "metrics.json",
        {
            "split": args.split,
            "aggregate": args.aggregate,
            "metrics": report.to_dict(),
            "pooled": pooled.to_dict(),
            "per_assay": {k: v.to_dict() for k, v in per_assay.items()},
        },
    )
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PRED_FIELDS)
    for r, p, wr in zip(records, probs, weights):
        w.writerow([r.protein_id, r.position, r.wt, r.mut, r.label, repr(float(p))] + [repr(float(x)) for x in wr])
    (out / "predictions.csv").write_text(buf.getvalue())
    print(f"{args.split} AUROC {report.auroc:.4f} ({args.aggregate})", file=sys.stderr)
    return 0


# --- reports ----------------------------------------------------------------


def read_predictions(path):
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    probs = np.array([float(r["p_functional"]) for r in rows])
    labels = np.array([int(r["label"]) for r in rows])
    weights = np.array([[float(r[f"w{k}"]) for k in range(1, 5)] for r in rows]).reshape(-1, 4)
    return rows, probs, labels, weights


def cmd_router_report(args) -> int:
    rows, _, _, weights = read_predictions(args.predictions)
    util = router_utilization(weights, [r["protein_id"] for r in rows])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["protein_id", "n", "E1_seq_str", "E2_seq_dyn", "E3_str_dyn", "E4_trimodal"])
    counts = {}
    for r in rows:
        counts[r["protein_id"]] = counts.get(r["protein_id"], 0) + 1
    for pid, mean in util.items():
        w.writerow([pid, counts[pid]] + [repr(float(x)) for x in mean])
    out.write_text(buf.getvalue())
    return 0


def reliability_svg(report, size: int = 320) -> str:
    """Minimal reliability diagram: diagonal plus one dot per quantile bin."""
    pad = 30
    span = size - 2 * pad

    def xy(px, py):
        return pad + px * span, size - pad - py * span

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{size}" height="{size}">',
        f'<rect x="{pad}" y="{pad}" width="{span}" height="{span}" fill="none" stroke="black"/>',
        '<line x1="{0}" y1="{1}" x2="{2}" y2="{3}" stroke="gray" stroke-dasharray="4"/>'.format(*xy(0, 0), *xy(1, 1)),
    ]
    for b in report.bins:
        x, y = xy(b["mean_prob"], b["positive_rate"])
        parts.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="4" fill="steelblue"/>')
    parts.append(f'<text x="{pad}" y="{pad - 8}" font-size="12">ECE = {report.ece:.4f}</text>')
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def cmd_calibration_report(args) -> int:
    _, probs, labels, _ = read_predictions(args.predictions)
    report = ece(probs, labels, n_bins=args.bins)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "calibration.json", report.to_dict())
    (out / "reliability.svg").write_text(reliability_svg(report))
    return 0


def cmd_position_report(args) -> int:
    rows, probs, labels, _ = read_predictions(args.predictions)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    pids = sorted({r["protein_id"] for r in rows})
    if args.protein:
        pids = [p for p in pids if p in set(args.protein)]
    for pid in pids:
        sel = np.array([r["protein_id"] == pid for r in rows])
        positions = [int(r["position"]) for r, s in zip(rows, sel) if s]
        table = per_position_accuracy(probs[sel], labels[sel], positions, args.length, pid)
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(POSITION_FIELDS)
        for row in table.rows:
            w.writerow(["" if row[k] is None else row[k] for k in POSITION_FIELDS])
        (out / f"position_{pid}.csv").write_text(buf.getvalue())
    return 0


POSITION_FIELDS = ["position", "count", "accuracy", "functional_rate", "sliding_accuracy"]


# --- parser -----------------------------------------------------------------


def _add_embedding_inputs(p) -> None:
    p.add_argument("--seq", required=True, help="sequence embedding store")
    p.add_argument("--str", required=True, help="structure embedding store")
    p.add_argument("--dyn", required=True, help="dynamics embedding store")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="trifit", description="Trimodal variant fitness pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic benchmark")
    p.add_argument("--out", required=True)
    p.add_argument("--n-proteins", type=int, default=20)
    p.add_argument("--variants-per-protein", type=int, default=250)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--mock-seed", type=int, default=MOCK_SEED)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("embed-dyn", help="GNM dynamics embeddings")
    p.add_argument("--structures", required=True)
    p.add_argument("--variants", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--cutoff", type=float, default=DEFAULT_CUTOFF)
    p.add_argument("--modes", type=int, default=DEFAULT_N_MODES)
    p.add_argument("--seed", type=int, default=DYNAMICS_SEED)
    p.add_argument("--cross-correlation", choices=CROSS_CORRELATION_MODES, default="mean")
    p.add_argument("--gnm-csv", help="also export per-residue GNM features to this directory")
    p.set_defaults(func=cmd_embed_dyn)

    p = sub.add_parser("embed-struct", help="C-alpha geometry embeddings")
    p.add_argument("--structures", required=True)
    p.add_argument("--variants", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--k", type=int, default=N_NEIGHBORS)
    p.add_argument("--seed", type=int, default=STRUCTURE_SEED)
    p.set_defaults(func=cmd_embed_struct)

    p = sub.add_parser("compose-seq", help="sequence embeddings from context vectors")
    p.add_argument("--variants", required=True, nargs="+")
    p.add_argument("--out", required=True)
    p.add_argument("--mock", action="store_true", help="use the deterministic mock encoder")
    p.add_argument("--structures", help="wild-type sequences for --mock")
    p.add_argument("--mock-seed", type=int, default=MOCK_SEED)
    p.add_argument("--dim", type=int, default=SEQ_DIM)
    p.add_argument("--context", help="context-vector store (tag 4)")
    p.add_argument("--tokens", help="token-table store (tag 5)")
    p.set_defaults(func=cmd_compose_seq)

    p = sub.add_parser("train", help="train the fusion model")
    p.add_argument("--variants", required=True, nargs="+")
    _add_embedding_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--config", help="JSON config; flags override it")
    p.add_argument("--ablate", choices=sorted(ABLATIONS), default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int)
    p.add_argument("--lr-max", type=float)
    p.add_argument("--weight-decay", type=float)
    p.add_argument("--lam", type=float)
    p.add_argument("--tau", type=float)
    p.add_argument("--quantile", type=float)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on one split")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--variants", required=True, nargs="+")
    _add_embedding_inputs(p)
    p.add_argument("--out", required=True)
    p.add_argument("--split", choices=("train", "val", "test"), default="test")
    p.add_argument("--aggregate", choices=("per-assay", "pooled"), default="per-assay")
    p.add_argument("--quantile", type=float)
    p.set_defaults(func=cmd_eval)

    p = sub.add_parser("router-report", help="mean router weights per protein")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_router_report)

    p = sub.add_parser("calibration-report", help="ECE, reliability bins, confidence tables")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--bins", type=int, default=15)
    p.set_defaults(func=cmd_calibration_report)

    p = sub.add_parser("position-report", help="per-position accuracy with sliding mean")
    p.add_argument("--predictions", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--protein", nargs="*")
    p.add_argument("--length", type=int)
    p.set_defaults(func=cmd_position_report)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
