"""Command-line interface.

Every subcommand writes CSV output (to ``--out`` or stdout) and a short
human-readable summary to stderr. Failures exit nonzero with a message
tagged by the stage that failed.
"""

from __future__ import annotations

import argparse
import csv
import io
import logging
import sys
from pathlib import Path
from typing import Sequence

import numpy as np

from . import alerts, explain, pipeline, stacker
from .chem import parse_smiles
from .config import ConfigError, PipelineConfig, parse_modalities
from .metrics import DEFAULT_SEEDS, EvalReport, evaluate_scores

log = logging.getLogger("stemtox")


class CliError(RuntimeError):
    def __init__(self, stage: str, message: str):
        super().__init__(message)
        self.stage = stage


def _config(args) -> PipelineConfig:
    try:
        cfg = PipelineConfig.from_file(args.config) if args.config else PipelineConfig()
    except OSError as exc:
        raise CliError("config", f"cannot read {args.config}: {exc}") from exc
    if getattr(args, "modalities", None):
        cfg = cfg.replace(modalities=",".join(parse_modalities(args.modalities)))
    return cfg


def _records(path: str) -> list[pipeline.DatasetRecord]:
    result = pipeline.ingest(path)
    if result.quarantine:
        log.warning("%d rows quarantined while reading %s", len(result.quarantine), path)
    return result.records


def _emit(text: str, out: str | None) -> None:
    if out:
        Path(out).write_text(text, encoding="utf-8")
    else:
        sys.stdout.write(text)


def _note(text: str) -> None:
    sys.stderr.write(text if text.endswith("\n") else text + "\n")


def _csv(header: Sequence[str], rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _seeds(text: str | None) -> list[int]:
    if not text:
        return list(DEFAULT_SEEDS)
    try:
        return [int(s) for s in text.split(",") if s.strip()]
    except ValueError as exc:
        raise CliError("arguments", f"--seeds must be comma-separated integers: {text!r}") from exc


# Subcommands

def cmd_ingest(args) -> None:
    result = pipeline.ingest(args.csv)
    _emit(_csv(["smiles", "label", "source_row"],
               ((r.smiles, r.label, r.source_row) for r in result.records)), args.out)
    if args.quarantine:
        Path(args.quarantine).write_text(
            _csv(["source_row", "smiles", "reason"],
                 ((q.source_row, q.smiles, q.reason) for q in result.quarantine)), encoding="utf-8")
    _note(result.summary())


def cmd_featurize(args) -> None:
    records = _records(args.csv)
    mols = [parse_smiles(r.smiles) for r in records]
    if args.bundle:
        fused = pipeline.load_bundle(args.bundle).featurizer.transform(mols)
        split = ["-"] * len(records)
    else:
        cfg = _config(args)
        prep = pipeline.prepare(records, cfg, args.seed)
        featurizer = pipeline.Featurizer(cfg.modalities, prep.fp_config, prep.scaler, prep.gat_model)
        fused = pipeline.fuse(featurizer.blocks(mols, prep.fp, prep.desc, prep.emb))
        split = np.where(np.isin(np.arange(len(records)), prep.test_idx), "test", "train").tolist()
    rows = ((r.smiles, r.label, s, *(repr(float(v)) for v in row))
            for r, s, row in zip(records, split, fused.values))
    _emit(_csv(["smiles", "label", "split", *fused.names], rows), args.out)
    widths = ", ".join(f"{k} {hi - lo}" for k, (lo, hi) in fused.segments.items())
    _note(f"{len(records)} molecules x {fused.width} columns ({widths})")


def cmd_train(args) -> None:
    records = _records(args.csv)
    result = pipeline.run(records, _config(args), args.seed, n_jobs=args.threads)
    pipeline.save_bundle(args.bundle, result.bundle)
    if args.dump_meta:
        y = np.array([r.label for r in records])
        y_te = y[result.test_idx]
        y_tr = np.delete(y, result.test_idx)
        stacker.write_meta_csv(result.meta, f"{args.dump_meta}_train.csv", f"{args.dump_meta}_test.csv",
                               y_tr, y_te)
    _emit(result.report.to_csv(per_seed=True), args.out)
    single = "\n".join(f"  {k:<14} {v:.4f}" for k, v in result.single_auc.items())
    _note(result.report.to_table() + "single-learner test AUC:\n" + single
          + f"\nbundle written to {args.bundle}")


def cmd_predict(args) -> None:
    model = pipeline.load_bundle(args.bundle)
    smiles, labels = pipeline.read_smiles_column(args.csv)
    scores = model.predict(smiles)
    _emit(_csv(["smiles", "probability", "prediction"],
               ((s, repr(float(p)), int(p >= 0.5)) for s, p in zip(smiles, scores))), args.out)
    msg = f"{len(smiles)} molecules scored, {int((scores >= 0.5).sum())} predicted positive"
    if labels is not None and len(np.unique(labels)) == 2:
        m = evaluate_scores(scores, labels)
        msg += f"\nAUC {m.auc:.4f}  AUPR {m.aupr:.4f}  accuracy {m.accuracy:.4f}"
    _note(msg)


def cmd_evaluate(args) -> None:
    records = _records(args.csv)
    cfg = _config(args)
    report: EvalReport = pipeline.repeated_eval(records, cfg, _seeds(args.seeds), n_jobs=args.threads)
    _emit(report.to_csv(per_seed=args.per_seed), args.out)
    _note(report.to_table())


def cmd_explain(args) -> None:
    model = pipeline.load_bundle(args.bundle)
    smiles, _ = pipeline.read_smiles_column(args.csv)
    mols = [parse_smiles(s) for s in smiles]
    result = pipeline.explain_meta(model, mols)
    _emit(explain.shap_csv(result, smiles), args.out)
    ranking = explain.summarize(result)
    if args.summary:
        Path(args.summary).write_text(explain.summary_csv(ranking), encoding="utf-8")
    lines = ["base learners by mean |SHAP| on the meta-learner:"]
    lines += [f"  {name:<14} {v:.5f}" for name, v in ranking]
    if args.features:
        feats = pipeline.explain_base_features(model, mols, args.permutations, args.seed)
        top = explain.summarize(feats)
        Path(args.features).write_text(explain.summary_csv(top), encoding="utf-8")
        lines.append(f"top fused features for histgbdt ({args.permutations} permutations):")
        lines += [f"  {name:<24} {v:.5f}" for name, v in top[:args.top]]
    _note("\n".join(lines))


def cmd_alerts(args) -> None:
    catalog = alerts.load_catalog(args.catalog)
    smiles, labels = pipeline.read_smiles_column(args.csv)
    toxic = alerts.alert_patterns(catalog)
    hits = []
    for s in smiles:
        mol = parse_smiles(s)
        hits.append([p.id for p in toxic if alerts.has_match(p, mol)])
    _emit(_csv(["smiles", "alerts"], ((s, ";".join(h)) for s, h in zip(smiles, hits))), args.out)
    lines = [f"{'alert':<10} {'hits':>6}" + (f" {'positive':>9} {'rate':>6}" if labels is not None else "")]
    for p in toxic:
        rows = [i for i, h in enumerate(hits) if p.id in h]
        line = f"{p.id:<10} {len(rows):>6}"
        if labels is not None:
            pos = int(sum(labels[i] for i in rows))
            rate = f"{pos / len(rows):.3f}" if rows else "-"
            line += f" {pos:>9} {rate:>6}"
        lines.append(line)
    _note("\n".join(lines))


def cmd_ablate(args) -> None:
    records = _records(args.csv)
    names = args.configs.split(",") if args.configs else list(pipeline.ABLATIONS)
    unknown = [n for n in names if n not in pipeline.ABLATIONS]
    if unknown:
        raise CliError("arguments", f"unknown ablation configs {unknown}; choose from {list(pipeline.ABLATIONS)}")
    rows = pipeline.ablate(records, _config(args), args.seed, names, n_jobs=args.threads,
                           on_row=lambda r: _note(f"{r.name:<8} AUC {r.metrics.auc:.4f}"))
    _emit(pipeline.ablation_csv(rows), args.out)


def build_parser() -> argparse.ArgumentParser:
    def global_flags(suppress: bool) -> argparse.ArgumentParser:
        # Subcommands repeat the flags with suppressed defaults so values
        # given before the subcommand name are not overwritten.
        def d(value):
            return argparse.SUPPRESS if suppress else value
        p = argparse.ArgumentParser(add_help=False)
        p.add_argument("--seed", type=int, default=d(42), help="root seed (default 42)")
        p.add_argument("--config", default=d(None), help="flat key = value configuration file")
        p.add_argument("--threads", type=int, default=d(1), help="worker threads for base-learner fits")
        p.add_argument("--out", default=d(None), help="write CSV here instead of stdout")
        p.add_argument("-v", "--verbose", action="store_true", default=d(False))
        return p

    common = global_flags(True)
    parser = argparse.ArgumentParser(prog="stemtox", parents=[global_flags(False)],
                                     description="Multi-modal stacked mutagenicity classifier")
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, func, help_text):
        p = sub.add_parser(name, parents=[common], help=help_text)
        p.set_defaults(func=func)
        return p

    p = add("ingest", cmd_ingest, "clean and deduplicate a smiles,label CSV")
    p.add_argument("csv")
    p.add_argument("--quarantine", help="write rejected rows to this CSV")

    p = add("featurize", cmd_featurize, "dump fused feature vectors")
    p.add_argument("csv")
    p.add_argument("--bundle", help="use the featurizer stored in a trained bundle")
    p.add_argument("--modalities", help="subset of FP,Desc,GAT")

    p = add("train", cmd_train, "train on an 80:20 split and save a bundle")
    p.add_argument("csv")
    p.add_argument("--bundle", required=True, help="output bundle path")
    p.add_argument("--dump-meta", metavar="PREFIX", help="write PREFIX_train.csv and PREFIX_test.csv")
    p.add_argument("--modalities", help="subset of FP,Desc,GAT")

    p = add("predict", cmd_predict, "score molecules with a saved bundle")
    p.add_argument("csv")
    p.add_argument("--bundle", required=True)

    p = add("evaluate", cmd_evaluate, "repeat train and blind test over several seeds")
    p.add_argument("csv")
    p.add_argument("--seeds", help="comma-separated seeds (default: ten fixed seeds)")
    p.add_argument("--per-seed", action="store_true", help="include one row per seed")
    p.add_argument("--modalities", help="subset of FP,Desc,GAT")

    p = add("explain", cmd_explain, "Shapley attributions for a saved bundle")
    p.add_argument("csv")
    p.add_argument("--bundle", required=True)
    p.add_argument("--summary", help="write per-learner mean |SHAP| CSV here")
    p.add_argument("--features", help="also attribute histgbdt to fused features; summary CSV path")
    p.add_argument("--permutations", type=int, default=200)
    p.add_argument("--top", type=int, default=20)

    p = add("alerts", cmd_alerts, "screen molecules against the structural-alert catalog")
    p.add_argument("csv")
    p.add_argument("--catalog", help="pattern file (default: shipped catalog)")

    p = add("ablate", cmd_ablate, "compare modality subsets on one split")
    p.add_argument("csv")
    p.add_argument("--configs", help=f"comma-separated subset of {','.join(pipeline.ABLATIONS)}")
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        args.func(args)
    except pipeline.StageError as exc:
        _note(f"error: {exc}")
        return 1
    except CliError as exc:
        _note(f"error: [{exc.stage}] {exc}")
        return 1
    except (ConfigError, ValueError, OSError, KeyError) as exc:
        _note(f"error: [{args.command}] {type(exc).__name__}: {exc}")
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
