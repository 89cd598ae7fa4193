"""End-to-end orchestration: ingest, featurize, fuse, stack, evaluate, persist.

One run takes a root seed and derives every stage seed from it, so a run is
a pure function of the dataset, the configuration and that seed.
"""

from __future__ import annotations

import csv
import io
import logging
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from . import alerts, bundle, explain, gat, learners, stacker
from .chem import MolGraph, SmilesError, parse_smiles
from .config import MODALITIES, PipelineConfig
from .descriptors import (DESCRIPTOR_NAMES, ScalerState, apply_scale, compute_descriptors,
                          fit_filter_scale)
from .fingerprints import FingerprintConfig, fingerprint_block
from .learners import KINDS, TrainedLearner
from .metrics import EvalReport, SeedMetrics, auc_roc, evaluate_scores
from .seeding import derive_seed

log = logging.getLogger(__name__)

SEGMENTS = ("keys", "path", "pathring", "descriptors", "gat")
ABLATIONS: dict[str, tuple[str, ...]] = {
    "FP": ("FP",),
    "Desc": ("Desc",),
    "GAT": ("GAT",),
    "FPDesc": ("FP", "Desc"),
    "FPGAT": ("FP", "GAT"),
    "GATDesc": ("Desc", "GAT"),
    "STEM": ("FP", "Desc", "GAT"),
}


class FileError(OSError):
    pass


class HeaderError(ValueError):
    pass


class SchemaMismatch(ValueError):
    pass


class StageError(RuntimeError):
    """A pipeline stage failed; ``stage`` names it and the cause is chained."""

    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")
        self.stage = stage


class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        log.info("stage %s", self.name)
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc is not None and not isinstance(exc, StageError) and isinstance(exc, Exception):
            raise StageError(self.name, exc) from exc
        return False


# Ingestion

@dataclass(frozen=True)
class DatasetRecord:
    smiles: str
    label: int
    source_row: int


@dataclass(frozen=True)
class QuarantineEntry:
    source_row: int
    smiles: str
    reason: str


@dataclass
class IngestResult:
    records: list[DatasetRecord]
    quarantine: list[QuarantineEntry]
    n_rows: int
    n_duplicates: int
    n_conflicts: int

    def summary(self) -> str:
        pos = sum(r.label for r in self.records)
        return (f"rows read: {self.n_rows}\nduplicates collapsed: {self.n_duplicates}\n"
                f"label conflicts resolved to positive: {self.n_conflicts}\n"
                f"quarantined: {len(self.quarantine)}\n"
                f"records: {len(self.records)} ({pos} positive, {len(self.records) - pos} negative)\n")


def ingest_text(text: str) -> IngestResult:
    """Parse ``smiles,label`` CSV text; source rows count data lines from 1."""
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip().lower() for h in next(reader)]
    except StopIteration:
        raise HeaderError("file is empty") from None
    if "smiles" not in header or "label" not in header:
        raise HeaderError(f"header must contain 'smiles' and 'label', got {header}")
    si, li = header.index("smiles"), header.index("label")
    quarantine: list[QuarantineEntry] = []
    first_row: dict[str, int] = {}
    label_of: dict[str, int] = {}
    rows_of: dict[str, list[int]] = {}
    n_rows = n_dup = 0
    conflicts: set[str] = set()
    for row_no, row in enumerate(reader, 1):
        if not row or all(not c.strip() for c in row):
            continue
        n_rows += 1
        smi = row[si].strip() if si < len(row) else ""
        raw_label = row[li].strip() if li < len(row) else ""
        if raw_label not in ("0", "1"):
            quarantine.append(QuarantineEntry(row_no, smi, f"InvalidLabel: {raw_label!r}"))
            continue
        if not smi:
            quarantine.append(QuarantineEntry(row_no, smi, "EmptySmiles"))
            continue
        label = int(raw_label)
        if smi in label_of:
            n_dup += 1
            if label_of[smi] != label:
                conflicts.add(smi)
            label_of[smi] = max(label_of[smi], label)
            rows_of[smi].append(row_no)
        else:
            label_of[smi], first_row[smi], rows_of[smi] = label, row_no, [row_no]
    records = []
    for smi, row_no in first_row.items():
        try:
            parse_smiles(smi)
        except SmilesError as exc:
            for r in rows_of[smi]:
                quarantine.append(QuarantineEntry(r, smi, f"{type(exc).__name__}: {exc}"))
            continue
        records.append(DatasetRecord(smi, label_of[smi], row_no))
    quarantine.sort(key=lambda q: q.source_row)
    return IngestResult(records, quarantine, n_rows, n_dup, len(conflicts))


def ingest(path: str | Path) -> IngestResult:
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileError(f"cannot read {path}: {exc}") from exc
    return ingest_text(text)


def read_smiles_column(path: str | Path) -> tuple[list[str], np.ndarray | None]:
    """SMILES (and labels when present) from a CSV with a ``smiles`` header."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise FileError(f"cannot read {path}: {exc}") from exc
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        raise HeaderError("file is empty")
    header = [h.strip().lower() for h in rows[0]]
    if "smiles" not in header:
        raise HeaderError(f"header must contain 'smiles', got {header}")
    si = header.index("smiles")
    li = header.index("label") if "label" in header else None
    body = [r for r in rows[1:] if r and any(c.strip() for c in r)]
    smiles = [r[si].strip() for r in body]
    labels = np.array([int(r[li]) for r in body]) if li is not None else None
    return smiles, labels


# Featurization and fusion

@dataclass
class FusedMatrix:
    values: np.ndarray
    names: list[str]
    segments: dict[str, tuple[int, int]]

    @property
    def width(self) -> int:
        return len(self.names)

    def column_map(self) -> list[tuple[int, str, str]]:
        """(index, name, segment) for every column."""
        out = []
        for seg, (lo, hi) in self.segments.items():
            out.extend((i, self.names[i], seg) for i in range(lo, hi))
        return out


def fuse(blocks: Sequence[tuple[str, np.ndarray, Sequence[str]]]) -> FusedMatrix:
    """Concatenate named blocks, which must follow the fixed segment order."""
    order = [SEGMENTS.index(name) for name, _, _ in blocks]
    if order != sorted(order) or len(set(order)) != len(order):
        raise SchemaMismatch(f"segments out of order: {[b[0] for b in blocks]}")
    if not blocks:
        raise SchemaMismatch("nothing to fuse")
    n = len(blocks[0][1])
    values, names, segments, start = [], [], {}, 0
    for seg, mat, cols in blocks:
        mat = np.asarray(mat, dtype=np.float64)
        if mat.ndim != 2 or len(mat) != n or mat.shape[1] != len(cols):
            raise SchemaMismatch(f"segment {seg}: shape {mat.shape} vs {n} rows x {len(cols)} names")
        values.append(mat)
        names.extend(cols)
        segments[seg] = (start, start + len(cols))
        start += len(cols)
    fused = np.hstack(values)
    if not np.isfinite(fused).all():
        raise SchemaMismatch("fused features contain non-finite values")
    return FusedMatrix(fused, names, segments)


def fingerprint_matrix(mols: Sequence[MolGraph], cfg: FingerprintConfig) -> tuple[np.ndarray, list[str], dict]:
    blocks = [fingerprint_block(m, cfg) for m in mols]
    if not blocks:
        raise ValueError("no molecules")
    return np.vstack([b.values for b in blocks]), blocks[0].names, blocks[0].segments


def descriptor_matrix(mols: Sequence[MolGraph]) -> np.ndarray:
    return np.vstack([compute_descriptors(m).values for m in mols])


@dataclass
class Featurizer:
    """Everything needed to map molecules to fused rows; fit on training rows."""

    modalities: tuple[str, ...]
    fp_config: FingerprintConfig
    scaler: ScalerState | None
    gat_model: gat.GatModel | None

    def blocks(self, mols: Sequence[MolGraph], fp: np.ndarray | None = None,
               desc: np.ndarray | None = None, emb: np.ndarray | None = None):
        """Feature blocks for ``mols``; precomputed matrices may be passed in."""
        out = []
        if "FP" in self.modalities:
            if fp is None:
                fp, names, segs = fingerprint_matrix(mols, self.fp_config)
            else:
                names, segs = fingerprint_names_and_segments(self.fp_config)
            for seg in ("keys", "path", "pathring"):
                lo, hi = segs[seg]
                out.append((seg, fp[:, lo:hi], names[lo:hi]))
        if "Desc" in self.modalities:
            raw = descriptor_matrix(mols) if desc is None else desc
            names = [f"desc_{DESCRIPTOR_NAMES[i]}" for i in self.scaler.kept_columns]
            out.append(("descriptors", apply_scale(self.scaler, raw), names))
        if "GAT" in self.modalities:
            e = gat.embed_many(self.gat_model, mols) if emb is None else emb
            out.append(("gat", e, gat.embedding_names(self.gat_model.config)))
        return out

    def transform(self, mols: Sequence[MolGraph]) -> FusedMatrix:
        return fuse(self.blocks(mols))


def fingerprint_names_and_segments(cfg: FingerprintConfig) -> tuple[list[str], dict]:
    from .fingerprints import fingerprint_names
    names = fingerprint_names(cfg)
    segs, out, start = {}, [], 0
    for kind in ("keys", "path", "pathring"):
        segs[kind] = (start, start + len(names[kind]))
        out.extend(names[kind])
        start += len(names[kind])
    return out, segs


def fingerprint_config(config: PipelineConfig, catalog: Sequence[alerts.Pattern]) -> FingerprintConfig:
    return FingerprintConfig(path_bits=config["fp.path_bits"], pathring_bits=config["fp.pathring_bits"],
                             max_path_len=config["fp.max_path_len"], key_catalog=tuple(catalog))


# Training

def stratified_split(labels: np.ndarray, test_fraction: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    """Ascending train and test row indices, each class split separately."""
    rng = np.random.default_rng(seed)
    test = []
    for cls in (0, 1):
        idx = rng.permutation(np.flatnonzero(labels == cls))
        n_test = int(round(test_fraction * len(idx)))
        if len(idx) >= 2:
            n_test = min(max(n_test, 1), len(idx) - 1)
        test.append(idx[:n_test])
    test_idx = np.sort(np.concatenate(test))
    train_idx = np.setdiff1d(np.arange(len(labels)), test_idx)
    return train_idx, test_idx


@dataclass
class PreparedData:
    """Features shared by every modality subset of one (dataset, seed) run."""

    records: list[DatasetRecord]
    mols: list[MolGraph]
    y: np.ndarray
    train_idx: np.ndarray
    test_idx: np.ndarray
    catalog_text: str
    fp_config: FingerprintConfig
    fp: np.ndarray | None
    desc: np.ndarray | None
    scaler: ScalerState | None
    gat_model: gat.GatModel | None
    emb: np.ndarray | None
    trace: dict[str, tuple[int, ...]] = field(default_factory=dict)


def prepare(records: Sequence[DatasetRecord], config: PipelineConfig, seed: int,
            modalities: Sequence[str] | None = None) -> PreparedData:
    """Split, compute fingerprints and descriptors, fit the scaler and train
    the GAT on training rows only."""
    modalities = tuple(modalities or config.modalities)
    records = list(records)
    with _Stage("split"):
        if len(records) < 10:
            raise ValueError(f"need at least 10 records, got {len(records)}")
        y = np.array([r.label for r in records], dtype=np.int64)
        if len(np.unique(y)) < 2:
            raise ValueError("dataset has a single class")
        train_idx, test_idx = stratified_split(y, config["test_fraction"], derive_seed(seed, "split"))
        mols = [parse_smiles(r.smiles) for r in records]
    catalog_text = alerts.catalog_text()
    fp_cfg = fingerprint_config(config, alerts.parse_catalog(catalog_text))
    trace: dict[str, tuple[int, ...]] = {}
    fp = desc = emb = None
    scaler = model = None
    if "FP" in modalities:
        with _Stage("fingerprints"):
            fp, _, _ = fingerprint_matrix(mols, fp_cfg)
    if "Desc" in modalities:
        with _Stage("descriptors"):
            desc = descriptor_matrix(mols)
            scaler = fit_filter_scale(desc[train_idx], config["variance_threshold"])
            trace["descriptor_scaler"] = tuple(train_idx.tolist())
    if "GAT" in modalities:
        with _Stage("gat"):
            model = gat.train_gat([mols[i] for i in train_idx], y[train_idx],
                                  config.gat_config(), derive_seed(seed, "gat"))
            trace["gat"] = tuple(train_idx.tolist())
            emb = gat.embed_many(model, mols)
    return PreparedData(records, mols, y, train_idx, test_idx, catalog_text, fp_cfg,
                        fp, desc, scaler, model, emb, trace)


@dataclass
class ModelBundle:
    seed: int
    config: PipelineConfig
    featurizer: Featurizer
    catalog_text: str
    column_names: list[str]
    selected: np.ndarray
    fold_learners: dict[str, list[TrainedLearner]]
    meta_net: stacker.MetaNet
    background_meta: np.ndarray
    background_features: np.ndarray
    metrics: dict

    @property
    def learner_names(self) -> list[str]:
        return list(self.fold_learners)

    def selected_features(self, mols: Sequence[MolGraph]) -> np.ndarray:
        return self.featurizer.transform(mols).values[:, self.selected]

    def meta_rows(self, X_selected: np.ndarray) -> np.ndarray:
        return meta_matrix(self.fold_learners, X_selected)

    def predict_mols(self, mols: Sequence[MolGraph]) -> np.ndarray:
        return np.asarray(stacker.meta_forward(self.meta_net, self.meta_rows(self.selected_features(mols))))

    def predict(self, smiles: Sequence[str]) -> np.ndarray:
        return self.predict_mols([parse_smiles(s) for s in smiles])


def meta_matrix(fold_learners: dict[str, list[TrainedLearner]], X: np.ndarray) -> np.ndarray:
    """Per learner kind, the mean of its fold models' probabilities."""
    cols = [np.mean(np.stack([learners.predict_proba(m, X) for m in models]), axis=0)
            for models in fold_learners.values()]
    return np.column_stack(cols)


@dataclass
class RunResult:
    metrics: SeedMetrics
    bundle: ModelBundle
    meta: stacker.MetaFeatures
    test_idx: np.ndarray
    test_scores: np.ndarray
    single_auc: dict[str, float]
    trace: dict[str, tuple[int, ...]]

    @property
    def report(self) -> EvalReport:
        return EvalReport([self.metrics])


def fit_prepared(prep: PreparedData, config: PipelineConfig, seed: int,
                 modalities: Sequence[str] | None = None, n_jobs: int = 1) -> RunResult:
    """Fuse, select, stack and evaluate on the blind split of ``prep``."""
    modalities = tuple(m for m in MODALITIES if m in (modalities or config.modalities))
    trace = dict(prep.trace)
    featurizer = Featurizer(modalities, prep.fp_config, prep.scaler, prep.gat_model)
    with _Stage("fuse"):
        fused = fuse(featurizer.blocks(prep.mols, prep.fp, prep.desc, prep.emb))
    tr, te = prep.train_idx, prep.test_idx
    X_tr, X_te = fused.values[tr], fused.values[te]
    y_tr, y_te = prep.y[tr], prep.y[te]
    specs = config.learner_specs()
    with _Stage("select_features"):
        k = min(config["select_k"], fused.width)
        hist_spec = next(s for s in specs if s.kind == "histgbdt")
        selected = learners.select_features(X_tr, y_tr, k, derive_seed(seed, "select"), hist_spec)
        trace["select_features"] = tuple(tr.tolist())
    with _Stage("stacking"):
        plan = stacker.make_folds(y_tr, derive_seed(seed, "folds"), config["n_folds"])
        meta = stacker.build_meta_features(specs, X_tr[:, selected], y_tr, X_te[:, selected], plan,
                                           derive_seed(seed, "stack"), n_jobs=n_jobs)
        trace["stacking"] = tuple(sorted({int(tr[i]) for rec in meta.audit for i in rec.train_rows}))
    with _Stage("meta_learner"):
        net = stacker.init_meta(len(specs), derive_seed(seed, "meta_init"), config["dnn.hidden_neurons"])
        net = stacker.train_meta(net, meta.train, y_tr, config.meta_config(), derive_seed(seed, "meta"))
        trace["meta_learner"] = tuple(tr.tolist())
    with _Stage("evaluate"):
        scores = np.asarray(stacker.meta_forward(net, meta.test))
        metrics = evaluate_scores(scores, y_te, seed)
        single = {name: auc_roc(meta.test[:, c], y_te) for c, name in enumerate(meta.names)}
    bg_rows = explain.make_background(np.arange(len(tr))[:, None], derive_seed(seed, "background"))[:, 0]
    bg_rows = bg_rows.astype(np.int64)
    model = ModelBundle(
        seed=seed, config=config, featurizer=featurizer, catalog_text=prep.catalog_text,
        column_names=fused.names, selected=selected, fold_learners=meta.models, meta_net=net,
        background_meta=meta.train[bg_rows], background_features=X_tr[bg_rows][:, selected],
        metrics=asdict(metrics),
    )
    return RunResult(metrics, model, meta, te, scores, single, trace)


def run(records: Sequence[DatasetRecord], config: PipelineConfig, seed: int,
        n_jobs: int = 1) -> RunResult:
    """Full split, featurize, select, stack and blind-test run for one seed."""
    prep = prepare(records, config, seed)
    return fit_prepared(prep, config, seed, n_jobs=n_jobs)


def repeated_eval(records: Sequence[DatasetRecord], config: PipelineConfig,
                  seeds: Sequence[int], n_jobs: int = 1) -> EvalReport:
    from .metrics import repeated_eval as aggregate
    return aggregate(lambda s: run(records, config, s, n_jobs).metrics, seeds)


@dataclass(frozen=True)
class AblationRow:
    name: str
    modalities: tuple[str, ...]
    metrics: SeedMetrics


def ablate(records: Sequence[DatasetRecord], config: PipelineConfig, seed: int,
           names: Sequence[str] = tuple(ABLATIONS), n_jobs: int = 1,
           on_row: Callable[[AblationRow], None] | None = None) -> list[AblationRow]:
    """One row per modality subset; fingerprints, descriptors and the GAT are
    computed once and shared across subsets."""
    needed = sorted({m for n in names for m in ABLATIONS[n]}, key=MODALITIES.index)
    prep = prepare(records, config, seed, needed)
    rows = []
    for name in names:
        res = fit_prepared(prep, config, seed, ABLATIONS[name], n_jobs)
        row = AblationRow(name, ABLATIONS[name], res.metrics)
        rows.append(row)
        if on_row:
            on_row(row)
    return rows


def ablation_csv(rows: Sequence[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["config", "modalities", "accuracy", "precision", "recall", "f1", "auc", "aupr"])
    for r in rows:
        m = r.metrics
        w.writerow([f"STEM-{r.name}" if r.name != "STEM" else "STEM", "+".join(r.modalities),
                    *(f"{getattr(m, k):.6f}" for k in ("accuracy", "precision", "recall", "f1", "auc", "aupr"))])
    return buf.getvalue()


# Persistence

def _scaler_state(s: ScalerState | None):
    if s is None:
        return None
    return {"n_columns": s.n_columns, "kept_columns": s.kept_columns, "mins": s.mins,
            "maxs": s.maxs, "threshold": s.threshold}


def _gat_state(m: gat.GatModel | None):
    if m is None:
        return None
    return {"config": asdict(m.config), "params": m.params, "input_dim": m.input_dim,
            "loss_history": list(m.loss_history)}


def bundle_to_state(b: ModelBundle) -> dict:
    f = b.featurizer
    return {
        "seed": b.seed,
        "config": b.config.to_text(),
        "modalities": list(f.modalities),
        "catalog_text": b.catalog_text,
        "catalog_hash": alerts.catalog_hash(f.fp_config.key_catalog),
        "fingerprints": {"path_bits": f.fp_config.path_bits, "pathring_bits": f.fp_config.pathring_bits,
                         "max_path_len": f.fp_config.max_path_len, "hash_seed": f.fp_config.hash_seed},
        "scaler": _scaler_state(f.scaler),
        "gat": _gat_state(f.gat_model),
        "column_names": b.column_names,
        "selected": b.selected,
        "learners": {k: [learners.learner_to_state(m) for m in ms] for k, ms in b.fold_learners.items()},
        "learner_order": list(b.fold_learners),
        "meta": {"W1": b.meta_net.W1, "b1": b.meta_net.b1, "W2": b.meta_net.W2, "b2": b.meta_net.b2,
                 "loss_history": list(b.meta_net.loss_history)},
        "background_meta": b.background_meta,
        "background_features": b.background_features,
        "metrics": b.metrics,
    }


def bundle_from_state(state: dict) -> ModelBundle:
    catalog = alerts.parse_catalog(state["catalog_text"])
    if alerts.catalog_hash(catalog) != state["catalog_hash"]:
        raise bundle.ChecksumError("embedded catalog does not match its recorded hash")
    fp = state["fingerprints"]
    fp_cfg = FingerprintConfig(fp["path_bits"], fp["pathring_bits"], fp["max_path_len"],
                               tuple(catalog), fp["hash_seed"])
    sc = state["scaler"]
    scaler = None if sc is None else ScalerState(int(sc["n_columns"]), np.asarray(sc["kept_columns"]),
                                                 np.asarray(sc["mins"]), np.asarray(sc["maxs"]),
                                                 float(sc["threshold"]))
    gs = state["gat"]
    gat_model = None if gs is None else gat.GatModel(gat.GatConfig(**gs["config"]),
                                                     {k: np.asarray(v) for k, v in gs["params"].items()},
                                                     int(gs["input_dim"]), list(gs["loss_history"]))
    m = state["meta"]
    net = stacker.MetaNet(m["W1"], m["b1"], m["W2"], m["b2"], list(m["loss_history"]))
    fold = {k: [learners.learner_from_state(s) for s in state["learners"][k]]
            for k in state["learner_order"]}
    featurizer = Featurizer(tuple(state["modalities"]), fp_cfg, scaler, gat_model)
    return ModelBundle(int(state["seed"]), PipelineConfig.from_text(state["config"]), featurizer,
                       state["catalog_text"], list(state["column_names"]), np.asarray(state["selected"]),
                       fold, net, np.asarray(state["background_meta"]),
                       np.asarray(state["background_features"]), dict(state["metrics"]))


def bundle_bytes(b: ModelBundle) -> bytes:
    return bundle.dumps(bundle_to_state(b))


def save_bundle(path: str | Path, b: ModelBundle) -> None:
    bundle.write_atomic(path, bundle_bytes(b))


def load_bundle(path: str | Path) -> ModelBundle:
    return bundle_from_state(bundle.load_state(path))


# Explanations

def explain_meta(b: ModelBundle, mols: Sequence[MolGraph]) -> explain.ShapResult:
    """Exact Shapley values of the meta-learner over the base-learner columns."""
    rows = b.meta_rows(b.selected_features(mols))
    return explain.shap_exact(lambda Z: stacker.meta_forward(b.meta_net, Z), rows,
                              b.background_meta, b.learner_names)


def explain_base_features(b: ModelBundle, mols: Sequence[MolGraph], n_permutations: int,
                          seed: int, kind: str = "histgbdt") -> explain.ShapResult:
    """Sampled Shapley values of one base learner over its selected fused columns."""
    models = b.fold_learners[kind]

    def f(Z):
        return np.mean(np.stack([learners.predict_proba(m, Z) for m in models]), axis=0)

    names = [b.column_names[i] for i in b.selected]
    return explain.shap_sampled(f, b.selected_features(mols), b.background_features,
                                n_permutations, seed, names)
