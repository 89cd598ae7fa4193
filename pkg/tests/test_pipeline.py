import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from stemtox import bundle, cli, pipeline
from stemtox.config import DEFAULTS, ConfigError, PipelineConfig, parse_modalities
from stemtox.pipeline import (DatasetRecord, SchemaMismatch, StageError, fuse, ingest_text,
                              load_bundle, save_bundle)
from stemtox.seeding import derive_seed
from stemtox.synthetic import make_dataset, true_label, write_csv

SMALL = """
gat.iterations = 3
gat.hidden_size = 16
gat.attention_heads = 2
rf.n_estimators = 8
extratrees.n_estimators = 8
histgbdt.n_estimators = 15
obliviousgbdt.iterations = 10
select_k = 128
dnn.epochs = 40
dnn.hidden_neurons = 16
"""


@pytest.fixture(scope="module")
def small_config():
    return PipelineConfig.from_text(SMALL)


@pytest.fixture(scope="module")
def records():
    return [DatasetRecord(s, y, i + 1) for i, (s, y) in enumerate(make_dataset(80, seed=3))]


@pytest.fixture(scope="module")
def result(records, small_config):
    return pipeline.run(records, small_config, seed=11)


# Ingestion

def test_duplicate_smiles_keep_positive_label():
    res = ingest_text("smiles,label\nCCO,0\nCCO,1\n")
    assert [(r.smiles, r.label) for r in res.records] == [("CCO", 1)]
    assert (res.n_duplicates, res.n_conflicts) == (1, 1)


def test_unparseable_rows_are_quarantined():
    res = ingest_text("smiles,label\nX1,0\nCC,1\nCC(,0\n,1\nCO,2\n")
    reasons = {q.source_row: q.reason.split(":")[0] for q in res.quarantine}
    assert reasons == {1: "UnknownElement", 3: "UnbalancedParenthesis", 4: "EmptySmiles",
                       5: "InvalidLabel"}
    assert [r.smiles for r in res.records] == ["CC"]


def test_header_required():
    with pytest.raises(pipeline.HeaderError):
        ingest_text("mol,y\nC,0\n")


# Fusion

def block(seg, width, n=3, fill=0.0):
    return seg, np.full((n, width), fill), [f"{seg}_{i}" for i in range(width)]


def test_fused_width_is_sum_of_blocks():
    fused = fuse([block("path", 4), block("descriptors", 3), block("gat", 5)])
    assert fused.width == 12
    assert fused.segments == {"path": (0, 4), "descriptors": (4, 7), "gat": (7, 12)}
    assert fused.column_map()[4] == (4, "descriptors_0", "descriptors")


def test_fuse_rejects_bad_input():
    with pytest.raises(SchemaMismatch):
        fuse([block("gat", 2), block("path", 2)])
    with pytest.raises(SchemaMismatch):
        fuse([block("path", 2), block("gat", 2, n=4)])
    with pytest.raises(SchemaMismatch):
        fuse([block("path", 2, fill=np.nan)])


def test_same_record_fused_twice_is_identical(result):
    mol = result.bundle.featurizer
    rows = mol.transform([pipeline.parse_smiles("c1ccccc1N")] * 2).values
    assert np.array_equal(rows[0], rows[1])


def test_desc_gat_subset_has_no_fingerprint_segments(records, small_config):
    prep = pipeline.prepare(records, small_config, 5, ("Desc", "GAT"))
    res = pipeline.fit_prepared(prep, small_config, 5, ("Desc", "GAT"))
    segs = res.bundle.featurizer.transform(prep.mols[:2]).segments
    assert set(segs) == {"descriptors", "gat"}


# Training

def test_fitted_state_only_sees_training_rows(result):
    train = set(int(i) for i in np.flatnonzero(np.isin(np.arange(80), result.test_idx, invert=True)))
    assert not set(result.test_idx.tolist()) & train
    for stage, rows in result.trace.items():
        assert set(rows) <= train, stage
        assert not set(rows) & set(result.test_idx.tolist()), stage


def test_stratified_split_keeps_both_classes():
    y = np.array([0] * 30 + [1] * 10)
    tr, te = pipeline.stratified_split(y, 0.2, 0)
    assert (y[te] == 1).sum() == 2 and (y[te] == 0).sum() == 6
    assert np.array_equal(np.sort(np.r_[tr, te]), np.arange(40))


def test_run_reports_metrics(result):
    assert 0.0 <= result.metrics.auc <= 1.0
    assert set(result.single_auc) == {"svm", "rf", "extratrees", "histgbdt", "obliviousgbdt"}
    assert result.meta.train.shape[1] == 5


def test_too_few_records_is_a_stage_error(small_config):
    with pytest.raises(StageError) as info:
        pipeline.run([DatasetRecord("C", 0, 1)], small_config, 0)
    assert info.value.stage == "split"


# Bundles

def test_bundle_round_trip_is_bit_exact(result, records, tmp_path):
    path = tmp_path / "model.stx"
    save_bundle(path, result.bundle)
    back = load_bundle(path)
    smiles = [r.smiles for r in records[:20]]
    assert np.array_equal(result.bundle.predict(smiles), back.predict(smiles))
    assert pipeline.bundle_bytes(back) == path.read_bytes()


def test_bundle_predictions_match_test_scores(result, records):
    smiles = [records[i].smiles for i in result.test_idx]
    assert np.allclose(result.bundle.predict(smiles), result.test_scores, rtol=0, atol=1e-12)


def test_truncated_bundle_fails_checksum(result, tmp_path):
    blob = pipeline.bundle_bytes(result.bundle)
    path = tmp_path / "cut.stx"
    path.write_bytes(blob[:-100])
    with pytest.raises(bundle.ChecksumError):
        load_bundle(path)


def test_future_version_rejected(tmp_path):
    blob = bytearray(bundle.dumps({"a": 1}))
    blob[8:12] = (2).to_bytes(4, "little")
    path = tmp_path / "v2.stx"
    path.write_bytes(bytes(blob))
    with pytest.raises(bundle.VersionError):
        bundle.load_state(path)


def test_flipped_payload_byte_fails_checksum():
    blob = bytearray(bundle.dumps({"a": [1, 2, 3]}))
    blob[-3] ^= 1
    with pytest.raises(bundle.ChecksumError):
        bundle.loads(bytes(blob))


arrays = st.integers(0, 2**32 - 1).map(lambda s: np.random.default_rng(s).normal(size=(3, 2)))


@settings(max_examples=50, deadline=None)
@given(st.dictionaries(st.text(min_size=1, max_size=5),
                       st.one_of(st.integers(), st.floats(allow_nan=False), st.text(), arrays),
                       max_size=5))
def test_state_serialization_round_trips(state):
    back = bundle.loads(bundle.dumps(state))
    assert set(back) == set(state)
    for k, v in state.items():
        if isinstance(v, np.ndarray):
            assert back[k].tobytes() == v.tobytes() and back[k].dtype == v.dtype
        else:
            assert back[k] == v or (isinstance(v, float) and np.isinf(v) and back[k] == v)
    assert bundle.dumps(back) == bundle.dumps(state)


# Configuration and seeding

def test_config_defaults_and_overrides():
    cfg = PipelineConfig.from_text("rf.n_estimators = 7  # few trees\nmodalities = gat, fp\n")
    assert cfg["rf.n_estimators"] == 7 and cfg.modalities == ("FP", "GAT")
    assert PipelineConfig.from_text(cfg.to_text()) == cfg
    assert PipelineConfig()["gat.learning_rate"] == DEFAULTS["gat.learning_rate"]


@pytest.mark.parametrize("text", ["bogus = 1", "rf.n_estimators = many", "svm.kernel = rbf",
                                  "modalities = FP,Smell", "test_fraction = 1.5", "select_k = 3\nselect_k = 4"])
def test_bad_config_rejected(text):
    with pytest.raises(ConfigError):
        PipelineConfig.from_text(text)


def test_modalities_are_canonically_ordered():
    assert parse_modalities("GAT,Desc") == ("Desc", "GAT")


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**64 - 1), st.lists(st.one_of(st.integers(0, 1000), st.text(max_size=8)), max_size=4))
def test_derived_seeds_are_stable_and_distinct(root, labels):
    a = derive_seed(root, *labels)
    assert a == derive_seed(root, *labels) and 0 <= a < 2**64
    assert derive_seed(root, *labels, "x") != derive_seed(root, *labels, "y")


def test_synthetic_labels_follow_rule():
    rows = make_dataset(60, seed=1)
    assert all(true_label(s) == y for s, y in rows)
    assert 0 < sum(y for _, y in rows) < 60
    assert rows == make_dataset(60, seed=1)


# Command line

@pytest.fixture(scope="module")
def cli_files(tmp_path_factory):
    d = tmp_path_factory.mktemp("cli")
    write_csv(make_dataset(60, seed=8), d / "data.csv")
    (d / "small.cfg").write_text(SMALL)
    return d


def run_cli(capsys, *argv):
    code = cli.main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_cli_train_predict_explain(cli_files, capsys):
    d = cli_files
    common = ["--config", d / "small.cfg", "--seed", 3]
    code, out, err = run_cli(capsys, *common, "train", d / "data.csv", "--bundle", d / "m.stx")
    assert code == 0 and (d / "m.stx").exists() and "auc" in err.lower()
    code, out, _ = run_cli(capsys, "predict", d / "data.csv", "--bundle", d / "m.stx")
    lines = out.splitlines()
    assert code == 0 and lines[0].startswith("smiles") and len(lines) == 61
    code, out, _ = run_cli(capsys, "explain", d / "data.csv", "--bundle", d / "m.stx",
                           "--summary", d / "rank.csv")
    assert code == 0 and out.splitlines()[0] == "sample_id,feature,phi,base_value"
    assert len(out.splitlines()) == 1 + 60 * 5
    ranking = (d / "rank.csv").read_text().splitlines()
    assert ranking[0] == "feature,mean_abs_phi" and len(ranking) == 6


def test_cli_ingest_and_alerts(cli_files, capsys):
    d = cli_files
    code, out, err = run_cli(capsys, "ingest", d / "data.csv")
    assert code == 0 and len(out.splitlines()) == 61
    code, out, err = run_cli(capsys, "alerts", d / "data.csv")
    assert code == 0 and out.splitlines()[0] == "smiles,alerts" and len(out.splitlines()) == 61
    assert err.splitlines()[0].split()[:2] == ["alert", "hits"]


def test_cli_reports_stage_on_failure(cli_files, capsys):
    code, _, err = run_cli(capsys, "predict", cli_files / "data.csv", "--bundle", cli_files / "missing.stx")
    assert code == 1 and err.startswith("error: [")


def test_cli_rejects_bad_config(cli_files, capsys):
    (cli_files / "bad.cfg").write_text("nope = 1\n")
    code, _, err = run_cli(capsys, "--config", cli_files / "bad.cfg", "train", cli_files / "data.csv",
                           "--bundle", cli_files / "never.stx")
    assert code == 1 and "nope" in err and not (cli_files / "never.stx").exists()
