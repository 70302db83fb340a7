import json
import os
import subprocess
import sys

import numpy as np
import pytest

from csrec import seqrec, sim
from csrec.exceptions import MissingFtilde, ParseError, RoleMismatch, ValidationError
from csrec.harness import pipeline, storage
from csrec.harness.cli import main
from csrec.harness.config import ExperimentConfig, config_from_dict, load_config, parse_config
from csrec.harness.storage import Checkpoint
from csrec.seqrec import AdamState, SeqModelParams
from csrec.serialization import dumps, load_file, sha256_file


# --------------------------------------------------------------------------
# canonical JSON


@pytest.mark.parametrize(
    "value, text",
    [
        ({"b": 1, "a": [1.0, 0.1]}, '{"a":[1.0,0.10000000000000001],"b":1}'),
        ({"x": True, "y": None, "z": "é"}, '{"x":true,"y":null,"z":"é"}'),
        (np.array([1, 2]), "[1,2]"),
    ],
)
def test_canonical_json(value, text):
    assert dumps(value) == text


@pytest.mark.parametrize("value, err", [(float("nan"), ValueError), ({1: 2}, TypeError), (object(), TypeError)])
def test_canonical_json_rejects(value, err):
    with pytest.raises(err):
        dumps(value)


def test_floats_round_trip_exactly(rng):
    xs = rng.normal(size=50).tolist()
    assert json.loads(dumps(xs)) == xs


# --------------------------------------------------------------------------
# config


def test_empty_config_takes_defaults():
    cfg = parse_config("{}")
    m = cfg.model
    assert (m.embed_dim, m.max_seq_len, m.batch_size) == (64, 50, 256)
    assert (m.adam_beta1, m.adam_beta2, m.learning_rate) == (0.9, 0.999, 0.0005)
    assert cfg.eval.k == [5, 10, 20] and cfg.eval.alpha == [0.2, 0.5] and cfg.eval.beta == 3
    assert cfg.simulator.n_users == 200 and cfg.simulator.split == [0.8, 0.1, 0.1]
    assert cfg.simulator.intv_policy.kind == "uniform"


def test_config_hash_is_stable():
    assert config_from_dict({}).config_hash == ExperimentConfig().config_hash
    assert config_from_dict({"seed": 1}).config_hash != ExperimentConfig().config_hash


@pytest.mark.parametrize(
    "raw, field",
    [
        ({"model": {"learning_rate": -0.1}}, "model.learning_rate"),
        ({"model": {"embed_dim": 0}}, "model.embed_dim"),
        ({"model": {"embed_dim": 3.5}}, "model.embed_dim"),
        ({"model": {"detach_target": "yes"}}, "model.detach_target"),
        ({"model": {"lr": 0.1}}, "model.lr"),
        ({"simulator": {"drift_rate": 1.0}}, "simulator.drift_rate"),
        ({"simulator": {"split": [0.5, 0.5]}}, "simulator.split"),
        ({"simulator": {"split": [0.5, 0.3, 0.3]}}, "simulator.split"),
        ({"simulator": {"intv_policy": {"kind": "user-proposal"}}}, "simulator.intv_policy.kind"),
        ({"simulator": {"intv_policy": {"kind": "popularity", "weights": [1.0]}}}, "simulator.intv_policy.weights"),
        ({"eval": {"alpha": [0.2, 1.0]}}, "eval.alpha[1]"),
        ({"eval": {"k": []}}, "eval.k"),
        ({"eval": {"mode": "beam"}}, "eval.mode"),
        ({"seed": -1}, "seed"),
        ({"extra": 1}, "extra"),
        ({"output_dir": ""}, "output_dir"),
    ],
)
def test_validation_names_the_field(raw, field):
    with pytest.raises(ValidationError) as info:
        config_from_dict(raw)
    assert info.value.field == field


def test_parse_error_position():
    with pytest.raises(ParseError) as info:
        parse_config('{\n  "seed": 1,\n  oops\n}')
    assert (info.value.line, info.value.column) == (3, 3)


def test_non_utf8_config(tmp_path):
    path = tmp_path / "c.json"
    path.write_bytes(b'{"output_dir": "\xff"}')
    with pytest.raises(ParseError) as info:
        load_config(path)
    assert info.value.line == 1


def test_load_config_file(tmp_path):
    path = tmp_path / "c.json"
    path.write_text('{"model": {"epochs": 3}, "eval": {"beta": 2}}', encoding="utf-8")
    cfg = load_config(path)
    assert cfg.model.epochs == 3 and cfg.eval.beta == 2 and cfg.model.csrec_epochs == 10


# --------------------------------------------------------------------------
# storage


def test_checkpoint_bytes_round_trip(tmp_path):
    params = SeqModelParams.init(5, 3, seed=1)
    ckpt = Checkpoint("ftilde", params, {"embed_dim": 3}, AdamState.zeros_for(params))
    path = tmp_path / "c.json"
    data = storage.save_checkpoint(path, ckpt)
    back = storage.load_checkpoint(path, role="ftilde")
    assert back.to_bytes() == data
    assert back.params.flat().tobytes() == params.flat().tobytes()
    assert back.adam.step == 0


def test_checkpoint_role_check(tmp_path):
    path = tmp_path / "c.json"
    storage.save_checkpoint(path, Checkpoint("csrec", SeqModelParams.zeros(2, 2), {}))
    with pytest.raises(RoleMismatch):
        storage.load_checkpoint(path, role="ftilde")


@pytest.mark.parametrize(
    "mutate, err",
    [
        (lambda d: d.pop("format_version"), ParseError),
        (lambda d: d.update(kind="scm"), ParseError),
        (lambda d: d.update(role="oracle"), ValidationError),
        (lambda d: d["tensors"].pop("c"), ValidationError),
    ],
)
def test_bad_checkpoints(mutate, err):
    d = Checkpoint("csrec", SeqModelParams.zeros(2, 2), {}).to_dict()
    mutate(d)
    with pytest.raises(err):
        Checkpoint.from_dict(d)


def test_loss_trace_has_one_row_per_epoch():
    header, rows, meta = storage.read_csv(storage.loss_trace_csv(0.7, [0.6, 0.5, 0.4], [0.1, 0.05, 0.01]))
    assert header == ["epoch", "loss", "mean_sq_residual"]
    assert [r[0] for r in rows] == ["1", "2", "3"]
    assert float(meta["init_loss"]) == 0.7


def test_csv_without_version_line():
    with pytest.raises(ParseError):
        storage.read_csv("epoch,loss\n1,0.5\n")


def test_dataset_round_trip(tmp_path):
    cfg = config_from_dict({"simulator": {"n_users": 7, "n_genres": 2, "items_per_genre": 2,
                                          "obs_length": 4, "intv_length": 3, "drift_rate": 0.2}})
    catalog, records, splits = pipeline.simulate(cfg, threads=1)
    manifest = storage.write_dataset(tmp_path, catalog, records, splits, cfg.config_hash)
    data = storage.read_dataset(tmp_path)
    assert data.catalog == catalog and data.splits == splits
    assert [r.user for r in data.records] == [r.user for r in records]
    assert all(a.obs == b.obs and a.intv == b.intv for a, b in zip(data.records, records))
    assert manifest["dataset_hash"] == storage.dataset_hash(manifest["files"])
    assert data.manifest == manifest


def test_missing_dataset_file(tmp_path):
    with pytest.raises(FileNotFoundError):
        storage.read_dataset(tmp_path)


# --------------------------------------------------------------------------
# pipeline stages


@pytest.fixture(scope="module")
def small_run(tmp_path_factory, small_config_dict):
    out = tmp_path_factory.mktemp("run")
    cfg = config_from_dict(small_config_dict)
    manifest = pipeline.run_pipeline(cfg, str(out), threads=2)
    return cfg, out, manifest


def test_default_config_writes_one_line_per_user(tmp_path):
    manifest = pipeline.gen_data(ExperimentConfig(), tmp_path, threads=1)
    with open(tmp_path / "sequences.jsonl", encoding="utf-8") as fh:
        assert sum(1 for _ in fh) == 200
    again = pipeline.gen_data(ExperimentConfig(), tmp_path / "again", threads=4)
    assert again["dataset_hash"] == manifest["dataset_hash"]


def test_paper_scale_generation(tmp_path):
    cfg = config_from_dict({"simulator": {"n_users": 10000, "n_genres": 10, "items_per_genre": 100}})
    pipeline.gen_data(cfg, tmp_path)
    data = storage.read_dataset(tmp_path)
    assert len(data.records) == 10000 and len(data.catalog) == 1000
    assert [len(data.splits[k]) for k in ("train", "valid", "test")] == [8000, 1000, 1000]


def test_run_layout(small_run):
    _, out, manifest = small_run
    for name in ("config.json", "manifest.json", "timestamps.json", "ftilde.json", "csrec.json",
                 "ftilde.loss.csv", "csrec.loss.csv", "reports/ter.csv", "reports/csrec_intv.md"):
        assert (out / name).exists(), name
    assert load_file(out / "manifest.json") == manifest
    assert manifest["checkpoints"]["csrec"] == sha256_file(out / "csrec.json")
    for name, digest in manifest["reports"].items():
        assert sha256_file(out / "reports" / name) == digest


def test_retraining_reproduces_checkpoint(small_run, tmp_path):
    cfg, out, manifest = small_run
    pipeline.train("obs", out / "data", cfg, tmp_path / "f.json")
    assert sha256_file(tmp_path / "f.json") == manifest["checkpoints"]["ftilde"]
    _, rows, _ = storage.read_csv((tmp_path / "f.loss.csv").read_text(encoding="utf-8"))
    assert len(rows) == cfg.model.epochs


def test_csrec_needs_ftilde(small_run, tmp_path):
    cfg, out, _ = small_run
    with pytest.raises(MissingFtilde):
        pipeline.train("csrec", out / "data", cfg, tmp_path / "c.json")
    with pytest.raises(RoleMismatch):
        pipeline.train("csrec", out / "data", cfg, tmp_path / "c.json", ftilde_path=out / "csrec.json")


def test_interventional_reports(small_run):
    cfg, out, _ = small_run
    rep = pipeline.evaluate(out / "data", out / "csrec.json", "intv", cfg.eval, cfg.seed)
    assert {"AHR@0.2", "AHR@0.5", "BCE", "all/AHR@0.2"} <= set(rep.metrics)
    assert rep.metadata["kind"] == "csrec"
    base = pipeline.evaluate(out / "data", out / "ftilde.json", "intv", cfg.eval, cfg.seed)
    assert base.metadata["kind"] == "baseline" and "BCE_hard@0.2" in base.metrics


def test_zero_checkpoint_ranks_by_id(small_run, tmp_path):
    cfg, out, _ = small_run
    data = storage.read_dataset(out / "data")
    zero = SeqModelParams.zeros(len(data.catalog), 2)
    storage.save_checkpoint(tmp_path / "z.json", Checkpoint("ftilde", zero, {"max_seq_len": 50}))
    rep = pipeline.evaluate(out / "data", tmp_path / "z.json", "obs", cfg.eval, cfg.seed)
    from csrec import metrics

    pts = metrics.purchase_eval_points([r.obs for r in data.subset("test")])
    for k in cfg.eval.k:
        assert rep[f"HR@{k}"] == np.mean([t < k for _, t in pts])


def test_ter_rows(small_run):
    _, out, _ = small_run
    rows = pipeline.ter_rows(out / "data", out / "csrec.json", out / "ftilde.json", split="all")
    data = storage.read_dataset(out / "data")
    assert len(rows) == len(data.records) * len(data.catalog)
    assert all(r[4] == r[2] - r[3] for r in rows)
    same = pipeline.ter_rows(out / "data", out / "ftilde.json", out / "ftilde.json", context="obs")
    assert all(r[4] == 0.0 for r in same)


def test_ter_row_count_for_fifty_items(tmp_path):
    cfg = config_from_dict({"simulator": {"n_users": 10, "n_genres": 5, "items_per_genre": 10,
                                          "obs_length": 5, "intv_length": 5}})
    pipeline.gen_data(cfg, tmp_path / "d", threads=1)
    zero = Checkpoint("ftilde", SeqModelParams.zeros(50, 2), {})
    storage.save_checkpoint(tmp_path / "z.json", zero)
    rows = pipeline.ter_rows(tmp_path / "d", tmp_path / "z.json", tmp_path / "z.json", split="all")
    assert len(rows) == 500


def test_thread_count(monkeypatch):
    monkeypatch.setenv("CSREC_THREADS", "3")
    assert pipeline.thread_count() == 3
    monkeypatch.setenv("CSREC_THREADS", "0")
    with pytest.raises(ValueError):
        pipeline.thread_count()


# --------------------------------------------------------------------------
# command line


def test_cli_end_to_end(tmp_path, small_config_dict, capsys):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps(small_config_dict), encoding="utf-8")
    data, ft, cs = tmp_path / "data", tmp_path / "ft.json", tmp_path / "cs.json"
    assert main(["gen-data", "--config", str(cfg), "--out", str(data)]) == 0
    assert main(["train", "--config", str(cfg), "--mode", "obs", "--data", str(data), "--out", str(ft)]) == 0
    assert main(["train", "--config", str(cfg), "--mode", "csrec", "--data", str(data),
                 "--ftilde", str(ft), "--out", str(cs)]) == 0
    assert main(["eval", "--config", str(cfg), "--data", str(data), "--ckpt", str(cs), "--mode", "intv",
                 "--alpha", "0.2,0.5", "--beta", "2", "--rollout", "--out", str(tmp_path / "rep")]) == 0
    report = (tmp_path / "rep" / "csrec_intv.csv").read_text(encoding="utf-8")
    assert "# beta=2" in report and "AHR@0.5," in report
    assert main(["eval", "--data", str(data), "--ckpt", str(ft), "--mode", "obs", "--k", "1,3",
                 "--out", str(tmp_path / "rep")]) == 0
    assert "HR@3" in (tmp_path / "rep" / "ftilde_obs.csv").read_text(encoding="utf-8")
    assert main(["ter", "--data", str(data), "--ckpt", str(cs), "--ftilde", str(ft), "--items", "0,1",
                 "--out", str(tmp_path / "ter.csv")]) == 0
    summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
    assert summary["n"] == 2 * len(storage.read_dataset(data).splits["test"])


@pytest.mark.parametrize(
    "argv",
    [
        ["train", "--mode", "csrec", "--data", "{data}", "--out", "{tmp}/x.json"],
        ["train", "--mode", "sgd", "--data", "{data}", "--out", "{tmp}/x.json"],
        ["gen-data", "--config", "{tmp}/missing.json", "--out", "{tmp}/d"],
        ["eval", "--data", "{data}", "--ckpt", "{tmp}/none.json", "--mode", "obs", "--out", "{tmp}"],
        ["verify"],
        [],
    ],
)
def test_cli_invalid_input_exits_one(argv, small_run, tmp_path):
    _, out, _ = small_run
    argv = [a.format(data=out / "data", tmp=tmp_path) for a in argv]
    with pytest.raises(SystemExit) as info:
        sys.exit(main(argv))
    assert info.value.code == 1


def test_cli_reports_validation_errors(tmp_path, capsys):
    cfg = tmp_path / "bad.json"
    cfg.write_text('{"model": {"learning_rate": -1}}', encoding="utf-8")
    assert main(["gen-data", "--config", str(cfg), "--out", str(tmp_path / "d")]) == 1
    assert "model.learning_rate" in capsys.readouterr().err


def test_cli_verify_suite(capsys):
    assert main(["verify", "--suite", "metrics"]) == 0
    assert "suite metrics: PASS" in capsys.readouterr().out


def test_console_script_is_installed(tmp_path):
    res = subprocess.run([sys.executable, "-m", "csrec.harness.cli", "verify", "--suite", "theorem1"],
                         capture_output=True, text=True, env={**os.environ, "CSREC_THREADS": "1"})
    assert res.returncode == 0, res.stderr
    assert res.stdout.strip().endswith("suite theorem1: PASS")


def test_dataset_records_are_simulator_output(small_run):
    cfg, out, _ = small_run
    data = storage.read_dataset(out / "data")
    sc = cfg.simulator
    user = data.records[0].user
    again = sim.simulate_observational(user, sc.decision_params, data.catalog, sc.obs_policy.to_policy(),
                                       sc.obs_length, cfg.seed)
    assert again == data.records[0].obs
    assert seqrec.Hyperparams(**{k: v for k, v in load_file(out / "ftilde.json")["hyperparams"].items()
                                 if k != "n_items"}).embed_dim == cfg.model.embed_dim
