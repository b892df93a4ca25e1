import json

import pytest
import yaml

from tkgaug import cli, synthetic
from tkgaug import pipeline as P


def write_raw(root, spec=synthetic.SyntheticSpec(n_entities=50, n_relations=4, n_timestamps=15, n_pairs=200)):
    d = synthetic.generate(spec, seed=5).dataset
    root.mkdir(parents=True, exist_ok=True)
    for split in ("train", "valid", "test"):
        with open(root / f"{split}.txt", "w") as fh:
            for s, r, o, t in d.split(split).tolist():
                fh.write(f"ent{s}\trel{r}\tent{o}\t{t}\n")
    return root


def make_config(tmp_path, **sections):
    raw = {
        "dataset": {"path": str(write_raw(tmp_path / "raw")), "format": "generic-tsv"},
        "filter": {"m": 5, "L_r": 3, "L_t": 3, "k_sparse": 50},
        "model": {"dim": 8, "lr": 0.1},
        "schedule": {"epochs_total": 6, "pretrain_epochs": 2, "batches_per_epoch": 4, "n_neg": 10,
                     "eval_every": 2, "patience": 5},
        "recovery": {"m": [1, 5], "L_r": [3], "L_t": [3]},
        "output_dir": str(tmp_path / "out"),
    }
    for k, v in sections.items():
        raw[k] = {**raw.get(k, {}), **v} if isinstance(v, dict) else v
    path = tmp_path / "cfg.yaml"
    path.write_text(yaml.safe_dump(raw))
    return str(path)


def run(*args):
    return cli.main(list(args))


def test_full_pipeline(tmp_path, capsys):
    cfg = make_config(tmp_path)
    out = tmp_path / "out"
    assert run("ingest", "--config", cfg) == 0
    assert "entities 50" in capsys.readouterr().out or (out / "dataset" / "meta.json").exists()
    first = (out / "dataset" / "train.tsv").read_bytes()
    assert run("ingest", "--config", cfg) == 0
    assert (out / "dataset" / "train.tsv").read_bytes() == first

    assert run("augment", "--config", cfg, "--seed", "1") == 0
    summary = json.loads((out / "augment_summary.json").read_text())
    assert summary["candidates"] == sum(summary["provenance"].values())
    scored = (out / "scored.tsv").read_bytes()
    assert run("augment", "--config", cfg, "--seed", "1", "--threads", "3") == 0
    assert (out / "scored.tsv").read_bytes() == scored

    assert run("train", "--config", cfg, "--seed", "1") == 0
    assert run("train", "--config", cfg, "--seed", "1", "--no-augment") == 0
    for name in ("model.npz", "train_log.jsonl", "baseline_model.npz", "baseline_train_log.jsonl"):
        assert (out / name).exists()
    assert run("eval", "--config", cfg) == 0
    assert run("eval", "--config", cfg, "--no-augment") == 0
    a = json.loads((out / "eval_report.json").read_text())
    b = json.loads((out / "baseline_eval_report.json").read_text())
    assert set(a) == set(b) and 0 < a["mrr"] <= 1 and 0 < b["mrr"] <= 1
    assert (out / "ranks.tsv").read_text().count("\n") == a["n_facts"]

    assert run("recovery", "--config", cfg) == 0
    rec = json.loads((out / "recovery.json").read_text())
    assert len(rec["runs"]) == 2 and 0 <= rec["best"]["rate"] <= 1


def test_missing_dataset_file(tmp_path, capsys):
    cfg = make_config(tmp_path, dataset={"path": str(tmp_path / "absent.tsv")})
    assert run("ingest", "--config", cfg) != 0
    assert "absent.tsv" in capsys.readouterr().err


def test_parse_error_exit(tmp_path, capsys):
    bad = tmp_path / "bad.tsv"
    bad.write_text("a\tb\n")
    cfg = make_config(tmp_path, dataset={"path": str(bad)})
    assert run("ingest", "--config", cfg) != 0
    assert ":1" in capsys.readouterr().err


@pytest.mark.parametrize("stage, missing", [("augment", "ingest"), ("train", "ingest"),
                                            ("eval", "ingest"), ("recovery", "ingest")])
def test_missing_upstream(tmp_path, capsys, stage, missing):
    cfg = make_config(tmp_path)
    assert run(stage, "--config", cfg) != 0
    assert f"'{missing}'" in capsys.readouterr().err


def test_train_needs_augment_and_eval_needs_train(tmp_path, capsys):
    cfg = make_config(tmp_path)
    assert run("ingest", "--config", cfg) == 0
    assert run("train", "--config", cfg) != 0
    assert "'augment'" in capsys.readouterr().err
    assert run("eval", "--config", cfg) != 0
    assert "'train'" in capsys.readouterr().err


def test_gated_out_augment_warns(tmp_path, caplog):
    dense = tmp_path / "dense.tsv"
    dense.write_text("".join(f"e{a}\tr\te{b}\t{t}\n" for a in range(6) for b in range(6) if a != b for t in range(2)))
    cfg = make_config(tmp_path, filter={"k_sparse": 2}, dataset={"path": str(dense)})
    assert run("ingest", "--config", cfg) == 0
    with caplog.at_level("WARNING"):
        assert run("augment", "--config", cfg) == 0
    assert (tmp_path / "out" / "candidates.tsv").read_text() == ""
    assert any("no candidate" in r.message for r in caplog.records)


def test_output_dir_flag(tmp_path):
    cfg = make_config(tmp_path)
    assert run("ingest", "--config", cfg, "--output-dir", str(tmp_path / "elsewhere")) == 0
    assert (tmp_path / "elsewhere" / "dataset" / "meta.json").exists()


def test_config_rejects_unknown_keys(tmp_path):
    with pytest.raises(ValueError):
        P.config_from_dict({"filter": {"mm": 3}})
    with pytest.raises(ValueError):
        P.config_from_dict({"bogus": 1})
    cfg = P.config_from_dict({"filter": {"m": 4}, "recovery": {"m": [1, 2]}, "seed": 9})
    assert cfg.filter.m == 4 and cfg.recovery.m == (1, 2) and cfg.seed == 9
