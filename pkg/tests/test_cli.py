"""Command-line driver: config resolution, manifests, exit codes, and
the five subcommands end to end (in-process, no shells)."""

import hashlib
import json
import os
import shutil

import numpy as np
import pytest

from graphmix.cli import (RunConfig, apply_overrides, check_model_axes,
                          config_hash, main)
from graphmix.classifiers import load_classifier
from graphmix.embeddings import load_embeddings
from graphmix.errors import ConfigError
from graphmix.evaluation import load_split, save_split, stratified_kfold
from graphmix.graphs import Dataset, Graph, load_text_dataset, \
    save_text_dataset


def cycle_dataset(num=30, seed=0):
    """Structure-only two-class corpus, as in the evaluation tests."""
    rng = np.random.default_rng(seed)
    graphs = []
    for i in range(num):
        cls = i % 2
        pattern = [0, 1] * 4 if cls == 0 else [0, 0, 1, 1] * 2
        rot = int(rng.integers(8))
        feats = np.array(pattern[rot:] + pattern[:rot])
        arcs = []
        for u in range(8):
            v = (u + 1) % 8
            arcs += [[u, v, 0], [v, u, 0]]
        graphs.append(Graph(8, np.array(arcs), feats, target=cls))
    return Dataset(graphs, 2, 1, "graph-classification", 2,
                   undirected_source=True)


@pytest.fixture()
def cache(tmp_path):
    path = tmp_path / "planted.jsonl"
    save_text_dataset(cycle_dataset(), path)
    return str(path)


@pytest.fixture()
def tu_dir(tmp_path):
    base = tmp_path / "tu" / "TOY"
    os.makedirs(base)

    def write(name, lines):
        with open(base / f"TOY_{name}.txt", "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n")

    write("graph_indicator", ["1", "1", "1", "2", "2", "3", "3", "3"])
    write("A", ["1, 2", "2, 1", "2, 3", "3, 2", "4, 5", "5, 4",
                "6, 7", "7, 6", "7, 8", "8, 7"])
    write("graph_labels", ["1", "2", "1"])
    write("node_labels", ["0", "1", "0", "1", "0", "0", "1", "0"])
    return str(tmp_path / "tu")


def write_config(tmp_path, name, settings):
    path = tmp_path / name
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(settings, fh)
    return str(path)


def embed_config(cache, **extra):
    base = {"dataset": cache, "model": "cgmm", "layers": 2, "C": 3,
            "epochs": 3, "kind": "unigram", "aggregation": "sum"}
    base.update(extra)
    return base


class TestConfigResolution:
    """Files plus ``--set`` overrides resolve into one flat record."""

    def test_overrides_parse_json_then_fall_back_to_text(self):
        config = apply_overrides({"a": {"b": 1}},
                                 ["a.b=2", "c=[1,2]", "d=text"])
        assert config == {"a": {"b": 2}, "c": [1, 2], "d": "text"}

    def test_override_needs_equals_sign(self):
        with pytest.raises(ConfigError, match="key=value"):
            apply_overrides({}, ["broken"])

    def test_hash_ignores_key_order(self):
        assert config_hash({"a": 1, "b": 2}) == config_hash({"b": 2, "a": 1})
        assert config_hash({"a": 1}) != config_hash({"a": 2})

    def test_missing_config_file(self, tmp_path, capsys):
        assert main(["embed", "--config", str(tmp_path / "nope.json"),
                     "--out", str(tmp_path)]) == 2
        assert "not found" in capsys.readouterr().err

    def test_workers_validation(self):
        with pytest.raises(ConfigError, match="workers"):
            RunConfig("embed", workers=0).check()
        with pytest.raises(ConfigError, match="deterministic"):
            RunConfig("embed", workers=2, deterministic=True).check()


class TestModelAxisConsistency:
    """Hyper-parameters must match the model kind they are set for."""

    def test_own_axes_accepted(self):
        check_model_axes("cgmm", {"C", "layers", "emission", "layer_scope"})
        check_model_axes("ecgmm", {"C", "C_E", "arc_source"})
        check_model_axes("icgmm", {"alpha0", "gamma", "sweeps", "auto"})
        check_model_axes("icgmm-fast", {"alpha0", "burn_in"})

    def test_foreign_axis_refused_with_owner_named(self):
        with pytest.raises(ConfigError, match="belongs to icgmm"):
            check_model_axes("cgmm", {"alpha0"})
        with pytest.raises(ConfigError, match="does not apply to icgmm"):
            check_model_axes("icgmm", {"C"})
        with pytest.raises(ConfigError, match="does not apply to cgmm"):
            check_model_axes("cgmm", {"C_E"})

    def test_unknown_model(self):
        with pytest.raises(ConfigError, match="unknown model"):
            check_model_axes("transformer", set())


class TestExitCodes:
    """0 success, 2 usage/config, 3 data integrity, 4 numerical."""

    def test_no_subcommand_is_usage_error(self):
        with pytest.raises(SystemExit) as err:
            main([])
        assert err.value.code == 2

    def test_config_error_maps_to_two(self, tmp_path, capsys):
        assert main(["ingest", "--path", "/nowhere", "--name", "X",
                     "--out", str(tmp_path)]) == 2
        assert "error:" in capsys.readouterr().err

    def test_data_error_maps_to_three(self, tmp_path, cache, capsys):
        # embeddings for 30 graphs against a 4-graph dataset
        out = tmp_path / "emb"
        cfg = write_config(tmp_path, "e.json", embed_config(cache))
        assert main(["embed", "--config", cfg, "--out", str(out)]) == 0
        capsys.readouterr()
        small = tmp_path / "small.jsonl"
        save_text_dataset(cycle_dataset(4), small)
        ccfg = write_config(tmp_path, "c.json", {
            "embeddings": str(out / "embeddings.bin"),
            "dataset": str(small)})
        assert main(["classify", "--config", ccfg,
                     "--out", str(tmp_path / "clf")]) == 3
        assert "embedding rows" in capsys.readouterr().err

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_numerical_error_maps_to_four(self, tmp_path, cache, capsys):
        out = tmp_path / "emb"
        cfg = write_config(tmp_path, "e.json", embed_config(cache))
        main(["embed", "--config", cfg, "--out", str(out)])
        capsys.readouterr()
        ccfg = write_config(tmp_path, "c.json", {
            "embeddings": str(out / "embeddings.bin"), "dataset": cache,
            "architecture": "one-hidden", "hidden_units": 4,
            "learning_rate": 1e200, "max_epochs": 10, "patience": 10})
        code = main(["classify", "--config", ccfg,
                     "--out", str(tmp_path / "clf")])
        assert code == 4
        assert "learning rate" in capsys.readouterr().err


class TestIngest:
    """TU directory to cache file, deterministically."""

    def test_cache_file_round_trips(self, tu_dir, tmp_path, capsys):
        out = tmp_path / "cache"
        assert main(["ingest", "--path", tu_dir, "--name", "TOY",
                     "--out", str(out)]) == 0
        cache = capsys.readouterr().out.strip()
        d = load_text_dataset(cache)
        assert d.num_graphs == 3
        assert d.num_classes == 2
        assert d.undirected_source

    def test_rerun_gives_identical_cache_hash(self, tu_dir, tmp_path,
                                              capsys):
        digests = []
        for sub in ("a", "b"):
            main(["ingest", "--path", tu_dir, "--name", "TOY",
                  "--out", str(tmp_path / sub)])
            cache = capsys.readouterr().out.strip()
            with open(cache, "rb") as fh:
                digests.append(hashlib.sha256(fh.read()).hexdigest())
        assert digests[0] == digests[1]

    def test_manifest_written(self, tu_dir, tmp_path, capsys):
        out = tmp_path / "cache"
        main(["ingest", "--path", tu_dir, "--name", "TOY",
              "--out", str(out)])
        capsys.readouterr()
        with open(out / "manifest.json", encoding="utf-8") as fh:
            manifest = json.load(fh)
        assert manifest["command"] == "ingest"
        assert manifest["config_hash"] == config_hash(manifest["config"])
        assert set(manifest["versions"]) == \
            {"graphmix", "python", "numpy", "scipy"}


class TestEmbed:
    """Stack training through the driver, with resumable checkpoints."""

    def test_single_layer_width_equals_state_count(self, tmp_path, cache,
                                                   capsys):
        cfg = write_config(tmp_path, "e.json",
                           embed_config(cache, layers=1, C=3))
        out = tmp_path / "emb"
        assert main(["embed", "--config", cfg, "--out", str(out)]) == 0
        path = capsys.readouterr().out.strip()
        table = load_embeddings(path)
        assert table.vectors.shape == (30, 3)

    def test_kill_between_layers_resumes_identically(self, tmp_path, cache,
                                                     capsys):
        cfg = write_config(tmp_path, "e.json", embed_config(cache))
        full = tmp_path / "full"
        main(["embed", "--config", cfg, "--out", str(full), "--seed", "5"])
        resumed = tmp_path / "resumed"
        os.makedirs(resumed / "stack")
        for name in os.listdir(full / "stack"):
            # a kill after layer 0: its files survive, the rest are gone
            if name.startswith("layer_00"):
                shutil.copy(full / "stack" / name, resumed / "stack" / name)
        main(["embed", "--config", cfg, "--out", str(resumed),
              "--seed", "5"])
        capsys.readouterr()
        with open(full / "embeddings.bin", "rb") as fh:
            a = fh.read()
        with open(resumed / "embeddings.bin", "rb") as fh:
            b = fh.read()
        assert a == b

    def test_equal_manifests_imply_equal_outputs(self, tmp_path, cache,
                                                 capsys):
        cfg = write_config(tmp_path, "e.json", embed_config(cache))
        blobs, manifests = [], []
        for sub in ("a", "b"):
            out = tmp_path / sub
            main(["embed", "--config", cfg, "--out", str(out),
                  "--seed", "9", "--deterministic"])
            with open(out / "embeddings.bin", "rb") as fh:
                blobs.append(fh.read())
            with open(out / "manifest.json", encoding="utf-8") as fh:
                manifests.append(json.load(fh))
        capsys.readouterr()
        assert manifests[0] == manifests[1]
        assert blobs[0] == blobs[1]

    def test_auto_mode_records_concentration_trajectories(self, tmp_path,
                                                          cache, capsys):
        cfg = write_config(tmp_path, "i.json", {
            "dataset": cache, "model": "icgmm", "layers": 1, "sweeps": 4,
            "auto": True, "kind": "unigram"})
        out = tmp_path / "emb"
        assert main(["embed", "--config", cfg, "--out", str(out)]) == 0
        capsys.readouterr()
        with open(out / "metadata.json", encoding="utf-8") as fh:
            metadata = json.load(fh)
        assert len(metadata["alpha0_trajectory"][0]) == 4
        assert len(metadata["gamma_trajectory"][0]) == 4

    def test_classifier_axes_refused(self, tmp_path, cache, capsys):
        cfg = write_config(tmp_path, "e.json",
                           embed_config(cache, learning_rate=0.1))
        assert main(["embed", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 2
        assert "classifier axes" in capsys.readouterr().err

    def test_foreign_model_axis_refused(self, tmp_path, cache, capsys):
        cfg = write_config(tmp_path, "e.json",
                           embed_config(cache, alpha0=0.5))
        assert main(["embed", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 2
        assert "alpha0" in capsys.readouterr().err


class TestClassify:
    """Classifier training against exported embeddings."""

    @pytest.fixture()
    def embeddings(self, tmp_path, cache, capsys):
        cfg = write_config(tmp_path, "e.json",
                           embed_config(cache, layers=2, C=4, epochs=6))
        out = tmp_path / "emb"
        main(["embed", "--config", cfg, "--out", str(out), "--seed", "3"])
        capsys.readouterr()
        return str(out / "embeddings.bin")

    def test_artifacts_and_metrics(self, tmp_path, cache, embeddings,
                                   capsys):
        ccfg = write_config(tmp_path, "c.json", {
            "embeddings": embeddings, "dataset": cache,
            "architecture": "linear", "learning_rate": 0.1,
            "max_epochs": 60, "patience": 30})
        out = tmp_path / "clf"
        assert main(["classify", "--config", ccfg, "--out", str(out)]) == 0
        printed = json.loads(capsys.readouterr().out.strip())
        with open(out / "metrics.json", encoding="utf-8") as fh:
            report = json.load(fh)
        assert report == printed
        assert 0.0 <= report["validation"] <= 1.0
        params = load_classifier(str(out / "classifier.bin"))
        assert params.num_features == 8
        with open(out / "predictions.csv", encoding="utf-8") as fh:
            rows = fh.read().strip().splitlines()
        assert len(rows) == 31

    def test_missing_targets_rejected(self, tmp_path, embeddings, capsys):
        bare = cycle_dataset()
        for g in bare.graphs:
            g.target = None
        unlabeled = tmp_path / "unlabeled.jsonl"
        save_text_dataset(bare, unlabeled)
        ccfg = write_config(tmp_path, "c.json", {
            "embeddings": embeddings, "dataset": str(unlabeled)})
        assert main(["classify", "--config", ccfg,
                     "--out", str(tmp_path / "x")]) == 3
        assert "target" in capsys.readouterr().err


class TestEvaluate:
    """The whole protocol behind one subcommand."""

    def eval_config(self, cache, **extra):
        base = {"dataset": cache,
                "grid": {"model": ["cgmm"], "layers": [3], "C": [4],
                         "epochs": [6], "kind": ["unigram"],
                         "aggregation": ["sum"], "architecture": ["linear"],
                         "learning_rate": [0.1], "max_epochs": [100],
                         "patience": [30]},
                "k": 3, "final_runs": 1}
        base.update(extra)
        return base

    def test_report_artifacts(self, tmp_path, cache, capsys):
        cfg = write_config(tmp_path, "v.json", self.eval_config(cache))
        out = tmp_path / "run"
        assert main(["evaluate", "--config", cfg, "--out", str(out),
                     "--seed", "4"]) == 0
        assert "±" in capsys.readouterr().out
        for name in ("report.json", "report.md", "report.csv",
                     "split.json", "manifest.json", "fold_00.json"):
            assert (out / name).exists(), name
        with open(out / "report.json", encoding="utf-8") as fh:
            report = json.load(fh)
        assert report["mean"] >= 0.9
        assert not report["incomplete"]

    def test_workers_change_nothing(self, tmp_path, cache, capsys):
        cfg = write_config(tmp_path, "v.json", self.eval_config(
            cache, k=2, grid={"model": ["cgmm"], "layers": [1], "C": [3],
                              "epochs": [2], "kind": ["unigram"],
                              "aggregation": ["sum"],
                              "architecture": ["linear"],
                              "learning_rate": [0.1], "max_epochs": [20],
                              "patience": [10]}))
        reports = []
        for sub, workers in (("w1", "1"), ("w2", "2")):
            out = tmp_path / sub
            assert main(["evaluate", "--config", cfg, "--out", str(out),
                         "--seed", "4", "--workers", workers]) == 0
            with open(out / "report.json", encoding="utf-8") as fh:
                reports.append(json.load(fh))
        capsys.readouterr()
        assert json.dumps(reports[0], sort_keys=True) == \
            json.dumps(reports[1], sort_keys=True)

    def test_precomputed_split_honored(self, tmp_path, cache, capsys):
        d = cycle_dataset()
        plan = stratified_kfold(d.targets().astype(int), 3, seed=77)
        split_path = tmp_path / "precomputed.json"
        save_split(plan, split_path)
        cfg = write_config(tmp_path, "v.json", self.eval_config(
            cache, split=str(split_path)))
        out = tmp_path / "run"
        assert main(["evaluate", "--config", cfg, "--out", str(out),
                     "--seed", "4"]) == 0
        capsys.readouterr()
        assert load_split(out / "split.json").to_json() == plan.to_json()

    def test_long_experiments_need_the_flag(self, tmp_path, cache, capsys):
        cfg = write_config(tmp_path, "v.json",
                           self.eval_config(cache, long=True, k=2))
        out = tmp_path / "run"
        assert main(["evaluate", "--config", cfg, "--out", str(out)]) == 2
        assert "--long-mode" in capsys.readouterr().err

    def test_grid_model_axis_mismatch(self, tmp_path, cache, capsys):
        settings = self.eval_config(cache)
        settings["grid"]["model"] = ["icgmm"]
        cfg = write_config(tmp_path, "v.json", settings)
        assert main(["evaluate", "--config", cfg,
                     "--out", str(tmp_path / "x")]) == 2
        err = capsys.readouterr().err
        assert "does not apply" in err


class TestInspect:
    """One command summarizes every artifact the package writes."""

    def test_dataset_and_stack_and_binaries(self, tmp_path, cache, capsys):
        cfg = write_config(tmp_path, "e.json",
                           embed_config(cache, layers=1))
        out = tmp_path / "emb"
        main(["embed", "--config", cfg, "--out", str(out)])
        capsys.readouterr()

        def kind_of(target):
            assert main(["inspect", str(target)]) == 0
            return json.loads(capsys.readouterr().out)["kind"]

        assert kind_of(cache) == "dataset"
        assert kind_of(out / "stack") == "layer stack"
        assert kind_of(out / "stack" / "layer_00.params") == \
            "layer-parameters"
        assert kind_of(out / "stack" / "layer_00.vertex.post") == \
            "frozen posterior"
        assert kind_of(out / "embeddings.bin") == "embeddings"
        assert kind_of(out / "manifest.json") == "json"

    def test_missing_and_foreign_files(self, tmp_path, capsys):
        assert main(["inspect", str(tmp_path / "ghost")]) == 2
        capsys.readouterr()
        alien = tmp_path / "alien.bin"
        with open(alien, "wb") as fh:
            fh.write(b"XOXO rest of it")
        assert main(["inspect", str(alien)]) == 3
        assert "unrecognized" in capsys.readouterr().err
