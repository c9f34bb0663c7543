from __future__ import annotations

import json
import shutil

import pytest
from click.testing import CliRunner
from filelock import FileLock

from clarq.cli import main
from clarq.pipeline import load_config


@pytest.fixture
def workspace(tmp_path, minidump_dir, monkeypatch):
    monkeypatch.delenv("CLARQ_WORKDIR", raising=False)
    shutil.copytree(minidump_dir, tmp_path / "md")
    return tmp_path / "md"


def invoke(*args: str):
    return CliRunner().invoke(main, list(args))


def error_of(result) -> dict:
    return json.loads(result.stderr.strip().splitlines()[-1])


def test_refine_before_seed_names_d0(workspace):
    cfg = str(workspace / "config.yaml")
    assert invoke("ingest", "--config", cfg).exit_code == 0
    result = invoke("refine", "--config", cfg)
    assert result.exit_code == 2
    err = error_of(result)
    assert err["error"] == "MissingArtifact" and err["artifact"] == "D0"
    assert "D0" in err["message"]


def test_refine_on_fresh_workdir_names_d0(workspace):
    result = invoke("refine", "--config", str(workspace / "config.yaml"))
    assert result.exit_code == 2
    assert error_of(result)["artifact"] == "D0"


def test_manifest_fields(workspace):
    cfg = str(workspace / "config.yaml")
    assert invoke("ingest", "--config", cfg).exit_code == 0
    manifest = json.loads((workspace / "work" / "manifests" / "ingest.json").read_text())
    assert {"stage", "inputs", "config_hash", "seed", "counts", "wall_time"} <= set(manifest)
    assert manifest["seed"] == 2020
    assert set(manifest["counts"]["domains"]) == {"cooking", "travel"}
    assert "dump:cooking/Posts.xml" in manifest["inputs"]


def test_config_hash_mismatch_is_refused(workspace):
    cfg = str(workspace / "config.yaml")
    assert invoke("ingest", "--config", cfg).exit_code == 0
    result = invoke("seed", "--config", cfg, "--seed", "7")
    assert result.exit_code == 3
    assert error_of(result)["error"] == "ConfigMismatch"
    assert invoke("seed", "--config", cfg, "--seed", "7", "--allow-mixed").exit_code == 0


def test_domain_allowlist(workspace):
    cfg = str(workspace / "config.yaml")
    assert invoke("ingest", "--config", cfg, "--domains", "travel").exit_code == 0
    assert sorted(p.name for p in (workspace / "work" / "corpus").iterdir()) == ["travel.jsonl"]
    result = invoke("ingest", "--config", cfg, "--domains", "nope")
    assert result.exit_code == 2
    assert error_of(result)["error"] == "ConfigError"


def test_workdir_env_override(workspace, tmp_path, monkeypatch):
    other = tmp_path / "elsewhere"
    monkeypatch.setenv("CLARQ_WORKDIR", str(other))
    assert invoke("ingest", "--config", str(workspace / "config.yaml")).exit_code == 0
    assert (other / "manifests" / "ingest.json").exists()
    assert not (workspace / "work").exists()


def test_locked_workdir_is_refused(workspace):
    work = workspace / "work"
    work.mkdir()
    with FileLock(str(work / ".clarq.lock")):
        result = invoke("ingest", "--config", str(workspace / "config.yaml"))
    assert result.exit_code == 1
    assert "in use" in error_of(result)["message"]


def test_missing_config_file(tmp_path):
    result = invoke("ingest", "--config", str(tmp_path / "absent.yaml"))
    assert result.exit_code == 2
    assert error_of(result)["error"] == "ConfigError"


def test_loading_config_creates_nothing(workspace):
    load_config(workspace / "config.yaml")
    assert not (workspace / "work").exists()
