import csv

import pytest

from solarchip.cli import EXIT_COLLISION, EXIT_MISSING, EXIT_OK, EXIT_USAGE, main
from solarchip.data.storage import read_manifest
from solarchip.runs import RunConfig, apply_overrides, file_sha256, load_config

TINY = ["--set", "backbone.d_model=8", "--set", "backbone.d_ctr=8", "--set", "backbone.conv_width=4",
        "--set", "backbone.decoder_dim=8", "--set", "batch_size=4", "--set", "checkpoint_every=0"]


def rows(path):
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


@pytest.fixture(scope="module")
def archive_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("cli") / "archive"
    assert main(["gen-data", "--out", str(out), "--count", "24", "--side", "32", "--seed", "3"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def pretrained(tmp_path_factory, archive_dir):
    out = tmp_path_factory.mktemp("cli") / "pre"
    assert main(["pretrain", "--archive", str(archive_dir), "--out", str(out), "--steps", "3", *TINY]) == EXIT_OK
    return out


def test_defaults():
    cfg = RunConfig()
    assert (cfg.count, cfg.side, cfg.seed) == (256, 64, 7)


def test_config_file_and_overrides(tmp_path):
    (tmp_path / "c.txt").write_text("# comment\nsteps=12\nbackbone.kind=transformer\nfrozen=yes\n")
    cfg = load_config(tmp_path / "c.txt")
    assert cfg.steps == 12 and cfg.backbone.kind == "transformer" and cfg.frozen is True
    with pytest.raises(KeyError):
        apply_overrides(cfg, {"nope": "1"})
    assert cfg.hash() != RunConfig().hash()


def test_usage_errors(tmp_path):
    assert main(["gen-data", "--out", str(tmp_path / "a"), "--count", "0"]) == EXIT_USAGE
    assert main(["bogus"]) == EXIT_USAGE
    assert main(["gen-data", "--out", str(tmp_path / "a"), "--set", "unknown=1"]) == EXIT_USAGE
    assert main(["gen-data", "--config", str(tmp_path / "missing.txt")]) == EXIT_USAGE


def test_gen_data_manifest_and_collision(archive_dir):
    meta = read_manifest(archive_dir / "manifest.txt")
    assert meta["status"] == "complete" and meta["count"] == "24" and meta["command"] == "gen-data"
    assert "class_thresholds" in meta and meta["seed"] == "3"
    assert sorted(p.name for p in archive_dir.iterdir() if p.name.startswith("manifest")) == ["manifest.txt"]
    assert main(["gen-data", "--out", str(archive_dir), "--count", "24", "--side", "32", "--seed", "3"]) \
        == EXIT_COLLISION


def test_gen_data_rerun_identical(tmp_path, archive_dir):
    out = tmp_path / "again"
    assert main(["gen-data", "--out", str(out), "--count", "24", "--side", "32", "--seed", "3"]) == EXIT_OK
    for sub in ("labels.csv", "latent.csv", "events.csv"):
        assert (out / sub).read_bytes() == (archive_dir / sub).read_bytes()
    for p in (archive_dir / "grids").iterdir():
        assert (out / "grids" / p.name).read_bytes() == p.read_bytes()


def test_force_replaces_only_run_directories(tmp_path):
    out = tmp_path / "a"
    args = ["gen-data", "--out", str(out), "--count", "2", "--side", "16"]
    assert main(args) == EXIT_OK
    assert main(args + ["--force"]) == EXIT_OK
    stranger = tmp_path / "b"
    stranger.mkdir()
    (stranger / "keep.txt").write_text("x")
    assert main(["gen-data", "--out", str(stranger), "--count", "2", "--side", "16", "--force"]) == EXIT_COLLISION
    assert (stranger / "keep.txt").exists()


def test_env_var_output_root(tmp_path, monkeypatch):
    monkeypatch.setenv("SOLARCHIP_OUT", str(tmp_path / "root"))
    assert main(["gen-data", "--count", "2", "--side", "16"]) == EXIT_OK
    assert (tmp_path / "root" / "archive" / "manifest.txt").exists()


def test_pretrain_one_step_one_row(tmp_path, archive_dir):
    out = tmp_path / "p"
    assert main(["pretrain", "--archive", str(archive_dir), "--out", str(out), "--steps", "1", *TINY]) == EXIT_OK
    assert len(rows(out / "loss.csv")) == 1
    assert (out / "final.npz").exists()
    meta = read_manifest(out / "manifest.txt")
    assert meta["archive_manifest_sha256"] == file_sha256(archive_dir / "manifest.txt")


def test_pretrain_zero_lambdas(tmp_path, archive_dir):
    out = tmp_path / "p"
    args = ["pretrain", "--archive", str(archive_dir), "--out", str(out), "--steps", "2",
            "--lambda1", "0", "--lambda2", "0", "--lambda3", "0", *TINY]
    assert main(args) == EXIT_OK
    for r in rows(out / "loss.csv"):
        assert float(r["cls"]) == float(r["pat"]) == float(r["int"]) == 0.0


def test_pretrain_missing_archive(tmp_path):
    assert main(["pretrain", "--archive", str(tmp_path / "none"), "--out", str(tmp_path / "p")]) == EXIT_MISSING


def test_resume_matches_uninterrupted(tmp_path, archive_dir, pretrained):
    out = tmp_path / "r"
    assert main(["pretrain", "--archive", str(archive_dir), "--out", str(out), "--steps", "1", *TINY]) == EXIT_OK
    assert main(["pretrain", "--archive", str(archive_dir), "--resume", str(out / "final.npz"), "--steps", "3",
                 *TINY]) == EXIT_OK
    assert (out / "loss.csv").read_bytes() == (pretrained / "loss.csv").read_bytes()


def test_pretrain_rerun_byte_identical(tmp_path, archive_dir, pretrained):
    out = tmp_path / "again"
    assert main(["pretrain", "--archive", str(archive_dir), "--out", str(out), "--steps", "3", *TINY]) == EXIT_OK
    assert (out / "loss.csv").read_bytes() == (pretrained / "loss.csv").read_bytes()
    assert (out / "final.npz").read_bytes() == (pretrained / "final.npz").read_bytes()


def test_eval_missing_checkpoint_named(tmp_path, archive_dir, capsys):
    ck = tmp_path / "nope.npz"
    code = main(["eval", "--kind", "probe", "--archive", str(archive_dir), "--checkpoint", str(ck),
                 "--out", str(tmp_path / "e")])
    assert code == EXIT_MISSING and str(ck) in capsys.readouterr().err


@pytest.mark.parametrize("kind,table,n", [("probe", "probe.csv", 3), ("translate", "translation.csv", 22)])
def test_eval_tables_and_manifest_chain(tmp_path, archive_dir, pretrained, kind, table, n):
    out = tmp_path / kind
    args = ["eval", "--kind", kind, "--archive", str(archive_dir), "--checkpoint", str(pretrained / "final.npz"),
            "--out", str(out), "--frozen", *TINY]
    assert main(args) == EXIT_OK
    assert len(rows(out / table)) == n
    meta = read_manifest(out / "manifest.txt")
    assert meta["checkpoint_manifest_sha256"] == file_sha256(pretrained / "manifest.txt")
    again = tmp_path / f"{kind}2"
    assert main(args[:-len(TINY) - 3] + ["--out", str(again), "--frozen", *TINY]) == EXIT_OK
    assert (again / table).read_bytes() == (out / table).read_bytes()


def test_eval_fewshot_rows(tmp_path, archive_dir, pretrained):
    out = tmp_path / "fs"
    args = ["eval", "--kind", "fewshot", "--archive", str(archive_dir), "--checkpoint",
            str(pretrained / "final.npz"), "--out", str(out), "--frozen", "--set", "fewshot_seeds=1", *TINY]
    assert main(args) == EXIT_OK
    got = rows(out / "fewshot.csv")
    assert {r["arm"] for r in got} == {"pretrained", "scratch"}
    assert len(got) % 2 == 0
