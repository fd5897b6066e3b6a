# tests/test_config_cli.py
import asyncio
from pathlib import Path

import pytest

from mrkd import __version__
from mrkd.config import RunConfig, get_settings
from mrkd.errors import ConfigError
from mrkd.main import build_dispatcher, main

REPO = Path(__file__).resolve().parent.parent
DESK_SCALE_TOML = REPO / "configs" / "desk_scale.toml"


def _toml(tmp_path, text, name="run.toml"):
    path = tmp_path / name
    path.write_text(text, encoding="utf-8")
    return path


def run_cli(*argv):
    return asyncio.run(main(list(argv)))


def _tree(root: Path):
    return sorted(str(p.relative_to(root)) for p in root.rglob("*"))


# ---------- конфигурация ----------


def test_defaults():
    cfg = get_settings()
    assert cfg.distillation.cycles == 75
    assert cfg.training.total_epochs == 150
    assert cfg.schedule().total_epochs == 150
    assert [b.branch_id for b in cfg.branches] == ["logmel64", "mfcc"]
    assert cfg.work_dir == Path("work")
    assert cfg.n_frames == 143
    assert cfg.violations() == []


def test_environment_variables(monkeypatch, tmp_path):
    monkeypatch.setenv("MRKD_WORK_DIR", str(tmp_path / "env"))
    monkeypatch.setenv("MRKD_WORKERS", "3")
    monkeypatch.setenv("MRKD_LOG_LEVEL", "debug")
    cfg = get_settings()
    assert cfg.work_dir == tmp_path / "env"
    assert cfg.output.workers == 3
    assert cfg.output.log_level == "DEBUG"


def test_bad_worker_count_in_environment(monkeypatch):
    monkeypatch.setenv("MRKD_WORKERS", "many")
    with pytest.raises(ConfigError) as info:
        get_settings()
    assert "MRKD_WORKERS" in str(info.value)


def test_precedence_flags_over_desk_scale_over_file_over_env(monkeypatch, tmp_path):
    monkeypatch.setenv("MRKD_WORK_DIR", "from-env")
    monkeypatch.setenv("MRKD_WORKERS", "2")
    path = _toml(
        tmp_path,
        '[output]\nwork_dir = "from-file"\nworkers = 4\n'
        "[training]\ntotal_epochs = 10\n[distillation]\ncycles = 5\n",
    )
    cfg = get_settings(path)
    assert cfg.output.work_dir == "from-file"
    assert cfg.output.workers == 4
    assert cfg.distillation.cycles == 5

    cfg = get_settings(path, desk_scale=True)
    assert cfg.distillation.cycles == 20
    assert cfg.training.total_epochs == 40

    cfg = get_settings(path, overrides={"output": {"workers": 8}}, desk_scale=True)
    assert cfg.output.workers == 8
    assert cfg.output.work_dir == "from-file"


def test_desk_scale_config_file():
    cfg = get_settings(DESK_SCALE_TOML)
    assert cfg.violations() == []
    assert [b.representation for b in cfg.branches] == ["logmel64", "mfcc", "cqt"]
    assert cfg.schedule().total_epochs == 40
    assert cfg.dataset.seed == 7
    assert cfg.branch_seed(cfg.branches[0]) == 7001
    assert cfg.model_config(cfg.branches[2], n_classes=10).input_channels == 1


def test_type_errors_and_unknown_keys_are_listed_together(tmp_path):
    path = _toml(
        tmp_path,
        '[distillation]\ncycles = "many"\ntemperture = 2.0\n[training]\nbatch_size = 1.5\n[extra]\nx = 1\n',
    )
    with pytest.raises(ConfigError) as info:
        get_settings(path)
    assert len(info.value.violations) == 4
    text = str(info.value)
    assert "distillation.cycles" in text
    assert "unknown key distillation.temperture" in text
    assert "training.batch_size" in text
    assert "unknown section [extra]" in text
    assert info.value.exit_code == 2


def test_semantic_violations_are_listed_together(tmp_path):
    path = _toml(
        tmp_path,
        "[distillation]\ncycles = 0\ntemperature = -1.0\n[training]\nbatch_size = 0\n"
        '[[branches]]\nbranch_id = "a"\nrepresentation = "spectrogram"\n'
        '[[branches]]\nbranch_id = "a"\nrepresentation = "mfcc"\n',
    )
    problems = get_settings(path).violations()
    joined = "\n".join(problems)
    assert "cycles Q must be >= 1" in joined
    assert "temperature T must be > 0" in joined
    assert "batch_size must be >= 1" in joined
    assert "'spectrogram'" in joined
    assert "duplicated" in joined
    assert len(problems) >= 5


def test_epoch_budget_violation():
    cfg = RunConfig()
    cfg.distillation.cycles = 80
    assert any("exceeds the epoch budget" in p for p in cfg.violations())


def test_invalid_toml(tmp_path):
    with pytest.raises(ConfigError):
        get_settings(_toml(tmp_path, "[dataset\nseed = 1\n"))
    with pytest.raises(ConfigError):
        get_settings(tmp_path / "missing.toml")


def test_manifest_path_is_relative_to_config(tmp_path):
    path = _toml(tmp_path, '[dataset]\nmanifest = "data/manifest.csv"\n')
    assert get_settings(path).manifest_path == tmp_path.resolve() / "data" / "manifest.csv"
    assert RunConfig().manifest_path == Path("work") / "synthetic" / "manifest.csv"


def test_feature_sets_are_unique_per_cache_tag(tmp_path):
    path = _toml(
        tmp_path,
        '[[branches]]\nbranch_id = "a"\nrepresentation = "logmel64"\n'
        '[[branches]]\nbranch_id = "b"\nrepresentation = "logmel64"\nfamily = "vgg_small"\n'
        '[[branches]]\nbranch_id = "c"\nrepresentation = "logmel64"\nchannels = 1\n'
        '[[branches]]\nbranch_id = "d"\nrepresentation = "cqt"\n',
    )
    cfg = get_settings(path)
    assert [f.cache_tag for f in cfg.feature_sets()] == ["logmel64", "logmel64_1ch", "cqt"]
    assert [cfg.feature_tag(b) for b in cfg.branches] == ["logmel64", "logmel64", "logmel64_1ch", "cqt"]


def test_resolved_config_payload(tmp_path):
    cfg = get_settings(DESK_SCALE_TOML, overrides={"output": {"work_dir": str(tmp_path)}})
    payload = cfg.to_dict()
    assert payload["resolved"]["n_frames"] == 143
    assert payload["resolved"]["total_epochs_per_branch"] == 40
    assert payload["resolved"]["branch_seeds"] == {"logmel64": 7001, "mfcc": 7002, "cqt": 7003}


# ---------- CLI ----------


def test_all_commands_are_registered():
    assert set(build_dispatcher().commands) == {
        "version",
        "gen-synthetic",
        "extract",
        "train",
        "distill",
        "evaluate",
        "ensemble-eval",
        "export-logits",
        "compare",
    }


def test_version(capsys):
    assert run_cli("version") == 0
    assert f"mrkd {__version__}" in capsys.readouterr().out


def test_argument_errors_exit_with_two():
    with pytest.raises(SystemExit) as info:
        run_cli("export-logits")
    assert info.value.code == 2
    with pytest.raises(SystemExit):
        run_cli("no-such-command")


def test_config_error_exit_code(tmp_path, capsys):
    path = _toml(tmp_path, "[training]\nbatch_size = 0\n")
    assert run_cli("extract", "--config", str(path), "--work-dir", str(tmp_path / "w")) == 2
    assert "batch_size" in capsys.readouterr().err
    assert run_cli("version", "--workers", "0") == 2


def test_missing_manifest_names_generator(tmp_path, capsys):
    assert run_cli("extract", "--work-dir", str(tmp_path / "w")) == 3
    assert "mrkd gen-synthetic" in capsys.readouterr().err


def test_explicit_missing_manifest_is_config_error(tmp_path):
    path = _toml(tmp_path, '[dataset]\nmanifest = "nowhere.csv"\n')
    assert run_cli("extract", "--config", str(path), "--work-dir", str(tmp_path / "w")) == 2


def test_dry_run_writes_nothing(tmp_path, capsys):
    work = tmp_path / "w"
    assert run_cli("gen-synthetic", "--classes", "2", "--clips-per-class", "1", "--work-dir", str(work), "--dry-run") == 0
    assert not work.exists()
    assert "--dry-run" in capsys.readouterr().out


def test_gen_synthetic_rejects_bad_flags(tmp_path):
    assert run_cli("gen-synthetic", "--classes", "1", "--work-dir", str(tmp_path / "w")) == 2


def test_prerequisites_name_the_missing_step(tmp_path, capsys):
    work = tmp_path / "w"
    assert run_cli("gen-synthetic", "--classes", "2", "--clips-per-class", "2", "--work-dir", str(work)) == 0
    assert (work / "synthetic" / "manifest.csv").is_file()
    assert (work / "resolved_config.json").is_file()
    capsys.readouterr()

    before = _tree(work)
    assert run_cli("extract", "--work-dir", str(work), "--dry-run") == 0
    assert _tree(work) == before

    assert run_cli("train", "--work-dir", str(work)) == 3
    assert "mrkd extract" in capsys.readouterr().err
    assert run_cli("compare", "--work-dir", str(work)) == 3
    assert "evaluate --stage train" in capsys.readouterr().err
    assert run_cli("evaluate", "--work-dir", str(work), "--split", "train", "--branch", "nope") == 2
