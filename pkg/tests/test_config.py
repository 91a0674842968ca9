import json

import pytest

from difl import config
from difl.data import SynthConfig
from difl.errors import ConfigError
from difl.models import default_model_spec
from difl.training import TrainingConfig


def test_defaults_load_without_a_file():
    cfg = config.load_config(None)
    assert cfg["trials"] == 10
    assert cfg["extent"] == 64
    assert cfg["threshold"] == 0.5
    assert cfg["training"]["difl"]["alpha_c"] == TrainingConfig().alpha_c
    assert "seed" not in cfg["training"]["difl"]


def test_partial_override_keeps_other_defaults():
    cfg = config.merge_config({"trials": 3,
                               "training": {"difl": {"epochs": 7}}})
    assert cfg["trials"] == 3
    assert cfg["training"]["difl"]["epochs"] == 7
    # the difl block's own defaults differ from the dataclass where the
    # adversarial run was tuned separately
    assert cfg["training"]["difl"]["batch_size"] == 64
    assert cfg["training"]["difl"]["disc_steps"] == 4
    assert cfg["training"]["difl"]["alpha_d"] == 0.08
    assert cfg["training"]["lower"]["epochs"] == TrainingConfig().epochs
    assert cfg["training"]["lower"]["disc_steps"] == 1
    assert cfg["training"]["lower"]["alpha_d"] is None


def test_unknown_top_level_key_is_rejected_with_its_path():
    with pytest.raises(ConfigError, match="unknown config key: frobnicate"):
        config.merge_config({"frobnicate": 1})


def test_unknown_nested_key_reports_dotted_path():
    with pytest.raises(ConfigError, match=r"training\.difl\.alpha_q"):
        config.merge_config({"training": {"difl": {"alpha_q": 0.1}}})


def test_wrong_scalar_type_is_rejected():
    with pytest.raises(ConfigError, match="trials must be a number"):
        config.merge_config({"trials": "ten"})
    with pytest.raises(ConfigError, match="must be a number"):
        config.merge_config({"threshold": True})


def test_layer_lists_must_be_lists_of_tokens():
    with pytest.raises(ConfigError, match="list of layer tokens"):
        config.merge_config({"model": {"generator": "conv:8x3s1"}})
    with pytest.raises(ConfigError, match="list of layer tokens"):
        config.merge_config({"model": {"classifier": [1, 2]}})


def test_datasets_must_map_names_to_paths():
    with pytest.raises(ConfigError, match="map names to paths"):
        config.merge_config({"datasets": {"a": 3}})


def test_yaml_file_round_trip(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("trials: 4\nsynth:\n  neg_count: 9\n")
    cfg = config.load_config(p)
    assert cfg["trials"] == 4
    assert cfg["synth"]["neg_count"] == 9


def test_json_config_keeps_scientific_floats(tmp_path):
    # json.dump writes 1e-07 without a decimal point; PyYAML would read
    # that back as a string, so JSON configs must go through a JSON parser
    p = tmp_path / "c.json"
    p.write_text(json.dumps({"training": {"difl": {"clamp_eps": 1e-7}}}))
    cfg = config.load_config(p)
    assert cfg["training"]["difl"]["clamp_eps"] == pytest.approx(1e-7)
    assert isinstance(cfg["training"]["difl"]["clamp_eps"], float)


def test_run_manifest_unwraps_to_embedded_config(tmp_path):
    p = tmp_path / "run_manifest.json"
    p.write_text(json.dumps({
        "format_version": 1,
        "kernel_backend": "numpy",
        "config": {"trials": 6},
    }))
    assert config.load_config(p)["trials"] == 6


def test_config_root_must_be_a_mapping(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("- just\n- a\n- list\n")
    with pytest.raises(ConfigError, match="mapping"):
        config.load_config(p)


def test_default_model_spec_matches_builder():
    cfg = config.load_config(None)
    assert config.model_spec_of(cfg) == default_model_spec(64, 64)


def test_feature_width_mismatch_is_caught():
    cfg = config.merge_config({"model": {"feature_width": 32}})
    with pytest.raises(ConfigError, match="feature_width"):
        config.model_spec_of(cfg)


def test_training_config_of_applies_overrides():
    cfg = config.merge_config({"training": {"upper": {"alpha_c": 0.5}}})
    t = config.training_config_of(cfg, "upper")
    assert isinstance(t, TrainingConfig)
    assert t.alpha_c == 0.5
    assert t.batch_size == TrainingConfig().batch_size
    with pytest.raises(ConfigError, match="no training block"):
        config.training_config_of(cfg, "middle")


def test_synth_config_of_builds_dataclass():
    cfg = config.merge_config({"synth": {"invert": False, "jitter_px": 0}})
    s = config.synth_config_of(cfg)
    assert s == SynthConfig(invert=False, jitter_px=0)


def _cfg_with_datasets(tmp_path):
    for name in ("alpha", "beta"):
        (tmp_path / f"{name}.csv").write_text("img.png,0\n")
    return config.merge_config({
        "datasets": {"alpha": "alpha.csv", "beta": "beta.csv"},
        "source": "alpha",
        "target": "beta",
    })


def test_experiment_config_resolves_paths_against_base_dir(tmp_path):
    cfg = _cfg_with_datasets(tmp_path)
    e = config.experiment_config_of(cfg, base_dir=str(tmp_path))
    assert e.source_path == str(tmp_path / "alpha.csv")
    assert e.target_path == str(tmp_path / "beta.csv")
    # snapshot paths are pinned absolute so a run manifest replays anywhere
    assert all(p.startswith("/") for p in e.snapshot["datasets"].values())


def test_unknown_dataset_name_lists_known_ones(tmp_path):
    cfg = _cfg_with_datasets(tmp_path)
    with pytest.raises(ConfigError, match=r"gamma.*alpha, beta"):
        config.experiment_config_of(cfg, source="gamma", base_dir=str(tmp_path))


def test_source_and_target_required():
    cfg = config.merge_config({"datasets": {"a": "a.csv", "b": "b.csv"}})
    with pytest.raises(ConfigError, match="required"):
        config.experiment_config_of(cfg)


def test_matrix_configs_cover_ordered_pairs(tmp_path):
    for name in ("a", "b", "c"):
        (tmp_path / f"{name}.csv").write_text("img.png,0\n")
    cfg = config.merge_config(
        {"datasets": {n: f"{n}.csv" for n in ("a", "b", "c")}})
    pairs = [(e.source, e.target)
             for e in config.matrix_configs_of(cfg, base_dir=str(tmp_path))]
    assert pairs == [("a", "b"), ("a", "c"), ("b", "a"),
                     ("b", "c"), ("c", "a"), ("c", "b")]


def test_matrix_needs_two_datasets():
    with pytest.raises(ConfigError, match="at least two"):
        config.matrix_configs_of(config.merge_config({"datasets": {"a": "x"}}))
