import json

import pytest

from goalsagail.config import TrainConfig, from_dict, load_config, preset, set_path
from goalsagail.errors import ConfigError


def test_paper_preset_defaults():
    cfg = preset("paper")
    assert (cfg.cycles_per_epoch, cfg.episodes_per_cycle, cfg.policy_batches) == (50, 40, 40)
    assert cfg.policy_batch_size == 5120
    assert (cfg.disc.n_batches, cfg.disc.batch_size) == (40, 512)
    assert cfg.eval_episodes == 100
    assert cfg.gail.initial_weight == 0.5
    assert cfg.her.replay_k == 4
    assert cfg.agent.gamma == 0.98 and cfg.agent.polyak == 0.05
    assert cfg.admission.expert_capacity_factor == 20


def test_desk_preset_shrinks_budget():
    cfg = preset("desk", "planarrotate", "goal_sagail")
    assert cfg.policy_batch_size == 256 and cfg.episodes_per_cycle == 16
    assert cfg.env == "planarrotate" and cfg.algo == "goal_sagail"
    with pytest.raises(ConfigError):
        preset("huge")


def test_default_thresholds():
    assert preset("paper", "planarrotate").c_comb() == 0.25
    assert preset("paper", "bitflip8").c_comb() == 1.0
    assert preset("paper", "pointpush2d").c_comb() == pytest.approx(0.05 * 0.35)
    cfg = preset("paper", "pointpush2d")
    cfg.admission.c_comb = 0.1
    assert cfg.c_comb() == 0.1


def test_set_path_coerces_types():
    cfg = TrainConfig()
    set_path(cfg, "agent.gamma", "0.9")
    set_path(cfg, "epochs", "7")
    set_path(cfg, "agent.normalize", "false")
    set_path(cfg, "agent.hidden_sizes", "[8, 8]")
    set_path(cfg, "agent.actor_lr", "1")
    assert cfg.agent.gamma == 0.9 and cfg.epochs == 7 and cfg.agent.normalize is False
    assert cfg.agent.hidden_sizes == [8, 8]
    assert isinstance(cfg.agent.actor_lr, float)
    with pytest.raises(ConfigError):
        set_path(cfg, "agent.missing", "1")
    with pytest.raises(ConfigError):
        set_path(cfg, "agent.normalize", "maybe")


def test_validation():
    with pytest.raises(ConfigError):
        TrainConfig(algo="sac").validate()
    with pytest.raises(ConfigError):
        TrainConfig(demo_sampling="random").validate()
    with pytest.raises(ConfigError):
        TrainConfig(seeds=[]).validate()
    with pytest.raises(ConfigError):
        from_dict({"gail": {"initial_weight": 2.0}}).validate()


def test_algo_feature_flags():
    flags = {a: (TrainConfig(algo=a).uses_demos, TrainConfig(algo=a).uses_discriminator,
                 TrainConfig(algo=a).uses_admission) for a in ("her", "ddpgfd_her", "goal_gail", "goal_sagail")}
    assert flags == {
        "her": (False, False, False),
        "ddpgfd_her": (True, False, False),
        "goal_gail": (True, True, False),
        "goal_sagail": (True, True, True),
    }


def test_load_yaml_and_json(tmp_path):
    y = tmp_path / "c.yaml"
    y.write_text("preset: desk\nenv: planarrotate\nalgo: goal_gail\nepochs: 3\nagent:\n  gamma: 0.9\n")
    cfg = load_config(y)
    assert cfg.policy_batch_size == 256 and cfg.agent.gamma == 0.9 and cfg.epochs == 3
    j = tmp_path / "c.json"
    j.write_text(json.dumps({"env": "bitflip8", "disc": {"batch_size": 64}}))
    cfg = load_config(j)
    assert cfg.policy_batch_size == 5120 and cfg.disc.batch_size == 64


def test_load_errors(tmp_path):
    bad = tmp_path / "bad.yaml"
    bad.write_text("agent: [unclosed\n")
    with pytest.raises(ConfigError):
        load_config(bad)
    unknown = tmp_path / "u.yaml"
    unknown.write_text("nonsense: 1\n")
    with pytest.raises(ConfigError, match="nonsense"):
        load_config(unknown)


def test_to_dict_roundtrip():
    cfg = preset("desk", "pointpush2d", "goal_sagail")
    assert from_dict(cfg.to_dict()).to_dict() == cfg.to_dict()
