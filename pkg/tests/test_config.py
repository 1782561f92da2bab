import pytest

from invi.config import (
    ENV_PREFIX,
    build_edit_config,
    env_overrides,
    load_config,
    parse_config_file,
)


class TestParse:
    def test_parse_key_values(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("""
# toy run
steps_infer = 5
prompt = a red cone   # inline comment
guidance_scale = 7.5
latent_blend = true
""")
        parsed = parse_config_file(path)
        assert parsed == {"steps_infer": "5", "prompt": "a red cone",
                          "guidance_scale": "7.5", "latent_blend": "true"}

    def test_malformed_line_rejected(self, tmp_path):
        path = tmp_path / "run.cfg"
        path.write_text("steps_infer 5\n")
        with pytest.raises(ValueError, match="key = value"):
            parse_config_file(path)


class TestBuild:
    def test_defaults_then_overrides(self):
        cfg = build_edit_config({"steps_infer": "5"}, {"steps_infer": "3",
                                                       "seed": "42"})
        assert cfg.steps_infer == 3
        assert cfg.seed == 42
        assert cfg.mode == "invi"

    def test_bool_coercion(self):
        for truthy in ("1", "true", "Yes", "ON"):
            assert build_edit_config({"postprocess": truthy}).postprocess
        for falsy in ("0", "false", "No", "off"):
            assert not build_edit_config({"postprocess": falsy}).postprocess
        with pytest.raises(ValueError, match="bool"):
            build_edit_config({"postprocess": "maybe"})

    def test_unknown_key_rejected(self):
        with pytest.raises(ValueError, match="unknown config key"):
            build_edit_config({"steps_inferr": "5"})

    def test_bad_number_rejected(self):
        with pytest.raises(ValueError, match="cannot parse"):
            build_edit_config({"steps_infer": "five"})

    def test_validation_applies(self):
        with pytest.raises(ValueError, match="steps_infer"):
            build_edit_config({"steps_infer": "0"})
        with pytest.raises(ValueError, match="mode"):
            build_edit_config({"mode": "magic"})


class TestEnvOverrides:
    def test_prefixed_known_keys_only(self):
        environ = {f"{ENV_PREFIX}STEPS_INFER": "7",
                   f"{ENV_PREFIX}NOT_A_KEY": "x",
                   "PATH": "/usr/bin"}
        assert env_overrides(environ) == {"steps_infer": "7"}

    def test_layering_file_env_explicit(self, tmp_path, monkeypatch):
        path = tmp_path / "run.cfg"
        path.write_text("steps_infer = 5\nseed = 1\n")
        monkeypatch.setenv(f"{ENV_PREFIX}SEED", "2")
        cfg = load_config(path, overrides={"prompt": "a dog"})
        assert cfg.steps_infer == 5
        assert cfg.seed == 2
        assert cfg.prompt == "a dog"
        cfg2 = load_config(path, overrides={"seed": "3"})
        assert cfg2.seed == 3  # explicit beats env
