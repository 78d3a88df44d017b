"""Experiment config parsing, default tables, and validation errors."""

import json

import pytest

from entflow import config


def minimal(**extra):
    blob = {"target": "8gaussians", "sampler": "regs", "seed": 1}
    blob.update(extra)
    return json.dumps(blob)


class TestParsing:
    def test_minimal_config_fills_benchmark_step(self):
        cfg = config.parse_config(minimal())
        assert cfg.samplers[0].kind == "regs"
        assert cfg.samplers[0].step_size == 5e-4
        assert cfg.particles == 2000
        assert cfg.samplers[0].net_depth == 4

    def test_blr_step_default(self):
        cfg = config.parse_config(json.dumps({"target": "blr_synthetic", "sampler": "regs", "seed": 2}))
        assert cfg.samplers[0].step_size == 2e-3

    def test_chain_suffix_parsing(self):
        cfg = config.parse_config(minimal(sampler=["ula_50", "mala_1", "svgd"]))
        kinds = {s.name: (s.kind, s.chains) for s in cfg.samplers}
        assert kinds == {"ula_50": ("ula", 50), "mala_1": ("mala", 1), "svgd": ("svgd", 1)}
        assert kinds  # ula step default for the 8gaussians class
        assert cfg.samplers[0].step_size == 5e-2

    def test_depth_defaults_follow_target_family(self):
        deep = config.parse_config(json.dumps({"target": "25gaussians", "sampler": "regs", "seed": 1}))
        shallow = config.parse_config(json.dumps({"target": "2gaussians", "sampler": "regs", "seed": 1}))
        assert deep.samplers[0].net_depth == 6
        assert shallow.samplers[0].net_depth == 3

    def test_mala_covertype_warns(self):
        blob = {
            "target": {"name": "blr", "params": {"path": "x.txt", "covertype": True}},
            "sampler": "mala_50",
            "seed": 3,
        }
        cfg = config.parse_config(json.dumps(blob))
        assert cfg.samplers[0].step_size is None
        assert any("non-convergence" in w for w in cfg.warnings)

    def test_explicit_step_respected(self):
        cfg = config.parse_config(minimal(sampler=[{"name": "regs", "step_size": 1e-3}]))
        assert cfg.samplers[0].step_size == 1e-3


class TestValidationErrors:
    def test_duplicate_sampler_names(self):
        with pytest.raises(config.ConfigError, match="duplicate"):
            config.parse_config(minimal(sampler=["regs", "regs"]))

    def test_unknown_top_level_key(self):
        with pytest.raises(config.ConfigError, match=r"\$: unknown keys.*bogus"):
            config.parse_config(minimal(bogus=1))

    def test_unknown_sampler_name(self):
        with pytest.raises(config.ConfigError, match="unknown sampler"):
            config.parse_config(minimal(sampler="nuts"))

    def test_unknown_target(self):
        with pytest.raises(config.ConfigError, match="unknown target"):
            config.parse_config(json.dumps({"target": "camel", "sampler": "regs", "seed": 1}))

    def test_missing_seed(self):
        with pytest.raises(config.ConfigError, match=r"\$\.seed"):
            config.parse_config(json.dumps({"target": "8gaussians", "sampler": "regs"}))

    def test_bad_json(self):
        with pytest.raises(config.ConfigError, match="not valid JSON"):
            config.parse_config("{nope")

    def test_path_qualified_sampler_error(self):
        with pytest.raises(config.ConfigError, match=r"\$\.samplers\[0\]"):
            config.parse_config(minimal(sampler=[{"name": "regs", "nonsense": 2}]))

    def test_bad_target_params(self):
        blob = {"target": {"name": "8gaussians", "params": {"zzz": 1}}, "sampler": "regs", "seed": 1}
        with pytest.raises(config.ConfigError, match=r"\$\.target\.params"):
            config.parse_config(json.dumps(blob))

    def test_accuracy_metric_needs_blr(self):
        with pytest.raises(config.ConfigError, match="accuracy"):
            config.parse_config(minimal(metrics=["accuracy"]))

    def test_both_sampler_keys_rejected(self):
        with pytest.raises(config.ConfigError, match="not both"):
            config.parse_config(minimal(samplers=["svgd"]))


class TestIdempotence:
    @pytest.mark.parametrize(
        "text",
        [
            minimal(),
            minimal(sampler=["ula_50", {"name": "regs", "iterations": 5000}]),
            json.dumps({"target": {"name": "ar_gaussian", "params": {"d": 10}},
                        "sampler": ["svgd"], "seed": 5, "particles": 100}),
        ],
    )
    def test_parse_serialize_parse_fixed_point(self, text):
        once = config.parse_config(text)
        twice = config.parse_config(config.serialize_config(once))
        assert once.to_dict() == twice.to_dict()

    def test_registry_covers_all_scenarios(self):
        from entflow.targets import scenario_names

        named = set(scenario_names().values())
        registered = set(config.TARGET_REGISTRY)
        assert named <= registered


class TestBuildTarget:
    def test_builds_density_targets(self):
        t = config.build_target("8gaussians", {"r": 4.0, "sigma2": 0.03})
        assert t.dimension == 2

    def test_unequal_preset_weights(self):
        t = config.build_target("8gaussians_unequal", {})
        import numpy as np

        np.testing.assert_allclose(
            sorted(t.mixture_spec.weights), sorted([1 / 16] * 4 + [3 / 16] * 4)
        )

    def test_blr_targets_are_harness_built(self):
        with pytest.raises(config.ConfigError):
            config.build_target("blr_synthetic", {})
