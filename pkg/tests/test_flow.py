"""Flow loop mechanics: initialization, references, stepping, records."""

import numpy as np
import pytest

from entflow import flow, nn, targets
from entflow.ratio import TrainerConfig

LOG_2PI = np.log(2.0 * np.pi)


def zero_net(d, width=4, depth=3):
    base = nn.network_init(d, depth, width, seed=0)
    return nn.RatioNetwork(
        tuple(np.zeros_like(w) for w in base.layer_weights),
        tuple(np.zeros_like(b) for b in base.layer_biases),
        base.activation_slope,
    )


def linear_net(coeffs):
    """Depth-2 passthrough network with constant gradient ``coeffs``."""
    d = len(coeffs)
    w1 = np.eye(d)
    b1 = np.full(d, 50.0)  # keeps hidden pre-activations positive near the origin
    w2 = np.asarray(coeffs, dtype=float)[None, :]
    b2 = np.zeros(1)
    return nn.RatioNetwork((w1, w2), (b1, b2), 0.2)


def small_cfg(**overrides):
    defaults = dict(
        step_size=0.05,
        max_iterations=3,
        particle_count=16,
        dimension=1,
        trainer=TrainerConfig(inner_steps_first=5, inner_steps_warm=2, normalize_log_weights=True),
        net_depth=2,
        net_width=8,
        snapshot_every=2,
        seed=123,
    )
    defaults.update(overrides)
    return flow.FlowConfig(**defaults)


class TestInitParticles:
    def test_zero_scale_collapses_to_mean(self):
        cfg = small_cfg(init_mean=(2.0, -1.0), init_cov_scale=0.0, dimension=None)
        cloud = flow.init_particles(cfg)
        np.testing.assert_array_equal(cloud.positions, np.tile([2.0, -1.0], (16, 1)))
        assert cloud.iteration == 0

    def test_mean_within_clt_bound(self):
        cfg = small_cfg(particle_count=10000, dimension=2)
        cloud = flow.init_particles(cfg)
        assert np.all(np.abs(cloud.positions.mean(axis=0)) < 3.0 / np.sqrt(10000) * np.sqrt(2))

    def test_same_seed_bit_identical(self):
        cfg = small_cfg()
        a = flow.init_particles(cfg)
        b = flow.init_particles(cfg)
        assert np.array_equal(a.positions, b.positions)

    def test_dimension_required(self):
        cfg = small_cfg(dimension=None)
        with pytest.raises(ValueError):
            flow.init_particles(cfg)


class TestFitReference:
    def test_identical_points_floor(self):
        cloud = flow.ParticleCloud(np.tile([1.0, 2.0], (5, 1)))
        ref = flow.fit_reference(cloud, inflation=2.0)
        np.testing.assert_allclose(ref.mean, [1.0, 2.0])
        np.testing.assert_allclose(ref.covariance, 2e-6 * np.eye(2), atol=1e-18)

    def test_unit_cloud_inflates(self, rng):
        pts = rng.standard_normal((20000, 2))
        ref = flow.fit_reference(flow.ParticleCloud(pts), inflation=2.0)
        np.testing.assert_allclose(ref.covariance, 2.0 * np.eye(2), atol=0.1)

    def test_log_density_at_mean_closed_form(self, rng):
        pts = rng.standard_normal((50, 3))
        ref = flow.fit_reference(flow.ParticleCloud(pts), inflation=1.5)
        expected = -1.5 * LOG_2PI - 0.5 * np.linalg.slogdet(ref.covariance)[1]
        assert ref.log_density(ref.mean) == pytest.approx(expected, rel=1e-12)

    def test_rejects_single_particle(self):
        with pytest.raises(ValueError):
            flow.fit_reference(flow.ParticleCloud(np.zeros((1, 2))), 2.0)

    def test_sampling_consistent_with_density(self, rng):
        # MC average of exp(log_density) over its own samples ~ E[w(X)] in 1D
        pts = rng.standard_normal((400, 1))
        ref = flow.fit_reference(flow.ParticleCloud(pts), inflation=1.0)
        draws = ref.sample(200000, rng)
        var = ref.covariance[0, 0]
        mc = np.exp(ref.log_density(draws)).mean()
        exact = 1.0 / (2.0 * np.sqrt(np.pi * var))  # integral of w^2
        assert mc == pytest.approx(exact, rel=0.02)


class TestEulerStep:
    def test_zero_velocity(self):
        cloud = flow.ParticleCloud(np.ones((4, 2)), iteration=3)
        out = flow.euler_step(cloud, np.zeros((4, 2)), 0.1)
        np.testing.assert_array_equal(out.positions, cloud.positions)
        assert out.iteration == 4

    def test_zero_step_size(self, rng):
        cloud = flow.ParticleCloud(rng.standard_normal((4, 2)))
        out = flow.euler_step(cloud, rng.standard_normal((4, 2)), 0.0)
        np.testing.assert_array_equal(out.positions, cloud.positions)

    def test_arithmetic(self):
        cloud = flow.ParticleCloud(np.array([[1.0, 1.0]]))
        out = flow.euler_step(cloud, np.array([[-1.0, 2.0]]), 0.5)
        np.testing.assert_array_equal(out.positions, [[0.5, 2.0]])

    def test_nonfinite_velocity_names_particle(self):
        cloud = flow.ParticleCloud(np.zeros((3, 2)))
        v = np.zeros((3, 2))
        v[2, 0] = np.nan
        with pytest.raises(ValueError, match="particle 2"):
            flow.euler_step(cloud, v, 0.1)


class TestRunFlow:
    def test_zero_network_zero_velocity_run(self):
        target = targets.make_scenario(1)
        cfg = small_cfg(
            max_iterations=1,
            trainer=TrainerConfig(inner_steps_first=0, inner_steps_warm=0),
        )
        record = flow.run_flow(target, cfg, net=zero_net(1, width=8, depth=2))
        start = flow.init_particles(cfg, dimension=1)
        np.testing.assert_array_equal(record.final_positions, start.positions)
        assert record.mean_sq_velocity[0] == 0.0

    def test_constant_velocity_diagnostics(self):
        # a passthrough net with gradient (3, 4) gives mean squared speed 25
        target = targets.make_scenario(5)
        cfg = small_cfg(
            dimension=2,
            particle_count=1,
            max_iterations=1,
            step_size=0.5,
            reference_mode="fixed_gaussian",
            trainer=TrainerConfig(inner_steps_first=0, inner_steps_warm=0),
        )
        record = flow.run_flow(target, cfg, net=linear_net([3.0, 4.0]))
        assert record.mean_sq_velocity[0] == pytest.approx(25.0, rel=1e-12)
        start = flow.init_particles(cfg, dimension=2)
        np.testing.assert_allclose(
            record.final_positions, start.positions + 0.5 * np.array([3.0, 4.0]), rtol=1e-12
        )

    def test_determinism_bit_identical(self):
        target = targets.make_scenario(1)
        cfg = small_cfg(max_iterations=4)
        a = flow.run_flow(target, cfg)
        b = flow.run_flow(target, cfg)
        assert np.array_equal(a.final_positions, b.final_positions)
        assert np.array_equal(a.losses, b.losses)
        assert np.array_equal(a.mean_sq_velocity, b.mean_sq_velocity)

    def test_particle_count_conserved_across_snapshots(self):
        target = targets.make_scenario(1)
        cfg = small_cfg(max_iterations=5, snapshot_every=2)
        record = flow.run_flow(target, cfg)
        for _, snap in record.snapshots:
            assert snap.shape == (cfg.particle_count, 1)
        iterations = [it for it, _ in record.snapshots]
        assert iterations == [0, 2, 4, 5]

    def test_weight_scale_invariance_weak_form(self):
        # u -> 10u shifts every raw log weight by exactly log 10 and moves the
        # loss by a particle-independent amount at any fixed network
        target = targets.make_scenario(1)
        scaled = targets.scale_target(target, np.log(10.0))
        cfg = small_cfg()
        cloud = flow.init_particles(cfg, dimension=1)
        ref = flow.fit_reference(cloud, 2.0)
        rng_a = np.random.default_rng(7)
        rng_b = np.random.default_rng(7)
        batch_a = flow.reference_batch(target, cloud, ref, 16, rng_a)
        batch_b = flow.reference_batch(scaled, cloud, ref, 16, rng_b)
        np.testing.assert_allclose(
            batch_b.importance_log_weights - batch_a.importance_log_weights,
            np.log(10.0),
            rtol=1e-12,
        )
        from entflow.ratio import bregman_loss_log

        net = nn.network_init(1, 2, 8, seed=3)
        d_ref = nn.forward(net, batch_a.reference_points)
        weights = np.exp(batch_a.importance_log_weights)
        expected_shift = -(10.0 - 1.0) * np.mean(weights * d_ref)
        actual_shift = bregman_loss_log(net, batch_b) - bregman_loss_log(net, batch_a)
        assert actual_shift == pytest.approx(expected_shift, rel=1e-9)

    def test_fixed_reference_mode(self):
        target = targets.make_scenario(1)
        cfg = small_cfg(reference_mode="fixed_gaussian", reference_inflation=4.0)
        record = flow.run_flow(target, cfg)
        assert record.iterations_run == cfg.max_iterations

    def test_no_redraw_reuses_reference_pool(self):
        target = targets.make_scenario(1)
        cfg = small_cfg(redraw_reference=False, reference_mode="fixed_gaussian")
        record = flow.run_flow(target, cfg)
        assert record.iterations_run == cfg.max_iterations

    def test_abort_on_nonfinite_velocity_keeps_record(self, monkeypatch):
        # training keeps its own guards, so poison the velocity evaluation
        # directly to exercise the abort-with-partial-record branch
        target = targets.make_scenario(1)
        cfg = small_cfg(
            max_iterations=10,
            trainer=TrainerConfig(inner_steps_first=0, inner_steps_warm=0),
        )
        monkeypatch.setattr(
            flow, "velocity_field", lambda net, pts: np.full_like(pts, np.nan)
        )
        with pytest.raises(flow.FlowDivergedError) as excinfo:
            flow.run_flow(target, cfg)
        record = excinfo.value.record
        assert record.aborted_at == 0
        assert len(record.snapshots) == 1  # the initial cloud survived
        assert record.snapshots[0][0] == 0

    @pytest.mark.filterwarnings("ignore::RuntimeWarning")
    def test_overflowing_loss_surfaces_as_error(self):
        # an infinite weight overflows the linear reference term of the loss
        target = targets.make_scenario(1)
        cfg = small_cfg(
            max_iterations=10,
            trainer=TrainerConfig(inner_steps_first=0, inner_steps_warm=0),
        )
        with pytest.raises(FloatingPointError):
            flow.run_flow(target, cfg, net=linear_net([np.inf]))

    def test_dimension_mismatch_rejected(self):
        target = targets.make_scenario(5)  # 2D
        cfg = small_cfg()  # dimension=1
        with pytest.raises(ValueError):
            flow.run_flow(target, cfg)


class TestRunRecordSerialization:
    def test_round_trip(self, tmp_path):
        target = targets.make_scenario(1)
        cfg = small_cfg(max_iterations=4, snapshot_every=2)
        record = flow.run_flow(target, cfg)
        out = tmp_path / "run"
        flow.save_run_record(record, out)
        loaded = flow.load_run_record(out)
        assert loaded.target_name == record.target_name
        assert loaded.config == record.config
        np.testing.assert_array_equal(loaded.final_positions, record.final_positions)
        np.testing.assert_array_equal(loaded.losses, record.losses)
        assert [it for it, _ in loaded.snapshots] == [it for it, _ in record.snapshots]
        for (_, a), (_, b) in zip(loaded.snapshots, record.snapshots):
            np.testing.assert_array_equal(a, b)

    def test_rerun_writes_identical_bytes(self, tmp_path):
        target = targets.make_scenario(1)
        cfg = small_cfg(max_iterations=3)
        for name in ("a", "b"):
            flow.save_run_record(flow.run_flow(target, cfg), tmp_path / name)
        for rel in ("config.json", "diagnostics.csv", "samples.csv"):
            assert (tmp_path / "a" / rel).read_bytes() == (tmp_path / "b" / rel).read_bytes()
