"""Trainer tests: Adam against an in-test reference, schedule staggering,
pruning, opacity reset, densify, determinism, and checkpoint round-trips."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hdrsplat.checkpoint import (
    CheckpointFormatError,
    ModelCheckpoint,
    load_checkpoint,
    save_checkpoint,
)
from hdrsplat.exposure import ExposureScaler
from hdrsplat.geometry import Camera, GaussianCloud
from hdrsplat.rasterizer import ContributionScores, render_irradiance
from hdrsplat.tone_map import GridConfig, init_grid_from_sigmoid
from hdrsplat.trainer import (
    AdamState,
    NonFiniteLossError,
    TrainConfig,
    TrainData,
    TrainSample,
    adam_step,
    densify,
    prune,
    prune_due,
    render_ldr,
    reset_due,
    reset_opacity,
    train,
)


def reference_adam(x0, grad_fn, lr, steps, beta1=0.9, beta2=0.999, eps=1e-15):
    """Independent scalar Adam written from the update equations."""
    x, m, v = x0, 0.0, 0.0
    for t in range(1, steps + 1):
        g = grad_fn(x)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        m_hat = m / (1 - beta1 ** t)
        v_hat = v / (1 - beta2 ** t)
        x = x - lr * m_hat / (math.sqrt(v_hat) + eps)
    return x


def make_cam(t=1.0, width=24, height=24):
    return Camera(fx=30.0, fy=30.0, cx=width / 2, cy=height / 2,
                  width=width, height=height, world_to_camera=np.eye(4),
                  exposure_time=t)


def small_cloud(rng, n=20, z=(2.0, 4.0)):
    return GaussianCloud(
        means=np.column_stack([rng.uniform(-1, 1, n), rng.uniform(-1, 1, n),
                               rng.uniform(*z, n)]),
        log_scales=np.full((n, 3), np.log(0.2)),
        rotations=np.tile([1.0, 0.0, 0.0, 0.0], (n, 1)),
        opacity_logits=np.full(n, 1.0),
        radiance=rng.uniform(-0.5, 0.5, (n, 3)),
    )


class TestAdam:
    def test_zero_gradient_keeps_params(self):
        params = np.array([1.0, -2.0, 3.0])
        state = AdamState.like(params)
        adam_step(params, np.zeros(3), state, lr=0.1)
        assert np.array_equal(params, [1.0, -2.0, 3.0])

    def test_constant_gradient_asymptotic_step(self):
        params = np.array([0.0])
        state = AdamState.like(params)
        prev = params.copy()
        for _ in range(300):
            prev = params.copy()
            adam_step(params, np.array([3.7]), state, lr=0.01)
        assert params[0] - prev[0] == pytest.approx(-0.01, rel=1e-6)

    def test_quadratic_trajectory_matches_reference(self):
        # minimize (x - 5)^2 / 2, gradient x - 5
        params = np.array([0.0])
        state = AdamState.like(params)
        for _ in range(200):
            adam_step(params, params - 5.0, state, lr=0.05)
        expected = reference_adam(0.0, lambda x: x - 5.0, lr=0.05, steps=200)
        assert params[0] == pytest.approx(expected, abs=1e-12)

    def test_shape_mismatch_rejected(self):
        params = np.zeros(3)
        with pytest.raises(ValueError):
            adam_step(params, np.zeros(4), AdamState.like(params), lr=0.1)


class TestSchedule:
    def test_defaults_validated(self):
        cfg = TrainConfig()
        assert cfg.coarse_iters == 6000
        assert cfg.fine_iters == 17000
        assert cfg.prune_threshold == 0.02
        assert cfg.prune_start == 500
        assert cfg.prune_interval == 200
        assert cfg.lr_grid == 0.02
        assert cfg.lr_grid_final == 5e-6

    def test_invalid_config_rejected(self):
        with pytest.raises(ValueError):
            TrainConfig(coarse_iters=0)
        with pytest.raises(ValueError):
            TrainConfig(lr_grid=-1.0)
        with pytest.raises(ValueError):
            TrainConfig(prune_interval=0)

    @given(st.integers(1, 3000), st.integers(100, 900), st.integers(50, 400),
           st.integers(300, 1200))
    @settings(max_examples=80)
    def test_prune_never_fires_on_or_right_after_reset(self, total, start,
                                                       interval, reset_interval):
        cfg = TrainConfig(prune_start=start, prune_interval=interval,
                          opacity_reset_interval=reset_interval)
        last_reset = -(10 ** 9)
        for i in range(1, total + 1):
            r = reset_due(i, cfg)
            p = prune_due(i, last_reset, cfg)
            if r:
                last_reset = i
            assert not (r and p)
            if p:
                assert i - last_reset > cfg.prune_interval or last_reset < 0

    def test_prune_deferred_after_reset(self):
        cfg = TrainConfig(prune_start=500, prune_interval=200,
                          opacity_reset_interval=3000)
        fired = [i for i in range(1, 4000)
                 if prune_due(i, 3000 if i >= 3000 else -10 ** 9, cfg)]
        assert 3100 not in fired
        assert 3300 in fired
        assert 2900 in fired


class TestPrune:
    def test_threshold_behavior(self):
        rng = np.random.default_rng(0)
        cloud = small_cloud(rng, 4)
        scores = ContributionScores(np.array([0.0, 0.5, 0.019, 0.02]))
        kept, keep = prune(cloud, scores, 0.02)
        assert list(keep) == [False, True, False, True]
        assert kept.n == 2

    def test_off_frustum_points_pruned_after_render(self):
        rng = np.random.default_rng(1)
        visible = small_cloud(rng, 10, z=(2.0, 3.0))
        behind = small_cloud(rng, 10, z=(-5.0, -2.0))
        cloud = GaussianCloud(
            means=np.concatenate([visible.means, behind.means]),
            log_scales=np.concatenate([visible.log_scales, behind.log_scales]),
            rotations=np.concatenate([visible.rotations, behind.rotations]),
            opacity_logits=np.concatenate([visible.opacity_logits,
                                           behind.opacity_logits]),
            radiance=np.concatenate([visible.radiance, behind.radiance]),
        )
        scores = ContributionScores.zeros(cloud.n)
        render_irradiance(cloud, make_cam(), scores=scores)
        kept, keep = prune(cloud, scores, 0.02)
        assert np.all(keep[:10])
        assert not np.any(keep[10:])
        assert kept.n == 10

    def test_score_size_mismatch_rejected(self):
        rng = np.random.default_rng(2)
        with pytest.raises(ValueError):
            prune(small_cloud(rng, 3), ContributionScores.zeros(4), 0.02)


class TestResetOpacity:
    def test_high_opacity_clamped(self):
        rng = np.random.default_rng(3)
        cloud = small_cloud(rng, 5)
        cloud.opacity_logits[:] = np.log(0.9 / 0.1)
        reset_opacity(cloud, 0.01)
        assert cloud.opacities == pytest.approx(0.01, rel=1e-12)

    def test_low_opacity_untouched(self):
        rng = np.random.default_rng(4)
        cloud = small_cloud(rng, 5)
        lo = np.log(0.005 / 0.995)
        cloud.opacity_logits[:] = lo
        reset_opacity(cloud, 0.01)
        assert np.all(cloud.opacity_logits == lo)


class TestDensify:
    def test_zero_gradients_no_clones(self):
        rng = np.random.default_rng(5)
        cloud = small_cloud(rng, 8)
        grown, n_new = densify(cloud, np.zeros(8), 1e-4,
                               np.random.default_rng(0), 1000)
        assert n_new == 0
        assert grown.n == 8

    def test_one_hot_gradient_one_clone(self):
        rng = np.random.default_rng(6)
        cloud = small_cloud(rng, 8)
        accum = np.zeros(8)
        accum[3] = 1.0
        grown, n_new = densify(cloud, accum, 1e-4, np.random.default_rng(0), 1000)
        assert n_new == 1
        assert grown.n == 9
        assert np.array_equal(grown.log_scales[8], cloud.log_scales[3])
        assert not np.array_equal(grown.means[8], cloud.means[3])

    def test_jitter_reproducible(self):
        rng = np.random.default_rng(7)
        cloud = small_cloud(rng, 8)
        accum = np.zeros(8)
        accum[2] = 1.0
        a, _ = densify(cloud, accum, 1e-4, np.random.default_rng(42), 1000)
        b, _ = densify(cloud, accum, 1e-4, np.random.default_rng(42), 1000)
        assert np.array_equal(a.means, b.means)

    def test_cap_skips_with_warning(self):
        rng = np.random.default_rng(8)
        cloud = small_cloud(rng, 8)
        grown, n_new = densify(cloud, np.ones(8), 1e-4,
                               np.random.default_rng(0), max_points=9)
        assert n_new == 0
        assert grown.n == 8


def tiny_data(seed=0, n_views=2, times=(1 / 4, 1.0), size=24):
    rng = np.random.default_rng(seed)
    samples = []
    for vi in range(n_views):
        for ei, t in enumerate(times):
            img = rng.uniform(0.2, 0.8, (size, size, 3))
            samples.append(TrainSample(camera=make_cam(t, size, size), image=img,
                                       view=vi, exposure_level=ei))
    pts = rng.uniform(-0.8, 0.8, (25, 3)) + [0, 0, 2.5]
    return TrainData(samples=samples, init_points=pts)


def tiny_cfg(**kw):
    base = dict(coarse_iters=12, fine_iters=12, prune_start=8, prune_interval=6,
                opacity_reset_interval=1000, seed=3,
                grid=GridConfig(dense_density=8, sparse_density=4))
    base.update(kw)
    return TrainConfig(**base)


class TestTrainLoop:
    def test_csv_log_format(self, tmp_path):
        lp = tmp_path / "log.csv"
        train(tiny_data(), tiny_cfg(), log_path=lp)
        lines = lp.read_text().splitlines()
        assert lines[0] == "iter,phase,l1,dssim,smooth,unit,total,points"
        assert len(lines) == 1 + 24
        first = lines[1].split(",")
        assert first[0] == "1" and first[1] == "coarse"
        # coarse rows carry no grid terms
        assert first[4] == "0" and first[5] == "0"
        last = lines[-1].split(",")
        assert last[0] == "24" and last[1] == "fine"
        assert float(last[4]) > 0.0

    def test_identical_seeds_bit_identical(self, tmp_path):
        p1 = tmp_path / "a.ckpt"
        p2 = tmp_path / "b.ckpt"
        train(tiny_data(), tiny_cfg(), checkpoint_path=p1)
        train(tiny_data(), tiny_cfg(), checkpoint_path=p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_different_seed_differs(self):
        a = train(tiny_data(), tiny_cfg(seed=3))
        b = train(tiny_data(), tiny_cfg(seed=4))
        assert not np.array_equal(a.cloud.means, b.cloud.means)

    def test_loss_decreases_on_renderable_scene(self):
        # targets rendered from a fixed scene: training should make progress
        rng = np.random.default_rng(9)
        gt = small_cloud(rng, 15, z=(2.0, 3.0))
        data = tiny_data(seed=1)
        from hdrsplat.exposure import fit_scaler

        scaler = fit_scaler([s.time for s in data.samples])
        for s in data.samples:
            s.image = render_ldr(gt, s.camera, scaler, None)
        cfg = tiny_cfg(coarse_iters=120, fine_iters=60, prune_start=1000)
        ck = train(data, cfg)
        start = np.mean([
            (np.abs(render_ldr(gt, s.camera, scaler, None) - s.image)).mean()
            for s in data.samples
        ])
        end = np.mean([
            (np.abs(render_ldr(ck.cloud, s.camera, ck.scaler, ck.grid) - s.image)).mean()
            for s in data.samples
        ])
        assert start == pytest.approx(0.0, abs=1e-12)
        assert end < 0.1

    def test_nan_target_aborts(self):
        data = tiny_data()
        data.samples[0].image[:] = np.nan
        data.samples[1].image[:] = np.nan
        data.samples[2].image[:] = np.nan
        data.samples[3].image[:] = np.nan
        with pytest.raises(NonFiniteLossError):
            train(data, tiny_cfg())

    def test_empty_dataset_rejected(self):
        with pytest.raises(ValueError):
            train(TrainData(samples=[]), tiny_cfg())

    def test_no_time_scaling_uses_identity(self):
        ck = train(tiny_data(), tiny_cfg(time_scaling=False))
        assert ck.scaler.r == 1.0
        assert ck.scaler.s == 0.0

    def test_no_coarse_starts_fine(self, tmp_path):
        lp = tmp_path / "log.csv"
        ck = train(tiny_data(), tiny_cfg(use_coarse=False), log_path=lp)
        lines = lp.read_text().splitlines()
        assert lines[1].split(",")[1] == "fine"
        assert len(lines) == 1 + 12
        assert ck.grid is not None

    def test_random_init_when_no_points(self):
        data = tiny_data()
        data.init_points = None
        data.scene_bounds = (np.array([-1.0, -1.0, 2.0]), np.array([1.0, 1.0, 3.0]))
        ck = train(data, tiny_cfg(n_init_points=30))
        assert ck.cloud.n <= 30
        data.scene_bounds = None
        with pytest.raises(ValueError):
            train(data, tiny_cfg())


class TestCheckpoint:
    def make_ckpt(self, with_grid=True):
        rng = np.random.default_rng(11)
        grid = init_grid_from_sigmoid(GridConfig(dense_density=8,
                                                 sparse_density=4).build())
        return ModelCheckpoint(
            cloud=small_cloud(rng, 7),
            grid=grid if with_grid else None,
            scaler=ExposureScaler(0.5, 0.6931),
            phase="fine" if with_grid else "coarse",
            iteration=1234,
            config_hash="ab" * 32,
        )

    def test_roundtrip_bit_identical(self, tmp_path):
        ck = self.make_ckpt()
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, ck)
        back = load_checkpoint(p)
        for name in ("means", "log_scales", "rotations", "opacity_logits", "radiance"):
            assert np.array_equal(getattr(back.cloud, name), getattr(ck.cloud, name))
        assert np.array_equal(back.grid.node_values, ck.grid.node_values)
        assert back.grid.dense_density == 8
        assert back.scaler == ck.scaler
        assert back.phase == "fine"
        assert back.iteration == 1234
        assert back.config_hash == ck.config_hash
        save_checkpoint(tmp_path / "again.ckpt", back)
        assert (tmp_path / "again.ckpt").read_bytes() == p.read_bytes()

    def test_roundtrip_renders_identically(self, tmp_path):
        ck = self.make_ckpt()
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, ck)
        back = load_checkpoint(p)
        cam = make_cam(0.5)
        a = render_ldr(ck.cloud, cam, ck.scaler, ck.grid)
        b = render_ldr(back.cloud, cam, back.scaler, back.grid)
        assert np.array_equal(a, b)

    def test_coarse_checkpoint_has_no_grid(self, tmp_path):
        ck = self.make_ckpt(with_grid=False)
        p = tmp_path / "coarse.ckpt"
        save_checkpoint(p, ck)
        back = load_checkpoint(p)
        assert back.grid is None
        assert back.phase == "coarse"

    def test_bad_magic_rejected(self, tmp_path):
        p = tmp_path / "bad.ckpt"
        p.write_bytes(b"NOTHDR\0" + b"\x00" * 64)
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(p)

    def test_truncated_rejected(self, tmp_path):
        ck = self.make_ckpt()
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, ck)
        blob = p.read_bytes()
        p.write_bytes(blob[:len(blob) // 2])
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(p)

    def test_trailing_garbage_rejected(self, tmp_path):
        ck = self.make_ckpt()
        p = tmp_path / "model.ckpt"
        save_checkpoint(p, ck)
        p.write_bytes(p.read_bytes() + b"xx")
        with pytest.raises(CheckpointFormatError):
            load_checkpoint(p)
