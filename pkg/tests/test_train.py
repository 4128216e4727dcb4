"""Training loop: schedules, determinism, logging, checkpoints, divergence."""

from __future__ import annotations

import json

import numpy as np
import pytest

from raftlab.data import AugmentationSpec, SyntheticBlobsSpec, make_blobs
from raftlab.errors import ConfigError, ScheduleError, TrainingDivergedError
from raftlab.losses import LossConfig
from raftlab.model import NetworkSpec, init_params, load_checkpoint
from raftlab.train import (
    DEFAULT_EMA_TAU,
    DEFAULT_LEARNING_RATE,
    OPTIMIZERS,
    MetricsRecord,
    TrainConfig,
    _derived_seeds,
    schedule_value,
    train_run,
)

SMALL_NET = NetworkSpec(
    input_dim=8,
    backbone_widths=(12,),
    representation_dim=10,
    projection_dim=6,
    predictor="linear",
)


def small_config(**overrides):
    base = dict(
        network=SMALL_NET,
        loss=LossConfig(objective="byol_prime", alpha=1.0, beta=1.0),
        augmentation=AugmentationSpec.symmetric(noise_sigma=0.2),
        steps=12,
        batch_size=16,
        optimizer="adam",
        learning_rate=3e-4,
        ema_tau=0.996,
        master_seed=0,
        log_every=4,
    )
    base.update(overrides)
    return TrainConfig(**base)


class TestSchedules:
    def test_constant_schedule_holds_everywhere(self):
        assert schedule_value(0.5, 1) == 0.5
        assert schedule_value(0.5, 100) == 0.5

    def test_list_schedule_indexes_by_step(self):
        assert schedule_value([0.9, 0.99], 1) == 0.9
        assert schedule_value([0.9, 0.99], 2) == 0.99

    def test_step_zero_is_rejected(self):
        with pytest.raises(ScheduleError):
            schedule_value([0.9, 0.99], 0)

    def test_step_past_the_end_is_rejected(self):
        with pytest.raises(ScheduleError):
            schedule_value([0.9, 0.99], 3)

    def test_schedule_length_must_match_step_budget(self):
        with pytest.raises(ConfigError):
            small_config(steps=4, learning_rate=[1e-3, 1e-3])

    def test_negative_learning_rate_rejected(self):
        with pytest.raises(ConfigError):
            small_config(learning_rate=-1e-3)

    def test_ema_outside_unit_interval_rejected(self):
        with pytest.raises(ConfigError):
            small_config(ema_tau=1.5)

    def test_unknown_optimizer_rejected(self):
        with pytest.raises(ConfigError):
            small_config(optimizer="lbfgs")

    def test_default_constants(self):
        assert DEFAULT_LEARNING_RATE == 3e-4
        assert DEFAULT_EMA_TAU == 0.996
        assert OPTIMIZERS == ("sgd", "adam")


class TestSeedDerivation:
    def test_master_seed_fans_out_to_two_streams(self):
        init_a, aug_a = _derived_seeds(7)
        init_b, aug_b = _derived_seeds(7)
        assert (init_a, aug_a) == (init_b, aug_b)
        assert init_a != aug_a

    def test_different_masters_differ(self):
        assert _derived_seeds(1) != _derived_seeds(2)


class TestLoopBehavior:
    def test_single_step_runs_and_logs_once(self, small_blobs):
        cfg = small_config(steps=1, log_every=1)
        params, records = train_run(cfg, small_blobs)
        assert [r.step for r in records] == [1]
        assert isinstance(records[0], MetricsRecord)

    def test_zero_learning_rate_freezes_all_parameters(self, small_blobs):
        cfg = small_config(learning_rate=0.0, steps=6)
        init_seed, _ = _derived_seeds(cfg.master_seed)
        reference = init_params(SMALL_NET, init_seed)
        params, _ = train_run(cfg, small_blobs)
        for name in reference.trainable_names():
            np.testing.assert_array_equal(params.values[name], reference.values[name])
        for name in reference.target_names():
            np.testing.assert_allclose(
                params.values[name], reference.values[name], atol=1e-12
            )

    def test_same_config_and_seed_reproduce_bitwise(self, small_blobs):
        cfg = small_config(steps=8)
        pa, ra = train_run(cfg, small_blobs)
        pb, rb = train_run(cfg, small_blobs)
        for name in pa.values:
            assert pa.values[name].tobytes() == pb.values[name].tobytes()
        assert [r.loss_total for r in ra] == [r.loss_total for r in rb]

    def test_log_steps_are_multiples_of_the_interval(self, small_blobs):
        cfg = small_config(steps=12, log_every=4)
        _, records = train_run(cfg, small_blobs)
        assert [r.step for r in records] == [4, 8, 12]

    def test_records_carry_epoch_and_geometry(self, small_blobs):
        _, records = train_run(small_config(steps=4, log_every=4), small_blobs)
        rec = records[0]
        assert rec.epoch >= 0
        assert rec.loss_align >= 0.0
        assert rec.uniformity <= 0.0
        assert isinstance(rec.collapsed, bool)
        assert rec.wall_ms >= 0.0

    def test_step_callback_sees_every_step_and_gradients(self, small_blobs):
        seen = []

        def spy(step, params, grads):
            seen.append((step, set(grads.keys())))

        cfg = small_config(steps=3)
        train_run(cfg, small_blobs, step_callback=spy)
        assert [s for s, _ in seen] == [1, 2, 3]
        expected = set(init_params(SMALL_NET, 0).trainable_names())
        assert all(keys == expected for _, keys in seen)

    def test_initial_params_override_is_used(self, small_blobs):
        custom = init_params(SMALL_NET, seed=1234)
        cfg = small_config(steps=1, learning_rate=0.0)
        params, _ = train_run(cfg, small_blobs, initial_params=custom)
        for name in custom.values:
            np.testing.assert_array_equal(params.values[name], custom.values[name])


class TestArtifacts:
    def test_metrics_file_excludes_wall_clock(self, tmp_path, small_blobs):
        cfg = small_config(steps=8, log_every=4)
        _, records = train_run(cfg, small_blobs, out_dir=tmp_path)
        lines = (tmp_path / "metrics.jsonl").read_text().splitlines()
        assert len(lines) == len(records)
        payload = json.loads(lines[0])
        assert set(payload) == {
            "step", "epoch", "loss_total", "loss_align",
            "loss_cross_model", "uniformity", "collapsed",
        }

    def test_final_checkpoint_restores_trained_parameters(self, tmp_path, small_blobs):
        cfg = small_config(steps=6)
        params, _ = train_run(cfg, small_blobs, out_dir=tmp_path)
        loaded = load_checkpoint(tmp_path / "checkpoint_final.ckpt")
        for name in params.values:
            np.testing.assert_array_equal(loaded.values[name], params.values[name])

    def test_periodic_checkpoints_use_zero_padded_steps(self, tmp_path, small_blobs):
        cfg = small_config(steps=8, checkpoint_every=4)
        train_run(cfg, small_blobs, out_dir=tmp_path)
        assert (tmp_path / "checkpoint_000004.ckpt").exists()
        assert (tmp_path / "checkpoint_000008.ckpt").exists()

    def test_divergence_raises_and_dumps_state(self, tmp_path, small_blobs):
        cfg = small_config(
            steps=40, optimizer="sgd", learning_rate=1e200, log_every=40,
            loss=LossConfig(objective="byol", alpha=1.0, beta=1.0),
        )
        with pytest.raises(TrainingDivergedError) as info:
            with np.errstate(all="ignore"):
                train_run(cfg, small_blobs, out_dir=tmp_path)
        err = info.value
        assert err.step >= 1
        dump = json.loads((tmp_path / "divergence_dump.json").read_text())
        assert str(tmp_path / "divergence_dump.json") == str(err.dump_path)
        assert dump["step"] == err.step


class TestEmaInsideTheLoop:
    def test_frozen_teacher_when_tau_is_one(self, small_blobs):
        cfg = small_config(steps=5, ema_tau=1.0)
        init_seed, _ = _derived_seeds(cfg.master_seed)
        reference = init_params(SMALL_NET, init_seed)
        params, _ = train_run(cfg, small_blobs)
        for name in params.values:
            if name.startswith("target."):
                np.testing.assert_array_equal(params.values[name], reference.values[name])

    def test_teacher_tracks_student_when_tau_is_zero(self, small_blobs):
        cfg = small_config(steps=5, ema_tau=0.0)
        params, _ = train_run(cfg, small_blobs)
        for name in params.values:
            if name.startswith("target."):
                np.testing.assert_array_equal(
                    params.values[name], params.values[name[len("target."):]]
                )
