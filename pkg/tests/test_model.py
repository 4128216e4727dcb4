"""Network construction, forward passes, EMA updates, and checkpoint IO."""

from __future__ import annotations

import numpy as np
import pytest

from raftlab import tape as tp
from raftlab.errors import ConfigError, FormatError
from raftlab.model import (
    CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
    NetworkSpec,
    ema_update,
    forward_online,
    forward_target,
    init_params,
    load_checkpoint,
    mirror_predictor,
    save_checkpoint,
)


def small_spec(predictor="linear", predictor_init="random"):
    return NetworkSpec(
        input_dim=6,
        backbone_widths=(10,),
        representation_dim=7,
        projection_dim=5,
        predictor=predictor,
        predictor_init=predictor_init,
    )


class TestInit:
    def test_linear_predictor_layout(self):
        params = init_params(small_spec("linear"), seed=0)
        expected = {
            "backbone.0.w", "backbone.0.b", "backbone.1.w", "backbone.1.b",
            "projector.0.w", "projector.0.b", "projector.1.w", "projector.1.b",
            "predictor.w",
        }
        expected |= {f"target.{n}" for n in expected if not n.startswith("predictor")}
        assert set(params.values.keys()) == expected
        assert params.values["predictor.w"].shape == (5, 5)

    def test_mlp_predictor_layout(self):
        params = init_params(small_spec("mlp"), seed=0)
        for name in ("predictor.0.w", "predictor.0.b", "predictor.1.w", "predictor.1.b"):
            assert name in params.values

    def test_identity_predictor_has_no_parameters(self):
        params = init_params(small_spec("identity"), seed=0)
        assert not any(n.startswith("predictor") for n in params.values)

    def test_weights_bounded_by_fan_in_and_biases_zero(self):
        params = init_params(small_spec("linear"), seed=3)
        w = params.values["backbone.0.w"]
        assert w.shape == (6, 10)
        assert np.max(np.abs(w)) <= 1.0 / np.sqrt(6)
        np.testing.assert_array_equal(params.values["backbone.0.b"], np.zeros(10))

    def test_target_starts_as_exact_copy(self):
        params = init_params(small_spec("linear"), seed=1)
        for name in params.values:
            if name.startswith("target."):
                online = params.values[name[len("target."):]]
                np.testing.assert_array_equal(params.values[name], online)
                assert params.values[name] is not online

    def test_same_seed_reproduces_and_seeds_differ(self):
        a = init_params(small_spec("linear"), seed=5)
        b = init_params(small_spec("linear"), seed=5)
        c = init_params(small_spec("linear"), seed=6)
        for name in a.values:
            np.testing.assert_array_equal(a.values[name], b.values[name])
        assert any(
            not np.array_equal(a.values[n], c.values[n]) for n in a.values
        )

    def test_identity_predictor_start(self):
        params = init_params(small_spec("linear", "identity"), seed=0)
        np.testing.assert_array_equal(params.values["predictor.w"], np.eye(5))

    def test_mirrored_predictor_start_negates_reference(self):
        w0 = np.random.default_rng(0).normal(size=(5, 5))
        params = init_params(small_spec("linear", "mirrored"), seed=0, predictor_w0=w0)
        np.testing.assert_array_equal(params.values["predictor.w"], -w0)

    def test_mirrored_start_requires_reference_matrix(self):
        with pytest.raises(ConfigError):
            init_params(small_spec("linear", "mirrored"), seed=0)

    def test_mirrored_start_rejects_wrong_shape(self):
        with pytest.raises(ConfigError):
            init_params(
                small_spec("linear", "mirrored"), seed=0, predictor_w0=np.zeros((2, 2))
            )

    def test_unknown_predictor_kind_rejected(self):
        with pytest.raises(ConfigError):
            small_spec("bilinear")

    def test_unknown_predictor_init_rejected(self):
        with pytest.raises(ConfigError):
            small_spec("linear", "warm")


class TestForward:
    def test_online_projection_rows_are_unit(self):
        params = init_params(small_spec("linear"), seed=0)
        x = np.random.default_rng(1).normal(size=(4, 6))
        h, z, p = forward_online(params, x)
        assert h.shape == (4, 7)
        assert z.shape == (4, 5)
        assert p.shape == (4, 5)
        np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), np.ones(4), atol=1e-12)

    def test_identity_predictor_returns_projection_itself(self):
        params = init_params(small_spec("identity"), seed=0)
        x = np.random.default_rng(2).normal(size=(3, 6))
        _, z, p = forward_online(params, x)
        assert p is z

    def test_predictor_consumes_unnormalized_projection(self):
        params = init_params(small_spec("linear"), seed=0)
        x = np.random.default_rng(3).normal(size=(3, 6))
        _, z, p = forward_online(params, x)
        w = params.values["predictor.w"]
        scaled = forward_online(params, x)
        np.testing.assert_allclose(scaled[2].data, p.data)
        assert not np.allclose(p.data, z.data @ w)

    def test_target_forward_is_tape_free_and_unit(self):
        params = init_params(small_spec("linear"), seed=0)
        x = np.random.default_rng(4).normal(size=(4, 6))
        z = forward_target(params, x)
        assert z.tape is None
        np.testing.assert_allclose(np.linalg.norm(z.data, axis=1), np.ones(4), atol=1e-12)

    def test_fresh_copy_matches_target_forward(self):
        params = init_params(small_spec("linear"), seed=0)
        x = np.random.default_rng(5).normal(size=(4, 6))
        _, z, _ = forward_online(params, x)
        zbar = forward_target(params, x)
        np.testing.assert_allclose(z.data, zbar.data, atol=1e-12)


class TestMirror:
    def test_mirror_negates_only_the_predictor(self):
        params = init_params(small_spec("linear"), seed=0)
        mirrored = mirror_predictor(params)
        np.testing.assert_array_equal(
            mirrored.values["predictor.w"], -params.values["predictor.w"]
        )
        for name in params.values:
            if name != "predictor.w":
                np.testing.assert_array_equal(mirrored.values[name], params.values[name])

    def test_mirror_twice_restores_parameters(self):
        params = init_params(small_spec("linear"), seed=1)
        back = mirror_predictor(mirror_predictor(params))
        np.testing.assert_array_equal(
            back.values["predictor.w"], params.values["predictor.w"]
        )

    @pytest.mark.parametrize("kind", ["identity", "mlp"])
    def test_mirror_requires_linear_predictor(self, kind):
        with pytest.raises(ConfigError):
            mirror_predictor(init_params(small_spec(kind), seed=0))


class TestEma:
    def test_tau_one_freezes_the_target(self):
        params = init_params(small_spec("linear"), seed=0)
        before = {n: v.copy() for n, v in params.values.items() if n.startswith("target.")}
        shifted = params.clone()
        for name in shifted.trainable_names():
            shifted.values[name] = shifted.values[name] + 1.0
        after = ema_update(shifted, tau=1.0)
        for name, val in before.items():
            np.testing.assert_array_equal(after.values[name], val)

    def test_tau_zero_copies_online_weights(self):
        params = init_params(small_spec("linear"), seed=0)
        shifted = params.clone()
        for name in shifted.trainable_names():
            shifted.values[name] = shifted.values[name] + 1.0
        after = ema_update(shifted, tau=0.0)
        for name in after.values:
            if name.startswith("target."):
                np.testing.assert_array_equal(
                    after.values[name], after.values[name[len("target."):]]
                )

    def test_single_step_blend_value(self):
        params = init_params(small_spec("identity"), seed=0)
        shifted = params.clone()
        for name in list(shifted.values):
            if name.startswith("target."):
                shifted.values[name] = np.zeros_like(shifted.values[name])
            else:
                shifted.values[name] = np.ones_like(shifted.values[name])
        after = ema_update(shifted, tau=0.996)
        np.testing.assert_allclose(
            after.values["target.backbone.0.w"],
            np.full_like(after.values["target.backbone.0.w"], 0.004),
            rtol=1e-12,
        )

    def test_repeated_updates_converge_geometrically(self):
        params = init_params(small_spec("identity"), seed=0)
        current = params.clone()
        for name in list(current.values):
            if name.startswith("target."):
                current.values[name] = np.zeros_like(current.values[name])
            else:
                current.values[name] = np.ones_like(current.values[name])
        tau = 0.9
        k = int(np.ceil(np.log(1e-10) / np.log(tau)))
        for _ in range(k):
            current = ema_update(current, tau=tau)
        gap = np.max(np.abs(current.values["target.backbone.0.w"] - 1.0))
        assert gap <= 1e-10


class TestCheckpoint:
    def test_round_trip_preserves_everything(self, tmp_path):
        params = init_params(small_spec("linear"), seed=7)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        loaded = load_checkpoint(path)
        assert set(loaded.values) == set(params.values)
        for name in params.values:
            np.testing.assert_array_equal(loaded.values[name], params.values[name])
        assert loaded.spec.projection_dim == params.spec.projection_dim

    def test_resave_is_byte_identical(self, tmp_path):
        params = init_params(small_spec("linear"), seed=8)
        p1, p2 = tmp_path / "a.ckpt", tmp_path / "b.ckpt"
        save_checkpoint(params, p1)
        save_checkpoint(load_checkpoint(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_header_magic_and_version(self, tmp_path):
        params = init_params(small_spec("linear"), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        blob = path.read_bytes()
        assert blob.startswith(CHECKPOINT_MAGIC)
        assert int.from_bytes(blob[8:12], "little") == CHECKPOINT_VERSION

    def test_corrupted_magic_rejected(self, tmp_path):
        params = init_params(small_spec("linear"), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        blob = bytearray(path.read_bytes())
        blob[0] ^= 0xFF
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_unknown_version_rejected(self, tmp_path):
        params = init_params(small_spec("linear"), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        blob = bytearray(path.read_bytes())
        blob[8] += 1
        path.write_bytes(bytes(blob))
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_file_rejected(self, tmp_path):
        params = init_params(small_spec("linear"), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        blob = path.read_bytes()
        path.write_bytes(blob[: len(blob) - 9])
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_trailing_bytes_rejected(self, tmp_path):
        params = init_params(small_spec("linear"), seed=0)
        path = tmp_path / "model.ckpt"
        save_checkpoint(params, path)
        path.write_bytes(path.read_bytes() + b"\x00\x01")
        with pytest.raises(FormatError):
            load_checkpoint(path)
