"""Tracker loop: patch geometry, first-frame training, frame processing."""

import numpy as np
import pytest

from dcfusion import tracker
from dcfusion.errors import ConfigError, InvalidInputError, ShapeError
from dcfusion.tracker import TargetState, Tracker, TrackerConfig


def quick_config(**overrides):
    base = dict(patch_pixels=80, shallow_cell=4, deep_stride=8,
                scale_levels=3, init_iterations=25, update_iterations=3,
                update_interval=5, augment_deep=False, augment_shallow=False,
                seed=3)
    base.update(overrides)
    return TrackerConfig(**base)


def make_scene(rng, size=(160, 200), box=(88, 68, 24, 24), frames=6,
               step=(2, 1)):
    "Textured square sliding over a textured background."
    h, w = size
    bg = rng.uniform(0.1, 0.4, size=(h, w, 3))
    tex = rng.uniform(0.5, 1.0, size=(box[3], box[2], 3))
    seq, gts = [], []
    for k in range(frames):
        x, y = box[0] + step[0] * k, box[1] + step[1] * k
        f = bg.copy()
        f[y:y + box[3], x:x + box[2]] = tex
        seq.append(f)
        gts.append((x, y, box[2], box[3]))
    return seq, gts


class TestConfigAndState:
    def test_validate_rejects_even_levels(self):
        with pytest.raises(ConfigError):
            quick_config(scale_levels=4).validate()

    def test_validate_rejects_bad_divisibility(self):
        with pytest.raises(ConfigError):
            quick_config(patch_pixels=81).validate()

    def test_validate_rejects_flat_scale_step(self):
        with pytest.raises(ConfigError):
            quick_config(scale_levels=3, scale_step=1.0).validate()

    def test_parse_mode(self):
        assert tracker.parse_mode("adaptive") is None
        assert tracker.parse_mode("deep") == 1.0
        assert tracker.parse_mode("shallow") == 0.0
        assert tracker.parse_mode("fixed:0.3") == 0.7
        with pytest.raises(ConfigError):
            tracker.parse_mode("fixed:1.5")
        with pytest.raises(ConfigError):
            tracker.parse_mode("fixed:abc")
        with pytest.raises(ConfigError):
            tracker.parse_mode("hybrid")

    def test_state_box_round_trip(self):
        state = TargetState.from_box((10.0, 20.0, 30.0, 40.0))
        assert state.center == (25.0, 40.0)
        np.testing.assert_allclose(state.box, (10.0, 20.0, 30.0, 40.0))
        assert state.diagonal == 50.0

    def test_state_rejects_bad_size(self):
        with pytest.raises(InvalidInputError):
            TargetState((5.0, 5.0), (0.0, 4.0))
        with pytest.raises(InvalidInputError):
            TargetState((5.0, 5.0), (4.0, 4.0), scale=0.0)


class TestExtractPatch:
    def test_unit_scale_interior_is_exact_crop(self):
        rng = np.random.default_rng(31)
        image = rng.uniform(size=(40, 50, 3))
        patch = tracker.extract_patch(image, (25.0, 20.0), 16.0, 16)
        np.testing.assert_allclose(patch, image[12:28, 17:33], atol=1e-12)

    def test_half_pixel_shift_is_neighbor_average(self):
        rng = np.random.default_rng(32)
        image = rng.uniform(size=(30, 30, 3))
        patch = tracker.extract_patch(image, (15.5, 15.0), 8.0, 8)
        direct = 0.5 * (image[11:19, 11:19] + image[11:19, 12:20])
        np.testing.assert_allclose(patch, direct, atol=1e-12)

    def test_edge_replication(self):
        image = np.zeros((20, 20, 3))
        image[:, 0] = 1.0
        patch = tracker.extract_patch(image, (0.0, 10.0), 8.0, 8)
        np.testing.assert_allclose(patch[:, :4], 1.0)

    def test_downscale_preserves_constant(self):
        image = np.full((64, 64, 3), 0.7)
        patch = tracker.extract_patch(image, (32.0, 32.0), 48.0, 16)
        np.testing.assert_allclose(patch, 0.7, atol=1e-12)


class TestInitialize:
    def test_default_augmentation_counts(self):
        rng = np.random.default_rng(33)
        seq, gts = make_scene(rng, size=(320, 360),
                              box=(160, 140, 36, 30), frames=1)
        cfg = TrackerConfig(init_iterations=10, seed=1)
        trk = Tracker(seq[0], TargetState.from_box(gts[0]), cfg)
        assert len(trk.deep.bank.memory) == 23
        assert len(trk.shallow.bank.memory) == 1

    def test_augmentation_disabled_single_sample(self):
        rng = np.random.default_rng(34)
        seq, gts = make_scene(rng, frames=1)
        trk = Tracker(seq[0], TargetState.from_box(gts[0]), quick_config())
        assert len(trk.deep.bank.memory) == 1
        assert len(trk.shallow.bank.memory) == 1

    def test_reinit_is_deterministic(self):
        rng = np.random.default_rng(35)
        seq, gts = make_scene(rng, frames=1)
        cfg = quick_config(augment_deep=True, dropout_draws=2, seed=11)
        a = Tracker(seq[0], TargetState.from_box(gts[0]), cfg)
        b = Tracker(seq[0], TargetState.from_box(gts[0]), cfg)
        np.testing.assert_array_equal(a.deep.bank.filters,
                                      b.deep.bank.filters)
        np.testing.assert_array_equal(a.shallow.bank.filters,
                                      b.shallow.bank.filters)

    def test_degenerate_box_rejected(self):
        rng = np.random.default_rng(36)
        seq, _ = make_scene(rng, frames=1)
        with pytest.raises(InvalidInputError):
            Tracker(seq[0], TargetState((50.0, 50.0), (0.9, 0.9)),
                    quick_config())

    def test_box_outside_frame_rejected(self):
        rng = np.random.default_rng(37)
        seq, _ = make_scene(rng, frames=1)
        with pytest.raises(InvalidInputError):
            Tracker(seq[0], TargetState.from_box((300.0, 300.0, 10.0, 10.0)),
                    quick_config())


class TestProcessFrame:
    def test_self_detection_on_static_scene(self):
        rng = np.random.default_rng(38)
        seq, gts = make_scene(rng, frames=1)
        trk = Tracker(seq[0], TargetState.from_box(gts[0]), quick_config())
        state, result, diag = trk.process_frame(seq[0])
        cell_img = (trk.cfg.shallow_cell
                    * trk._side(trk.state, trk.cfg.scale_levels // 2)
                    / trk.cfg.patch_pixels)
        start = TargetState.from_box(gts[0])
        err = np.hypot(state.center[0] - start.center[0],
                       state.center[1] - start.center[1])
        assert err <= 0.5 * cell_img
        assert not diag["clamped"]

    def test_whole_cell_translation_is_exact(self):
        rng = np.random.default_rng(39)
        tile = rng.uniform(size=(180, 180, 3))
        frame1 = np.tile(tile, (2, 2, 1))
        # diagonal 40 -> patch side 180 image px -> cell 7.2 image px,
        # so a 36 px roll is exactly 5 score cells
        box = (168.0, 164.0, 24.0, 32.0)
        cfg = quick_config(patch_pixels=100, deep_stride=10, scale_levels=1,
                           init_iterations=50, feature_window="none")
        trk = Tracker(frame1, TargetState.from_box(box), cfg)
        frame2 = np.roll(frame1, (36, 36), axis=(0, 1))
        state, result, diag = trk.process_frame(frame2)
        np.testing.assert_allclose(state.center, (216.0, 216.0), atol=1e-6)
        assert state.scale == 1.0

    def test_tracks_moving_target(self):
        rng = np.random.default_rng(40)
        seq, gts = make_scene(rng, frames=6, step=(2, 1))
        trk = Tracker(seq[0], TargetState.from_box(gts[0]), quick_config())
        cell_img = (trk.cfg.shallow_cell
                    * trk._side(trk.state, trk.cfg.scale_levels // 2)
                    / trk.cfg.patch_pixels)
        for frame, gt in zip(seq[1:], gts[1:]):
            state, result, diag = trk.process_frame(frame)
            want = TargetState.from_box(gt)
            err = np.hypot(state.center[0] - want.center[0],
                           state.center[1] - want.center[1])
            assert err <= cell_img
            assert abs(result.beta_d + result.beta_s - 1.0) <= 1e-12

    def test_update_cadence(self):
        rng = np.random.default_rng(41)
        seq, gts = make_scene(rng, frames=5, step=(0, 0))
        trk = Tracker(seq[0], TargetState.from_box(gts[0]),
                      quick_config(update_interval=2))
        flags = [trk.process_frame(f)[2]["updated"] for f in seq[1:]]
        assert flags == [False, True, False, True]
        assert len(trk.deep.bank.memory) == 3
        assert len(trk.shallow.bank.memory) == 3

    def test_frame_shape_mismatch(self):
        rng = np.random.default_rng(42)
        seq, gts = make_scene(rng, frames=1)
        trk = Tracker(seq[0], TargetState.from_box(gts[0]), quick_config())
        with pytest.raises(ShapeError):
            trk.process_frame(np.zeros((80, 80, 3)))


class TestModes:
    def run_modes(self, modes, frames=5):
        rng = np.random.default_rng(43)
        seq, gts = make_scene(rng, frames=frames, step=(2, 1))
        cfg = quick_config(update_interval=2)
        tracks = {}
        for mode in modes:
            trk = Tracker(seq[0], TargetState.from_box(gts[0]), cfg,
                          mode=mode)
            tracks[mode] = [trk.process_frame(f) for f in seq[1:]]
        return tracks

    def test_deep_mode_equals_pinned_weight(self):
        tracks = self.run_modes(["deep", "fixed:0.0"])
        for (sa, ra, _), (sb, rb, _) in zip(tracks["deep"],
                                            tracks["fixed:0.0"]):
            assert sa.center == sb.center
            assert sa.size == sb.size
            assert ra.t_star == rb.t_star
            assert ra.loss == rb.loss

    def test_shallow_mode_equals_pinned_weight(self):
        tracks = self.run_modes(["shallow", "fixed:1.0"])
        for (sa, ra, _), (sb, rb, _) in zip(tracks["shallow"],
                                            tracks["fixed:1.0"]):
            assert sa.center == sb.center
            assert ra.beta_d == 0.0
            assert rb.beta_s == 1.0

    def test_adaptive_weights_sum_to_one(self):
        tracks = self.run_modes(["adaptive"])
        for state, result, diag in tracks["adaptive"]:
            assert abs(result.beta_d + result.beta_s - 1.0) <= 1e-12
            assert np.isfinite(result.xi)
            assert np.isfinite(result.loss)
