"""CSV formats, figures, overlays, and the batch evaluation loop."""

import numpy as np

from dcfusion import report, sequences
from dcfusion.sequences import Sequence, SynthSpec
from dcfusion.tracker import TrackerConfig


def fast_config(**kw):
    base = dict(patch_pixels=80, shallow_cell=4, deep_stride=8,
                scale_levels=3, scale_step=1.02, init_iterations=25,
                update_iterations=3, augment_deep=False, seed=2)
    base.update(kw)
    return TrackerConfig(**base)


def small_sequence(frames=4, seed=13, **kw):
    spec = SynthSpec(width=160, height=120, frames=frames, box_x=40.0,
                     box_y=40.0, box_w=24.0, box_h=18.0, velocity_x=1.5,
                     **kw)
    return sequences.synth_sequence(spec, seed=seed)


class TestFormatting:
    def test_frame_row_bytes(self, tmp_path):
        rows = [(0, 30.0, 100.0, 24.0, 18.0, 0.5, 0.5, 0.0, 0.0),
                (3, 1.23456, 2.0, 3.5, 4.25, 0.123456789, 0.876543211,
                 0.0123456789, -0.5)]
        path = tmp_path / "rows.csv"
        report.write_frame_csv(path, rows)
        assert path.read_text() == (
            "frame,x,y,w,h,beta_d,beta_s,xi,loss\n"
            "0,30.0000,100.0000,24.0000,18.0000,0.500000,0.500000,0,0\n"
            "3,1.2346,2.0000,3.5000,4.2500,0.123457,0.876543,"
            "0.0123456789,-0.5\n")

    def test_summary_error_sanitized(self, tmp_path):
        run = report.SequenceRun("seq", "adaptive", [(0, 1, 1, 2, 2, 0.5,
                                                      0.5, 0.0, 0.0)],
                                 [None], None,
                                 error="frame 1: bad, very\nbad")
        path = tmp_path / "summary.csv"
        report.write_summary_csv(path, [run])
        lines = path.read_text().splitlines()
        assert lines[0] == report.SUMMARY_CSV_HEADER
        assert lines[1] == "seq,adaptive,1,,,,,frame 1: bad; very bad"

    def test_mode_slug(self):
        run = report.SequenceRun("s", "fixed:0.25", [], [])
        assert run.mode_slug == "fixed_0.25"


class TestRunSequence:
    def test_first_row_convention(self):
        seq = small_sequence()
        run = report.run_sequence(seq, fast_config(), "adaptive")
        assert run.error == ""
        assert len(run.rows) == len(seq)
        x, y, w, h = seq.ground_truth[0]
        assert run.rows[0] == (0, x, y, w, h, 0.5, 0.5, 0.0, 0.0)
        assert run.report is not None
        assert run.report.ious[0] == 1.0

    def test_identical_reruns_byte_identical(self, tmp_path):
        seq = small_sequence()
        texts = []
        for tag in ("a", "b"):
            run = report.run_sequence(seq, fast_config(), "adaptive")
            path = tmp_path / f"{tag}.csv"
            report.write_frame_csv(path, run.rows)
            texts.append(path.read_bytes())
        assert texts[0] == texts[1]

    def test_error_truncates_run(self):
        seq = small_sequence(frames=4)
        broken = Sequence(
            [seq.frames[0], seq.frames[1], np.zeros((60, 60, 3)),
             seq.frames[3]],
            seq.ground_truth, name="broken")
        run = report.run_sequence(broken, fast_config(), "adaptive")
        assert run.error.startswith("frame 2:")
        assert len(run.rows) == 2
        assert run.report is None

    def test_shallow_equals_pinned_weight(self):
        seq = small_sequence()
        run_a = report.run_sequence(seq, fast_config(), "shallow")
        run_b = report.run_sequence(seq, fast_config(), "fixed:1.0")
        assert run_a.rows == run_b.rows


class TestRunEval:
    def test_batch_outputs(self, tmp_path):
        seq = small_sequence()
        broken = Sequence([seq.frames[0], np.zeros((60, 60, 3))],
                          seq.ground_truth[:2], name="broken")
        out = tmp_path / "out"
        runs = report.run_eval([("good", seq), ("broken", broken)],
                               fast_config(), "adaptive", out_dir=out,
                               overlay=True)
        assert [r.name for r in runs] == ["good", "broken"]
        assert (out / "good_adaptive_frames.csv").is_file()
        assert (out / "broken_adaptive_frames.csv").is_file()
        assert (out / "good_adaptive_curves.png").is_file()
        assert (out / "good_adaptive_weights.png").is_file()
        # incomplete run: no metrics, hence no curve figures
        assert not (out / "broken_adaptive_curves.png").exists()
        overlays = sorted((out / "overlay" / "good").glob("*.ppm"))
        assert len(overlays) == len(seq)
        summary = (out / "summary.csv").read_text().splitlines()
        assert summary[0] == report.SUMMARY_CSV_HEADER
        assert summary[1].startswith("good,adaptive,4,")
        assert "frame 1:" in summary[2]

    def test_accepts_bare_sequences(self, tmp_path):
        seq = small_sequence(frames=2)
        runs = report.run_eval([seq], fast_config(), "deep",
                               out_dir=tmp_path / "o", figures=False)
        assert runs[0].name == "synth"
        assert (tmp_path / "o" / "synth_deep_frames.csv").is_file()

    def test_empty_batch_writes_header(self, tmp_path):
        runs = report.run_eval([], out_dir=tmp_path / "o")
        assert runs == []
        assert ((tmp_path / "o" / "summary.csv").read_text()
                == report.SUMMARY_CSV_HEADER + "\n")


class TestOverlays:
    def test_burned_boxes_visible(self, tmp_path):
        from dcfusion.tracker import TargetState

        seq = small_sequence(frames=1)
        x, y, w, h = seq.ground_truth[0]
        pred = TargetState.from_box((x + 10.0, y + 6.0, w, h))
        run = report.SequenceRun("synth", "adaptive", [], [pred])
        report.render_overlays(tmp_path, seq, run)
        frame = sequences.read_ppm(tmp_path / "0001.ppm")
        # ground-truth edge burned dark green, prediction light yellow
        np.testing.assert_allclose(frame[int(y), int(x)], [0.0, 0.35, 0.0],
                                   atol=0.01)
        np.testing.assert_allclose(frame[int(y) + 6, int(x) + 10],
                                   [1.0, 1.0, 0.2], atol=0.01)
