"""Command line entry points.

Subcommands: track one sequence directory, eval a batch listed in a
text file, synth a synthetic sequence to disk, selftest the numeric
oracles, print-config the effective settings. Exit codes: 0 success,
2 configuration error, 3 data error.
"""

import argparse
import sys
from pathlib import Path

import numpy as np

from . import config as config_mod
from . import report, sequences
from .errors import ConfigError, DataError
from .sequences import SynthSpec
from .tracker import TrackerConfig, parse_mode


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dcfusion",
        description="Dual-model correlation-filter tracking with adaptive "
                    "score fusion.")
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_options(p):
        p.add_argument("--config", metavar="F",
                       help="flat key=value tracker config file")
        p.add_argument("--mode", default="adaptive",
                       help="adaptive | fixed:<beta_s> | deep | shallow")
        p.add_argument("--features-deep", metavar="SRC",
                       help="deep feature source: proxy or file:<template>")
        p.add_argument("--out", default="out", metavar="DIR",
                       help="report output directory")
        p.add_argument("--overlay", action="store_true",
                       help="also write per-frame overlay pixmaps")
        p.add_argument("--no-figures", action="store_true",
                       help="skip rendering curve figures")
        p.add_argument("--seed", type=int, default=None,
                       help="override the master seed")

    p_track = sub.add_parser("track", help="track one sequence directory")
    p_track.add_argument("seq_dir", help="directory with img/ and "
                                         "groundtruth_rect.txt")
    add_run_options(p_track)

    p_eval = sub.add_parser("eval", help="track every sequence in a list")
    p_eval.add_argument("list_file",
                        help="text file, one sequence directory per line")
    add_run_options(p_eval)

    p_synth = sub.add_parser("synth", help="render a synthetic sequence")
    p_synth.add_argument("--spec", metavar="F",
                         help="flat key=value scene spec file")
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, metavar="DIR")

    sub.add_parser("selftest", help="run the built-in numeric oracles")

    p_print = sub.add_parser("print-config",
                             help="print the effective tracker config")
    p_print.add_argument("--config", metavar="F")
    return parser


def _tracker_config(args) -> TrackerConfig:
    if args.config:
        cfg = config_mod.load_config(args.config, TrackerConfig)
    else:
        cfg = TrackerConfig()
    if getattr(args, "features_deep", None):
        cfg.deep_features = args.features_deep
    if getattr(args, "seed", None) is not None:
        cfg.seed = args.seed
    cfg.validate()
    parse_mode(args.mode)
    return cfg


def _cmd_track(args) -> int:
    cfg = _tracker_config(args)
    seq = sequences.load_sequence(args.seq_dir)
    runs = report.run_eval([(seq.name, seq)], cfg, args.mode, args.out,
                           overlay=args.overlay,
                           figures=not args.no_figures)
    run = runs[0]
    if run.error:
        print(f"{run.name}: FAILED ({run.error})", file=sys.stderr)
        return 1
    print(f"{run.name}: AUC {run.report.auc:.4f}  "
          f"OP@0.50 {run.report.op_at_50:.4f}  "
          f"OP@0.75 {run.report.op_at_75:.4f}  "
          f"DP@20 {run.report.dp_at_20:.4f}")
    return 0


def _cmd_eval(args) -> int:
    cfg = _tracker_config(args)
    list_path = Path(args.list_file)
    if not list_path.is_file():
        raise DataError(f"{list_path}: sequence list not found")
    dirs = [line.strip() for line in list_path.read_text().splitlines()
            if line.strip() and not line.strip().startswith("#")]
    named = []
    for d in dirs:
        seq = sequences.load_sequence(d)
        named.append((seq.name, seq))
    runs = report.run_eval(named, cfg, args.mode, args.out,
                           overlay=args.overlay,
                           figures=not args.no_figures)
    for run in runs:
        if run.error:
            print(f"{run.name}: FAILED ({run.error})", file=sys.stderr)
        else:
            print(f"{run.name}: AUC {run.report.auc:.4f}  "
                  f"OP@0.50 {run.report.op_at_50:.4f}")
    print(f"summary written to {Path(args.out) / 'summary.csv'}")
    return 0


def _cmd_synth(args) -> int:
    if args.spec:
        spec = config_mod.load_config(args.spec, SynthSpec)
    else:
        spec = SynthSpec()
    seq = sequences.synth_sequence(spec, args.seed)
    sequences.save_sequence(args.out, seq)
    print(f"wrote {len(seq)} frames to {args.out}")
    return 0


def _cmd_print_config(args) -> int:
    if args.config:
        cfg = config_mod.load_config(args.config, TrackerConfig)
        cfg.validate()
    else:
        cfg = TrackerConfig()
    sys.stdout.write(config_mod.format_config(cfg))
    return 0


def _selftest_checks():
    from . import dcf, fusion, grid, metrics, quality, training

    def check_label():
        cfgl = training.LabelConfig(0.25, (8.0, 8.0))
        label = training.gaussian_label((32, 32), cfgl)
        assert abs(label[0, 0] - 1.0) < 1e-12
        assert abs(label[2, 0] - np.exp(-0.5)) < 1e-9

    def check_grid():
        rng = np.random.default_rng(5)
        g = rng.normal(size=(12, 12))
        back = grid.idft(grid.dft(g))
        assert np.abs(back - g).max() < 1e-10

    def check_solver():
        rng = np.random.default_rng(6)
        shape = (12, 12)
        mask_value = 0.5
        x = grid.random_bandlimited(shape, rng, keep=4) + 2.0
        label = training.gaussian_label(
            shape, training.LabelConfig(0.25, (4.0, 4.0)))
        taps = dcf.constant_mask_taps(shape, mask_value)
        bank = dcf.FilterBank(label, taps, learning_rate=0.02,
                              max_samples=5, name="selftest")
        bank.set_initial_samples([grid.dft(x)[None]])
        bank.train(300, tolerance=1e-13)
        direct = dcf.closed_form_single_channel(
            grid.dft(x), bank.label_spectrum, mask_value ** 2)
        assert np.abs(bank.filters[0] - direct).max() < 1e-7

    def check_fusion():
        rng = np.random.default_rng(7)
        values = rng.normal(size=(12, 12))
        smap = quality.ScoreMap.single(values, 1.0)
        dist = quality.StateDistance(0.1)
        t_star = (0, 3, 4)
        res = fusion.solve_fusion_qp(t_star, smap, smap, dist, 0.15)
        assert res.beta_d == 0.5
        # identical maps: the fused map is beta-free, so the optimum is
        # the quadratic penalty alone at its minimum beta = 0.5
        xi = quality.quality(smap, t_star, dist)
        assert abs(res.loss - (-xi + 0.15 * 0.5)) < 1e-12

    def check_metrics():
        assert metrics.iou((0, 0, 2, 2), (1, 0, 2, 2)) == 2.0 / 6.0
        rep = metrics.success_metrics([(0, 0, 4, 4)], [(0, 0, 4, 4)])
        assert rep.op_at_50 == 1.0 and rep.dp_at_20 == 1.0

    return [("label shape", check_label), ("fourier round trip", check_grid),
            ("filter solve", check_solver), ("weight solve", check_fusion),
            ("metrics arithmetic", check_metrics)]


def _cmd_selftest(args) -> int:
    failures = 0
    for name, fn in _selftest_checks():
        try:
            fn()
        except AssertionError:
            print(f"selftest {name}: FAIL")
            failures += 1
        else:
            print(f"selftest {name}: ok")
    return 1 if failures else 0


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    handlers = {
        "track": _cmd_track,
        "eval": _cmd_eval,
        "synth": _cmd_synth,
        "selftest": _cmd_selftest,
        "print-config": _cmd_print_config,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
