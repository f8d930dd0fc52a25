"""``posetracker`` command line.

Every command writes ``<out>.manifest.json`` next to its main output. The
manifest holds the fully resolved options, so ``posetracker rerun`` can
repeat the run and check that the outputs come out byte-identical.
"""

import argparse
import hashlib
import json
import logging
import sys
import time
from importlib import resources
from pathlib import Path

from . import __version__, kernels
from .errors import (ConfigError, InputError, InvalidConfig, MatcherUnavailable, ParseError, PoseTrackerError,
                     ProviderError)
from .evaluation import DEFAULT_DIST_THRESHOLD, compare_runs
from .gcn import SiameseMatcher
from .providers import ReplayDetector, ReplayEstimator
from .pairs import CATEGORIES, PairDataset, generate_pairs, require_pairs
from .sequence import convert_posetrack, emit_sequence, load_sequence
from .skeleton import default_topology, load_topology
from .synth import bundled_config, load_synth_config, synth_suite
from .tracking import TrackerConfig, PoseTracker, results_to_sequence
from .training import TrainConfig, calibrate_threshold, matching_accuracy, train

log = logging.getLogger("posetracker")

BUNDLED_WEIGHTS = "bundled"
EXIT_OK, EXIT_INPUT, EXIT_CONFIG, EXIT_INTERNAL = 0, 1, 2, 3


class UsageError(ConfigError):
    pass


# ----------------------------------------------------------------------
# helpers
# ----------------------------------------------------------------------

def _sha256(path):
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _file_digests(paths):
    out = {}
    for p in paths:
        p = Path(p)
        if p.is_dir():
            for f in sorted(p.glob("*.json")):
                if not f.name.endswith(".manifest.json"):
                    out[str(f)] = _sha256(f)
        elif p.exists():
            out[str(p)] = _sha256(p)
    return out


def _write_manifest(args, outputs, inputs, timings, extra=None):
    main = Path(outputs[0])
    path = main.with_name(main.name + ".manifest.json") if not main.is_dir() else main / "run.manifest.json"
    config = {k: v for k, v in vars(args).items() if k not in ("func", "verbose")}
    doc = {
        "command": args.command,
        "version": __version__,
        "backend": kernels.BACKEND,
        "seed": config.get("seed"),
        "config": config,
        "output_keys": list(_OUTPUT_KEYS.get(args.command, ())),
        "inputs": _file_digests(inputs),
        "outputs": _file_digests(outputs),
        "timings": {k: round(v, 6) for k, v in timings.items()},
    }
    if extra:
        doc.update(extra)
    path.write_text(json.dumps(doc, indent=1, sort_keys=True) + "\n")
    return path


def _weights_path(arg):
    if arg == BUNDLED_WEIGHTS:
        ref = resources.files("posetracker.data").joinpath("weights", "gcn_synth.json")
        with resources.as_file(ref) as p:
            return Path(p)
    return Path(arg)


def _synth_configs(name_or_path):
    p = Path(name_or_path)
    if p.suffix == ".json" or p.exists():
        if not p.exists():
            raise InvalidConfig(f"synth config {p} not found")
        return load_synth_config(p)
    return bundled_config(name_or_path)


def _categories(text):
    cats = [c.strip() for c in text.split(",") if c.strip()]
    bad = [c for c in cats if c not in CATEGORIES]
    if bad or not cats:
        raise UsageError(f"unknown pair categories {bad}; choose from {CATEGORIES}")
    return cats


def _expand_inputs(paths):
    out = []
    for p in map(Path, paths):
        if p.is_dir():
            out.extend(f for f in sorted(p.glob("*.json")) if not f.name.endswith(".manifest.json"))
        else:
            out.append(p)
    return out


_PATH_KEYS = ("input", "out", "pairs", "validation", "loss_curve", "gt", "topology", "manifest", "out_dir")


def _abs(p):
    return str(Path(p).expanduser().resolve())


def _absolutize(args):
    """Make every path option absolute so manifests rerun from any directory."""
    for key in _PATH_KEYS:
        v = getattr(args, key, None)
        if isinstance(v, str):
            setattr(args, key, _abs(v))
        elif isinstance(v, list):
            setattr(args, key, [_abs(x) for x in v])
    w = getattr(args, "weights", None)
    if w and w != BUNDLED_WEIGHTS:
        args.weights = _abs(w)
    if getattr(args, "run", None):
        fixed = []
        for spec in args.run:
            name, paths = _parse_run(spec)
            fixed.append(name + "=" + ",".join(_abs(p) for p in paths))
        args.run = fixed
    for key in ("synth", "config"):
        v = getattr(args, key, None)
        if args.command in ("synth", "gen-pairs") and isinstance(v, str) and Path(v).exists():
            setattr(args, key, _abs(v))


def _topology(args):
    return load_topology(args.topology) if getattr(args, "topology", None) else default_topology()


# ----------------------------------------------------------------------
# commands
# ----------------------------------------------------------------------

def cmd_track(args):
    t_all = time.perf_counter()
    timings = {"io": 0.0, "loop": 0.0, "association": 0.0, "matching": 0.0,
               "estimator": 0.0, "detector": 0.0}
    cfg = TrackerConfig(tau_s=args.tau_s, tau_o=args.tau_o, keyframe_interval=args.keyframe_interval,
                        mode=args.mode, match_threshold=args.match_threshold,
                        max_lost_frames=args.max_lost_frames, use_pose_matching=not args.disable_gcn,
                        new_ids_after_start=not args.first_frame_ids_only).validate()
    t = time.perf_counter()
    matcher = None
    if cfg.use_pose_matching:
        if not args.weights:
            raise MatcherUnavailable("pose matching is enabled but --weights was not given "
                                     "(pass --weights FILE, --weights bundled, or --disable-gcn)")
        matcher = SiameseMatcher.load(_weights_path(args.weights))
    topo = _topology(args)
    kernels.warmup()
    inputs = _expand_inputs(args.input)
    if not inputs:
        raise UsageError("no input sequences")
    many = len(inputs) > 1
    out = Path(args.out)
    if many:
        out.mkdir(parents=True, exist_ok=True)
    timings["io"] += time.perf_counter() - t
    frames = 0
    for path in inputs:
        t = time.perf_counter()
        seq = load_sequence(path, topo.joint_names)
        timings["io"] += time.perf_counter() - t
        est = ReplayEstimator(seq, noise_sigma=args.estimator_noise, score_jitter=args.score_jitter,
                              seed=args.seed)
        engine = PoseTracker(cfg, ReplayDetector(seq), est, matcher)
        t = time.perf_counter()
        results = engine.run(len(seq.frames))
        timings["loop"] += time.perf_counter() - t
        for k in ("association", "matching", "estimator", "detector"):
            timings[k] += engine.timings[k]
        frames += len(results)
        t = time.perf_counter()
        target = out / f"{seq.seq_id}.json" if many else out
        emit_sequence(results_to_sequence(results, seq.seq_id, seq.image_size, seq.joint_order), target)
        timings["io"] += time.perf_counter() - t
    framework = timings["loop"] - timings["estimator"] - timings["detector"]
    timings["framework"] = framework
    timings["total"] = time.perf_counter() - t_all
    extra = {"frames": frames,
             "fps_excluding_inference": frames / framework if framework > 0 else None,
             "fps_including_replay": frames / timings["loop"] if timings["loop"] > 0 else None}
    _write_manifest(args, [out], [*inputs, *([_weights_path(args.weights)] if matcher else [])], timings, extra)
    print(f"tracked {len(inputs)} sequence(s), {frames} frames, "
          f"{extra['fps_excluding_inference'] or 0:.0f} fps excluding pose inference -> {out}")
    return EXIT_OK


def _load_pairs(paths, categories):
    parts = [PairDataset.load(p) for p in _expand_inputs(paths)]
    pairs = PairDataset.concat(parts)
    if categories:
        pairs = pairs.only(*categories)
    return pairs


def cmd_train(args):
    t_all = time.perf_counter()
    timings = {}
    t = time.perf_counter()
    cats = _categories(args.categories)
    pairs = require_pairs(_load_pairs(args.pairs, cats))
    val = require_pairs(_load_pairs([args.validation], cats)) if args.validation else pairs
    topo = _topology(args)
    timings["io"] = time.perf_counter() - t
    cfg = TrainConfig(batch_size=args.batch_size, epochs=args.epochs, lr=args.lr,
                      lr_decay_epochs=tuple(args.lr_decay_epochs), lr_decay_factor=args.lr_decay_factor,
                      weight_decay=args.weight_decay, momentum=args.momentum, margin=args.margin,
                      hidden=args.hidden, embed=args.embed, seed=args.seed).validate()
    t = time.perf_counter()
    result = train(pairs, cfg, topo)
    timings["training"] = time.perf_counter() - t
    matcher = result.matcher
    t = time.perf_counter()
    matcher.threshold = calibrate_threshold(matcher, val)
    acc = matching_accuracy(matcher, val)
    timings["calibration"] = time.perf_counter() - t
    out = Path(args.out)
    curve = Path(args.loss_curve) if args.loss_curve else out.with_suffix(".loss.csv")
    t = time.perf_counter()
    matcher.save(out)
    matcher.weights.check()
    lines = ["epoch,lr,loss"] + [f"{e},{lr!r},{loss!r}" for e, lr, loss in result.loss_curve]
    curve.write_text("\n".join(lines) + "\n")
    timings["io"] += time.perf_counter() - t
    timings["total"] = time.perf_counter() - t_all
    args.loss_curve = str(curve)
    inputs = _expand_inputs(args.pairs) + ([Path(args.validation)] if args.validation else [])
    _write_manifest(args, [out, curve], inputs, timings,
                    {"threshold": matcher.threshold, "calibration_accuracy": acc, "n_pairs": len(pairs)})
    print(f"trained on {len(pairs)} pairs; threshold {matcher.threshold:.6g}, "
          f"calibration accuracy {100 * acc:.2f}% -> {out}")
    return EXIT_OK


def _parse_run(text):
    if "=" not in text:
        raise UsageError(f"--run expects NAME=PATH[,PATH...], got {text!r}")
    name, paths = text.split("=", 1)
    return name, [p for p in paths.split(",") if p]


def cmd_eval(args):
    t_all = time.perf_counter()
    t = time.perf_counter()
    gt_paths = _expand_inputs(args.gt)
    gts = [load_sequence(p) for p in gt_paths]
    runs = {}
    inputs = list(gt_paths)
    for spec in args.run:
        name, paths = _parse_run(spec)
        if name in runs:
            raise UsageError(f"duplicate run name {name!r}")
        paths = _expand_inputs(paths)
        inputs.extend(paths)
        runs[name] = [load_sequence(p) for p in paths]
    io_time = time.perf_counter() - t
    t = time.perf_counter()
    report = compare_runs(gts, runs, args.dist_threshold)
    scoring = time.perf_counter() - t
    out = Path(args.out)
    text_path = out.with_suffix(".txt")
    out.write_text(report.to_csv())
    text_path.write_text(report.to_text())
    sys.stdout.write(report.to_text())
    _write_manifest(args, [out, text_path], inputs,
                    {"io": io_time, "scoring": scoring, "total": time.perf_counter() - t_all},
                    {"mota": {k: v.mota for k, v in report.tallies.items()}})
    return EXIT_OK


def cmd_gen_pairs(args):
    t_all = time.perf_counter()
    topo = _topology(args)
    if args.synth:
        seqs = synth_suite(_synth_configs(args.synth))
        inputs = []
    elif args.input:
        inputs = _expand_inputs(args.input)
        seqs = [load_sequence(p, topo.joint_names) for p in inputs]
    else:
        raise UsageError("gen-pairs needs --input or --synth")
    pairs = generate_pairs(seqs)
    if args.categories:
        pairs = pairs.only(*_categories(args.categories))
    out = Path(args.out)
    pairs.save(out)
    counts = pairs.counts()
    _write_manifest(args, [out], inputs, {"total": time.perf_counter() - t_all}, {"counts": counts})
    print(" ".join(f"{k}={v}" for k, v in counts.items()) + f" -> {out}")
    return EXIT_OK


def cmd_synth(args):
    t_all = time.perf_counter()
    cfgs = _synth_configs(args.config)
    single = not isinstance(cfgs, list)
    if single:
        if args.seed is not None:
            cfgs.seed = args.seed
        cfgs = [cfgs.validate()]
    elif args.seed is not None:
        raise UsageError("--seed applies to single configs, not suites")
    seqs = synth_suite(cfgs)
    out = Path(args.out)
    if single:
        emit_sequence(seqs[0], out)
    else:
        out.mkdir(parents=True, exist_ok=True)
        for s in seqs:
            emit_sequence(s, out / f"{s.seq_id}.json")
    _write_manifest(args, [out], [], {"total": time.perf_counter() - t_all},
                    {"synth_configs": [c.to_dict() for c in cfgs]})
    print(f"wrote {len(seqs)} sequence(s) -> {out}")
    return EXIT_OK


def cmd_convert(args):
    t_all = time.perf_counter()
    topo = _topology(args)
    path = Path(args.input)
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}:{exc.lineno}: {exc.msg}") from None
    seq = convert_posetrack(doc, topo.joint_names, args.seq_id or path.stem,
                            tuple(args.image_size), not args.all_frames)
    out = Path(args.out)
    emit_sequence(seq, out)
    _write_manifest(args, [out], [path], {"total": time.perf_counter() - t_all})
    print(f"converted {len(seq.frames)} frames -> {out}")
    return EXIT_OK


_OUTPUT_KEYS = {
    "track": ("out",),
    "train": ("out", "loss_curve"),
    "eval": ("out",),
    "gen-pairs": ("out",),
    "synth": ("out",),
    "convert": ("out",),
}


def cmd_rerun(args):
    manifest = json.loads(Path(args.manifest).read_text())
    config = dict(manifest["config"])
    command = manifest["command"]
    if command not in _COMMANDS:
        raise UsageError(f"manifest command {command!r} cannot be rerun")
    if args.out_dir:
        out_dir = Path(args.out_dir)
        out_dir.mkdir(parents=True, exist_ok=True)
        for key in manifest.get("output_keys", ()):
            if config.get(key):
                config[key] = str(out_dir / Path(config[key]).name)
    ns = argparse.Namespace(**config)
    ns.command = command
    code = _COMMANDS[command](ns)
    if code != EXIT_OK:
        return code
    old = manifest["outputs"]
    parents = [Path(manifest["config"][k]).parent for k in manifest.get("output_keys", ())
               if manifest["config"].get(k)]
    mismatched = []
    for path, digest in old.items():
        new_path = Path(path)
        if args.out_dir:
            for parent in parents:
                if new_path.is_relative_to(parent):
                    new_path = Path(args.out_dir) / new_path.relative_to(parent)
                    break
        if not new_path.exists() or _sha256(new_path) != digest:
            mismatched.append(str(new_path))
    if mismatched:
        print("outputs differ from manifest: " + ", ".join(mismatched), file=sys.stderr)
        return EXIT_INPUT if args.check else EXIT_OK
    print(f"rerun reproduced {len(old)} output file(s) byte-identically")
    return EXIT_OK


_COMMANDS = {
    "track": cmd_track,
    "train": cmd_train,
    "eval": cmd_eval,
    "gen-pairs": cmd_gen_pairs,
    "synth": cmd_synth,
    "convert": cmd_convert,
}


# ----------------------------------------------------------------------
# argument parsing
# ----------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="posetracker", description="Online top-down pose tracking toolkit")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, topology=True):
        sp.add_argument("--config", help="JSON file with option overrides (same names as the flags)")
        if topology:
            sp.add_argument("--topology", help="skeleton topology file (default: bundled 15-joint)")

    d = TrackerConfig()
    sp = sub.add_parser("track", help="track people through one or more sequence files")
    common(sp)
    sp.add_argument("--input", nargs="+", required=True, help="sequence file(s) or directories")
    sp.add_argument("--out", required=True, help="tracked output file, or directory for several inputs")
    sp.add_argument("--weights", help=f"matcher weights file, or '{BUNDLED_WEIGHTS}'")
    sp.add_argument("--keyframe-interval", type=int, default=d.keyframe_interval)
    sp.add_argument("--mode", choices=("fki", "aki", "hybrid"), default=d.mode)
    sp.add_argument("--tau-s", type=float, default=d.tau_s)
    sp.add_argument("--tau-o", type=float, default=d.tau_o)
    sp.add_argument("--match-threshold", type=float, default=None,
                    help="embedding distance threshold (default: the one stored with the weights)")
    sp.add_argument("--max-lost-frames", type=int, default=None, help="default: 2 x keyframe interval")
    sp.add_argument("--disable-gcn", action="store_true", help="spatial consistency only")
    sp.add_argument("--first-frame-ids-only", action="store_true",
                    help="only create identities on frame 0 (follow specific targets)")
    sp.add_argument("--estimator-noise", type=float, default=0.0, help="replay estimator coordinate noise (px)")
    sp.add_argument("--score-jitter", type=float, default=0.0, help="replay estimator score jitter")
    sp.add_argument("--seed", type=int, default=0, help="seed of the replay estimator noise")
    sp.set_defaults(func=cmd_track)

    t = TrainConfig()
    sp = sub.add_parser("train", help="train the Siamese pose matcher")
    common(sp)
    sp.add_argument("--pairs", nargs="+", required=True, help="pair file(s) or directories")
    sp.add_argument("--validation", help="pair file for threshold calibration (default: training pairs)")
    sp.add_argument("--out", required=True, help="weights file to write")
    sp.add_argument("--loss-curve", help="CSV loss curve (default: <out>.loss.csv)")
    sp.add_argument("--categories", default=",".join(CATEGORIES), help="pair categories to use")
    sp.add_argument("--batch-size", type=int, default=t.batch_size)
    sp.add_argument("--epochs", type=int, default=t.epochs)
    sp.add_argument("--lr", type=float, default=t.lr)
    sp.add_argument("--lr-decay-epochs", type=int, nargs="*", default=list(t.lr_decay_epochs))
    sp.add_argument("--lr-decay-factor", type=float, default=t.lr_decay_factor)
    sp.add_argument("--weight-decay", type=float, default=t.weight_decay)
    sp.add_argument("--momentum", type=float, default=t.momentum)
    sp.add_argument("--margin", type=float, default=t.margin)
    sp.add_argument("--hidden", type=int, default=t.hidden)
    sp.add_argument("--embed", type=int, default=t.embed)
    sp.add_argument("--seed", type=int, default=t.seed)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="keypoint-level MOTA of tracked runs against ground truth")
    common(sp, topology=False)
    sp.add_argument("--gt", nargs="+", required=True, help="ground-truth sequence file(s) or directory")
    sp.add_argument("--run", action="append", required=True,
                    help="NAME=PATH[,PATH...] tracked output(s) aligned with --gt; repeatable")
    sp.add_argument("--dist-threshold", type=float, default=DEFAULT_DIST_THRESHOLD,
                    help="match radius as a fraction of the gt box diagonal")
    sp.add_argument("--out", required=True, help="CSV report; an aligned text copy goes next to it")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("gen-pairs", help="mine labeled pose pairs from annotated sequences")
    common(sp)
    sp.add_argument("--input", nargs="+", help="ground-truth sequence file(s) or directories")
    sp.add_argument("--synth", help="generate the sequences from a synth config (file or bundled name)")
    sp.add_argument("--categories", help="keep only these categories (comma separated)")
    sp.add_argument("--out", required=True)
    sp.set_defaults(func=cmd_gen_pairs)

    sp = sub.add_parser("synth", help="generate synthetic ground-truth sequences")
    sp.add_argument("--config", required=True,
                    help="synth config file, or the name of a bundled one (e.g. camera_shift)")
    sp.add_argument("--seed", type=int, default=None, help="override the config's seed")
    sp.add_argument("--out", required=True, help="output file (single config) or directory (suite)")
    sp.set_defaults(func=cmd_synth)

    sp = sub.add_parser("convert", help="convert a PoseTrack-style annotation file")
    common(sp)
    sp.add_argument("--input", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--seq-id")
    sp.add_argument("--image-size", type=int, nargs=2, default=(1920, 1080), metavar=("W", "H"))
    sp.add_argument("--all-frames", action="store_true", help="keep frames without annotations")
    sp.set_defaults(func=cmd_convert)

    sp = sub.add_parser("rerun", help="repeat a run from its manifest and compare outputs")
    sp.add_argument("manifest")
    sp.add_argument("--out-dir", help="write outputs here instead of the original paths")
    sp.add_argument("--check", action="store_true", help="exit 1 when outputs differ")
    sp.set_defaults(func=cmd_rerun)
    return p


def _apply_config_file(parser, argv):
    """Re-parse with ``--config`` values as defaults, so explicit flags win."""
    args = parser.parse_args(argv)
    path = getattr(args, "config", None)
    if not path or args.command == "synth":
        return args
    try:
        overrides = json.loads(Path(path).read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise InvalidConfig(f"cannot read --config {path}: {exc}") from None
    if not isinstance(overrides, dict):
        raise InvalidConfig(f"--config {path} must hold a JSON object")
    sub = parser._subparsers._group_actions[0].choices[args.command]
    known = {a.dest for a in sub._actions}
    norm = {k.replace("-", "_"): v for k, v in overrides.items()}
    unknown = sorted(set(norm) - known - {"config"})
    if unknown:
        raise InvalidConfig(f"--config {path}: unknown keys {unknown}")
    sub.set_defaults(**norm)
    return parser.parse_args(argv)


def _report(exc):
    print(f"posetracker: error: {type(exc).__name__}: {exc}", file=sys.stderr)


def main(argv=None):
    parser = build_parser()
    try:
        args = _apply_config_file(parser, argv)
    except SystemExit as exc:  # argparse usage errors
        return int(exc.code or 0) and EXIT_CONFIG
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        _absolutize(args)
        return args.func(args)
    except ConfigError as exc:
        _report(exc)
        return EXIT_CONFIG
    except (InputError, ProviderError) as exc:
        _report(exc)
        return EXIT_INPUT
    except OSError as exc:
        _report(exc)
        return EXIT_INPUT
    except PoseTrackerError as exc:
        _report(exc)
        return EXIT_INPUT
    except Exception as exc:  # noqa: BLE001 - last-resort guard
        log.debug("internal error", exc_info=True)
        print(f"posetracker: internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL


if __name__ == "__main__":
    sys.exit(main())
