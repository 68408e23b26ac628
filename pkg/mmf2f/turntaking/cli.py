# cli.py

"""
Command-line entry point.

    python -m mmf2f gen --out data.jsonl --seed 7
    python -m mmf2f train-uni --manifest data.jsonl --checkpoint uni.json --split train
    python -m mmf2f train-joint --manifest data.jsonl --init uni.json --checkpoint joint.json --split train
    python -m mmf2f ablate --manifest data.jsonl --checkpoint joint.json --split test --combos all
    python -m mmf2f predict --checkpoint joint.json < frames.jsonl

Values resolve as command-line flag, then environment variable (paths only,
prefix MMF2F_), then the --config file, then the built-in default.
Exit codes: 0 ok, 2 usage error, 3 data or configuration error, 4 numeric failure.
"""

import argparse
import json
import logging
import os
import sys
from typing import Any, Dict, List, Optional, Sequence, TextIO, Tuple

from .bundle import ModelBundle, init_bundle, reinit_fusion
from .checkpoint import checkpoint_id, load_checkpoint, save_checkpoint
from .config import ModelConfig, TrainConfig, load_config_file
from .dataset import (DEFAULT_BACKCHANNEL_VOCAB, Manifest, Sample, attach_precomputed, build_dataset,
                      dataset_summary, label_words, read_manifest, split_conversations,
                      vocabulary_from, write_manifest)
from .encoders import Vocabulary, read_precomputed
from .evaluation import evaluate, evaluate_oracle, parse_combos, run_ablation
from .logger import EventLogger, log_checkpoint_saved, log_evaluation
from .models import (MODALITIES, ConfigError, DataError, Modality, ModalityMask, NumericError,
                     TurnTakingError)
from .reporting import format_markdown, format_table, write_reports
from .streaming import StreamingPredictor, read_stream
from .synthetic import SyntheticConfig, gen_synthetic, write_hidden_record
from .training import train_bundle_unimodal, train_joint

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERIC = 4

ENV_PREFIX = "MMF2F_"
PATH_OPTIONS = ("manifest", "checkpoint", "report", "out", "features", "metrics", "markdown")

# Built-in defaults for options that the config file may also set.
DEFAULTS: Dict[str, Any] = {
    "seed": 0,
    "preset": "synthetic",
    "epochs": None,
    "lr": None,
    "p": 0.1,
    "rank": None,
    "n": 16,
    "batch_size": 1,
    "n_words": 10_000,
    "cue_prob": 0.6,
    "sigma": 1.0,
    "tau_turn": None,
    "tau_bc": None,
    "test_fraction": 0.2,
    "split": "all",
    "split_seed": 0,
}


class UsageError(Exception):
    """Command line does not parse."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="Flat JSON file of option overrides")
    p.add_argument("--seed", type=int, help="Seed for every random choice")
    p.add_argument("-v", "--verbose", action="store_true", help="Debug logging on stderr")
    p.add_argument("-q", "--quiet", action="store_true", help="Warnings and errors only")


def _add_data(p: argparse.ArgumentParser) -> None:
    p.add_argument("--manifest", help="Labeled manifest (JSON Lines)")
    p.add_argument("--split", choices=("all", "train", "test"), help="Conversations to use")
    p.add_argument("--test-fraction", type=float, dest="test_fraction",
                   help="Share of conversations held out as the test split")
    p.add_argument("--split-seed", type=int, dest="split_seed", help="Seed of the train/test split")
    p.add_argument("--features", help="Precomputed feature records replacing raw inputs")


def _add_training(p: argparse.ArgumentParser) -> None:
    p.add_argument("--checkpoint", help="Checkpoint to write")
    p.add_argument("--init", help="Checkpoint to start from")
    p.add_argument("--preset", choices=("synthetic", "full"), help="Model and optimiser sizes")
    p.add_argument("--epochs", type=int)
    p.add_argument("--lr", type=float, help="Adam learning rate")
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--n", type=int, help="Video frames per input")
    p.add_argument("--metrics", help="Per-epoch metrics log (JSON Lines)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="mmf2f", description="Multi-modal turn-taking and backchannel prediction")
    sub = parser.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    p = sub.add_parser("gen", help="Generate a synthetic labeled manifest and its hidden record")
    _add_common(p)
    p.add_argument("--out", help="Manifest to write")
    p.add_argument("--hidden", help="Hidden record to write (default <out>.hidden.jsonl)")
    p.add_argument("--n-words", type=int, dest="n_words")
    p.add_argument("--cue-prob", type=float, dest="cue_prob")
    p.add_argument("--sigma", type=float)
    p.add_argument("--n", type=int, help="Video frames per input")

    p = sub.add_parser("label", help="Apply the KEEP/TURN/BACKCHANNEL labeler to a manifest")
    _add_common(p)
    p.add_argument("--manifest", help="Manifest to label")
    p.add_argument("--out", help="Labeled manifest to write")
    p.add_argument("--bc-vocab", dest="bc_vocab",
                   help="Backchannel phrases, one per line (default: the vocabulary recorded in the manifest)")

    p = sub.add_parser("stats", help="Print dataset counts")
    _add_common(p)
    p.add_argument("--manifest")

    p = sub.add_parser("train-uni", help="Stage 1: train uni-modal encoders")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--modalities", default="TAV", help="Encoders to train, e.g. TAV or T")

    p = sub.add_parser("train-joint", help="Stage 2: joint training with random modality dropout")
    _add_common(p)
    _add_data(p)
    _add_training(p)
    p.add_argument("--modalities", default="TAV", help="Modalities the fusion model trains on")
    p.add_argument("--p", type=float, help="Random modality dropout probability")
    p.add_argument("--rank", type=int, help="Fusion rank")
    p.add_argument("--from-scratch", action="store_true", dest="from_scratch",
                   help="Allow untrained encoders")
    p.add_argument("--freeze-encoders", action="store_true", dest="freeze_encoders")
    p.add_argument("--freeze-factors", action="store_true", dest="freeze_factors")

    for name, help_text in (("eval", "Evaluate one modality combination"),
                            ("ablate", "Evaluate several modality combinations from one checkpoint")):
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        _add_data(p)
        p.add_argument("--checkpoint", help="Checkpoint to evaluate")
        p.add_argument("--report", help="Report records (JSON Lines); a .txt table is written beside it")
        p.add_argument("--markdown", help="Markdown version of the result table")
        p.add_argument("--metrics", help="Evaluation event log (JSON Lines)")
        p.add_argument("--oracle", action="store_true",
                       help="Add the Bayes-oracle row (synthetic manifests only)")
        p.add_argument("--cue-prob", type=float, dest="cue_prob")
        p.add_argument("--sigma", type=float)
        if name == "eval":
            p.add_argument("--modalities", default="TAV")
        else:
            p.add_argument("--combos", default="all", help="'all' or comma-separated codes such as T,TA,TAV")

    p = sub.add_parser("predict", help="Streaming prediction: word frames on stdin, one record per frame on stdout")
    _add_common(p)
    p.add_argument("--checkpoint")
    p.add_argument("--input", help="Read frames from this file instead of stdin")
    p.add_argument("--tau-turn", type=float, dest="tau_turn")
    p.add_argument("--tau-bc", type=float, dest="tau_bc")
    p.add_argument("--auto-reset", action="store_true", dest="auto_reset",
                   help="Start a new utterance after every TURN decision")
    return parser


class Options:
    """Resolved option values: flag, then environment (paths), then config file, then default."""

    def __init__(self, args: argparse.Namespace, env: Optional[Dict[str, str]] = None):
        self.args = args
        self.env = os.environ if env is None else env
        config_path = args.config or self.env.get(f"{ENV_PREFIX}CONFIG")
        if config_path and not os.path.exists(config_path):
            raise FileNotFoundError(f"Config file not found: {config_path}")
        self.file = load_config_file(config_path)

    def get(self, name: str, default: Any = None) -> Any:
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in PATH_OPTIONS:
            env_value = self.env.get(f"{ENV_PREFIX}{name.upper()}")
            if env_value:
                return env_value
        if name in self.file:
            return self.file[name]
        return DEFAULTS.get(name, default)

    def require(self, name: str) -> str:
        value = self.get(name)
        if not value:
            raise UsageError(f"--{name} is required (or set {ENV_PREFIX}{name.upper()})")
        return value


def _check_input(path: Optional[str], what: str) -> None:
    if path and not os.path.isfile(path):
        raise FileNotFoundError(f"{what} not found: {path}")


def _check_output(path: Optional[str], what: str) -> None:
    if not path:
        return
    folder = os.path.dirname(os.path.abspath(path))
    if not os.path.isdir(folder):
        raise FileNotFoundError(f"Directory for {what} does not exist: {folder}")


def _configure_logging(args: argparse.Namespace) -> None:
    level = logging.INFO
    if getattr(args, "verbose", False):
        level = logging.DEBUG
    elif getattr(args, "quiet", False):
        level = logging.WARNING
    root = logging.getLogger()
    for handler in list(root.handlers):
        root.removeHandler(handler)
    handler = logging.StreamHandler(sys.stderr)
    handler.setFormatter(logging.Formatter("%(levelname)s %(name)s: %(message)s"))
    root.addHandler(handler)
    root.setLevel(level)


# Data loading

def _load_split(opts: Options, manifest_path: str) -> Tuple[Manifest, List]:
    manifest = read_manifest(manifest_path)
    split = opts.get("split")
    if split == "all":
        return manifest, manifest.conversations
    train, test = split_conversations(manifest.conversations, float(opts.get("test_fraction")),
                                      int(opts.get("split_seed")))
    return manifest, train if split == "train" else test


def _samples(opts: Options, conversations, n: int, vocabulary: Vocabulary,
             feature_dim: int) -> List[Sample]:
    samples = build_dataset(conversations, n, vocabulary)
    features = opts.get("features")
    if features:
        samples = attach_precomputed(samples, read_precomputed(features, feature_dim))
    if not samples:
        raise DataError("The selected split contains no word frames")
    return samples


def _precomputed_modalities(opts: Options, feature_dim: int) -> List[Modality]:
    features = opts.get("features")
    if not features:
        return []
    index = read_precomputed(features, feature_dim)
    return [m for m in MODALITIES if any(key[2] is m for key in index)]


def _model_config(opts: Options, manifest: Manifest, vocabulary: Vocabulary) -> ModelConfig:
    header = manifest.header
    n = int(opts.args.n if opts.args.n is not None else opts.file.get("n", header.n_video_frames))
    if opts.get("preset") == "full":
        config = ModelConfig.full(vocabulary.size, header.audio_dim, header.video_dim, n_video_frames=n)
    else:
        config = ModelConfig.synthetic(vocabulary.size, header.audio_dim, header.video_dim, n_video_frames=n)
    rank = opts.get("rank")
    return config.with_rank(int(rank)) if rank else config


def _train_config(opts: Options, **extra) -> TrainConfig:
    base = TrainConfig() if opts.get("preset") == "full" else TrainConfig.synthetic()
    values = base.to_dict()
    values["seed"] = int(opts.get("seed"))
    values["batch_size"] = int(opts.get("batch_size"))
    if opts.get("epochs") is not None:
        values["epochs"] = int(opts.get("epochs"))
    if opts.get("lr") is not None:
        values["learning_rate"] = float(opts.get("lr"))
    values.update(extra)
    return TrainConfig.from_dict(values)


def _save(bundle: ModelBundle, path: str, cfg: TrainConfig, events: EventLogger, stage: str) -> None:
    save_checkpoint(bundle, path, cfg)
    log_checkpoint_saved(events, os.path.basename(path), stage)


# Subcommands

def cmd_gen(opts: Options, out: TextIO) -> int:
    path = opts.require("out")
    hidden = opts.args.hidden or f"{os.path.splitext(path)[0]}.hidden.jsonl"
    _check_output(path, "manifest")
    cfg = SyntheticConfig(seed=int(opts.get("seed")), n_words=int(opts.get("n_words")),
                          cue_probability=float(opts.get("cue_prob")), noise_sigma=float(opts.get("sigma")),
                          n_video_frames=int(opts.get("n")), video_frames_per_word=int(opts.get("n")))
    manifest, records = gen_synthetic(cfg)
    write_manifest(path, manifest.conversations, manifest.header)
    write_hidden_record(hidden, records)
    out.write(json.dumps({"manifest": path, "hidden": hidden, "word_frames": len(records),
                          "conversations": len(manifest.conversations)}) + "\n")
    return EXIT_OK


def cmd_label(opts: Options, out: TextIO) -> int:
    source = opts.require("manifest")
    target = opts.require("out")
    _check_input(source, "Manifest")
    _check_input(opts.args.bc_vocab, "Backchannel vocabulary")
    _check_output(target, "labeled manifest")
    if os.path.abspath(source) == os.path.abspath(target):
        raise ConfigError("Refusing to overwrite the input manifest; choose another --out")
    manifest = read_manifest(source)
    vocab = manifest.header.bc_vocab or DEFAULT_BACKCHANNEL_VOCAB
    if opts.args.bc_vocab:
        with open(opts.args.bc_vocab, "r", encoding="utf-8") as f:
            vocab = [line.strip() for line in f if line.strip()]
    labeled = [label_words(conv, vocab) for conv in manifest.conversations]
    write_manifest(target, labeled, manifest.header)
    out.write(dataset_summary(labeled).to_string() + "\n")
    return EXIT_OK


def cmd_stats(opts: Options, out: TextIO) -> int:
    path = opts.require("manifest")
    _check_input(path, "Manifest")
    out.write(dataset_summary(read_manifest(path).conversations).to_string() + "\n")
    return EXIT_OK


def cmd_train_uni(opts: Options, out: TextIO) -> int:
    manifest_path = opts.require("manifest")
    target = opts.require("checkpoint")
    init = opts.args.init
    metrics = opts.get("metrics")
    for path, what in ((manifest_path, "Manifest"), (init, "Initial checkpoint"),
                       (opts.get("features"), "Feature file")):
        _check_input(path, what)
    _check_output(target, "checkpoint")
    _check_output(metrics, "metrics log")

    manifest, conversations = _load_split(opts, manifest_path)
    if init:
        bundle = load_checkpoint(init)
    else:
        vocabulary = vocabulary_from(conversations)
        config = _model_config(opts, manifest, vocabulary)
        bundle = init_bundle(config, vocabulary, int(opts.get("seed")),
                             _precomputed_modalities(opts, config.feature_dim))
    cfg = _train_config(opts)
    samples = _samples(opts, conversations, bundle.config.n_video_frames, bundle.vocabulary,
                       bundle.config.feature_dim)
    events = EventLogger(metrics)
    for m in ModalityMask.parse(opts.args.modalities):
        bundle = train_bundle_unimodal(samples, bundle, m, cfg, events)
    bundle.provenance["manifest"] = os.path.basename(manifest_path)
    _save(bundle, target, cfg, events, "unimodal")
    events.save()
    out.write(json.dumps({"checkpoint": target, "stages": bundle.stages}, sort_keys=True) + "\n")
    return EXIT_OK


def cmd_train_joint(opts: Options, out: TextIO) -> int:
    manifest_path = opts.require("manifest")
    target = opts.require("checkpoint")
    init = opts.args.init
    metrics = opts.get("metrics")
    for path, what in ((manifest_path, "Manifest"), (init, "Initial checkpoint"),
                       (opts.get("features"), "Feature file")):
        _check_input(path, what)
    _check_output(target, "checkpoint")
    _check_output(metrics, "metrics log")
    if not init and not opts.args.from_scratch:
        raise ConfigError("train-joint needs --init with stage-1 encoders, or --from-scratch")

    manifest, conversations = _load_split(opts, manifest_path)
    seed = int(opts.get("seed"))
    if init:
        bundle = load_checkpoint(init)
    else:
        vocabulary = vocabulary_from(conversations)
        config = _model_config(opts, manifest, vocabulary)
        bundle = init_bundle(config, vocabulary, seed, _precomputed_modalities(opts, config.feature_dim))
    rank = opts.get("rank")
    bundle = reinit_fusion(bundle, seed, int(rank) if rank else None)
    cfg = _train_config(opts, dropout_p=float(opts.get("p")),
                        modalities=opts.args.modalities,
                        train_encoders=not opts.args.freeze_encoders,
                        train_factors=not opts.args.freeze_factors,
                        from_scratch=bool(opts.args.from_scratch))
    samples = _samples(opts, conversations, bundle.config.n_video_frames, bundle.vocabulary,
                       bundle.config.feature_dim)
    events = EventLogger(metrics)
    result = train_joint(samples, bundle, cfg, events)
    trained = result.bundle
    trained.provenance["manifest"] = os.path.basename(manifest_path)
    _save(trained, target, cfg, events, "joint")
    events.save()
    out.write(json.dumps({"checkpoint": target, "mask_counts": result.mask_counts,
                          "final_loss": result.loss_trace[-1] if result.loss_trace else None},
                         sort_keys=True) + "\n")
    return EXIT_OK


def _oracle_config(opts: Options, manifest: Manifest) -> SyntheticConfig:
    header = manifest.header
    return SyntheticConfig(cue_probability=float(opts.get("cue_prob")), noise_sigma=float(opts.get("sigma")),
                           audio_dim=header.audio_dim, video_dim=header.video_dim,
                           n_video_frames=header.n_video_frames, audio_frame_rate=header.audio_frame_rate)


def _evaluate_command(opts: Options, out: TextIO, combos: Sequence[ModalityMask]) -> int:
    manifest_path = opts.require("manifest")
    ckpt_path = opts.require("checkpoint")
    report = opts.get("report")
    markdown = opts.get("markdown")
    metrics = opts.get("metrics")
    for path, what in ((manifest_path, "Manifest"), (ckpt_path, "Checkpoint"),
                       (opts.get("features"), "Feature file")):
        _check_input(path, what)
    _check_output(report, "report")
    _check_output(markdown, "markdown table")
    _check_output(metrics, "metrics log")

    bundle = load_checkpoint(ckpt_path)
    manifest, conversations = _load_split(opts, manifest_path)
    samples = _samples(opts, conversations, bundle.config.n_video_frames, bundle.vocabulary,
                       bundle.config.feature_dim)
    name = checkpoint_id(ckpt_path)
    reports = run_ablation(bundle, samples, combos, name) if len(combos) > 1 \
        else [evaluate(bundle, samples, combos[0], name)]
    if opts.args.oracle:
        cfg = _oracle_config(opts, manifest)
        reports.extend(evaluate_oracle(samples, mask, cfg) for mask in combos)
    events = EventLogger(metrics)
    for r in reports:
        log_evaluation(events, r.to_record())
    out.write(format_table(reports) + "\n")
    if report:
        write_reports(report, reports)
    if markdown:
        with open(markdown, "w", encoding="utf-8") as f:
            f.write(format_markdown(reports))
    events.save()
    return EXIT_OK


def cmd_eval(opts: Options, out: TextIO) -> int:
    return _evaluate_command(opts, out, [ModalityMask.parse(opts.args.modalities)])


def cmd_ablate(opts: Options, out: TextIO) -> int:
    return _evaluate_command(opts, out, parse_combos(opts.args.combos))


def cmd_predict(opts: Options, out: TextIO, stdin: TextIO) -> int:
    ckpt_path = opts.require("checkpoint")
    _check_input(ckpt_path, "Checkpoint")
    _check_input(opts.args.input, "Frame input")
    tau_turn = opts.get("tau_turn")
    tau_bc = opts.get("tau_bc")
    predictor = StreamingPredictor(load_checkpoint(ckpt_path),
                                   None if tau_turn is None else float(tau_turn),
                                   None if tau_bc is None else float(tau_bc),
                                   opts.args.auto_reset)
    handle = open(opts.args.input, "r", encoding="utf-8") if opts.args.input else stdin
    try:
        for record in predictor.run(read_stream(handle)):
            out.write(json.dumps(record, sort_keys=True) + "\n")
            out.flush()
    finally:
        if handle is not stdin:
            handle.close()
    return EXIT_OK


COMMANDS = {
    "gen": cmd_gen,
    "label": cmd_label,
    "stats": cmd_stats,
    "train-uni": cmd_train_uni,
    "train-joint": cmd_train_joint,
    "eval": cmd_eval,
    "ablate": cmd_ablate,
}


def _fail(err: TextIO, kind: str, message: str, code: int) -> int:
    err.write(json.dumps({"error": kind, "message": message}) + "\n")
    return code


def run_command(argv: Sequence[str], stdin: Optional[TextIO] = None, stdout: Optional[TextIO] = None,
                stderr: Optional[TextIO] = None, env: Optional[Dict[str, str]] = None) -> int:
    """
    Parse argv, run one subcommand and return its exit status.

    Failures write a single JSON line {"error", "message"} to stderr.
    """
    stdin = stdin or sys.stdin
    stdout = stdout or sys.stdout
    stderr = stderr or sys.stderr
    try:
        args = build_parser().parse_args(list(argv))
        _configure_logging(args)
        opts = Options(args, env)
        if args.command == "predict":
            return cmd_predict(opts, stdout, stdin)
        return COMMANDS[args.command](opts, stdout)
    except UsageError as e:
        return _fail(stderr, "usage", str(e), EXIT_USAGE)
    except FileNotFoundError as e:
        return _fail(stderr, "missing_path", str(e), EXIT_DATA)
    except NumericError as e:
        return _fail(stderr, "numeric", str(e), EXIT_NUMERIC)
    except DataError as e:
        return _fail(stderr, type(e).__name__, str(e), EXIT_DATA)
    except ConfigError as e:
        return _fail(stderr, "config", str(e), EXIT_DATA)
    except TurnTakingError as e:
        return _fail(stderr, type(e).__name__, str(e), EXIT_DATA)
    except SystemExit as e:
        # --help
        return EXIT_OK if not e.code else EXIT_USAGE


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
