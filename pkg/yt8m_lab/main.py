"""Command-line interface for the lab."""

from typing import Any, Dict, List, Optional
import argparse
from pathlib import Path
import json
import logging
import os
import sys
import tomllib

import numpy as np

from yt8m_lab.config import load_config_file, settings
from yt8m_lab.errors import DataIOError, InvalidConfigError, LabError, UnwritablePathError, UsageError
from yt8m_lab.models.datamodel import Vocabulary
from yt8m_lab.models.specs import (
    EnsembleSpec,
    OptimizerConfig,
    RegConfig,
    SyntheticConfig,
    TrainConfig,
    parse_architecture,
    parse_config,
)
from yt8m_lab.nn.checkpoint import load_checkpoint, save_checkpoint
from yt8m_lab.services import bench, ensemble, ingest, metrics, modelzoo, submission, training

logger = logging.getLogger(__name__)


class LabArgumentParser(argparse.ArgumentParser):
    """ArgumentParser that raises UsageError instead of exiting."""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _float(text: str) -> float:
    # accepts 5E-4 as well as 0.0005
    try:
        return float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a number: {text!r}")


def _sizes(text: str) -> List[int]:
    try:
        return [int(part) for part in text.split(",") if part]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def _common() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=None, help="experiment seed")
    common.add_argument("--float32", action="store_true", default=None, help="32-bit training math")
    common.add_argument("--threads", type=int, default=None, help="worker pool size for parse stages")
    common.add_argument("--quiet", action="store_true", default=None, help="warnings only, no progress bars")
    common.add_argument("--config", default=None, help="TOML experiment file")
    return common


def _geometry(p: argparse.ArgumentParser) -> None:
    p.add_argument("--classes", type=int, default=None, help="vocabulary size")
    p.add_argument("--rgb-dim", type=int, default=None)
    p.add_argument("--audio-dim", type=int, default=None)


def _training_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--lr", type=_float, default=None, help="base learning rate")
    p.add_argument("--optimizer", choices=["adam", "sgd"], default=None)
    p.add_argument("--batch", type=int, default=None)
    p.add_argument("--steps", type=int, default=None)
    p.add_argument("--eval-every", type=int, default=None)
    p.add_argument("--include-validation", action="store_true", default=None)
    p.add_argument("--prefetch", type=int, default=None, help="batches buffered by a producer thread")
    p.add_argument("--data", default=None)
    p.add_argument("--val", default=None)
    p.add_argument("--report", default=None, help="write the training curve as CSV")


def build_parser() -> LabArgumentParser:
    common = _common()
    parser = LabArgumentParser(prog="yt8m-lab", description="Video-level multi-label classification lab")
    sub = parser.add_subparsers(dest="command", parser_class=LabArgumentParser)
    sub.required = True

    p = sub.add_parser("gen-data", parents=[common], help="generate a synthetic dataset")
    p.add_argument("--videos", type=int, default=None)
    _geometry(p)
    p.add_argument("--sparsity", type=_float, default=None, help="hidden teacher weight density")
    p.add_argument("--noise", type=_float, default=None, help="feature noise std")
    p.add_argument("--split", type=int, default=None, help="sample stream under the same teacher")
    p.add_argument("--format", choices=["native", "tfrecord"], default=None)
    p.add_argument("--out", default=None)

    p = sub.add_parser("train", parents=[common], help="train one architecture")
    p.add_argument("--model", default=None)
    p.add_argument("--mixtures", type=int, default=None)
    p.add_argument("--hidden", type=_sizes, default=None, help="comma-separated hidden sizes")
    reg = p.add_mutually_exclusive_group()
    reg.add_argument("--l1", type=_float, default=None)
    reg.add_argument("--l2", type=_float, default=None)
    p.add_argument("--keep-prob", type=_float, default=None)
    p.add_argument("--output", choices=["sigmoid", "softmax"], default=None)
    p.add_argument("--features", choices=["all", "rgb", "audio"], default=None)
    p.add_argument("--no-skips", action="store_true", default=None)
    p.add_argument("--checkpoint", default=None)
    _training_flags(p)
    _geometry(p)

    p = sub.add_parser("infer", parents=[common], help="write a submission from a checkpoint")
    p.add_argument("--checkpoint", default=None)
    p.add_argument("--data", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--out", default=None)
    p.add_argument("--round", type=int, default=None, help="fractional digits of written confidences")
    _geometry(p)

    p = sub.add_parser("eval", parents=[common], help="score a submission with GAP@k")
    p.add_argument("--pred", default=None)
    p.add_argument("--truth", default=None)
    p.add_argument("--k", type=int, default=None)
    _geometry(p)

    p = sub.add_parser("ensemble", help="ensemble models or submission files")
    ens = p.add_subparsers(dest="method", parser_class=LabArgumentParser)
    ens.required = True
    files = ens.add_parser("avg-files", parents=[common], help="average submission files")
    files.add_argument("--k", type=int, default=None)
    files.add_argument("-o", "--out", default=None)
    files.add_argument("--round", type=int, default=None)
    files.add_argument("--classes", type=int, default=None)
    files.add_argument("files", nargs="+")
    for method in ("avg-models", "stack"):
        m = ens.add_parser(method, parents=[common], help=f"{method} ensemble trained end to end")
        m.add_argument("--members", default=None, help="JSON file with an ensemble spec or member list")
        m.add_argument("--predict", default=None, help="dataset to write predictions for")
        m.add_argument("--out", default=None)
        m.add_argument("--k", type=int, default=None)
        m.add_argument("--checkpoint-dir", default=None)
        if method == "stack":
            m.add_argument("--freeze-members", action="store_true", default=None)
        else:
            m.add_argument("--checkpoints", nargs="+", default=None, help="average trained checkpoints instead")
        _training_flags(m)
        _geometry(m)

    p = sub.add_parser("bench", parents=[common], help="time parse + GAP on a synthetic submission")
    p.add_argument("--rows", type=int, nargs="+", default=None)
    p.add_argument("--k", type=int, default=None)
    p.add_argument("--report", default=None)
    return parser


class RunConfig:
    """Resolved options: flag, then config file, then settings, then default."""

    def __init__(self, args: argparse.Namespace, file_values: Dict[str, Any]):
        self.args = args
        self.file_values = file_values

    def get(self, name: str, default: Any = None) -> Any:
        value = getattr(self.args, name, None)
        if value is not None:
            return value
        if name in self.file_values:
            return self.file_values[name]
        return default

    def require(self, name: str) -> Any:
        value = self.get(name)
        if value is None:
            raise UsageError(f"--{name.replace('_', '-')} is required")
        return value

    def check_writable(self, name: str, directory: bool = False) -> None:
        """
        Fail fast if the output named by option ``name`` could not be written.

        A file needs an existing, writable parent directory. A directory
        option may be created later, so its nearest existing ancestor must be
        a writable directory.
        """
        value = self.get(name)
        if not value:
            return
        target = Path(value)
        if directory:
            if target.exists() and not target.is_dir():
                raise UnwritablePathError(value, "not a directory")
            ancestor = target
            while not ancestor.exists() and ancestor != ancestor.parent:
                ancestor = ancestor.parent
        else:
            if target.is_dir():
                raise UnwritablePathError(value, "is a directory")
            ancestor = target.parent
            if not ancestor.is_dir():
                raise UnwritablePathError(value, f"directory {ancestor} does not exist")
        if not ancestor.is_dir() or not os.access(ancestor, os.W_OK | os.X_OK):
            raise UnwritablePathError(value, f"{ancestor} is not a writable directory")

    @property
    def seed(self) -> int:
        return int(self.get("seed", settings.seed))

    @property
    def dtype(self):
        return np.float32 if self.get("float32", settings.float32) else np.float64

    @property
    def threads(self) -> int:
        return int(self.get("threads", settings.threads))

    @property
    def k(self) -> int:
        return int(self.get("k", settings.top_k))

    @property
    def quiet(self) -> bool:
        return bool(self.get("quiet", False))

    def vocab(self) -> Vocabulary:
        return Vocabulary(int(self.get("classes", settings.num_classes)))

    def dims(self):
        return int(self.get("rgb_dim", settings.rgb_dim)), int(self.get("audio_dim", settings.audio_dim))

    def load(self, name: str) -> ingest.DatasetHandle:
        rgb_dim, audio_dim = self.dims()
        return ingest.load_dataset(self.require(name), self.vocab(), rgb_dim, audio_dim)

    def train_config(self, checkpoint_path: Optional[str] = None) -> TrainConfig:
        optimizer = {
            key: value for key, value in {
                "kind": self.get("optimizer"),
                "base_learning_rate": self.get("lr"),
                "batch_size": self.get("batch"),
                "max_steps": self.get("steps"),
            }.items() if value is not None
        }
        data = {
            "optimizer": parse_config(OptimizerConfig, optimizer),
            "include_validation": bool(self.get("include_validation", False)),
            "shuffle_seed": self.seed,
            "checkpoint_path": checkpoint_path,
            "k": self.k,
            "prefetch": int(self.get("prefetch", 0)),
        }
        if self.get("eval_every") is not None:
            data["eval_every"] = self.get("eval_every")
        return parse_config(TrainConfig, data)


# subcommands

def cmd_gen_data(rc: RunConfig) -> int:
    rgb_dim, audio_dim = rc.dims()
    fields = {
        "num_videos": rc.get("videos"),
        "num_classes": rc.get("classes"),
        "rgb_dim": rgb_dim,
        "audio_dim": audio_dim,
        "seed": rc.seed,
        "teacher_sparsity": rc.get("sparsity"),
        "noise_std": rc.get("noise"),
        "split": rc.get("split"),
    }
    cfg = parse_config(SyntheticConfig, {k: v for k, v in fields.items() if v is not None})
    dataset = ingest.generate_synthetic(cfg)
    count = ingest.write_dataset(dataset, rc.require("out"), rc.get("format", "native"))
    print(f"RESULT videos={count}")
    return 0


def _architecture(rc: RunConfig):
    fields: Dict[str, Any] = {"name": rc.require("model")}
    if rc.get("mixtures") is not None:
        fields["num_mixtures"] = rc.get("mixtures")
    if rc.get("hidden") is not None:
        fields["hidden_sizes"] = rc.get("hidden")
    if rc.get("keep_prob") is not None:
        fields["keep_prob"] = rc.get("keep_prob")
    if rc.get("output") is not None:
        fields["output_activation"] = rc.get("output")
    if rc.get("features") is not None:
        fields["features"] = rc.get("features")
    if rc.get("no_skips"):
        fields["skip_connections"] = False
    if rc.get("l1") is not None:
        fields["reg"] = RegConfig(norm="l1", penalty=rc.get("l1"))
    elif rc.get("l2") is not None:
        fields["reg"] = RegConfig(norm="l2", penalty=rc.get("l2"))
    return parse_architecture(fields)


def _log_report(report: training.TrainReport, path: Optional[str]) -> None:
    if path:
        report.to_csv(path)
        logger.info(f"Wrote training report to {path}")
    if report.loss_curve:
        step, loss = report.loss_curve[-1]
        gap = report.train_gap_curve[-1][1] if report.train_gap_curve else float("nan")
        print(f"RESULT steps={report.steps_run} loss={loss:.6f} gap={gap:.6f}")


def cmd_train(rc: RunConfig) -> int:
    spec = _architecture(rc)
    checkpoint = rc.require("checkpoint")
    dataset = rc.load("data")
    val = rc.load("val") if rc.get("val") else None
    input_dim = ingest.selected_dim(spec.features, dataset.rgb_dim, dataset.audio_dim)
    graph = modelzoo.build(spec, input_dim, dataset.vocab.num_classes, rc.seed, rc.dtype)
    _, report = training.train(graph, dataset, val, rc.train_config(checkpoint), quiet=rc.quiet)
    _log_report(report, rc.get("report"))
    return 0


def _predict(model, dataset: ingest.DatasetHandle, rc: RunConfig, out: str) -> int:
    ids, X, _ = dataset.to_arrays(training.model_features(model), dtype=rc.dtype)
    scores = training.predict_scores(model, X)
    preds = metrics.predictions_from_scores(ids, scores, rc.k)
    return submission.write_submission(preds, out, round_digits=rc.get("round"))


def cmd_infer(rc: RunConfig) -> int:
    graph = load_checkpoint(rc.require("checkpoint"), lambda meta: modelzoo.build_from_metadata(meta, rc.dtype))
    rgb_dim, audio_dim = rc.dims()
    dataset = ingest.load_dataset(rc.require("data"), Vocabulary(graph.num_classes), rgb_dim, audio_dim)
    count = _predict(graph, dataset, rc, rc.require("out"))
    print(f"RESULT rows={count}")
    return 0


def _format_gap(gap: float) -> str:
    return submission.format_confidence(gap)


def cmd_eval(rc: RunConfig) -> int:
    truth_set = rc.load("truth")
    truth = truth_set.ground_truth()
    preds = submission.parse_submission(rc.require("pred"), truth_set.vocab, threads=rc.threads)
    report = metrics.gap_at_k(preds, truth, rc.k)
    print(f"RESULT gap={_format_gap(report.gap)} n={report.num_predictions_pooled}")
    return 0


def cmd_avg_files(rc: RunConfig) -> int:
    paths = rc.get("files") or []
    if len(paths) < 2:
        raise UsageError("ensemble avg-files needs at least two submission files")
    vocab = Vocabulary(rc.get("classes")) if rc.get("classes") else None
    count = ensemble.average_files(
        paths, rc.k, rc.require("out"), threads=rc.threads, vocab=vocab, round_digits=rc.get("round"),
    )
    print(f"RESULT rows={count}")
    return 0


def _ensemble_spec(rc: RunConfig, kind: str) -> EnsembleSpec:
    path = rc.require("members")
    try:
        with open(path, encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as e:
        raise DataIOError(f"cannot read {path}: {e}") from e
    except json.JSONDecodeError as e:
        raise InvalidConfigError(f"{path}: {e}") from e
    data = raw if isinstance(raw, dict) else {"members": raw}
    data = {**data, "kind": kind, "k": rc.k}
    if kind == "stack_models" and rc.get("freeze_members"):
        data["freeze_members"] = True
    return parse_config(EnsembleSpec, data)


def _save_members(model, directory: Optional[str]) -> None:
    if not directory:
        return
    root = Path(directory)
    try:
        root.mkdir(parents=True, exist_ok=True)
    except OSError as e:
        raise DataIOError(f"cannot create {root}: {e}") from e
    for name, graph in ensemble.ensemble_graphs(model):
        save_checkpoint(graph, root / f"{name}.ytck")


def cmd_model_ensemble(rc: RunConfig, kind: str) -> int:
    if kind == "average_models" and rc.get("checkpoints"):
        graphs = [
            load_checkpoint(path, lambda meta: modelzoo.build_from_metadata(meta, rc.dtype))
            for path in rc.get("checkpoints")
        ]
        model = ensemble.AverageEnsemble(graphs)
        predict_on = rc.get("predict") or rc.require("data")
        rgb_dim, audio_dim = rc.dims()
        dataset = ingest.load_dataset(predict_on, Vocabulary(graphs[0].num_classes), rgb_dim, audio_dim)
        count = _predict(model, dataset, rc, rc.require("out"))
        print(f"RESULT rows={count}")
        return 0

    spec = _ensemble_spec(rc, kind)
    dataset = rc.load("data")
    val = rc.load("val") if rc.get("val") else None
    features = spec.members[0].features
    input_dim = ingest.selected_dim(features, dataset.rgb_dim, dataset.audio_dim)
    model = ensemble.build_ensemble(spec, input_dim, dataset.vocab.num_classes, rc.seed, rc.dtype)
    logger.info(f"Training {kind} ensemble of {len(model.members)} members, {model.parameter_count()} parameters")
    _, report = training.train(model, dataset, val, rc.train_config(), quiet=rc.quiet)
    _log_report(report, rc.get("report"))
    _save_members(model, rc.get("checkpoint_dir"))

    if rc.get("out"):
        target = rc.load("predict") if rc.get("predict") else dataset
        count = _predict(model, target, rc, rc.get("out"))
        print(f"RESULT rows={count}")
    return 0


def cmd_bench(rc: RunConfig) -> int:
    results = []
    for rows in rc.get("rows", [1000]):
        result = bench.bench_eval(int(rows), rc.k, rc.seed, rc.threads)
        results.append(result)
        print(
            f"RESULT rows={result.rows} seconds={result.wall_time:.3f} "
            f"rows_per_s={result.rows_per_second:.0f} peak_bytes={result.peak_memory} threads={result.threads}"
        )
    if rc.get("report"):
        bench.write_bench_report(results, rc.get("report"))
    return 0


# output options of each command; checked before any data is read
OUTPUTS: Dict[str, List[str]] = {
    "gen-data": ["out"],
    "train": ["checkpoint", "report"],
    "infer": ["out"],
    "eval": [],
    "bench": ["report"],
    "avg-files": ["out"],
    "avg-models": ["out", "report"],
    "stack": ["out", "report"],
}
OUTPUT_DIRS: Dict[str, List[str]] = {"avg-models": ["checkpoint_dir"], "stack": ["checkpoint_dir"]}


def dispatch(rc: RunConfig) -> int:
    command = rc.args.command
    key = rc.args.method if command == "ensemble" else command
    for name in OUTPUTS.get(key, []):
        rc.check_writable(name)
    for name in OUTPUT_DIRS.get(key, []):
        rc.check_writable(name, directory=True)
    if command == "gen-data":
        return cmd_gen_data(rc)
    if command == "train":
        return cmd_train(rc)
    if command == "infer":
        return cmd_infer(rc)
    if command == "eval":
        return cmd_eval(rc)
    if command == "bench":
        return cmd_bench(rc)
    method = rc.args.method
    if method == "avg-files":
        return cmd_avg_files(rc)
    return cmd_model_ensemble(rc, "average_models" if method == "avg-models" else "stack_models")


def main(argv: Optional[List[str]] = None) -> int:
    """
    Run one subcommand.

    Returns:
        0 on success, 1 on validation or usage errors, 2 on I/O errors.
    """
    try:
        args = build_parser().parse_args(argv)
        section = args.command if args.command != "ensemble" else f"ensemble.{args.method}"
        try:
            file_values = load_config_file(args.config, section=section)
        except tomllib.TOMLDecodeError as e:
            raise InvalidConfigError(f"{args.config}: {e}") from e
        except OSError as e:
            raise DataIOError(f"cannot read config {args.config}: {e}") from e
        rc = RunConfig(args, file_values)

        # Configure logging
        level = logging.WARNING if rc.quiet else getattr(logging, str(settings.log_level).upper(), logging.INFO)
        logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")
        return dispatch(rc)
    except LabError as e:
        print(f"error [{e.module}]: {e}", file=sys.stderr)
        return e.exit_code
    except OSError as e:
        print(f"error [io]: {e}", file=sys.stderr)
        return 2
