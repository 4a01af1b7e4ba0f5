"""Command-line entry points wiring the pipeline end to end.

Subcommands: synth, synth-order, train, infer, ensemble, select-tube, eval,
gradcheck. Options can come from a key=value config file (``--config``);
explicit flags win over file values, file values win over defaults. Exit
codes: 0 success, 1 usage/configuration error, 2 data error, 3 numeric
failure.
"""

from __future__ import annotations

import argparse
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import storage
from .errors import (
    AugmentationError,
    ConfigError,
    EmptyInputError,
    FormatError,
    InvariantError,
    MomentGridError,
    NoDetectionsError,
    NumericsError,
    ShapeMismatchError,
    SubjectNotFoundError,
)
from .infer import decode_best_moment, ensemble_scores
from .metrics import evaluate, render_report, report_csv_rows
from .model import (
    ModelConfig,
    bce_loss,
    init_params,
    scaled_iou_targets,
    score_map,
    score_tensor,
)
from .nn import grad_check
from .spatial import (
    DEFAULT_PERSON_NOUNS,
    build_tube,
    clip_frame_spans,
    clip_segment_to_frames,
)
from .synthetic import synth_localization, synth_order_task
from .train import TrainConfig, train
from .types import MomentPrediction, Proposal


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _build_parser() -> _Parser:
    parser = _Parser(prog="momentgrid", description=__doc__)
    sub = parser.add_subparsers(dest="command")

    def common(p):
        p.add_argument("--config", default=None, help="key=value config file")
        p.add_argument("--seed", type=int, default=None)

    p = sub.add_parser("synth", help="generate a synthetic localization dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--clips", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--snr", type=float, default=None)
    p.add_argument("--frame-rate", type=float, default=None)
    p.add_argument("--split", default=None)

    p = sub.add_parser("synth-order", help="generate the order-discrimination dataset")
    common(p)
    p.add_argument("--out", required=True)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--clips", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--segment-len", type=int, default=None)
    p.add_argument("--split", default=None)

    p = sub.add_parser("train", help="train a grounding model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--loss-log", default=None)
    p.add_argument("--aggregator", choices=("maxpool", "bilstm"), default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--epochs", type=int, default=None)
    p.add_argument("--batch-size", type=int, default=None)
    p.add_argument("--lr", type=float, default=None)
    p.add_argument("--momentum", type=float, default=None)
    p.add_argument("--t-min", type=float, default=None)
    p.add_argument("--t-max", type=float, default=None)
    p.add_argument("--rca-prob", type=float, default=None)
    p.add_argument("--length-tol", type=float, default=None)
    p.add_argument("--frame-rate-tol", type=float, default=None)

    p = sub.add_parser("infer", help="decode best moments with one model")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("ensemble", help="decode with a mean over checkpoints")
    common(p)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--checkpoints", required=True,
                   help="comma-separated checkpoint paths")
    p.add_argument("--out", required=True)
    p.add_argument("--jobs", type=int, default=None)

    p = sub.add_parser("select-tube", help="build tubes from predictions + detections")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--split", default=None)
    p.add_argument("--detections", required=True)
    p.add_argument("--lexicon", default=None)
    p.add_argument("--frames-per-clip", type=int, default=None)
    p.add_argument("--out", required=True)

    p = sub.add_parser("eval", help="score predicted tubes against ground truth")
    common(p)
    p.add_argument("--pred", required=True)
    p.add_argument("--gt", required=True)
    p.add_argument("--csv", default=None)

    p = sub.add_parser("gradcheck", help="finite-difference check of the full model")
    common(p)
    p.add_argument("--n", type=int, default=None)
    p.add_argument("--dim", type=int, default=None)
    p.add_argument("--query-dim", type=int, default=None)
    p.add_argument("--channels", type=int, default=None)
    p.add_argument("--hidden-dim", type=int, default=None)
    p.add_argument("--aggregator", choices=("maxpool", "bilstm"), default=None)
    p.add_argument("--eps", type=float, default=None)
    p.add_argument("--tol", type=float, default=None)

    return parser


def _resolver(args):
    """Flag > config-file value > built-in default."""
    file_values = {}
    if getattr(args, "config", None):
        file_values = storage.read_config(args.config)

    def get(name, default, cast=None):
        flag = getattr(args, name.replace("-", "_"), None)
        if flag is not None:
            return flag
        if name in file_values:
            raw = file_values[name]
            if cast is None:
                return raw
            try:
                return cast(raw)
            except ValueError as exc:
                raise UsageError("config key %r: %s" % (name, exc)) from exc
        return default

    return get


def _cmd_synth(args) -> int:
    get = _resolver(args)
    manifest = synth_localization(
        n_samples=get("n", 100, int),
        n_clips=get("clips", 16, int),
        dim=get("dim", 16, int),
        snr=get("snr", 4.0, float),
        seed=get("seed", 0, int),
        frame_rate=get("frame-rate", 25.0, float),
        split=get("split", "train"),
    )
    storage.save_manifest(manifest, args.out)
    print("wrote %d samples to %s (split %s)"
          % (len(manifest.samples), args.out, manifest.split))
    return 0


def _cmd_synth_order(args) -> int:
    get = _resolver(args)
    manifest = synth_order_task(
        n_samples=get("n", 100, int),
        n_clips=get("clips", 16, int),
        dim=get("dim", 8, int),
        seed=get("seed", 0, int),
        segment_len=get("segment-len", 4, int),
        split=get("split", "train"),
    )
    storage.save_manifest(manifest, args.out)
    print("wrote %d samples (%d pairs) to %s"
          % (len(manifest.samples), len(manifest.samples) // 2, args.out))
    return 0


def _cmd_train(args) -> int:
    get = _resolver(args)
    split = get("split", "train")
    manifest = storage.load_manifest(args.data, split)
    samples = manifest.samples
    model_cfg = ModelConfig(
        aggregator=get("aggregator", "bilstm"),
        input_dim=samples[0].features.dim,
        query_dim=samples[0].query.dim,
        hidden_dim=get("hidden-dim", None, int),
        channels=get("channels", None, int),
    )
    train_cfg = TrainConfig(
        epochs=get("epochs", 20, int),
        batch_size=get("batch-size", 1, int),
        learning_rate=get("lr", 0.05, float),
        momentum=get("momentum", 0.9, float),
        t_min=get("t-min", 0.3, float),
        t_max=get("t-max", 0.7, float),
        rca_probability=get("rca-prob", 0.5, float),
        length_tol=get("length-tol", 0.25, float),
        frame_rate_tol=get("frame-rate-tol", 0.2, float),
        seed=get("seed", 0, int),
    )
    result = train(samples, model_cfg, train_cfg)
    sidecar = dict(model_cfg.to_dict())
    sidecar.update(epochs=train_cfg.epochs, learning_rate=train_cfg.learning_rate,
                   momentum=train_cfg.momentum, batch_size=train_cfg.batch_size,
                   t_min=train_cfg.t_min, t_max=train_cfg.t_max,
                   rca_probability=train_cfg.rca_probability, seed=train_cfg.seed)
    storage.save_params(result.params.state_arrays(), args.out, config=sidecar)
    loss_log = get("loss-log", str(args.out) + ".losses.csv")
    storage.write_loss_log(result.epoch_losses, loss_log)
    print("trained %d epochs on %d samples; loss %.6f -> %.6f; %d/%d steps augmented"
          % (train_cfg.epochs, len(samples), result.epoch_losses[0],
             result.epoch_losses[-1], result.augmented_steps, result.total_steps))
    print("checkpoint: %s" % args.out)
    return 0


def _load_model(path):
    sidecar = storage.load_checkpoint_config(path)
    cfg = ModelConfig.from_dict(sidecar)
    params = init_params(cfg, np.random.default_rng(0))
    params.load_state(storage.load_params(path))
    return cfg, params


def _decode_rows(samples, score_fn, jobs):
    def one(sample):
        pred = decode_best_moment(score_fn(sample))
        return (sample.features.video_id, sample.query.query_id,
                pred.proposal.start, pred.proposal.end, pred.score)

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            return list(pool.map(one, samples))
    return [one(s) for s in samples]


def _cmd_infer(args) -> int:
    get = _resolver(args)
    manifest = storage.load_manifest(args.data, get("split", "val"))
    cfg, params = _load_model(args.checkpoint)

    rows = _decode_rows(
        manifest.samples,
        lambda s: score_map(s.features.data, s.query.embedding, cfg, params),
        get("jobs", 1, int),
    )
    storage.write_predictions(rows, args.out)
    print("wrote %d predictions to %s" % (len(rows), args.out))
    return 0


def _cmd_ensemble(args) -> int:
    get = _resolver(args)
    manifest = storage.load_manifest(args.data, get("split", "val"))
    paths = [p for p in args.checkpoints.split(",") if p]
    if not paths:
        raise UsageError("--checkpoints needs at least one path")
    models = [_load_model(p) for p in paths]
    base = models[0][0]
    for cfg, _ in models[1:]:
        if cfg != base:
            raise InvariantError("checkpoints disagree on model configuration")

    def merged(sample):
        maps = [score_map(sample.features.data, sample.query.embedding, cfg, params)
                for cfg, params in models]
        return ensemble_scores(maps)

    rows = _decode_rows(manifest.samples, merged, get("jobs", 1, int))
    storage.write_predictions(rows, args.out)
    print("wrote %d ensembled predictions (%d models) to %s"
          % (len(rows), len(models), args.out))
    return 0


def _cmd_select_tube(args) -> int:
    get = _resolver(args)
    manifest = storage.load_manifest(args.data, get("split", "val"))
    by_id = {(s.features.video_id, s.query.query_id): s for s in manifest.samples}
    detections = storage.load_detections(args.detections)
    lexicon = DEFAULT_PERSON_NOUNS
    lex_path = get("lexicon", None)
    if lex_path:
        lexicon = storage.load_lexicon(lex_path)
    frames_per_clip = get("frames-per-clip", 8, int)

    tubes = []
    for video_id, query_id, start, end, score in storage.load_predictions(args.pred):
        sample = by_id.get((video_id, query_id))
        if sample is None:
            raise InvariantError(
                "prediction for unknown sample (%r, %r)" % (video_id, query_id)
            )
        pred = MomentPrediction(Proposal(start, end), score)
        spans = clip_frame_spans(sample.features.n_clips, frames_per_clip)
        segment = clip_segment_to_frames(pred, spans)
        tubes.append(build_tube(video_id, sample.query, segment,
                                detections.get(video_id, {}), lexicon))
    storage.write_tubes(tubes, args.out)
    print("wrote %d tubes to %s" % (len(tubes), args.out))
    return 0


def _cmd_eval(args) -> int:
    preds = storage.load_tubes(args.pred)
    gts = storage.load_tubes(args.gt)
    report = evaluate(preds, gts)
    print(render_report(report))
    if args.csv:
        lines = ["metric,value"] + ["%s,%s" % (k, v) for k, v in report_csv_rows(report)]
        Path(args.csv).write_text("\n".join(lines) + "\n", encoding="utf-8")
    return 0


def _cmd_gradcheck(args) -> int:
    get = _resolver(args)
    n = get("n", 8, int)
    dim = get("dim", 6, int)
    cfg = ModelConfig(
        aggregator=get("aggregator", "bilstm"),
        input_dim=dim,
        query_dim=get("query-dim", dim, int),
        hidden_dim=get("hidden-dim", dim, int),
        channels=get("channels", 8, int),
    )
    rng = np.random.default_rng(get("seed", 0, int))
    params = init_params(cfg, rng, dtype=np.float64)
    features = rng.standard_normal((n, dim))
    query = rng.standard_normal(cfg.query_dim)
    gt = Proposal(int(rng.integers(1, n + 1)), n)
    targets = scaled_iou_targets(n, gt, 0.3, 0.7, dtype=np.float64)

    def forward():
        scores, mask = score_tensor(features, query, cfg, params)
        return bce_loss(scores, targets, mask)

    report = grad_check(forward, params, eps=get("eps", 1e-5, float),
                        tol=get("tol", 1e-4, float))
    status = "PASS" if report.passed else "FAIL"
    print("gradcheck %s: max_rel_err=%.3e (tol %.1e, %d parameters, worst %r)"
          % (status, report.max_rel_err, report.tol,
             params.n_scalars(), report.worst_param()))
    return 0 if report.passed else 3


_COMMANDS = {
    "synth": _cmd_synth,
    "synth-order": _cmd_synth_order,
    "train": _cmd_train,
    "infer": _cmd_infer,
    "ensemble": _cmd_ensemble,
    "select-tube": _cmd_select_tube,
    "eval": _cmd_eval,
    "gradcheck": _cmd_gradcheck,
}

_DATA_ERRORS = (FormatError, InvariantError, EmptyInputError, ShapeMismatchError,
                AugmentationError, SubjectNotFoundError, NoDetectionsError,
                OSError, KeyError)


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            raise UsageError("a subcommand is required")
        return _COMMANDS[args.command](args)
    except (UsageError, ConfigError) as exc:
        print("error: %s" % exc, file=sys.stderr)
        print("run 'momentgrid --help' for usage", file=sys.stderr)
        return 1
    except NumericsError as exc:
        print("numeric failure: %s" % exc, file=sys.stderr)
        return 3
    except _DATA_ERRORS as exc:
        print("data error: %s" % exc, file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
