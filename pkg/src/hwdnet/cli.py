"""Command-line interface: synth, train, eval, ablate, plot.

Exit codes: 0 success, 1 validation error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .config import DESK_PRESET, ConfigError, load_config
from .data.records import ParseError, ValidationError, load_ucm_veid_index
from .data.sampler import SamplingError
from .data.synth import generate_synthetic_dataset
from .losses import LossValidationError
from .metrics import evaluate_protocol
from .trainer import (
    CheckpointError,
    TrainingDiverged,
    load_checkpoint,
    restore_model,
    resume as resume_training,
    train as run_training,
)

_VALIDATION_ERRORS = (
    ParseError, ValidationError, ConfigError, SamplingError,
    LossValidationError, CheckpointError, ValueError, FileNotFoundError,
)

class _ValidationExit(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse default exits 2; flag errors are validation
        self.print_usage(sys.stderr)
        sys.stderr.write(f"{self.prog}: error: {message}\n")
        raise _ValidationExit(message)


def _collect_overrides(args) -> dict:
    overrides = {}
    if getattr(args, "preset", None) == "desk":
        overrides.update(DESK_PRESET)
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        key, value = item.split("=", 1)
        overrides[key.strip()] = value.strip()
    if getattr(args, "epochs", None) is not None:
        overrides["train.epochs"] = args.epochs
    if getattr(args, "lr", None) is not None:
        overrides["train.lr"] = args.lr
    if getattr(args, "seed", None) is not None:
        overrides["train.seed"] = args.seed
    return overrides


def cmd_synth(args) -> int:
    index = generate_synthetic_dataset(args.num_ids, args.spm, args.seed,
                                       args.out, img_size=args.img_size)
    print(f"{len(index)} images, {index.num_identities} identities")
    return 0


def cmd_train(args) -> int:
    cfg = load_config(args.config, _collect_overrides(args))
    index = load_ucm_veid_index(args.data)
    ckpt = run_training(cfg, index, args.out)
    print(f"final checkpoint: {ckpt}")
    return 0


def cmd_resume(args) -> int:
    index = load_ucm_veid_index(args.data)
    ckpt = resume_training(args.ckpt, index, args.out, _collect_overrides(args))
    print(f"final checkpoint: {ckpt}")
    return 0


def _protocol_cells(direction: str, shot: str):
    directions = ("ir2rgb", "rgb2ir") if direction == "both" else (direction,)
    shots = ("single", "multi") if shot == "both" else (shot,)
    return [(d, s) for d in directions for s in shots]


def cmd_eval(args) -> int:
    state = load_checkpoint(args.ckpt)
    model, cfg = restore_model(state)
    if args.dim is not None and args.dim != model.encoder.dim:
        raise ValidationError(
            f"checkpoint feature dim {model.encoder.dim} != requested {args.dim}"
        )
    index = load_ucm_veid_index(args.data)
    height, width = int(cfg["batch.height"]), int(cfg["batch.width"])
    embed = lambda recs: model.embed_records(recs, height, width)  # noqa: E731
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    seeds = list(range(args.seeds))
    for direction, shot in _protocol_cells(args.direction, args.shot):
        report = evaluate_protocol(embed, index, direction, shot, seeds,
                                   max_rank=args.max_rank)
        path = out_dir / f"report_{direction}_{shot}.json"
        path.write_text(report.to_json(), encoding="utf-8")
        print(f"{direction} {shot}: rank1={report.cmc[0]:.4f} "
              f"mAP={report.map:.4f} -> {path}")
    if args.dump_embeddings:
        feats = embed(index.records)
        np.savez(
            args.dump_embeddings,
            feats=feats,
            ids=np.array([r.identity for r in index.records]),
            modality=np.array([0 if r.modality.value == "rgb" else 1
                               for r in index.records]),
        )
        print(f"embeddings -> {args.dump_embeddings}")
    return 0


ABLATION_GRID = [
    ("baseline", {"wr": False, "orient": False, "centroid": False}),
    ("+wr", {"wr": True, "orient": False, "centroid": False}),
    ("+orient", {"wr": False, "orient": True, "centroid": False}),
    ("+centroid", {"wr": False, "orient": False, "centroid": True}),
    ("+orient+centroid", {"wr": False, "orient": True, "centroid": True}),
    ("full", {"wr": True, "orient": True, "centroid": True}),
]


def cmd_ablate(args) -> int:
    base_cfg = load_config(args.config, _collect_overrides(args))
    index = load_ucm_veid_index(args.data)
    test_index = load_ucm_veid_index(args.test_data) if args.test_data else index
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows = []
    for name, flags in ABLATION_GRID:
        cfg = dict(base_cfg)
        for term, on in flags.items():
            cfg[f"loss.enable.{term}"] = on
        run_dir = out_dir / name.replace("+", "p").replace(" ", "_")
        ckpt = run_training(cfg, index, run_dir)
        state = load_checkpoint(ckpt)
        model, mcfg = restore_model(state)
        height, width = int(mcfg["batch.height"]), int(mcfg["batch.width"])
        report = evaluate_protocol(
            lambda recs: model.embed_records(recs, height, width),
            test_index, args.direction, args.shot, list(range(args.seeds)),
        )
        rows.append({"config": name, "rank1": round(report.cmc[0], 6),
                     "rank10": round(report.cmc[min(9, len(report.cmc) - 1)], 6),
                     "map": round(report.map, 6)})
    (out_dir / "ablation.json").write_text(
        json.dumps(rows, indent=2) + "\n", encoding="utf-8")
    header = f"{'config':<20} {'rank1':>8} {'rank10':>8} {'mAP':>8}"
    print(header)
    print("-" * len(header))
    for row in rows:
        print(f"{row['config']:<20} {row['rank1']:>8.4f} "
              f"{row['rank10']:>8.4f} {row['map']:>8.4f}")
    return 0


def cmd_plot(args) -> int:
    from . import plotting

    out = Path(args.out)
    if out.exists() and not args.force:
        raise ValidationError(f"{out} exists; pass --force to overwrite")
    if args.report:
        if not Path(args.report).exists():
            raise FileNotFoundError(args.report)
        plotting.plot_cmc(args.report, out)
    elif args.embeddings:
        if not Path(args.embeddings).exists():
            raise FileNotFoundError(args.embeddings)
        plotting.plot_embeddings(args.embeddings, out)
    else:
        raise ValidationError("one of --report or --embeddings is required")
    print(f"wrote {out}")
    return 0


def _add_common_train_flags(sub):
    sub.add_argument("--config", help="flat key=value config file "
                                      "(default: $HWDNET_CONFIG if set)")
    sub.add_argument("--preset", choices=["desk"], help="apply a named preset")
    sub.add_argument("--set", action="append", metavar="KEY=VALUE",
                     help="override one config key (repeatable)")
    sub.add_argument("--epochs", type=int)
    sub.add_argument("--lr", type=float)
    sub.add_argument("--seed", type=int)


def build_parser() -> _Parser:
    parser = _Parser(prog="hwdnet", description=__doc__)
    subs = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    synth = subs.add_parser("synth", help="generate a synthetic paired-modality dataset")
    synth.add_argument("--num-ids", type=int, required=True)
    synth.add_argument("--spm", type=int, required=True,
                       help="samples per identity per modality")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--out", required=True)
    synth.add_argument("--img-size", type=int, default=96)
    synth.set_defaults(func=cmd_synth)

    tr = subs.add_parser("train", help="train a model")
    tr.add_argument("--data", required=True, help="UCM-VeID-layout dataset root")
    tr.add_argument("--out", required=True, help="output directory")
    _add_common_train_flags(tr)
    tr.set_defaults(func=cmd_train)

    rs = subs.add_parser("resume", help="continue training from a checkpoint")
    rs.add_argument("--ckpt", required=True)
    rs.add_argument("--data", required=True)
    rs.add_argument("--out", required=True)
    _add_common_train_flags(rs)
    rs.set_defaults(func=cmd_resume)

    ev = subs.add_parser("eval", help="evaluate a checkpoint")
    ev.add_argument("--ckpt", required=True)
    ev.add_argument("--data", required=True, help="test dataset root")
    ev.add_argument("--out", required=True, help="report output directory")
    ev.add_argument("--direction", choices=["ir2rgb", "rgb2ir", "both"],
                    default="ir2rgb")
    ev.add_argument("--shot", choices=["single", "multi", "both"], default="single")
    ev.add_argument("--seeds", type=int, default=10,
                    help="single-shot gallery draws to average")
    ev.add_argument("--max-rank", type=int, default=20)
    ev.add_argument("--dim", type=int,
                    help="expected feature dim; mismatch with checkpoint fails")
    ev.add_argument("--dump-embeddings", help="write feats/ids/modality .npz")
    ev.set_defaults(func=cmd_eval)

    ab = subs.add_parser("ablate", help="run the loss-component ablation grid")
    ab.add_argument("--data", required=True)
    ab.add_argument("--test-data", help="separate test dataset root")
    ab.add_argument("--out", required=True)
    ab.add_argument("--direction", choices=["ir2rgb", "rgb2ir"], default="ir2rgb")
    ab.add_argument("--shot", choices=["single", "multi"], default="single")
    ab.add_argument("--seeds", type=int, default=10)
    _add_common_train_flags(ab)
    ab.set_defaults(func=cmd_ablate)

    pl = subs.add_parser("plot", help="plot a CMC curve or an embedding scatter")
    pl.add_argument("--report", help="EvalReport JSON")
    pl.add_argument("--embeddings", help="embedding .npz from eval --dump-embeddings")
    pl.add_argument("--out", required=True)
    pl.add_argument("--force", action="store_true")
    pl.set_defaults(func=cmd_plot)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except _ValidationExit:
        return 1
    try:
        return args.func(args)
    except _VALIDATION_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (TrainingDiverged, OSError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
