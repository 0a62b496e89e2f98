"""Command-line entry point: ``memtrain <command> [--config F] [--seed N] [--out DIR]``."""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import replace
from pathlib import Path

from ..analysis.cost import count_resources, energy_latency, reports_csv
from ..analysis.transfer import TransferModel, TransferProtocol, summarize, transfer_eval, write_outputs
from ..netcore import CheckpointError, build_model
from ..trainer import (build_state, evaluate, load_checkpoint, run_training, save_checkpoint,
                       sparsity)
from .config import ConfigError, RunConfig, bundled_config, load_config
from .data import (DataError, Dataset, encode_cifar10, load_cifar10, load_split,
                   synthetic_cifar10)
from .metrics import write_json, write_matrix_csv

EXIT_OK, EXIT_CONFIG, EXIT_DATA = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise ConfigError(message)


def _global_flags(p: argparse.ArgumentParser, defaults: bool) -> None:
    sup = argparse.SUPPRESS
    p.add_argument("--config", default=None if defaults else sup, help="run configuration file")
    p.add_argument("--seed", type=int, default=None if defaults else sup, help="unsigned 64-bit run seed")
    p.add_argument("--out", default=None if defaults else sup, help="output directory")
    p.add_argument("--workers", type=int, default=None if defaults else sup,
                   help="parallel workers (default: available cores)")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="memtrain", description=__doc__)
    _global_flags(parser, True)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    common = _Parser(add_help=False)
    _global_flags(common, False)

    t = sub.add_parser("train", parents=[common], help="train a model")
    mode = t.add_mutually_exclusive_group()
    mode.add_argument("--naive", action="store_true", help="program quantized steps every batch")
    mode.add_argument("--software", action="store_true", help="floating-point training")
    mode.add_argument("--qat", action="store_true", help="quantization-aware software training")
    t.add_argument("--epochs", type=int, help="override max_epochs")
    t.add_argument("--resume", help="checkpoint to continue from")

    i = sub.add_parser("infer", parents=[common], help="accuracy and confusion matrix of a checkpoint")
    i.add_argument("--checkpoint", required=True)
    i.add_argument("--mode", choices=["cim", "reference"], default=None)
    i.add_argument("--full-test", action="store_true", help="use all test images")

    x = sub.add_parser("transfer-eval", parents=[common], help="accuracy after transfer to a new chip")
    x.add_argument("--checkpoint", action="append", required=True, help="trained checkpoint (repeatable)")

    e = sub.add_parser("energy-report", parents=[common], help="resource, latency and energy estimate")
    e.add_argument("--models", nargs="*", help="bundled configs to include (default: --config only)")
    return parser


def _resolve(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else load_config(bundled_config("lenet"))
    if args.seed is not None:
        try:
            cfg = replace(cfg, seed=args.seed)
            from ..rng import check_seed
            check_seed(cfg.seed)
        except ValueError as e:
            raise ConfigError(str(e)) from None
    if args.out is not None:
        cfg = replace(cfg, out=args.out)
    return cfg


def _datasets(cfg: RunConfig) -> tuple[Dataset, Dataset]:
    root = cfg.data.root or None
    try:
        train = load_split(cfg.data.dataset, "train", root)
        test = load_split(cfg.data.dataset, "test", root)
    except DataError:
        if not (cfg.data.dataset == "cifar10" and cfg.data.synthetic_fallback):
            raise
        n = cfg.data.train_subset or 5000
        # round-trip through the binary format so the generated data takes the real ingestion path
        train = load_cifar10_bytes(encode_cifar10(synthetic_cifar10(n, cfg.seed, 0)))
        test = load_cifar10_bytes(encode_cifar10(synthetic_cifar10(1000, cfg.seed, 1)))
    if cfg.data.train_subset:
        train = train.subset(cfg.data.train_subset)
    return train, test


def load_cifar10_bytes(raw: bytes) -> Dataset:
    import tempfile
    with tempfile.TemporaryDirectory() as d:
        p = Path(d) / "batch.bin"
        p.write_bytes(raw)
        return load_cifar10([p])


def _state(cfg: RunConfig, trainer=None):
    return build_state(build_model(cfg.model), trainer or cfg.trainer, cfg.device, cfg.tile, cfg.seed)


def _meta(path) -> dict:
    p = Path(str(path) + ".json")
    try:
        return json.loads(p.read_text())
    except (OSError, ValueError) as e:
        raise CheckpointError(f"cannot read checkpoint metadata {p}: {e}") from None


def _state_from_checkpoint(cfg: RunConfig, path):
    meta = _meta(path)
    tc = replace(cfg.trainer, mode=meta["config"]["mode"])
    st = _state(cfg, tc)
    if not Path(path).exists():
        raise CheckpointError(f"checkpoint {path} not found")
    return load_checkpoint(st, path)


def cmd_train(args, cfg: RunConfig) -> int:
    mode = "naive" if args.naive else "software" if args.software else "qat" if args.qat else cfg.trainer.mode
    tc = replace(cfg.trainer, mode=mode)
    if args.epochs is not None:
        tc = replace(tc, max_epochs=args.epochs)
    train, test = _datasets(cfg)
    st = _state(cfg, tc)
    if args.resume:
        load_checkpoint(st, args.resume)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    stats = run_training(st, train, test, out_dir=out)
    save_checkpoint(st, out / "checkpoint.bin")
    batches = st.epoch * min(tc.batches_per_epoch, len(train) // tc.batch_size)
    if st.uses_cim:
        write_json(out / "sparsity.json", sparsity(st, batches))
        write_json(out / "mappings.json", {n: m.manifest() for n, m in st.mappings.items()})
    last = stats[-1].test_accuracy if stats else float("nan")
    print(f"trained {cfg.model} ({mode}) for {st.epoch} epochs; test accuracy {last:.4f}")
    return EXIT_OK


def cmd_infer(args, cfg: RunConfig) -> int:
    _, test = _datasets(cfg)
    st = _state_from_checkpoint(cfg, args.checkpoint)
    mode = args.mode or ("cim" if st.uses_cim else "reference")
    data = test if args.full_test else test.subset(cfg.trainer.test_subset)
    res = evaluate(st, data, mode, st.streams.fresh("infer"))
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "infer.json", {"accuracy": res.accuracy, "mode": mode, "images": len(data),
                                    "confusion": res.confusion})
    write_matrix_csv(out / "confusion.csv", res.confusion, header=[f"pred_{k}" for k in range(res.confusion.shape[1])])
    print(f"{mode} accuracy {res.accuracy:.4f} on {len(data)} images")
    return EXIT_OK


def cmd_transfer(args, cfg: RunConfig) -> int:
    train, test = _datasets(cfg)
    models = []
    for k, path in enumerate(args.checkpoint):
        st = _state_from_checkpoint(cfg, path)
        models.append(TransferModel(label=f"{Path(path).stem}-{k}", kind=st.config.mode, state=st))
    proto = TransferProtocol(sigma_prog_levels=cfg.transfer.sigmas,
                             noise_samples_per_model=cfg.transfer.samples,
                             n_levels=cfg.transfer.n_levels, seed=cfg.seed)
    workers = args.workers or os.cpu_count() or 1
    records = transfer_eval(proto, models, test.subset(cfg.trainer.test_subset),
                            calib=train.subset(cfg.transfer.calib_images), workers=workers)
    write_outputs(records, cfg.out)
    for g in summarize(records):
        print(f"{g['kind']:>8} sigma={g['sigma']}: median accuracy {g['accuracy']['median']:.4f}, "
              f"median drop {g['drop']['median']:.4f}")
    return EXIT_OK


def cmd_energy(args, cfg: RunConfig) -> int:
    cfgs = [cfg] if not args.models else [load_config(bundled_config(m)) for m in args.models]
    reports = []
    for c in cfgs:
        res = count_resources(build_model(c.model), c.cost)
        reports.append(energy_latency(res, c.cost))
    text = reports_csv(reports)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "energy_report.csv").write_text(text)
    write_json(out / "energy_report.json", {"reports": [r.__dict__ for r in reports]})
    sys.stdout.write(text)
    return EXIT_OK


COMMANDS = {"train": cmd_train, "infer": cmd_infer, "transfer-eval": cmd_transfer,
            "energy-report": cmd_energy}


def run_cli(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        cfg = _resolve(args)
        return COMMANDS[args.command](args, cfg)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except (DataError, CheckpointError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return EXIT_DATA


def main() -> None:
    sys.exit(run_cli())
