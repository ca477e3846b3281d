"""Command-line entry point.

Exit codes: 0 success, 1 validation error (bad flag, infeasible budget,
corrupt ledger, ...), 2 internal error.  Artifact-producing commands write
``<command>_manifest.json`` next to their outputs.  The output directory is
``--out-dir`` if given, else ``$PRUNEMAP_OUTPUT_DIR``, else ``./prunemap-out``.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from pathlib import Path

from . import __version__
from .errors import PrunemapError
from .nn import kernels

OUTPUT_ENV = "PRUNEMAP_OUTPUT_DIR"
DEFAULT_OUTPUT = "prunemap-out"
RANGE_TOLERANCE = 1e-9

log = logging.getLogger("prunemap")


class UsageError(Exception):
    """Raised instead of exiting so ``main`` can map it to exit code 1."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(f"{self.prog}: error: {message}")


# flag value parsers


def parse_range(text: str) -> list[float]:
    """``a,b,c`` or inclusive ``start:stop:step`` (endpoint kept within 1e-9)."""
    text = text.strip()
    if ":" in text:
        parts = text.split(":")
        if len(parts) != 3:
            raise argparse.ArgumentTypeError(f"range {text!r} must be start:stop:step")
        try:
            start, stop, step = (float(p) for p in parts)
        except ValueError:
            raise argparse.ArgumentTypeError(f"range {text!r} has a non-numeric part") from None
        if not step > 0:
            raise argparse.ArgumentTypeError(f"range {text!r} needs a positive step")
        if stop < start - RANGE_TOLERANCE:
            raise argparse.ArgumentTypeError(f"range {text!r} is empty")
        n = int(math.floor((stop - start) / step + RANGE_TOLERANCE))
        return [round(start + i * step, 12) for i in range(n + 1)]
    try:
        values = [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"list {text!r} has a non-numeric item") from None
    if not values:
        raise argparse.ArgumentTypeError("empty list")
    return values


def parse_int_range(text: str) -> list[int]:
    values = parse_range(text)
    if any(v != int(v) for v in values):
        raise argparse.ArgumentTypeError(f"{text!r} must contain integers")
    return [int(v) for v in values]


_SUFFIX = {"k": 1e3, "K": 1e3, "M": 1e6, "G": 1e9, "T": 1e12}


def parse_quantity(text: str) -> float:
    """Float with an optional k/M/G/T suffix, e.g. ``2.5G``."""
    mult = 1.0
    if text and text[-1] in _SUFFIX:
        mult = _SUFFIX[text[-1]]
        text = text[:-1]
    try:
        value = float(text) * mult
    except ValueError:
        raise argparse.ArgumentTypeError(f"invalid number {text!r}") from None
    if not math.isfinite(value) or value < 0:
        raise argparse.ArgumentTypeError("must be a finite number >= 0")
    return value


def _probability(text: str) -> float:
    value = float(text)
    if not 0.0 < value < 1.0:
        raise argparse.ArgumentTypeError("must lie strictly between 0 and 1")
    return value


def _positive_int(text: str) -> int:
    value = int(text)
    if value < 1:
        raise argparse.ArgumentTypeError("must be >= 1")
    return value


def _nonneg_int(text: str) -> int:
    value = int(text)
    if value < 0:
        raise argparse.ArgumentTypeError("must be >= 0")
    return value


# shared helpers


def output_dir(args) -> Path:
    path = Path(args.out_dir or os.environ.get(OUTPUT_ENV) or DEFAULT_OUTPUT)
    path.mkdir(parents=True, exist_ok=True)
    return path


def write_run_manifest(out_dir: Path, args, outputs, started: float) -> Path:
    config = {k: v for k, v in sorted(vars(args).items()) if k not in ("func",)}
    manifest = {
        "command": args.command if args.command != "ledger" else f"ledger {args.ledger_command}",
        "config": config,
        "seed": getattr(args, "seed", None),
        "code_version": f"prunemap {__version__} (kernels: {kernels.BACKEND})",
        "outputs": [str(p) for p in outputs],
        "wall_clock_s": round(time.perf_counter() - started, 3),
    }
    name = manifest["command"].replace(" ", "_")
    path = out_dir / f"{name}_manifest.json"
    path.write_text(json.dumps(manifest, indent=2, default=str) + "\n", encoding="utf-8")
    return path


def _emit(obj) -> None:
    print(json.dumps(obj, indent=2, default=str))


def _load_data(manifest, n, size, seed, augment_seed):
    from .segmentation import make_dataset, read_dataset

    if manifest:
        return read_dataset(manifest)[1]
    return make_dataset(n, size=size, seed=seed, augment_seed=augment_seed)


def _add_data_flags(p, heldout=True):
    g = p.add_argument_group("training data (synthetic unless --data is given)")
    g.add_argument("--data", help="dataset manifest.json written by generate-dataset")
    g.add_argument("--n-train", type=_positive_int, default=256, help="synthetic training fields")
    g.add_argument("--data-seed", type=int, default=1, help="seed of the synthetic training fields")
    g.add_argument("--augment-seed", type=int, default=2,
                   help="seed of the random augmentations (negative disables augmentation)")
    g.add_argument("--size", type=_positive_int, default=32, help="image side in pixels")
    if heldout:
        h = p.add_argument_group("held-out evaluation data")
        h.add_argument("--heldout", help="held-out dataset manifest.json")
        h.add_argument("--heldout-n", type=_positive_int, default=64, help="synthetic held-out fields")
        h.add_argument("--heldout-seed", type=int, default=99, help="seed of the held-out fields")


def _train_data(args):
    aug = args.augment_seed if args.augment_seed >= 0 else None
    return _load_data(args.data, args.n_train, args.size, args.data_seed, aug)


def _heldout_data(args):
    return _load_data(args.heldout, args.heldout_n, args.size, args.heldout_seed, None)


def _ratio_label(p: float) -> str:
    return f"{p:.2f}"


# subcommands


def cmd_generate_dataset(args) -> int:
    from .segmentation import field_specs, write_dataset

    started = time.perf_counter()
    out = output_dir(args)
    specs = field_specs(args.n, args.size, args.seed, (args.cover_min, args.cover_max))
    manifest = write_dataset(out / args.name, specs)
    write_run_manifest(out, args, [manifest], started)
    print(manifest)
    return 0


def cmd_train(args) -> int:
    import csv

    from .nn import TrainConfig, evaluate_accuracy, reference_fcn, save_checkpoint, train

    started = time.perf_counter()
    out = output_dir(args)
    data = _train_data(args)
    heldout = _heldout_data(args)
    model = reference_fcn(seed=args.seed, input_size=args.size)
    cfg = TrainConfig(learning_rate=args.lr, epochs=args.epochs, batch_size=args.batch_size,
                      seed=args.seed)
    result = train(model, data, cfg)
    ckpt = save_checkpoint(result.model, out / "base.json")
    acc = evaluate_accuracy(result.model, heldout)
    losses = out / "train_losses.csv"
    with losses.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("epoch", "loss"))
        for i, v in enumerate(result.losses):
            w.writerow((i, repr(v)))
    metrics = out / "train_metrics.json"
    metrics.write_text(json.dumps({"heldout_pixel_accuracy": acc, "final_loss": result.losses[-1],
                                   "epochs": args.epochs}, indent=2) + "\n", encoding="utf-8")
    write_run_manifest(out, args, [ckpt, losses, metrics], started)
    _emit({"checkpoint": str(ckpt), "heldout_pixel_accuracy": acc, "final_loss": result.losses[-1]})
    return 0


def cmd_prune(args) -> int:
    import csv

    from .nn import load_checkpoint, save_checkpoint
    from .pruning import PruneConfig, iterative_prune, variant_record

    started = time.perf_counter()
    out = output_dir(args)
    base = load_checkpoint(args.checkpoint)
    data = _train_data(args) if args.fine_tune_epochs else None
    heldout = _heldout_data(args)
    cfg = PruneConfig(ratio=args.ratio, iterations=args.iterations,
                      fine_tune_epochs_per_iter=args.fine_tune_epochs,
                      prunable_layers=args.layers, learning_rate=args.lr,
                      batch_size=args.batch_size, seed=args.seed)
    steps = iterative_prune(base, cfg, data, heldout)
    outputs = []
    records = []
    for s in steps:
        path = save_checkpoint(s.model, out / f"pruned-itr{s.iteration}-p{_ratio_label(args.ratio)}.json")
        outputs.append(path)
        rec = variant_record(s.iteration, args.ratio, s.model, s.record.accuracy, s.record.profile)
        rec["removed"] = {str(k): v for k, v in s.record.removed.items()}
        rec["checkpoint_path"] = str(path)
        records.append(rec)
    rec_path = out / "prune_records.json"
    rec_path.write_text(json.dumps(records, indent=2) + "\n", encoding="utf-8")
    csv_path = out / "prune_records.csv"
    with csv_path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("itr", "p", "accuracy", "flops", "size_mb", "energy_j"))
        for r in records:
            w.writerow((r["itr"], repr(r["p"]), repr(r["accuracy"]), r["flops"], repr(r["size_mb"]),
                        repr(r["energy_j"])))
    outputs += [rec_path, csv_path]
    write_run_manifest(out, args, outputs, started)
    _emit([{k: r[k] for k in ("itr", "p", "accuracy", "flops", "size_mb")} for r in records])
    return 0


def cmd_roadmap(args) -> int:
    from .nn import TrainConfig, load_checkpoint, reference_fcn, save_checkpoint, train
    from .roadmap import build_roadmap, write_csv, write_manifest

    started = time.perf_counter()
    out = output_dir(args)
    ps = args.ps
    if any(not 0.0 < p < 1.0 for p in ps):
        raise UsageError("argument --ps: every ratio must lie strictly between 0 and 1")
    if any(i < 1 for i in args.itrs):
        raise UsageError("argument --itrs: iteration counts must be >= 1")
    data = _train_data(args)
    heldout = _heldout_data(args)
    outputs = []
    if args.checkpoint:
        base = load_checkpoint(args.checkpoint)
    else:
        cfg = TrainConfig(learning_rate=args.lr, epochs=args.base_epochs,
                          batch_size=args.batch_size, seed=args.seed)
        base = train(reference_fcn(seed=args.seed, input_size=args.size), data, cfg).model
        outputs.append(save_checkpoint(base, out / "base.json"))
    entries = build_roadmap(
        base, args.itrs, ps, data, heldout,
        heldout_seed=None if args.heldout else args.heldout_seed,
        fine_tune_epochs=args.fine_tune_epochs, learning_rate=args.lr,
        batch_size=args.batch_size, seed=args.seed, out_dir=out,
        latency_reps=args.latency_reps if args.profile_latency else 0, jobs=args.jobs,
    )
    for e in entries:
        # manifest paths are stored relative to the output directory
        if e.checkpoint_path:
            e.checkpoint_path = os.path.relpath(e.checkpoint_path, out)
    manifest = write_manifest(entries, out / "roadmap.json")
    table = write_csv(entries, out / "roadmap.csv")
    outputs += [manifest, table] + [out / e.checkpoint_path for e in entries if e.checkpoint_path]
    write_run_manifest(out, args, outputs, started)
    print(f"{len(entries)} entries -> {manifest}")
    return 0


def cmd_select(args) -> int:
    from .roadmap import Budget, read_manifest, select_model

    entries = read_manifest(args.roadmap)
    try:
        budget = Budget(max_flops=args.max_flops, max_energy_j=args.max_energy,
                        max_latency_ms=args.max_latency, max_size_mb=args.max_size,
                        min_accuracy=args.min_accuracy)
    except PrunemapError:
        raise UsageError("select needs at least one of --max-flops, --max-energy, "
                         "--max-latency, --max-size, --min-accuracy") from None
    chosen = select_model(entries, budget)
    _emit({"variant_id": chosen.variant_id, **{k: v for k, v in chosen.to_dict().items()
                                                if k != "variant_id"}})
    return 0


def cmd_profile(args) -> int:
    from .cost_model import measure_latency, profile
    from .nn import load_checkpoint, reference_fcn, vgg16_fcn_descriptor

    if args.checkpoint:
        model = load_checkpoint(args.checkpoint)
    elif args.model == "vgg16-fcn":
        model = vgg16_fcn_descriptor(input_size=args.input_size)
    else:
        model = reference_fcn(seed=0, input_size=args.input_size)
    prof = profile(model)
    if args.latency_reps:
        if model.meta.get("name") == "vgg16_fcn32s":
            raise UsageError("argument --latency-reps: the VGG16 descriptor has no weights to run")
        prof.latency_ms = measure_latency(model, repetitions=args.latency_reps)
    _emit({"params": model.param_count(), **prof.to_dict(), "gflops": prof.flops / 1e9})
    return 0


def cmd_simulate(args) -> int:
    from .ledger import ContractConfig, Ledger, Participant, Register
    from .mission import MissionConfig, ModelStore, check_conservation, run_mission

    started = time.perf_counter()
    out = output_dir(args)
    cfg = MissionConfig.from_json(args.config)
    ledger_path = Path(args.ledger) if args.ledger else out / "ledger.jsonl"
    contract_cfg = _contract_config(args, ledger_path)
    ledger = Ledger.load(ledger_path, contract_cfg) if ledger_path.exists() else Ledger(contract_cfg)
    if args.register_missing:
        regs = [
            Register(Participant.farmer(f"farmer-{fid}", args.crop, 0.0, 0.0, args.yield_estimate,
                                        field_id=fid))
            for fid in dict.fromkeys(cfg.fields_to_survey) if fid not in ledger.state.field_owner
        ]
        if regs:
            ledger.append_block(regs)
    mlog = run_mission(cfg, ModelStore(), ledger)
    if not check_conservation(mlog):
        raise RuntimeError("mission energy ledger does not balance")
    log_path, csv_path = mlog.write(out / "mission_log.json", out / "mission_summary.csv")
    ledger.save(ledger_path)
    _save_contract_config(ledger_path, ledger.config)
    write_run_manifest(out, args, [log_path, csv_path, ledger_path], started)
    _emit({"steps": len(mlog.steps), "swaps": len(mlog.swaps), "aborted": mlog.aborted,
           "abort_reason": mlog.abort_reason, "remaining_battery_j": float(mlog.remaining_battery),
           "log": str(log_path)})
    return 0


# ledger subcommands


def _sidecar(ledger_path: Path) -> Path:
    return ledger_path.with_name(ledger_path.name + ".contracts.json")


def _contract_config(args, ledger_path: Path):
    """Contract settings come from --contract-config, else the ledger's sidecar, else defaults."""
    from .ledger import ContractConfig

    src = getattr(args, "contract_config", None)
    if src is None and _sidecar(ledger_path).exists():
        src = _sidecar(ledger_path)
    if src is None:
        return ContractConfig()
    raw = json.loads(Path(src).read_text(encoding="utf-8"))
    allowed = {"biomass_tolerance", "output_tolerance", "harvest_window", "yield_factor"}
    unknown = set(raw) - allowed
    if unknown:
        raise UsageError(f"argument --contract-config: unknown keys {sorted(unknown)}")
    return ContractConfig(**raw)


def _save_contract_config(ledger_path: Path, cfg) -> None:
    _sidecar(ledger_path).write_text(json.dumps(cfg.to_dict(), indent=2, sort_keys=True) + "\n",
                                     encoding="utf-8")


def _open_ledger(args):
    from .ledger import Ledger

    path = Path(args.ledger)
    cfg = _contract_config(args, path)
    ledger = Ledger.load(path, cfg) if path.exists() else Ledger(cfg)
    return path, ledger


def _append(args, txs) -> int:
    from .ledger import anomaly_report, tx_to_json

    path, ledger = _open_ledger(args)
    t0 = time.perf_counter()
    block = ledger.append_block(txs)
    append_ms = (time.perf_counter() - t0) * 1e3
    ledger.save(path)
    _save_contract_config(path, ledger.config)
    flags = [tx_to_json(tx) for tx in block.payload if tx.kind == "AnomalyFlag"]
    if flags and args.regulator:
        Path(args.regulator).write_text(json.dumps(anomaly_report(ledger), indent=2) + "\n",
                                        encoding="utf-8")
    _emit({"block": block.index, "block_hash": block.block_hash,
           "contract_ms": round(append_ms, 3), "anomalies": flags})
    return 0


def cmd_register_farmer(args) -> int:
    from .ledger import Participant, Register

    p = Participant.farmer(args.id, args.crop, args.lat, args.lon, args.yield_estimate,
                           field_id=args.field_id)
    return _append(args, [Register(p, args.timestamp)])


def cmd_register_plant(args) -> int:
    from .ledger import Participant, Register

    return _append(args, [Register(Participant.plant(args.id, args.product), args.timestamp)])


def cmd_trade(args) -> int:
    from .ledger import Trade

    return _append(args, [Trade(args.seller, args.buyer, args.quantity, args.product, args.timestamp)])


def cmd_report_biomass(args) -> int:
    from .ledger import BiomassReport
    from .segmentation import BiomassReading

    if not 0.0 <= args.fraction <= 1.0:
        raise UsageError("argument --fraction: must lie in [0, 1]")
    return _append(args, [BiomassReport(
        BiomassReading(args.field, args.fraction, args.lat, args.lon, args.timestamp))])


def cmd_report_output(args) -> int:
    from .ledger import PlantOutput

    return _append(args, [PlantOutput(args.plant, args.product, args.quantity, args.timestamp)])


def cmd_audit(args) -> int:
    from .ledger import anomaly_report

    started = time.perf_counter()
    _, ledger = _open_ledger(args)
    report = anomaly_report(ledger)
    out = output_dir(args)
    path = Path(args.report) if args.report else out / "anomaly_report.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(report, indent=2) + "\n", encoding="utf-8")
    write_run_manifest(out, args, [path], started)
    _emit({"anomalies": len(report), "report": str(path)})
    return 0


def cmd_verify(args) -> int:
    from .ledger import read_blocks, verify_chain

    blocks = read_blocks(args.ledger)
    bad = verify_chain(blocks)
    if bad is None:
        print(f"Ok ({len(blocks)} blocks)")
        return 0
    print(f"CorruptAt({bad})")
    return 1


# parser


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="prunemap",
        description="Pruned segmentation-model roadmaps, budgeted model selection, "
                    "UAV mission simulation and a supply-chain audit ledger.",
    )
    parser.add_argument("--version", action="version", version=f"prunemap {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", metavar="COMMAND", parser_class=_Parser)

    def out_flag(p):
        p.add_argument("--out-dir", help=f"output directory (default: ${OUTPUT_ENV} or ./{DEFAULT_OUTPUT})")

    p = sub.add_parser("generate-dataset", help="write a seeded synthetic field dataset")
    p.add_argument("--n", type=_positive_int, default=64, help="number of fields")
    p.add_argument("--size", type=_positive_int, default=32, help="image side in pixels")
    p.add_argument("--seed", type=int, default=0, help="dataset seed")
    p.add_argument("--cover-min", type=float, default=0.1, help="lowest biomass cover")
    p.add_argument("--cover-max", type=float, default=0.9, help="highest biomass cover")
    p.add_argument("--name", default="dataset", help="subdirectory name under the output directory")
    out_flag(p)
    p.set_defaults(func=cmd_generate_dataset)

    p = sub.add_parser("train", help="train the reference FCN from scratch")
    _add_data_flags(p)
    p.add_argument("--epochs", type=_positive_int, default=50, help="training epochs")
    p.add_argument("--lr", type=float, default=1e-2, help="SGD learning rate")
    p.add_argument("--batch-size", type=_positive_int, default=1, help="minibatch size")
    p.add_argument("--seed", type=int, default=0, help="init and shuffle seed")
    out_flag(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("prune", help="iteratively prune a checkpoint at one ratio")
    p.add_argument("--checkpoint", required=True, help="base model checkpoint")
    p.add_argument("--ratio", type=_probability, required=True, help="pruning ratio p in (0, 1)")
    p.add_argument("--iterations", type=_positive_int, default=1, help="prune/fine-tune rounds")
    p.add_argument("--fine-tune-epochs", type=_nonneg_int, default=5, help="epochs after each round")
    p.add_argument("--layers", type=parse_int_range, default=None,
                   help="prunable conv layer indices, e.g. 0,2,5 (default: all but the classifier)")
    p.add_argument("--lr", type=float, default=1e-2, help="fine-tune learning rate")
    p.add_argument("--batch-size", type=_positive_int, default=1, help="fine-tune minibatch size")
    p.add_argument("--seed", type=int, default=0, help="fine-tune shuffle seed")
    _add_data_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_prune)

    p = sub.add_parser("roadmap", help="build the (itr, p) grid of pruned variants")
    p.add_argument("--checkpoint", help="base model checkpoint (trained from scratch if omitted)")
    p.add_argument("--itrs", type=parse_int_range, default=[1, 2, 3],
                   help="iteration counts, list or start:stop:step (default 1,2,3)")
    p.add_argument("--ps", type=parse_range, default=parse_range("0.1:0.9:0.1"),
                   help="pruning ratios, list or inclusive start:stop:step (default 0.1:0.9:0.1)")
    p.add_argument("--fine-tune-epochs", type=_nonneg_int, default=5, help="epochs after each round")
    p.add_argument("--base-epochs", type=_positive_int, default=50,
                   help="epochs for the base model when no checkpoint is given")
    p.add_argument("--lr", type=float, default=1e-2, help="learning rate")
    p.add_argument("--batch-size", type=_positive_int, default=1, help="minibatch size")
    p.add_argument("--seed", type=int, default=0, help="base seed; each ratio derives its own")
    p.add_argument("--jobs", type=_positive_int, default=1, help="parallel ratio builds")
    p.add_argument("--profile-latency", action="store_true",
                   help="time every variant (latency then appears in the CSV)")
    p.add_argument("--latency-reps", type=_positive_int, default=30, help="timed forward passes")
    _add_data_flags(p)
    out_flag(p)
    p.set_defaults(func=cmd_roadmap)

    p = sub.add_parser("select", help="pick the most accurate roadmap variant within a budget")
    p.add_argument("--roadmap", required=True, help="roadmap.json")
    p.add_argument("--max-flops", type=parse_quantity, help="FLOPs per image (k/M/G suffix ok)")
    p.add_argument("--max-energy", type=parse_quantity, help="joules per image")
    p.add_argument("--max-latency", type=parse_quantity, help="milliseconds per image")
    p.add_argument("--max-size", type=parse_quantity, help="parameter megabytes")
    p.add_argument("--min-accuracy", type=float, help="held-out pixel accuracy in [0, 1]")
    p.set_defaults(func=cmd_select)

    p = sub.add_parser("profile", help="FLOPs, size and energy of a model")
    p.add_argument("--checkpoint", help="checkpoint to profile")
    p.add_argument("--model", choices=("reference", "vgg16-fcn"), default="reference",
                   help="built-in architecture when no checkpoint is given")
    p.add_argument("--input-size", type=_positive_int, default=None,
                   help="input side (default 32 for reference, 384 for vgg16-fcn)")
    p.add_argument("--latency-reps", type=_nonneg_int, default=0, help="also time N forward passes")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("simulate", help="run a UAV survey mission from a config JSON")
    p.add_argument("--config", required=True, help="mission config JSON")
    p.add_argument("--ledger", help="ledger JSON-lines file (default: <out-dir>/ledger.jsonl)")
    p.add_argument("--contract-config", help="contract settings JSON")
    p.add_argument("--register-missing", action="store_true",
                   help="register a placeholder farmer for every unregistered field")
    p.add_argument("--crop", default="wheat", help="crop of placeholder farmers")
    p.add_argument("--yield-estimate", type=float, default=100.0,
                   help="field yield estimate of placeholder farmers")
    out_flag(p)
    p.set_defaults(func=cmd_simulate)

    lp = sub.add_parser("ledger", help="supply-chain ledger operations")
    lsub = lp.add_subparsers(dest="ledger_command", metavar="LEDGER_COMMAND", parser_class=_Parser)

    def ledger_flags(q, mutating=True):
        q.add_argument("--ledger", required=True, help="ledger JSON-lines file")
        q.add_argument("--contract-config", help="contract settings JSON (stored beside the ledger)")
        if mutating:
            q.add_argument("--timestamp", type=int, default=0, help="mission timestamp")
            q.add_argument("--regulator", help="rewrite this anomaly report JSON when a flag is raised")

    q = lsub.add_parser("register-farmer", help="register a farmer and their field")
    ledger_flags(q)
    q.add_argument("--id", required=True, help="farmer unique id")
    q.add_argument("--crop", required=True, help="crop type")
    q.add_argument("--lat", type=float, required=True, help="latitude")
    q.add_argument("--lon", type=float, required=True, help="longitude")
    q.add_argument("--yield-estimate", type=float, required=True,
                   help="tonnes per unit biomass fraction for this field")
    q.add_argument("--field-id", help="field id (default: the farmer id)")
    q.set_defaults(func=cmd_register_farmer)

    q = lsub.add_parser("register-plant", help="register a processing plant")
    ledger_flags(q)
    q.add_argument("--id", required=True, help="plant unique id")
    q.add_argument("--product", required=True, help="product type")
    q.set_defaults(func=cmd_register_plant)

    q = lsub.add_parser("trade", help="record a crop sale from a farmer to a plant")
    ledger_flags(q)
    q.add_argument("--seller", required=True, help="farmer id")
    q.add_argument("--buyer", required=True, help="plant id")
    q.add_argument("--quantity", type=parse_quantity, required=True, help="tonnes")
    q.add_argument("--product", required=True, help="product id")
    q.set_defaults(func=cmd_trade)

    q = lsub.add_parser("report-biomass", help="record a biomass reading (runs the biomass audit)")
    ledger_flags(q)
    q.add_argument("--field", required=True, help="field id")
    q.add_argument("--fraction", type=float, required=True, help="biomass fraction in [0, 1]")
    q.add_argument("--lat", type=float, default=0.0, help="capture latitude")
    q.add_argument("--lon", type=float, default=0.0, help="capture longitude")
    q.set_defaults(func=cmd_report_biomass)

    q = lsub.add_parser("report-output", help="record plant output (runs the output audit)")
    ledger_flags(q)
    q.add_argument("--plant", required=True, help="plant id")
    q.add_argument("--product", required=True, help="product id")
    q.add_argument("--quantity", type=parse_quantity, required=True, help="tonnes")
    q.set_defaults(func=cmd_report_output)

    q = lsub.add_parser("audit", help="write every anomaly flag on the chain as a JSON report")
    ledger_flags(q, mutating=False)
    q.add_argument("--report", help="report path (default: <out-dir>/anomaly_report.json)")
    out_flag(q)
    q.set_defaults(func=cmd_audit)

    q = lsub.add_parser("verify", help="check the hash chain; prints Ok or CorruptAt(index)")
    q.add_argument("--ledger", required=True, help="ledger JSON-lines file")
    q.set_defaults(func=cmd_verify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    argv = list(sys.argv[1:] if argv is None else argv)
    try:
        args = parser.parse_args(argv)
        if args.command is None:
            parser.print_help(sys.stderr)
            return 1
        if args.command == "ledger" and args.ledger_command is None:
            print(f"{parser.prog} ledger: error: a LEDGER_COMMAND is required", file=sys.stderr)
            return 1
        if args.command == "profile" and args.input_size is None:
            args.input_size = 384 if args.model == "vgg16-fcn" and not args.checkpoint else 32
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s")
        return args.func(args)
    except SystemExit as exc:  # --help and --version
        return 0 if exc.code in (0, None) else 1
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (PrunemapError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return 2


if __name__ == "__main__":
    sys.exit(main())
