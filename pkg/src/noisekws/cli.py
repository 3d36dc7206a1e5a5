"""Command-line entry point.

Subcommands: prepare (index a corpus), pretrain (baseline / noise-aware
models), adapt (few-shot head adaptation), evaluate (accuracy over noise
conditions), experiment (full grids emitted as long-format CSV, one
accuracy per row). Every artifact gets a sibling .run.json manifest
recording the command, config, seeds, and input/output checksums.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import os
import sys
import time
from dataclasses import asdict
from pathlib import Path

from . import data, train
from .adapt import AdaptConfig, adaptation_sweep
from .adapt import adapt as adapt_fc
from .errors import NoiseKwsError
from .noise import (
    ONSITE_SOURCES,
    PRETRAIN_SOURCES,
    SNR_GRID_DB,
    NoiseBank,
    NoiseCondition,
    mix_at_snr,
)
from .profiles import PROFILES, Profile, apply_overrides, load_config
from .train import NOISE_AWARE_FRACTIONS, NoiseAwareMix, evaluate
from .weights_io import file_checksum, load_weight_file, save_weights

DATA_ROOT_ENV = "NOISEKWS_DATA_ROOT"

FIGURE_COLUMNS = ("figure_id", "model_id", "noise_source", "train_snr_db",
                  "test_snr_db", "shots", "epochs", "seed", "accuracy")
EVAL_COLUMNS = ("model_id", "noise_source", "snr_db", "accuracy", "n_examples")

FIG6_DEFAULT_SNRS = (-3, 3, 9)


def _sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _write_run_manifest(out_path, command, args_ns, config_snapshot, inputs, outputs):
    manifest = {
        "command": command,
        "argv": {k: str(v) for k, v in vars(args_ns).items() if v is not None},
        "config": config_snapshot,
        "inputs": {str(p): _sha256(p) for p in inputs if Path(p).exists()},
        "outputs": {str(p): _sha256(p) for p in outputs},
        "finished_utc": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
    }
    path = Path(str(out_path) + ".run.json")
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def _resolve_data_root(args) -> Path:
    root = args.data_root or os.environ.get(DATA_ROOT_ENV)
    if not root:
        raise NoiseKwsError(
            f"no corpus directory: pass --data-root or set {DATA_ROOT_ENV}"
        )
    return Path(root)


def _profile(args) -> Profile:
    profile = PROFILES[args.profile]
    if getattr(args, "config", None):
        profile = apply_overrides(profile, load_config(args.config))
    return profile


def _load_index(args) -> data.CorpusIndex:
    if getattr(args, "manifest", None):
        return data.load_manifest(args.manifest)
    root = _resolve_data_root(args)
    index = data.scan_corpus(root)
    return data.add_silence_refs(index, args.seed)


def _write_csv(path, columns, rows) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        writer.writerows(rows)


def _fmt(value) -> str:
    return "" if value is None else str(value)


# ---------------------------------------------------------------------------
# subcommands


def cmd_prepare(args) -> int:
    root = _resolve_data_root(args)
    index = data.scan_corpus(root)
    index = data.add_silence_refs(index, args.seed)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    data.write_manifest(index, out)
    reloaded = data.load_manifest(out)
    if len(reloaded.refs) != len(index.refs):
        raise NoiseKwsError("manifest failed its readback check")
    _write_run_manifest(out, "prepare", args, {"seed": args.seed},
                        inputs=[root / "validation_list.txt", root / "testing_list.txt"],
                        outputs=[out])
    print(f"wrote {len(index.refs)} rows to {out}")
    return 0


def cmd_pretrain(args) -> int:
    profile = _profile(args)
    index = _load_index(args)
    root = _resolve_data_root(args)
    cfg = profile.train_config(args.seed)
    if args.kind == "noise-aware":
        bank = NoiseBank(args.noise_dir)
        mix = NoiseAwareMix(args.fraction)
        params, log = train.build_noise_aware(index, mix, cfg, profile.arch, root,
                                              bank, per_class_cap=profile.per_class_cap)
    else:
        params, log = train.build_baseline(index, cfg, profile.arch, root,
                                           per_class_cap=profile.per_class_cap)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(params, profile.arch, out)
    load_weight_file(out)  # integrity check before claiming success
    log_path = out.with_suffix(out.suffix + ".log.csv")
    train.write_training_log(log_path, log)
    _write_run_manifest(out, "pretrain", args,
                        {"profile": profile.name, "train": asdict(cfg)},
                        inputs=[p for p in [args.manifest] if p],
                        outputs=[out, log_path])
    final = log[-1]
    print(f"trained {args.kind} for {len(log)} epochs; "
          f"final val_acc={final.val_acc:.4f}; wrote {out}")
    return 0


def cmd_adapt(args) -> int:
    profile = _profile(args)
    params, arch, _ = load_weight_file(args.weights)
    index = _load_index(args)
    root = _resolve_data_root(args)
    bank = NoiseBank(args.noise_dir)
    cond = NoiseCondition(args.source, args.snr)
    shots = data.sample_shots(index, cond, args.shots, args.seed, root, bank)
    lr = args.adapt_lr if args.adapt_lr is not None else profile.adapt_lr
    adapted = adapt_fc(params, arch, shots,
                       AdaptConfig(args.shots, args.epochs, lr), args.seed)
    provenance = adapted.provenance
    provenance.base_checksum = file_checksum(args.weights)
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    save_weights(adapted.to_params(), arch, out, provenance=provenance.to_json())
    load_weight_file(out)
    _write_run_manifest(out, "adapt", args, {"adapt_lr": lr},
                        inputs=[args.weights], outputs=[out])
    print(f"adapted to {cond.source} at {cond.snr_db} dB "
          f"({provenance.steps} steps); wrote {out}")
    return 0


def _parse_conditions(raw: str) -> list[NoiseCondition | None]:
    conditions: list[NoiseCondition | None] = []
    for token in raw.split(","):
        token = token.strip()
        if not token:
            continue
        if token == "clean":
            conditions.append(None)
        else:
            source, _, snr = token.partition(":")
            if not snr:
                raise NoiseKwsError(f"condition {token!r} must be 'clean' or 'source:snr'")
            conditions.append(NoiseCondition(source, int(snr)))
    if not conditions:
        raise NoiseKwsError("no conditions given")
    return conditions


def cmd_evaluate(args) -> int:
    profile = _profile(args)
    params, arch, _ = load_weight_file(args.weights)
    index = _load_index(args)
    root = _resolve_data_root(args)
    bank = NoiseBank(args.noise_dir)
    model_id = args.model_id or Path(args.weights).stem
    conditions = _parse_conditions(args.conditions)
    clean_test = data.build_clean_set(index, "test", args.seed, root,
                                      per_class_cap=profile.per_class_cap)
    rows = []
    for cond in conditions:
        if cond is None:
            pairs = clean_test
            source, snr = "clean", None
        else:
            pairs = []
            for i, (clip, label) in enumerate(clean_test):
                mix_seed = data.derive_seed(args.seed, "eval", cond.source, cond.snr_db, i)
                pairs.append((
                    mix_at_snr(clip, bank.clip(cond.source, seed=mix_seed),
                                         cond.snr_db, mix_seed),
                    label,
                ))
            source, snr = cond.source, cond.snr_db
        x, y = data.featurize(pairs)
        row = evaluate(params, arch, x, y, model_id, source, snr)
        rows.append([row.model_id, row.noise_source, _fmt(row.snr_db),
                     f"{row.accuracy:.6f}", row.n_examples])
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    _write_csv(out, EVAL_COLUMNS, rows)
    _write_run_manifest(out, "evaluate", args, {"profile": profile.name},
                        inputs=[args.weights], outputs=[out])
    print(f"wrote {len(rows)} rows to {out}")
    return 0


def _pretrained(kind, fraction, profile, seed, index, root, bank, models_dir):
    """Train-or-load cache for experiment prerequisites."""
    tag = kind if fraction is None else f"{kind}_{int(round(fraction * 100))}"
    path = Path(models_dir) / f"{tag}_{profile.name}_s{seed}.nkws"
    if path.exists():
        params, _, _ = load_weight_file(path)
        return params, path
    cfg = profile.train_config(seed)
    if kind == "noise_aware":
        params, log = train.build_noise_aware(index, NoiseAwareMix(fraction), cfg,
                                              profile.arch, root, bank,
                                              per_class_cap=profile.per_class_cap)
    else:
        params, log = train.build_baseline(index, cfg, profile.arch, root,
                                           per_class_cap=profile.per_class_cap)
    path.parent.mkdir(parents=True, exist_ok=True)
    save_weights(params, profile.arch, path)
    train.write_training_log(path.with_suffix(".log.csv"), log)
    return params, path


def _eval_grid_rows(figure_id, models, arch, index, root, bank, sources, snrs,
                    profile, seed):
    """Accuracy of full models over a (source, SNR) grid; features are
    refreshed per condition, models share the featurized batches."""
    clean_test = data.build_clean_set(index, "test", seed, root,
                                      per_class_cap=profile.per_class_cap)
    rows = []
    for source in sources:
        for snr in snrs:
            pairs = []
            for i, (clip, label) in enumerate(clean_test):
                mix_seed = data.derive_seed(seed, "grid", source, snr, i)
                pairs.append((mix_at_snr(
                    clip, bank.clip(source, seed=mix_seed), snr, mix_seed), label))
            x, y = data.featurize(pairs)
            for model_id, params in models.items():
                acc = evaluate(params, arch, x, y).accuracy
                rows.append([figure_id, model_id, source, "", snr, "", "",
                             seed, f"{acc:.6f}"])
    return rows


def cmd_experiment(args) -> int:
    profile = _profile(args)
    if profile.name == "paper":
        print("warning: the paper profile is a long-running optional job; "
              "desk is the supported quick profile", file=sys.stderr)
    index = _load_index(args)
    root = _resolve_data_root(args)
    bank = NoiseBank(args.noise_dir)
    seeds = [int(s) for s in args.seeds.split(",")]
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    models_dir = args.models_dir or out.parent / "models"
    rows = []

    if args.figure == "fig3":
        for seed in seeds:
            models = {}
            for fraction in NOISE_AWARE_FRACTIONS:
                params, _ = _pretrained("noise_aware", fraction, profile, seed,
                                        index, root, bank, models_dir)
                models[f"noise_aware_{int(round(fraction * 100))}"] = params
            rows += _eval_grid_rows("fig3", models, profile.arch, index, root,
                                    bank, PRETRAIN_SOURCES, SNR_GRID_DB, profile, seed)
    elif args.figure == "fig4":
        for seed in seeds:
            models = {}
            for kind, fraction in (("baseline", None), ("noise_aware", 1.0)):
                params, _ = _pretrained(kind, fraction, profile, seed,
                                        index, root, bank, models_dir)
                tag = kind if fraction is None else f"{kind}_{int(round(fraction * 100))}"
                models[tag] = params
            rows += _eval_grid_rows("fig4", models, profile.arch, index, root,
                                    bank, PRETRAIN_SOURCES, SNR_GRID_DB, profile, seed)
    elif args.figure in ("fig5", "fig6"):
        base_seed = args.seed
        bases = {}
        kinds = (("baseline", None), ("noise_aware", 1.0)) if args.figure == "fig5" \
            else (("baseline", None),)
        for kind, fraction in kinds:
            params, _ = _pretrained(kind, fraction, profile, base_seed,
                                    index, root, bank, models_dir)
            tag = kind if fraction is None else f"{kind}_{int(round(fraction * 100))}"
            bases[f"{tag}_adapted"] = params
        if args.figure == "fig5":
            adapt_snrs, shot_counts, epoch_counts = (-3, 24), (1,), (1,)
            test_snrs = SNR_GRID_DB
        else:
            adapt_snrs = tuple(int(s) for s in args.snrs.split(","))
            shot_counts, epoch_counts = (1, 5), (1, 2, 3, 4, 5)
            test_snrs = adapt_snrs
        sweep = adaptation_sweep(bases, profile.arch, index, ONSITE_SOURCES,
                                 adapt_snrs, shot_counts, epoch_counts, seeds,
                                 root, bank, lr=profile.adapt_lr,
                                 test_seed=base_seed,
                                 per_class_cap=profile.per_class_cap)
        for r in sweep:
            if args.figure == "fig6" and r.test_snr_db != r.train_snr_db:
                continue
            rows.append([args.figure, r.model_id, r.noise_source, r.train_snr_db,
                         r.test_snr_db, r.shots, r.epochs, r.seed,
                         f"{r.accuracy:.6f}"])
    _write_csv(out, FIGURE_COLUMNS, rows)
    if not rows:
        raise NoiseKwsError("experiment produced no rows")
    _write_run_manifest(out, "experiment", args,
                        {"profile": profile.name, "figure": args.figure,
                         "seeds": seeds},
                        inputs=[p for p in [args.manifest] if p], outputs=[out])
    print(f"wrote {len(rows)} rows to {out}")
    return 0


# ---------------------------------------------------------------------------
# argument parsing


def _add_common(parser, *, needs_out=True):
    parser.add_argument("--config", help="key = value overrides for the profile")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--profile", choices=sorted(PROFILES), default="desk")
    parser.add_argument("--data-root", help=f"corpus root (or ${DATA_ROOT_ENV})")
    parser.add_argument("--noise-dir", help="directory of noise WAV files")
    parser.add_argument("--manifest", help="manifest CSV from `prepare`")
    if needs_out:
        parser.add_argument("--out", required=True, help="output path")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="noisekws",
        description="Keyword spotting with SNR-controlled noise and few-shot "
                    "last-layer adaptation.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("prepare", help="index a corpus into a manifest CSV")
    _add_common(p)
    p.set_defaults(func=cmd_prepare)

    p = sub.add_parser("pretrain", help="train a baseline or noise-aware model")
    _add_common(p)
    p.add_argument("--kind", choices=("baseline", "noise-aware"), default="baseline")
    p.add_argument("--fraction", type=float,
                   help="extra noisy share for noise-aware (0.2..1.0)")
    p.set_defaults(func=cmd_pretrain)

    p = sub.add_parser("adapt", help="few-shot adapt the final layer to a condition")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--source", required=True)
    p.add_argument("--snr", type=int, required=True, choices=SNR_GRID_DB)
    p.add_argument("--shots", type=int, default=1, choices=range(1, 6))
    p.add_argument("--epochs", type=int, default=1, choices=range(1, 6))
    p.add_argument("--adapt-lr", type=float, help="override the profile adaptation rate")
    p.set_defaults(func=cmd_adapt)

    p = sub.add_parser("evaluate", help="accuracy over noise conditions, as CSV")
    _add_common(p)
    p.add_argument("--weights", required=True)
    p.add_argument("--conditions", default="clean",
                   help="comma list of 'clean' or 'source:snr'")
    p.add_argument("--model-id", help="row label (default: weights file stem)")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("experiment", help="run a figure grid and emit its CSV")
    _add_common(p)
    p.add_argument("--figure", required=True, choices=("fig3", "fig4", "fig5", "fig6"))
    p.add_argument("--seeds", default="0", help="comma list of row seeds")
    p.add_argument("--snrs", default=",".join(str(s) for s in FIG6_DEFAULT_SNRS),
                   help="adaptation SNR subset (fig6)")
    p.add_argument("--models-dir", help="cache for pretrained weights")
    p.set_defaults(func=cmd_experiment)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command == "pretrain" and args.kind == "noise-aware":
        if args.fraction is None or not any(
            abs(args.fraction - f) < 1e-9 for f in NOISE_AWARE_FRACTIONS
        ):
            parser.error(f"--kind noise-aware needs --fraction in {NOISE_AWARE_FRACTIONS}")
    try:
        return args.func(args)
    except NoiseKwsError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())


if __name__ == "__main__":
    entrypoint()
