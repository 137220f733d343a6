"""Command-line front end.

Subcommands: gen-data, train, evaluate, authenticate, report. Every command
resolves its configuration the same way: built-in defaults, then the
BIOFUSE_SEED environment variable, then --config FILE, then --set KEY=VALUE
flags (--seed N is shorthand for --set seed=N).

Exit codes: 0 success (or authentic), 1 not authentic, 2 operational error.
"""
from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import ConfigFileError, load_config
from .dataio import (ManifestError, load_samples, read_image,
                     read_sequence_csv, read_wav)
from .datamodel import BiometricSample
from .pipeline import authenticate, evaluate_bundle, train_pipeline
from .serialize import BundleError, load_bundle, save_bundle
from .synthgen import GenConfig, gen_dataset, gen_split

EXIT_OK = 0
EXIT_NOT_AUTHENTIC = 1
EXIT_ERROR = 2


class CliError(Exception):
    """Operational failure to report on stderr with exit code 2."""


def _add_config_flags(p: argparse.ArgumentParser):
    p.add_argument("--config", metavar="FILE",
                   help="key = value configuration file")
    p.add_argument("--set", metavar="KEY=VALUE", action="append",
                   default=[], dest="overrides",
                   help="override one configuration key (repeatable)")
    p.add_argument("--seed", type=int, metavar="N",
                   help="shorthand for --set seed=N")


def _resolve_config(args):
    overrides = {}
    for item in args.overrides:
        key, sep, value = item.partition("=")
        if not sep or not key.strip():
            raise CliError(f"--set needs KEY=VALUE, got {item!r}")
        overrides[key.strip()] = value.strip()
    if args.seed is not None:
        overrides["seed"] = str(args.seed)
    try:
        return load_config(args.config, overrides)
    except (ConfigFileError, OSError) as e:
        raise CliError(str(e))


def _load_manifest_samples(path, what: str) -> list[BiometricSample]:
    try:
        samples = load_samples(path)
    except (ManifestError, OSError, ValueError) as e:
        raise CliError(f"{what}: {e}")
    if not samples:
        raise CliError(f"{what}: manifest {path} lists no samples")
    return samples


# ---------------------------------------------------------------------------
# subcommands


def _cmd_gen_data(args) -> int:
    cfg = _resolve_config(args)
    gen = GenConfig(n_subjects=cfg.n_subjects,
                    samples_per_subject=cfg.samples_per_subject,
                    seed=cfg.seed, noise=cfg.noise)
    manifest = gen_dataset(gen, args.out)
    train_path, eval_path = gen_split(manifest, cfg.train_fraction, cfg.seed)
    print(f"manifest: {manifest}")
    print(f"train split: {train_path}")
    print(f"eval split: {eval_path}")
    return EXIT_OK


def _cmd_train(args) -> int:
    cfg = _resolve_config(args)
    train_samples = _load_manifest_samples(args.data, "train data")
    eval_samples = None
    if args.eval:
        eval_samples = _load_manifest_samples(args.eval, "eval data")
    try:
        bundle, report = train_pipeline(
            train_samples, cfg, eval_samples=eval_samples,
            track_epochs=bool(eval_samples) and not args.no_epoch_metrics)
        save_bundle(args.out, bundle)
    except (ValueError, OSError) as e:
        raise CliError(str(e))
    report_path = Path(args.report or str(args.out) + ".report.json")
    report_path.write_text(report.to_json())
    print(f"model: {args.out}")
    print(f"report: {report_path}")
    if report.final:
        print(f"eval: far={report.final['far']:.4f} "
              f"frr={report.final['frr']:.4f} eer={report.final['eer']:.4f} "
              f"auc={report.final['auc']:.4f}")
    return EXIT_OK


def _cmd_evaluate(args) -> int:
    try:
        bundle = load_bundle(args.model)
    except (BundleError, OSError) as e:
        raise CliError(str(e))
    samples = _load_manifest_samples(args.data, "eval data")
    try:
        result = evaluate_bundle(bundle, samples)
    except ValueError as e:
        raise CliError(str(e))
    payload = result.metrics_dict()
    if args.report:
        Path(args.report).write_text(json.dumps(payload, indent=2) + "\n")
    if args.roc:
        Path(args.roc).write_text(result.roc.csv_text())
    print(json.dumps(payload))
    return EXIT_OK


def _probe_sample(args) -> BiometricSample:
    try:
        face = read_image(args.face)
        sig_image = read_image(args.signature_image)
        sig_sequence = read_sequence_csv(args.signature_sequence)
        audio, rate = read_wav(args.audio)
    except (OSError, ValueError) as e:
        raise CliError(str(e))
    try:
        return BiometricSample(subject_id="probe", face=face,
                               sig_image=sig_image,
                               sig_sequence=sig_sequence, audio=audio,
                               sample_rate=rate)
    except ValueError as e:
        raise CliError(f"probe sample invalid: {e}")


def _cmd_authenticate(args) -> int:
    try:
        bundle = load_bundle(args.model)
    except (BundleError, OSError) as e:
        raise CliError(str(e))
    sample = _probe_sample(args)
    try:
        outcome = authenticate(bundle, sample, args.subject)
    except ValueError as e:
        raise CliError(str(e))
    print(json.dumps(outcome))
    return EXIT_OK if outcome["decision"] == "authentic" \
        else EXIT_NOT_AUTHENTIC


def _series_line(name: str, values) -> str:
    if not values:
        return f"  {name}: (not recorded)"
    return (f"  {name}: start={values[0]:.4f} end={values[-1]:.4f} "
            f"n={len(values)}")


def _cmd_report(args) -> int:
    try:
        data = json.loads(Path(args.report).read_text())
    except (OSError, json.JSONDecodeError) as e:
        raise CliError(f"cannot read report: {e}")
    print(f"subjects: {len(data.get('subjects', []))} "
          f"train={data.get('n_train')} eval={data.get('n_eval')}")
    print(_series_line("loss", data.get("loss", [])))
    for name, series in sorted(data.get("accuracy", {}).items()):
        print(_series_line(f"accuracy[{name}]", series))
    print(_series_line("epoch_far", data.get("epoch_far", [])))
    print(_series_line("epoch_frr", data.get("epoch_frr", [])))
    final = data.get("final", {})
    if final:
        keys = ", ".join(f"{k}={final[k]:.4f}" if isinstance(final[k], float)
                         else f"{k}={final[k]}" for k in sorted(final))
        print(f"  final: {keys}")
    print(f"  wall_time_s: {data.get('wall_time_s', 0.0):.2f}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="biofuse",
        description="multi-modal biometric verification pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-data", help="write a synthetic dataset + splits")
    _add_config_flags(p)
    p.add_argument("--out", required=True, metavar="DIR",
                   help="output directory for samples and manifests")
    p.set_defaults(func=_cmd_gen_data)

    p = sub.add_parser("train", help="train a model on a manifest")
    _add_config_flags(p)
    p.add_argument("--data", required=True, metavar="MANIFEST",
                   help="training split manifest")
    p.add_argument("--eval", metavar="MANIFEST",
                   help="held-out split for per-epoch and final metrics")
    p.add_argument("--out", required=True, metavar="FILE",
                   help="model bundle output path")
    p.add_argument("--report", metavar="FILE",
                   help="report JSON path (default: <out>.report.json)")
    p.add_argument("--no-epoch-metrics", action="store_true",
                   help="skip per-epoch eval FAR/FRR (faster)")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("evaluate", help="score a model on a manifest")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--data", required=True, metavar="MANIFEST")
    p.add_argument("--report", metavar="FILE", help="metrics JSON path")
    p.add_argument("--roc", metavar="FILE", help="ROC sweep CSV path")
    p.set_defaults(func=_cmd_evaluate)

    p = sub.add_parser("authenticate",
                       help="verify one probe against a claimed identity")
    p.add_argument("--model", required=True, metavar="FILE")
    p.add_argument("--subject", required=True, metavar="ID",
                   help="claimed enrolled subject id")
    p.add_argument("--face", required=True, metavar="PPM")
    p.add_argument("--signature-image", required=True, metavar="PGM")
    p.add_argument("--signature-sequence", required=True, metavar="CSV")
    p.add_argument("--audio", required=True, metavar="WAV")
    p.set_defaults(func=_cmd_authenticate)

    p = sub.add_parser("report", help="print a saved report JSON")
    p.add_argument("--report", required=True, metavar="FILE")
    p.set_defaults(func=_cmd_report)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
