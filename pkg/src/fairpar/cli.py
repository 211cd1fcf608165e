"""Command-line interface: ``fairpar {generate,train,certify,probe,run}``.

Exit codes:
    0  success
    1  unexpected internal error
    2  usage error (bad flags)
    3  invalid configuration (malformed JSON, wrong version, bad values)
    4  invalid or missing input data
    5  a pipeline stage failed
"""

from __future__ import annotations

import argparse
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from .augmenter import SensitiveDirection, compute_direction, probe_curves
from .data import DatasetError, SyntheticSpec, generate_synthetic, load_dataset, save_dataset
from .nn import load_checkpoint, save_checkpoint
from .pipeline import (
    PipelineError,
    RunConfig,
    certify_nodes,
    default_synthetic_spec,
    fit,
    make_report,
    run,
    select_nodes,
    write_certificates,
    write_json,
)
from .smoothing import SmoothingConfig
from .training import SCHEMES, TrainConfig

EXIT_OK, EXIT_INTERNAL, EXIT_USAGE, EXIT_CONFIG, EXIT_DATA, EXIT_STAGE = 0, 1, 2, 3, 4, 5


class ConfigError(ValueError):
    pass


def _read_json(path) -> dict:
    try:
        obj = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError as exc:
        raise ConfigError(f"config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: malformed JSON ({exc})") from exc
    if not isinstance(obj, dict) or "version" not in obj:
        raise ConfigError(f"{path}: config must be a JSON object with a 'version' field")
    return obj


def _load_config(factory, path, default):
    if path is None:
        return default
    obj = _read_json(path)
    try:
        return factory(obj)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"{path}: {exc}") from exc


def _out_dir(path) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_generate(args) -> None:
    spec = _load_config(SyntheticSpec.from_dict, args.config, default_synthetic_spec())
    out = _out_dir(args.out)
    save_dataset(generate_synthetic(spec, args.seed), out / "dataset.csv")
    write_json(out / "synthetic.json", spec.to_dict())


def cmd_train(args) -> None:
    cfg = _load_config(TrainConfig.from_dict, args.config, TrainConfig())
    cfg = replace(cfg, seed=args.seed, **({"scheme": args.scheme} if args.scheme else {}))
    ds = load_dataset(args.data)
    direction, g, d, history = fit(ds, cfg)
    out = _out_dir(args.out)
    save_checkpoint(out / "checkpoint.json", g, d)
    write_json(out / "direction.json", direction.to_dict())
    write_json(out / "train_config.json", cfg.to_dict())
    history.write_csv(out / "history.csv")


def cmd_certify(args) -> None:
    smooth = _load_config(SmoothingConfig.from_dict, args.config, SmoothingConfig())
    model = Path(args.model)
    try:
        g, d = load_checkpoint(model / "checkpoint.json")
        direction = SensitiveDirection.from_dict(json.loads((model / "direction.json").read_text(encoding="utf-8")))
        train_cfg = TrainConfig.from_dict(json.loads((model / "train_config.json").read_text(encoding="utf-8")))
    except FileNotFoundError as exc:
        raise DatasetError(f"model directory incomplete: {exc.filename}") from exc
    except (ValueError, KeyError) as exc:
        raise ConfigError(f"{model}: {exc}") from exc
    ds = load_dataset(args.data)
    if ds.p != g.p:
        raise DatasetError(f"dataset has p = {ds.p} but the checkpoint expects p = {g.p}")
    eps = train_cfg.eps if args.eps is None else args.eps
    rows = select_nodes(ds, args.nodes, args.max_nodes)
    certs = certify_nodes(g, d, ds, direction, eps, smooth, args.seed, rows, args.workers)
    echo = {
        "version": "fairpar-certify-1",
        "train": train_cfg.to_dict(),
        "smoothing": smooth.to_dict(),
        "seed": args.seed,
        "nodes": args.nodes,
        "max_nodes": args.max_nodes,
    }
    report = make_report(g, d, ds, certs, echo, eps, eps * direction.alpha_norm)
    out = _out_dir(args.out)
    write_certificates(out / "certificates.jsonl", certs)
    write_json(out / "report.json", report.to_dict())
    print(report.summary(), end="")


def cmd_probe(args) -> None:
    ds = load_dataset(args.data)
    direction = compute_direction(ds)
    grid = np.linspace(-args.t_max, args.t_max, args.points)
    rows = probe_curves(ds, direction, grid, n_controls=args.controls, seed=args.seed)
    out = _out_dir(args.out)
    lines = ["t,angle,acc"] + [f"{t!r},{a!r},{acc!r}" for t, a, acc in rows]
    (out / "probe.csv").write_text("\n".join(lines) + "\n", encoding="utf-8")


def cmd_run(args) -> None:
    cfg = _load_config(RunConfig.from_dict, args.config, RunConfig())
    changes = {"seed": args.seed, "out": args.out}
    if args.nodes:
        changes["nodes"] = args.nodes
    if args.max_nodes is not None:
        changes["max_nodes"] = args.max_nodes
    if args.scheme:
        changes["train"] = replace(cfg.train, scheme=args.scheme)
    try:
        cfg = replace(cfg, **changes)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc
    report = run(cfg, workers=args.workers)
    print(report.summary(), end="")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fairpar", description="Fair adapter tuning and per-node fairness certification.")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, config_help):
        p.add_argument("--seed", type=int, default=0, help="master seed (default 0)")
        p.add_argument("--config", help=config_help)
        p.add_argument("--out", required=True, help="output directory")

    p = sub.add_parser("generate", help="write a synthetic dataset CSV")
    common(p, "synthetic spec JSON (default: the built-in biased spec)")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="train adapter and classifier, then harden the classifier")
    common(p, "train config JSON")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--scheme", choices=SCHEMES)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("certify", help="certify nodes with a trained model")
    common(p, "smoothing config JSON")
    p.add_argument("--data", required=True, help="dataset CSV")
    p.add_argument("--model", required=True, help="directory written by 'train'")
    p.add_argument("--nodes", choices=("test", "all"), default="test")
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--eps", type=float, help="override the training eps")
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_certify)

    p = sub.add_parser("probe", help="sensitive-probe accuracy along the direction and rotated controls")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--t-max", type=float, default=3.0)
    p.add_argument("--points", type=int, default=13)
    p.add_argument("--controls", type=int, default=100)
    p.set_defaults(func=cmd_probe)

    p = sub.add_parser("run", help="the whole pipeline")
    common(p, "run config JSON")
    p.add_argument("--scheme", choices=SCHEMES)
    p.add_argument("--nodes", choices=("test", "all"))
    p.add_argument("--max-nodes", type=int)
    p.add_argument("--workers", type=int, default=1)
    p.set_defaults(func=cmd_run)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_USAGE if exc.code else EXIT_OK
    if getattr(args, "workers", 1) < 1:
        print("error: --workers must be >= 1", file=sys.stderr)
        return EXIT_USAGE
    if args.seed < 0:
        print("error: --seed must be >= 0", file=sys.stderr)
        return EXIT_USAGE
    try:
        args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DatasetError, FileNotFoundError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except PipelineError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA if exc.stage == "data" else EXIT_STAGE
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_INTERNAL
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
