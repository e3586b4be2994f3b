"""Command-line entry point: kernel caching, homophily tables, training, verify."""
from __future__ import annotations

import argparse
import hashlib
import json
import os
import sys
import time

import numpy as np

from . import __version__
from .augment import AugmentError
from .data import DataError, load_tudataset
from .kernels import (
    KernelError,
    edge_homophily,
    knn_gog,
    load_similarity,
    make_kernel_id,
    save_similarity,
    similarity_matrix,
)
from .training import TrainConfig, TrainingError, history_to_csv, run_experiment

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_DATA = 2
EXIT_PROPERTY = 3

_DEFAULTS = {
    "data_dir": "data",
    "kernel": "sp",
    "wl_iters": 3,
    "k": 2,
    "mode": "g2gnn_node",
    "ratio": "1:9",
    "splits": 10,
    "delta": 0.1,
    "T": 2,
    "tau": 0.5,
    "prop_layers": 2,
    "lr": 0.01,
    "epochs": 500,
    "batch": 32,
    "hidden": 128,
    "patience": 50,
    "weight_decay": 0.0,
    "train_fraction": 0.25,
    "val_fraction": 0.25,
    "workers": 1,
}


class CliError(Exception):
    def __init__(self, message: str, code: int = EXIT_USAGE):
        super().__init__(message)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise CliError(message, EXIT_USAGE)


def _build_parser() -> _Parser:
    parser = _Parser(prog="gognn", description=__doc__)
    parser.add_argument("--version", action="version", version=f"gognn {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--dataset", required=True, help="dataset name (TUDataset directory)")
        p.add_argument("--data-dir", dest="data_dir", help="root holding <name>/ directories")
        p.add_argument("--config", help="JSON config file (flags override it)")
        p.add_argument("--seed", type=int, help="RNG seed; generated and recorded when absent")

    kernel = sub.add_parser("kernel", help="compute and cache the similarity matrix")
    common(kernel)
    kernel.add_argument("--kernel", choices=("sp", "wl"))
    kernel.add_argument("--wl-iters", dest="wl_iters", type=int)
    kernel.add_argument("--workers", type=int)
    kernel.add_argument("--raw", action="store_true", help="skip cosine normalization")

    homophily = sub.add_parser("homophily", help="edge homophily of kNN GoGs over a k range")
    common(homophily)
    homophily.add_argument("--kernel", choices=("sp", "wl"))
    homophily.add_argument("--wl-iters", dest="wl_iters", type=int)
    homophily.add_argument("--k", type=int)
    homophily.add_argument("--k-range", dest="k_range", help="A:B inclusive range of k values")
    homophily.add_argument("--csv", help="write rows to this CSV file")
    homophily.add_argument("--workers", type=int)

    train = sub.add_parser("train", help="run the imbalanced-split experiment harness")
    common(train)
    train.add_argument("--mode", choices=("g2gnn_edge", "g2gnn_node", "gin_plain", "gin_up", "gin_rw"))
    train.add_argument("--kernel", choices=("sp", "wl"))
    train.add_argument("--wl-iters", dest="wl_iters", type=int)
    train.add_argument("--ratio", help="minority:majority, e.g. 1:9")
    train.add_argument("--sweep-ratios", dest="sweep_ratios", help="comma-separated ratio list")
    train.add_argument("--splits", type=int)
    train.add_argument("--k", type=int)
    train.add_argument("--delta", type=float)
    train.add_argument("--T", dest="T", type=int)
    train.add_argument("--tau", type=float)
    train.add_argument("--prop-layers", dest="prop_layers", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--epochs", type=int)
    train.add_argument("--batch", type=int)
    train.add_argument("--hidden", type=int)
    train.add_argument("--patience", type=int)
    train.add_argument("--weight-decay", dest="weight_decay", type=float)
    train.add_argument("--minority-class", dest="minority_class", type=int)
    train.add_argument("--csv", help="report CSV path")
    train.add_argument("--json", help="report JSON path")
    train.add_argument("--history", help="per-split training-history CSV path prefix")

    verify = sub.add_parser("verify", help="run the numerical property harness")
    verify.add_argument("--seed", type=int)
    verify.add_argument("--json", help="write machine-readable results here")
    verify.add_argument("--inject-fault", dest="inject_fault", action="store_true",
                        help=argparse.SUPPRESS)
    return parser


def _resolve(args: argparse.Namespace) -> dict:
    """Materialize config: CLI flags > JSON config file > built-in defaults."""
    resolved = dict(_DEFAULTS)
    config_path = getattr(args, "config", None)
    if config_path:
        try:
            with open(config_path) as fh:
                file_cfg = json.load(fh)
        except OSError as exc:
            raise CliError(f"cannot read config file: {exc}", EXIT_DATA)
        except json.JSONDecodeError as exc:
            raise CliError(f"config file is not valid JSON: {exc}", EXIT_DATA)
        unknown = set(file_cfg) - set(_DEFAULTS) - {"mode", "dataset", "minority_class"}
        if unknown:
            raise CliError(f"unknown config keys: {sorted(unknown)}")
        resolved.update(file_cfg)
    for key, value in vars(args).items():
        if value is not None and key not in ("command", "config"):
            resolved[key] = value
    if resolved.get("seed") is None:
        resolved["seed"] = int(np.random.SeedSequence().generate_state(1)[0])
    return resolved


def _parse_ratio(text: str) -> tuple[int, int]:
    parts = text.split(":")
    if len(parts) != 2:
        raise CliError(f"ratio must look like A:B, got {text!r}")
    try:
        a, b = int(parts[0]), int(parts[1])
    except ValueError:
        raise CliError(f"ratio must hold integers, got {text!r}")
    if a < 1 or b < 1:
        raise CliError(f"ratio parts must be positive, got {text!r}")
    return a, b


def dataset_checksum(data_dir: str, name: str) -> str:
    digest = hashlib.sha256()
    directory = os.path.join(data_dir, name)
    for suffix in ("_A.txt", "_graph_indicator.txt", "_graph_labels.txt",
                   "_node_labels.txt", "_node_attributes.txt"):
        path = os.path.join(directory, f"{name}{suffix}")
        if os.path.exists(path):
            digest.update(suffix.encode())
            with open(path, "rb") as fh:
                digest.update(fh.read())
    return digest.hexdigest()


def _cache_dir() -> str:
    return os.environ.get("GOG_CACHE_DIR", ".gog_cache")


def _cache_path(dataset: str, kernel_id: str, normalized: bool) -> str:
    token = kernel_id.replace(":", "-")
    return os.path.join(_cache_dir(), f"{dataset}_{token}_n{int(normalized)}.gogsim")


def _load_dataset(resolved: dict):
    name = resolved["dataset"]
    directory = os.path.join(resolved["data_dir"], name)
    if not os.path.isdir(directory):
        raise CliError(
            f"dataset directory {directory} not found (set --data-dir)", EXIT_DATA
        )
    return load_tudataset(directory, name)


def _manifest(resolved: dict, command: str, extra: dict) -> dict:
    manifest = {
        "tool_version": __version__,
        "command": command,
        "config": {k: v for k, v in sorted(resolved.items())},
        "seed": resolved["seed"],
    }
    manifest.update(extra)
    return manifest


def _write_manifest(path: str, manifest: dict) -> None:
    with open(path, "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _obtain_similarity(dataset, resolved: dict, out=sys.stdout):
    """Load the cached similarity matrix or compute and persist it."""
    kernel_id = make_kernel_id(resolved["kernel"], resolved["wl_iters"])
    normalized = not resolved.get("raw", False)
    path = _cache_path(dataset.name, kernel_id, normalized)
    if os.path.exists(path):
        try:
            cached = load_similarity(path)
        except KernelError as exc:
            print(f"warning: ignoring unreadable cache ({exc})", file=sys.stderr)
        else:
            if (cached.kernel_id == kernel_id and cached.normalized == normalized
                    and cached.n == len(dataset)):
                print(f"cache hit: {path}", file=out)
                return cached, path, 0.0
            print(
                f"warning: cache {path} holds {cached.kernel_id} N={cached.n} "
                f"normalized={int(cached.normalized)}; recomputing",
                file=sys.stderr,
            )
    started = time.perf_counter()
    s = similarity_matrix(dataset, kernel_id, normalize=normalized,
                          workers=resolved["workers"])
    elapsed = time.perf_counter() - started
    os.makedirs(_cache_dir(), exist_ok=True)
    save_similarity(path, s)
    print(f"similarity matrix {s.n}x{s.n} [{kernel_id}] computed in {elapsed:.3f} s -> {path}",
          file=out)
    return s, path, elapsed


def cmd_kernel(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    dataset = _load_dataset(resolved)
    _, path, _ = _obtain_similarity(dataset, resolved)
    _write_manifest(path + ".manifest.json", _manifest(resolved, "kernel", {
        "dataset_checksum": dataset_checksum(resolved["data_dir"], dataset.name),
        "similarity_cache": path,
    }))
    return EXIT_OK


def cmd_homophily(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    dataset = _load_dataset(resolved)
    s, path, _ = _obtain_similarity(dataset, resolved)
    if resolved.get("k_range"):
        lo, hi = _parse_ratio(resolved["k_range"])
        ks = list(range(lo, hi + 1))
    else:
        ks = [resolved["k"]]
    labels = dataset.labels()
    rows = []
    print("kernel,k,homophily")
    for k in ks:
        try:
            value = f"{edge_homophily(knn_gog(s, k), labels):.6f}"
        except KernelError as exc:
            value = f"error({exc})"
        rows.append((s.kernel_id, k, value))
        print(f"{s.kernel_id},{k},{value}")
    if resolved.get("csv"):
        with open(resolved["csv"], "w") as fh:
            fh.write("kernel,k,homophily\n")
            for kernel_id, k, value in rows:
                fh.write(f"{kernel_id},{k},{value}\n")
    _write_manifest(path + ".homophily.manifest.json", _manifest(resolved, "homophily", {
        "dataset_checksum": dataset_checksum(resolved["data_dir"], dataset.name),
        "similarity_cache": path,
    }))
    return EXIT_OK


def _train_config(resolved: dict) -> TrainConfig:
    return TrainConfig(
        mode=resolved["mode"],
        k=resolved["k"],
        prop_layers=resolved["prop_layers"],
        delta=resolved["delta"],
        num_variants=resolved["T"],
        tau=resolved["tau"],
        learning_rate=resolved["lr"],
        weight_decay=resolved["weight_decay"],
        hidden_dim=resolved["hidden"],
        epochs=resolved["epochs"],
        batch_size=resolved["batch"],
        patience=resolved["patience"],
        seed=resolved["seed"],
    )


def _suffixed(path: str, tag: str) -> str:
    root, ext = os.path.splitext(path)
    return f"{root}_{tag}{ext}"


def cmd_train(args: argparse.Namespace) -> int:
    resolved = _resolve(args)
    dataset = _load_dataset(resolved)
    cfg = _train_config(resolved)

    if resolved.get("sweep_ratios"):
        ratios = [_parse_ratio(r) for r in resolved["sweep_ratios"].split(",")]
    else:
        ratios = [_parse_ratio(resolved["ratio"])]

    similarity = None
    cache_path = None
    if cfg.mode in ("g2gnn_edge", "g2gnn_node"):
        similarity, cache_path, _ = _obtain_similarity(dataset, resolved)

    multi = len(ratios) > 1
    for ratio in ratios:
        tag = f"{ratio[0]}-{ratio[1]}"
        out = run_experiment(
            dataset, cfg, resolved["splits"], ratio,
            similarity=similarity,
            train_fraction=resolved["train_fraction"],
            val_fraction=resolved["val_fraction"],
            minority_class=resolved.get("minority_class"),
            keep_history=bool(resolved.get("history")),
        )
        report, histories = out if isinstance(out, tuple) else (out, [])
        print(
            f"{dataset.name} {cfg.mode} ratio {report.ratio} over {resolved['splits']} splits: "
            f"F1-macro {report.mean_f1_macro:.4f} +/- {report.std_f1_macro:.4f}, "
            f"F1-micro {report.mean_f1_micro:.4f} +/- {report.std_f1_micro:.4f} "
            f"({report.runtime_s:.1f} s)"
        )
        manifest = _manifest(resolved, "train", {
            "dataset_checksum": dataset_checksum(resolved["data_dir"], dataset.name),
            "similarity_cache": cache_path,
            "ratio": report.ratio,
        })
        json_path = resolved.get("json")
        if json_path:
            json_path = _suffixed(json_path, tag) if multi else json_path
            with open(json_path, "w") as fh:
                json.dump(report.to_dict(), fh, indent=2)
                fh.write("\n")
            _write_manifest(json_path + ".manifest.json", manifest)
        csv_path = resolved.get("csv")
        if csv_path:
            csv_path = _suffixed(csv_path, tag) if multi else csv_path
            with open(csv_path, "w") as fh:
                fh.write(report.to_csv())
            if not json_path:
                _write_manifest(csv_path + ".manifest.json", manifest)
        if resolved.get("history"):
            for i, result in enumerate(histories):
                with open(_suffixed(resolved["history"], f"{tag}_split{i}"), "w") as fh:
                    fh.write(history_to_csv(result))
    return EXIT_OK


def cmd_verify(args: argparse.Namespace) -> int:
    from .checks import run_all_checks

    seed = args.seed if args.seed is not None else 0
    results = run_all_checks(seed=seed, inject_fault=args.inject_fault)
    for name, outcome in results.items():
        if name == "passed":
            continue
        status = "PASS" if outcome.get("passed") else "FAIL"
        print(f"{status} {name}")
        if not outcome.get("passed"):
            detail = {k: v for k, v in outcome.items() if k != "passed"}
            print(f"  {json.dumps(detail, default=str)}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(results, fh, indent=2, default=str)
            fh.write("\n")
    return EXIT_OK if results["passed"] else EXIT_PROPERTY


def main(argv=None) -> int:
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
        if args.command == "kernel":
            return cmd_kernel(args)
        if args.command == "homophily":
            return cmd_homophily(args)
        if args.command == "train":
            return cmd_train(args)
        return cmd_verify(args)
    except CliError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except (DataError, KernelError, OSError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (TrainingError, AugmentError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
