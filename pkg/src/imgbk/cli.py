"""Command-line entry point: ``imgbk <command> ...``.

Exit codes: 0 success, 2 usage, 3 data error, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import contextlib
import hashlib
import json
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__
from .analysis import profile
from .autodiff import save_params
from .errors import ConfigError, DatasetError, ImgbkError
from .graph import load_dataset, save_dataset, smallest_classes
from .model import GateMode, LossKind, ModelConfig
from .synth import SbmSpec, expected_homophily, sbm_generate
from .training import (
    TrainConfig,
    benchmark_epoch_time,
    lambda_sweep,
    mean_metrics,
    run_metrics,
    train,
    write_rows,
)

log = logging.getLogger("imgbk")

MODELS = {
    "gcn": (GateMode.NONE, LossKind.CE),
    "gbk": (GateMode.LEARNED, LossKind.CE),
    "im-gbk": (GateMode.LEARNED, LossKind.BAL_SOFTMAX),
    "fast-im-gbk": (GateMode.FAST, LossKind.BAL_SOFTMAX),
}

DATASET_FILES = ("meta.json", "edges.tsv", "features.tsv", "labels.tsv", "masks.tsv")


class UsageError(ConfigError):
    pass


def dataset_checksum(directory) -> str:
    h = hashlib.sha256()
    for name in DATASET_FILES:
        p = Path(directory) / name
        if p.is_file():
            h.update(name.encode())
            with open(p, "rb") as f:
                for chunk in iter(lambda: f.read(1 << 20), b""):
                    h.update(chunk)
    return h.hexdigest()


def parse_extreme(text: str, graph) -> tuple:
    """``classes=4,5,6,k=5`` or ``smallest=3,k=5`` -> (classes, k)."""
    classes, k = None, 5
    key = None
    for tok in text.split(","):
        tok = tok.strip()
        if "=" in tok:
            key, val = tok.split("=", 1)
        else:
            val = tok
        if key == "classes":
            classes = (classes or []) + [int(val)]
        elif key == "smallest":
            classes = smallest_classes(graph, int(val))
            key = None
        elif key == "k":
            k = int(val)
            key = None
        else:
            raise UsageError(f"cannot parse --extreme {text!r}")
    if not classes:
        raise UsageError("--extreme needs classes=... or smallest=N")
    return tuple(sorted(set(classes))), k


def parse_floats(text: str) -> list:
    """``0:5:0.5`` (inclusive range) or a comma list."""
    if ":" in text:
        lo, hi, step = (float(x) for x in text.split(":"))
        n = int(round((hi - lo) / step))
        return [round(lo + i * step, 10) for i in range(n + 1)]
    return [float(x) for x in text.split(",") if x]


def parse_ints(text: str) -> list:
    return [int(x) for x in text.split(",") if x]


def build_train_config(args, graph, model_name: str, seed: int) -> TrainConfig:
    if model_name not in MODELS:
        raise UsageError(f"unknown model {model_name!r}; choose from {', '.join(MODELS)}")
    mode, default_loss = MODELS[model_name]
    loss = LossKind(args.loss) if args.loss else default_loss
    lam = 1.0
    if args.lam is not None:
        if mode is GateMode.NONE:
            raise UsageError("--lambda does not apply to gcn (no gate)")
        if mode is GateMode.FAST:
            warnings.warn("fast-im-gbk has no gate loss; --lambda ignored", UserWarning, stacklevel=2)
        else:
            lam = args.lam
    if args.epsilon is not None and mode is not GateMode.FAST:
        warnings.warn("--epsilon only affects fast-im-gbk", UserWarning, stacklevel=2)
    sizes = (graph.n_features, *[args.hidden] * args.layers, graph.n_classes)
    mcfg = ModelConfig(
        layer_sizes=sizes,
        gate_mode=mode,
        epsilon=args.epsilon if args.epsilon is not None else 0.1,
        lam=lam if mode is GateMode.LEARNED else 1.0,
        tau=args.tau,
        loss_kind=loss,
        activation=args.activation,
        homophily_source=args.homophily_source,
    )
    extreme, k = ((), 5)
    if args.extreme:
        extreme, k = parse_extreme(args.extreme, graph)
    return TrainConfig(
        model=mcfg,
        epochs=args.epochs,
        lr=args.lr,
        weight_decay=args.weight_decay,
        seed=seed,
        early_stop_patience=args.patience,
        split=args.split,
        extreme_classes=extreme,
        extreme_k=k,
    )


def _write_json(path: Path, doc) -> None:
    path.write_text(json.dumps(doc, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def make_manifest(command: str, dataset_dir, bundle, cfg: TrainConfig, seeds) -> dict:
    return {
        "tool": "imgbk",
        "version": __version__,
        "command": command,
        "dataset": {
            "path": str(Path(dataset_dir).resolve()),
            "name": bundle.name,
            "checksum": dataset_checksum(dataset_dir),
        },
        "seeds": list(seeds),
        "config": cfg.to_dict(),
    }


def execute_run(manifest: dict, out: Path, bundle) -> dict:
    """Train according to a manifest and write every run artefact to ``out``."""
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", manifest)
    cfg = TrainConfig.from_dict(manifest["config"])
    result = train(bundle, cfg)
    metrics = run_metrics(result)
    result.history.write_csv(out / "history.csv")
    _write_json(out / "metrics.json", metrics)
    save_params(result.params, out / "checkpoint.json", extra={"config": cfg.model.to_dict()})
    return metrics


# ---------------------------------------------------------------------------
# commands


def cmd_analyze(args) -> int:
    d = Path(args.dataset)
    # statistics only need structure and labels; skip parsing the feature matrix
    bundle = load_dataset(d, load_features=False)
    meta = json.loads((d / "meta.json").read_text(encoding="utf-8"))
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", RuntimeWarning)
        _, report = profile(bundle)
    for w in caught:
        log.warning("%s", w.message)
    report["n_features"] = int(meta["n_features"])
    out = Path(args.out) if args.out else d
    out.mkdir(parents=True, exist_ok=True)
    _write_analysis(out, report)
    keys = ("name", "n_nodes", "n_edges", "n_edge_directions", "n_features", "n_classes", "imbalance_ratio", "hom_ratio")
    print(json.dumps({k: report[k] for k in keys}))
    return 0


def _write_analysis(out: Path, report: dict) -> None:
    _write_json(out / "stats.json", report)
    rows = [
        {"class": c, "count": report["counts"][c], "homophily": report["class_homophily"][c]}
        for c in range(report["n_classes"])
    ]
    rows = [{**r, "homophily": "" if r["homophily"] is None else r["homophily"]} for r in rows]
    write_rows(out / "per_class.csv", rows, ["class", "count", "homophily"])


def cmd_train(args) -> int:
    bundle = load_dataset(args.dataset)
    cfg = build_train_config(args, bundle.graph, args.model, args.seed)
    manifest = make_manifest("train", args.dataset, bundle, cfg, [args.seed])
    metrics = execute_run(manifest, Path(args.out), bundle)
    print(json.dumps({k: metrics["test"][k] for k in ("accuracy", "macro_f1", "auc_ovr_macro")}))
    return 0


def cmd_reproduce(args) -> int:
    manifest = json.loads(Path(args.manifest).read_text(encoding="utf-8"))
    ds = manifest["dataset"]
    directory = Path(args.dataset or ds["path"])
    if dataset_checksum(directory) != ds["checksum"]:
        raise DatasetError("dataset checksum differs from the manifest", path=directory)
    bundle = load_dataset(directory)
    metrics = execute_run(manifest, Path(args.out), bundle)
    print(json.dumps({k: metrics["test"][k] for k in ("accuracy", "macro_f1", "auc_ovr_macro")}))
    return 0


def cmd_bench(args) -> int:
    bundle = load_dataset(args.dataset)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    seeds = list(range(args.repeats))
    models = [m.strip() for m in args.models.split(",") if m.strip()]
    cfgs = {m: build_train_config(args, bundle.graph, m, seeds[0]) for m in models}
    _write_json(
        out / "manifest.json",
        {**make_manifest("bench", args.dataset, bundle, next(iter(cfgs.values())), seeds), "configs": {m: c.to_dict() for m, c in cfgs.items()}},
    )
    timing = []
    for m, cfg in cfgs.items():
        per_seed = [
            benchmark_epoch_time(bundle, {m: replace(cfg, seed=s)}, warmup=args.warmup, epochs=args.timed_epochs)[0]
            for s in seeds
        ]
        means = [r["mean_s_per_epoch"] for r in per_seed]
        timing.append({"model": m, "mean_s_per_epoch": float(np.mean(means)), "std": float(np.std(means))})
    write_rows(out / "timing.csv", timing, ["model", "mean_s_per_epoch", "std"])
    by = {r["model"]: r["mean_s_per_epoch"] for r in timing}
    for r in timing:
        print(f"{r['model']:12s} {r['mean_s_per_epoch']:.4f} s/epoch (std {r['std']:.4f})")
    if "fast-im-gbk" in by and "im-gbk" in by:
        print(f"fast-im-gbk / im-gbk epoch time ratio: {by['fast-im-gbk'] / by['im-gbk']:.3f}")
    if not args.timing_only:
        results = []
        for m, cfg in cfgs.items():
            reps = [run_metrics(train(bundle, replace(cfg, seed=s))) for s in seeds]
            results.append({"model": m, **mean_metrics(reps)})
        cols = ["model", *[k for k in results[0] if k != "model"]]
        write_rows(out / "results.csv", results, cols)
        for r in results:
            print(
                f"{r['model']:12s} acc {r['accuracy']:.3f}±{r['accuracy_std']:.3f}  "
                f"f1 {r['macro_f1']:.3f}±{r['macro_f1_std']:.3f}  auc {r['auc_ovr_macro']:.3f}±{r['auc_ovr_macro_std']:.3f}"
            )
    return 0


def cmd_sweep(args) -> int:
    bundle = load_dataset(args.dataset)
    if args.model not in ("gbk", "im-gbk"):
        raise UsageError("sweep-lambda needs a learned-gate model (gbk or im-gbk)")
    cfg = build_train_config(args, bundle.graph, args.model, 0)
    seeds = parse_ints(args.seeds)
    lambdas = parse_floats(args.lambdas)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    _write_json(out / "manifest.json", {**make_manifest("sweep-lambda", args.dataset, bundle, cfg, seeds), "lambdas": lambdas})
    rows = lambda_sweep(bundle, cfg, lambdas, seeds, out_csv=out / "lambda_sweep.csv")
    for r in rows:
        print(f"lambda={r['lambda']:<4} acc {r['accuracy']:.3f}  f1 {r['macro_f1']:.3f}  auc {r['auc_ovr_macro']:.3f}")
    return 0


def cmd_generate(args) -> int:
    try:
        spec = SbmSpec.from_json(args.spec)
    except (TypeError, ValueError, json.JSONDecodeError) as e:
        raise DatasetError(f"invalid SBM spec: {e}", path=args.spec) from None
    bundle = sbm_generate(spec, name=args.name or Path(args.spec).stem)
    save_dataset(bundle, args.out)
    print(json.dumps({"n_nodes": bundle.graph.n_nodes, "n_edges": bundle.graph.n_edges, "expected_homophily": expected_homophily(spec)}))
    return 0


# ---------------------------------------------------------------------------


def _add_model_flags(p, with_model=True):
    if with_model:
        p.add_argument("--model", choices=list(MODELS), default="fast-im-gbk")
    p.add_argument("--loss", choices=[k.value for k in LossKind], default=None)
    p.add_argument("--lambda", dest="lam", type=float, default=None)
    p.add_argument("--epsilon", type=float, default=None)
    p.add_argument("--tau", type=float, default=1.0)
    p.add_argument("--hidden", type=int, default=128)
    p.add_argument("--layers", type=int, default=1, help="number of hidden layers")
    p.add_argument("--activation", choices=["tanh", "identity"], default="tanh")
    p.add_argument("--homophily-source", choices=["train", "all"], default="train")
    p.add_argument("--epochs", type=int, default=200)
    p.add_argument("--patience", type=int, default=50)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--weight-decay", type=float, default=5e-4)
    p.add_argument("--split", choices=["auto", "stored", "random"], default="auto")
    p.add_argument("--extreme", default=None, help="classes=4,5,6,k=5 or smallest=3,k=5")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="imgbk", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"imgbk {__version__}")
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("analyze", help="class counts, imbalance and homophily of a dataset")
    p.add_argument("dataset")
    p.add_argument("--out", default=None, help="output directory (default: the dataset directory)")
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("train", help="train and evaluate one model")
    p.add_argument("dataset")
    _add_model_flags(p)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("reproduce", help="re-run a training run from its manifest.json")
    p.add_argument("manifest")
    p.add_argument("--dataset", default=None, help="override the dataset location")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_reproduce)

    p = sub.add_parser("bench", help="epoch timing and multi-seed results for several models")
    p.add_argument("dataset")
    _add_model_flags(p, with_model=False)
    p.add_argument("--models", default="gcn,fast-im-gbk,im-gbk")
    p.add_argument("--repeats", type=int, default=5)
    p.add_argument("--warmup", type=int, default=1)
    p.add_argument("--timed-epochs", type=int, default=5)
    p.add_argument("--timing-only", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_bench)

    p = sub.add_parser("sweep-lambda", help="metrics across gate-loss weights")
    p.add_argument("dataset")
    _add_model_flags(p)
    p.set_defaults(model="im-gbk")
    p.add_argument("--lambdas", default="0:5:0.5")
    p.add_argument("--seeds", default="0,1,2,3,4")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("generate", help="sample an SBM dataset from a JSON spec")
    p.add_argument("spec")
    p.add_argument("--name", default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)
    return parser


@contextlib.contextmanager
def _thread_cap():
    n = os.environ.get("IMGBK_THREADS")
    if not n:
        yield
        return
    from threadpoolctl import threadpool_limits

    with threadpool_limits(limits=int(n)):
        yield


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_cap():
            return args.func(args)
    except ImgbkError as e:
        print(f"imgbk: error: {e}", file=sys.stderr)
        return e.exit_code
    except (ValueError, FileNotFoundError) as e:
        print(f"imgbk: error: {e}", file=sys.stderr)
        return ConfigError.exit_code


if __name__ == "__main__":
    sys.exit(main())
