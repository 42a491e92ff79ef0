"""Command line entry point ``mvhc``.

Subcommands::

    mvhc pipeline --config run.toml --view a.csv --view b.csv [--labels y.csv] --out DIR
    mvhc baseline --method ward --view a.csv --view b.csv [--labels y.csv] --out DIR
    mvhc synth --n 200 --k 4 --v 2 --sep 10 --noise 0.1 --seed 7 --out DIR
    mvhc eval --tree t.json --labels y.csv [--sim s.csv] --out metrics.json

Every command exits 0 only when all of its outputs were written.  Failures
print one JSON line ``{"error": ..., "stage": ..., "type": ...}`` to stderr,
exit with status 1 and leave no partial outputs behind.
"""

from __future__ import annotations

import argparse
import contextlib
import json
import logging
import os
import shutil
import sys
import tempfile
import time
from dataclasses import fields
from pathlib import Path
from typing import Optional

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__, checkpoint
from .data import (
    PipelineConfig,
    load_config,
    load_labels,
    load_matrix,
    load_views,
    synth_hier_gaussian,
    write_matrix_csv,
    write_views,
)
from .estimators import STAGES, LinkageClustering, MultiViewHierarchicalClustering, StageError
from .metrics import dasgupta_cost, dendrogram_purity
from .similarity import euclid_sim_matrix
from .tree import LINKAGE_METHODS, load_tree

logger = logging.getLogger("mvhc")


class CLIError(RuntimeError):
    def __init__(self, message: str, stage: str = "setup"):
        super().__init__(message)
        self.stage = stage


# output handling -------------------------------------------------------------


class OutputDir:
    """Collect outputs in a scratch directory and move them into place at the end.

    Nothing appears in the destination unless :meth:`commit` runs; the scratch
    directory is always removed.
    """

    def __init__(self, dest):
        self.dest = Path(dest)
        self.dest.parent.mkdir(parents=True, exist_ok=True)
        self.tmp = Path(tempfile.mkdtemp(prefix=f".{self.dest.name}.", dir=self.dest.parent))
        self.names: list = []

    def path(self, name: str) -> Path:
        self.names.append(name)
        return self.tmp / name

    def write_text(self, name: str, text: str) -> Path:
        p = self.path(name)
        p.write_text(text)
        return self.dest / name

    def commit(self, last: Optional[str] = None) -> None:
        """Move every file into ``dest``; ``last`` is moved after the others."""
        self.dest.mkdir(parents=True, exist_ok=True)
        order = [n for n in self.names if n != last] + ([last] if last in self.names else [])
        for name in order:
            os.replace(self.tmp / name, self.dest / name)

    def cleanup(self) -> None:
        shutil.rmtree(self.tmp, ignore_errors=True)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


def _write_losses(out: OutputDir, stage: str, curve) -> str:
    name = f"losses_{stage}.csv"
    p = out.path(name)
    with open(p, "w") as fh:
        if isinstance(curve, dict):
            keys = list(curve)
            fh.write("epoch," + ",".join(keys) + "\n")
            for e, row in enumerate(zip(*(curve[k] for k in keys))):
                fh.write(f"{e}," + ",".join(repr(float(x)) for x in row) + "\n")
        else:
            fh.write("epoch,loss\n")
            for e, x in enumerate(curve):
                fh.write(f"{e},{float(x)!r}\n")
    return name


def _metrics(tree, W, labels, method, seed) -> dict:
    out = {"n": tree.n_leaves, "method": method, "seed": seed}
    out["dasgupta_cost"] = None if W is None else dasgupta_cost(tree, W)
    if labels is not None:
        out["dp"] = dendrogram_purity(tree, labels)
    return out


# argument parsing --------------------------------------------------------------


_OPTIONAL_TYPES = {"n_clusters": int, "k_pos": int, "k_neg": int, "hc_lr": float, "triplet_budget": int}


def _config_type(f):
    if f.name == "hidden_dims":
        return lambda s: tuple(int(x) for x in s.split(","))
    if f.default is None:
        return _OPTIONAL_TYPES[f.name]
    return type(f.default)


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("pipeline settings (override the config file)")
    for f in fields(PipelineConfig):
        flag = "--" + f.name.replace("_", "-")
        if f.name == "seed":
            continue
        if isinstance(f.default, bool):
            g.add_argument(flag, dest=f.name, action=argparse.BooleanOptionalAction, default=None)
        elif f.name == "hc_mode":
            g.add_argument(flag, dest=f.name, choices=("head", "direct"), default=None)
        else:
            g.add_argument(flag, dest=f.name, type=_config_type(f), default=None, metavar="X")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="mvhc", description="Multi-view hyperbolic hierarchical clustering")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("pipeline", help="run the full multi-view pipeline")
    p.add_argument("--config", type=Path)
    p.add_argument("--view", action="append", required=True, type=Path, help="one CSV per view (repeat)")
    p.add_argument("--labels", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--header", action="store_true", help="skip one header line in every CSV")
    p.add_argument("--seed", type=int)
    p.add_argument("--stop-after", choices=STAGES[:-1], help="stop once this stage has finished")
    p.add_argument("--dump-similarity", action="store_true",
                   help="also write the learned N x N similarity matrix to similarity.csv")
    p.add_argument("--timing", action="store_true",
                   help="add wall_time_s to metrics.json (it then differs between runs)")
    _add_config_flags(p)

    p = sub.add_parser("baseline", help="agglomerative linkage on z-scored concatenated views")
    p.add_argument("--method", choices=LINKAGE_METHODS, default="ward")
    p.add_argument("--view", action="append", required=True, type=Path)
    p.add_argument("--labels", type=Path)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--header", action="store_true")
    p.add_argument("--timing", action="store_true")

    p = sub.add_parser("synth", help="write a synthetic hierarchical multi-view dataset")
    p.add_argument("--n", type=int, default=200)
    p.add_argument("--k", type=int, default=4)
    p.add_argument("--v", type=int, default=2)
    p.add_argument("--depth", type=int)
    p.add_argument("--sep", type=float, default=10.0)
    p.add_argument("--noise", type=float, default=0.1)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, type=Path)

    p = sub.add_parser("eval", help="recompute metrics of a saved tree")
    p.add_argument("--tree", required=True, type=Path, help="tree.json or a Newick file")
    p.add_argument("--labels", type=Path)
    p.add_argument("--sim", type=Path, help="N x N similarity CSV for the Dasgupta cost")
    p.add_argument("--header", action="store_true")
    p.add_argument("--out", type=Path, help="metrics JSON path (default: stdout)")
    return parser


# commands ------------------------------------------------------------------------


def cmd_pipeline(args) -> dict:
    overrides = {f.name: getattr(args, f.name, None) for f in fields(PipelineConfig)}
    try:
        ds = load_views(args.view, args.labels, header=args.header)
    except (OSError, ValueError) as exc:
        raise CLIError(str(exc), "load") from exc
    try:
        cfg = load_config(args.config, overrides)
    except (OSError, ValueError) as exc:
        raise CLIError(str(exc), "config") from exc
    if cfg.n_clusters is None and (cfg.k_pos is None or cfg.k_neg is None):
        if ds.labels is None:
            raise CLIError("n_clusters is required (config, --n-clusters or --labels)", "config")
        cfg.n_clusters = int(len(np.unique(ds.labels)))
        logger.info("n_clusters=%d taken from the label file", cfg.n_clusters)

    out = OutputDir(args.out)
    try:
        t0 = time.perf_counter()
        model = MultiViewHierarchicalClustering.from_config(cfg)
        try:
            model.fit(ds.views, stop_after=args.stop_after)
        except StageError as exc:
            raise CLIError(str(exc.cause), exc.stage) from exc.cause
        except ValueError as exc:
            raise CLIError(str(exc), "config") from exc
        wall = time.perf_counter() - t0

        outputs = {}
        finished = "decode" in model.completed_stages_
        if finished:
            tree = model.dendrogram_
            outputs["newick"] = out.write_text("tree.nwk", tree.to_newick() + "\n")
            outputs["tree"] = out.write_text("tree.json", tree.to_json() + "\n")
            write_matrix_csv(out.path("embeddings.csv"), model.embeddings_)
            outputs["embeddings"] = args.out / "embeddings.csv"
            metrics = _metrics(tree, model.similarity_, ds.labels, "mvhc", model.config_.seed)
            if args.timing:
                metrics["wall_time_s"] = wall
            outputs["metrics"] = out.write_text("metrics.json", _dump_json(metrics))
            if args.dump_similarity:
                write_matrix_csv(out.path("similarity.csv"), model.similarity_)
                outputs["similarity"] = args.out / "similarity.csv"
        state = dict(model.params_)
        if finished:
            state["embeddings"] = model.embeddings_
        checkpoint.save(out.path("checkpoint.mvhc"), state)
        outputs["checkpoint"] = args.out / "checkpoint.mvhc"
        for stage, curve in model.loss_curves_.items():
            if stage == "finetune-parts":
                continue
            if stage == "finetune":
                curve = model.loss_curves_["finetune-parts"]
            name = _write_losses(out, stage, curve)
            outputs[f"losses_{stage}"] = args.out / name

        manifest = {
            "config": model.config_.to_dict(),
            "seed": model.config_.seed,
            "stages": model.completed_stages_,
            "stage_times_s": model.stage_times_,
            "wall_time_s": wall,
            "loss_curves": {k: v for k, v in model.loss_curves_.items() if k != "finetune-parts"},
            "mining": {"usable_anchors": getattr(model, "n_usable_anchors_", None)},
            "inputs": {"views": [str(p) for p in args.view],
                       "labels": None if args.labels is None else str(args.labels)},
            "outputs": {k: str(v) for k, v in outputs.items()},
            "version": __version__,
        }
        out.write_text("manifest.json", _dump_json(manifest))
        out.commit(last="manifest.json")
    finally:
        out.cleanup()
    return manifest


def cmd_baseline(args) -> dict:
    try:
        ds = load_views(args.view, args.labels, header=args.header)
    except (OSError, ValueError) as exc:
        raise CLIError(str(exc), "load") from exc
    out = OutputDir(args.out)
    try:
        t0 = time.perf_counter()
        try:
            model = LinkageClustering(method=args.method).fit(ds.views)
        except ValueError as exc:
            raise CLIError(str(exc), "linkage") from exc
        W = euclid_sim_matrix(model.features_)
        np.fill_diagonal(W, 0.0)
        metrics = _metrics(model.dendrogram_, W, ds.labels, args.method, None)
        if args.timing:
            metrics["wall_time_s"] = time.perf_counter() - t0
        out.write_text("tree.nwk", model.dendrogram_.to_newick() + "\n")
        out.write_text("tree.json", model.dendrogram_.to_json() + "\n")
        out.write_text("metrics.json", _dump_json(metrics))
        out.commit(last="metrics.json")
    finally:
        out.cleanup()
    return metrics


def cmd_synth(args) -> dict:
    try:
        ds = synth_hier_gaussian(args.n, args.k, args.v, depth=args.depth, sep=args.sep,
                                 noise=args.noise, seed=args.seed)
    except ValueError as exc:
        raise CLIError(str(exc), "synth") from exc
    out = OutputDir(args.out)
    try:
        write_views(ds, out.tmp)
        out.names.extend(sorted(p.name for p in out.tmp.iterdir()))
        out.commit()
    finally:
        out.cleanup()
    return {"n": ds.n_samples, "dims": list(ds.dims)}


def cmd_eval(args) -> dict:
    try:
        tree = load_tree(args.tree)
        labels = None if args.labels is None else load_labels(args.labels, header=args.header)
        W = None
        if args.sim is not None:
            W = load_matrix(args.sim, header=args.header)
    except (OSError, ValueError) as exc:
        raise CLIError(str(exc), "load") from exc
    if labels is not None and len(labels) != tree.n_leaves:
        raise CLIError(f"tree has {tree.n_leaves} leaves but {len(labels)} labels were given", "eval")
    try:
        metrics = _metrics(tree, W, labels, "eval", None)
    except ValueError as exc:
        raise CLIError(str(exc), "eval") from exc
    text = _dump_json(metrics)
    if args.out is None:
        sys.stdout.write(text)
    else:
        tmp = args.out.with_name(args.out.name + ".tmp")
        tmp.write_text(text)
        os.replace(tmp, args.out)
    return metrics


COMMANDS = {"pipeline": cmd_pipeline, "baseline": cmd_baseline, "synth": cmd_synth, "eval": cmd_eval}


def _thread_limit():
    raw = os.environ.get("MVHC_THREADS")
    if not raw:
        return contextlib.nullcontext()
    try:
        n = int(raw)
        if n < 1:
            raise ValueError
    except ValueError:
        raise CLIError(f"MVHC_THREADS must be a positive integer, got {raw!r}") from None
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.WARNING - 10 * min(args.verbose, 2),
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        with _thread_limit():
            COMMANDS[args.command](args)
    except CLIError as exc:
        err = {"error": str(exc), "stage": exc.stage, "type": type(exc.__cause__ or exc).__name__}
        print(json.dumps(err), file=sys.stderr)
        return 1
    except Exception as exc:  # keep the one-line error contract for unexpected failures
        logger.debug("unexpected failure", exc_info=True)
        print(json.dumps({"error": str(exc), "stage": "internal", "type": type(exc).__name__}), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
