"""Command-line front end."""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from concurrent.futures import ProcessPoolExecutor
from contextlib import nullcontext
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import config as config_mod
from .augment import load_diffusion, ppr_diffusion, save_diffusion
from .config import ConfigError
from .evaluation import Metrics, community_detect, config_hash, node_classify
from .experiments import link_protocol, reproduce
from .graph import DatasetFormatError, load_dataset, load_linqs, save_graph
from .neuro import save_checkpoint
from .pipeline import DivergenceError, embed, load_embeddings, save_embeddings, train

log = logging.getLogger("grcca")

EXIT_OK, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2
PRIMARY_METRIC = {"node": "accuracy_mean", "link": "auc_mean", "community": "nmi"}


class UsageError(Exception):
    pass


def git_blob_hash(path):
    data = Path(path).read_bytes()
    return hashlib.sha1(b"blob %d\0" % len(data) + data).hexdigest()


def diffusion_cache_path(dataset_dir, alpha):
    return Path(dataset_dir) / f"diffusion-a{alpha:g}.grpd"


def _load_cfg(args):
    overrides = list(getattr(args, "set", None) or [])
    for flag, key in (("seed", "seed"), ("out", "out"), ("threads", "threads")):
        val = getattr(args, flag, None)
        if val is not None:
            overrides.append(f"{key}={val}")
    if getattr(args, "deterministic", False):
        overrides.append("deterministic=true")
    if getattr(args, "dataset", None):
        overrides.append(f"dataset={args.dataset}")
    return config_mod.load(args.config, overrides)


def _load_graph(cfg):
    if not cfg.dataset:
        raise ConfigError("dataset", "no dataset directory configured")
    d = Path(cfg.dataset)
    if not (d / "features.tsv").exists():
        raise ConfigError("dataset", f"no features.tsv under {d}")
    return load_dataset(d)


def _diffusion_for(g, cfg):
    if cfg.train.disable_diffusion:
        return None
    cache = diffusion_cache_path(cfg.dataset, cfg.train.aug.alpha)
    if cache.exists() and cfg.train.aug.eps is None and g.n > 5000:
        return load_diffusion(cache)
    return ppr_diffusion(g, cfg.train.aug.alpha, cfg.train.aug.eps)


def _thread_ctx(cfg):
    return threadpool_limits(1 if cfg.deterministic else cfg.threads)


def _write_run_files(out, cfg):
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(cfg.to_text(), encoding="utf-8")
    inputs = {"config.txt": git_blob_hash(out / "config.txt")}
    for name in ("edges.tsv", "features.tsv", "labels.tsv"):
        p = Path(cfg.dataset) / name
        if p.exists():
            inputs[name] = git_blob_hash(p)
    (out / "inputs.sha1").write_text("".join(f"{h}  {n}\n" for n, h in sorted(inputs.items())), encoding="utf-8")


def train_run(cfg, out):
    """Train, then write checkpoint, embeddings and trace to ``out``."""
    g = _load_graph(cfg)
    out = Path(out)
    _write_run_files(out, cfg)
    with _thread_ctx(cfg):
        diffusion = _diffusion_for(g, cfg)
        params, trace = train(g, cfg.train, diffusion=diffusion)
        h = embed(g, params, cfg.train.aug.alpha, cfg.train.aug.eps, diffusion=diffusion,
                  use_diffusion=not cfg.train.disable_diffusion)
    save_checkpoint(out / "model.grck", params)
    save_embeddings(out / "embeddings.grce", h)
    trace.write_jsonl(out / "trace.jsonl")
    return g, h, trace


def eval_run(task, cfg, g, h=None):
    seed = cfg.train.seed
    with _thread_ctx(cfg):
        if task == "node":
            m = node_classify(h, g.labels, runs=cfg.runs, rng=seed, per_class=cfg.per_class,
                              test_size=cfg.test_size, protocol=cfg.protocol)
        elif task == "community":
            m = community_detect(h, g.labels, g.n_classes, rng=seed, n_init=cfg.kmeans_restarts)
        elif task == "link":
            m = link_protocol(g, cfg, runs=cfg.link_runs, seed=seed)
        else:
            raise ConfigError("eval.task", f"unknown task {task!r}")
    m.dataset = cfg.name or g.name
    m.seed = seed
    # the output location is not part of what was computed
    m.config_hash = config_hash({k: v for k, v in cfg.raw.items() if k != "out"})
    return m


def _summary(m):
    v = m.values
    if m.task == "node":
        return f"node accuracy {v['accuracy_mean']:.4f} +- {v['accuracy_std']:.4f} over {m.runs} runs"
    if m.task == "link":
        return f"link AUC {v['auc_mean']:.4f} +- {v['auc_std']:.4f}, AP {v['ap_mean']:.4f} +- {v['ap_std']:.4f}"
    return f"community ACC {v['acc']:.4f}, NMI {v['nmi']:.4f}, ARI {v['ari']:.4f}"


# ---------------------------------------------------------------------------
# commands


def cmd_prepare(args):
    src = Path(args.input)
    if args.format == "linqs":
        stem = args.name or src.name
        g = load_linqs(src / f"{stem}.content", src / f"{stem}.cites", name=stem)
    else:
        g = load_dataset(src)
    out = Path(args.out)
    save_graph(g, out)
    print(f"{g.name}: n={g.n} edges={g.n_edges} features={g.n_features} classes={g.n_classes} -> {out}")
    if args.diffusion:
        s = ppr_diffusion(g, args.alpha)
        save_diffusion(diffusion_cache_path(out, args.alpha), s)
        print(f"diffusion cache written ({args.alpha:g})")
    return EXIT_OK


def cmd_train(args):
    cfg = _load_cfg(args)
    out = Path(cfg.out)
    _, _, trace = train_run(cfg, out)
    print(f"final loss {trace.records[-1].loss:.6f} after {len(trace)} epochs; outputs in {out}")
    return EXIT_OK


def cmd_eval(args):
    cfg = _load_cfg(args)
    task = args.task or cfg.task
    g = _load_graph(cfg)
    h = None
    if task == "link":
        if args.embeddings:
            log.warning("link evaluation retrains on each split's training graph; --embeddings is ignored")
    else:
        if not args.embeddings:
            raise UsageError("--embeddings is required for this task")
        h = load_embeddings(args.embeddings)
        if h.shape[0] != g.n:
            raise UsageError(f"embedding rows ({h.shape[0]}) do not match dataset nodes ({g.n})")
    m = eval_run(task, cfg, g, h)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    m.write(out / f"metrics-{task}.json")
    print(_summary(m))
    return EXIT_OK


def parse_grid(path):
    grid = {}
    for lineno, raw in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(None, f"{path}:{lineno}: expected key=v1,v2,...")
        key, vals = (s.strip() for s in line.split("=", 1))
        grid[key] = [config_mod._convert(key, v.strip()) for v in vals.split(",") if v.strip()]
        if not grid[key]:
            raise ConfigError(key, "no grid values")
    if not grid:
        raise ConfigError(None, "empty grid")
    return grid


def grid_combinations(grid, max_samples=None, seed=0):
    keys = sorted(grid)
    combos = [dict(zip(keys, vals)) for vals in itertools.product(*(grid[k] for k in keys))]
    if max_samples is not None and max_samples < len(combos):
        rng = np.random.default_rng(seed)
        picked = np.sort(rng.choice(len(combos), size=max_samples, replace=False))
        combos = [combos[i] for i in picked]
    return combos


def _grid_worker(job):
    idx, base_raw, combo, out = job
    cfg = config_mod.build({**base_raw, **combo, "out": str(out)})
    g, h, _ = train_run(cfg, out)
    m = eval_run(cfg.task, cfg, g, h)
    m.write(Path(out) / f"metrics-{cfg.task}.json")
    return idx, combo, m.values[PRIMARY_METRIC[cfg.task]], str(out)


def cmd_grid(args):
    cfg = _load_cfg(args)
    grid = parse_grid(args.grid)
    combos = grid_combinations(grid, args.max_samples, cfg.train.seed)
    # fail fast on invalid combinations before any training
    for combo in combos:
        config_mod.build({**cfg.raw, **combo})
    root = Path(cfg.out)
    root.mkdir(parents=True, exist_ok=True)
    jobs = [(i, cfg.raw, combo, root / f"combo-{i:04d}") for i, combo in enumerate(combos)]
    if cfg.threads > 1 and not cfg.deterministic:
        with ProcessPoolExecutor(max_workers=cfg.threads) as pool:
            results = list(pool.map(_grid_worker, jobs))
    else:
        results = [_grid_worker(j) for j in jobs]
    results.sort(key=lambda r: (-r[2], r[0]))
    keys = sorted(grid)
    with open(root / "results.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["rank", PRIMARY_METRIC[cfg.task], *keys, "run_dir"])
        for rank, (_, combo, score, run_dir) in enumerate(results, start=1):
            w.writerow([rank, f"{score:.6f}", *(combo[k] for k in keys), run_dir])
    print(f"{len(results)} combinations; best {PRIMARY_METRIC[cfg.task]} {results[0][2]:.4f} -> {root / 'results.csv'}")
    return EXIT_OK


def cmd_reproduce(args):
    overrides = [f"threads={args.threads}"] if args.threads else []
    cora = config_mod.load(args.cora_config, overrides)
    citeseer = config_mod.load(args.citeseer_config, overrides)
    with threadpool_limits(cora.threads) if args.threads else nullcontext():
        results = reproduce(args.data_root, cora, citeseer)
    for r in results:
        print(r.line())
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        doc = [{"criterion": r.number, "name": r.name, "passed": r.passed, "detail": r.detail,
                "seconds": round(r.seconds, 2)} for r in results]
        (out / "reproduce.json").write_text(json.dumps(doc, indent=2) + "\n", encoding="utf-8")
    return EXIT_OK if all(r.passed for r in results) else EXIT_CONFIG


# ---------------------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="grcca", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def run_flags(sp, config_required=True):
        sp.add_argument("--config", required=config_required, help="config file or preset name")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--deterministic", action="store_true")
        sp.add_argument("--threads", type=int)
        sp.add_argument("--out")
        sp.add_argument("--dataset", help="dataset directory (overrides the config)")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")

    sp = sub.add_parser("prepare", help="convert a dataset into the tab-separated layout")
    sp.add_argument("--input", required=True)
    sp.add_argument("--format", choices=("tsv", "linqs"), default="tsv")
    sp.add_argument("--name")
    sp.add_argument("--out", required=True)
    sp.add_argument("--diffusion", action="store_true", help="also write the diffusion cache")
    sp.add_argument("--alpha", type=float, default=0.05)
    sp.set_defaults(func=cmd_prepare)

    sp = sub.add_parser("train", help="train and write checkpoint, embeddings, trace")
    run_flags(sp)
    sp.set_defaults(func=cmd_train)

    sp = sub.add_parser("eval", help="evaluate embeddings on a downstream task")
    run_flags(sp)
    sp.add_argument("--task", choices=config_mod.TASKS)
    sp.add_argument("--embeddings")
    sp.set_defaults(func=cmd_eval)

    sp = sub.add_parser("grid", help="grid search over config keys")
    run_flags(sp)
    sp.add_argument("--grid", required=True, help="file with key=v1,v2,... lines")
    sp.add_argument("--max-samples", type=int)
    sp.set_defaults(func=cmd_grid)

    sp = sub.add_parser("reproduce", help="run the Cora/Citeseer acceptance suite")
    sp.add_argument("--data-root", default="data")
    sp.add_argument("--cora-config", default="cora")
    sp.add_argument("--citeseer-config", default="citeseer")
    sp.add_argument("--threads", type=int)
    sp.add_argument("--out")
    sp.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (ConfigError, UsageError, DatasetFormatError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DivergenceError, FloatingPointError) as exc:
        print(f"diverged: {exc}", file=sys.stderr)
        return EXIT_DIVERGED


if __name__ == "__main__":
    sys.exit(main())
