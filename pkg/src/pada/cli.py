"""Command-line entry point: ``pada <command> [options]``.

Every command takes ``--config FILE`` plus repeatable ``--set key=value``
overrides in the same flat format. Exit codes: 0 ok, 1 usage/config,
2 numeric failure, 3 I/O.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .checkpoint import load_checkpoint, save_checkpoint
from .config import RunConfig, parse_config
from .data import Dataset, generate_synthetic, load_dataset, load_idx, save_dataset
from .errors import PadaError, UsageError
from .ranking_eval import RankingReport, evaluate_all, train_standalone_oracle
from .rng import stream
from .search_space import enumerate_paths, format_path, parse_path
from .trainer import (
    SupernetTrainer,
    evolutionary_search,
    format_float,
    metrics_csv,
    random_search,
    supernet_from_checkpoint,
)

log = logging.getLogger("pada")


class _Parser(argparse.ArgumentParser):
    # argparse exits with 2 on bad usage; we reserve 2 for numeric failures
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


@dataclass
class RunManifest:
    command: str
    config: str
    seed: int
    dataset_fingerprint: str
    artifacts: dict[str, str] = field(default_factory=dict)
    version: str = __version__

    def write(self, out_dir: Path) -> Path:
        path = out_dir / "manifest.json"
        path.write_text(json.dumps(asdict(self), indent=2, sort_keys=True) + "\n")
        return path


# --- shared helpers ---------------------------------------------------------

def load_run_config(args) -> RunConfig:
    text = Path(args.config).read_text() if args.config else ""
    source = args.config or "<defaults>"
    if args.set:
        text += "\n" + "\n".join(args.set) + "\n"
        source += " + --set"
    return parse_config(text, source)


def _synthetic(cfg: RunConfig, split: str) -> Dataset:
    d = cfg.data
    n = d.n_per_class if split == "train" else d.eval_per_class
    return generate_synthetic(n, cfg.spec.n_classes, cfg.spec.d_in, d.separation, d.noise, d.seed, split=split)


def _dataset(cfg: RunConfig, path: str | None, split: str) -> Dataset:
    """Load ``path`` (npz, or ``images,labels`` IDX pair) or synthesize from config."""
    if path is None:
        return _synthetic(cfg, split)
    if "," in path:
        images, labels = path.split(",", 1)
        return load_idx(images, labels, split=split)
    return load_dataset(path)


def _write_text(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _out_dir(path: str) -> Path:
    out = Path(path)
    out.mkdir(parents=True, exist_ok=True)
    return out


# --- commands ---------------------------------------------------------------

def cmd_gen_data(args) -> int:
    cfg = load_run_config(args)
    out = _out_dir(args.out_dir)
    for split in ("train", "eval"):
        ds = _synthetic(cfg, split)
        save_dataset(out / f"{split}.npz", ds)
        print(f"{split}: {len(ds)} samples, sha256 {ds.fingerprint()[:16]}")
    return 0


def cmd_train(args) -> int:
    cfg = load_run_config(args)
    dataset = _dataset(cfg, args.data, "train")
    out = _out_dir(args.out_dir)
    artifacts = {
        "config": "config.resolved",
        "metrics": "metrics.csv",
        "checkpoint": "supernet.ckpt",
        "path_dist": "path_dist.csv",
        "data_dist": "data_dist.csv",
    }
    manifest = RunManifest("train-supernet", cfg.dumps(), cfg.train.seed, dataset.fingerprint(), artifacts)
    manifest.write(out)
    _write_text(out / "config.resolved", cfg.dumps())

    if args.resume:
        trainer = SupernetTrainer.from_checkpoint(cfg.train, cfg.spec, dataset, load_checkpoint(args.resume))
        log.info("resumed at epoch %d", trainer.epoch)
    else:
        trainer = SupernetTrainer(cfg.train, cfg.spec, dataset)
    stop = cfg.train.epochs if args.stop_after is None else args.stop_after
    while trainer.epoch < min(stop, cfg.train.epochs):
        m = trainer.run_epoch()
        log.info("epoch %d/%d loss %.4f gv %.4g", m.epoch, cfg.train.epochs, m.mean_loss, m.gv)

    _write_text(out / "metrics.csv", metrics_csv(trainer.history))
    save_checkpoint(out / "supernet.ckpt", trainer.to_checkpoint())
    probs = trainer.path_dist.probs
    rows = [(e, cfg.spec.ops[k].value, format_float(probs[e, k])) for e in range(probs.shape[0]) for k in range(probs.shape[1])]
    _write_text(out / "path_dist.csv", _csv_text(["edge", "op", "prob"], rows))
    q = trainer.data_dist.probs
    _write_text(out / "data_dist.csv", _csv_text(["sample_id", "prob"], ((i, format_float(p)) for i, p in enumerate(q))))
    print(f"trained {trainer.epoch}/{cfg.train.epochs} epochs -> {out}")
    return 0


def _oracle_one(job):
    spec, path, train, held, oracle_cfg, seed = job
    return train_standalone_oracle(spec, path, train, held, oracle_cfg, seed)


def cmd_oracle(args) -> int:
    cfg = load_run_config(args)
    train = _dataset(cfg, args.data, "train")
    held = _dataset(cfg, args.eval, "eval")
    paths = [parse_path(p, cfg.spec) for p in args.paths] if args.paths else enumerate_paths(cfg.spec)
    seed = cfg.oracle_seed
    jobs = [(cfg.spec, p, train, held, cfg.oracle, seed) for p in paths]
    if args.workers and args.workers > 1:
        with ProcessPoolExecutor(max_workers=args.workers) as pool:
            acc = list(pool.map(_oracle_one, jobs))  # map keeps path order
    else:
        acc = []
        for i, job in enumerate(jobs):
            acc.append(_oracle_one(job))
            log.info("oracle %d/%d %s %.4f", i + 1, len(jobs), format_path(job[1]), acc[-1])
    rows = [(format_path(p), format_float(a), seed) for p, a in zip(paths, acc)]
    _write_text(Path(args.out), _csv_text(["path", "accuracy", "seed"], rows))
    print(f"{len(paths)} paths -> {args.out}")
    return 0


def read_ground_truth(path) -> tuple[list[str], np.ndarray]:
    try:
        with open(path, newline="") as fh:
            rows = list(csv.DictReader(fh))
        return [r["path"] for r in rows], np.array([float(r["accuracy"]) for r in rows])
    except (KeyError, ValueError) as exc:
        raise UsageError(f"{path}: not a ground-truth table (path,accuracy,seed): {exc}") from exc


def cmd_eval_ranking(args) -> int:
    cfg = load_run_config(args)
    net = supernet_from_checkpoint(cfg.spec, load_checkpoint(args.checkpoint))
    held = _dataset(cfg, args.eval, "eval")
    names, truth = read_ground_truth(args.ground_truth)
    paths = [parse_path(p, cfg.spec) for p in names]
    acc = evaluate_all(net, paths, held, workers=args.workers)
    report = RankingReport.build(names, acc, truth, k_frac=cfg.k_frac, seed=cfg.train.seed, label=args.label)
    _write_text(Path(args.out), report.to_json() + "\n")
    print(f"KT {report.kendall_tau:.4f}  P@Top{cfg.k_frac:g} {report.p_at_topk:.4f}")
    return 0


def cmd_search(args) -> int:
    cfg = load_run_config(args)
    net = supernet_from_checkpoint(cfg.spec, load_checkpoint(args.checkpoint))
    held = _dataset(cfg, args.eval, "eval")
    rng = stream(cfg.search_seed, "search")
    run = random_search if cfg.search.strategy == "random" else evolutionary_search
    res = run(net, cfg.search, held, rng)
    result = {
        "strategy": cfg.search.strategy,
        "path": format_path(res.path),
        "score": res.score,
        "history": res.history,
        "n_evaluated": res.n_evaluated,
        "search_seed": cfg.search_seed,
    }
    if args.out:
        _write_text(Path(args.out), json.dumps(result, indent=2) + "\n")
    print(f"best {result['path']} score {res.score:.4f} ({res.n_evaluated} evaluated)")
    return 0


def _last_quarter_gv(metrics_path: Path) -> float:
    with open(metrics_path, newline="") as fh:
        gv = [float(r["gv"]) for r in csv.DictReader(fh)]
    tail = gv[len(gv) - max(1, len(gv) // 4):]
    return float(np.mean(tail))


def _mean_std(values) -> str:
    v = np.asarray(values, dtype=float)
    std = float(v.std(ddof=1)) if len(v) > 1 else 0.0
    return f"{v.mean():.4f} ± {std:.4f}"


def aggregate_runs(run_dirs) -> list[dict]:
    """Group run directories by report label; one summary row per label."""
    groups: dict[str, dict[str, list]] = {}
    for d in map(Path, run_dirs):
        report_file = d / "report.json"
        if not report_file.exists():
            raise UsageError(f"{d}: no report.json (run eval-ranking with --out {report_file})")
        rep = RankingReport.from_json(report_file.read_text())
        g = groups.setdefault(rep.label or d.name, {"kt": [], "topk": [], "gv": [], "seeds": []})
        g["kt"].append(rep.kendall_tau)
        g["topk"].append(rep.p_at_topk)
        g["seeds"].append(rep.seed)
        if (d / "metrics.csv").exists():
            g["gv"].append(_last_quarter_gv(d / "metrics.csv"))
    rows = []
    for label, g in groups.items():
        rows.append({
            "label": label,
            "n": len(g["kt"]),
            "kendall_tau": _mean_std(g["kt"]),
            "p_at_topk": _mean_std(g["topk"]),
            "gv_last_quarter": _mean_std(g["gv"]) if g["gv"] else "n/a",
        })
    return rows


def cmd_report(args) -> int:
    rows = aggregate_runs(args.runs)
    cols = ["label", "n", "kendall_tau", "p_at_topk", "gv_last_quarter"]
    lines = ["| " + " | ".join(cols) + " |", "|" + "---|" * len(cols)]
    lines += ["| " + " | ".join(str(r[c]) for c in cols) + " |" for r in rows]
    table = "\n".join(lines) + "\n"
    if args.out:
        _write_text(Path(args.out), table)
    sys.stdout.write(table)
    return 0


# --- parser -----------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pada", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=f"pada {__version__}")
    p.add_argument("-v", "--verbose", action="count", default=0)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat key = value config file")
    common.add_argument("--set", action="append", metavar="KEY=VALUE", help="override one config key")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    g = sub.add_parser("gen-data", parents=[common], help="write synthetic train/eval npz files")
    g.add_argument("--out-dir", required=True)
    g.set_defaults(func=cmd_gen_data)

    data_help = "npz file or 'images.idx,labels.idx'; synthesized from config when omitted"
    t = sub.add_parser("train-supernet", parents=[common], help="train a supernet")
    t.add_argument("--data", help=data_help)
    t.add_argument("--out-dir", required=True)
    t.add_argument("--resume", help="checkpoint to continue from")
    t.add_argument("--stop-after", type=int, help="stop once this many epochs are done")
    t.set_defaults(func=cmd_train)

    o = sub.add_parser("oracle", parents=[common], help="standalone ground truth over all paths")
    o.add_argument("--data", help=data_help)
    o.add_argument("--eval", help=data_help)
    o.add_argument("--out", required=True)
    o.add_argument("--paths", nargs="+", help="restrict to these paths, e.g. 1,0,1,1,0,1")
    o.add_argument("--workers", type=int, default=1)
    o.set_defaults(func=cmd_oracle)

    e = sub.add_parser("eval-ranking", parents=[common], help="KT and P@Top-k against a ground-truth table")
    e.add_argument("--checkpoint", required=True)
    e.add_argument("--ground-truth", required=True)
    e.add_argument("--eval", help=data_help)
    e.add_argument("--out", required=True)
    e.add_argument("--label", default="")
    e.add_argument("--workers", type=int, default=None)
    e.set_defaults(func=cmd_eval_ranking)

    s = sub.add_parser("search", parents=[common], help="random or evolutionary sub-model search")
    s.add_argument("--checkpoint", required=True)
    s.add_argument("--eval", help=data_help)
    s.add_argument("--out")
    s.set_defaults(func=cmd_search)

    r = sub.add_parser("report", help="mean ± std table over run directories")
    r.add_argument("runs", nargs="+", help="directories holding report.json (+ metrics.csv)")
    r.add_argument("--out")
    r.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(
            level=logging.WARNING - 10 * min(args.verbose, 2),
            format="%(levelname)s %(name)s: %(message)s",
        )
        return args.func(args)
    except PadaError as exc:
        print(f"pada: error: {exc}", file=sys.stderr)
        return exc.exit_code
    except OSError as exc:
        print(f"pada: I/O error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
