"""
Command-line entry points.

  netalign align --config run.toml [--mode full|fixed-cost|collapse|noise] [--threads n]
                 [--readout plan|embedding]
  netalign evaluate --plan plan.bin --anchors test.txt --k 1,10 [--pessimistic]
  netalign perturb --in edges.txt --kind structural|attribute --p 10 --seed 0 --out out.txt
  netalign synthesize --in edges.txt [--attrs x.csv] --insert 0.1 --delete 0.15 --out dir/

Exit codes: 0 ok, 2 config, 3 data / checkpoint, 4 numerical failure.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import sys
import time
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field, replace
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

from .checkpoint import atomic_write_text, load_plan, save_params, save_plan
from .config import MODES, READOUTS, TrainConfig, load_config
from .encoder import export_embeddings
from .errors import EXIT_DATA, EXIT_OK, ConfigError, NetalignError, exit_code_for
from .evaluation import alignment_metrics, compute_ranks, embedding_scores, write_metrics
from .graph import (
    inject_noise,
    load_dataset,
    load_graph,
    read_anchors,
    split_anchors,
    synthesize_pair,
    write_anchors,
    write_attributes,
    write_edge_list,
)
from .log import configure_logging, log_event, ms_since
from .ot import write_trace
from .rwr import export_features
from .trainer import embeddings_for, features_for, train, write_history

logger = logging.getLogger(__name__)


@dataclass
class RunManifest:
    config: dict[str, Any]
    seed: int
    checksums: dict[str, str] = field(default_factory=dict)
    outputs: dict[str, str] = field(default_factory=dict)
    timings_ms: dict[str, int] = field(default_factory=dict)
    metrics: dict[str, Any] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)

    def write(self, path: Path) -> None:
        atomic_write_text(path, json.dumps(asdict(self), indent=2, default=str) + "\n")


def sha256_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with Path(path).open("rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _fail(stage: str, exc: BaseException) -> int:
    code = exit_code_for(exc)
    if isinstance(exc, OSError):
        code = EXIT_DATA
    record: dict[str, Any] = {"stage": stage, "error": type(exc).__name__, "detail": str(exc)}
    if isinstance(exc, ConfigError) and exc.key:
        record["key"] = exc.key
    log_event(logger, "stage_failed", logging.ERROR, exit_code=code, **record)
    print(json.dumps(record, ensure_ascii=False), file=sys.stderr)
    return code


def _run_dir(cfg: TrainConfig) -> Path:
    stamp = datetime.now(UTC).strftime("%Y%m%dT%H%M%S%f")
    kind = cfg.mode if cfg.readout == "plan" else f"{cfg.mode}-{cfg.readout}"
    out = Path(cfg.output_dir) / f"{kind}-seed{cfg.seed}-{stamp}"
    out.mkdir(parents=True, exist_ok=False)
    return out


def cmd_align(
    config_path: str | Path,
    mode: str | None = None,
    threads: int | None = None,
    readout: str | None = None,
) -> int:
    stage = "config"
    t_run = time.perf_counter()
    try:
        cfg = load_config(config_path)
        if mode is not None:
            cfg = replace(cfg, mode=mode)  # type: ignore[arg-type]
        if threads is not None:
            cfg = replace(cfg, threads=threads)
        if readout is not None:
            cfg = replace(cfg, readout=readout)  # type: ignore[arg-type]
        manifest = RunManifest(config=cfg.snapshot(), seed=cfg.seed)
        seeds = cfg.seeds

        stage = "load"
        t0 = time.perf_counter()
        g1, g2, truth = load_dataset(
            cfg.edges1, cfg.edges2, cfg.anchors, cfg.attrs1, cfg.attrs2, cfg.n1, cfg.n2
        )
        for key in ("edges1", "edges2", "anchors", "attrs1", "attrs2"):
            if (src := getattr(cfg, key)) is not None:
                manifest.checksums[key] = sha256_file(src)
        if cfg.mode == "noise":
            g2 = inject_noise(g2, cfg.noise_kind, cfg.noise_p, seeds.noise)
        train_set, test_set = split_anchors(truth, cfg.train_ratio, seeds.split)
        manifest.timings_ms[stage] = ms_since(t0)

        stage = "features"
        t0 = time.perf_counter()
        features = features_for(cfg, g1, g2, train_set)
        manifest.timings_ms[stage] = ms_since(t0)

        stage = "train"
        t0 = time.perf_counter()
        plan, params, history = train(cfg, g1, g2, train_set, test_set, features=features)
        manifest.timings_ms[stage] = ms_since(t0)
        manifest.warnings = list(history.warnings)

        stage = "evaluate"
        emb = embeddings_for(params, *features, cfg)
        scores = plan.values if cfg.readout == "plan" else embedding_scores(emb)
        metrics = alignment_metrics(compute_ranks(scores, test_set), cfg.ks)
        pessimistic = alignment_metrics(compute_ranks(scores, test_set, pessimistic=True), cfg.ks)
        manifest.metrics = metrics.to_dict() | {"pessimistic": pessimistic.to_dict()}
        manifest.metrics["readout"] = cfg.readout

        stage = "write"
        out = _run_dir(cfg)
        paths = {
            "plan": out / "plan.bin",
            "params": out / "params.bin",
            "embeddings1": out / "embeddings1.csv",
            "embeddings2": out / "embeddings2.csv",
            "history": out / "history.csv",
            "train_anchors": out / "train_anchors.txt",
            "test_anchors": out / "test_anchors.txt",
            "metrics": out / "metrics.txt",
            "metrics_json": out / "metrics.json",
        }
        save_plan(plan, paths["plan"], {"mode": cfg.mode, "seed": cfg.seed, "lam": history.lambdas})
        save_params(params, paths["params"], {"seed": cfg.seed})
        export_embeddings(emb, paths["embeddings1"], paths["embeddings2"])
        write_history(history, paths["history"])
        write_anchors(train_set, paths["train_anchors"])
        write_anchors(test_set, paths["test_anchors"])
        write_metrics(
            metrics,
            paths["metrics"],
            paths["metrics_json"],
            extra={"pessimistic": pessimistic.to_dict(), "readout": cfg.readout},
        )
        if cfg.trace:
            paths["trace"] = out / "trace.csv"
            write_trace(history.trace, paths["trace"])
        if cfg.export_features:
            paths["features1"] = out / "features1.csv"
            paths["features2"] = out / "features2.csv"
            export_features(features[0], paths["features1"])
            export_features(features[1], paths["features2"])
        manifest.outputs = {k: str(v) for k, v in paths.items()}
        manifest.timings_ms["total"] = ms_since(t_run)
        manifest.write(out / "manifest.json")
    except (NetalignError, ValueError, OSError) as e:
        return _fail(stage, e)

    print(metrics.to_text(), end="")
    log_event(logger, "align_ok", out=str(out), mrr=metrics.mrr, ms=ms_since(t_run))
    return EXIT_OK


def cmd_evaluate(
    plan_path: str | Path,
    anchors_path: str | Path,
    ks: Sequence[int] = (1, 10),
    pessimistic: bool = False,
    out_dir: str | Path | None = None,
) -> int:
    stage = "load"
    try:
        plan = load_plan(plan_path)
        test = read_anchors(anchors_path, "test")
        stage = "evaluate"
        metrics = alignment_metrics(compute_ranks(plan, test), ks)
        text = metrics.to_text()
        extra: dict[str, Any] = {}
        if pessimistic:
            worst = alignment_metrics(compute_ranks(plan, test, pessimistic=True), ks)
            text += worst.to_text(prefix="pessimistic ")
            extra["pessimistic"] = worst.to_dict()
        stage = "write"
        out = Path(out_dir) if out_dir is not None else Path(plan_path).parent
        out.mkdir(parents=True, exist_ok=True)
        write_metrics(metrics, out / "evaluation.txt", out / "evaluation.json", extra=extra)
    except (NetalignError, ValueError, OSError) as e:
        return _fail(stage, e)
    print(text, end="")
    return EXIT_OK


def cmd_perturb(
    in_path: str | Path,
    kind: str,
    p: float,
    seed: int,
    out_path: str | Path,
    attrs_path: str | Path | None = None,
) -> int:
    stage = "load"
    try:
        g = load_graph(in_path, attrs_path)
        stage = "perturb"
        noisy = inject_noise(g, kind, p, seed)  # type: ignore[arg-type]
        stage = "write"
        if kind == "attribute":
            write_attributes(noisy, out_path)
        else:
            write_edge_list(noisy, out_path)
    except (NetalignError, ValueError, OSError) as e:
        return _fail(stage, e)
    log_event(logger, "perturb_ok", kind=kind, p=p, out=str(out_path))
    return EXIT_OK


def cmd_synthesize(
    in_path: str | Path,
    out_dir: str | Path,
    attrs_path: str | Path | None = None,
    insert: float = 0.10,
    delete: float = 0.15,
    seed: int = 0,
) -> int:
    stage = "load"
    try:
        g = load_graph(in_path, attrs_path)
        stage = "synthesize"
        g1, g2, truth = synthesize_pair(g, insert, delete, seed)
        stage = "write"
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        write_edge_list(g1, out / "edges1.txt")
        write_edge_list(g2, out / "edges2.txt")
        write_anchors(truth, out / "anchors.txt")
        if g.attributes is not None:
            write_attributes(g1, out / "attrs1.csv")
            write_attributes(g2, out / "attrs2.csv")
    except (NetalignError, ValueError, OSError) as e:
        return _fail(stage, e)
    log_event(logger, "synthesize_ok", out=str(out_dir), n=g.n)
    return EXIT_OK


def _ks(text: str) -> list[int]:
    try:
        ks = [int(k) for k in text.split(",") if k.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {text!r}"
        ) from None
    if not ks or min(ks) < 1:
        raise argparse.ArgumentTypeError("k values must be positive")
    return ks


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="netalign", description="Network alignment by fused optimal transport."
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("align", help="train on a dataset and write a run directory")
    p.add_argument("--config", required=True)
    p.add_argument("--mode", choices=MODES)
    p.add_argument("--threads", type=int)
    p.add_argument("--readout", choices=READOUTS)

    p = sub.add_parser("evaluate", help="score a saved plan against test anchors")
    p.add_argument("--plan", required=True)
    p.add_argument("--anchors", required=True)
    p.add_argument("--k", type=_ks, default=[1, 10])
    p.add_argument("--pessimistic", action="store_true")
    p.add_argument("--out")

    p = sub.add_parser("perturb", help="inject structural or attribute noise")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--attrs")
    p.add_argument("--kind", choices=("structural", "attribute"), required=True)
    p.add_argument("--p", type=float, required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)

    p = sub.add_parser("synthesize", help="build a noisy permuted pair from one graph")
    p.add_argument("--in", dest="in_path", required=True)
    p.add_argument("--attrs")
    p.add_argument("--insert", type=float, default=0.10)
    p.add_argument("--delete", type=float, default=0.15)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    return parser


def main(argv: Sequence[str] | None = None) -> int:
    configure_logging()
    args = build_parser().parse_args(argv)
    if args.command == "align":
        return cmd_align(args.config, args.mode, args.threads, args.readout)
    if args.command == "evaluate":
        return cmd_evaluate(args.plan, args.anchors, args.k, args.pessimistic, args.out)
    if args.command == "perturb":
        return cmd_perturb(args.in_path, args.kind, args.p, args.seed, args.out, args.attrs)
    return cmd_synthesize(
        args.in_path, args.out, args.attrs, args.insert, args.delete, args.seed
    )


if __name__ == "__main__":
    raise SystemExit(main())
