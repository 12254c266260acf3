"""Command line interface: ``sigfuse <command> ...``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import replace
from pathlib import Path


from . import lsap
from .benchmark import BenchmarkConfig, run_benchmark
from .dataset import SynthConfig, generate_synthetic, load_dataset, validate_dataset
from .embedding import EmbeddingModel, TrainConfig, embed, genuine_images, train
from .evaluation import (
    FIRST_K,
    RANDOM,
    RANDOM_SEEDED,
    SKILLED,
    PairwiseCache,
    Protocol,
    ScoreStore,
    grid_search_costs,
    parse_grid,
    run_protocol,
    write_scores_csv,
)
from .ged import CostParams, ged, graph_from_image
from .keypoint_graph import GraphExtractionParams, build_graph
from .preprocess import load_image, skeleton_from_image


def _pair(text: str) -> tuple[int, int]:
    a, b = text.lower().split("x")
    return int(a), int(b)


def _add_cost_args(p):
    p.add_argument("--c-node", type=float, default=25.0)
    p.add_argument("--c-edge", type=float, default=45.0)
    p.add_argument("--sampling-d", type=float, default=25.0)


def cmd_gen_synth(args):
    cfg = SynthConfig(
        users=args.users,
        genuine_per_user=args.genuine,
        skilled_per_user=args.forgeries,
        seed=args.seed,
        jitter=args.jitter,
        forgery_noise=args.forgery_noise,
        canvas=_pair(args.canvas),
        first_user=args.first_user,
    )
    ds = generate_synthetic(cfg, args.out)
    n_gen, n_forg = ds.counts()
    print(f"wrote {len(ds)} users, {n_gen} genuine, {n_forg} forgeries to {args.out}")


def cmd_validate(args):
    problems = validate_dataset(args.dir)
    for p in problems:
        print(p)
    if problems:
        return 1
    print("ok")
    return 0


def cmd_lsap(args):
    result = lsap.solve(lsap.read_matrix(args.matrix))
    print(repr(result.total_cost))
    if args.verbose:
        print(" ".join(str(c) for c in result.permutation))


def cmd_ged(args):
    extraction = GraphExtractionParams(args.sampling_d)
    g1 = graph_from_image(load_image(args.image1), extraction)
    g2 = graph_from_image(load_image(args.image2), extraction)
    res = ged(g1, g2, CostParams(args.c_node, args.c_edge))
    print("lower_bound,max_ged,normalized")
    print(f"{res.lower_bound!r},{res.max_ged!r},{res.normalized!r}")


def cmd_graph(args):
    skeleton = skeleton_from_image(load_image(args.image), debug_dir=args.debug_dir, stem=Path(args.image).stem)
    g = build_graph(skeleton, GraphExtractionParams(args.sampling_d))
    if args.out:
        g.save(args.out)
    else:
        sys.stdout.write(g.to_text())


def cmd_train(args):
    config = TrainConfig.from_text(Path(args.config).read_text()) if args.config else TrainConfig()
    ds = load_dataset(args.data)
    model = train(genuine_images(ds), config)
    model.save(args.out)
    print(f"best epoch {model.meta['best_epoch']}, val loss {model.meta['val_loss'][model.meta['best_epoch']]:.4f}")


def cmd_embed(args):
    model = EmbeddingModel.load(args.model)
    vec = embed(model, load_image(args.image))
    print(",".join(repr(float(v)) for v in vec))


def _cache(args, ds, model=None):
    store = ScoreStore(args.cache) if args.cache else None
    return PairwiseCache(
        ds,
        CostParams(args.c_node, args.c_edge),
        GraphExtractionParams(args.sampling_d),
        model=model,
        store=store,
        workers=args.workers,
    )


def cmd_evaluate(args):
    ds = load_dataset(args.data)
    model = EmbeddingModel.load(args.model) if args.model else None
    protocol = Protocol(
        reference_count=int(args.protocol[1:]),
        forgery_mode=SKILLED if args.forgeries == "sf" else RANDOM,
        reference_selection=RANDOM_SEEDED if args.runs > 1 else FIRST_K,
        runs=args.runs,
        seed=args.seed,
        aposteriori=args.aposteriori,
    )
    result = run_protocol(ds, protocol, args.system, cache=_cache(args, ds, model))
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    summary = {
        "system": args.system,
        "protocol": args.protocol,
        "forgeries": args.forgeries,
        "runs": args.runs,
        "seed": args.seed,
        "aposteriori": args.aposteriori,
        "eer": result.eer,
        "run_eers": result.run_eers,
        "threshold": result.threshold,
        "counts": result.counts,
    }
    (out / "eer.json").write_text(json.dumps(summary, indent=2) + "\n")
    result.det.write_csv(out / "det.csv")
    write_scores_csv(result.rows, out / "scores.csv")
    print(f"EER {100 * result.eer:.2f}%")


def cmd_grid(args):
    ds = load_dataset(args.data)
    c_nodes, c_edges = parse_grid(Path(args.grid).read_text()) if args.grid else (None, None)
    protocol = Protocol(reference_count=int(args.protocol[1:]), forgery_mode=RANDOM)
    kwargs = {"protocol": protocol, "cache": _cache(args, ds)}
    if c_nodes is not None:
        kwargs.update(c_nodes=c_nodes, c_edges=c_edges)
    result = grid_search_costs(ds, **kwargs)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    result.write_csv(out / "grid.csv")
    print(f"best c_node={result.best[0]:g} c_edge={result.best[1]:g} eer={100 * result.best_eer:.2f}%")


def cmd_benchmark(args):
    cfg = BenchmarkConfig()
    cfg = BenchmarkConfig(
        eval_data=replace(cfg.eval_data, seed=args.seed),
        train_data=replace(cfg.train_data, seed=args.seed),
        training=replace(cfg.training, epochs=args.epochs, seed=args.seed),
    )
    result = run_benchmark(args.out, cfg)
    table = result.table()
    Path(args.out, "benchmark.txt").write_text(table + "\n")
    print(table)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigfuse", description=__doc__)
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen-synth", help="write a synthetic signature dataset")
    p.add_argument("--users", type=int, default=10)
    p.add_argument("--genuine", type=int, default=24)
    p.add_argument("--forgeries", type=int, default=30)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--jitter", type=float, default=1.5)
    p.add_argument("--forgery-noise", type=float, default=4.0)
    p.add_argument("--canvas", default="96x192", help="HxW in pixels")
    p.add_argument("--first-user", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_gen_synth)

    p = sub.add_parser("validate-dataset", help="check manifest/file consistency")
    p.add_argument("dir")
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("lsap", help="solve an assignment problem from a matrix file")
    p.add_argument("matrix")
    p.set_defaults(func=cmd_lsap)

    p = sub.add_parser("ged", help="graph edit distance between two signature images")
    p.add_argument("image1")
    p.add_argument("image2")
    _add_cost_args(p)
    p.set_defaults(func=cmd_ged)

    p = sub.add_parser("graph", help="extract a keypoint graph (text or .gxl)")
    p.add_argument("image")
    p.add_argument("--sampling-d", type=float, default=25.0)
    p.add_argument("--out")
    p.add_argument("--debug-dir", help="write binary and skeleton masks here")
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train the triplet embedding network")
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("embed", help="print the embedding of an image as CSV")
    p.add_argument("--model", required=True)
    p.add_argument("--image", required=True)
    p.set_defaults(func=cmd_embed)

    helps = {
        "evaluate": "EER, DET curve and score dump of one system under a protocol",
        "grid-search": "pick c_node / c_edge by random-forgery EER of the GED system",
    }
    for name, func in (("evaluate", cmd_evaluate), ("grid-search", cmd_grid)):
        p = sub.add_parser(name, help=helps[name])
        p.add_argument("--data", required=True)
        p.add_argument("--protocol", choices=("r5", "r10"), default="r10")
        p.add_argument("--out", required=True)
        p.add_argument("--cache", help="sqlite file for pairwise scores")
        p.add_argument("--workers", type=int, default=1)
        _add_cost_args(p)
        p.set_defaults(func=func)
        if name == "evaluate":
            p.add_argument("--forgeries", choices=("sf", "rf"), default="sf")
            p.add_argument("--system", choices=("ged", "neural", "mcs"), default="mcs")
            p.add_argument("--model")
            p.add_argument("--runs", type=int, default=1)
            p.add_argument("--seed", type=int, default=0)
            p.add_argument("--aposteriori", action="store_true", help="a-posteriori user threshold alignment")
        else:
            p.add_argument("--grid", help="grid file (c_node = ..., c_edge = ...)")
    p = sub.add_parser("benchmark", help="run the seeded synthetic benchmark (all systems, R5/R10, SF/RF)")
    p.add_argument("--out", required=True, help="working directory for generated data and results")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--epochs", type=int, default=8)
    p.set_defaults(func=cmd_benchmark)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args) or 0


if __name__ == "__main__":
    sys.exit(main())
