"""Command line entry point: ``revolt <verb> [options]``."""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from .config import Config
from .evaluation import (
    WorldCache, ablation_csv, ablation_suite, continuous_study, dataset_split, load_models, load_regions,
    load_table, make_episodes, object_arrays, region_arrays, run_batch, run_episode, save_stage, steps_dropped,
)
from .house import generate_dataset, load_dataset, save_dataset
from .object_embed import train_object_embedder
from .region_embed import train_region_embedder
from .rollout import train_rollout
from .sim import EpisodeSpec

log = logging.getLogger("revolt")


def _houses(args, config):
    if args.data and Path(args.data).exists():
        return load_dataset(args.data)
    return generate_dataset(range(config.eval.train_houses), config.generator)


def _split(houses, config):
    tr, te = dataset_split(config)
    return [houses[i] for i in tr], [houses[i] for i in te]


def cmd_gen(args, config):
    houses = generate_dataset(range(args.count or config.eval.train_houses), config.generator)
    save_dataset(houses, args.out)
    print(f"wrote {len(houses)} houses to {args.out}")


def cmd_train_objects(args, config):
    tr, te = _split(_houses(args, config), config)
    t = time.perf_counter()
    res = train_object_embedder(tr, config.object_embed, te)
    secs = time.perf_counter() - t
    save_stage(args.models, "objects", object_arrays(res.table), {"accuracy": res.accuracy, "seconds": secs})
    print(json.dumps({"nearest_centroid_accuracy": res.accuracy, "seconds": round(secs, 1)}))


def cmd_train_regions(args, config):
    tr, te = _split(_houses(args, config), config)
    table = load_table(args.models)
    t = time.perf_counter()
    n_labels = len(config.generator.labels)
    res = train_region_embedder(tr, table, n_labels, config.region_embed, te)
    secs = time.perf_counter() - t
    save_stage(args.models, "regions", region_arrays(res.params, res.label_table),
               {"n_labels": n_labels, "membership_accuracy": res.membership_accuracy,
                "classification_accuracy": res.classification_accuracy, "seconds": secs})
    print(json.dumps({"membership_accuracy": res.membership_accuracy,
                      "classification_accuracy": res.classification_accuracy, "seconds": round(secs, 1)}))


def cmd_train_rollout(args, config):
    tr, te = _split(_houses(args, config), config)
    _, labels, meta = load_regions(args.models)
    t = time.perf_counter()
    res = train_rollout(tr, labels, meta["n_labels"], config.rollout, te)
    secs = time.perf_counter() - t
    save_stage(args.models, "rollout", res.params, {"accuracy": res.accuracy, "chance": res.chance, "seconds": secs})
    print(json.dumps({"next_label_accuracy": res.accuracy, "chance": res.chance, "seconds": round(secs, 1)}))


def _episodes(args, config, worlds):
    spec = str(args.episodes)
    if Path(spec).is_file():
        rows = json.loads(Path(spec).read_text())
        return [EpisodeSpec(int(r["house"]), tuple(r["start"]), int(r["target"]), r.get("mode", "independent"), k)
                for k, r in enumerate(rows)]
    return make_episodes(config, int(spec), worlds=worlds)


def _models(args, config):
    if args.agent == "random":
        return None
    models, _ = load_models(args.models)
    return models


def cmd_eval(args, config):
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    worlds = WorldCache(config)
    if args.mode == "c":
        models, _ = load_models(args.models)
        study = continuous_study(config, models, int(args.episodes), worlds=worlds)
        rows = []
        for mode, reports in study.items():
            for rep in reports:
                rows.extend((mode, r) for r in rep.rows)
        lines = ["mode,house,target,episode,success,steps,spl"]
        lines += [f"{m},{r.house},{r.target},{r.index % 100},{r.success},{r.steps},{r.spl:.6f}" for m, r in rows]
        (out / "continuous.csv").write_text("\n".join(lines) + "\n")
        cont = [r.success for rep in study["continuous"] for r in rep.rows]
        ind = [r.success for rep in study["independent"] for r in rep.rows]
        drop = float(np.mean([steps_dropped(rep) for rep in study["continuous"]]))
        summary = {"SR_continuous": float(np.mean(cont)), "SR_independent": float(np.mean(ind)),
                   "steps_drop_fraction": drop}
    else:
        eps = _episodes(args, config, worlds)
        rep = run_batch(eps, args.agent, config, _models(args, config), worlds=worlds)
        (out / f"{rep.agent}.csv").write_text(rep.to_csv())
        summary = rep.summary()
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    print(json.dumps(summary))


def cmd_ablate(args, config):
    models, _ = load_models(args.models)
    reports = ablation_suite(config, models, int(args.episodes))
    text = ablation_csv(reports)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "ablation.csv").write_text(text)
    print(text, end="")


def cmd_render(args, config):
    from .render import render_topdown

    worlds = WorldCache(config)
    eps = make_episodes(config, args.index + 1, worlds=worlds)
    spec = eps[args.index]
    world, _ = worlds.get(spec.house)
    trace, tree = None, None
    if args.agent != "none":
        from .agent import make_agent

        agent = make_agent(args.agent, _models(args, config), config, seed=config.seed)
        run = run_episode(spec, agent, config, worlds)
        trace, tree = run.trace, getattr(agent, "mem", None) and agent.mem.tree
    svg = render_topdown(world.house, trace, tree, spec.target, walls=world.walls,
                         success_radius=config.sim.success_radius)
    Path(args.out).write_text(svg)
    print(f"wrote {args.out}")


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="revolt", description="Relation-guided object-goal navigation.")
    p.add_argument("--config", help="JSON config file (every constant of every module)")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="verb", required=True)

    g = sub.add_parser("gen", help="generate procedural houses")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int)
    g.set_defaults(fn=cmd_gen)

    for verb, fn in (("train-objects", cmd_train_objects), ("train-regions", cmd_train_regions),
                     ("train-rollout", cmd_train_rollout)):
        t = sub.add_parser(verb)
        t.add_argument("--models", default="models")
        t.add_argument("--data", help="house directory from `gen` (generated on the fly otherwise)")
        t.set_defaults(fn=fn)

    e = sub.add_parser("eval", help="run an episode batch")
    e.add_argument("--agent", choices=("revolt", "random", "greedy"), default="revolt")
    e.add_argument("--mode", choices=("i", "c"), default="i")
    e.add_argument("--episodes", default="200", help="count, or a JSON episode file")
    e.add_argument("--seed", type=int)
    e.add_argument("--models", default="models")
    e.add_argument("--out", default="results")
    e.set_defaults(fn=cmd_eval)

    a = sub.add_parser("ablate", help="full agent against its three ablations")
    a.add_argument("--episodes", default="100")
    a.add_argument("--seed", type=int)
    a.add_argument("--models", default="models")
    a.add_argument("--out", default="results")
    a.set_defaults(fn=cmd_ablate)

    r = sub.add_parser("render", help="SVG top-down map of one episode")
    r.add_argument("--index", type=int, default=0)
    r.add_argument("--agent", choices=("revolt", "random", "greedy", "none"), default="revolt")
    r.add_argument("--seed", type=int)
    r.add_argument("--models", default="models")
    r.add_argument("--out", default="episode.svg")
    r.set_defaults(fn=cmd_render)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING)
    config = Config.load(args.config)
    if getattr(args, "seed", None) is not None:
        config.seed = args.seed
    args.fn(args, config)
    return 0


if __name__ == "__main__":
    sys.exit(main())
