"""Subcommand front-end wiring the full pipeline:

    train    -> checkpoint directory + loss history CSV
    extend   -> embeddings directory + convergence trace CSV
    complete -> KGC report (JSON + CSV row)
    query    -> per-shape query report + answer dump
    info     -> dataset / artifact summary
    grid     -> trial table over list-valued config fields + best config

Checkpoints and embeddings are written into append-only versioned
directories under ``paths.workdir``; nothing is mutated in place. Exit
codes: 0 success, 1 usage error, 2 data error, 3 numeric error.
"""

from __future__ import annotations

import argparse
import itertools
import json
import os
import sys
import time

import numpy as np

from . import config as config_mod
from . import evaluation, harmonic, kg, models, queries, sheaf, training
from .errors import DataError, NumericError, SheafKGError, UsageError


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _next_version_dir(base: str) -> str:
    os.makedirs(base, exist_ok=True)
    existing = [int(nm) for nm in os.listdir(base) if nm.isdigit()]
    path = os.path.join(base, f"{max(existing, default=0) + 1:04d}")
    os.makedirs(path)
    return path


def _latest_version_dir(base: str) -> str:
    if not os.path.isdir(base):
        raise DataError(f"no artifact directory at {base}")
    existing = sorted(nm for nm in os.listdir(base) if nm.isdigit())
    if not existing:
        raise DataError(f"no versioned artifacts under {base}")
    return os.path.join(base, existing[-1])


def _require_path(cfg: dict, key: str) -> str:
    value = cfg["paths"][key]
    if value is None:
        raise UsageError(f"paths.{key} is required for this command")
    return value


def _train_config(cfg: dict) -> training.TrainConfig:
    m = cfg["model"]
    return training.TrainConfig(
        loss=m["loss"], lr=m["lr"], epochs=m["epochs"], batch_size=m["batch_size"],
        num_negs_per_pos=m["num_negs_per_pos"], margin=m["margin"],
        adversarial_temperature=m["adversarial_temperature"], seed=cfg["seed"],
        score_exponent=m["p"], negative_mode=m["negative_mode"])


# ---------------------------------------------------------------------------
# In-memory pipeline stages (shared by the commands and the grid runner)


def run_train(cfg: dict):
    graph = kg.load_triples(_require_path(cfg, "train"))
    params, history = training.train(graph, cfg["model"]["family"], cfg["model"]["d"],
                                     _train_config(cfg))
    return graph, params, history


def load_inference_graph(cfg: dict, ckpt_entities: kg.Vocab, ckpt_relations: kg.Vocab):
    """Observable inference graph plus the boundary/interior partition."""
    mode = cfg["extension"]["mode"]
    if mode not in kg.SPLIT_MODES:
        raise UsageError(f"extension.mode must be one of {kg.SPLIT_MODES}")
    entities = ckpt_entities.copy() if mode == kg.SEMI_INDUCTIVE else kg.Vocab()
    graph = kg.load_triples(_require_path(cfg, "inf_obs"), entities=entities,
                            relations=ckpt_relations.copy(), freeze_relations=True)
    n_boundary = len(ckpt_entities) if mode == kg.SEMI_INDUCTIVE else 0
    boundary = np.arange(n_boundary, dtype=np.int64)
    interior = np.arange(n_boundary, graph.n_entities, dtype=np.int64)
    return graph, boundary, interior


def run_extension(cfg: dict, params: models.ModelParams, graph, boundary, interior):
    reps = models.to_sheaf_form(params)
    system = sheaf.build_system(graph, reps)
    ext = cfg["extension"]
    d = params.dim
    x_boundary = params.entities[boundary] if len(boundary) else np.zeros((0, d))
    x_init = harmonic.init_unknown(len(interior), d, ext["init"], seed=cfg["seed"])
    problem = harmonic.ExtensionProblem(
        system, boundary, interior, x_boundary, x_init, alpha=ext["alpha"],
        max_iters=ext["max_iters"], tol=ext["tol"], normalized=ext["normalized"],
        dense_limit=ext["dense_limit"])
    if ext["closed_form"]:
        return harmonic.extend_closed_form(problem), reps, []
    x, records = harmonic.extend_iterative(problem)
    return x, reps, records


def load_estimation_triples(cfg: dict, entities: kg.Vocab, relations: kg.Vocab):
    est = kg.load_triples(_require_path(cfg, "inf_est"), entities=entities.copy(),
                          relations=relations.copy(), freeze_entities=True,
                          freeze_relations=True)
    return est.triples


def load_observed_index(cfg: dict, entities: kg.Vocab, relations: kg.Vocab):
    obs = kg.load_triples(_require_path(cfg, "inf_obs"), entities=entities.copy(),
                          relations=relations.copy(), freeze_entities=True,
                          freeze_relations=True)
    return obs.triples


def validation_instances(cfg: dict) -> list[queries.QueryInstance]:
    """Queries used for grid selection: the configured query file filtered to
    the configured shapes, or 1p queries derived from the estimation split."""
    shapes = set(cfg["grid"]["query_shapes"])
    if cfg["paths"]["queries"]:
        instances = queries.load_queries_jsonl(cfg["paths"]["queries"])
        instances = [inst for inst in instances if inst.query.shape in shapes]
        if not instances:
            raise UsageError("query file contains no instances of the requested shapes")
        return instances
    if cfg["paths"]["inf_est"] is None:
        raise UsageError("grid needs paths.queries or paths.inf_est for validation")
    return None  # resolved later once the vocabularies exist


# ---------------------------------------------------------------------------
# Artifact I/O


def save_embeddings(dirpath: str, x: np.ndarray, reps, entities: kg.Vocab,
                    relations: kg.Vocab, meta_extra: dict) -> None:
    os.makedirs(dirpath, exist_ok=True)
    arrays = {
        "embeddings": np.asarray(x, dtype=np.float64),
        "rep_head": np.stack([rep.head for rep in reps]),
        "rep_tail": np.stack([rep.tail for rep in reps]),
        "rep_trans": np.stack([rep.translation for rep in reps]),
    }
    tensors = {}
    for name, arr in arrays.items():
        fname = f"{name}.f64"
        np.ascontiguousarray(arr, dtype="<f8").tofile(os.path.join(dirpath, fname))
        tensors[name] = {"file": fname, "shape": list(arr.shape)}
    meta = {"format_version": 1, "kind": "embeddings", "tensors": tensors}
    meta.update(meta_extra)
    with open(os.path.join(dirpath, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    kg.save_vocab(entities, os.path.join(dirpath, "entities.tsv"))
    kg.save_vocab(relations, os.path.join(dirpath, "relations.tsv"))


def load_embeddings(dirpath: str):
    with open(os.path.join(dirpath, "meta.json"), "r", encoding="utf-8") as fh:
        meta = json.load(fh)
    arrays = {}
    for name, info in meta["tensors"].items():
        arr = np.fromfile(os.path.join(dirpath, info["file"]), dtype="<f8")
        arrays[name] = arr.reshape(info["shape"])
    reps = [sheaf.RelationRepresentation(arrays["rep_head"][i], arrays["rep_tail"][i],
                                         arrays["rep_trans"][i])
            for i in range(arrays["rep_head"].shape[0])]
    entities = kg.load_vocab(os.path.join(dirpath, "entities.tsv"))
    relations = kg.load_vocab(os.path.join(dirpath, "relations.tsv"))
    return arrays["embeddings"], reps, meta, entities, relations


# ---------------------------------------------------------------------------
# Commands


def cmd_train(cfg, defaulted, args) -> int:
    start = time.time()
    graph, params, history = run_train(cfg)
    workdir = cfg["paths"]["workdir"]
    ckpt_dir = _next_version_dir(os.path.join(workdir, "checkpoints"))
    training.save_checkpoint(ckpt_dir, params, graph.entities, graph.relations,
                             config=_train_config(cfg),
                             extra_meta={"config_echo": config_mod.config_echo(cfg, defaulted)})
    training.save_history_csv(os.path.join(ckpt_dir, "loss_history.csv"), history)
    final = history[-1][1] if history else float("nan")
    print(f"trained {cfg['model']['family']} d={cfg['model']['d']} "
          f"on {graph.n_triples} triples for {len(history)} epochs "
          f"(final mean loss {final:.6g}, {time.time() - start:.1f}s)")
    print(f"checkpoint: {ckpt_dir}")
    return 0


def _resolve_checkpoint(cfg, args):
    if getattr(args, "checkpoint", None):
        return args.checkpoint
    return _latest_version_dir(os.path.join(cfg["paths"]["workdir"], "checkpoints"))


def _resolve_embeddings(cfg, args):
    if getattr(args, "embeddings", None):
        return args.embeddings
    return _latest_version_dir(os.path.join(cfg["paths"]["workdir"], "embeddings"))


def cmd_extend(cfg, defaulted, args) -> int:
    start = time.time()
    ckpt_dir = _resolve_checkpoint(cfg, args)
    params, meta, ents, rels = training.load_checkpoint(ckpt_dir)
    graph, boundary, interior = load_inference_graph(cfg, ents, rels)
    x, reps, records = run_extension(cfg, params, graph, boundary, interior)
    out_dir = _next_version_dir(os.path.join(cfg["paths"]["workdir"], "embeddings"))
    save_embeddings(out_dir, x, reps, graph.entities, graph.relations, {
        "family": params.family,
        "d": params.dim,
        "p": meta.get("p", 2),
        "mode": cfg["extension"]["mode"],
        "normalized": cfg["extension"]["normalized"],
        "n_boundary": int(len(boundary)),
        "n_interior": int(len(interior)),
        "seed": cfg["seed"],
        "checkpoint": ckpt_dir,
        "config_echo": config_mod.config_echo(cfg, defaulted),
    })
    harmonic.write_trace_csv(os.path.join(out_dir, "trace.csv"), records)
    last = records[-1] if records else None
    print(f"extended {len(interior)} interior entities over {len(boundary)} boundary "
          f"entities (mode={cfg['extension']['mode']}, {time.time() - start:.1f}s)")
    if last is not None:
        print(f"iterations: {last.iteration}  residual: {last.residual:.3e}  "
              f"energy: {last.energy:.6g}")
    print(f"embeddings: {out_dir}")
    return 0


def cmd_complete(cfg, defaulted, args) -> int:
    start = time.time()
    emb_dir = _resolve_embeddings(cfg, args)
    x, reps, meta, ents, rels = load_embeddings(emb_dir)
    est = load_estimation_triples(cfg, ents, rels)
    obs = load_observed_index(cfg, ents, rels)
    filter_index = evaluation.build_filter_index(obs, est)
    ks = cfg["eval"]["k"]
    records, mets = evaluation.evaluate_kgc(reps, x, est, filter_index, ks=ks,
                                            p=meta.get("p", 2))
    report = evaluation.make_report(meta["family"], cfg["paths"]["inf_est"],
                                    meta["mode"], mets,
                                    config_mod.config_echo(cfg, defaulted),
                                    cfg["seed"], time.time() - start)
    report["embeddings"] = emb_dir
    reports_dir = os.path.join(cfg["paths"]["workdir"], "reports")
    os.makedirs(reports_dir, exist_ok=True)
    out = _next_version_dir(os.path.join(reports_dir, "kgc"))
    evaluation.write_report(os.path.join(out, "report.json"), report)
    evaluation.append_report_csv(os.path.join(reports_dir, "reports.csv"), report)
    for key in sorted(mets):
        print(f"{key}: {mets[key]}")
    print(f"report: {os.path.join(out, 'report.json')}")
    return 0


def cmd_query(cfg, defaulted, args) -> int:
    start = time.time()
    emb_dir = _resolve_embeddings(cfg, args)
    x, reps, meta, ents, rels = load_embeddings(emb_dir)
    instances = queries.load_queries_jsonl(_require_path(cfg, "queries"))
    ks = cfg["eval"]["k"]
    normalized = cfg["extension"]["normalized"]
    all_records: list[evaluation.RankRecord] = []
    by_shape: dict[str, list[evaluation.RankRecord]] = {}
    for idx, inst in enumerate(instances):
        records, _ = queries.answer_query(inst, reps, x, ks=ks, normalized=normalized)
        records = [evaluation.RankRecord(idx, rec.true_id, rec.rank, rec.pool_size)
                   for rec in records]
        all_records.extend(records)
        by_shape.setdefault(inst.query.shape, []).extend(records)
    if not all_records:
        raise DataError("no hard answers found in the query file")
    overall = evaluation.metrics(all_records, ks)
    report = evaluation.make_report(meta["family"], cfg["paths"]["queries"],
                                    meta["mode"], overall,
                                    config_mod.config_echo(cfg, defaulted),
                                    cfg["seed"], time.time() - start)
    report["frame"] = "normalized" if normalized else "raw"
    report["per_shape"] = {shape: evaluation.metrics(recs, ks)
                           for shape, recs in sorted(by_shape.items())}
    reports_dir = os.path.join(cfg["paths"]["workdir"], "reports")
    os.makedirs(reports_dir, exist_ok=True)
    out = _next_version_dir(os.path.join(reports_dir, "query"))
    evaluation.write_report(os.path.join(out, "report.json"), report)
    queries.save_answers_jsonl(os.path.join(out, "answers.jsonl"), all_records)
    evaluation.append_report_csv(os.path.join(reports_dir, "reports.csv"), report)
    for shape, mets in sorted(report["per_shape"].items()):
        print(f"{shape}: " + "  ".join(f"{k}={v}" for k, v in sorted(mets.items())))
    print("overall: " + "  ".join(f"{k}={v}" for k, v in sorted(overall.items())))
    print(f"report: {os.path.join(out, 'report.json')}")
    return 0


def cmd_info(cfg, defaulted, args) -> int:
    target = args.path
    if target is None:
        raise UsageError("info requires a dataset file or artifact directory")
    if os.path.isdir(target):
        meta_path = os.path.join(target, "meta.json")
        if not os.path.exists(meta_path):
            raise DataError(f"{target} has no meta.json")
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
        kind = meta.get("kind", "checkpoint")
        print(f"kind: {kind}")
        for key in ("family", "d", "p", "mode", "n_entities", "n_relations",
                    "n_boundary", "n_interior", "seed"):
            if key in meta:
                print(f"{key}: {meta[key]}")
        return 0
    graph = kg.load_triples(target)
    print(f"entities: {graph.n_entities}")
    print(f"relations: {graph.n_relations}")
    print(f"triples: {graph.n_triples}")
    return 0


def cmd_grid(cfg, defaulted, args) -> int:
    axes = config_mod.grid_axes(cfg)
    if not axes:
        raise UsageError("grid requires at least one list-valued config field")
    combos = list(itertools.product(*[values for _, values in axes]))
    if not combos:
        raise UsageError("grid expanded to zero trials")
    if args.budget is not None and len(combos) > args.budget:
        rng = np.random.default_rng(cfg["seed"])
        keep = sorted(rng.choice(len(combos), size=args.budget, replace=False).tolist())
        combos = [combos[i] for i in keep]

    preset_instances = validation_instances(cfg)
    workdir = cfg["paths"]["workdir"]
    os.makedirs(os.path.join(workdir, "grid"), exist_ok=True)
    trials_path = os.path.join(workdir, "grid", "trials.csv")
    ks = cfg["eval"]["k"]
    if 10 not in ks:
        raise UsageError("grid selection needs hits@10; add 10 to eval.k")

    train_cache: dict[str, tuple] = {}
    rows = []
    best = None
    for trial, combo in enumerate(combos):
        trial_cfg = json.loads(json.dumps(cfg))  # deep copy via round-trip
        for (key, _), value in zip(axes, combo):
            config_mod.set_key(trial_cfg, key, value)
        cache_key = json.dumps({"model": trial_cfg["model"], "seed": trial_cfg["seed"],
                                "train": trial_cfg["paths"]["train"]}, sort_keys=True)
        if cache_key not in train_cache:
            train_cache[cache_key] = run_train(trial_cfg)
        graph_train, params, _ = train_cache[cache_key]
        graph, boundary, interior = load_inference_graph(
            trial_cfg, graph_train.entities, graph_train.relations)
        x, reps, _ = run_extension(trial_cfg, params, graph, boundary, interior)
        if preset_instances is not None:
            instances = preset_instances
        else:
            est = load_estimation_triples(trial_cfg, graph.entities, graph.relations)
            obs_index = evaluation.build_filter_index(
                load_observed_index(trial_cfg, graph.entities, graph.relations))
            instances = queries.queries_from_triples(est, obs_index)
        records = []
        for inst in instances:
            recs, _ = queries.answer_query(inst, reps, x, ks=ks,
                                           normalized=trial_cfg["extension"]["normalized"])
            records.extend(recs)
        mets = evaluation.metrics(records, ks)
        row = {"trial": trial}
        row.update({key: value for (key, _), value in zip(axes, combo)})
        row.update(mets)
        rows.append(row)
        if best is None or mets["hits@10"] > best[1]["hits@10"]:
            best = (trial_cfg, mets, row)
        print(f"trial {trial}: " + "  ".join(
            f"{key}={value}" for (key, _), value in zip(axes, combo))
            + f"  hits@10={mets['hits@10']:.4f}")

    import csv as _csv
    with open(trials_path, "w", newline="", encoding="utf-8") as fh:
        writer = _csv.DictWriter(fh, fieldnames=list(rows[0].keys()))
        writer.writeheader()
        writer.writerows(rows)
    best_cfg, best_mets, best_row = best
    with open(os.path.join(workdir, "grid", "best.json"), "w", encoding="utf-8") as fh:
        json.dump({"config": config_mod.config_echo(best_cfg, defaulted),
                   "metrics": best_mets, "trial": best_row["trial"]}, fh,
                  indent=2, sort_keys=True)
    print(f"best trial {best_row['trial']}: hits@10={best_mets['hits@10']:.4f}")
    print(f"trials: {trials_path}")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="sheafkg", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    def add(name, **kwargs):
        p = sub.add_parser(name, **kwargs)
        p.add_argument("-c", "--config", default=None, help="JSON config file")
        return p

    add("train", help="train a transductive model")
    p = add("extend", help="harmonically extend a checkpoint to new entities")
    p.add_argument("--checkpoint", default=None, help="checkpoint directory")
    p = add("complete", help="filtered KGC evaluation of extended embeddings")
    p.add_argument("--embeddings", default=None, help="embeddings directory")
    p = add("query", help="answer conjunctive queries from a JSONL file")
    p.add_argument("--embeddings", default=None, help="embeddings directory")
    p = add("info", help="summarize a dataset file or artifact directory")
    p.add_argument("path", nargs="?", default=None)
    p = add("grid", help="exhaustive grid over list-valued config fields")
    p.add_argument("--budget", type=int, default=None,
                   help="max trials (seeded subsample when exceeded)")
    return parser


_COMMANDS = {
    "train": cmd_train,
    "extend": cmd_extend,
    "complete": cmd_complete,
    "query": cmd_query,
    "info": cmd_info,
    "grid": cmd_grid,
}


def main(argv=None) -> int:
    argv = sys.argv[1:] if argv is None else list(argv)
    parser = build_parser()
    try:
        args, extra = parser.parse_known_args(argv)
        overrides = []
        for token in extra:
            if not token.startswith("--"):
                raise UsageError(f"unrecognized argument {token!r}")
            overrides.append(token)
        cfg, defaulted = config_mod.load_config(args.config, overrides)
        return _COMMANDS[args.command](cfg, defaulted, args)
    except SheafKGError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return getattr(exc, "exit_code", 1)


if __name__ == "__main__":
    sys.exit(main())
