"""Command-line entry points tying the engine together.

Subcommands: index, run, beam, generate, grpo-collect, eval, report. Flags
mirror the config-file fields; a `--config` file provides defaults and flags
override it. Every output file starts with a meta record carrying the config
hash and engine version. Failures exit nonzero with a machine-readable error
record on stderr.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import dataio
from .archetypes import KINDS, PolicyResources
from .config import ConfigError, RunConfig, episode_seed, load_config
from .corpus import CorpusIndex, build_index
from .embed import EmbeddingServiceClient, HashEmbedder
from .engine import EpisodeConfig, Retriever, episode_to_dict, run_batch
from .metrics import (
    analyze_behavior,
    evaluate_episodes,
    write_behavior_report,
    write_metrics_report,
)
from .policy import ArchetypeConfig, RemotePolicy, ScriptedPolicy, derive_rng
from .rewards import GrpoConfig, collect_grouped_episode, make_training_record
from .synth import DatasetManifest, assemble_pool, generate_trajectory, sample_sft_dataset
from .trace import serialize_trace
from .vocab import TfidfTable
from .engine import episode_from_dict

log = logging.getLogger("orion")


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="config file (json or yaml); flags override it")
    p.add_argument("--corpus", help="corpus JSON Lines file")
    p.add_argument("--qrels", help="qrels TSV file")
    p.add_argument("--queries", help="queries JSON Lines file")
    p.add_argument("--embeddings", help="embedding file (binary or JSON Lines)")
    p.add_argument("--embed-dim", type=int, help="hash embedder dimension")
    p.add_argument("--policy", help=f"archetype kind ({', '.join(KINDS)}) or 'remote'")
    p.add_argument("--top-k", type=int, dest="k", help="retrieval depth per turn")
    p.add_argument("--max-turns", type=int, help="turn budget per episode")
    p.add_argument("--beam-size", type=int, help="beam survivors per turn (B)")
    p.add_argument("--expansion", type=int, help="candidates per beam per turn (M)")
    p.add_argument("--group-size", type=int, help="grouped-sampling size (G)")
    p.add_argument("--selection", choices=["argmax", "proportional"])
    p.add_argument("--zscore", action="store_true", default=None)
    p.add_argument("--seed", type=int, help="root RNG seed")
    p.add_argument("--workers", type=int, help="episode worker pool size")
    p.add_argument("--out", dest="out_dir", help="output directory")


_FLAG_FIELDS = (
    "corpus", "qrels", "queries", "embeddings", "embed_dim", "policy", "k",
    "max_turns", "beam_size", "expansion", "group_size", "selection", "zscore",
    "seed", "workers", "out_dir",
)


def _build_config(args: argparse.Namespace, check_paths: bool = True) -> RunConfig:
    cfg = load_config(args.config, check_paths=False) if args.config else RunConfig()
    for name in _FLAG_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            setattr(cfg, name, value)
    cfg.validate(check_paths=check_paths)
    return cfg


def _load_index(cfg: RunConfig) -> tuple[CorpusIndex, TfidfTable]:
    docs = dataio.read_corpus(cfg.corpus)
    if cfg.embeddings:
        embeddings = dataio.read_embeddings(cfg.embeddings)
    else:
        embedder = _query_embedder(cfg)
        embeddings = {d.doc_id: embedder(f"{d.title} {d.text}".strip()) for d in docs}
    index = build_index(docs, embeddings)
    return index, TfidfTable.from_documents(docs)


def _query_embedder(cfg: RunConfig):
    if cfg.embed_backend == "service":
        return EmbeddingServiceClient(cfg.embed_endpoint, cfg.embed_model or "default")
    return HashEmbedder(cfg.embed_dim)


def _retriever(cfg: RunConfig) -> tuple[Retriever, TfidfTable]:
    index, vocab = _load_index(cfg)
    return Retriever(index, _query_embedder(cfg), snippet_chars=cfg.snippet_chars), vocab


def _policy_factory(cfg: RunConfig, retriever: Retriever, vocab: TfidfTable):
    resources = PolicyResources(vocab=vocab, probe=retriever.best_similarity)
    if cfg.policy == "remote":
        shared = RemotePolicy(
            cfg.remote_endpoint,
            cfg.remote_model or "default",
            mode=cfg.remote_mode,
            k=cfg.k,
            max_query_chars=cfg.max_query_chars,
        )
        return lambda qid: shared
    kind = cfg.policy

    def make(qid: str) -> ScriptedPolicy:
        arch = ArchetypeConfig(kind=kind, seed=episode_seed(cfg.seed, qid), params=cfg.policy_params)
        return ScriptedPolicy(arch, resources, max_query_chars=cfg.max_query_chars)

    return make


def _out_dir(cfg: RunConfig) -> Path:
    out = Path(cfg.out_dir)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_log(path: Path, cfg: RunConfig, records: list[dict]) -> None:
    meta = {"record": "meta", **cfg.meta()}
    dataio.write_jsonl([meta] + records, path)


def _read_episode_log(path: str) -> list[tuple[str, "object"]]:
    episodes = []
    for obj in dataio.read_jsonl(path):
        if obj.get("record") == "meta":
            continue
        episodes.append(episode_from_dict(obj))
    return episodes


def cmd_index(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    index, _ = _load_index(cfg)
    out = _out_dir(cfg) / "index"
    out.mkdir(parents=True, exist_ok=True)
    embeddings = {d.doc_id: index.embedding_of(d.doc_id) for d in index.documents}
    dataio.write_embeddings(embeddings, out / "embeddings.orne")
    meta = {**cfg.meta(), "dim": index.dim, "count": len(index), "corpus": cfg.corpus}
    (out / "meta.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n")
    print(f"indexed {len(index)} docs (dim {index.dim}) -> {out}")
    return 0


def _run_episodes(args: argparse.Namespace, beam: bool) -> int:
    cfg = _build_config(args)
    retriever, vocab = _retriever(cfg)
    queries = dataio.read_queries(cfg.queries)
    qrels = dataio.read_qrels(cfg.qrels) if cfg.qrels else {}
    episode_cfg = EpisodeConfig(k=cfg.k, max_turns=cfg.max_turns)
    results = run_batch(
        queries,
        qrels,
        _policy_factory(cfg, retriever, vocab),
        retriever,
        episode_cfg,
        beam_size=cfg.beam_size if beam else None,
        expansion=cfg.expansion if beam else 1,
        workers=cfg.workers,
    )
    out = _out_dir(cfg)
    _write_log(out / "episodes.jsonl", cfg, [episode_to_dict(q, r) for q, r in results])
    rendered = [
        f"=== {qid} [{r.trace.terminal_reason}] ===\n{serialize_trace(r.trace)}\n"
        for qid, r in results
    ]
    (out / "episodes.txt").write_text("\n".join(rendered))
    wins = sum(1 for _, r in results if r.succeeded)
    print(f"{len(results)} episodes, {wins} successful -> {out / 'episodes.jsonl'}")
    return 0


def cmd_run(args: argparse.Namespace) -> int:
    return _run_episodes(args, beam=False)


def cmd_beam(args: argparse.Namespace) -> int:
    return _run_episodes(args, beam=True)


def cmd_generate(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    retriever, vocab = _retriever(cfg)
    resources = PolicyResources(vocab=vocab, probe=retriever.best_similarity)
    queries = dataio.read_queries(cfg.queries)
    qrels = dataio.read_qrels(cfg.qrels) if cfg.qrels else {}
    kinds = args.archetypes.split(",") if args.archetypes else list(KINDS)
    records = []
    for qid, text in queries:
        targets = frozenset(d for d, g in qrels.get(qid, {}).items() if g >= 1)
        for kind in kinds:
            arch = ArchetypeConfig(
                kind=kind, seed=episode_seed(cfg.seed, f"{kind}:{qid}"), params=cfg.policy_params
            )
            records.append(
                generate_trajectory(
                    arch, text, retriever, resources, targets, k=cfg.k, max_turns=cfg.max_turns
                )
            )
    pool = assemble_pool(records)
    out = _out_dir(cfg)
    _write_log(out / "pool.jsonl", cfg, [r.to_dict() for r in pool.records])
    print(f"pool of {len(pool)} trajectories -> {out / 'pool.jsonl'}")
    if args.sft_total:
        share = 1.0 / len(kinds)
        manifest = DatasetManifest({k: share for k in kinds}, args.sft_total)
        sft = sample_sft_dataset(pool, manifest, seed=cfg.seed)
        _write_log(out / "sft.jsonl", cfg, [r.to_dict() for r in sft])
        print(f"sft dataset of {len(sft)} records -> {out / 'sft.jsonl'}")
    return 0


def cmd_grpo_collect(args: argparse.Namespace) -> int:
    cfg = _build_config(args)
    retriever, vocab = _retriever(cfg)
    queries = dataio.read_queries(cfg.queries)
    qrels = dataio.read_qrels(cfg.qrels) if cfg.qrels else {}
    grpo = GrpoConfig(
        group_size=cfg.group_size,
        selection=cfg.selection,
        advantage_mode="z_score" if cfg.zscore else "mean_center",
        beta=cfg.beta,
    )
    policy_for = _policy_factory(cfg, retriever, vocab)
    records = []
    for qid, text in queries:
        targets = frozenset(d for d, g in qrels.get(qid, {}).items() if g >= 1)
        episode_cfg = EpisodeConfig(k=cfg.k, max_turns=cfg.max_turns, target_ids=targets)
        trace, groups = collect_grouped_episode(
            policy_for(qid), retriever, text, episode_cfg, grpo,
            derive_rng(cfg.seed, "grpo-select", qid),
        )
        records.append(make_training_record(trace, groups, grpo).to_dict())
    out = _out_dir(cfg)
    _write_log(out / "training_records.jsonl", cfg, records)
    print(f"{len(records)} training records -> {out / 'training_records.jsonl'}")
    return 0


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = _build_config(args, check_paths=False)
    if not cfg.qrels:
        raise ConfigError("eval needs --qrels")
    episodes = _read_episode_log(args.episodes)
    qrels = dataio.read_qrels(cfg.qrels)
    report = evaluate_episodes(episodes, qrels, cfg.k)
    out = _out_dir(cfg)
    write_metrics_report(report, out, meta=cfg.meta())
    print(json.dumps(report.summary(), sort_keys=True))
    return 0


def cmd_report(args: argparse.Namespace) -> int:
    cfg = _build_config(args, check_paths=False)
    episodes = _read_episode_log(args.episodes)
    corpus_size = args.corpus_size
    if corpus_size is None:
        if not cfg.corpus:
            raise ConfigError("report needs --corpus or --corpus-size")
        corpus_size = len(dataio.read_corpus(cfg.corpus))
    report = analyze_behavior(episodes, corpus_size, relaxed_stagnation=args.relaxed_stagnation)
    out = _out_dir(cfg)
    written = write_behavior_report(report, out, meta=cfg.meta(), plots=not args.no_plots)
    print(json.dumps(report.summary(), sort_keys=True))
    log.info("wrote %s", ", ".join(str(p) for p in written))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="orion", description="Adaptive multi-turn retrieval engine"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    specs = {
        "index": (cmd_index, "build and persist an index"),
        "run": (cmd_run, "run greedy multi-turn episodes"),
        "beam": (cmd_beam, "run beam-search episodes"),
        "generate": (cmd_generate, "generate synthetic trajectory pool / SFT data"),
        "grpo-collect": (cmd_grpo_collect, "collect grouped samples with rewards"),
        "eval": (cmd_eval, "IR metrics over an episode log"),
        "report": (cmd_report, "behavior analytics over an episode log"),
    }
    for name, (handler, help_text) in specs.items():
        p = sub.add_parser(name, help=help_text)
        _add_common(p)
        p.set_defaults(handler=handler)
        if name == "generate":
            p.add_argument("--archetypes", help="comma-separated kinds (default: all ten)")
            p.add_argument("--sft-total", type=int, help="also emit a balanced SFT dataset")
        if name in ("eval", "report"):
            p.add_argument("--episodes", required=True, help="episode log (episodes.jsonl)")
        if name == "report":
            p.add_argument("--corpus-size", type=int, help="corpus size |C| (else from --corpus)")
            p.add_argument("--relaxed-stagnation", action="store_true")
            p.add_argument("--no-plots", action="store_true")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    try:
        return args.handler(args)
    except Exception as exc:
        print(
            json.dumps({"error": str(exc), "type": type(exc).__name__, "command": args.command}),
            file=sys.stderr,
        )
        return 1


if __name__ == "__main__":
    sys.exit(main())
