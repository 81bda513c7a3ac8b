"""Command-line pipeline driver.

Every stage works inside one ``--workdir``. The first stage that sees the
inputs (``extract``, or ``report`` when nothing has been extracted yet)
writes ``manifest.json``; later stages reuse its configuration and tag each
artifact with the manifest digest.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
import time
from dataclasses import asdict
from typing import Optional, Sequence

from . import __version__
from .artifacts import file_digest, require_manifest, write_lines
from .clustering import Dendrogram, read_clusters, sweep, write_clusters, write_sweep
from .embedding import TrainConfig, embed_corpus, read_embeddings, write_embeddings, write_vocab
from .errors import BlockClustError, DataError, InvalidConfig, InvalidDelta, UsageError
from .evaluation import cluster_report, metrics as score, overlap
from .extraction import extract_corpus, filter_corpus, read_blocks, write_blocks
from .featurization import Featurizer, read_features, write_features, write_groups
from .ingestion import parse_registry, parse_traces
from .labeling import build_label_sets, read_labels, write_labels
from .model import Scheme
from .projection import export_plot, run_tsne
from .synthgen import SynthSpec, generate

log = logging.getLogger("blockclust")

SCHEMES = ("none", "3class", "sig", "siggroup")
LABELS = ("protocol", "ffc")

DEFAULTS = {
    "dim": 128,
    "learning_rate": 0.05,
    "epochs": 100,
    "wl_depth": 2,
    "negative": 5,
    "min_count": 1,
    "seed": 0,
    "directed_wl": False,
    "top_k": 10_000,
    "group_threshold": 1.5,
    "sweep_lo": 0.6,
    "sweep_hi": 1.0,
    "sweep_step": 0.01,
    "normalize": True,
    "perplexity": 30.0,
    "tsne_iterations": 1000,
}


# manifest -------------------------------------------------------------------

def manifest_digest(inputs: dict, config: dict) -> str:
    payload = json.dumps({"inputs": {k: v["sha256"] for k, v in sorted(inputs.items())}, "config": config},
                         sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


class Workdir:
    def __init__(self, path: str):
        self.path = path
        os.makedirs(path, exist_ok=True)

    def file(self, name: str) -> str:
        return os.path.join(self.path, name)

    @property
    def manifest_path(self) -> str:
        return self.file("manifest.json")

    def load_manifest(self) -> Optional[dict]:
        if not os.path.exists(self.manifest_path):
            return None
        with open(self.manifest_path, encoding="utf-8") as fh:
            return json.load(fh)

    def save_manifest(self, manifest: dict) -> None:
        with open(self.manifest_path, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")


def _now() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime())


def resolve_config(args: argparse.Namespace, base: Optional[dict]) -> dict:
    """Defaults < manifest < config file < flags."""
    cfg = dict(DEFAULTS)
    if base:
        cfg.update({k: v for k, v in base.items() if k in DEFAULTS})
    if getattr(args, "config", None):
        try:
            with open(args.config, encoding="utf-8") as fh:
                extra = json.load(fh)
        except (OSError, json.JSONDecodeError) as exc:
            raise InvalidConfig(f"cannot read config {args.config}: {exc}") from exc
        unknown = set(extra) - set(DEFAULTS)
        if unknown:
            raise InvalidConfig(f"unknown config keys: {', '.join(sorted(unknown))}")
        cfg.update(extra)
    for key in DEFAULTS:
        val = getattr(args, key, None)
        if val is not None:
            cfg[key] = val
    return cfg


def train_config(cfg: dict) -> TrainConfig:
    return TrainConfig(cfg["dim"], cfg["learning_rate"], cfg["epochs"], cfg["wl_depth"], cfg["negative"],
                       cfg["min_count"], cfg["seed"], cfg["directed_wl"])


class Run:
    """Manifest, configuration and artifact paths for one invocation."""

    def __init__(self, args: argparse.Namespace, inputs: Optional[dict] = None):
        self.args = args
        self.wd = Workdir(args.workdir)
        existing = self.wd.load_manifest()
        if inputs is None:
            if existing is None:
                raise DataError(f"no manifest in {args.workdir}; run `extract` first")
            inputs = existing["inputs"]
        self.config = resolve_config(args, existing["config"] if existing else None)
        train_config(self.config)  # validates
        digest = manifest_digest(inputs, self.config)
        self.manifest = existing if existing and existing.get("digest") == digest else {
            "tool_version": __version__,
            "created": _now(),
            "inputs": inputs,
            "config": self.config,
            "digest": digest,
            "stages": {},
        }
        self.digest = digest  # manifest.json is only rewritten once a stage succeeds

    def record(self, stage: str, **selectors) -> None:
        self.manifest["stages"][stage] = {**selectors, "at": _now()}
        self.wd.save_manifest(self.manifest)

    def artifact(self, name: str, must_exist: bool = True) -> str:
        path = self.wd.file(name)
        if must_exist:
            if not os.path.exists(path):
                raise DataError(f"missing artifact {name}; run the upstream stage first")
            require_manifest(path, self.digest)
        return path

    def fresh(self, name: str) -> bool:
        """True when ``name`` exists under this manifest; raises if it belongs to another one."""
        path = self.wd.file(name)
        if not os.path.exists(path):
            return False
        require_manifest(path, self.digest)
        return True


def workers(args: argparse.Namespace) -> int:
    if getattr(args, "deterministic", False):
        return 1
    cap = os.environ.get("BLOCKCLUST_THREADS")
    n = os.cpu_count() or 1
    if cap:
        try:
            n = min(n, max(1, int(cap)))
        except ValueError as exc:
            raise InvalidConfig(f"BLOCKCLUST_THREADS must be an integer, got {cap!r}") from exc
    return n


# stages -----------------------------------------------------------------------

def _input_paths(args: argparse.Namespace) -> tuple[str, str]:
    traces = args.traces or os.path.join(args.workdir, "traces.jsonl")
    registry = args.registry or os.path.join(args.workdir, "registry.csv")
    for p in (traces, registry):
        if not os.path.exists(p):
            raise DataError(f"input not found: {p}")
    return traces, registry


def _inputs(traces: str, registry: str) -> dict:
    return {
        "traces": {"path": os.path.abspath(traces), "sha256": file_digest(traces)},
        "registry": {"path": os.path.abspath(registry), "sha256": file_digest(registry)},
    }


def _registry(run: Run):
    return parse_registry(run.manifest["inputs"]["registry"]["path"])


def stage_extract(args: argparse.Namespace) -> Run:
    traces_path, registry_path = _input_paths(args)
    run = Run(args, _inputs(traces_path, registry_path))
    registry = parse_registry(registry_path)
    traces = parse_traces(traces_path)
    full = extract_corpus(traces, registry, workers=workers(args))
    corpus = filter_corpus(full, run.config["top_k"])
    write_blocks(corpus, run.artifact("blocks.jsonl", False), run.digest)
    protocol, ffc, report = build_label_sets(corpus, registry, unfiltered=full)
    write_labels(protocol, ffc, run.artifact("labels.csv", False), run.digest)
    with open(run.artifact("label_report.json", False), "w", encoding="utf-8") as fh:
        json.dump({"manifest": run.digest, **report.to_dict()}, fh, indent=2)
    run.record("extract", transactions=len(traces), distinct_blocks=len(full), kept=len(corpus))
    log.info("extracted %d distinct blocks, kept %d", len(full), len(corpus))
    return run


def _scheme(name: str) -> Scheme:
    return Scheme.parse(name)


def stage_featurize(args: argparse.Namespace, run: Optional[Run] = None):
    run = run or Run(args)
    scheme = _scheme(args.scheme)
    corpus = read_blocks(run.artifact("blocks.jsonl"))
    featurizer = Featurizer(scheme, _registry(run), run.config["group_threshold"])
    feats = featurizer.corpus(corpus)
    write_features(feats, run.artifact(f"features_{scheme.short}.csv", False), run.digest)
    if featurizer.groups is not None:
        write_groups(featurizer.groups, run.artifact("groups.csv", False), run.digest)
    run.record(f"featurize_{scheme.short}", scheme=scheme.short)
    return feats


def stage_embed(args: argparse.Namespace, run: Optional[Run] = None):
    run = run or Run(args)
    scheme = _scheme(args.scheme)
    corpus = read_blocks(run.artifact("blocks.jsonl"))
    feat_name = f"features_{scheme.short}.csv"
    feats = read_features(run.artifact(feat_name)) if run.fresh(feat_name) else stage_featurize(args, run)
    matrix, vocab = embed_corpus(corpus, feats, train_config(run.config))
    write_embeddings(matrix, run.artifact(f"embeddings_{scheme.short}.csv", False), run.digest)
    write_vocab(vocab, run.artifact(f"vocab_{scheme.short}.txt", False), run.digest)
    run.record(f"embed_{scheme.short}", scheme=scheme.short)
    return matrix


def _embeddings(args: argparse.Namespace, run: Run):
    name = f"embeddings_{_scheme(args.scheme).short}.csv"
    return read_embeddings(run.artifact(name)) if run.fresh(name) else stage_embed(args, run)


def _labels(run: Run, label: str):
    protocol, ffc = read_labels(run.artifact("labels.csv"))
    return protocol if label == "protocol" else ffc


def stage_cluster(args: argparse.Namespace) -> dict:
    if not args.delta > 0:
        raise InvalidDelta(f"delta must be positive, got {args.delta}")
    run = Run(args)
    scheme = _scheme(args.scheme)
    assignment = Dendrogram(_embeddings(args, run), run.config["normalize"]).cut(args.delta)
    write_clusters(assignment, run.artifact(f"clusters_{scheme.short}.csv", False), run.digest)
    run.record(f"cluster_{scheme.short}", scheme=scheme.short, delta=args.delta)
    return {"scheme": scheme.short, "delta": assignment.delta, "n_clusters": assignment.n_clusters}


def _sweep(args: argparse.Namespace, run: Run, label: str, tree: Optional[Dendrogram] = None):
    scheme = _scheme(args.scheme)
    matrix = None if tree else _embeddings(args, run)
    cfg = run.config
    result = sweep(matrix, _labels(run, label), cfg["sweep_lo"], cfg["sweep_hi"], cfg["sweep_step"],
                   cfg["normalize"], dendrogram=tree)
    write_sweep(result, run.artifact(f"sweep_{scheme.short}_{label}.csv", False), run.digest)
    write_clusters(result.best.assignment, run.artifact(f"clusters_{scheme.short}_{label}_best.csv", False),
                   run.digest)
    return result


def _row(scheme: str, label: str, r) -> dict:
    return {
        "target_label": label,
        "node_feature": scheme,
        "delta": r.delta,
        "n_clusters": r.n_clusters,
        "homogeneity": r.homogeneity,
        "completeness": r.completeness,
        "v_measure": r.v_measure,
        "purity": r.purity,
    }


def stage_sweep(args: argparse.Namespace) -> dict:
    run = Run(args)
    result = _sweep(args, run, args.label)
    run.record(f"sweep_{_scheme(args.scheme).short}_{args.label}", scheme=args.scheme, label=args.label)
    return _row(_scheme(args.scheme).short, args.label, result.best_row)


def stage_evaluate(args: argparse.Namespace) -> dict:
    run = Run(args)
    scheme = _scheme(args.scheme)
    if args.delta is not None:
        assignment = Dendrogram(_embeddings(args, run), run.config["normalize"]).cut(args.delta)
    else:
        assignment = read_clusters(run.artifact(f"clusters_{scheme.short}.csv"))
    labels = _labels(run, args.label)
    m = score(assignment, labels)
    out = {
        "target_label": args.label,
        "node_feature": scheme.short,
        "delta": assignment.delta,
        "n_clusters": assignment.n_clusters,
        **m._asdict(),
        "clusters": [
            {"cluster": s.cluster, "size": s.size, "majority": s.majority, "fraction": s.fraction,
             "top": [list(t) for t in s.top]}
            for s in cluster_report(assignment, labels)
        ],
    }
    with open(run.artifact(f"evaluation_{scheme.short}_{args.label}.json", False), "w", encoding="utf-8") as fh:
        json.dump({"manifest": run.digest, **out}, fh, indent=2)
    run.record(f"evaluate_{scheme.short}_{args.label}", scheme=scheme.short, label=args.label,
               delta=assignment.delta)
    return {k: v for k, v in out.items() if k != "clusters"}


def stage_project(args: argparse.Namespace) -> dict:
    run = Run(args)
    scheme = _scheme(args.scheme)
    matrix = _embeddings(args, run)
    labels = _labels(run, args.label)
    cfg = run.config
    result = run_tsne(matrix.vectors, cfg["perplexity"], cfg["tsne_iterations"], cfg["seed"])
    lab = [labels.labels.get(b) if b not in labels.excluded else None for b in matrix.ids]
    csv_path, svg_path = export_plot(result.coords, matrix.ids, lab, run.wd.path,
                                     stem=f"projection_{scheme.short}_{args.label}", manifest=run.digest)
    run.record(f"project_{scheme.short}_{args.label}", scheme=scheme.short, label=args.label)
    return {"csv": csv_path, "svg": svg_path, "final_kl": result.kl[-1] if result.kl else None}


def _overlap_section(run: Run, limit: int = 60) -> list[str]:
    """Containment pairs between frequent blocks of different FFC labels (grouped signatures)."""
    corpus = read_blocks(run.artifact("blocks.jsonl"))[:limit]
    registry = _registry(run)
    _, ffc = read_labels(run.artifact("labels.csv"))
    featurizer = Featurizer(Scheme.SIGNATURE_GROUP, registry, run.config["group_threshold"])
    feats = {b.block_id: featurizer(b) for b in corpus}
    lines = []
    for b1 in corpus:
        for b2 in corpus:
            if b1.block_id >= b2.block_id or ffc.labels.get(b1.block_id) == ffc.labels.get(b2.block_id):
                continue
            ov = overlap(b1, feats[b1.block_id], b2, feats[b2.block_id], run.config["wl_depth"], registry)
            if ov.contains:
                big, small = (b1, b2) if ov.first_contains_second else (b2, b1)
                lines.append(f"| {big.block_id[:12]} | {big.root_method} | {small.block_id[:12]} | "
                             f"{small.root_method} | {ov.jaccard:.3f} |")
    return lines


def stage_report(args: argparse.Namespace) -> dict:
    if not os.path.exists(os.path.join(args.workdir, "blocks.jsonl")):
        run = stage_extract(args)
    else:
        run = Run(args)
    rows = []
    for name in SCHEMES:
        args.scheme = name
        tree = Dendrogram(_embeddings(args, run), run.config["normalize"])
        for label in LABELS:
            rows.append(_row(name, label, _sweep(args, run, label, tree).best_row))
    with open(run.artifact("metrics.json", False), "w", encoding="utf-8") as fh:
        json.dump({"manifest": run.digest, "rows": rows}, fh, indent=2)
        fh.write("\n")

    md = ["# Building-block clustering report", "", f"manifest `{run.digest}`", ""]
    for label in LABELS:
        md += [f"## Target label: {label}", "",
               "| node feature | delta | clusters | homogeneity | completeness | V-measure | purity |",
               "|---|---|---|---|---|---|---|"]
        for r in rows:
            if r["target_label"] == label:
                md.append(f"| {r['node_feature']} | {r['delta']:.2f} | {r['n_clusters']} | {r['homogeneity']:.3f} | "
                          f"{r['completeness']:.3f} | {r['v_measure']:.3f} | {r['purity']:.3f} |")
        md.append("")
    pairs = _overlap_section(run)
    md += ["## Shared sub-blocks across FFC labels", ""]
    if pairs:
        md += ["| containing block | root method | contained block | root method | WL Jaccard |",
               "|---|---|---|---|---|", *pairs]
    else:
        md.append("No containment among the most frequent blocks.")
    write_lines(run.artifact("report.md", False), md, None)
    run.record("report")
    return {"rows": len(rows), "metrics": run.wd.file("metrics.json"), "report": run.wd.file("report.md")}


def stage_synth(args: argparse.Namespace) -> dict:
    spec = SynthSpec(
        n_protocols=args.protocols,
        archetypes_per_protocol=args.archetypes,
        blocks_per_archetype=args.blocks,
        noise=args.noise,
        seed=args.seed if args.seed is not None else 0,
    )
    out = args.out or args.workdir
    paths = generate(spec, out)
    return {"spec": asdict(spec), "files": list(paths)}


# argument parsing -------------------------------------------------------------

class _Parser(argparse.ArgumentParser):
    def error(self, message):  # route argparse failures through the JSON error path
        raise UsageError(message)


def _config_flags(p: argparse.ArgumentParser) -> None:
    g = p.add_argument_group("configuration (overrides config file and manifest)")
    g.add_argument("--config", help="JSON file with configuration values")
    g.add_argument("--dim", type=int)
    g.add_argument("--learning-rate", dest="learning_rate", type=float)
    g.add_argument("--epochs", type=int)
    g.add_argument("--wl-depth", dest="wl_depth", type=int)
    g.add_argument("--negative", type=int)
    g.add_argument("--min-count", dest="min_count", type=int)
    g.add_argument("--seed", type=int)
    g.add_argument("--directed-wl", dest="directed_wl", action="store_const", const=True)
    g.add_argument("--top-k", dest="top_k", type=int)
    g.add_argument("--group-threshold", dest="group_threshold", type=float)
    g.add_argument("--sweep-lo", dest="sweep_lo", type=float)
    g.add_argument("--sweep-hi", dest="sweep_hi", type=float)
    g.add_argument("--sweep-step", dest="sweep_step", type=float)
    g.add_argument("--no-normalize", dest="normalize", action="store_const", const=False)
    g.add_argument("--perplexity", type=float)
    g.add_argument("--tsne-iterations", dest="tsne_iterations", type=int)


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--workdir", default=".", help="directory holding the manifest and artifacts")
    common.add_argument("--deterministic", action="store_true", help="single-stream execution everywhere")
    common.add_argument("-v", "--verbose", action="store_true")
    _config_flags(common)

    parser = _Parser(prog="blockclust", description="Cluster DeFi building blocks extracted from call traces.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    def scheme_arg(p, required=False):
        p.add_argument("--scheme", choices=SCHEMES, required=required, default=None if required else "siggroup")

    def label_arg(p):
        p.add_argument("--label", choices=LABELS, default="protocol")

    p = sub.add_parser("extract", parents=[common], help="parse inputs and extract building blocks")
    p.add_argument("--traces")
    p.add_argument("--registry")
    p = sub.add_parser("featurize", parents=[common], help="node features under one scheme")
    scheme_arg(p, required=True)
    p = sub.add_parser("embed", parents=[common], help="train block embeddings")
    scheme_arg(p)
    p = sub.add_parser("cluster", parents=[common], help="Ward clustering at one threshold")
    scheme_arg(p)
    p.add_argument("--delta", type=float, required=True)
    p = sub.add_parser("sweep", parents=[common], help="threshold sweep keeping the best V-measure")
    scheme_arg(p)
    label_arg(p)
    p = sub.add_parser("evaluate", parents=[common], help="metrics of a clustering against a label")
    scheme_arg(p)
    label_arg(p)
    p.add_argument("--delta", type=float, help="cluster at this threshold instead of reading clusters_<scheme>.csv")
    p = sub.add_parser("project", parents=[common], help="2-d t-SNE scatter of the embeddings")
    scheme_arg(p)
    label_arg(p)
    p = sub.add_parser("synth", parents=[common], help="write a synthetic corpus")
    p.add_argument("--out", help="output directory (default: workdir)")
    p.add_argument("--protocols", type=int, default=SynthSpec.n_protocols)
    p.add_argument("--archetypes", type=int, default=SynthSpec.archetypes_per_protocol)
    p.add_argument("--blocks", type=int, default=SynthSpec.blocks_per_archetype,
                   help="transactions per archetype")
    p.add_argument("--noise", type=float, default=SynthSpec.noise)
    p = sub.add_parser("report", parents=[common], help="all schemes x labels: metrics.json and report.md")
    p.add_argument("--traces")
    p.add_argument("--registry")
    return parser


STAGES = {
    "extract": lambda a: {"blocks": stage_extract(a).wd.file("blocks.jsonl")},
    "featurize": lambda a: {"features": len(stage_featurize(a))},
    "embed": lambda a: {"rows": len(stage_embed(a))},
    "cluster": stage_cluster,
    "sweep": stage_sweep,
    "evaluate": stage_evaluate,
    "project": stage_project,
    "synth": stage_synth,
    "report": stage_report,
}


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                            format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
        result = STAGES[args.command](args)
        print(json.dumps(result, sort_keys=True))
        return 0
    except BlockClustError as exc:
        sys.stderr.write(json.dumps({"error": exc.kind, "message": str(exc), "exit_code": exc.exit_code}) + "\n")
        return exc.exit_code
    except OSError as exc:
        sys.stderr.write(json.dumps({"error": "IoError", "message": str(exc), "exit_code": 3}) + "\n")
        return 3
    except Exception as exc:  # noqa: BLE001 - last-resort JSON error
        sys.stderr.write(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": 4}) + "\n")
        return 4


if __name__ == "__main__":
    sys.exit(main())
