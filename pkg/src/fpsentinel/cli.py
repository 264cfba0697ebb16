"""Command-line entry point.

Subcommands cover the full pipeline: ingest telemetry, label and analyze
corpora, generate synthetic corpus pairs, pre-train and federated-fine-tune
the detector, evaluate checkpoints, and run the telemetry collector.  Every
artifact-producing command writes a run manifest next to its output;
``rerun`` re-executes a manifest and verifies the artifacts are
byte-identical.

Exit codes: 0 success, 1 validation/usage error, 2 I/O error.
"""

from __future__ import annotations

import csv
import hashlib
import json
import math
import sys
from datetime import datetime, timezone

import click
import numpy as np

from . import __version__
from .accountant import calibrate_noise_components, epsilon_for_components
from .analysis import (
    aggregate_fold_metrics,
    call_ratio,
    compare_corpora,
    compute_metrics,
    prevalence,
)
from .errors import ConfigError, FpSentinelError, InfeasibleBudgetError, ValidationError
from .features import (
    FeatureVector,
    apply_normalization,
    build_vocabulary,
    dp_federated_normalize,
    normalize_matrix,
    public_clip_bound,
    stack_vectors,
    stats_from_obj,
    stats_to_obj,
)
from .fedtrain import (
    TrainingConfig,
    load_checkpoint,
    partition_clients,
    predict_matrix,
    pretrain_centralized,
    run_federated_training,
    save_checkpoint,
)
from .heuristics import label_corpus
from .manifest import default_manifest, load_manifest
from .synthgen import SuppressionPolicy, derive_crawl_corpus, generate_corpus
from .telemetry import (
    Corpus,
    WebsiteRecord,
    load_corpus,
    merge_traces,
    parse_telemetry_line,
    save_corpus,
)

MANIFEST_SUFFIX = ".manifest.json"


def _sha256(path: str) -> str:
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _utcnow() -> str:
    return datetime.now(timezone.utc).isoformat()


class RunRecorder:
    """Collects inputs/outputs of one command and emits the run manifest."""

    def __init__(self, command: str, argv: list[str], seed: int | None, config: dict):
        self.command = command
        self.argv = list(argv)
        self.seed = seed
        self.config = config
        self.inputs: dict[str, str] = {}
        self.outputs: dict[str, str] = {}
        self.started_at = _utcnow()

    def add_input(self, path: str) -> None:
        self.inputs[path] = _sha256(path)

    def add_output(self, path: str) -> None:
        self.outputs[path] = _sha256(path)

    def write(self, anchor_output: str) -> str:
        manifest_path = anchor_output + MANIFEST_SUFFIX
        payload = {
            "format": "fp-run-manifest",
            "version": 1,
            "command": self.command,
            "argv": self.argv,
            "seed": self.seed,
            "config": self.config,
            "inputs": self.inputs,
            "outputs": self.outputs,
            "tool_version": __version__,
            "started_at": self.started_at,
            "finished_at": _utcnow(),
        }
        with open(manifest_path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        return manifest_path


def _load_manifest_opt(path: str | None):
    return load_manifest(path) if path else default_manifest()


def _emit(payload: dict, rows: list[tuple[str, object]], fmt: str, out: str | None,
          recorder: RunRecorder | None = None) -> None:
    if fmt == "json":
        text = json.dumps(payload, indent=2, sort_keys=True) + "\n"
    else:
        width = max((len(name) for name, _ in rows), default=0)
        text = "\n".join(f"{name:<{width}}  {value}" for name, value in rows) + "\n"
    if out:
        with open(out, "w", encoding="utf-8") as fh:
            fh.write(text)
        if recorder is not None:
            recorder.add_output(out)
            recorder.write(out)
    else:
        click.echo(text, nl=False)


def _corpus_vectors(corpus: Corpus, manifest) -> list[FeatureVector]:
    from .features import extract_features

    vocab = build_vocabulary(manifest)
    labeled = label_corpus(corpus, manifest)
    return [extract_features(t, vocab, lab.any) for t, lab in labeled]


@click.group(name="fpsentinel")
@click.version_option(version=__version__)
@click.option("--seed", type=int, default=None, help="Global default seed.")
@click.option("--config", "config_path", type=click.Path(exists=True), default=None,
              help="JSON file with default option values.")
@click.option("--format", "fmt", type=click.Choice(["json", "table"]), default="json",
              help="Report output format.")
@click.pass_context
def cli(ctx, seed, config_path, fmt):
    ctx.ensure_object(dict)
    file_config = {}
    if config_path:
        with open(config_path, "r", encoding="utf-8") as fh:
            file_config = json.load(fh)
        if not isinstance(file_config, dict):
            raise ConfigError("--config file must hold a JSON object")
    ctx.obj["config"] = file_config
    ctx.obj["seed"] = seed
    ctx.obj["fmt"] = fmt
    ctx.obj["argv"] = ctx.obj.get("argv", [])


def _resolve(ctx, name: str, cli_value, default):
    """Precedence: explicit flag > --config file entry > default."""
    if cli_value is not None:
        return cli_value
    if name in ctx.obj["config"]:
        return ctx.obj["config"][name]
    return default


def _resolve_seed(ctx, cli_value) -> int:
    if cli_value is not None:
        return cli_value
    if ctx.obj["seed"] is not None:
        return ctx.obj["seed"]
    return int(ctx.obj["config"].get("seed", 0))


def _read_site_map(path: str) -> dict[str, str]:
    mapping: dict[str, str] = {}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        for row in csv.reader(fh):
            if not row or row[0].strip().lower() == "site":
                continue
            mapping[row[0].strip()] = row[1].strip() if len(row) > 1 else "unknown"
    return mapping


@cli.command()
@click.option("--telemetry", "telemetry_paths", multiple=True, required=True,
              type=click.Path(exists=True), help="Telemetry JSONL file (repeatable).")
@click.option("--categories", type=click.Path(exists=True), default=None,
              help="CSV site,category mapping.")
@click.option("--ranks", type=click.Path(exists=True), default=None,
              help="CSV site,rank mapping.")
@click.option("--label", default="real", help="Corpus label.")
@click.option("--skip-invalid", is_flag=True, help="Drop invalid lines instead of failing.")
@click.option("-o", "--out", required=True, type=click.Path(), help="Output corpus path.")
@click.pass_context
def ingest(ctx, telemetry_paths, categories, ranks, label, skip_invalid, out):
    """Build a corpus from telemetry JSON lines."""
    recorder = RunRecorder("ingest", ctx.obj["argv"], None, {
        "label": label, "skip_invalid": skip_invalid,
    })
    traces = []
    skipped = 0
    for path in telemetry_paths:
        recorder.add_input(path)
        with open(path, "r", encoding="utf-8") as fh:
            for line_no, line in enumerate(fh, start=1):
                if not line.strip():
                    continue
                try:
                    traces.append(parse_telemetry_line(line, line_no=line_no))
                except FpSentinelError as exc:
                    if skip_invalid:
                        skipped += 1
                        continue
                    raise ValidationError(f"{path}:{line_no}: {exc}") from exc
    merged = merge_traces(traces)
    category_map = _read_site_map(categories) if categories else {}
    rank_map = _read_site_map(ranks) if ranks else {}
    if categories:
        recorder.add_input(categories)
    if ranks:
        recorder.add_input(ranks)

    pages: dict[str, list[str]] = {}
    for trace in merged:
        pages.setdefault(trace.site, [])
        if trace.page_url not in pages[trace.site]:
            pages[trace.site].append(trace.page_url)
    websites = []
    for default_rank, site in enumerate(sorted(pages), start=1):
        websites.append(WebsiteRecord(
            site=site,
            rank=int(rank_map.get(site, default_rank)),
            category=category_map.get(site, "unknown"),
            pages=tuple(sorted(pages[site])),
        ))
    corpus = Corpus(label=label, websites=websites, traces=merged)
    save_corpus(corpus, out)
    recorder.add_output(out)
    recorder.write(out)
    click.echo(f"ingested {len(merged)} traces across {len(websites)} sites"
               + (f" ({skipped} invalid lines skipped)" if skipped else ""))


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def label(ctx, corpus_path, manifest_path, out):
    """Label every script in a corpus with the fingerprinting heuristics."""
    recorder = RunRecorder("label", ctx.obj["argv"], None, {})
    recorder.add_input(corpus_path)
    corpus = load_corpus(corpus_path)
    manifest = _load_manifest_opt(manifest_path)
    with open(out, "w", encoding="utf-8") as fh:
        for trace, lab in label_corpus(corpus, manifest):
            fh.write(json.dumps({
                "script_id": trace.script_id,
                "site": trace.site,
                "page_url": trace.page_url,
                "canvas": lab.canvas,
                "canvas_font": lab.canvas_font,
                "webrtc": lab.webrtc,
                "audio": lab.audio,
                "any": lab.any,
            }, sort_keys=True, separators=(",", ":")) + "\n")
    recorder.add_output(out)
    recorder.write(out)


@cli.command(name="prevalence")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("-o", "--out", type=click.Path(), default=None)
@click.pass_context
def prevalence_cmd(ctx, corpus_path, manifest_path, out):
    """Per-type fingerprinting prevalence of a corpus."""
    recorder = RunRecorder("prevalence", ctx.obj["argv"], None, {})
    recorder.add_input(corpus_path)
    report = prevalence(load_corpus(corpus_path), _load_manifest_opt(manifest_path))
    payload = {
        "per_type_counts": report.per_type_counts,
        "total_fp_scripts": report.total_fp_scripts,
        "total_scripts": report.total_scripts,
        "fp_websites": report.fp_websites,
    }
    rows = [(t, c) for t, c in report.per_type_counts.items()]
    rows += [("total_fp_scripts", report.total_fp_scripts),
             ("total_scripts", report.total_scripts),
             ("fp_websites", report.fp_websites)]
    _emit(payload, rows, ctx.obj["fmt"], out, recorder)


@cli.command(name="call-ratio")
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("-o", "--out", type=click.Path(), default=None)
@click.pass_context
def call_ratio_cmd(ctx, corpus_path, manifest_path, out):
    """Per-API call ratio of fingerprinting vs non-fingerprinting scripts."""
    recorder = RunRecorder("call-ratio", ctx.obj["argv"], None, {})
    recorder.add_input(corpus_path)
    entries = call_ratio(load_corpus(corpus_path), _load_manifest_opt(manifest_path))
    payload = {"entries": [
        {
            "api": e.api,
            "fp_calls": e.fp_calls,
            "nonfp_calls": e.nonfp_calls,
            "ratio": "inf" if math.isinf(e.ratio) else round(e.ratio, 4),
        }
        for e in entries
    ]}
    rows = [(e.api, "inf" if math.isinf(e.ratio) else f"{e.ratio:.2f}") for e in entries]
    _emit(payload, rows, ctx.obj["fmt"], out, recorder)


@cli.command()
@click.option("--real", "real_path", required=True, type=click.Path(exists=True))
@click.option("--crawl", "crawl_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("-o", "--out", type=click.Path(), default=None)
@click.pass_context
def compare(ctx, real_path, crawl_path, manifest_path, out):
    """Diff fingerprinting sites between a real and a crawl corpus."""
    recorder = RunRecorder("compare", ctx.obj["argv"], None, {})
    recorder.add_input(real_path)
    recorder.add_input(crawl_path)
    report = compare_corpora(
        load_corpus(real_path), load_corpus(crawl_path), _load_manifest_opt(manifest_path)
    )
    payload = {
        "real_fp_sites": len(report.real_fp_sites),
        "crawl_fp_sites": len(report.crawl_fp_sites),
        "missed": len(report.missed),
        "miss_percentage": round(report.miss_percentage, 1),
        "by_reason": report.by_reason,
        "by_category": {c: round(p, 2) for c, p in report.by_category.items()},
    }
    rows = [
        ("real_fp_sites", len(report.real_fp_sites)),
        ("crawl_fp_sites", len(report.crawl_fp_sites)),
        ("missed", len(report.missed)),
        ("miss_percentage", f"{report.miss_percentage:.1f}"),
    ]
    rows += [(f"reason[{r}]", n) for r, n in report.by_reason.items()]
    rows += [(f"category[{c}]", f"{p:.1f}") for c, p in report.by_category.items()]
    _emit(payload, rows, ctx.obj["fmt"], out, recorder)


@cli.command()
@click.option("--sites", "n_sites", type=int, required=True)
@click.option("--scripts-per-site", type=int, default=None)
@click.option("--fp-fraction", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--label", default="real")
@click.option("-o", "--out", required=True, type=click.Path())
@click.option("--profiles", "profiles_path", type=click.Path(exists=True), default=None,
              help="JSON behavior-profile configuration (profile_mix, "
                   "gated_profile_mix, fp_page_kind_weights).")
@click.option("--crawl-out", type=click.Path(), default=None,
              help="Also derive a crawl twin with the suppression policy.")
@click.option("--policy", "policy_path", type=click.Path(exists=True), default=None,
              help="JSON SuppressionPolicy for the crawl twin.")
@click.option("--failed-fraction", type=float, default=None)
@click.option("--auth-fraction", type=float, default=None)
@click.option("--content-fraction", type=float, default=None)
@click.option("--home-fraction", type=float, default=None)
@click.pass_context
def synth(ctx, n_sites, scripts_per_site, fp_fraction, seed, label, out, profiles_path,
          crawl_out, policy_path, failed_fraction, auth_fraction, content_fraction,
          home_fraction):
    """Generate a synthetic corpus (and optionally its crawl twin)."""
    seed = _resolve_seed(ctx, seed)
    scripts_per_site = int(_resolve(ctx, "scripts_per_site", scripts_per_site, 5))
    fp_fraction = float(_resolve(ctx, "fp_fraction", fp_fraction, 0.1))
    recorder = RunRecorder("synth", ctx.obj["argv"], seed, {
        "sites": n_sites, "scripts_per_site": scripts_per_site,
        "fp_fraction": fp_fraction, "label": label,
    })
    profile_kwargs = {}
    if profiles_path:
        with open(profiles_path, "r", encoding="utf-8") as fh:
            profile_config = json.load(fh)
        recorder.add_input(profiles_path)
        if "profile_mix" in profile_config:
            profile_kwargs["profile_mix"] = profile_config["profile_mix"]
        if "gated_profile_mix" in profile_config:
            profile_kwargs["gated_profile_mix"] = profile_config["gated_profile_mix"]
        if "fp_page_kind_weights" in profile_config:
            profile_kwargs["fp_page_kind_weights"] = tuple(
                profile_config["fp_page_kind_weights"])
    corpus = generate_corpus(
        n_sites=n_sites,
        scripts_per_site=scripts_per_site,
        fp_site_fraction=fp_fraction,
        seed=seed,
        label=label,
        **profile_kwargs,
    )
    save_corpus(corpus, out)
    recorder.add_output(out)
    if crawl_out:
        policy_kwargs = {}
        if policy_path:
            with open(policy_path, "r", encoding="utf-8") as fh:
                policy_kwargs = json.load(fh)
            recorder.add_input(policy_path)
        for name, value in (("failed_fraction", failed_fraction),
                            ("auth_fraction", auth_fraction),
                            ("content_fraction", content_fraction),
                            ("home_fraction", home_fraction)):
            if value is not None:
                policy_kwargs[name] = value
        policy = SuppressionPolicy(**policy_kwargs)
        crawl = derive_crawl_corpus(corpus, policy, seed=seed)
        save_corpus(crawl, crawl_out)
        recorder.add_output(crawl_out)
    recorder.write(out)
    click.echo(f"wrote {len(corpus.traces)} traces across {len(corpus.websites)} sites")


@cli.command()
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True),
              help="Public (crawl) corpus for centralized training.")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--epochs", type=int, default=None)
@click.option("--lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def pretrain(ctx, corpus_path, manifest_path, epochs, lr, batch_size, seed, out):
    """Centralized non-private training on a public corpus."""
    seed = _resolve_seed(ctx, seed)
    epochs = int(_resolve(ctx, "epochs", epochs, 5))
    lr = float(_resolve(ctx, "lr", lr, 0.1))
    batch_size = int(_resolve(ctx, "batch_size", batch_size, 32))
    recorder = RunRecorder("pretrain", ctx.obj["argv"], seed, {
        "epochs": epochs, "lr": lr, "batch_size": batch_size,
    })
    recorder.add_input(corpus_path)
    manifest = _load_manifest_opt(manifest_path)
    vocab = build_vocabulary(manifest)
    vectors = _corpus_vectors(load_corpus(corpus_path), manifest)
    X, _ = stack_vectors(vectors)
    clip = public_clip_bound(X)
    stats = dp_federated_normalize([X], clip_bound=clip, noise_multiplier=0.0)
    normalized = [apply_normalization(v, stats) for v in vectors]
    params = pretrain_centralized(normalized, epochs=epochs, lr=lr, seed=seed,
                                  batch_size=batch_size)
    save_checkpoint(out, params=params, vocab_sha256=vocab.sha256(), epsilon_spent=0.0,
                    norm_stats_obj=stats_to_obj(stats))
    recorder.add_output(out)
    recorder.write(out)
    click.echo(f"pre-trained on {len(vectors)} scripts")


@cli.command()
@click.option("--real", "real_path", required=True, type=click.Path(exists=True),
              help="Private corpus providing the client shards.")
@click.option("--public", "public_path", type=click.Path(exists=True), default=None,
              help="Public corpus for non-private pre-training.")
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--rounds", type=int, default=None)
@click.option("--clients-per-round", type=int, default=None)
@click.option("--total-clients", type=int, default=None)
@click.option("--clip-norm", type=float, default=None)
@click.option("--noise-multiplier", type=float, default=None,
              help="Fix sigma explicitly instead of calibrating from --epsilon.")
@click.option("--epsilon", type=float, default=None, help="Privacy budget target.")
@click.option("--delta", type=float, default=None)
@click.option("--norm-noise", type=float, default=None,
              help="Noise multiplier of the federated feature normalization.")
@click.option("--local-epochs", type=int, default=None)
@click.option("--local-lr", type=float, default=None)
@click.option("--batch-size", type=int, default=None)
@click.option("--zipf-exponent", type=float, default=None)
@click.option("--visits-per-client", type=int, default=None)
@click.option("--pretrain-epochs", type=int, default=None)
@click.option("--pretrain-lr", type=float, default=None)
@click.option("--seed", type=int, default=None)
@click.option("-o", "--out", required=True, type=click.Path())
@click.pass_context
def fedtrain(ctx, real_path, public_path, manifest_path, rounds, clients_per_round,
             total_clients, clip_norm, noise_multiplier, epsilon, delta, norm_noise,
             local_epochs, local_lr, batch_size, zipf_exponent, visits_per_client,
             pretrain_epochs, pretrain_lr, seed, out):
    """Differentially private federated training, optionally pre-trained."""
    seed = _resolve_seed(ctx, seed)
    rounds = int(_resolve(ctx, "rounds", rounds, 100))
    clients_per_round = int(_resolve(ctx, "clients_per_round", clients_per_round, 1000))
    total_clients = int(_resolve(ctx, "total_clients", total_clients, 1_000_000))
    clip_norm = float(_resolve(ctx, "clip_norm", clip_norm, 1.0))
    delta = float(_resolve(ctx, "delta", delta, 1e-5))
    norm_noise = float(_resolve(ctx, "norm_noise", norm_noise, 0.0))
    local_epochs = int(_resolve(ctx, "local_epochs", local_epochs, 1))
    local_lr = float(_resolve(ctx, "local_lr", local_lr, 0.1))
    batch_size = int(_resolve(ctx, "batch_size", batch_size, 32))
    zipf_exponent = float(_resolve(ctx, "zipf_exponent", zipf_exponent, 1.0))
    visits_per_client = int(_resolve(ctx, "visits_per_client", visits_per_client, 10))
    pretrain_epochs = int(_resolve(ctx, "pretrain_epochs", pretrain_epochs, 5))
    pretrain_lr = float(_resolve(ctx, "pretrain_lr", pretrain_lr, 0.1))
    epsilon = _resolve(ctx, "epsilon", epsilon, None)
    noise_multiplier = _resolve(ctx, "noise_multiplier", noise_multiplier, None)

    recorder = RunRecorder("fedtrain", ctx.obj["argv"], seed, {
        "rounds": rounds, "clients_per_round": clients_per_round,
        "total_clients": total_clients, "clip_norm": clip_norm,
        "epsilon": epsilon, "delta": delta, "norm_noise": norm_noise,
        "local_epochs": local_epochs, "local_lr": local_lr,
        "batch_size": batch_size, "zipf_exponent": zipf_exponent,
        "visits_per_client": visits_per_client,
    })
    recorder.add_input(real_path)
    manifest = _load_manifest_opt(manifest_path)
    vocab = build_vocabulary(manifest)
    real = load_corpus(real_path)
    vectors = _corpus_vectors(real, manifest)
    shards = partition_clients(vectors, real.websites, total_clients,
                               zipf_exponent=zipf_exponent, seed=seed,
                               visits_per_client=visits_per_client)
    q = clients_per_round / total_clients

    public_vectors = None
    if public_path:
        recorder.add_input(public_path)
        public_vectors = _corpus_vectors(load_corpus(public_path), manifest)
        Xpub, _ = stack_vectors(public_vectors)
        clip_bound = public_clip_bound(Xpub)
    else:
        clip_bound = float(ctx.obj["config"].get("norm_clip_bound", 32.0))

    shard_arrays = [stack_vectors(s.vectors)[0] for s in shards if s.vectors]
    stats = dp_federated_normalize(shard_arrays, clip_bound=clip_bound,
                                   noise_multiplier=norm_noise, seed=seed, delta=delta)
    norm_components = [(norm_noise, 3, 1.0)] if norm_noise > 0 else []

    if noise_multiplier is None:
        if epsilon is not None:
            noise_multiplier = calibrate_noise_components(
                float(epsilon), delta, norm_components, rounds, q)
        else:
            noise_multiplier = 0.0
            click.echo("warning: no --epsilon or --noise-multiplier given; "
                       "training without noise", err=True)
    noise_multiplier = float(noise_multiplier)

    cfg = TrainingConfig(
        rounds=rounds, clients_per_round=clients_per_round, total_clients=total_clients,
        clip_norm=clip_norm, noise_multiplier=noise_multiplier,
        local_epochs=local_epochs, local_lr=local_lr, batch_size=batch_size, seed=seed,
    )

    if public_vectors:
        normalized_public = [apply_normalization(v, stats) for v in public_vectors]
        init = pretrain_centralized(normalized_public, epochs=pretrain_epochs,
                                    lr=pretrain_lr, seed=seed, batch_size=batch_size)
    else:
        from .fedtrain import ModelParams
        init = ModelParams(weights=np.zeros(vocab.dimension), bias=0.0)

    normalized_shards = [
        type(s)(client_id=s.client_id,
                vectors=[apply_normalization(v, stats) for v in s.vectors])
        for s in shards
    ]
    # Normalization and training compose in RDP; check the joint spend
    # against the budget before any round runs.
    total_epsilon = epsilon_for_components(
        norm_components + [(noise_multiplier, rounds, q)], delta)
    if epsilon is not None and total_epsilon > float(epsilon) + 1e-12:
        raise InfeasibleBudgetError(
            f"infeasible privacy budget: configuration spends "
            f"epsilon={total_epsilon:.4g} > budget {epsilon}")
    params, _ = run_federated_training(init, normalized_shards, cfg, None)

    save_checkpoint(out, params=params, vocab_sha256=vocab.sha256(),
                    epsilon_spent=total_epsilon, norm_stats_obj=stats_to_obj(stats))
    recorder.add_output(out)
    recorder.write(out)
    eps_text = "inf" if math.isinf(total_epsilon) else f"{total_epsilon:.4g}"
    click.echo(f"federated training done: sigma={noise_multiplier:.4g}, "
               f"epsilon_spent={eps_text} (delta={delta:g})")


@cli.command()
@click.option("--model", "model_path", required=True, type=click.Path(exists=True))
@click.option("--corpus", "corpus_path", required=True, type=click.Path(exists=True))
@click.option("--manifest", "manifest_path", type=click.Path(exists=True), default=None)
@click.option("--threshold", type=float, default=0.5)
@click.option("--folds", type=int, default=None,
              help="Report metrics per stratified fold instead of one pass.")
@click.option("--seed", type=int, default=None)
@click.option("-o", "--out", type=click.Path(), default=None)
@click.pass_context
def evaluate(ctx, model_path, corpus_path, manifest_path, threshold, folds, seed, out):
    """Score a checkpoint against the heuristic labels of a corpus."""
    seed = _resolve_seed(ctx, seed)
    recorder = RunRecorder("evaluate", ctx.obj["argv"], seed, {"threshold": threshold})
    recorder.add_input(model_path)
    recorder.add_input(corpus_path)
    checkpoint = load_checkpoint(model_path)
    manifest = _load_manifest_opt(manifest_path)
    vocab = build_vocabulary(manifest)
    if checkpoint["vocab_sha256"] != vocab.sha256():
        raise ValidationError("model was trained with a different feature vocabulary")
    stats = stats_from_obj(checkpoint["norm_stats"])
    vectors = _corpus_vectors(load_corpus(corpus_path), manifest)
    params = checkpoint["params"]

    def scored(subset):
        X, y = stack_vectors(subset)
        probs = predict_matrix(params, normalize_matrix(X, stats))
        return [(float(p), bool(t)) for p, t in zip(probs, y)]

    if folds:
        from .analysis import stratified_kfold

        reports = [compute_metrics(scored(test), threshold)
                   for _, test in stratified_kfold(vectors, folds, seed)]
        report = aggregate_fold_metrics(reports)
    else:
        report = compute_metrics(scored(vectors), threshold)

    payload = {
        "false_positives": report.false_positives,
        "precision": round(report.precision, 4),
        "recall": round(report.recall, 4),
        "auprc": round(report.auprc, 4),
    }
    rows = [(k, payload[k]) for k in ("false_positives", "precision", "recall", "auprc")]
    if report.mean_and_std:
        payload["mean_and_std"] = {
            k: [round(m, 4), round(s, 4)] for k, (m, s) in report.mean_and_std.items()
        }
        rows += [(f"{k}_std", round(s, 4)) for k, (_, s) in report.mean_and_std.items()]
    _emit(payload, rows, ctx.obj["fmt"], out, recorder)


@cli.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", type=int, default=8470)
@click.option("--spool", "spool_path", required=True, type=click.Path())
@click.option("--max-body-bytes", type=int, default=None)
@click.pass_context
def collect(ctx, host, port, spool_path, max_body_bytes):
    """Run the telemetry collector endpoint (blocks until interrupted)."""
    from .collector import DEFAULT_MAX_BODY_BYTES, make_server

    limit = max_body_bytes or DEFAULT_MAX_BODY_BYTES
    server = make_server(host, port, spool_path, max_body_bytes=limit)
    bound_port = server.server_address[1]
    click.echo(f"collector listening on http://{host}:{bound_port}, spooling to {spool_path}")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.shutdown()


@cli.command()
@click.argument("manifest_path", type=click.Path(exists=True))
@click.pass_context
def rerun(ctx, manifest_path):
    """Re-execute a run manifest and verify byte-identical artifacts."""
    with open(manifest_path, "r", encoding="utf-8") as fh:
        manifest = json.load(fh)
    if manifest.get("format") != "fp-run-manifest":
        raise ValidationError("not a run manifest")
    argv = manifest["argv"]
    code = cli_dispatch(argv)
    if code != 0:
        raise ValidationError(f"rerun of {manifest['command']} exited with {code}")
    mismatched = []
    for path, digest in manifest["outputs"].items():
        fresh = _sha256(path)
        status = "ok" if fresh == digest else "MISMATCH"
        if fresh != digest:
            mismatched.append(path)
        click.echo(f"{status}  {path}")
    if mismatched:
        raise ValidationError(f"artifacts differ after rerun: {mismatched}")
    click.echo("rerun reproduced all artifacts")


def cli_dispatch(argv: list[str]) -> int:
    """Run the CLI programmatically; returns the process exit code."""
    try:
        cli.main(args=list(argv), standalone_mode=False, obj={"argv": list(argv)})
        return 0
    except click.exceptions.Exit as exc:
        return int(exc.exit_code)
    except click.UsageError as exc:
        click.echo(f"error: {exc.format_message()}", err=True)
        if exc.ctx is not None:
            click.echo(exc.ctx.get_usage(), err=True)
        return 1
    except InfeasibleBudgetError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except FpSentinelError as exc:
        click.echo(f"error: {exc}", err=True)
        return 1
    except OSError as exc:
        click.echo(f"i/o error: {exc}", err=True)
        return 2


def main() -> None:
    sys.exit(cli_dispatch(sys.argv[1:]))


if __name__ == "__main__":
    main()
