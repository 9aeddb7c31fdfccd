"""Command line pipeline: score, calibrate, filter, evaluate, report.

Every command is deterministic given its config plus the response cache
state. A run manifest written next to each scoring output pins the
resolved config, input file digests, cache statistics, and any failed
pairs, so later stages can be resumed or audited without re-running
earlier ones.

Exit codes: 0 success, 2 validation error, 3 transport error, 4 partial
scoring run.
"""

from __future__ import annotations

import functools
import hashlib
import json
import math
import sys
from dataclasses import asdict, dataclass, field
from pathlib import Path

import click

from . import embed_baselines, feasibility_core, llm_scoring, oweval, prompts
from .errors import (
    FlabError,
    PartialScoringError,
    TransportError,
    ValidationError,
)
from .labelspace import (
    OBJECTS_FILE,
    SEEN_FILE,
    STATES_FILE,
    UNSEEN_FILE,
    VAL_UNSEEN_FILE,
    Pair,
    PairSpace,
    confusing_pairs,
    enumerate_all,
    load_pair_space,
)

EXIT_VALIDATION = 2
EXIT_TRANSPORT = 3
EXIT_PARTIAL = 4

CLI_METHODS = ("flm-logit", "flm-binary", "flm-qa-score", "glove", "conceptnet")


@dataclass
class RunConfig:
    """Resolved configuration for one pipeline run."""

    dataset_dir: str = ""
    output_dir: str = "out"
    seed: int = 0
    method: str = "glove"
    prompt_preset: str | None = None
    prompt: dict = field(default_factory=dict)
    guidance_mode: str = "related"
    guidance_count: int = 20
    parse_mode: str = "logit"  # for flm-qa-score
    embedding_file: str | None = None
    side_reduce: str = "max"
    endpoint: dict = field(default_factory=dict)

    @classmethod
    def load(cls, path: str | None, overrides: dict) -> "RunConfig":
        data: dict = {}
        if path:
            p = Path(path)
            if not p.is_file():
                raise ValidationError(f"config file not found: {p}")
            try:
                data = json.loads(p.read_text(encoding="utf-8"))
            except json.JSONDecodeError as exc:
                raise ValidationError(f"config file is not valid JSON: {exc}") from None
        unknown = set(data) - {f for f in cls.__dataclass_fields__}
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        merged = {**data, **{k: v for k, v in overrides.items() if v is not None}}
        config = cls(**merged)
        if config.method not in CLI_METHODS:
            raise ValidationError(f"method must be one of {CLI_METHODS}, got {config.method!r}")
        return config

    def digest(self) -> str:
        blob = json.dumps(asdict(self), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode("utf-8")).hexdigest()


def _file_digest(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _dataset_digests(dataset_dir: str) -> dict[str, str]:
    digests = {}
    for name in (STATES_FILE, OBJECTS_FILE, SEEN_FILE, UNSEEN_FILE, VAL_UNSEEN_FILE):
        p = Path(dataset_dir) / name
        if p.is_file():
            digests[name] = _file_digest(p)
    return digests


def _resolve_prompt_spec(config: RunConfig) -> prompts.PromptSpec:
    if config.prompt_preset:
        if config.prompt_preset not in prompts.PRESETS:
            raise ValidationError(
                f"unknown prompt preset {config.prompt_preset!r}; "
                f"available: {sorted(prompts.PRESETS)}"
            )
        return prompts.PRESETS[config.prompt_preset]
    if config.prompt:
        return prompts.PromptSpec(**config.prompt)
    if config.method == "flm-qa-score":
        return prompts.qa_score_spec()
    return prompts.guided_spec()


def _endpoint_config(config: RunConfig) -> llm_scoring.EndpointConfig:
    ep = dict(config.endpoint)
    if "base_url" not in ep or "model" not in ep:
        raise ValidationError("endpoint config needs base_url and model")
    return llm_scoring.EndpointConfig(**ep)


def _fail(code: int, error: Exception) -> None:
    summary = {"error": type(error).__name__, "message": str(error)}
    if isinstance(error, TransportError):
        summary["status"] = error.status
        summary["context"] = error.context
    click.echo(json.dumps(summary), err=True)
    sys.exit(code)


def _guarded(fn):
    @functools.wraps(fn)
    def wrapper(*args, **kwargs):
        try:
            return fn(*args, **kwargs)
        except ValidationError as exc:
            _fail(EXIT_VALIDATION, exc)
        except TransportError as exc:
            _fail(EXIT_TRANSPORT, exc)

    return wrapper


@click.group()
def main() -> None:
    """Feasibility scoring and open-world evaluation pipeline."""


@main.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@_guarded
def ingest(dataset_dir: str) -> None:
    """Validate a dataset directory and print its cardinalities."""
    space = load_pair_space(dataset_dir)
    confusing = confusing_pairs(space)
    click.echo(f"states: {len(space.states)}")
    click.echo(f"objects: {len(space.objects)}")
    click.echo(f"all pairs: {space.all_count}")
    click.echo(f"seen: {len(space.seen)}")
    click.echo(f"unseen: {len(space.unseen)}")
    click.echo(f"confusing: {len(confusing)}")
    if space.val_unseen is not None:
        click.echo(f"val_unseen: {len(space.val_unseen)}")


def _write_manifest(
    out_dir: Path,
    config: RunConfig,
    table_provenance: dict[Pair, str],
    stats: dict[str, int],
    failures: list,
    n_pairs: int,
) -> None:
    guidance_sizes = {}
    n_seen_exempt = n_fallback = 0
    for pair, note in sorted(table_provenance.items()):
        if note == "seen-exempt":
            n_seen_exempt += 1
        elif note == "canonical-fallback":
            n_fallback += 1
        elif note.startswith("guidance="):
            guidance_sizes[f"{pair.state}\t{pair.object}"] = int(note.split("=", 1)[1])
    manifest = {
        "command": "score",
        "config": asdict(config),
        "config_digest": config.digest(),
        "input_digests": _dataset_digests(config.dataset_dir),
        "pairs_total": n_pairs,
        "pairs_seen_exempt": n_seen_exempt,
        "pairs_canonical_fallback": n_fallback,
        "guidance_sizes": guidance_sizes,
        "network_calls": stats.get("network_calls", 0),
        "cache_hits": stats.get("cache_hits", 0),
        "failed_pairs": [
            {"state": p.state, "object": p.object, "error": str(e)} for p, e in failures
        ],
    }
    with open(out_dir / "manifest.json", "w", encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(), default=None)
@click.option("--out", "output_dir", type=click.Path(), default=None)
@click.option("--method", type=click.Choice(CLI_METHODS), default=None)
@click.option("--prompt-preset", "prompt_preset", default=None)
@click.option("--guidance", "guidance_mode", type=click.Choice(["related", "random", "none"]), default=None)
@click.option("--n", "guidance_count", type=int, default=None)
@click.option("--seed", type=int, default=None)
@click.option("--parse", "parse_mode", type=click.Choice(["logit", "binary"]), default=None)
@click.option("--embedding-file", default=None, type=click.Path())
@click.option("--endpoint-url", default=None)
@click.option("--model", default=None)
@click.option("--parallelism", type=int, default=None)
@click.option("--rpm", "requests_per_minute", type=float, default=None)
@click.option("--cache-dir", default=None, type=click.Path())
@_guarded
def score(config_path, **overrides) -> None:
    """Score every pair and write the feasibility table plus a manifest."""
    endpoint_overrides = {
        key: overrides.pop(alias)
        for alias, key in (
            ("endpoint_url", "base_url"),
            ("model", "model"),
            ("parallelism", "parallelism"),
            ("requests_per_minute", "requests_per_minute"),
            ("cache_dir", "cache_dir"),
        )
    }
    config = RunConfig.load(config_path, overrides)
    config.endpoint.update({k: v for k, v in endpoint_overrides.items() if v is not None})
    if not config.dataset_dir:
        raise ValidationError("a dataset directory is required (--dataset or config)")
    space = load_pair_space(config.dataset_dir)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    table_path = out_dir / "table.csv"

    if config.method in ("glove", "conceptnet"):
        if not config.embedding_file:
            raise ValidationError(f"method {config.method} needs --embedding-file")
        emb = embed_baselines.load_embeddings(config.embedding_file)
        table = embed_baselines.baseline_table(
            space, emb, config.method.replace("-", "_"), side_reduce=config.side_reduce
        )
        llm_scoring.save_table(table, table_path, space)
        _write_manifest(out_dir, config, table.provenance, {}, [], space.all_count)
        click.echo(f"wrote {table_path}")
        return

    spec = _resolve_prompt_spec(config)
    if config.method == "flm-qa-score" and spec.format != "qa_score":
        raise ValidationError("flm-qa-score requires a qa_score prompt spec")
    mode = config.parse_mode if config.method == "flm-qa-score" else (
        "logit" if config.method == "flm-logit" else "binary"
    )
    policy = llm_scoring.GuidancePolicy(
        mode=config.guidance_mode, count=config.guidance_count, seed=config.seed
    )
    with llm_scoring.ChatClient(_endpoint_config(config)) as client:
        try:
            table = llm_scoring.score_label_space(space, spec, policy, mode, client)
        except PartialScoringError as exc:
            _write_partial(out_dir, config, space, exc, client.stats)
            _fail(EXIT_PARTIAL, exc)
            return
        llm_scoring.save_table(table, table_path, space)
        _write_manifest(out_dir, config, table.provenance, client.stats, [], space.all_count)
    click.echo(f"wrote {table_path}")


def _write_partial(out_dir: Path, config: RunConfig, space, exc: PartialScoringError, stats) -> None:
    """Persist whatever scored before the failure, in canonical order."""
    import csv as _csv

    method = "partial"
    partial_path = out_dir / "table.partial.csv"
    with open(partial_path, "w", encoding="utf-8", newline="") as fh:
        writer = _csv.writer(fh, lineterminator="\n")
        writer.writerow(["state", "object", "score", "method", "provenance"])
        for pair in enumerate_all(space):
            if pair in exc.partial_scores:
                writer.writerow(
                    [
                        pair.state,
                        pair.object,
                        repr(exc.partial_scores[pair]),
                        method,
                        exc.partial_provenance.get(pair, ""),
                    ]
                )
    _write_manifest(out_dir, config, exc.partial_provenance, stats, exc.failures, space.all_count)


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(), default=None)
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--val-matrix", "val_matrix_dir", required=True, type=click.Path())
@click.option("--out", "output_dir", type=click.Path(), default=None)
@_guarded
def calibrate(config_path, table_path, val_matrix_dir, **overrides) -> None:
    """Select the feasibility threshold on validation data."""
    config = RunConfig.load(config_path, overrides)
    if not config.dataset_dir:
        raise ValidationError("a dataset directory is required (--dataset or config)")
    space = load_pair_space(config.dataset_dir)
    table = feasibility_core.normalize(llm_scoring.load_table(table_path))
    val_matrix = oweval.load_score_matrix(val_matrix_dir, space)
    if space.val_unseen is not None:
        strays = [t for _, t in val_matrix.images if t not in space.val_unseen]
        if strays:
            raise ValidationError(
                f"{len(strays)} validation image(s) carry labels outside val_unseen.tsv, "
                f"e.g. {strays[0].text()!r}"
            )
    result = feasibility_core.select_threshold(table, space, val_matrix)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    calib_path = out_dir / "calibration.csv"
    feasibility_core.save_calibration(result, calib_path)
    click.echo(f"tau: {result.tau!r}")
    click.echo(f"wrote {calib_path}")


@main.command(name="filter")
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(), default=None)
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--tau", type=float, default=None)
@click.option("--calibration", "calibration_path", type=click.Path(), default=None)
@click.option("--out", "output_dir", type=click.Path(), default=None)
@_guarded
def filter_cmd(config_path, table_path, tau, calibration_path, **overrides) -> None:
    """Filter the label space at a threshold and write the candidate pairs."""
    config = RunConfig.load(config_path, overrides)
    if not config.dataset_dir:
        raise ValidationError("a dataset directory is required (--dataset or config)")
    if tau is None and calibration_path is None:
        raise ValidationError("provide --tau or --calibration")
    if tau is None:
        tau = feasibility_core.load_calibration_tau(calibration_path)
    space = load_pair_space(config.dataset_dir)
    table = feasibility_core.normalize(llm_scoring.load_table(table_path))
    candidates = feasibility_core.filter_space(space, table, tau)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    cand_path = out_dir / "candidates.tsv"
    feasibility_core.save_candidates(candidates, space, cand_path)
    click.echo(f"candidates: {len(candidates.pairs)}")
    click.echo(f"wrote {cand_path}")


@main.command()
@click.option("--config", "config_path", type=click.Path(), default=None)
@click.option("--dataset", "dataset_dir", type=click.Path(), default=None)
@click.option("--candidates", "candidates_path", required=True, type=click.Path())
@click.option("--matrix", "matrix_dir", required=True, type=click.Path())
@click.option("--table", "table_path", type=click.Path(), default=None)
@click.option("--tau", type=float, default=None)
@click.option("--bins", type=int, default=20, show_default=True)
@click.option("--out", "output_dir", type=click.Path(), default=None)
@_guarded
def evaluate(config_path, candidates_path, matrix_dir, table_path, tau, bins, **overrides) -> None:
    """Run the bias sweep; with a table and threshold, also emit reports."""
    config = RunConfig.load(config_path, overrides)
    if not config.dataset_dir:
        raise ValidationError("a dataset directory is required (--dataset or config)")
    if table_path is not None and tau is None:
        raise ValidationError("reports need --tau together with --table")
    space = load_pair_space(config.dataset_dir)
    candidates = feasibility_core.load_candidates(candidates_path, space)
    matrix = oweval.load_score_matrix(matrix_dir, space)
    result = oweval.sweep_eval(matrix, candidates, space)
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    oweval.write_eval_csv(result, out_dir / "eval.csv", out_dir / "sweep.csv")
    click.echo(
        f"S={100 * result.S:.1f} U={100 * result.U:.1f} "
        f"H={100 * result.H:.1f} AUC={result.AUC:.2f}"
    )
    if table_path is not None:
        table = feasibility_core.normalize(llm_scoring.load_table(table_path))
        report = oweval.isolation_metrics(table, tau, space)
        oweval.write_isolation_csv(report, out_dir / "isolation.csv")
        oweval.export_distribution(table, space, bins, out_dir / "histogram.csv")
        rows = oweval.qualitative_report(table, tau, sorted(space.unseen, key=space.index_of))
        oweval.write_qualitative_csv(rows, out_dir / "qualitative.csv")
    click.echo(f"wrote reports to {out_dir}")


@main.group()
def report() -> None:
    """Standalone report generators."""


@report.command()
@click.option("--feasible", type=float, required=True)
@click.option("--infeasible", type=float, required=True)
def means(feasible: float, infeasible: float) -> None:
    """Arithmetic and harmonic means of the two isolation accuracies."""
    arith, harm = oweval.isolation_means(feasible, infeasible)
    click.echo(f"arithmetic: {arith:.1f}")
    click.echo(f"harmonic: {harm:.1f}")


@report.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--tau", type=float, required=True)
@click.option("--out", "out_path", type=click.Path(), default=None)
@_guarded
def isolation(dataset_dir, table_path, tau, out_path) -> None:
    """Feasible/infeasible accuracy of a thresholded table."""
    space = load_pair_space(dataset_dir)
    table = feasibility_core.normalize(llm_scoring.load_table(table_path))
    rep = oweval.isolation_metrics(table, tau, space)
    click.echo(
        f"feasible_acc={100 * rep.feasible_acc:.1f} infeasible_acc={100 * rep.infeasible_acc:.1f} "
        f"arith={100 * rep.arith_mean:.1f} harm={100 * rep.harm_mean:.1f}"
    )
    if out_path:
        oweval.write_isolation_csv(rep, out_path)
        click.echo(f"wrote {out_path}")


@report.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--bins", type=int, default=20, show_default=True)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def distribution(dataset_dir, table_path, bins, out_path) -> None:
    """Histogram of normalized scores for feasible vs confusing pairs."""
    space = load_pair_space(dataset_dir)
    table = feasibility_core.normalize(llm_scoring.load_table(table_path))
    oweval.export_distribution(table, space, bins, out_path)
    click.echo(f"wrote {out_path}")


@report.command()
@click.option("--dataset", "dataset_dir", required=True, type=click.Path())
@click.option("--table", "table_path", required=True, type=click.Path())
@click.option("--tau", type=float, required=True)
@click.option("--pairs", "pairs_path", type=click.Path(), default=None)
@click.option("--out", "out_path", required=True, type=click.Path())
@_guarded
def qualitative(dataset_dir, table_path, tau, pairs_path, out_path) -> None:
    """Per-pair signed score and feasibility verdict."""
    space = load_pair_space(dataset_dir)
    table = feasibility_core.normalize(llm_scoring.load_table(table_path))
    if pairs_path:
        pairs = []
        for line in Path(pairs_path).read_text(encoding="utf-8").splitlines():
            fields = line.split("\t")
            if len(fields) != 2:
                raise ValidationError(f"{pairs_path}: expected 'state<TAB>object' lines")
            pairs.append(Pair(fields[0], fields[1]))
    else:
        pairs = sorted(space.unseen, key=space.index_of)
    rows = oweval.qualitative_report(table, tau, pairs)
    oweval.write_qualitative_csv(rows, out_path)
    click.echo(f"wrote {out_path}")


@main.group(name="prompts")
def prompts_group() -> None:
    """Prompt inspection tools."""


@prompts_group.command()
@click.option("--as-json", is_flag=True, default=False)
def grid(as_json: bool) -> None:
    """List the 64 grid combinations and the named presets."""
    specs = prompts.enumerate_grid()
    if as_json:
        payload = {
            "grid": [vars(s) | {} for s in specs],
            "presets": {name: vars(s) | {} for name, s in prompts.PRESETS.items()},
        }
        click.echo(json.dumps(payload, indent=2, sort_keys=True))
        return
    for i, spec in enumerate(specs):
        click.echo(f"[{i:02d}] instruction={spec.instruction!r} guidance={spec.guidance!r} query={spec.query!r}")
    for name, spec in prompts.PRESETS.items():
        click.echo(f"[{name}] instruction={spec.instruction!r} guidance={spec.guidance!r} query={spec.query!r}")


@prompts_group.command()
@click.option("--prompt-preset", "preset", default=None)
@click.option("--format", "format_", type=click.Choice(list(prompts.FORMATS)), default=None)
@click.option("--state", required=True)
@click.option("--object", "obj", required=True)
@click.option("--dataset", "dataset_dir", type=click.Path(), default=None)
@click.option("--guidance-mode", type=click.Choice(["related", "random"]), default="related", show_default=True)
@click.option("--n", type=int, default=20, show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@_guarded
def render(preset, format_, state, obj, dataset_dir, guidance_mode, n, seed) -> None:
    """Render one prompt exactly as it would be sent."""
    if preset:
        spec = prompts.PRESETS.get(preset)
        if spec is None:
            raise ValidationError(f"unknown prompt preset {preset!r}")
    elif format_ == "qa_score":
        spec = prompts.qa_score_spec()
    elif format_ == "qa_yes":
        spec = prompts.qa_yes_spec()
    elif format_ == "list_guided":
        spec = prompts.guided_spec()
    else:
        spec = prompts.canonical_spec()

    pair = Pair(state, obj)
    if spec.format == "canonical":
        text = prompts.compose_canonical(spec, state, obj)
    else:
        if not dataset_dir:
            raise ValidationError("guided formats need --dataset to select guidance pairs")
        space = load_pair_space(dataset_dir)
        guidance = prompts.select_guidance(space, pair, n, guidance_mode, seed)
        if not guidance.pairs:
            text = prompts.compose_canonical(prompts.canonical_fallback(spec), state, obj)
            click.echo("note: no guidance pairs available, canonical fallback", err=True)
        elif spec.format == "list_guided":
            text = prompts.compose_guided(spec, state, obj, guidance)
        else:
            text = prompts.compose_qa(spec, state, obj, guidance)
    click.echo("--- system ---")
    click.echo(text.system_message)
    click.echo("--- human ---")
    click.echo(text.human_message)


if __name__ == "__main__":
    main()
