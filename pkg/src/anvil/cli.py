"""Command-line entry points.

Exit codes:
  0  rendered, paused for review, or query command succeeded
  1  unexpected failure
  2  usage, configuration, or input-parsing problem
  3  an edited artifact failed re-validation
  4  unknown run id
 10  analogy stage failed         11  element stage failed
 12  screenplay stage failed      13  code stage failed (incl. repair_exhausted)
 14  render stage failed
"""

from __future__ import annotations

import sys
from pathlib import Path
from typing import Optional

import click

from . import __version__
from .config import AnvilConfig, build_gateway, load_config
from .errors import (
    AnvilError,
    ConfigError,
    EmptyCollection,
    InsufficientData,
    ParseError,
    PreconditionError,
    SchemaValidationError,
    StageOrderError,
    UnknownRunError,
    UnknownStageError,
    ValidationRejected,
)
from .fidelity import score_fidelity
from .judge import score as judge_score
from .model import STAGES, Analogy, ConceptDefinition
from .pipeline import PAUSEABLE_STAGES, orchestrator_for
from .runstore import (
    RunStore,
    load_outcome_records,
    robustness_from_outcomes,
    run_summary,
)
from .serialization import (
    build_model,
    canonical_json,
    deserialize,
    export_schemas,
    model_payload,
    parse_json,
    serialize,
)
from .stats import (
    agreement_summary,
    collapse,
    gwet_ac1,
    heatmap_tables,
    load_ratings_csv,
)

STAGE_EXITS = {"analogy": 10, "elements": 11, "screenplay": 12, "code": 13, "render": 14}


def _read_model(path: Path, expected):
    """Parse an artifact file: enveloped canonical JSON or a bare payload."""
    try:
        text = Path(path).read_text(encoding="utf-8")
    except OSError as exc:
        raise click.UsageError(f"cannot read {path}: {exc}") from exc
    try:
        payload = parse_json(text)
        if isinstance(payload, dict) and "kind" in payload and "data" in payload:
            return deserialize(text, expected)
        return build_model(expected, payload)
    except (ParseError, SchemaValidationError) as exc:
        raise click.UsageError(f"{path} is not a valid {expected.__name__}: {exc}") from exc


def _resolve_exit(exc: AnvilError, store: Optional[RunStore], run_id: Optional[str]) -> int:
    if isinstance(exc, ValidationRejected):
        return 3
    if isinstance(exc, UnknownRunError):
        return 4
    if isinstance(exc, (ConfigError, ParseError, SchemaValidationError)):
        return 2
    if store is not None and run_id is not None and store.exists(run_id):
        status = store.load_run(run_id).status
        if status.state == "failed" and status.stage is not None:
            return STAGE_EXITS[status.stage]
    if isinstance(
        exc,
        (
            PreconditionError,
            StageOrderError,
            UnknownStageError,
            EmptyCollection,
            InsufficientData,
        ),
    ):
        return 2
    return 1


def _fail(
    exc: AnvilError,
    as_json: bool,
    store: Optional[RunStore] = None,
    run_id: Optional[str] = None,
):
    code = _resolve_exit(exc, store, run_id)
    report = getattr(exc, "report", None)
    if as_json:
        body = {"error": exc.code, "message": str(exc)}
        if run_id is not None:
            body["run_id"] = run_id
        if report is not None:
            body["report"] = model_payload(report)
        click.echo(canonical_json(body), err=False)
    else:
        click.echo(f"error ({exc.code}): {exc}", err=True)
        if report is not None:
            for issue in report.issues:
                click.echo(f"  - {issue}", err=True)
    sys.exit(code)


def _emit_run(run, store: RunStore, as_json: bool) -> None:
    if as_json:
        click.echo(canonical_json(run_summary(run)))
        return
    status = run.status
    if status.state == "rendered":
        click.echo(f"run {run.run_id}: rendered -> {store.video_path(run.run_id)}")
    elif status.stage is not None:
        click.echo(f"run {run.run_id}: {status.state} ({status.stage})")
    else:
        click.echo(f"run {run.run_id}: {status.state}")


@click.group(context_settings={"help_option_names": ["-h", "--help"]})
@click.version_option(__version__, prog_name="anvil")
@click.option(
    "--config",
    "config_path",
    type=click.Path(path_type=Path),
    default=None,
    help="Path to anvil.toml (default: $ANVIL_CONFIG, then ./anvil.toml).",
)
@click.pass_context
def main(ctx: click.Context, config_path: Optional[Path]) -> None:
    """Turn concept definitions into analogy-based instructional animations."""
    try:
        ctx.obj = load_config(config_path)
    except ConfigError as exc:
        raise click.UsageError(str(exc)) from exc


@main.command()
@click.argument("concept_file", type=click.Path(path_type=Path))
@click.option("--pause-after", type=click.Choice(PAUSEABLE_STAGES), default=None)
@click.option("--max-repair", type=click.IntRange(min=1), default=None)
@click.option("--provider-mode", type=click.Choice(["live", "record", "replay"]), default=None)
@click.option("--toolchain-mode", type=click.Choice(["live", "fake"]), default=None)
@click.option("--run-id", default=None, help="Explicit run id (default: derived from the concept name).")
@click.option("--json", "as_json", is_flag=True, help="Machine-readable output.")
@click.pass_obj
def generate(
    config: AnvilConfig,
    concept_file: Path,
    pause_after: Optional[str],
    max_repair: Optional[int],
    provider_mode: Optional[str],
    toolchain_mode: Optional[str],
    run_id: Optional[str],
    as_json: bool,
) -> None:
    """Run the pipeline on CONCEPT_FILE, from analogy through rendered video."""
    concept = _read_model(concept_file, ConceptDefinition)
    store = RunStore(config.runstore_root)
    rid: Optional[str] = None
    try:
        rid = store.create_run(concept, run_id=run_id)
        orch = orchestrator_for(
            config,
            store,
            rid,
            provider_mode=provider_mode,
            toolchain_mode=toolchain_mode,
            max_repair=max_repair,
        )
        run = orch.execute(rid, pause_after=pause_after)
    except AnvilError as exc:
        _fail(exc, as_json, store, rid)
        return
    _emit_run(run, store, as_json)


@main.command()
@click.argument("run_id")
@click.option("--from", "from_stage", type=click.Choice(list(STAGES)), default=None)
@click.option("--max-repair", type=click.IntRange(min=1), default=None)
@click.option("--provider-mode", type=click.Choice(["live", "record", "replay"]), default=None)
@click.option("--toolchain-mode", type=click.Choice(["live", "fake"]), default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def resume(
    config: AnvilConfig,
    run_id: str,
    from_stage: Optional[str],
    max_repair: Optional[int],
    provider_mode: Optional[str],
    toolchain_mode: Optional[str],
    as_json: bool,
) -> None:
    """Re-validate RUN_ID's artifacts and re-run everything after FROM."""
    store = RunStore(config.runstore_root)
    if not store.exists(run_id):
        _fail(UnknownRunError(f"no run named {run_id!r}"), as_json, store, run_id)
        return
    try:
        orch = orchestrator_for(
            config,
            store,
            run_id,
            provider_mode=provider_mode,
            toolchain_mode=toolchain_mode,
            max_repair=max_repair,
        )
        run = orch.resume(run_id, from_stage=from_stage)
    except AnvilError as exc:
        _fail(exc, as_json, store, run_id)
        return
    _emit_run(run, store, as_json)


def _echo_judge_report(report, as_json: bool) -> None:
    if as_json:
        click.echo(serialize(report).rstrip("\n"))
        return
    click.echo(f"judge runs: {report.judge_runs}")
    click.echo(f"TCC: mean {report.tcc_mean:.3f} -> final {report.tcc_final}")
    click.echo(f"MS:  mean {report.ms_mean:.3f} -> final {report.ms_final}")
    verdict = "meets" if report.meets_baseline.tcc and report.meets_baseline.ms else "below"
    click.echo(f"baseline (>= 3 on both): {verdict}")


@main.command("evaluate-analogy")
@click.argument("run_id", required=False)
@click.option("--concept-file", type=click.Path(path_type=Path), default=None)
@click.option("--analogy-file", type=click.Path(path_type=Path), default=None)
@click.option("--runs", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--save/--no-save", default=True, help="Store the report with the run.")
@click.option("--provider-mode", type=click.Choice(["live", "record", "replay"]), default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def evaluate_analogy(
    config: AnvilConfig,
    run_id: Optional[str],
    concept_file: Optional[Path],
    analogy_file: Optional[Path],
    runs: int,
    save: bool,
    provider_mode: Optional[str],
    as_json: bool,
) -> None:
    """Score a run's analogy (or a concept/analogy file pair) with the judge."""
    store: Optional[RunStore] = None
    try:
        if run_id:
            store = RunStore(config.runstore_root)
            run = store.load_run(run_id)
            if run.analogy is None:
                raise PreconditionError(f"run {run_id!r} has no analogy yet")
            concept, analogy = run.concept, run.analogy
            gateway = build_gateway(
                config,
                transcript_dir=store.run_dir(run_id) / "transcripts",
                mode=provider_mode,
            )
        else:
            if concept_file is None or analogy_file is None:
                raise click.UsageError(
                    "provide a RUN_ID, or both --concept-file and --analogy-file"
                )
            concept = _read_model(concept_file, ConceptDefinition)
            analogy = _read_model(analogy_file, Analogy)
            gateway = build_gateway(config, mode=provider_mode)
        report = judge_score(gateway, concept, analogy, runs=runs)
        if run_id and store is not None and save:
            store.save_evaluation(run_id, report)
    except AnvilError as exc:
        _fail(exc, as_json, store, run_id)
        return
    _echo_judge_report(report, as_json)


@main.command("evaluate-video")
@click.argument("run_id")
@click.option("--runs", type=click.IntRange(min=1), default=3, show_default=True)
@click.option("--save/--no-save", default=True)
@click.option("--provider-mode", type=click.Choice(["live", "record", "replay"]), default=None)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def evaluate_video(
    config: AnvilConfig,
    run_id: str,
    runs: int,
    save: bool,
    provider_mode: Optional[str],
    as_json: bool,
) -> None:
    """Score how faithfully RUN_ID's video realizes its screenplay."""
    store = RunStore(config.runstore_root)
    try:
        run = store.load_run(run_id)
        if run.screenplay is None:
            raise PreconditionError(f"run {run_id!r} has no screenplay yet")
        video_path = store.video_path(run_id)
        gateway = build_gateway(
            config,
            transcript_dir=store.run_dir(run_id) / "transcripts",
            mode=provider_mode,
        )
        report = score_fidelity(
            gateway,
            target=run.screenplay,
            video_path=video_path,
            runs=runs,
            duration_s=run.video.duration_s if run.video else None,
        )
        if save:
            store.save_evaluation(run_id, report)
    except AnvilError as exc:
        _fail(exc, as_json, store, run_id)
        return
    if as_json:
        click.echo(serialize(report).rstrip("\n"))
        return
    click.echo(f"judge runs: {report.judge_runs}")
    for dim in ("scene", "element", "action"):
        mean = getattr(report, f"{dim}_mean")
        final = getattr(report, f"{dim}_final")
        click.echo(f"{dim:>7}: mean {mean:.3f} -> final {final}")
    flags = report.meets_baseline
    verdict = "meets" if flags.scene and flags.element and flags.action else "below"
    click.echo(f"baseline (>= 3 on all three): {verdict}")


@main.command()
@click.argument("ratings_csv", type=click.Path(path_type=Path))
@click.option("--collapse", "do_collapse", is_flag=True, help="Add binary-label agreement (labels >= threshold).")
@click.option("--threshold", type=click.IntRange(min=2, max=4), default=3, show_default=True)
@click.option("--heatmap-data", "heatmap", is_flag=True, help="Emit per-artifact median and IQR tables.")
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def stats(
    config: AnvilConfig,
    ratings_csv: Path,
    do_collapse: bool,
    threshold: int,
    heatmap: bool,
    as_json: bool,
) -> None:
    """Inter-rater agreement statistics over a rater,artifact,criterion,label CSV."""
    try:
        matrices = load_ratings_csv(ratings_csv)
    except (AnvilError, OSError, ValueError) as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    result: dict = {"criteria": {}}
    for criterion in sorted(matrices):
        matrix = matrices[criterion]
        block: dict = {
            "raters": len(matrix.raters),
            "artifacts": len(matrix.items),
            **agreement_summary(matrix),
        }
        if do_collapse:
            collapsed = collapse(matrix, threshold)
            collapsed_block = agreement_summary(collapsed)
            try:
                collapsed_block["gwet_ac1"] = gwet_ac1(collapsed)
            except AnvilError:
                collapsed_block["gwet_ac1"] = None
            block["collapsed"] = collapsed_block
        result["criteria"][criterion] = block
    if heatmap:
        result["heatmap"] = heatmap_tables(matrices)
    if as_json:
        click.echo(canonical_json(result))
        return
    for criterion, block in result["criteria"].items():
        click.echo(f"{criterion}: {block['raters']} raters x {block['artifacts']} artifacts")
        click.echo(f"  exact agreement: {block['exact_agreement_pct']:.1f}%")
        for metric in ("ordinal", "nominal"):
            value = block[f"alpha_{metric}"]
            shown = "undefined" if value is None else f"{value:.4f}"
            click.echo(f"  alpha ({metric}): {shown}")
        if do_collapse:
            sub = block["collapsed"]
            ac1 = sub["gwet_ac1"]
            shown = "undefined" if ac1 is None else f"{ac1:.4f}"
            click.echo(
                f"  collapsed (>= {threshold}): exact {sub['exact_agreement_pct']:.1f}%, AC1 {shown}"
            )
    if heatmap:
        click.echo("medians:")
        for artifact, row in result["heatmap"]["median"].items():
            cells = ", ".join(f"{c}={v:g}" for c, v in row.items())
            click.echo(f"  {artifact}: {cells}")
        click.echo("IQRs:")
        for artifact, row in result["heatmap"]["iqr"].items():
            cells = ", ".join(f"{c}={v:g}" for c, v in row.items())
            click.echo(f"  {artifact}: {cells}")


@main.command()
@click.argument("collection", type=click.Path(path_type=Path), required=False)
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def report(config: AnvilConfig, collection: Optional[Path], as_json: bool) -> None:
    """Repair-iteration distribution over a run store or a fixture log."""
    try:
        if collection is None:
            result = RunStore(config.runstore_root).robustness_report()
        elif collection.is_file():
            result = robustness_from_outcomes(load_outcome_records(collection))
        elif collection.is_dir():
            result = RunStore(collection).robustness_report()
        else:
            raise click.UsageError(f"{collection} is neither a directory nor a fixture file")
    except AnvilError as exc:
        _fail(exc, as_json)
        return
    if as_json:
        click.echo(serialize(result).rstrip("\n"))
        return
    click.echo(f"runs: {result.total_runs}")
    click.echo("iterations  count  percent")
    for key in ("0", "1", "2", "3+"):
        bucket = result.by_iterations[key]
        click.echo(f"{key:>10}  {bucket.count:>5}  {bucket.percent:>6.1f}%")
    click.echo(
        f"would fail without repair: {result.would_fail_without_repair_percent:.1f}%"
    )
    click.echo(f"exhausted (still failing at cap): {result.exhausted_count}")


@main.command("export-schemas")
@click.argument("out_dir", type=click.Path(path_type=Path), default=Path("schemas"))
def export_schemas_cmd(out_dir: Path) -> None:
    """Write one JSON schema document per registered artifact type."""
    written = export_schemas(out_dir)
    click.echo(f"wrote {len(written)} schema documents to {out_dir}")


@main.command()
@click.option("--host", default=None, help="Bind address (default: configured, loopback).")
@click.option("--port", type=click.IntRange(min=1, max=65535), default=None)
@click.option(
    "--console",
    "console_dir",
    type=click.Path(exists=True, file_okay=False),
    default=None,
    help="Directory with a built review-console bundle to serve at /console.",
)
@click.pass_obj
def serve(
    config: AnvilConfig, host: Optional[str], port: Optional[int], console_dir: Optional[str]
) -> None:
    """Run the local HTTP service the review console talks to."""
    import uvicorn

    from .service import create_app

    app = create_app(config, console_dir=console_dir)
    uvicorn.run(
        app,
        host=host or config.service.host,
        port=port or config.service.port,
        log_level="info",
    )


if __name__ == "__main__":
    main()
