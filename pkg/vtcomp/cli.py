import sys
from dataclasses import replace
from pathlib import Path
from typing import Optional, Tuple

import click
import numpy as np
from loguru import logger

from .bench import BiasOracleConfig, bias_report, bias_sweep, niah_report, niah_rows
from .config import RunConfig, load_run_config
from .cost import CHARGE_INPUT, CHARGE_OUTPUT, LVBENCH_QUERY_TOKENS, REPORT_FRAMES, prefill_report
from .errors import EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, ContractError, VtcompError
from .io import read_attention_dump, read_token_dump, write_attention_dump, write_token_dump
from .plan import DropPlan, DropStrategy, apply_plan, build_plan
from .schedule import CompressionSchedule, ScheduleKind, parse_block
from .scoring import (
    SCORE_TABLE_HEADER,
    SELECTED_FRAMES_PRESETS,
    ChunkConfig,
    QuestionAttention,
    global_score,
    restricted_source,
    segmented_scores,
    select_top_k,
)
from .toy import forward, init_params
from .utils import atomic_write_text, configure_logging, render_csv, render_table, resolve_config_path


def _cli_message(message: str, *, fg: str = "cyan", bold: bool = False) -> None:
    """Emit a CLI banner on stderr so that stdout stays machine readable."""
    click.secho(f"[VTCOMP] [CLI] {message}", fg=fg, bold=bold, err=True)


def _emit(text: str, out: Optional[Path]) -> None:
    if out is None:
        click.echo(text, nl=False)
    else:
        atomic_write_text(out, text)
        _cli_message(f"Wrote {out}", fg="green")


def _run_config() -> RunConfig:
    return click.get_current_context().find_root().obj


def _output_path(out: Optional[Path], default_name: Optional[str] = None) -> Optional[Path]:
    """Place ``out`` under the configured output directory.

    Relative paths are resolved against ``outputs.directory``; a missing path
    becomes ``directory/default_name`` so reports land on disk instead of
    stdout. Without a configured directory ``out`` is returned unchanged.
    """
    directory = _run_config().outputs.directory
    if directory is None:
        return out
    if out is None:
        return None if default_name is None else Path(directory) / default_name
    return out if out.is_absolute() else Path(directory) / out


@click.group(help="Video-token compression and frame selection utilities.")
@click.option("-v", count=True, help="Increase verbosity (-v, -vv).")
@click.option(
    "--config",
    "config_path",
    default=None,
    type=click.Path(dir_okay=False, path_type=Path),
    help="YAML run config. Priority: 1. --config > 2. ENV[VTCOMP_CONFIG] > 3. defaults",
)
@click.pass_context
def cli(ctx: click.Context, v: int, config_path: Optional[Path]):
    """Entry point for the `vtcomp` CLI.

    Args:
        v: Verbosity flag count.
        config_path: Optional explicit run config.
    """
    configure_logging(v)
    ctx.obj = load_run_config(resolve_config_path(config_path))


@cli.command("init-config", help="Write the default run configuration as YAML.")
@click.argument("path", type=click.Path(dir_okay=False, path_type=Path))
def cmd_init_config(path: Path) -> None:
    _run_config().dump(path)
    _cli_message(f"Config written to {path}. Export VTCOMP_CONFIG to use it by default.", fg="green", bold=True)


def _schedule_from_options(
    config: RunConfig,
    kind: Optional[str],
    n1: Optional[int],
    layers: Optional[int],
    schedule_file: Optional[Path],
) -> Tuple[CompressionSchedule, Optional[str]]:
    """Schedule from a block file, or the config overridden by flags.

    Returns:
        ``(schedule, strategy)`` where strategy is set only when the block
        file names one.
    """
    if schedule_file is not None:
        text = schedule_file.read_text(encoding="utf-8")
        plan = DropPlan.from_block(text)
        has_strategy = "strategy" in parse_block(text)
        return plan.schedule, plan.strategy.value if has_strategy else None
    settings = config.schedule
    overrides = {}
    if kind is not None:
        overrides["kind"] = kind
    if n1 is not None:
        overrides["initial_tokens"] = n1
    if layers is not None:
        overrides["num_layers"] = layers
    if overrides:
        settings = replace(settings, stages=None, **overrides)
    return settings.build(), None


_schedule_options = [
    click.option("--kind", type=click.Choice([k.value for k in ScheduleKind]), default=None),
    click.option("--n1", type=click.IntRange(min=1), default=None, help="Tokens per frame entering layer 1."),
    click.option("--layers", type=click.IntRange(min=1), default=None, help="Number of LLM layers."),
    click.option(
        "--schedule-file",
        type=click.Path(exists=True, dir_okay=False, path_type=Path),
        default=None,
        help="key=value schedule/plan block; overrides --kind/--n1/--layers.",
    ),
]


def schedule_options(func):
    for option in reversed(_schedule_options):
        func = option(func)
    return func


@cli.command("schedule", help="Print per-layer tokens per frame as CSV.")
@schedule_options
@click.option("--block", "block_out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Also write the schedule as a key=value block.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def cmd_schedule(kind, n1, layers, schedule_file, block_out: Optional[Path], out: Optional[Path]) -> None:
    schedule, _ = _schedule_from_options(_run_config(), kind, n1, layers, schedule_file)
    rows = [(layer, count) for layer, count in enumerate(schedule.per_layer_counts())]
    _emit(render_csv(("layer", "tokens_per_frame"), rows), _output_path(out, "schedule.csv"))
    _cli_message(
        f"{schedule.kind.value}: average {schedule.average_tokens_processed():.4f} tokens/frame, "
        f"{schedule.compression_ratio():.2f}x fewer than {schedule.initial_tokens}"
    )
    if block_out is not None:
        atomic_write_text(_output_path(block_out), schedule.to_block())


@cli.command("compress", help="Apply a drop plan to a TOKD token dump.")
@click.argument("tokens_in", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.argument("tokens_out", type=click.Path(dir_okay=False, path_type=Path))
@schedule_options
@click.option("--strategy", type=click.Choice([s.value for s in DropStrategy]), default=None)
def cmd_compress(tokens_in: Path, tokens_out: Path, kind, n1, layers, schedule_file, strategy) -> None:
    config = _run_config()
    header, tokens = read_token_dump(tokens_in)
    if n1 is None and schedule_file is None:
        n1 = header.tokens_per_frame
    schedule, block_strategy = _schedule_from_options(config, kind, n1, layers, schedule_file)
    plan = build_plan(schedule, DropStrategy(strategy or block_strategy or config.strategy.value))
    if header.tokens_per_frame != plan.initial_tokens:
        raise ContractError(
            f"tokens_per_frame={header.tokens_per_frame} in {tokens_in} "
            f"does not match initial_tokens={plan.initial_tokens} of the plan"
        )
    compressed, _ = apply_plan(tokens, plan)
    write_token_dump(_output_path(tokens_out), compressed)
    _cli_message(
        f"{header.frames} frames: {plan.initial_tokens} -> {plan.final_tokens} tokens/frame "
        f"({plan.strategy.value})",
        fg="green",
    )


@cli.command("score-select", help="Score frames from an ATND dump and select the top k.")
@click.argument("dump", type=click.Path(exists=True, dir_okay=False, path_type=Path))
@click.option("--global", "use_global", is_flag=True, help="Score with one window over the whole video.")
@click.option("--k", type=click.IntRange(min=1), default=None, help="Frames to select.")
@click.option("--preset", type=click.Choice(sorted(SELECTED_FRAMES_PRESETS)), default=None,
              help="Take k from a benchmark preset when --k is not given.")
@click.option("--granularity", type=click.Choice(["frame", "clip"]), default="frame", show_default=True)
@click.option("--workers", type=click.IntRange(min=1), default=None, help="Threads for window scoring.")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None, help="Scores CSV.")
@click.option("--selection-out", type=click.Path(dir_okay=False, path_type=Path), default=None,
              help="Selection CSV (frame, score).")
def cmd_score_select(
    dump: Path,
    use_global: bool,
    k: Optional[int],
    preset: Optional[str],
    granularity: str,
    workers: Optional[int],
    out: Optional[Path],
    selection_out: Optional[Path],
) -> None:
    config = _run_config()
    _, attention = read_attention_dump(dump)
    if use_global:
        table = global_score(attention, config.segment)
    else:
        table = segmented_scores(
            restricted_source(attention), attention.num_frames, config.segment, config.chunk, workers=workers
        )
    if k is None:
        k = SELECTED_FRAMES_PRESETS[preset] if preset else config.chunk.n_selected_frames
    selection = select_top_k(table, k, granularity=granularity, clip_size=config.segment.clip_size)
    _emit(render_csv(SCORE_TABLE_HEADER, table.rows(selection.frames)), _output_path(out, "scores.csv"))
    selection_out = _output_path(selection_out, "selection.csv")
    if selection_out is not None:
        atomic_write_text(selection_out, render_csv(("frame", "score"), zip(selection.frames, selection.scores)))
    _cli_message(f"Selected {len(selection.frames)} of {attention.num_frames} frames")


@cli.command("flops", help="Prefill FLOPs of the schedule against the uncompressed baseline.")
@schedule_options
@click.option("--frames", "frames", type=click.IntRange(min=1), multiple=True,
              help=f"Frame counts (default {', '.join(map(str, REPORT_FRAMES))}).")
@click.option("--query-tokens", type=click.IntRange(min=0), default=LVBENCH_QUERY_TOKENS, show_default=True)
@click.option("--charge", type=click.Choice([CHARGE_INPUT, CHARGE_OUTPUT]), default=CHARGE_OUTPUT, show_default=True,
              help="Charge each layer at the token count it outputs or receives.")
@click.option("--convention", type=click.Choice(["flops", "macs"]), default="flops", show_default=True)
@click.option("--causal", is_flag=True, help="Halve the quadratic attention term.")
@click.option("--format", "fmt", type=click.Choice(["csv", "table"]), default="csv", show_default=True)
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def cmd_flops(kind, n1, layers, schedule_file, frames, query_tokens, charge, convention, causal, fmt, out) -> None:
    config = _run_config()
    if layers is None and schedule_file is None:
        layers = config.model.num_layers
    schedule, _ = _schedule_from_options(config, kind, n1, layers, schedule_file)
    report = prefill_report(
        list(frames) or list(REPORT_FRAMES),
        query_tokens,
        schedule,
        config.model,
        charge=charge,
        flops_per_mac=1 if convention == "macs" else 2,
        causal=causal,
    )
    unit = "MACs" if convention == "macs" else "2 FLOPs per MAC"
    _cli_message(f"Charging each layer at its {charge} count, {unit}" + (", causal" if causal else ""))
    for note in report.notes():
        _cli_message(note)
    if fmt == "csv":
        _emit(render_csv(report.HEADER, report.rows()), _output_path(out, "flops.csv"))
    else:
        rows = [
            (t, q, f"{b:.1f}", f"{c:.1f}", f"{r * 100:.1f}%")
            for t, q, b, c, r in report.rows()
        ]
        notes = "".join(f"# {note}\n" for note in report.notes())
        _emit(notes + render_table(report.HEADER, rows), _output_path(out, "flops.txt"))


@cli.command("bench", help="Run the synthetic position-bias or needle benchmark.")
@click.argument("experiment", type=click.Choice(["bias", "niah"]))
@click.option("--seeds", type=click.IntRange(min=0), default=None, help="Number of seeds (default from config).")
@click.option("--out", type=click.Path(dir_okay=False, path_type=Path), default=None)
def cmd_bench(experiment: str, seeds: Optional[int], out: Optional[Path]) -> None:
    config = _run_config()
    bench = config.bench
    seed_settings = config.seeds if seeds is None else replace(config.seeds, count=seeds)
    segment = replace(config.segment, clip_size=1)
    if experiment == "bias":
        base = BiasOracleConfig(
            total_frames=bench.total_frames,
            begin_bias=bench.begin_bias,
            needle_frame=bench.needle_frame,
            needle_signal=bench.needle_signal,
            noise_scale=bench.noise_scale,
        )
        rows = bias_sweep(base, bench.end_bias_sweep, seed_settings.seeds, segment, config.chunk)
        _emit(bias_report(rows), _output_path(out, "bench_bias.csv"))
        wins = sum(1 for row in rows if row[-1] == 1)
        _cli_message(f"Segmented scoring ranked the needle first in {wins}/{len(rows)} runs")
    else:
        chunk = ChunkConfig(config.chunk.chunk_frames, bench.niah_n_repeat, 1)
        rows = niah_rows(
            bench.niah_frames, bench.niah_hops, bench.niah_signal, seed_settings.seeds,
            bench.niah_noise_scale, chunk, segment,
        )
        _emit(niah_report(rows), _output_path(out, "bench_niah.csv"))
        if rows:
            _cli_message(f"Recovered {sum(row[6] for row in rows)}/{len(rows)} chains")


@cli.command("trace", help="Run the toy transformer and write its attention as an ATND dump.")
@click.argument("dump_out", type=click.Path(dir_okay=False, path_type=Path))
@click.option("--tokens", "tokens_in", type=click.Path(exists=True, dir_okay=False, path_type=Path), default=None,
              help="TOKD input; synthetic tokens when omitted.")
@click.option("--frames", type=click.IntRange(min=1), default=8, show_default=True)
@click.option("--n1", type=click.IntRange(min=1), default=4, show_default=True)
@click.option("--question-tokens", type=click.IntRange(min=1), default=2, show_default=True)
@click.option("--no-plan", is_flag=True, help="Keep every token at every layer.")
def cmd_trace(dump_out: Path, tokens_in: Optional[Path], frames: int, n1: int, question_tokens: int, no_plan: bool):
    config = _run_config()
    toy = config.toy.build()
    rng = np.random.default_rng(config.toy.seed)
    if tokens_in is not None:
        _, video = read_token_dump(tokens_in)
        frames, n1 = video.shape[:2]
    else:
        video = rng.standard_normal((frames, n1, toy.model_width))
    question = rng.standard_normal((question_tokens, video.shape[2]))

    plan = None
    if not no_plan:
        settings = replace(config.schedule, initial_tokens=n1, num_layers=toy.num_layers, stages=None)
        plan = build_plan(settings.build(), config.strategy)
    params = init_params(toy, config.toy.seed)
    trace = forward(params, toy, video, question, plan, record_attention=True)
    attention = QuestionAttention.from_full_maps(trace.attention, frames, trace.video_tokens_per_frame[:-1])
    write_attention_dump(_output_path(dump_out), attention)
    _cli_message(f"Traced {frames} frames through {toy.num_layers} layers: {trace.video_tokens_per_frame}")


def main(argv: Optional[list] = None) -> int:
    """Execute the CLI and return an exit code.

    Args:
        argv: Optional argument vector override.

    Returns:
        0 on success, 1 on usage errors, 2 on validation errors, 3 on
        numeric errors.
    """
    try:
        cli.main(args=argv, prog_name="vtcomp", standalone_mode=False)
        return EXIT_OK
    except click.exceptions.Abort:
        _cli_message("Aborted.", fg="red")
        return EXIT_USAGE
    except click.ClickException as exc:
        exc.show()
        return EXIT_USAGE
    except VtcompError as exc:
        logger.debug(f"{type(exc).__name__}: {exc}")
        _cli_message(f"{type(exc).__name__}: {exc}", fg="red", bold=True)
        return exc.exit_code
    except ValueError as exc:
        _cli_message(f"Invalid input: {exc}", fg="red", bold=True)
        return EXIT_VALIDATION


if __name__ == "__main__":
    sys.exit(main())
