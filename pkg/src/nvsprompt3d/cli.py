"""Command line interface.

Exit codes: 0 success, 2 configuration or input validation error,
3 partial failure (some instances were skipped), 4 I/O error.
"""

from __future__ import annotations

import sys
from pathlib import Path

import click

from . import pipeline
from .errors import (
    DimensionMismatch,
    IoFailure,
    MalformedHeader,
    MissingFile,
    MissingStageArtifact,
    PipelineError,
    SchemaViolation,
    UnsupportedPlyVariant,
)
from .scene_io import FUSION_MODES, PROMPT_MODES

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_PARTIAL = 3
EXIT_IO = 4

_CONFIG_ERRORS = (SchemaViolation, DimensionMismatch, UnsupportedPlyVariant,
                  MalformedHeader, ValueError)
_IO_ERRORS = (MissingFile, IoFailure, MissingStageArtifact)


def _common_options(f):
    options = [
        click.option("--manifest", required=True,
                     type=click.Path(path_type=Path), help="Scene manifest JSON."),
        click.option("--out", required=True,
                     type=click.Path(path_type=Path), help="Output directory."),
        click.option("--delta", type=float, default=None,
                     help="Depth agreement threshold in meters."),
        click.option("--top-k", type=int, default=None,
                     help="Number of reference views per instance."),
        click.option("--n-interp", type=int, default=None,
                     help="Interpolated views per consecutive reference pair."),
        click.option("--alpha", type=float, default=None,
                     help="Interpolated-feature contribution in (0, 1]."),
        click.option("--prompt-mode", type=click.Choice(PROMPT_MODES), default=None),
        click.option("--fusion", "fusion_mode", type=click.Choice(FUSION_MODES),
                     default=None),
        click.option("--adjust-topk", is_flag=True, default=False,
                     help="Re-aim reference views at the instance center."),
        click.option("--workers", type=int, default=1, show_default=True),
        click.option("--seed", type=int, default=0, show_default=True),
        click.option("--provider", default="mock", show_default=True,
                     help="Embedding provider: mock or subprocess:CMD."),
        click.option("--queries", type=click.Path(path_type=Path), default=None,
                     help="Query set JSON (overrides the manifest's)."),
        click.option("--gt", type=click.Path(path_type=Path), default=None,
                     help="Ground truth JSON for evaluation."),
    ]
    for option in reversed(options):
        f = option(f)
    return f


def _build_config(**kwargs) -> pipeline.RunConfig:
    return pipeline.RunConfig(**kwargs)


def _execute(stage_fn, config: pipeline.RunConfig, check_partial: bool = True) -> int:
    try:
        payload = stage_fn(config)
    except _IO_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_IO
    except _CONFIG_ERRORS as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    except PipelineError as exc:
        click.echo(f"error: {exc}", err=True)
        return EXIT_CONFIG
    if check_partial and isinstance(payload, dict):
        skipped = [e for e in payload.get("instances", [])
                   if e.get("status") not in (None, "ok")]
        if skipped:
            for entry in skipped:
                click.echo(f"instance {entry.get('instance_id')} skipped: "
                           f"{entry.get('reason', '')}", err=True)
            return EXIT_PARTIAL
    return EXIT_OK


@click.group()
def main():
    """Object-centered view synthesis, visual prompting and feature fusion
    for labeling 3-D instance masks."""


def _stage_command(name, stage_fn, check_partial=True):
    @main.command(name=name, help=stage_fn.__doc__)
    @_common_options
    def command(**kwargs):
        config = _build_config(**kwargs)
        sys.exit(_execute(stage_fn, config, check_partial=check_partial))

    return command


_stage_command("select-views", pipeline.stage_select)
_stage_command("interpolate", pipeline.stage_interpolate)
_stage_command("render", pipeline.stage_render)
_stage_command("prompts", pipeline.stage_prompts)
_stage_command("fuse", pipeline.stage_fuse)
_stage_command("eval", pipeline.stage_eval, check_partial=False)


@main.command(name="run")
@_common_options
def run_command(**kwargs):
    """Run the whole pipeline: select, interpolate, render, prompt, fuse
    and (with --gt) evaluate."""
    config = _build_config(**kwargs)

    def full(cfg):
        report = pipeline.run(cfg)
        return {"instances": report.instances}

    sys.exit(_execute(full, config))


if __name__ == "__main__":
    main()
