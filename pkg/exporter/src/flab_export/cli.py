"""CLI for exporting score matrices consumable by the evaluation pipeline."""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click

from .errors import ExportError
from .export import ExportJob, export_scores


@click.command()
@click.option("--images", "images_file", required=True, type=click.Path())
@click.option("--pairs", "pairs_dir", required=True, type=click.Path())
@click.option("--template", required=True, help="Label text with {s} and {o} placeholders.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--model", default="hash", show_default=True, help="'hash' or 'clip:<model-name>'.")
@click.option("--batch-size", default=32, show_default=True, type=int)
def main(images_file, pairs_dir, template, out_dir, model, batch_size) -> None:
    """Score every image against every state-object label."""
    try:
        job = ExportJob(
            images_file=Path(images_file),
            pairs_dir=Path(pairs_dir),
            template=template,
            model=model,
            batch_size=batch_size,
        )
        final = export_scores(job, Path(out_dir))
    except ExportError as exc:
        click.echo(json.dumps({"error": type(exc).__name__, "message": str(exc)}), err=True)
        sys.exit(2)
    click.echo(f"wrote {final}")


if __name__ == "__main__":
    main()
