"""Command-line interface: ``vidrag build``, ``vidrag ask``, ``vidrag bench``."""

from __future__ import annotations

import json
import logging
import sys
from pathlib import Path

import click

from .config import load_config
from .errors import VidragError
from .pipeline import run_ask, run_bench, run_build


def _config_from(config_file, mock, overrides):
    config = load_config(config_file)
    return config.with_overrides(mock_dir=mock, **overrides)


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Enable debug logging.")
def main(verbose: bool):
    """Retrieval-augmented video question answering."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )


@main.command()
@click.option("--video", required=True, type=click.Path(exists=True), help="Video file or frame directory.")
@click.option("--frames", type=int, default=None, help="Number of frames to sample uniformly.")
@click.option("--out", type=click.Path(), default=None, help="Database output directory.")
@click.option("--mock", type=click.Path(exists=True), default=None, help="Fixture directory enabling mock mode.")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None, help="TOML config file.")
@click.option("--entities", default=None, help="Comma-separated entities for eager detection.")
@click.option("--force", is_flag=True, help="Rebuild even on a cache hit.")
def build(video, frames, out, mock, config_file, entities, force):
    """Extract and index the auxiliary-text databases for one video."""
    config = _config_from(config_file, mock, {"frames_n": frames})
    entity_list = [e.strip() for e in entities.split(",") if e.strip()] if entities else None
    try:
        db_dir = run_build(video, config, out_dir=out, entities=entity_list, force=force)
    except VidragError as exc:
        raise click.ClickException(str(exc))
    click.echo(str(db_dir))


@main.command()
@click.option("--db", required=True, type=click.Path(exists=True), help="Database directory (or video input).")
@click.option("--question", required=True, help="The question to answer.")
@click.option("--options", default=None, help='Comma-separated options, e.g. "A. red,B. blue".')
@click.option("--t", "t_retrieval", type=float, default=None, help="Similarity threshold for retrieval.")
@click.option("--budget", default=None, help='Token budget (integer or the "paper-default" preset).')
@click.option("--mock", type=click.Path(exists=True), default=None, help="Fixture directory enabling mock mode.")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None, help="TOML config file.")
@click.option("--audit", "audit_file", type=click.Path(), default=None, help="Append the audit record to this JSONL file.")
@click.option("--no-ocr", is_flag=True, help="Disable the OCR auxiliary kind.")
@click.option("--no-asr", is_flag=True, help="Disable the ASR auxiliary kind.")
@click.option("--no-det", is_flag=True, help="Disable the detection auxiliary kind.")
def ask(db, question, options, t_retrieval, budget, mock, config_file, audit_file, no_ocr, no_asr, no_det):
    """Answer one question against a built database."""
    overrides = {"t_retrieval": t_retrieval, "budget_tokens": budget}
    config = _config_from(config_file, mock, overrides)
    if no_ocr or no_asr or no_det:
        config = config.with_overrides(
            use_ocr=not no_ocr, use_asr=not no_asr, use_det=not no_det
        )
    option_list = [o.strip() for o in options.split(",") if o.strip()] if options else None
    try:
        result = run_ask(db, question, option_list, config)
    except VidragError as exc:
        raise click.ClickException(str(exc))
    if audit_file:
        with open(audit_file, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(result.audit, ensure_ascii=False, sort_keys=True) + "\n")
    click.echo(json.dumps(
        {"predicted": result.predicted, "reply": result.reply, "timings": result.timings},
        ensure_ascii=False,
    ))


@main.command()
@click.option("--dataset", required=True, type=click.Path(exists=True), help="JSONL dataset of QA items.")
@click.option("--out", required=True, type=click.Path(), help="Directory for results.jsonl and summary.json.")
@click.option("--mock", type=click.Path(exists=True), default=None, help="Fixture directory enabling mock mode.")
@click.option("--config", "config_file", type=click.Path(exists=True), default=None, help="TOML config file.")
@click.option("--workers", type=int, default=None, help="Concurrent bench workers.")
def bench(dataset, out, mock, config_file, workers):
    """Score a multiple-choice dataset and write per-item results."""
    config = _config_from(config_file, mock, {"bench_workers": workers})
    try:
        summary = run_bench(dataset, config, out)
    except VidragError as exc:
        raise click.ClickException(str(exc))
    click.echo(f"accuracy: {summary.accuracy:.4f} ({summary.correct}/{summary.total})")
    for bucket, stats in sorted(summary.per_duration.items()):
        click.echo(
            f"  {bucket}: {stats['accuracy']:.4f} ({stats['correct']}/{stats['total']})"
        )
    click.echo(f"results written to {Path(out) / 'results.jsonl'}")


if __name__ == "__main__":
    main(sys.argv[1:])
