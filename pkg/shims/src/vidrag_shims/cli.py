"""Launch one shim server: ``vidrag-shim --kind ocr --model builtin --port 8601``."""

from __future__ import annotations

import logging
import sys

import click
import uvicorn

from .schemas import KINDS
from .server import create_app


@click.command()
@click.option("--kind", required=True, type=click.Choice(KINDS), help="Extractor kind to serve.")
@click.option("--model", default="builtin", show_default=True,
              help="Model id (builtin, easyocr, whisper:base, st:<name>, hash<dim>, scripted:<rules.json>).")
@click.option("--host", default="127.0.0.1", show_default=True)
@click.option("--port", default=8600, show_default=True, type=int)
@click.option("--schemas", "schemas_dir", default=None, type=click.Path(exists=True),
              help="Directory holding the wire schemas (defaults to auto-discovery).")
def main(kind: str, model: str, host: str, port: int, schemas_dir):
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(name)s: %(message)s")
    try:
        app = create_app(kind, model, schemas_dir)
    except Exception as exc:  # noqa: BLE001 - startup diagnostics then nonzero exit
        click.echo(f"startup failed for kind={kind} model={model}: {exc}", err=True)
        sys.exit(1)
    uvicorn.run(app, host=host, port=port, log_level="warning")


if __name__ == "__main__":
    main()
