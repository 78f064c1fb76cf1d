"""Command-line entry point: ``ecpe <stage> --config <file> [options]``.

Exit codes: 0 success, 2 config error, 3 data error, 4 backend error,
5 internal error.
"""

from __future__ import annotations

import logging
import sys

import click

from .config import PipelineConfig, load_config
from .errors import (
    BackendError,
    CapacityError,
    ConfigError,
    CorpusParseError,
    DataError,
    SchemaError,
)
from .pipeline import STAGES, run

EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BACKEND = 4
EXIT_INTERNAL = 5


@click.command(context_settings={"help_option_names": ["-h", "--help"]})
@click.argument("stage", type=click.Choice(STAGES))
@click.option("--config", "config_path", type=click.Path(), default=None,
              help="Pipeline config file (YAML). Defaults are used when omitted.")
@click.option("--gold-emotions", is_flag=True,
              help="Feed gold emotion labels to stage 2 (ablation).")
@click.option("--seed", type=int, default=None,
              help="Override split/model seeds.")
@click.option("--out", type=click.Path(), default=None,
              help="Override the configured output directory.")
@click.option("-v", "--verbose", is_flag=True, help="Debug logging.")
def main(stage, config_path, gold_emotions, seed, out, verbose):
    """Run one pipeline stage (or `all`)."""
    logging.basicConfig(
        level=logging.DEBUG if verbose else logging.INFO,
        format="%(asctime)s %(name)s %(levelname)s %(message)s",
    )
    try:
        cfg = load_config(config_path) if config_path else PipelineConfig()
        run(stage, cfg, gold_emotions=gold_emotions, seed=seed, out=out)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    except (DataError, SchemaError, CorpusParseError, CapacityError) as exc:
        click.echo(f"data error: {exc}", err=True)
        sys.exit(EXIT_DATA)
    except BackendError as exc:
        click.echo(f"backend error: {exc}", err=True)
        sys.exit(EXIT_BACKEND)
    except Exception as exc:  # noqa: BLE001
        click.echo(f"internal error: {exc}", err=True)
        sys.exit(EXIT_INTERNAL)


if __name__ == "__main__":
    main()
