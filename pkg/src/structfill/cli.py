"""Command-line entry point."""

from __future__ import annotations

import logging
import sys
from typing import Sequence

from .config import ConfigError, parse_config
from .imagery import ImageError
from .pipeline import JobReport, StageError, run_pipeline

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_IO = 3
EXIT_STAGE = 4


def main(argv: Sequence[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    try:
        config = parse_config(argv)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        _, report = run_pipeline(config)
    except (ImageError, OSError) as exc:
        report = JobReport(seed=config.seed, structure=config.structure, failed_stage="io", error=str(exc))
        print(report.to_json())
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except StageError as exc:
        print(exc.report.to_json())
        print(f"stage failed: {exc}", file=sys.stderr)
        return EXIT_STAGE
    print(report.to_json())
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
