#!/usr/bin/env python
"""
Measuring CLI - main router.

Dispatches the subcommands generate, transport, tangents, id, coords, pipeline and
plot-data. Exit codes: 0 success, 1 invalid input or configuration, 2 numerical failure.
"""
import sys
from pathlib import Path

sys.path.append(str(Path(__file__).parent))
from cli.pipeline_cli import main


if __name__ == "__main__":
    sys.exit(main())
