"""Common helper functions for integration tests."""

import json
import os
import sys
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, Optional

import sh

ROOT = Path(__file__).resolve().parents[2]
CLI = ROOT / "src" / "cli.py"


@dataclass
class CliRun:
    exit_code: int
    stdout: str
    stderr: str

    def json(self) -> Any:
        return json.loads(self.stdout)


def run_cli(*args: str, env: Optional[Dict[str, str]] = None) -> CliRun:
    """Run the command line in a subprocess and capture its output whatever the exit code."""
    proc = sh.Command(sys.executable)(
        str(CLI),
        *args,
        _ok_code=[0, 1, 2, 3],
        _cwd=str(ROOT),
        _env={**os.environ, **(env or {})},
        _return_cmd=True,
    )
    return CliRun(proc.exit_code, proc.stdout.decode(), proc.stderr.decode())
