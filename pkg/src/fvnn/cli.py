"""Command-line entry point: ``fvnn <subcommand> --config CFG --out DIR --jobs N``.

On failure a single JSON object ``{"error": ..., "type": ..., "details": [...]}``
is written to stderr and the exit status is nonzero.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .config import dump, load_config, normalize
from .exceptions import ConfigError, FvnnError
from .experiments import RUNNERS, run_gradcheck

# subcommand -> experiment name in the config
SUBCOMMANDS = {
    "synth-sweep": "synth_sweep",
    "gamma-sweep": "gamma_sweep",
    "classify": "classification",
    "stability": "stability",
    "gradcheck": "gradcheck",
    "validate": None,
}

EXIT_CONFIG = 2
EXIT_RUNTIME = 1
EXIT_CHECK_FAILED = 3


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="fvnn", description="Fair covariance neural network experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", required=name == "validate", default=None)
        s.add_argument("--out", default="results")
        s.add_argument("--jobs", type=int, default=1)
    return p


def _fail(exc: Exception, code: int) -> int:
    payload = {"error": str(exc), "type": type(exc).__name__}
    if isinstance(exc, ConfigError):
        payload["details"] = exc.errors
    sys.stderr.write(json.dumps(payload) + "\n")
    return code


def _load(path, experiment):
    if path is None:
        return normalize({"experiment": experiment})
    # the subcommand decides what runs
    return load_config(path, experiment)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    experiment = SUBCOMMANDS[args.command]
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        cfg = _load(args.config, experiment)
    except (ConfigError, OSError) as exc:
        return _fail(exc, EXIT_CONFIG)
    if experiment is None:
        sys.stdout.write(dump(cfg))
        return 0
    out = Path(args.out)
    try:
        if experiment == "gradcheck":
            path, ok = run_gradcheck(cfg, out, args.jobs)
            print(json.dumps({"output": str(path), "passed": ok}))
            return 0 if ok else EXIT_CHECK_FAILED
        path = RUNNERS[experiment](cfg, out, args.jobs)
    except (FvnnError, OSError, ValueError) as exc:
        return _fail(exc, EXIT_RUNTIME)
    print(json.dumps({"output": str(path)}))
    return 0


if __name__ == "__main__":
    sys.exit(main())
