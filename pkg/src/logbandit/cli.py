"""Command line entry point: run experiments from config files and write results."""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .config import config_digest, parse_config, serialize_config, with_seed
from .errors import ConfigError
from .experiments import DISPATCH, ExperimentConfig, ExperimentResult
from .simulation import write_trajectory_csv

SUBCOMMANDS = ("run", "coverage", "scaling", "transitory", "lowerbound", "verify-lemmas")


@dataclass
class RunManifest:
    config_digest: str
    code_version: str
    kind: str
    started: str
    finished: str = ""
    outputs: list = field(default_factory=list)
    checks: dict = field(default_factory=dict)
    errors: list = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.errors and all(self.checks.values())


def _clean(obj):
    """JSON-ready copy with floats at 12 significant digits and NaN as null."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, (np.bool_, bool)):
        return bool(obj)
    if isinstance(obj, (np.integer, int)):
        return int(obj)
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if not math.isfinite(v) else float(f"{v:.12g}")
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    return obj


def _stamp() -> str:
    return time.strftime("%Y-%m-%dT%H:%M:%S%z")


def write_outputs(cfg: ExperimentConfig, result: ExperimentResult, out: Path) -> list[str]:
    out.mkdir(parents=True, exist_ok=True)
    files = []
    if result.logs:
        traj = out / "trajectories"
        traj.mkdir(exist_ok=True)
        for stem, log in result.logs:
            path = traj / f"{stem}.csv"
            write_trajectory_csv(log, path)
            files.append(str(path.relative_to(out)))
    report = {"kind": result.kind, "config": serialize_config(cfg), "summary": result.summary,
              "checks": result.checks}
    (out / "summary.json").write_text(json.dumps(_clean(report), indent=2, sort_keys=True) + "\n")
    (out / "config.toml").write_text(serialize_config(cfg))
    files += ["summary.json", "config.toml"]
    return files


def run_experiment(cfg: ExperimentConfig, out: Path | str, threads: int = 1) -> RunManifest:
    """Run one experiment and write CSVs, the summary and the manifest under out."""
    out = Path(out)
    manifest = RunManifest(config_digest(cfg), __version__, cfg.kind, _stamp())
    try:
        result = DISPATCH[cfg.kind](cfg, threads)
        manifest.outputs = write_outputs(cfg, result, out)
        manifest.checks = dict(result.checks)
    except Exception as exc:  # recorded in the manifest; the exit status reports it
        manifest.errors.append(f"{type(exc).__name__}: {exc}")
    manifest.finished = _stamp()
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(_clean(asdict(manifest)), indent=2, sort_keys=True) + "\n")
    return manifest


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="logbandit", description="Logistic bandit experiments.")
    sub = p.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        s = sub.add_parser(name, help=f"{name} experiment")
        s.add_argument("--config", type=Path, help="TOML config file (dotted keys)")
        s.add_argument("--seed", type=int, help="override the base seed")
        s.add_argument("--out", type=Path, default=Path("results"), help="output directory")
        s.add_argument("--threads", type=int, default=1, help="worker processes, 0 = all cores")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    kind = args.command
    try:
        text = args.config.read_text() if args.config else f'experiment.kind = "{kind}"\n'
        cfg = parse_config(text)
    except (ConfigError, OSError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if kind != "run" and cfg.kind != kind:
        print(f"config error: experiment.kind: config is {cfg.kind!r}, command is {kind!r}", file=sys.stderr)
        return 2
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    if args.threads < 0:
        print("--threads must be >= 0", file=sys.stderr)
        return 2
    manifest = run_experiment(cfg, args.out, args.threads)
    for name, ok in manifest.checks.items():
        print(f"{'PASS' if ok else 'FAIL'}  {name}")
    for err in manifest.errors:
        print(f"ERROR {err}", file=sys.stderr)
    return 0 if manifest.ok else 1


if __name__ == "__main__":
    sys.exit(main())
