"""``sigma-vqe`` command-line entry point."""

from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

import yaml

from . import __version__
from .config import ConfigError, ExperimentConfig, load_config
from .experiments import (diagnose_model, estimator_audit, noisy_budget_study, run_vqe,
                          shot_budget_study, sweep_targets)
from .pauli import DenseLimitError

# Reference sizes and budgets; the defaults are small enough to finish quickly.
FULL_SCALE = {
    "run": {"model": {"n_qubits": 9}, "run": {"iterations": 300}},
    "sweep": {"run": {"iterations": 300}, "sweep": {"points": 21}},
    "shots": {"model": {"n_qubits": 9},
              "study": {"shots": [1_000_000, 10_000_000, 100_000_000], "repetitions": 1}},
    "audit": {"study": {"audit_repetitions": 10_000}},
    "noisy": {"study": {"total_budget": 535_000, "shots": [1000, 5000, 10_000, 20_000]}},
    "diagnose": {},
}

EXIT_CONFIG = 2
EXIT_REFUSED = 3


def _parse_set(items: list[str]) -> dict:
    """``section.key=value`` pairs; values are parsed as YAML scalars or lists."""
    out: dict = {}
    for item in items:
        if "=" not in item or "." not in item.split("=", 1)[0]:
            raise ConfigError([f"--set {item!r}: expected section.key=value"])
        key, raw = item.split("=", 1)
        section, name = key.split(".", 1)
        out.setdefault(section, {})[name] = yaml.safe_load(raw)
    return out


def _merge(base: dict, extra: dict) -> dict:
    out = {k: dict(v) for k, v in base.items()}
    for section, values in extra.items():
        out.setdefault(section, {}).update(values)
    return out


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="sigma-vqe", description=__doc__)
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "diagnose": "exact spectrum, entanglement and gap ratio of a model",
        "run": "a single optimization",
        "sweep": "independent runs over a grid of target energies",
        "shots": "shot-budget study with an exact baseline",
        "audit": "Monte-Carlo audit of the cost estimators",
        "noisy": "SPSA under noise and a fixed total shot budget",
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text, description=text)
        p.add_argument("--config", type=Path, help="YAML experiment file")
        p.add_argument("--seed", type=int, help="master seed (overrides run.seed)")
        p.add_argument("--out", type=Path, help="output directory (overrides run.out)")
        p.add_argument("--full-scale", action="store_true", help="use the full reference sizes and budgets")
        p.add_argument("--set", dest="overrides", action="append", default=[], metavar="SECTION.KEY=VALUE",
                       help="override any config field; repeatable")
        p.add_argument("-v", "--verbose", action="store_true")
    return parser


def resolve_config(args) -> ExperimentConfig:
    overrides = FULL_SCALE[args.command] if args.full_scale else {}
    overrides = _merge(overrides, _parse_set(args.overrides))
    run = {}
    if args.seed is not None:
        run["seed"] = args.seed
    if args.out is not None:
        run["out"] = str(args.out)
    if run:
        overrides = _merge(overrides, {"run": run})
    return load_config(args.config, overrides)


def _report(payload: dict) -> None:
    print(json.dumps(payload, indent=2, default=str))


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    out = Path(cfg.run.out)
    try:
        if args.command == "diagnose":
            s = diagnose_model(cfg, out)
            _report({k: s[k] for k in ("gap_ratio", "scar_candidate", "low_entropy_zero_energy_count",
                                       "mid_spectrum_min_entropy")})
        elif args.command == "run":
            res = run_vqe(cfg, out)
            _report({"trace": str(res.trace_path), "final": res.final})
        elif args.command == "sweep":
            res = sweep_targets(cfg, out_dir=out)
            _report({"sweep": str(res.path), "failed": res.summary["n_failed"],
                     "max_separation_ratio": res.summary.get("max_separation_ratio")})
        elif args.command == "shots":
            res = shot_budget_study(cfg, out_dir=out)
            _report({"budget": str(res.path), "total_inversions": res.summary.get("total_inversions"),
                     "max_gap_to_exact": res.summary.get("max_gap_to_exact"), "flags": res.summary["flags"]})
        elif args.command == "audit":
            res = estimator_audit(cfg, out_dir=out)
            _report({"estimators": res.summary["estimators"], "flags": res.summary["flags"]})
        elif args.command == "noisy":
            res = noisy_budget_study(cfg, out_dir=out)
            _report({"noisy": str(res.path), "results": res.rows})
    except DenseLimitError as exc:
        print(f"refused: {exc}", file=sys.stderr)
        return EXIT_REFUSED
    except ConfigError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_CONFIG
    return 0


if __name__ == "__main__":
    sys.exit(main())
