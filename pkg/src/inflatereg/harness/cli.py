"""Command line: ``inflatereg run | accept | list-scenarios``."""
from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from .acceptance import run_acceptance_suite
from .config import SCENARIO_HELP, SCENARIOS, ConfigError, ExperimentConfig
from .scenarios import run_scenario

OUT_ENV = "INFLATEREG_OUT"
EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _default_out() -> str:
    return os.environ.get(OUT_ENV, "inflatereg-out")


@click.group()
@click.option("-v", "--verbose", is_flag=True, help="Log replicate failures and fallbacks.")
def main(verbose: bool) -> None:
    """Monte Carlo experiments on inflated minimum-norm interpolation."""
    logging.basicConfig(level=logging.INFO if verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")


@main.command()
@click.option("--config", "config_path", required=True, type=click.Path(dir_okay=False),
              help="YAML scenario configuration.")
@click.option("--seed", type=int, default=None, help="Override the configured seed.")
@click.option("--out", "out_dir", default=None,
              help=f"Output root (default: ${OUT_ENV} or ./inflatereg-out).")
@click.option("--threads", type=int, default=None, help="Worker threads (default: all cores).")
@click.option("--dump-design", is_flag=True, help="Also write replicate 0's design as CSV.")
def run(config_path: str, seed: int | None, out_dir: str | None, threads: int | None,
        dump_design: bool) -> None:
    """Run one scenario and write report.json plus curve CSVs."""
    try:
        cfg = ExperimentConfig.load(config_path)
        if seed is not None:
            cfg.seed = seed
        out = out_dir or cfg.out_dir or _default_out()
        rep = run_scenario(cfg, threads=threads, out_dir=out, dump_design=dump_design)
    except ConfigError as exc:
        click.echo(f"config error: {exc}", err=True)
        sys.exit(EXIT_CONFIG)
    for v in rep.verdicts:
        click.echo(f"[{'PASS' if v.passed else 'FAIL'}] {v.check_id}: {v.measured} "
                   f"(required {v.required})")
    click.echo(f"wrote {Path(out) / (cfg.scenario + '-' + str(cfg.seed))}")
    sys.exit(EXIT_OK if rep.passed else EXIT_FAIL)


@main.command()
@click.option("--tier", type=click.Choice(["fast", "full"]), default="fast", show_default=True)
@click.option("--seed", type=int, default=0, show_default=True)
@click.option("--threads", type=int, default=None)
@click.option("--only", type=int, multiple=True, help="Run only these criterion numbers.")
@click.option("--out", "out_dir", default=None, help="Write acceptance.json under this root.")
def accept(tier: str, seed: int, threads: int | None, only: tuple[int, ...],
           out_dir: str | None) -> None:
    """Run the acceptance criteria and exit non-zero if any fails."""
    summary = run_acceptance_suite(tier, seed, threads, list(only) or None,
                                   progress=lambda r: click.echo(r.line()))
    out = Path(out_dir or _default_out()) / f"acceptance-{tier}-{seed}"
    out.mkdir(parents=True, exist_ok=True)
    (out / "verdicts.json").write_text(summary.verdict_json(), encoding="utf-8")
    (out / "summary.json").write_text(json.dumps(summary.to_dict(), indent=2, sort_keys=True)
                                      + "\n", encoding="utf-8")
    n_pass = sum(r.passed for r in summary.results)
    click.echo(f"{n_pass}/{len(summary.results)} criteria passed; wrote {out}")
    sys.exit(EXIT_OK if summary.passed else EXIT_FAIL)


@main.command("list-scenarios")
def list_scenarios() -> None:
    """Print the scenario kinds a config may name."""
    for name in SCENARIOS:
        click.echo(f"{name:22s} {SCENARIO_HELP[name]}")


if __name__ == "__main__":
    main()
