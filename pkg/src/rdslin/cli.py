"""Command-line interface.

Exit codes: 0 all checks pass, 1 some check failed, 2 configuration error,
3 hypothesis violation (the violated inequality is named in the error
output), 4 numerical divergence.
"""

from __future__ import annotations

import json
import sys

import click

from .errors import RdslinError, exit_code_for
from .harness import Report, Scenario, run_scenario, verify_all


def _emit(report: Report, out, fmt) -> None:
    for r in report.records:
        status = "PASS" if r["pass"] else "FAIL"
        click.echo(f"{status}  {r['name']}  value={r['value']:.6g} "
                   f"bound={r['bound']:.6g}  [{r['anchor']}]")
    click.echo(f"overall: {'PASS' if report.passed else 'FAIL'} "
               f"({len(report.records)} checks, "
               f"{report.runtime_seconds:.1f}s)")
    if out is not None:
        target = report.save(out, fmt=fmt)
        click.echo(f"report written to {target}")


def _fail(exc: BaseException) -> None:
    payload = {"error": str(exc), "type": type(exc).__name__}
    inequality = getattr(exc, "inequality", None)
    if inequality:
        payload["inequality"] = inequality
    stage = getattr(exc, "stage", None)
    if stage:
        payload["stage"] = stage
    click.echo(json.dumps(payload), err=True)
    sys.exit(exit_code_for(exc))


def _run_with_artifacts(scenario, seed, out, fmt, artifacts=None):
    try:
        scn = Scenario.load(scenario, seed_override=seed)
        if artifacts is not None:
            scn.artifacts = list(artifacts)
        report = run_scenario(scn, out_dir=out, fmt=fmt)
    except RdslinError as exc:
        _fail(exc)
        return
    _emit(report, out, fmt)
    sys.exit(0 if report.passed else 1)


def scenario_options(fn):
    fn = click.option("--scenario", required=True,
                      type=click.Path(), help="scenario file (TOML)")(fn)
    fn = click.option("--seed", type=int, default=None,
                      help="override the scenario seed")(fn)
    fn = click.option("--out", type=click.Path(file_okay=False),
                      default=None, help="directory for report artifacts")(fn)
    fn = click.option("--format", "fmt",
                      type=click.Choice(["json", "csv"]),
                      default="json", help="report format")(fn)
    return fn


@click.group()
@click.version_option()
def main():
    """Construct and certify linearizing conjugacies for nonautonomous,
    random and stochastic systems."""


@main.command(name="run")
@scenario_options
def run_cmd(scenario, seed, out, fmt):
    """Run every artifact requested by the scenario."""
    _run_with_artifacts(scenario, seed, out, fmt, artifacts=None)


@main.command()
@scenario_options
def spectrum(scenario, seed, out, fmt):
    """Lyapunov spectrum and decay constants."""
    _run_with_artifacts(scenario, seed, out, fmt, artifacts=["spectrum"])


@main.command()
@scenario_options
def conjugacy(scenario, seed, out, fmt):
    """Conjugacy construction and certificate."""
    _run_with_artifacts(scenario, seed, out, fmt, artifacts=["certificate"])


@main.command()
@scenario_options
def local(scenario, seed, out, fmt):
    """Cutoff-based local linearization report."""
    _run_with_artifacts(scenario, seed, out, fmt, artifacts=["local"])


@main.command(name="sde-pipeline")
@scenario_options
def sde_pipeline(scenario, seed, out, fmt):
    """Stochastic-to-random linearization pipeline."""
    _run_with_artifacts(scenario, seed, out, fmt, artifacts=["pipeline"])


@main.command()
@click.option("--suite", type=click.Path(file_okay=False), default=None,
              help="scenario directory (bundled suite when omitted)")
@click.option("--seed", type=int, default=None)
@click.option("--out", type=click.Path(file_okay=False), default=None)
@click.option("--format", "fmt", type=click.Choice(["json", "csv"]),
              default="json")
def verify(suite, seed, out, fmt):
    """Run the whole scenario suite and aggregate."""
    try:
        report = verify_all(suite_dir=suite, out_dir=out, fmt=fmt,
                            seed_override=seed)
    except RdslinError as exc:
        _fail(exc)
        return
    _emit(report, out, fmt)
    sys.exit(0 if report.passed else 1)


if __name__ == "__main__":
    main()
