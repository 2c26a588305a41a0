"""Controller module for the host command line.

This module defines the ``host`` command group: running scenarios, checking
a contract offline against a capacity, verifying a trace file and listing
the run history.
"""

from pathlib import Path

import click
from flask import Blueprint, current_app

from ..errors import ScenarioError, SchemaError
from ..services.host_service import EXIT_OK, EXIT_REJECTED, EXIT_SCHEMA, HostService
from ..services.verify_service import verify_trace
from ..utils.codec import decode_capacity, decode_contract, dump_json, read_json, write_json
from ..utils.trace import read_trace, write_trace

host_bp = Blueprint('host', __name__, cli_group='host')


def _fail(error) -> int:
    current_app.logger.error(f"{type(error).__name__}: {error}")
    click.echo(f"error: {error}", err=True)
    return EXIT_SCHEMA


@host_bp.cli.command('run')
@click.argument('scenario', type=click.Path(dir_okay=False, path_type=Path))
@click.option('--trace', 'trace_path', type=click.Path(dir_okay=False, path_type=Path),
              help='Where to write the event trace.')
@click.option('--report', 'report_path', type=click.Path(dir_okay=False, path_type=Path),
              help='Where to write the JSON report (default: stdout).')
@click.option('--save', is_flag=True, help='Write trace and report under JAMUS_REPORT_DIR.')
@click.option('--seed', type=int, default=None, help='Seed of a random step interleaving.')
@click.option('--record', is_flag=True, help='Store the run in the history database.')
def run(scenario, trace_path, report_path, save, seed, record):
    """Run a scenario and emit its trace and report.

    Exits 0 on a clean run, 3 when a sanction was applied and 2 when the
    scenario cannot be loaded.
    """
    try:
        loaded = HostService.load(scenario)
    except (SchemaError, ScenarioError) as e:
        raise SystemExit(_fail(e))

    if save:
        out_dir = Path(current_app.config['JAMUS_REPORT_DIR'])
        trace_path = trace_path or out_dir / f"{loaded.name}.trace"
        report_path = report_path or out_dir / f"{loaded.name}.report.json"

    report = HostService.run(loaded, seed=seed, default_home=current_app.config['JAMUS_HOME'])
    if trace_path is not None:
        write_trace(report.events, trace_path)
        report.trace_path = str(trace_path)
    if report_path is not None:
        write_json(report.to_json(), report_path)
    else:
        click.echo(dump_json(report.to_json()), nl=False)

    if record:
        entry = HostService.record(report, scenario)
        current_app.logger.info(f"Recorded run {entry.id} of {loaded.name}")
    raise SystemExit(report.exit_status)


@host_bp.cli.command('check')
@click.argument('contract', type=click.Path(dir_okay=False, path_type=Path))
@click.argument('capacity', type=click.Path(dir_okay=False, path_type=Path))
def check(contract, capacity):
    """Evaluate a contract against a capacity without reserving anything."""
    try:
        report = HostService.check(decode_contract(read_json(contract)), decode_capacity(read_json(capacity)))
    except SchemaError as e:
        raise SystemExit(_fail(e))
    click.echo(dump_json(HostService.check_json(report)), nl=False)
    raise SystemExit(EXIT_OK if report.accepted else EXIT_REJECTED)


@host_bp.cli.command('verify')
@click.argument('trace', type=click.Path(dir_okay=False, path_type=Path))
@click.argument('scenario', type=click.Path(dir_okay=False, path_type=Path))
def verify(trace, scenario):
    """Replay a trace against its scenario and list every discrepancy."""
    try:
        lines = read_trace(trace)
        loaded = HostService.load(scenario)
    except (SchemaError, ScenarioError) as e:
        raise SystemExit(_fail(e))

    discrepancies = verify_trace(lines, loaded)
    if not discrepancies:
        click.echo('ok')
        raise SystemExit(EXIT_OK)
    for discrepancy in discrepancies:
        click.echo(str(discrepancy))
    raise SystemExit(EXIT_REJECTED)


@host_bp.cli.command('history')
@click.option('--limit', type=int, default=20, show_default=True, help='Number of runs to list.')
def history(limit):
    """List stored runs, newest first."""
    records = HostService.history(limit)
    if not records:
        click.echo('no recorded runs')
        return
    for entry in records:
        click.echo(entry.summary())
