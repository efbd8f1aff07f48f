"""Exit codes and error reporting for the CLI."""

import json
from enum import IntEnum

import click

from services.exceptions import (
    CertificateViolation,
    MonoMFGError,
    SolverFailure,
    ValidationError,
)
from services.io import to_jsonable


class ExitCode(IntEnum):
    OK = 0
    VALIDATION = 2
    SOLVER_FAILURE = 3
    CERTIFICATE_VIOLATION = 4


def exit_code_for(error: BaseException) -> ExitCode:
    """Map an exception to the CLI exit code."""
    match error:
        case ValidationError() | click.UsageError() | ValueError():
            return ExitCode.VALIDATION
        case SolverFailure():
            return ExitCode.SOLVER_FAILURE
        case CertificateViolation():
            return ExitCode.CERTIFICATE_VIOLATION
        case _:
            return ExitCode.SOLVER_FAILURE


def report_error(error: MonoMFGError | ValueError) -> ExitCode:
    """Echo an error to stderr the way each kind needs and return its code."""
    code = exit_code_for(error)
    match error:
        case ValidationError():
            click.echo("❌ Invalid input:", err=True)
            for message in error.messages:
                click.echo(f"   - {message}", err=True)
        case SolverFailure():
            click.echo(f"❌ Solver failure: {error}", err=True)
            if error.residual is not None:
                click.echo(f"   best residual: {error.residual:.3e}", err=True)
        case CertificateViolation():
            click.echo(f"❌ Certificate violation: {error}", err=True)
            witness = json.dumps(to_jsonable(error.witness), sort_keys=True)
            click.echo(f"   witness: {witness}", err=True)
        case _:
            click.echo(f"❌ Error: {error}", err=True)
    return code
