"""
Terminal progress for ``--verbose`` runs.

Per-epoch training lines go to stdout only when the CLI enabled verbose mode;
the same information is always logged at DEBUG by the training loop.
"""

from acmamba.models.reports import EpochReport


def is_verbose() -> bool:
    try:
        from acmamba.cli import VERBOSE_MODE
    except ImportError:
        return False
    return VERBOSE_MODE


def verbose_print(*args, **kwargs) -> None:
    """print() gated on the CLI's --verbose flag."""
    if is_verbose():
        print(*args, **kwargs)


def format_epoch(report: EpochReport) -> str:
    flag = "calibrated" if report.applied else "summed"
    return (
        f"epoch {report.epoch:4d}  L_ori={report.loss_ori:.6f}  L_mask={report.loss_mask:.6f}  "
        f"theta={report.theta:.3f} ({flag})  masked={report.n_masked}"
    )


def print_epoch(report: EpochReport) -> None:
    verbose_print(format_epoch(report))
