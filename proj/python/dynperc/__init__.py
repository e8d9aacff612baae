"""Random walks on dynamical percolation."""

from ._dynperc import (
    Lattice,
    critical_probability,
    csv_headers,
    evolving_check,
    ever_open_density,
    loglog_fit,
    msd,
    one_arm,
    run_cli,
    subcommands,
    wilson,
)

__all__ = [
    "Lattice",
    "critical_probability",
    "csv_headers",
    "evolving_check",
    "ever_open_density",
    "loglog_fit",
    "msd",
    "one_arm",
    "run_cli",
    "subcommands",
    "wilson",
]
