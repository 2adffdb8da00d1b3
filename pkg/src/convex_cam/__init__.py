# flake8: noqa
"""
# convex-cam

Fuel-optimal multi-impulse collision avoidance maneuvers by sequential convex programming.
"""
from convex_cam import (
    batch,
    cli,
    conjunction,
    dynamics,
    events,
    exceptions,
    logging,
    reports,
    schema,
    scvx,
    settings,
    socp,
    studies,
    synthetic,
    utils,
)

__all__ = [
    "batch",
    "cli",
    "conjunction",
    "dynamics",
    "events",
    "exceptions",
    "logging",
    "reports",
    "schema",
    "scvx",
    "settings",
    "socp",
    "studies",
    "synthetic",
    "utils",
]


def main() -> None:
    cli.app()


if __name__ == "__main__":
    main()
