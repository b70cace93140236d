"""sailbench: a declarative benchmarking harness.

Benchmark modules (problems, models, metrics, rankings, software, hardware,
type converters) are written in SAIL, a small declarative language.  The
harness scans module files into a repository, discovers feasible scenario
tuples by joining compatible modules, prunes and schedules the survivors,
executes each scenario in an isolated benchpod, and renders leaderboards
and work-precision curves from the persisted measurements.
"""

from __future__ import annotations

__version__ = "0.1.0"
