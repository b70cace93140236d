"""Execute scheduled scenarios on worker lanes and gather their rows.

Lanes run concurrently but each pod is self-contained, so the only ordering
decision that matters is the final one: rows are emitted grouped by scenario
id in sorted order, making the results file a pure function of (plan, seed,
mode) no matter how the lanes interleaved.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

from . import benchpod


@dataclass
class RunOutcome:
    records: list = field(default_factory=list)
    failures: list = field(default_factory=list)  # (sid, reason)

    def to_summary(self) -> dict:
        return {
            "rows": len(self.records),
            "scenarios_failed": [
                {"sid": sid, "reason": reason} for sid, reason in self.failures
            ],
        }


def run_one(scenario, repo, run_seed: int, mode: str):
    pod = benchpod.provision(scenario, repo, run_seed, mode)
    return pod.run()


def run_scenarios(scenarios, repo, run_seed: int, mode: str = "simulated",
                  jobs: int = 2) -> RunOutcome:
    """Run every scenario, in parallel lanes, with deterministic output order."""
    outcome = RunOutcome()
    by_sid: dict = {}

    def work(scenario):
        return scenario.sid, run_one(scenario, repo, run_seed, mode)

    ordered = sorted(scenarios, key=lambda s: s.sid)
    if jobs <= 1:
        for s in ordered:
            try:
                by_sid[s.sid] = run_one(s, repo, run_seed, mode)
            except benchpod.PodError as e:
                outcome.failures.append((s.sid, str(e)))
    else:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            futures = {pool.submit(work, s): s for s in ordered}
            for future, s in futures.items():
                try:
                    sid, rows = future.result()
                    by_sid[sid] = rows
                except benchpod.PodError as e:
                    outcome.failures.append((s.sid, str(e)))
    outcome.failures.sort()
    for sid in sorted(by_sid):
        outcome.records.extend(by_sid[sid])
    return outcome
