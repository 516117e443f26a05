"""Time-series samples, efficiency accounting and report export."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, Iterable, List, Mapping, Optional, Sequence, Union

from .model import DistCloudError, Job, JobState, VMInstance


class ExportError(DistCloudError):
    pass


@dataclass(frozen=True)
class Sample:
    time: int
    running_jobs: int
    idle_jobs: int
    per_cloud: Dict[str, int]
    per_user: Dict[str, int]

    @property
    def instances(self) -> int:
        return sum(self.per_cloud.values())


@dataclass(frozen=True)
class JobRecord:
    job_id: int
    owner: str
    cloud: str
    runtime_cpu: int
    io_cost: int
    stagein: int
    wasted: int
    submit_time: int
    first_start: int
    end_time: int

    @property
    def wallclock(self) -> int:
        return self.runtime_cpu + self.io_cost + self.stagein + self.wasted

    @property
    def queue_wait(self) -> int:
        return self.first_start - self.submit_time


def efficiency(job: Union[JobRecord, Job]) -> float:
    """CPU time over wallclock for one completed job.

    Wallclock is the final attempt (cpu + io + stage-in) plus the time lost
    in interrupted attempts.
    """
    if isinstance(job, Job):
        if job.state is not JobState.COMPLETED:
            raise ValueError(f"job {job.job_id} has not completed")
        wall = job.runtime_cpu + job.io_cost + job.stagein + job.wasted
    else:
        wall = job.wallclock
    return job.runtime_cpu / wall


def aggregate_efficiency(jobs: Iterable[Union[JobRecord, Job]]) -> float:
    cpu = wall = 0
    for job in jobs:
        if isinstance(job, Job):
            if job.state is not JobState.COMPLETED:
                continue
            cpu += job.runtime_cpu
            wall += job.runtime_cpu + job.io_cost + job.stagein + job.wasted
        else:
            cpu += job.runtime_cpu
            wall += job.wallclock
    return cpu / wall if wall else 0.0


def percentile(values: Sequence[float], q: float) -> float:
    """Nearest-rank percentile; 0.0 for an empty sequence."""
    if not values:
        return 0.0
    ordered = sorted(values)
    rank = max(1, math.ceil(q / 100 * len(ordered)))
    return float(ordered[rank - 1])


class Recorder:
    def __init__(self, clouds: Sequence[str], users: Sequence[str]):
        self.clouds = list(clouds)
        self.users = list(users)
        self.samples: List[Sample] = []
        self.completed: List[JobRecord] = []
        self.io_faults = 0
        self.orphaned = 0
        self.boots = 0
        self.boot_rejections = 0

    def snapshot(self, now: int, instances: Iterable[VMInstance], idle_jobs: int) -> Sample:
        per_cloud = {c: 0 for c in self.clouds}
        per_user = {u: 0 for u in self.users}
        running = 0
        for vm in instances:
            if not vm.alive:
                continue
            per_cloud[vm.cloud] = per_cloud.get(vm.cloud, 0) + 1
            per_user[vm.owner] = per_user.get(vm.owner, 0) + 1
            running += vm.occupied
        sample = Sample(now, running, idle_jobs, per_cloud, per_user)
        self.samples.append(sample)
        return sample

    def job_completed(self, job: Job, cloud: str) -> None:
        self.completed.append(JobRecord(
            job.job_id, job.owner, cloud, job.runtime_cpu, job.io_cost, job.stagein,
            job.wasted, job.submit_time, job.first_start, job.end_time))


@dataclass
class MetricsReport:
    clouds: List[str]
    users: List[str]
    samples: List[Sample] = field(default_factory=list)
    completed: List[JobRecord] = field(default_factory=list)
    job_states: Dict[str, int] = field(default_factory=dict)
    io_faults: int = 0
    orphaned: int = 0
    boots: int = 0
    boot_rejections: int = 0
    cloud_dump: List[dict] = field(default_factory=list)
    seed: Optional[int] = None
    end_time: int = 0

    @classmethod
    def from_recorder(cls, rec: Recorder, **extra) -> "MetricsReport":
        return cls(rec.clouds, rec.users, list(rec.samples), list(rec.completed),
                   io_faults=rec.io_faults, orphaned=rec.orphaned, boots=rec.boots,
                   boot_rejections=rec.boot_rejections, **extra)

    @property
    def aggregate_efficiency(self) -> float:
        return aggregate_efficiency(self.completed)

    def summary(self) -> dict:
        waits = [r.queue_wait for r in self.completed]
        per_cloud = {c: 0 for c in self.clouds}
        for r in self.completed:
            per_cloud[r.cloud] = per_cloud.get(r.cloud, 0) + 1
        total = len(self.completed)
        return {
            "seed": self.seed,
            "end_time": self.end_time,
            "jobs": dict(self.job_states),
            "completed": total,
            "failed": self.io_faults + self.orphaned,
            "io_faults": self.io_faults,
            "orphaned": self.orphaned,
            "boots": self.boots,
            "boot_rejections": self.boot_rejections,
            "queue_wait": {
                "mean": sum(waits) / len(waits) if waits else 0.0,
                "p95": percentile(waits, 95),
            },
            "aggregate_efficiency": self.aggregate_efficiency,
            "per_cloud_completed": per_cloud,
            "per_cloud_share": {c: (n / total if total else 0.0) for c, n in per_cloud.items()},
            "clouds": self.cloud_dump,
        }

    def csv_header(self) -> List[str]:
        return (["time", "running_jobs", "idle_jobs", "instances"]
                + [f"cloud:{c}" for c in self.clouds] + [f"user:{u}" for u in self.users])

    def csv_rows(self) -> List[List[int]]:
        return [[s.time, s.running_jobs, s.idle_jobs, s.instances]
                + [s.per_cloud.get(c, 0) for c in self.clouds]
                + [s.per_user.get(u, 0) for u in self.users]
                for s in self.samples]


def export(report: MetricsReport, out_dir: Union[str, Path]) -> Dict[str, Path]:
    """Write samples.csv and summary.json into `out_dir`."""
    out = Path(out_dir)
    paths = {"samples": out / "samples.csv", "summary": out / "summary.json"}
    try:
        out.mkdir(parents=True, exist_ok=True)
        with open(paths["samples"], "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(report.csv_header())
            writer.writerows(report.csv_rows())
        with open(paths["summary"], "w") as fh:
            json.dump(report.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise ExportError(f"cannot write report to {out}: {exc}") from exc
    return paths
