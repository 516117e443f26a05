"""Job queue and slot matchmaking.

Idle jobs are matched in FIFO order, keyed by (submit_time, job_id), to the
first free slot of a Running instance owned by the same user and booted from
the job's VM type.
"""

from __future__ import annotations

import bisect
import json
from collections import defaultdict
from typing import Callable, Dict, Iterable, Iterator, List, Optional, Tuple

from .images import ImageRepository, UnknownImage
from .model import (
    DistCloudError, InstanceTable, Job, JobState, ResourceRequest, VMInstance, VMState,
)


class UnknownDependency(DistCloudError):
    pass


class InvalidState(DistCloudError):
    pass


Assignment = Tuple[int, str, int]


class JobQueue:
    """Every submitted job, with a FIFO index over the Idle ones."""

    def __init__(self):
        self.jobs: Dict[int, Job] = {}
        self._idle: List[Tuple[int, int]] = []

    def __len__(self):
        return len(self.jobs)

    def __iter__(self) -> Iterator[Job]:
        return iter(sorted(self.jobs.values(), key=lambda j: j.sort_key))

    def __getitem__(self, job_id: int) -> Job:
        return self.jobs[job_id]

    def __contains__(self, job_id: int) -> bool:
        return job_id in self.jobs

    def add(self, job: Job) -> None:
        if job.job_id in self.jobs:
            raise ValueError(f"job {job.job_id} already queued")
        self.jobs[job.job_id] = job
        if job.state is JobState.IDLE:
            self._mark_idle(job)

    def _mark_idle(self, job: Job) -> None:
        bisect.insort(self._idle, job.sort_key)

    def _unmark_idle(self, job: Job) -> None:
        i = bisect.bisect_left(self._idle, job.sort_key)
        if i < len(self._idle) and self._idle[i] == job.sort_key:
            del self._idle[i]

    def set_state(self, job: Job, new: JobState) -> None:
        if job.state is JobState.IDLE:
            self._unmark_idle(job)
        job.set_state(new)
        if new is JobState.IDLE:
            self._mark_idle(job)

    def idle(self) -> List[Job]:
        return [self.jobs[job_id] for _, job_id in self._idle]

    def count(self, state: JobState) -> int:
        if state is JobState.IDLE:
            return len(self._idle)
        return sum(1 for j in self.jobs.values() if j.state is state)

    def counts(self) -> Dict[str, int]:
        out = {s.value: 0 for s in JobState}
        for j in self.jobs.values():
            out[j.state.value] += 1
        return out

    def to_jsonl(self) -> str:
        return "".join(json.dumps(j.to_record(), sort_keys=True) + "\n" for j in self)


class Matchmaker:
    def __init__(self, images: ImageRepository, instances: InstanceTable,
                 terminate: Optional[Callable[[str, int, str], None]] = None):
        self.images = images
        self.instances = instances
        self.queue = JobQueue()
        self.terminate = terminate or self._mark_terminated
        self._last_id = 0
        self._children: Dict[int, List[int]] = defaultdict(list)
        # wasted seconds per interrupted attempt: (job_id, seconds)
        self.wasted_log: List[Tuple[int, int]] = []

    def _mark_terminated(self, vm_id: str, now: int, reason: str = "") -> None:
        vm = self.instances[vm_id]
        self.instances.transition(vm, VMState.TERMINATED, now, reason)
        self.reschedule_orphans(vm_id, now)

    # -- submission -------------------------------------------------------

    def submit(self, owner: str, vm_type: str, request: ResourceRequest, runtime_cpu: int,
               io_cost: int = 0, depends_on: Iterable[int] = (),
               cloud_constraint: Optional[Iterable[str]] = None, now: int = 0) -> int:
        if self.images.get(vm_type, now) is None:
            raise UnknownImage(vm_type)
        parents = frozenset(depends_on)
        missing = sorted(p for p in parents if p not in self.queue)
        if missing:
            raise UnknownDependency(f"unknown parent jobs {missing}")
        held = any(self.queue[p].state is not JobState.COMPLETED for p in parents)
        self._last_id += 1
        job = Job(
            job_id=self._last_id,
            owner=owner,
            vm_type=vm_type,
            request=request,
            submit_time=now,
            runtime_cpu=runtime_cpu,
            io_cost=io_cost,
            state=JobState.HELD if held else JobState.IDLE,
            depends_on=parents,
            cloud_constraint=None if cloud_constraint is None else frozenset(cloud_constraint),
        )
        self.queue.add(job)
        for p in parents:
            self._children[p].append(job.job_id)
        return job.job_id

    # -- matching ---------------------------------------------------------

    def match_cycle(self, now: int) -> List[Assignment]:
        groups: Dict[Tuple[str, str], List[VMInstance]] = defaultdict(list)
        free: Dict[str, int] = {}
        for vm in self.instances.values():
            if vm.state is VMState.RUNNING and vm.free_slots > 0:
                groups[(vm.owner, vm.image)].append(vm)
                free[vm.vm_id] = vm.free_slots
        if not groups:
            return []

        out: List[Assignment] = []
        for job in self.queue.idle():
            candidates = groups.get((job.owner, job.vm_type))
            if not candidates:
                continue
            for vm in candidates:
                if free[vm.vm_id] == 0 or not job.allows_cloud(vm.cloud):
                    continue
                slot = vm.slot_occupancy.index(None)
                self._start(job, vm, slot, now)
                free[vm.vm_id] -= 1
                out.append((job.job_id, vm.vm_id, slot))
                break
            while candidates and free[candidates[0].vm_id] == 0:
                candidates.pop(0)
        return out

    def _start(self, job: Job, vm: VMInstance, slot: int, now: int) -> None:
        if vm.state is not VMState.RUNNING:
            raise InvalidState(f"cannot start job {job.job_id} on {vm.state.value} {vm.vm_id}")
        vm.slot_occupancy[slot] = job.job_id
        self.queue.set_state(job, JobState.RUNNING)
        job.vm_id = vm.vm_id
        job.slot = slot
        job.start_time = now
        job.attempt += 1
        if job.first_start is None:
            job.first_start = now

    def _vacate(self, job: Job) -> Optional[VMInstance]:
        vm = self.instances.get(job.vm_id) if job.vm_id else None
        if vm is not None and job.slot is not None and vm.slot_occupancy[job.slot] == job.job_id:
            vm.slot_occupancy[job.slot] = None
        job.vm_id = None
        job.slot = None
        return vm

    # -- completion and failure -------------------------------------------

    def complete(self, job_id: int, now: int) -> List[int]:
        """Finish a running job; returns DAG children released by it."""
        job = self.queue[job_id]
        vm = self._vacate(job)
        self.queue.set_state(job, JobState.COMPLETED)
        job.end_time = now
        if vm is not None and vm.state is VMState.RETIRING and vm.occupied == 0:
            self.terminate(vm.vm_id, now, "drained")
        return self.release_dag_children(job_id, now)

    def fail_attempt(self, job_id: int, now: int) -> None:
        """Abort the current attempt of a running job and put it back in the queue."""
        job = self.queue[job_id]
        if job.state is not JobState.RUNNING:
            raise InvalidState(f"job {job_id} is {job.state.value}")
        vm = self._vacate(job)
        self._requeue(job, now)
        if vm is not None and vm.state is VMState.RETIRING and vm.occupied == 0:
            self.terminate(vm.vm_id, now, "drained")

    def _requeue(self, job: Job, now: int) -> None:
        wasted = now - job.start_time
        job.wasted += wasted
        job.failures += 1
        self.wasted_log.append((job.job_id, wasted))
        self.queue.set_state(job, JobState.IDLE)

    def drain(self, vm_id: str, now: int = 0) -> None:
        vm = self.instances.get(vm_id)
        if vm is None or vm.state is not VMState.RUNNING:
            state = "unknown" if vm is None else vm.state.value
            raise InvalidState(f"cannot drain {vm_id} in state {state}")
        self.instances.transition(vm, VMState.RETIRING, now, "drain")
        if vm.occupied == 0:
            self.terminate(vm_id, now, "drained")

    def reschedule_orphans(self, lost_vm: str, now: int) -> List[int]:
        vm = self.instances[lost_vm]
        orphans = []
        for slot, job_id in enumerate(vm.slot_occupancy):
            if job_id is None:
                continue
            vm.slot_occupancy[slot] = None
            job = self.queue[job_id]
            if job.state is JobState.RUNNING and job.vm_id == lost_vm:
                job.vm_id = None
                job.slot = None
                self._requeue(job, now)
                orphans.append(job_id)
        return sorted(orphans)

    def release_dag_children(self, completed: int, now: int) -> List[int]:
        released = []
        for child in self._children.get(completed, ()):
            job = self.queue[child]
            if job.state is not JobState.HELD:
                continue
            if all(self.queue[p].state is JobState.COMPLETED for p in job.depends_on):
                job.submit_time = now
                self.queue.set_state(job, JobState.IDLE)
                released.append(job.job_id)
        return sorted(released)
