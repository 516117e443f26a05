"""Deterministic discrete-event engine.

Events are ordered by (time, seq). One `random.Random` seeded from the
scenario drives workload generation and I/O fault draws, always consumed in
the same order, so a (scenario, seed) pair fixes the event log byte for byte.
"""

from __future__ import annotations

import dataclasses
import hashlib
import heapq
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Dict, List, Optional, Union

from .connectors import BootError, BootRequest, Connector, make_connector
from .images import ImageRepository
from .matchmaker import Matchmaker, UnknownDependency
from .metrics import MetricsReport, Recorder, export
from .model import (
    AuthMode, Credential, DistCloudError, InstanceTable, JobState, VMInstance, VMState,
)
from .scenario import InvalidScenario, Scenario
from .scheduler import CloudScheduler
from .swcache import SoftwareCache

EVENT_KINDS = ("JobArrival", "SchedulerTick", "MatchTick", "VMBootComplete", "JobComplete",
               "VMFail", "IOFault", "CloudMaintenance", "CredentialRenewal", "ScenarioEnd")
TICKS = ("SchedulerTick", "MatchTick")


class TimeInPast(DistCloudError):
    pass


@dataclass(order=True)
class Event:
    time: int
    seq: int
    kind: str = field(compare=False)
    payload: Dict[str, Any] = field(compare=False, default_factory=dict)


def _fmt(value) -> str:
    if isinstance(value, bool):
        return "1" if value else "0"
    if isinstance(value, (list, tuple, set, frozenset)):
        return ",".join(str(v) for v in value) or "-"
    if value is None:
        return "-"
    if hasattr(value, "value"):
        value = value.value
    return str(value).replace(" ", "_")


class EventLog:
    """Append-only record: one ``time seq kind k=v ...`` line per entry."""

    def __init__(self):
        self.lines: List[str] = []

    def append(self, time: int, kind: str, **fields) -> None:
        parts = [str(time), str(len(self.lines)), kind]
        parts.extend(f"{k}={_fmt(v)}" for k, v in fields.items())
        self.lines.append(" ".join(parts))

    def text(self) -> str:
        return "".join(line + "\n" for line in self.lines)

    def digest(self) -> str:
        return hashlib.sha256(self.text().encode()).hexdigest()

    def write(self, path: Union[str, Path]) -> None:
        Path(path).write_text(self.text())


@dataclass
class RunResult:
    log: EventLog
    report: MetricsReport
    simulator: "Simulator"

    def write(self, out_dir: Union[str, Path]) -> None:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        self.log.write(out / "events.log")
        export(self.report, out)


class Simulator:
    def __init__(self, scenario: Scenario, seed: Optional[int] = None):
        if seed is not None:
            scenario = scenario.with_seed(seed)
        self.scenario = scenario
        self.config = scenario.scheduler
        self.rng = random.Random(scenario.seed)
        self.now = 0
        self.log = EventLog()
        self.observers: List[Callable[["Simulator", Event], None]] = []

        self.images = ImageRepository()
        for spec in scenario.images:
            self.images.add(spec.image, spec.available_at)
        self.instances = InstanceTable()
        self.instances.listeners.append(self._log_vm)
        self.connectors: Dict[str, Connector] = {}
        for site in scenario.clouds:
            conn = make_connector(dataclasses.replace(site), self.images, self.instances)
            conn.on_terminate.append(self._on_terminate)
            self.connectors[site.name] = conn
        self.matchmaker = Matchmaker(self.images, self.instances, terminate=self._terminate)
        self.scheduler = CloudScheduler(self.config)
        self.swcache = SoftwareCache(scenario.stagein)
        self.credentials: Dict[str, Credential] = {
            u.name: Credential(u.name, u.proxy_issued_at, u.proxy_lifetime, AuthMode.PROXY)
            for u in scenario.users
        }
        self.recorder = Recorder([c.name for c in scenario.clouds], [u.name for u in scenario.users])
        # drained vm_id -> boot to issue once its capacity is released
        self.deferred: Dict[str, BootRequest] = {}
        self.cycle = 0
        self.done = False
        self._heap: List[Event] = []
        self._seq = 0
        self._pending = 0
        self._next_sample = 0

        self.jobs = scenario.expand_workload(self.rng)
        for job_id, spec in enumerate(self.jobs, start=1):
            if any(not 1 <= d < job_id for d in spec.depends_on):
                raise InvalidScenario([f"workload: job {job_id} depends on a job submitted after it"])
        self._bootstrap()

    # -- event queue --------------------------------------------------------

    def _push(self, time: int, kind: str, **payload) -> Event:
        self._seq += 1
        ev = Event(time, self._seq, kind, payload)
        heapq.heappush(self._heap, ev)
        if kind not in TICKS:
            self._pending += 1
        return ev

    def inject(self, kind: str, time: int, **payload) -> Event:
        if kind not in EVENT_KINDS:
            raise ValueError(f"unknown event kind {kind!r}")
        if time < self.now:
            raise TimeInPast(f"{kind} at {time} is before the clock ({self.now})")
        return self._push(time, kind, **payload)

    @property
    def connectors_state(self):
        return {name: c.state for name, c in self.connectors.items()}

    # -- main loop ----------------------------------------------------------

    def _bootstrap(self) -> None:
        s = self.scenario
        self.log.append(0, "ScenarioStart", seed=s.seed, horizon=s.horizon, jobs=len(self.jobs),
                        clouds=[c.name for c in s.clouds])
        for spec in self.jobs:
            self._push(spec.arrival, "JobArrival", spec=spec)
        for f in s.faults:
            self._push(f.time, f.kind, **dict(f.params))
        self._push(0, "SchedulerTick")
        self._push(0, "MatchTick")
        self._push(s.horizon, "ScenarioEnd")

    def run(self) -> RunResult:
        handlers = {
            "JobArrival": self._on_job_arrival,
            "SchedulerTick": self._on_scheduler_tick,
            "MatchTick": self._on_match_tick,
            "VMBootComplete": self._on_boot_complete,
            "JobComplete": self._on_job_complete,
            "VMFail": self._on_vm_fail,
            "IOFault": self._on_io_fault,
            "CloudMaintenance": self._on_maintenance,
            "CredentialRenewal": self._on_renewal,
            "ScenarioEnd": self._on_end,
        }
        while self._heap and not self.done:
            ev = heapq.heappop(self._heap)
            if ev.kind not in TICKS:
                self._pending -= 1
            if ev.time > self.scenario.horizon:
                continue
            self._sample_before(ev.time)
            self.now = ev.time
            handlers[ev.kind](ev)
            for observer in self.observers:
                observer(self, ev)
        self._sample_through(self.scenario.horizon)
        return RunResult(self.log, self.report(), self)

    def report(self) -> MetricsReport:
        return MetricsReport.from_recorder(
            self.recorder,
            job_states=self.matchmaker.queue.counts(),
            cloud_dump=[c.state.dump() for c in self.connectors.values()],
            seed=self.scenario.seed,
            end_time=self.now,
        )

    def _sample_before(self, time: int) -> None:
        period = self.scenario.sample_period
        while self._next_sample < time and self._next_sample <= self.scenario.horizon:
            self._take_sample(self._next_sample)
            self._next_sample += period

    def _sample_through(self, time: int) -> None:
        # nothing changes after the last event, so the remaining samples are exact
        while self._next_sample <= time:
            self._take_sample(self._next_sample)
            self._next_sample += self.scenario.sample_period

    def _take_sample(self, t: int) -> None:
        self.recorder.snapshot(t, self.instances.values(), self.matchmaker.queue.count(JobState.IDLE))

    def quiescent(self) -> bool:
        if self._pending > 1:  # the ScenarioEnd event is always pending
            return False
        if any(vm.alive for vm in self.instances.values()):
            return False
        q = self.matchmaker.queue
        return all(j.state is JobState.COMPLETED for j in q.jobs.values())

    # -- logging hooks ------------------------------------------------------

    def _log_vm(self, vm: VMInstance, old: Optional[VMState], new: VMState, now: int, reason: str) -> None:
        if old is None:
            self.log.append(now, "VMRequest", vm=vm.vm_id, cloud=vm.cloud, owner=vm.owner,
                            image=vm.image, hypervisor=vm.hypervisor, slots=vm.slots,
                            ready_at=vm.ready_at, lifetime=vm.lifetime_limit,
                            cred=vm.credential.kind, expiry=vm.credential.expiry
                            if vm.credential.enforced else None)
            return
        self.log.append(now, "VMState", vm=vm.vm_id, cloud=vm.cloud, owner=vm.owner,
                        **{"from": old, "to": new}, reason=reason or None)

    # -- VM plumbing --------------------------------------------------------

    def _terminate(self, vm_id: str, now: int, reason: str = "") -> None:
        vm = self.instances[vm_id]
        self.connectors[vm.cloud].terminate(vm_id, now, reason)

    def _on_terminate(self, vm: VMInstance, now: int) -> None:
        orphans = self.matchmaker.reschedule_orphans(vm.vm_id, now)
        for job_id in orphans:
            self.recorder.orphaned += 1
            self.log.append(now, "JobRequeue", job=job_id, vm=vm.vm_id, cause="vm-lost")
        pending = self.deferred.pop(vm.vm_id, None)
        if pending is not None:
            self._boot(pending, now, origin="rebalance")

    def _boot(self, req: BootRequest, now: int, origin: str = "cycle") -> Optional[str]:
        self.log.append(now, "BootRequest", owner=req.owner, image=req.image, cloud=req.target_cloud,
                        cores=req.request.cores, whole_node=req.whole_node, origin=origin,
                        cycle=self.cycle)
        image = self.images.get(req.image, now)
        conn = self.connectors[req.target_cloud]
        try:
            if image is None:
                raise BootError(f"image {req.image} unavailable")
            vm_id = conn.boot(req, image, self.credentials.get(req.owner), now)
        except (BootError, DistCloudError) as exc:
            self.recorder.boot_rejections += 1
            self.log.append(now, "BootRejected", owner=req.owner, cloud=req.target_cloud,
                            error=type(exc).__name__)
            return None
        self.recorder.boots += 1
        vm = self.instances[vm_id]
        self._push(vm.ready_at, "VMBootComplete", vm_id=vm_id)
        return vm_id

    def _kill(self, vm_id: str, reason: str) -> None:
        vm = self.instances[vm_id]
        if vm.alive:
            self._terminate(vm_id, self.now, reason)

    def _drain(self, vm_id: str, reason: str) -> None:
        self.log.append(self.now, "Drain", vm=vm_id, reason=reason)
        self.matchmaker.drain(vm_id, self.now)

    # -- handlers -----------------------------------------------------------

    def _on_job_arrival(self, ev: Event) -> None:
        spec = ev.payload["spec"]
        try:
            job_id = self.matchmaker.submit(spec.owner, spec.vm_type, spec.request, spec.runtime_cpu,
                                            spec.io_cost, spec.depends_on, spec.cloud_constraint,
                                            now=self.now)
        except UnknownDependency as exc:
            raise InvalidScenario([f"workload: {exc}"]) from exc
        job = self.matchmaker.queue[job_id]
        self.log.append(self.now, "JobSubmit", job=job_id, owner=job.owner, vm_type=job.vm_type,
                        cpu=job.runtime_cpu, io=job.io_cost, state=job.state,
                        parents=sorted(job.depends_on), clouds=None if job.cloud_constraint is None
                        else sorted(job.cloud_constraint))

    def _on_scheduler_tick(self, ev: Event) -> None:
        self.cycle += 1
        now = self.now
        self.log.append(now, "SchedulerTick", cycle=self.cycle)

        for action in self.scheduler.lifecycle_sweep(list(self.instances.values()), now):
            if action.action == "kill":
                self._kill(action.vm_id, action.reason)
            elif self.instances[action.vm_id].state is VMState.RUNNING:
                self._drain(action.vm_id, action.reason)

        self._draw_io_faults()

        for vm_id in self.scheduler.idle_instances(list(self.instances.values()),
                                                   self.matchmaker.queue.idle()):
            self._drain(vm_id, "idle")

        decision = self.scheduler.scheduling_cycle(
            self.matchmaker.queue.idle(), self.connectors_state,
            list(self.instances.values()), now, self.images, self.credentials,
            list(self.deferred.values()))
        for req in decision.boots:
            self._boot(req, now)
        if decision.rebalance is not None:
            victim, req = decision.rebalance
            self.log.append(now, "Rebalance", retire=victim, owner=self.instances[victim].owner,
                            beneficiary=req.owner, cloud=req.target_cloud, cycle=self.cycle)
            self.deferred[victim] = req
            self._drain(victim, "rebalance")

        nxt = now + self.config.cycle_period
        if self.scenario.stop_on_quiescence and self.quiescent():
            self._on_end(Event(now, 0, "ScenarioEnd"))
        elif nxt <= self.scenario.horizon:
            self._push(nxt, "SchedulerTick")

    def _draw_io_faults(self) -> None:
        rate = self.scenario.io_fault_rate_per_hour
        if rate <= 0:
            return
        p = 1.0 - (1.0 - rate) ** (self.config.cycle_period / 3600)
        for name in sorted(self.connectors):
            if not self.connectors[name].state.overcommitted:
                continue
            for vm in self.instances.values():
                if vm.cloud != name or vm.state not in (VMState.RUNNING, VMState.RETIRING):
                    continue
                for job_id in vm.slot_occupancy:
                    if job_id is None:
                        continue
                    if self.rng.random() < p:
                        job = self.matchmaker.queue[job_id]
                        self._push(self.now, "IOFault", job_id=job_id, attempt=job.attempt, cloud=name)

    def _on_match_tick(self, ev: Event) -> None:
        now = self.now
        self.log.append(now, "MatchTick")
        for job_id, vm_id, slot in self.matchmaker.match_cycle(now):
            job = self.matchmaker.queue[job_id]
            job.stagein = self.swcache.stagein_penalty(vm_id, job.vm_type)
            done = now + job.runtime_cpu + job.io_cost + job.stagein
            self.log.append(now, "JobStart", job=job_id, vm=vm_id, slot=slot, attempt=job.attempt,
                            stagein=job.stagein, until=done)
            self._push(done, "JobComplete", job_id=job_id, attempt=job.attempt)
        nxt = now + self.config.match_period
        if nxt <= self.scenario.horizon and not self.done:
            self._push(nxt, "MatchTick")

    def _on_boot_complete(self, ev: Event) -> None:
        vm_id = ev.payload["vm_id"]
        vm = self.instances[vm_id]
        self.connectors[vm.cloud].boot_complete(vm_id, self.now)

    def _on_job_complete(self, ev: Event) -> None:
        job = self.matchmaker.queue[ev.payload["job_id"]]
        if job.state is not JobState.RUNNING or job.attempt != ev.payload["attempt"]:
            return  # attempt was interrupted
        cloud = self.instances[job.vm_id].cloud
        self.log.append(self.now, "JobComplete", job=job.job_id, vm=job.vm_id, attempt=job.attempt)
        released = self.matchmaker.complete(job.job_id, self.now)
        self.recorder.job_completed(job, cloud)
        for child in released:
            self.log.append(self.now, "JobRelease", job=child, parent=job.job_id)

    def _on_vm_fail(self, ev: Event) -> None:
        vm_id = ev.payload["vm_id"]
        action = ev.payload.get("action", "error")
        vm = self.instances.get(vm_id)
        if vm is None or not vm.alive or vm.state is VMState.ERROR:
            self.log.append(self.now, "VMFail", vm=vm_id, action=action, ignored=True)
            return
        self.log.append(self.now, "VMFail", vm=vm_id, action=action)
        if action == "stop":
            self._terminate(vm_id, self.now, "admin-stop")
        elif vm.state in (VMState.BOOTING, VMState.RUNNING):
            self.connectors[vm.cloud].fail(vm_id, self.now)
        else:
            self._terminate(vm_id, self.now, "cloud-error")

    def _on_io_fault(self, ev: Event) -> None:
        job = self.matchmaker.queue[ev.payload["job_id"]]
        if job.state is not JobState.RUNNING or job.attempt != ev.payload["attempt"]:
            return
        self.recorder.io_faults += 1
        self.log.append(self.now, "IOFault", job=job.job_id, vm=job.vm_id, cloud=ev.payload["cloud"])
        self.matchmaker.fail_attempt(job.job_id, self.now)
        self.log.append(self.now, "JobRequeue", job=job.job_id, cause="io-fault")

    def _on_maintenance(self, ev: Event) -> None:
        name = ev.payload["cloud"]
        on = bool(ev.payload.get("on", True))
        self.connectors[name].set_maintenance(on)
        self.log.append(self.now, "CloudMaintenance", cloud=name, on=on)
        if on and ev.payload.get("kill", False):
            for vm_id in sorted(self.connectors[name].state.instances,
                                key=lambda v: self.instances[v].seq):
                self._kill(vm_id, "maintenance")

    def _on_renewal(self, ev: Event) -> None:
        user = ev.payload["user"]
        old = self.credentials[user]
        lifetime = ev.payload.get("lifetime", old.lifetime)
        cred = Credential(user, self.now, lifetime, AuthMode.PROXY)
        self.credentials[user] = cred
        for vm in self.instances.values():
            if vm.owner == user and vm.alive and vm.credential.kind is AuthMode.PROXY:
                vm.credential = cred
        self.log.append(self.now, "CredentialRenewal", user=user, expiry=cred.expiry)

    def _on_end(self, ev: Event) -> None:
        if self.done:
            return
        self.log.append(self.now, "ScenarioEnd", cycles=self.cycle)
        self.done = True


def run(scenario: Scenario, seed: Optional[int] = None) -> RunResult:
    return Simulator(scenario, seed).run()
