"""VM provisioning decisions: when and where to boot, retire and kill.

Every function here reads a snapshot and returns decisions; the simulator
applies them. Nothing in this module mutates its inputs.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from typing import Dict, Iterable, List, Mapping, NamedTuple, Optional, Sequence, Tuple

from .connectors import BootRequest, CloudState
from .images import ImageRepository
from .model import (
    NIMBUS_VM_LIFETIME, PROXY_LIFETIME, CloudFamily, Credential, Job, JobState,
    VMImage, VMInstance, VMState, is_bootable,
)

PARTITION_OFF = "off"
PARTITION_SPLIT = "separate-single-core-and-whole-node"

# states that hold (or will hold) slots for their owner
_PROVISIONED = (VMState.REQUESTED, VMState.BOOTING, VMState.RUNNING)


@dataclass(frozen=True)
class SchedulerConfig:
    cycle_period: int = 60
    proxy_expiry_margin: int = 900
    lifetime_margin: int = 3600
    partition_policy: str = PARTITION_OFF
    whole_node_fraction: float = 0.5
    rebalance_enabled: bool = True
    retire_idle: bool = True
    match_period: int = 10

    def __post_init__(self):
        if self.cycle_period < 1 or self.match_period < 1:
            raise ValueError("cycle_period and match_period must be positive")
        if not 0 <= self.proxy_expiry_margin < PROXY_LIFETIME:
            raise ValueError("proxy_expiry_margin must be below the proxy lifetime")
        if not 0 <= self.lifetime_margin < NIMBUS_VM_LIFETIME:
            raise ValueError("lifetime_margin must be below the VM lifetime")
        if self.proxy_expiry_margin < self.cycle_period:
            # otherwise a proxy can lapse between two sweeps
            raise ValueError("proxy_expiry_margin must be at least one cycle_period")
        if self.partition_policy not in (PARTITION_OFF, PARTITION_SPLIT):
            raise ValueError(f"unknown partition_policy {self.partition_policy!r}")
        if not 0.0 <= self.whole_node_fraction <= 1.0:
            raise ValueError("whole_node_fraction must lie in [0, 1]")


class SweepAction(NamedTuple):
    vm_id: str
    action: str  # "kill" | "drain"
    reason: str


@dataclass
class CycleResult:
    boots: List[BootRequest] = field(default_factory=list)
    rebalance: Optional[Tuple[str, BootRequest]] = None
    starved: List[str] = field(default_factory=list)


@dataclass
class _Free:
    """Mutable per-cloud free capacity, local to one decision pass."""
    cores: int
    memory_mb: int
    scratch_gb: int
    pools: Dict[bool, int]


def _scratch_for(state: CloudState, job: Job) -> int:
    return job.request.blank_space_gb if state.site.family is CloudFamily.NIMBUS else 0


class CloudScheduler:
    def __init__(self, config: SchedulerConfig = SchedulerConfig()):
        self.config = config

    # -- capacity ---------------------------------------------------------

    def free_capacity(self, clouds: Mapping[str, CloudState],
                      instances: Iterable[VMInstance]) -> Dict[str, _Free]:
        split = self.config.partition_policy == PARTITION_SPLIT
        used = defaultdict(lambda: {True: 0, False: 0})
        if split:
            for vm in instances:
                if vm.alive:
                    used[vm.cloud][vm.slots > 1] += vm.slots
        out = {}
        for name, st in clouds.items():
            pools = {}
            if split:
                whole = int(st.site.total_cores * self.config.whole_node_fraction)
                pools[True] = whole - used[name][True]
                pools[False] = st.site.total_cores - whole - used[name][False]
            out[name] = _Free(st.free_cores, st.free_memory_mb, st.free_scratch_gb, pools)
        return out

    def _cores_available(self, free: _Free, job: Job) -> int:
        if self.config.partition_policy == PARTITION_SPLIT:
            return min(free.cores, free.pools[job.request.whole_node])
        return free.cores

    def _eligible(self, job: Job, state: CloudState, image: VMImage,
                  cred: Optional[Credential], now: int) -> bool:
        site = state.site
        if not site.active or not job.allows_cloud(site.name):
            return False
        if not is_bootable(job, site, image, cred, now):
            return False
        if site.family is CloudFamily.NIMBUS and cred.expiry - now <= self.config.proxy_expiry_margin:
            # would be killed by the next sweep
            return False
        return True

    def _fits(self, job: Job, state: CloudState, free: _Free) -> bool:
        if self._cores_available(free, job) < job.request.cores:
            return False
        if free.memory_mb < job.request.memory_mb:
            return False
        if state.site.scratch_safeguard and free.scratch_gb < _scratch_for(state, job):
            return False
        return True

    def select_cloud(self, job: Job, clouds: Mapping[str, CloudState], image: VMImage,
                     cred: Optional[Credential], now: int = 0,
                     free: Optional[Mapping[str, _Free]] = None) -> Optional[str]:
        """Best cloud for `job`, or None when no cloud can take it."""
        if free is None:
            free = self.free_capacity(clouds, ())
        best = None
        for name, state in clouds.items():
            if not self._eligible(job, state, image, cred, now):
                continue
            if not self._fits(job, state, free[name]):
                continue
            key = (-state.site.priority, -self._cores_available(free[name], job), name)
            if best is None or key < best[0]:
                best = (key, name)
        return None if best is None else best[1]

    # -- the scheduling cycle -----------------------------------------------

    def scheduling_cycle(self, jobs: Iterable[Job], clouds: Mapping[str, CloudState],
                         instances: Sequence[VMInstance], now: int,
                         images: ImageRepository, credentials: Mapping[str, Credential],
                         deferred: Iterable[BootRequest] = ()) -> CycleResult:
        idle = sorted((j for j in jobs if j.state is JobState.IDLE), key=lambda j: j.sort_key)
        result = CycleResult()
        if not idle:
            return result
        instances = list(instances)
        deferred = list(deferred)

        supply: Dict[Tuple[str, str], int] = defaultdict(int)
        for vm in instances:
            if vm.state is VMState.RUNNING:
                supply[(vm.owner, vm.image)] += vm.free_slots
            elif vm.state in (VMState.REQUESTED, VMState.BOOTING):
                supply[(vm.owner, vm.image)] += vm.slots
        for req in deferred:
            supply[(req.owner, req.image)] += req.request.cores
        demand: Dict[Tuple[str, str], int] = defaultdict(int)
        for job in idle:
            demand[(job.owner, job.vm_type)] += 1

        # per user: earliest idle job of each vm_type, in FIFO order
        heads: Dict[str, List[Job]] = {}
        for job in idle:
            types = heads.setdefault(job.owner, [])
            if all(j.vm_type != job.vm_type for j in types):
                types.append(job)

        free = self.free_capacity(clouds, instances)
        for user, candidates in heads.items():
            wanted = [j for j in candidates
                      if demand[(user, j.vm_type)] > supply[(user, j.vm_type)]]
            if not wanted:
                continue
            booted = False
            for job in wanted:
                image = images.get(job.vm_type, now)
                if image is None:
                    continue
                target = self.select_cloud(job, clouds, image, credentials.get(user), now, free)
                if target is None:
                    continue
                result.boots.append(BootRequest(user, job.vm_type, job.request, target,
                                                job.request.whole_node))
                self._commit(free[target], clouds[target], job)
                supply[(user, job.vm_type)] += job.request.cores
                booted = True
                break
            if not booted:
                result.starved.append(user)

        if self.config.rebalance_enabled and result.starved:
            result.rebalance = self.rebalance(instances, idle, result.starved, clouds,
                                              images, credentials, now, deferred)
        return result

    def _commit(self, free: _Free, state: CloudState, job: Job) -> None:
        free.cores -= job.request.cores
        free.memory_mb -= job.request.memory_mb
        free.scratch_gb -= _scratch_for(state, job)
        if free.pools:
            free.pools[job.request.whole_node] -= job.request.cores

    # -- rebalancing --------------------------------------------------------

    def rebalance(self, instances: Sequence[VMInstance], idle: Sequence[Job],
                  starved: Sequence[str], clouds: Mapping[str, CloudState],
                  images: ImageRepository, credentials: Mapping[str, Credential],
                  now: int, deferred: Iterable[BootRequest] = ()) -> Optional[Tuple[str, BootRequest]]:
        """Retire one instance of the best-provisioned user for a starved user.

        Counts exclude instances already retiring and include boots deferred
        by earlier rebalances, so repeated calls converge instead of draining
        the same user to zero. Nothing happens unless the move narrows the gap
        (max - starved >= 2).
        """
        count: Dict[str, int] = defaultdict(int)
        oldest: Dict[str, Tuple[int, int]] = {}
        for vm in instances:
            if vm.state in _PROVISIONED:
                count[vm.owner] += 1
                key = (vm.booted_at, vm.seq)
                if vm.owner not in oldest or key < oldest[vm.owner]:
                    oldest[vm.owner] = key
        for req in deferred:
            count[req.owner] += 1
        if not count:
            return None

        order = {u: i for i, u in enumerate(starved)}
        needy = min(starved, key=lambda u: (count[u], order[u]))
        rich = min((u for u in count if u in oldest),
                   key=lambda u: (-count[u], oldest[u], u), default=None)
        if rich is None or rich == needy or count[rich] - count[needy] < 2:
            return None

        victims = sorted((vm for vm in instances if vm.owner == rich and vm.state is VMState.RUNNING),
                         key=lambda vm: (vm.booted_at, vm.seq), reverse=True)
        heads = []
        for job in idle:
            if job.owner == needy and all(h.vm_type != job.vm_type for h in heads):
                heads.append(job)
        for job in heads:
            image = images.get(job.vm_type, now)
            if image is None:
                continue
            for vm in victims:
                state = clouds.get(vm.cloud)
                if state is None or not self._eligible(job, state, image, credentials.get(needy), now):
                    continue
                if vm.slots + state.free_cores < job.request.cores:
                    continue
                if vm.memory_mb + state.free_memory_mb < job.request.memory_mb:
                    continue
                return vm.vm_id, BootRequest(needy, job.vm_type, job.request, vm.cloud,
                                             job.request.whole_node)
        return None

    # -- lifecycle ----------------------------------------------------------

    def lifecycle_sweep(self, instances: Iterable[VMInstance], now: int) -> List[SweepAction]:
        cfg = self.config
        actions = []
        for vm in instances:
            if not vm.alive:
                continue
            if vm.state is VMState.ERROR:
                actions.append(SweepAction(vm.vm_id, "kill", "error"))
                continue
            cred = vm.credential
            if cred.enforced and cred.expiry - now <= cfg.proxy_expiry_margin:
                actions.append(SweepAction(vm.vm_id, "kill", "proxy-expiry"))
                continue
            eol = vm.end_of_life
            if eol is None:
                continue
            if eol - now <= cfg.cycle_period:
                # a drain that has not finished by now never will in time
                actions.append(SweepAction(vm.vm_id, "kill", "lifetime"))
            elif eol - now <= cfg.lifetime_margin and vm.state is VMState.RUNNING:
                actions.append(SweepAction(vm.vm_id, "drain", "lifetime"))
        return actions

    def idle_instances(self, instances: Iterable[VMInstance], jobs: Iterable[Job]) -> List[str]:
        """Running instances with no work left for them: empty and no matching Idle job."""
        if not self.config.retire_idle:
            return []
        waiting = defaultdict(list)
        for job in jobs:
            if job.state is JobState.IDLE:
                waiting[(job.owner, job.vm_type)].append(job)
        out = []
        for vm in instances:
            if vm.state is not VMState.RUNNING or vm.occupied:
                continue
            if not any(j.allows_cloud(vm.cloud) for j in waiting.get((vm.owner, vm.image), ())):
                out.append(vm.vm_id)
        return out
