"""Domain types shared by every part of the engine.

All times are integer seconds from scenario start.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Callable, Dict, FrozenSet, List, Optional

PROXY_LIFETIME = 12 * 3600
NIMBUS_VM_LIFETIME = 7 * 24 * 3600


class DistCloudError(Exception):
    """Base class for engine errors."""


class ValidationError(DistCloudError):
    pass


class MissingField(ValidationError):
    def __init__(self, name: str):
        super().__init__(f"missing field: {name}")
        self.name = name


class HypervisorMismatch(ValidationError):
    pass


class ExpiredCredential(ValidationError):
    pass


class InvalidTransition(DistCloudError):
    pass


class Hypervisor(str, enum.Enum):
    KVM = "kvm"
    XEN = "xen"


class CloudFamily(str, enum.Enum):
    NIMBUS = "nimbus-like"
    OPENSTACK = "openstack-like"


class AuthMode(str, enum.Enum):
    PROXY = "per-user-proxy"
    GROUP_KEY = "shared-group-key"


class CloudStatus(str, enum.Enum):
    ACTIVE = "Active"
    MAINTENANCE = "Maintenance"


class JobState(str, enum.Enum):
    IDLE = "Idle"
    RUNNING = "Running"
    COMPLETED = "Completed"
    HELD = "Held"


class VMState(str, enum.Enum):
    REQUESTED = "Requested"
    BOOTING = "Booting"
    RUNNING = "Running"
    RETIRING = "Retiring"
    ERROR = "Error"
    TERMINATED = "Terminated"


# Booting -> Terminated covers an admin/expiry kill before the VM comes up.
VM_EDGES: Dict[VMState, FrozenSet[VMState]] = {
    VMState.REQUESTED: frozenset({VMState.BOOTING}),
    VMState.BOOTING: frozenset({VMState.RUNNING, VMState.ERROR, VMState.TERMINATED}),
    VMState.RUNNING: frozenset({VMState.RETIRING, VMState.ERROR, VMState.TERMINATED}),
    VMState.RETIRING: frozenset({VMState.TERMINATED}),
    VMState.ERROR: frozenset({VMState.TERMINATED}),
    VMState.TERMINATED: frozenset(),
}

JOB_EDGES: Dict[JobState, FrozenSet[JobState]] = {
    JobState.HELD: frozenset({JobState.IDLE}),
    JobState.IDLE: frozenset({JobState.RUNNING}),
    JobState.RUNNING: frozenset({JobState.COMPLETED, JobState.IDLE}),
    JobState.COMPLETED: frozenset(),
}


@dataclass(frozen=True)
class Credential:
    owner: str
    issued_at: int = 0
    lifetime: int = PROXY_LIFETIME
    kind: AuthMode = AuthMode.PROXY

    @property
    def expiry(self) -> int:
        return self.issued_at + self.lifetime

    @property
    def enforced(self) -> bool:
        """Only per-user proxies shut instances down when they lapse."""
        return self.kind is AuthMode.PROXY


@dataclass(frozen=True)
class ImageVariant:
    hypervisor: Hypervisor
    location: str


@dataclass(frozen=True)
class VMImage:
    image_id: str
    owner: str
    size_gb: float
    variants: FrozenSet[ImageVariant]

    def __post_init__(self):
        if not self.image_id:
            raise ValueError("image_id must be non-empty")
        if not self.size_gb > 0:
            raise ValueError(f"image {self.image_id}: size_gb must be positive")
        if not self.variants:
            raise ValueError(f"image {self.image_id}: at least one variant required")
        hvs = [v.hypervisor for v in self.variants]
        if len(set(hvs)) != len(hvs):
            raise ValueError(f"image {self.image_id}: duplicate hypervisor variants")

    @property
    def hypervisors(self) -> FrozenSet[Hypervisor]:
        return frozenset(v.hypervisor for v in self.variants)

    @property
    def dual_hypervisor(self) -> bool:
        return self.hypervisors == {Hypervisor.KVM, Hypervisor.XEN}

    def location_for(self, hypervisor: Hypervisor) -> Optional[str]:
        for v in self.variants:
            if v.hypervisor is hypervisor:
                return v.location
        return None


@dataclass(frozen=True)
class ResourceRequest:
    cores: int = 1
    memory_mb: int = 2048
    arch: str = "x86_64"
    blank_space_gb: int = 0
    instance_type: Optional[str] = None

    def __post_init__(self):
        if self.cores < 1:
            raise ValueError("cores must be >= 1")
        if self.memory_mb < 1:
            raise ValueError("memory_mb must be >= 1")
        if self.blank_space_gb < 0:
            raise ValueError("blank_space_gb must be >= 0")

    @property
    def whole_node(self) -> bool:
        return self.cores > 1


@dataclass
class Job:
    job_id: int
    owner: str
    vm_type: str
    request: ResourceRequest
    submit_time: int
    runtime_cpu: int
    io_cost: int = 0
    state: JobState = JobState.IDLE
    depends_on: FrozenSet[int] = frozenset()
    cloud_constraint: Optional[FrozenSet[str]] = None

    # bookkeeping for the current / last attempt
    vm_id: Optional[str] = None
    slot: Optional[int] = None
    start_time: Optional[int] = None
    first_start: Optional[int] = None
    end_time: Optional[int] = None
    stagein: int = 0
    attempt: int = 0
    wasted: int = 0
    failures: int = 0

    @property
    def sort_key(self):
        return (self.submit_time, self.job_id)

    def allows_cloud(self, cloud: str) -> bool:
        return self.cloud_constraint is None or cloud in self.cloud_constraint

    def set_state(self, new: JobState) -> None:
        if new not in JOB_EDGES[self.state]:
            raise InvalidTransition(f"job {self.job_id}: {self.state.value} -> {new.value}")
        self.state = new

    def to_record(self) -> dict:
        return {
            "job_id": self.job_id,
            "owner": self.owner,
            "vm_type": self.vm_type,
            "request": {
                "cores": self.request.cores,
                "memory_mb": self.request.memory_mb,
                "arch": self.request.arch,
                "blank_space_gb": self.request.blank_space_gb,
                "instance_type": self.request.instance_type,
            },
            "submit_time": self.submit_time,
            "runtime_cpu": self.runtime_cpu,
            "io_cost": self.io_cost,
            "state": self.state.value,
            "depends_on": sorted(self.depends_on),
            "cloud_constraint": None if self.cloud_constraint is None else sorted(self.cloud_constraint),
        }


@dataclass
class VMInstance:
    vm_id: str
    owner: str
    image: str
    cloud: str
    hypervisor: Hypervisor
    slots: int
    booted_at: int
    credential: Credential
    lifetime_limit: Optional[int] = None
    state: VMState = VMState.REQUESTED
    blank_space_gb: int = 0
    memory_mb: int = 0
    slot_occupancy: List[Optional[int]] = field(default_factory=list)
    ready_at: Optional[int] = None
    running_at: Optional[int] = None
    terminated_at: Optional[int] = None
    seq: int = 0

    def __post_init__(self):
        if not self.slot_occupancy:
            self.slot_occupancy = [None] * self.slots

    @property
    def alive(self) -> bool:
        return self.state is not VMState.TERMINATED

    @property
    def occupied(self) -> int:
        return sum(1 for j in self.slot_occupancy if j is not None)

    @property
    def free_slots(self) -> int:
        return self.slots - self.occupied

    @property
    def jobs(self) -> List[int]:
        return [j for j in self.slot_occupancy if j is not None]

    @property
    def end_of_life(self) -> Optional[int]:
        if self.lifetime_limit is None:
            return None
        return self.booted_at + self.lifetime_limit

    def set_state(self, new: VMState) -> None:
        if new not in VM_EDGES[self.state]:
            raise InvalidTransition(f"{self.vm_id}: {self.state.value} -> {new.value}")
        self.state = new


class InstanceTable(Dict[str, VMInstance]):
    """All instances ever created, in creation order.

    Every lifecycle change goes through `transition` so listeners (the event
    log, invariant checkers) see each edge exactly once.
    """

    def __init__(self):
        super().__init__()
        self.listeners: List[Callable[[VMInstance, Optional[VMState], VMState, int, str], None]] = []
        self._seq = 0

    def register(self, vm: VMInstance, now: int = 0) -> None:
        if vm.vm_id in self:
            raise ValueError(f"duplicate instance id {vm.vm_id}")
        self._seq += 1
        vm.seq = self._seq
        self[vm.vm_id] = vm
        for listener in self.listeners:
            listener(vm, None, vm.state, now, "")

    def transition(self, vm: VMInstance, new: VMState, now: int, reason: str = "") -> None:
        old = vm.state
        vm.set_state(new)
        if new is VMState.RUNNING:
            vm.running_at = now
        elif new is VMState.TERMINATED:
            vm.terminated_at = now
        for listener in self.listeners:
            listener(vm, old, new, now, reason)

    def alive(self) -> List[VMInstance]:
        return [vm for vm in self.values() if vm.alive]


@dataclass
class CloudSite:
    name: str
    family: CloudFamily
    hypervisor: Hypervisor
    total_cores: int
    total_memory_mb: int
    scratch_pool_gb: int = 0
    scratch_safeguard: bool = True
    status: CloudStatus = CloudStatus.ACTIVE
    auth_mode: Optional[AuthMode] = None
    boot_fixed_delay: int = 120
    image_bandwidth_gb_per_s: float = 0.1
    priority: int = 0
    group_key: Optional[str] = None

    def __post_init__(self):
        expected = AuthMode.PROXY if self.family is CloudFamily.NIMBUS else AuthMode.GROUP_KEY
        if self.auth_mode is None:
            self.auth_mode = expected
        if self.auth_mode is not expected:
            raise ValueError(f"cloud {self.name}: {self.family.value} requires auth_mode {expected.value}")
        if self.total_cores < 1 or self.total_memory_mb < 1:
            raise ValueError(f"cloud {self.name}: capacity must be positive")
        if self.scratch_pool_gb < 0:
            raise ValueError(f"cloud {self.name}: scratch_pool_gb must be >= 0")
        if not self.image_bandwidth_gb_per_s > 0:
            raise ValueError(f"cloud {self.name}: image bandwidth must be positive")

    @property
    def active(self) -> bool:
        return self.status is CloudStatus.ACTIVE


def validate_boot_parameters(job: Job, cloud: CloudSite, image: VMImage,
                             cred: Optional[Credential], now: int = 0) -> None:
    """Raise a ValidationError unless `job` can be booted on `cloud`.

    Nimbus-like clouds need an image location, a live per-user proxy and the
    arch/cores/memory triple. OpenStack-like clouds need an instance type
    and a configured group key. Both need a variant for the cloud's
    hypervisor.
    """
    req = job.request
    if cloud.family is CloudFamily.NIMBUS:
        if not req.arch:
            raise MissingField("arch")
        if not req.cores:
            raise MissingField("cores")
        if not req.memory_mb:
            raise MissingField("memory_mb")
    else:
        if not req.instance_type:
            raise MissingField("instance_type")
        if not cloud.group_key:
            raise MissingField("group_key")

    location = image.location_for(cloud.hypervisor)
    if location is None:
        raise HypervisorMismatch(
            f"image {image.image_id} has no {cloud.hypervisor.value} variant for {cloud.name}")

    if cloud.family is CloudFamily.NIMBUS:
        if not location:
            raise MissingField("location")
        if cred is None or cred.kind is not AuthMode.PROXY:
            raise MissingField("proxy")
        if cred.expiry <= now:
            raise ExpiredCredential(f"proxy for {cred.owner} expired at {cred.expiry}")


def is_bootable(job: Job, cloud: CloudSite, image: VMImage,
                cred: Optional[Credential], now: int = 0) -> bool:
    try:
        validate_boot_parameters(job, cloud, image, cred, now)
    except ValidationError:
        return False
    return True
