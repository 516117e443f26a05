"""Simulated IaaS endpoints.

One connector per cloud. Connectors enforce the family boot contract, keep
capacity accounting (cores are committed when the boot is requested), and
release capacity on terminate.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, List, Optional, Set

from .images import ImageRepository
from .model import (
    NIMBUS_VM_LIFETIME, AuthMode, CloudFamily, CloudSite, CloudStatus,
    Credential, DistCloudError, InstanceTable, Job, ResourceRequest,
    VMImage, VMInstance, VMState, validate_boot_parameters,
)


class BootError(DistCloudError):
    pass


class NoCapacity(BootError):
    pass


class ScratchExhausted(BootError):
    pass


class MaintenanceMode(BootError):
    pass


class UnknownInstance(DistCloudError):
    pass


@dataclass(frozen=True)
class BootRequest:
    owner: str
    image: str
    request: ResourceRequest
    target_cloud: str
    whole_node: bool = False

    def as_job(self) -> Job:
        """A stand-in job carrying this request, for boot validation."""
        return Job(0, self.owner, self.image, self.request, 0, 0)


@dataclass
class CloudState:
    site: CloudSite
    committed_cores: int = 0
    committed_scratch_gb: int = 0
    committed_memory_mb: int = 0
    instances: Set[str] = field(default_factory=set)

    @property
    def name(self) -> str:
        return self.site.name

    @property
    def maintenance(self) -> bool:
        return self.site.status is CloudStatus.MAINTENANCE

    @property
    def free_cores(self) -> int:
        return self.site.total_cores - self.committed_cores

    @property
    def free_memory_mb(self) -> int:
        return self.site.total_memory_mb - self.committed_memory_mb

    @property
    def free_scratch_gb(self) -> int:
        return self.site.scratch_pool_gb - self.committed_scratch_gb

    @property
    def overcommitted(self) -> bool:
        return self.committed_scratch_gb > self.site.scratch_pool_gb

    def dump(self) -> dict:
        return {
            "name": self.name,
            "family": self.site.family.value,
            "hypervisor": self.site.hypervisor.value,
            "status": self.site.status.value,
            "total_cores": self.site.total_cores,
            "committed_cores": self.committed_cores,
            "committed_memory_mb": self.committed_memory_mb,
            "scratch_pool_gb": self.site.scratch_pool_gb,
            "committed_scratch_gb": self.committed_scratch_gb,
            "scratch_overcommitted": self.overcommitted,
            "instances": sorted(self.instances),
        }


class Connector:
    family: CloudFamily

    def __init__(self, site: CloudSite, images: ImageRepository, instances: InstanceTable):
        if site.family is not self.family:
            raise ValueError(f"{type(self).__name__} cannot drive a {site.family.value} cloud")
        self.state = CloudState(site)
        self.images = images
        self.instances = instances
        self.on_terminate: List[Callable[[VMInstance, int], None]] = []
        self._counter = 0

    @property
    def site(self) -> CloudSite:
        return self.state.site

    def set_maintenance(self, on: bool) -> None:
        self.site.status = CloudStatus.MAINTENANCE if on else CloudStatus.ACTIVE

    def instance_credential(self, cred: Optional[Credential], owner: str, now: int) -> Credential:
        raise NotImplementedError

    def lifetime_limit(self) -> Optional[int]:
        return None

    def scratch_for(self, request: ResourceRequest) -> int:
        return 0

    def boot(self, req: BootRequest, image: VMImage, cred: Optional[Credential], now: int) -> str:
        st = self.state
        if st.maintenance:
            raise MaintenanceMode(st.name)
        validate_boot_parameters(req.as_job(), self.site, image, cred, now)
        cores = req.request.cores
        if cores > st.free_cores:
            raise NoCapacity(f"{st.name}: {cores} cores requested, {st.free_cores} free")
        if req.request.memory_mb > st.free_memory_mb:
            raise NoCapacity(f"{st.name}: {req.request.memory_mb} MB requested, {st.free_memory_mb} free")
        scratch = self.scratch_for(req.request)
        if self.site.scratch_safeguard and scratch > st.free_scratch_gb:
            raise ScratchExhausted(f"{st.name}: {scratch} GB requested, {st.free_scratch_gb} free")

        self._counter += 1
        vm = VMInstance(
            vm_id=f"{st.name}-{self._counter}",
            owner=req.owner,
            image=req.image,
            cloud=st.name,
            hypervisor=self.site.hypervisor,
            slots=cores,
            booted_at=now,
            credential=self.instance_credential(cred, req.owner, now),
            lifetime_limit=self.lifetime_limit(),
            blank_space_gb=scratch,
            memory_mb=req.request.memory_mb,
        )
        transfer = self.images.transfer_time(req.image, self.site, now)
        vm.ready_at = now + self.site.boot_fixed_delay + transfer
        st.committed_cores += cores
        st.committed_memory_mb += vm.memory_mb
        st.committed_scratch_gb += scratch
        st.instances.add(vm.vm_id)
        self.instances.register(vm, now)
        self.instances.transition(vm, VMState.BOOTING, now)
        return vm.vm_id

    def boot_complete(self, vm_id: str, now: int) -> bool:
        """Bring a Booting instance up; False if it died while booting."""
        vm = self._get(vm_id)
        if vm.state is not VMState.BOOTING:
            return False
        self.instances.transition(vm, VMState.RUNNING, now)
        self.images.record_boot(vm.image, vm.cloud)
        return True

    def fail(self, vm_id: str, now: int) -> None:
        vm = self._get(vm_id)
        self.instances.transition(vm, VMState.ERROR, now, "cloud-error")

    def terminate(self, vm_id: str, now: int, reason: str = "") -> None:
        vm = self.instances.get(vm_id)
        if vm is None or vm.cloud != self.state.name or not vm.alive:
            raise UnknownInstance(vm_id)
        self.instances.transition(vm, VMState.TERMINATED, now, reason)
        st = self.state
        st.committed_cores -= vm.slots
        st.committed_memory_mb -= vm.memory_mb
        st.committed_scratch_gb -= vm.blank_space_gb
        st.instances.discard(vm_id)
        for hook in self.on_terminate:
            hook(vm, now)

    def _get(self, vm_id: str) -> VMInstance:
        vm = self.instances.get(vm_id)
        if vm is None or vm.cloud != self.state.name:
            raise UnknownInstance(vm_id)
        return vm


class NimbusConnector(Connector):
    family = CloudFamily.NIMBUS

    def instance_credential(self, cred, owner, now):
        return cred

    def lifetime_limit(self):
        return NIMBUS_VM_LIFETIME

    def scratch_for(self, request):
        return request.blank_space_gb


class OpenStackConnector(Connector):
    family = CloudFamily.OPENSTACK

    def instance_credential(self, cred, owner, now):
        return Credential(owner, now, 0, AuthMode.GROUP_KEY)


def make_connector(site: CloudSite, images: ImageRepository, instances: InstanceTable) -> Connector:
    cls = NimbusConnector if site.family is CloudFamily.NIMBUS else OpenStackConnector
    return cls(site, images, instances)
