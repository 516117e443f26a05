import pytest

from distcloud.connectors import make_connector
from distcloud.images import ImageRepository
from distcloud.matchmaker import Matchmaker
from distcloud.model import (
    CloudFamily, CloudSite, Credential, Hypervisor, ImageVariant, InstanceTable, Job,
    ResourceRequest, VMImage,
)

WHOLE_NODE = ResourceRequest(cores=8, memory_mb=16384, arch="x86_64", instance_type="m1.xlarge")
SINGLE_CORE = ResourceRequest(cores=1, memory_mb=2048, arch="x86_64", instance_type="m1.small")


def image(image_id="prod", owner="alice", size_gb=9.0, hvs=("kvm", "xen")):
    return VMImage(image_id, owner, size_gb, frozenset(
        ImageVariant(Hypervisor(h), f"http://repo/{image_id}.{h}") for h in hvs))


def nimbus(name="victoria", cores=32, hv="xen", **kw):
    kw.setdefault("total_memory_mb", cores * 4096)
    return CloudSite(name, CloudFamily.NIMBUS, Hypervisor(hv), cores, **kw)


def openstack(name="melbourne", cores=32, hv="kvm", **kw):
    kw.setdefault("total_memory_mb", cores * 4096)
    kw.setdefault("group_key", "nectar")
    return CloudSite(name, CloudFamily.OPENSTACK, Hypervisor(hv), cores, **kw)


def job(job_id=1, owner="alice", vm_type="prod", request=WHOLE_NODE, submit_time=0, **kw):
    kw.setdefault("runtime_cpu", 3600)
    return Job(job_id, owner, vm_type, request, submit_time, **kw)


def proxy(owner="alice", issued_at=0, lifetime=43200):
    return Credential(owner, issued_at, lifetime)


class World:
    """Images, instances, connectors and a matchmaker wired like the simulator."""

    def __init__(self, *sites, images=None):
        self.images = ImageRepository()
        for im in images or [image()]:
            self.images.add(im)
        self.instances = InstanceTable()
        self.connectors = {s.name: make_connector(s, self.images, self.instances) for s in sites}
        self.matchmaker = Matchmaker(self.images, self.instances, terminate=self.terminate)
        for c in self.connectors.values():
            c.on_terminate.append(lambda vm, now: self.matchmaker.reschedule_orphans(vm.vm_id, now))

    def terminate(self, vm_id, now, reason=""):
        vm = self.instances[vm_id]
        self.connectors[vm.cloud].terminate(vm_id, now, reason)

    @property
    def clouds(self):
        return {n: c.state for n, c in self.connectors.items()}

    def running_vm(self, cloud, owner="alice", image_id="prod", request=WHOLE_NODE, now=0, cred=None):
        from distcloud.connectors import BootRequest
        conn = self.connectors[cloud]
        cred = cred or proxy(owner, now)
        vm_id = conn.boot(BootRequest(owner, image_id, request, cloud, request.whole_node),
                          self.images.get(image_id, now), cred, now)
        conn.boot_complete(vm_id, now)
        return vm_id


@pytest.fixture
def world():
    return World(nimbus(), openstack())


def minimal_doc(**top):
    """A small valid scenario document; keyword arguments replace top-level keys."""
    doc = {
        "seed": 1,
        "horizon": 20000,
        "clouds": [
            {"name": "victoria", "family": "nimbus-like", "hypervisor": "xen", "total_cores": 32,
             "total_memory_mb": 131072, "scratch_pool_gb": 1000, "priority": 10},
            {"name": "melbourne", "family": "openstack-like", "hypervisor": "kvm", "total_cores": 32,
             "total_memory_mb": 131072, "group_key": "nectar"},
        ],
        "images": [{"image_id": "prod", "owner": "alice", "size_gb": 9, "variants": [
            {"hypervisor": "kvm", "location": "http://repo/prod.kvm"},
            {"hypervisor": "xen", "location": "http://repo/prod.xen"}]}],
        "users": [{"name": "alice"}, {"name": "bob"}],
        "workload": [
            {"owner": "alice", "vm_type": "prod", "runtime_cpu": 3000, "count": 10,
             "request": {"cores": 8, "memory_mb": 16384, "instance_type": "m1.xlarge"}},
            {"generate": {"count": 6, "owner": "bob", "vm_type": "prod", "runtime_cpu": 2000,
                          "interarrival": 300, "runtime_jitter": 0.2,
                          "request": {"cores": 8, "memory_mb": 16384, "instance_type": "m1.xlarge"}}},
        ],
    }
    doc.update(top)
    return doc


def parse_log(text):
    """Event log lines as (time, seq, kind, fields) tuples."""
    out = []
    for line in text.splitlines():
        t, seq, kind, *rest = line.split(" ")
        out.append((int(t), int(seq), kind, dict(kv.split("=", 1) for kv in rest)))
    return out


ACCEPTANCE_LINES = []


def verdict(number, name, ok, detail=""):
    """Record one acceptance line, print it, and fail the test if `ok` is false."""
    line = f"criterion {number:>2} {name:<24} {'PASS' if ok else 'FAIL'}  {detail}".rstrip()
    ACCEPTANCE_LINES.append(line)
    print(line)
    assert ok, line


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
