import pytest

from distcloud.model import (
    VM_EDGES, AuthMode, CloudFamily, CloudSite, Credential, ExpiredCredential, Hypervisor,
    HypervisorMismatch, ImageVariant, InvalidTransition, MissingField, ResourceRequest, VMImage,
    VMInstance, VMState, validate_boot_parameters,
)

from conftest import WHOLE_NODE, image, job, nimbus, openstack, proxy


def test_nimbus_dual_image_fresh_proxy_ok():
    validate_boot_parameters(job(), nimbus(), image(), proxy(issued_at=0), now=0)


def test_openstack_without_instance_type():
    req = ResourceRequest(cores=8, memory_mb=16384)
    with pytest.raises(MissingField) as exc:
        validate_boot_parameters(job(request=req), openstack(), image(), None)
    assert exc.value.name == "instance_type"


def test_openstack_without_group_key():
    site = openstack(group_key=None)
    with pytest.raises(MissingField) as exc:
        validate_boot_parameters(job(), site, image(), None)
    assert exc.value.name == "group_key"


def test_xen_only_image_on_kvm_cloud():
    with pytest.raises(HypervisorMismatch):
        validate_boot_parameters(job(), nimbus(hv="kvm"), image(hvs=("xen",)), proxy())


def test_expired_proxy():
    cred = proxy(issued_at=0)
    with pytest.raises(ExpiredCredential):
        validate_boot_parameters(job(), nimbus(), image(), cred, now=43200)
    validate_boot_parameters(job(), nimbus(), image(), cred, now=43199)


def test_nimbus_rejects_group_key_credential():
    cred = Credential("alice", 0, 0, AuthMode.GROUP_KEY)
    with pytest.raises(MissingField):
        validate_boot_parameters(job(), nimbus(), image(), cred)


def test_openstack_ignores_proxy_state():
    # group-key clouds do not look at the user's proxy at all
    validate_boot_parameters(job(), openstack(), image(), proxy(issued_at=0), now=10 ** 7)


def test_credential_expiry():
    assert Credential("a", 100).expiry == 100 + 43200
    assert Credential("a", 0, 0, AuthMode.GROUP_KEY).enforced is False


def test_family_auth_pairing():
    with pytest.raises(ValueError):
        CloudSite("x", CloudFamily.NIMBUS, Hypervisor.KVM, 8, 1024, auth_mode=AuthMode.GROUP_KEY)
    assert openstack().auth_mode is AuthMode.GROUP_KEY
    assert nimbus().auth_mode is AuthMode.PROXY


def test_image_invariants():
    assert image().dual_hypervisor
    assert not image(hvs=("kvm",)).dual_hypervisor
    with pytest.raises(ValueError):
        VMImage("x", "a", 1.0, frozenset())
    with pytest.raises(ValueError):
        VMImage("x", "a", 1.0, frozenset({ImageVariant(Hypervisor.KVM, "u1"),
                                          ImageVariant(Hypervisor.KVM, "u2")}))
    with pytest.raises(ValueError):
        VMImage("x", "a", 0, frozenset({ImageVariant(Hypervisor.KVM, "u1")}))


def test_resource_request_bounds():
    assert ResourceRequest(blank_space_gb=0).blank_space_gb == 0
    with pytest.raises(ValueError):
        ResourceRequest(cores=0)


def _vm(state=VMState.REQUESTED):
    return VMInstance("c-1", "alice", "prod", "c", Hypervisor.KVM, 8, 0, proxy(), state=state)


@pytest.mark.parametrize("src", list(VMState))
@pytest.mark.parametrize("dst", list(VMState))
def test_vm_edges_closed(src, dst):
    vm = _vm(src)
    if dst in VM_EDGES[src]:
        vm.set_state(dst)
        assert vm.state is dst
    else:
        with pytest.raises(InvalidTransition):
            vm.set_state(dst)


def test_retiring_only_terminates():
    assert VM_EDGES[VMState.RETIRING] == {VMState.TERMINATED}


def test_job_transitions():
    j = job()
    j.set_state(j.state.RUNNING)
    j.set_state(j.state.IDLE)
    j.set_state(j.state.RUNNING)
    j.set_state(j.state.COMPLETED)
    with pytest.raises(InvalidTransition):
        j.set_state(j.state.IDLE)


def test_slot_accounting():
    vm = _vm()
    assert vm.free_slots == 8 and vm.occupied == 0
    vm.slot_occupancy[3] = 42
    assert vm.free_slots == 7 and vm.jobs == [42]
