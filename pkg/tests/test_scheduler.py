import itertools

import pytest
from hypothesis import given, settings, strategies as st

from distcloud.connectors import BootRequest, CloudState
from distcloud.model import CloudStatus, JobState, VMState
from distcloud.scheduler import PARTITION_SPLIT, CloudScheduler, SchedulerConfig

from conftest import SINGLE_CORE, WHOLE_NODE, World, image, job, nimbus, openstack, proxy
from oracles import oracle_cycle, oracle_rebalance_owner, select_cloud_bruteforce

LONG = 10 * 86400


def creds(*users, issued_at=0, lifetime=LONG):
    return {u: proxy(u, issued_at, lifetime) for u in users}


def cycle(w, sched, now=0, credentials=None, deferred=()):
    credentials = credentials or creds(*{j.owner for j in w.matchmaker.queue})
    return sched.scheduling_cycle(list(w.matchmaker.queue), w.clouds,
                                  list(w.instances.values()), now, w.images, credentials, deferred)


def apply(w, result, now=0, credentials=None):
    """Boot every request and bring it straight to Running."""
    for req in result.boots:
        conn = w.connectors[req.target_cloud]
        cred = (credentials or {}).get(req.owner) or proxy(req.owner, 0, LONG)
        vm = conn.boot(req, w.images.get(req.image, now), cred, now)
        conn.boot_complete(vm, now)


def per_user(w):
    out = {}
    for vm in w.instances.values():
        if vm.state in (VMState.REQUESTED, VMState.BOOTING, VMState.RUNNING):
            out[vm.owner] = out.get(vm.owner, 0) + 1
    return out


# -- select_cloud ------------------------------------------------------------

def test_priority_dominates_free_cores():
    clouds = {s.name: CloudState(s) for s in (nimbus("a", cores=256, priority=0),
                                               nimbus("b", cores=16, priority=5))}
    assert CloudScheduler().select_cloud(job(), clouds, image(), proxy()) == "b"


@pytest.mark.parametrize("order", list(itertools.permutations(range(3))))
def test_tie_break_independent_of_order(order):
    specs = [("alpha", 1, 32), ("beta", 1, 32), ("gamma", 0, 64)]
    sites = [nimbus(specs[i][0], cores=specs[i][2], priority=specs[i][1]) for i in order]
    clouds = {s.name: CloudState(s) for s in sites}
    got = CloudScheduler().select_cloud(job(), clouds, image(), proxy())
    assert got == select_cloud_bruteforce([(p, c, n) for n, p, c in specs]) == "alpha"


@settings(max_examples=80, deadline=None)
@given(st.lists(st.tuples(st.integers(0, 3), st.sampled_from([8, 16, 24, 32])),
                min_size=1, max_size=5))
def test_select_matches_bruteforce(specs):
    sites = [nimbus(f"c{i}", cores=c, priority=p) for i, (p, c) in enumerate(specs)]
    clouds = {s.name: CloudState(s) for s in sites}
    got = CloudScheduler().select_cloud(job(), clouds, image(), proxy())
    assert got == select_cloud_bruteforce([(s.priority, s.total_cores, s.name) for s in sites])


def test_maintenance_and_constraint_give_none():
    vic = nimbus()
    clouds = {"victoria": CloudState(vic)}
    vic.status = CloudStatus.MAINTENANCE
    assert CloudScheduler().select_cloud(job(), clouds, image(), proxy()) is None
    vic.status = CloudStatus.ACTIVE
    constrained = job(cloud_constraint=frozenset({"elsewhere"}))
    assert CloudScheduler().select_cloud(constrained, clouds, image(), proxy()) is None


def test_expiring_proxy_skips_nimbus_only():
    clouds = {s.name: CloudState(s) for s in (nimbus(priority=9), openstack())}
    short = proxy(issued_at=0, lifetime=1000)
    assert CloudScheduler().select_cloud(job(), clouds, image(), short, now=200) == "melbourne"


def test_no_capacity_gives_none():
    clouds = {"victoria": CloudState(nimbus(cores=4))}
    assert CloudScheduler().select_cloud(job(), clouds, image(), proxy()) is None


# -- scheduling_cycle --------------------------------------------------------

def test_empty_queue():
    w = World(nimbus())
    res = cycle(w, CloudScheduler())
    assert res.boots == [] and res.rebalance is None and res.starved == []


def test_one_boot_per_user_per_cycle():
    w = World(nimbus(cores=256))
    for u in ("alice", "bob", "carol"):
        for _ in range(10):
            w.matchmaker.submit(u, "prod", WHOLE_NODE, 3600)
    res = cycle(w, CloudScheduler())
    assert [b.owner for b in res.boots] == ["alice", "bob", "carol"]


def test_supply_covers_demand():
    w = World(nimbus())
    w.running_vm("victoria")
    for _ in range(8):
        w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    assert cycle(w, CloudScheduler()).boots == []
    w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    assert len(cycle(w, CloudScheduler()).boots) == 1


def test_vm_type_fallback_on_hypervisor_mismatch():
    w = World(nimbus(hv="xen"), images=[image("kvmonly", hvs=("kvm",)), image("prod")])
    w.matchmaker.submit("alice", "kvmonly", WHOLE_NODE, 3600)
    w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    (boot,) = cycle(w, CloudScheduler()).boots
    assert boot.image == "prod"


def test_fairness_converges_to_even_split():
    w = World(nimbus(cores=48))
    sched = CloudScheduler()
    for u in ("alice", "bob", "carol"):
        for _ in range(50):
            w.matchmaker.submit(u, "prod", WHOLE_NODE, 3600)
    for t in range(6):
        apply(w, cycle(w, sched, now=t * 60), now=t * 60)
    assert per_user(w) == {"alice": 2, "bob": 2, "carol": 2}


@pytest.mark.parametrize("users", list(itertools.permutations(["a", "b", "c", "d"])))
def test_cycle_matches_oracle_all_orders(users):
    w = World(nimbus("x", cores=8), openstack("y", cores=8))
    for t, u in enumerate(users):
        w.matchmaker.submit(u, "prod", WHOLE_NODE, 3600, now=t)
    c = creds(*users)
    res = cycle(w, CloudScheduler(), now=10, credentials=c)
    boots, starved = oracle_cycle(list(w.matchmaker.queue), w.clouds,
                                  list(w.instances.values()), 10, w.images, c)
    assert [(b.owner, b.image, b.target_cloud) for b in res.boots] == boots
    assert res.starved == starved
    assert [b.owner for b in res.boots] == list(users[:2])


def test_cycle_is_pure():
    w = World(nimbus(cores=16))
    w.running_vm("victoria", owner="bob")
    for u in ("alice", "bob"):
        for _ in range(20):
            w.matchmaker.submit(u, "prod", WHOLE_NODE, 3600)
    before = [(j.job_id, j.state) for j in w.matchmaker.queue]
    first, second = cycle(w, CloudScheduler()), cycle(w, CloudScheduler())
    assert first == second
    assert [(j.job_id, j.state) for j in w.matchmaker.queue] == before
    assert w.connectors["victoria"].state.committed_cores == 8


def test_partition_split_keeps_pools_apart():
    sched = CloudScheduler(SchedulerConfig(partition_policy=PARTITION_SPLIT, whole_node_fraction=0.5))
    w = World(nimbus(cores=16))
    w.running_vm("victoria")  # fills the whole-node half
    for _ in range(9):
        w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    w.matchmaker.match_cycle(0)
    w.matchmaker.submit("bob", "prod", SINGLE_CORE, 3600)
    res = cycle(w, sched)
    assert [(b.owner, b.whole_node) for b in res.boots] == [("bob", False)]
    assert res.starved == ["alice"]


# -- rebalance ---------------------------------------------------------------

def _hog_world():
    w = World(nimbus(cores=48))
    vms = [w.running_vm("victoria", owner="alice", now=t) for t in range(6)]
    for vm in vms:
        for _ in range(8):
            w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    w.matchmaker.match_cycle(10)
    for _ in range(50):
        w.matchmaker.submit("bob", "prod", WHOLE_NODE, 3600, now=20)
    return w, vms


def test_rebalance_retires_newest_instance_of_rich_user():
    w, vms = _hog_world()
    res = cycle(w, CloudScheduler(), now=60)
    assert res.starved == ["bob"]
    victim, req = res.rebalance
    assert victim == vms[-1]
    assert (req.owner, req.target_cloud) == ("bob", "victoria")


def test_rebalance_disabled():
    w, _ = _hog_world()
    assert cycle(w, CloudScheduler(SchedulerConfig(rebalance_enabled=False)), now=60).rebalance is None


def test_rebalance_single_user_is_noop():
    w = World(nimbus(cores=16))
    w.running_vm("victoria")
    w.running_vm("victoria")
    for _ in range(40):
        w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    res = cycle(w, CloudScheduler())
    assert res.starved == [] or res.rebalance is None


def test_rebalance_counts_deferred_and_stops_at_gap_one():
    w, vms = _hog_world()
    sched = CloudScheduler()
    deferred = []
    for vm in reversed(vms):
        res = cycle(w, sched, now=60, deferred=deferred)
        if res.rebalance is None:
            break
        victim, req = res.rebalance
        w.matchmaker.drain(victim, 60)
        deferred.append(req)
    assert len(deferred) == 3


@pytest.mark.parametrize("order", list(itertools.permutations(["a", "b"])))
def test_rebalance_owner_matches_oracle(order):
    w = World(nimbus(cores=64))
    for t, u in enumerate(order):
        for k in range(4):
            w.running_vm("victoria", owner=u, now=t * 10 + k)
    for _ in range(5):
        w.matchmaker.submit("c", "prod", WHOLE_NODE, 3600)
    res = cycle(w, CloudScheduler(), now=100, credentials=creds("a", "b", "c"))
    assert res.starved == ["c"]
    victim, _ = res.rebalance
    assert w.instances[victim].owner == oracle_rebalance_owner(list(w.instances.values()), ["c"])
    assert w.instances[victim].owner == order[0]


# -- lifecycle sweep ---------------------------------------------------------

def test_error_instance_killed():
    w = World(nimbus())
    vm = w.running_vm("victoria", cred=proxy(lifetime=LONG))
    w.connectors["victoria"].fail(vm, 5)
    assert [(a.vm_id, a.action, a.reason) for a in CloudScheduler().lifecycle_sweep(w.instances.values(), 10)] \
        == [(vm, "kill", "error")]


def test_expiring_proxy_kills():
    w = World(nimbus())
    vm = w.running_vm("victoria", cred=proxy(issued_at=0, lifetime=43200))
    sched = CloudScheduler()
    assert sched.lifecycle_sweep(w.instances.values(), 43200 - 901) == []
    (act,) = sched.lifecycle_sweep(w.instances.values(), 43200 - 600)
    assert (act.vm_id, act.action, act.reason) == (vm, "kill", "proxy-expiry")


def test_openstack_never_expires():
    w = World(openstack())
    w.running_vm("melbourne", cred=proxy(lifetime=60))
    assert CloudScheduler().lifecycle_sweep(w.instances.values(), 30 * 86400) == []


def test_lifetime_drain_then_kill():
    w = World(nimbus())
    vm = w.running_vm("victoria", cred=proxy(lifetime=LONG))
    sched = CloudScheduler()
    week = 604800
    assert sched.lifecycle_sweep(w.instances.values(), week - 3601) == []
    (act,) = sched.lifecycle_sweep(w.instances.values(), week - 1800)
    assert (act.vm_id, act.action) == (vm, "drain")
    (act,) = sched.lifecycle_sweep(w.instances.values(), week - 30)
    assert act.action == "kill"


def test_idle_instances():
    w = World(nimbus())
    busy = w.running_vm("victoria")
    spare = w.running_vm("victoria")
    w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    w.matchmaker.match_cycle(0)
    sched = CloudScheduler()
    assert sched.idle_instances(w.instances.values(), w.matchmaker.queue) == [spare]
    w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    w.matchmaker.submit("alice", "prod", WHOLE_NODE, 3600)
    assert busy not in sched.idle_instances(w.instances.values(), w.matchmaker.queue)


@pytest.mark.parametrize("kw", [dict(cycle_period=0), dict(proxy_expiry_margin=30),
                                dict(partition_policy="bogus"), dict(whole_node_fraction=2)])
def test_config_validation(kw):
    with pytest.raises(ValueError):
        SchedulerConfig(**kw)
