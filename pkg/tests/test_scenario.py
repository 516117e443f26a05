import copy
import random

import pytest
import yaml

from distcloud.model import CloudFamily, Hypervisor
from distcloud.scenario import (
    GeneratorSpec, InvalidScenario, JobSpec, edit_document, load_document, load_scenario,
    parse_scenario, save_document,
)

from conftest import minimal_doc


def problems(doc):
    with pytest.raises(InvalidScenario) as exc:
        parse_scenario(doc)
    return exc.value.problems


def test_minimal_parses():
    s = parse_scenario(minimal_doc())
    assert [c.name for c in s.clouds] == ["victoria", "melbourne"]
    assert s.clouds[0].family is CloudFamily.NIMBUS and s.clouds[1].hypervisor is Hypervisor.KVM
    assert isinstance(s.workload[0], JobSpec) and isinstance(s.workload[-1], GeneratorSpec)
    assert len(s.workload) == 11
    assert s.scheduler.cycle_period == 60


def test_expanded_workload_sorted_and_seeded():
    s = parse_scenario(minimal_doc())
    a = s.expand_workload(random.Random(1))
    b = s.expand_workload(random.Random(1))
    assert a == b and len(a) == 16
    assert [j.arrival for j in a] == sorted(j.arrival for j in a)
    assert a != s.expand_workload(random.Random(2))


def test_jitter_stays_in_band():
    s = parse_scenario(minimal_doc())
    bob = [j for j in s.expand_workload(random.Random(9)) if j.owner == "bob"]
    assert all(1600 <= j.runtime_cpu <= 2400 for j in bob)


@pytest.mark.parametrize("edit, path", [
    (lambda d: d["clouds"][1].update(family="eucalyptus"), "clouds[1].family"),
    (lambda d: d["clouds"][0].pop("total_cores"), "clouds[0].total_cores"),
    (lambda d: d["clouds"][0].update(colour="red"), "clouds[0].colour"),
    (lambda d: d["workload"][0].update(owner="mallory"), "workload[0].owner"),
    (lambda d: d["workload"][0].update(vm_type="nope"), "workload[0].vm_type"),
    (lambda d: d["workload"][0].update(runtime_cpu=0), "workload[0].runtime_cpu"),
    (lambda d: d["workload"][0]["request"].update(cores="eight"), "workload[0].request.cores"),
    (lambda d: d["users"].append({"name": "alice"}), "users[2]"),
    (lambda d: d.update(horizon=-5), "horizon"),
    (lambda d: d.update(scheduler={"cycle_period": 0}), "scheduler"),
    (lambda d: d.update(faults=[{"time": 5, "kind": "Meteor"}]), "faults[0].kind"),
    (lambda d: d.update(faults=[{"time": 5, "kind": "CloudMaintenance", "cloud": "x"}]), "faults[0].cloud"),
    (lambda d: d["images"][0].update(saved_at=0), "workload[0].arrival"),
])
def test_error_names_field(edit, path):
    doc = minimal_doc()
    edit(doc)
    assert any(p.startswith(path) for p in problems(doc)), problems(doc)


def test_all_problems_reported_at_once():
    doc = minimal_doc()
    doc["clouds"][0]["family"] = "x"
    doc["workload"][0]["owner"] = "nobody"
    assert len(problems(doc)) >= 2


def test_dependency_must_point_backwards():
    doc = minimal_doc()
    doc["workload"][0]["depends_on"] = [5]
    assert any("depends on" in p for p in problems(doc))


def test_openstack_needs_group_key():
    doc = minimal_doc()
    del doc["clouds"][1]["group_key"]
    s = parse_scenario(doc)  # accepted; such a cloud can never boot anything
    assert s.clouds[1].group_key is None


def test_round_trip(tmp_path):
    path = tmp_path / "s.yaml"
    save_document(minimal_doc(), path)
    assert load_document(path) == minimal_doc()
    assert load_scenario(path) == parse_scenario(minimal_doc())


def test_bad_yaml(tmp_path):
    path = tmp_path / "s.yaml"
    path.write_text("clouds: [unclosed\n")
    with pytest.raises(InvalidScenario):
        load_scenario(path)


def test_edit_document_validates_before_writing(tmp_path):
    path = tmp_path / "s.yaml"
    save_document(minimal_doc(), path)
    before = path.read_text()
    with pytest.raises(InvalidScenario):
        edit_document(path, lambda d: d["clouds"].append({"name": "bad"}))
    assert path.read_text() == before
    edit_document(path, lambda d: d.update(horizon=999))
    assert yaml.safe_load(path.read_text())["horizon"] == 999


def test_with_seed():
    s = parse_scenario(minimal_doc())
    assert s.with_seed(42).seed == 42 and s.seed == 1
