"""Scenario files: loading, validation and round-tripping.

A scenario is one YAML document. Field names follow the domain types
(`CloudSite`, `VMImage`, `ResourceRequest`, `SchedulerConfig`). Problems are
reported with the path of the offending field, e.g. ``clouds[1].family``.
"""

from __future__ import annotations

import copy
import dataclasses
import random
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import yaml

from .images import save_duration
from .model import (
    PROXY_LIFETIME, AuthMode, CloudFamily, CloudSite, CloudStatus, DistCloudError,
    Hypervisor, ImageVariant, ResourceRequest, VMImage,
)
from .scheduler import SchedulerConfig
from .swcache import StageinCost

FAULT_KINDS = ("VMFail", "CloudMaintenance", "CredentialRenewal")


class InvalidScenario(DistCloudError):
    def __init__(self, problems: List[str]):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


@dataclass(frozen=True)
class UserSpec:
    name: str
    proxy_issued_at: int = 0
    proxy_lifetime: int = PROXY_LIFETIME


@dataclass(frozen=True)
class ImageSpec:
    image: VMImage
    saved_at: Optional[int] = None

    @property
    def available_at(self) -> int:
        if self.saved_at is None:
            return 0
        return self.saved_at + save_duration(self.image.size_gb)


@dataclass(frozen=True)
class JobSpec:
    owner: str
    vm_type: str
    request: ResourceRequest
    arrival: int
    runtime_cpu: int
    io_cost: int = 0
    depends_on: Tuple[int, ...] = ()
    cloud_constraint: Optional[Tuple[str, ...]] = None


@dataclass(frozen=True)
class GeneratorSpec:
    """Synthetic arrivals: exponential gaps, uniform runtime jitter."""
    count: int
    owner: str
    vm_type: str
    request: ResourceRequest
    runtime_cpu: int
    start: int = 0
    interarrival: float = 0.0
    runtime_jitter: float = 0.0
    io_cost: int = 0
    cloud_constraint: Optional[Tuple[str, ...]] = None

    def expand(self, rng: random.Random) -> List[JobSpec]:
        out = []
        t = float(self.start)
        for _ in range(self.count):
            if self.interarrival > 0:
                t += rng.expovariate(1.0 / self.interarrival)
            runtime = self.runtime_cpu
            if self.runtime_jitter > 0:
                runtime = round(self.runtime_cpu * (1 + rng.uniform(-self.runtime_jitter, self.runtime_jitter)))
            out.append(JobSpec(self.owner, self.vm_type, self.request, int(t), max(1, runtime),
                               self.io_cost, (), self.cloud_constraint))
        return out


@dataclass(frozen=True)
class FaultSpec:
    time: int
    kind: str
    params: Tuple[Tuple[str, Any], ...] = ()

    def get(self, key, default=None):
        return dict(self.params).get(key, default)


@dataclass
class Scenario:
    clouds: List[CloudSite]
    images: List[ImageSpec]
    users: List[UserSpec]
    workload: List[Union[JobSpec, GeneratorSpec]] = field(default_factory=list)
    scheduler: SchedulerConfig = SchedulerConfig()
    faults: List[FaultSpec] = field(default_factory=list)
    horizon: int = 86400
    seed: int = 0
    stagein: Dict[str, StageinCost] = field(default_factory=dict)
    sample_period: int = 300
    io_fault_rate_per_hour: float = 0.1
    stop_on_quiescence: bool = True

    def with_seed(self, seed: int) -> "Scenario":
        return dataclasses.replace(self, seed=seed)

    def expand_workload(self, rng: random.Random) -> List[JobSpec]:
        """Concrete jobs in submission order; job ids are positions + 1."""
        jobs: List[Tuple[int, int, JobSpec]] = []
        for entry in self.workload:
            specs = entry.expand(rng) if isinstance(entry, GeneratorSpec) else [entry]
            for spec in specs:
                jobs.append((spec.arrival, len(jobs), spec))
        jobs.sort(key=lambda t: (t[0], t[1]))
        return [spec for _, _, spec in jobs]


# -- parsing -------------------------------------------------------------------

class _Reader:
    def __init__(self):
        self.problems: List[str] = []

    def fail(self, path: str, msg: str):
        self.problems.append(f"{path}: {msg}")

    def mapping(self, value, path) -> Dict[str, Any]:
        if value is None:
            return {}
        if not isinstance(value, dict):
            self.fail(path, "expected a mapping")
            return {}
        return value

    def seq(self, value, path) -> List[Any]:
        if value is None:
            return []
        if not isinstance(value, list):
            self.fail(path, "expected a list")
            return []
        return value

    def take(self, d, key, path, kind, default=dataclasses.MISSING):
        if key not in d or d[key] is None:
            if default is dataclasses.MISSING:
                self.fail(f"{path}.{key}", "required")
                return None
            return default
        value = d[key]
        if kind is int:
            if isinstance(value, bool) or not isinstance(value, int):
                self.fail(f"{path}.{key}", f"expected an integer, got {value!r}")
                return default if default is not dataclasses.MISSING else None
        elif kind is float:
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                self.fail(f"{path}.{key}", f"expected a number, got {value!r}")
                return default if default is not dataclasses.MISSING else None
            value = float(value)
        elif kind is bool:
            if not isinstance(value, bool):
                self.fail(f"{path}.{key}", f"expected true/false, got {value!r}")
                return default if default is not dataclasses.MISSING else None
        elif kind is str:
            if not isinstance(value, str) or not value:
                self.fail(f"{path}.{key}", f"expected a non-empty string, got {value!r}")
                return default if default is not dataclasses.MISSING else None
        elif isinstance(kind, type) and issubclass(kind, str):  # enums
            try:
                value = kind(value)
            except ValueError:
                allowed = ", ".join(m.value for m in kind)
                self.fail(f"{path}.{key}", f"unknown value {value!r} (expected one of {allowed})")
                return default if default is not dataclasses.MISSING else None
        return value

    def unknown(self, d, allowed, path):
        for key in d:
            if key not in allowed:
                self.fail(f"{path}.{key}", "unknown field")


_CLOUD_FIELDS = ("name", "family", "hypervisor", "total_cores", "total_memory_mb", "scratch_pool_gb",
                 "scratch_safeguard", "status", "auth_mode", "boot_fixed_delay",
                 "image_bandwidth_gb_per_s", "priority", "group_key")
_REQUEST_FIELDS = ("cores", "memory_mb", "arch", "blank_space_gb", "instance_type")
_JOB_FIELDS = ("owner", "vm_type", "request", "arrival", "runtime_cpu", "io_cost", "count",
               "depends_on", "cloud_constraint")
_GEN_FIELDS = ("count", "owner", "vm_type", "request", "runtime_cpu", "start", "interarrival",
               "runtime_jitter", "io_cost", "cloud_constraint")
_TOP_FIELDS = ("clouds", "images", "users", "workload", "scheduler", "faults", "horizon", "seed",
               "stagein", "sample_period", "io_fault_rate_per_hour", "stop_on_quiescence")


def _cloud(r: _Reader, raw, path) -> Optional[CloudSite]:
    d = r.mapping(raw, path)
    r.unknown(d, _CLOUD_FIELDS, path)
    kw = dict(
        name=r.take(d, "name", path, str),
        family=r.take(d, "family", path, CloudFamily),
        hypervisor=r.take(d, "hypervisor", path, Hypervisor),
        total_cores=r.take(d, "total_cores", path, int),
        total_memory_mb=r.take(d, "total_memory_mb", path, int),
        scratch_pool_gb=r.take(d, "scratch_pool_gb", path, int, 0),
        scratch_safeguard=r.take(d, "scratch_safeguard", path, bool, True),
        status=r.take(d, "status", path, CloudStatus, CloudStatus.ACTIVE),
        auth_mode=r.take(d, "auth_mode", path, AuthMode, None),
        boot_fixed_delay=r.take(d, "boot_fixed_delay", path, int, 120),
        image_bandwidth_gb_per_s=r.take(d, "image_bandwidth_gb_per_s", path, float, 0.1),
        priority=r.take(d, "priority", path, int, 0),
        group_key=r.take(d, "group_key", path, str, None),
    )
    if any(kw[k] is None for k in ("name", "family", "hypervisor", "total_cores", "total_memory_mb")):
        return None
    try:
        return CloudSite(**kw)
    except ValueError as exc:
        r.fail(path, str(exc))
        return None


def _image(r: _Reader, raw, path) -> Optional[ImageSpec]:
    d = r.mapping(raw, path)
    r.unknown(d, ("image_id", "owner", "size_gb", "variants", "saved_at"), path)
    image_id = r.take(d, "image_id", path, str)
    owner = r.take(d, "owner", path, str)
    size = r.take(d, "size_gb", path, float)
    saved_at = r.take(d, "saved_at", path, int, None)
    variants = []
    for i, v in enumerate(r.seq(d.get("variants"), f"{path}.variants")):
        vp = f"{path}.variants[{i}]"
        vd = r.mapping(v, vp)
        hv = r.take(vd, "hypervisor", vp, Hypervisor)
        loc = r.take(vd, "location", vp, str)
        if hv is not None and loc is not None:
            variants.append(ImageVariant(hv, loc))
    if image_id is None or owner is None or size is None:
        return None
    try:
        return ImageSpec(VMImage(image_id, owner, size, frozenset(variants)), saved_at)
    except ValueError as exc:
        r.fail(path, str(exc))
        return None


def _request(r: _Reader, raw, path) -> Optional[ResourceRequest]:
    d = r.mapping(raw, path)
    r.unknown(d, _REQUEST_FIELDS, path)
    kw = dict(
        cores=r.take(d, "cores", path, int, 1),
        memory_mb=r.take(d, "memory_mb", path, int, 2048),
        arch=r.take(d, "arch", path, str, "x86_64"),
        blank_space_gb=r.take(d, "blank_space_gb", path, int, 0),
        instance_type=r.take(d, "instance_type", path, str, None),
    )
    try:
        return ResourceRequest(**kw)
    except (ValueError, TypeError) as exc:
        r.fail(path, str(exc))
        return None


def _names(r: _Reader, d, key, path) -> Optional[Tuple[str, ...]]:
    if d.get(key) is None:
        return None
    items = r.seq(d[key], f"{path}.{key}")
    if not all(isinstance(x, str) and x for x in items):
        r.fail(f"{path}.{key}", "expected a list of names")
        return None
    return tuple(items)


def _workload_entry(r: _Reader, raw, path) -> List[Union[JobSpec, GeneratorSpec]]:
    d = r.mapping(raw, path)
    if "generate" in d:
        r.unknown(d, ("generate",), path)
        gp = f"{path}.generate"
        g = r.mapping(d["generate"], gp)
        r.unknown(g, _GEN_FIELDS, gp)
        kw = dict(
            count=r.take(g, "count", gp, int),
            owner=r.take(g, "owner", gp, str),
            vm_type=r.take(g, "vm_type", gp, str),
            request=_request(r, g.get("request"), f"{gp}.request"),
            runtime_cpu=r.take(g, "runtime_cpu", gp, int),
            start=r.take(g, "start", gp, int, 0),
            interarrival=r.take(g, "interarrival", gp, float, 0.0),
            runtime_jitter=r.take(g, "runtime_jitter", gp, float, 0.0),
            io_cost=r.take(g, "io_cost", gp, int, 0),
            cloud_constraint=_names(r, g, "cloud_constraint", gp),
        )
        if kw["count"] is not None and kw["count"] < 0:
            r.fail(f"{gp}.count", "must be >= 0")
        if kw["runtime_jitter"] is not None and not 0 <= kw["runtime_jitter"] < 1:
            r.fail(f"{gp}.runtime_jitter", "must lie in [0, 1)")
        if any(v is None for k, v in kw.items() if k != "cloud_constraint"):
            return []
        return [GeneratorSpec(**kw)]

    r.unknown(d, _JOB_FIELDS, path)
    count = r.take(d, "count", path, int, 1)
    deps = r.seq(d.get("depends_on"), f"{path}.depends_on")
    if not all(isinstance(x, int) and not isinstance(x, bool) for x in deps):
        r.fail(f"{path}.depends_on", "expected a list of job ids")
        deps = []
    kw = dict(
        owner=r.take(d, "owner", path, str),
        vm_type=r.take(d, "vm_type", path, str),
        request=_request(r, d.get("request"), f"{path}.request"),
        arrival=r.take(d, "arrival", path, int, 0),
        runtime_cpu=r.take(d, "runtime_cpu", path, int),
        io_cost=r.take(d, "io_cost", path, int, 0),
        depends_on=tuple(deps),
        cloud_constraint=_names(r, d, "cloud_constraint", path),
    )
    if any(v is None for k, v in kw.items() if k != "cloud_constraint") or count is None:
        return []
    if kw["runtime_cpu"] < 1:
        r.fail(f"{path}.runtime_cpu", "must be >= 1")
    if kw["io_cost"] < 0:
        r.fail(f"{path}.io_cost", "must be >= 0")
    if kw["arrival"] < 0:
        r.fail(f"{path}.arrival", "must be >= 0")
    return [JobSpec(**kw)] * max(count, 0)


def _fault(r: _Reader, raw, path) -> Optional[FaultSpec]:
    d = r.mapping(raw, path)
    time = r.take(d, "time", path, int)
    kind = r.take(d, "kind", path, str)
    if kind is not None and kind not in FAULT_KINDS:
        r.fail(f"{path}.kind", f"unknown fault kind {kind!r} (expected one of {', '.join(FAULT_KINDS)})")
        return None
    required = {"VMFail": ("vm_id",), "CloudMaintenance": ("cloud",), "CredentialRenewal": ("user",)}
    allowed = {"VMFail": ("vm_id", "action"), "CloudMaintenance": ("cloud", "on", "kill"),
               "CredentialRenewal": ("user", "lifetime")}
    if kind is None or time is None:
        return None
    r.unknown(d, ("time", "kind") + allowed[kind], path)
    for key in required[kind]:
        r.take(d, key, path, str)
    if kind == "VMFail" and d.get("action", "error") not in ("error", "stop"):
        r.fail(f"{path}.action", "expected 'error' or 'stop'")
    if time < 0:
        r.fail(f"{path}.time", "must be >= 0")
    params = tuple(sorted((k, v) for k, v in d.items() if k not in ("time", "kind")))
    return FaultSpec(time, kind, params)


def parse_scenario(doc: Dict[str, Any]) -> Scenario:
    r = _Reader()
    doc = r.mapping(doc, "scenario")
    r.unknown(doc, _TOP_FIELDS, "scenario")

    clouds = [c for i, raw in enumerate(r.seq(doc.get("clouds"), "clouds"))
              if (c := _cloud(r, raw, f"clouds[{i}]")) is not None]
    images = [im for i, raw in enumerate(r.seq(doc.get("images"), "images"))
              if (im := _image(r, raw, f"images[{i}]")) is not None]
    users = []
    for i, raw in enumerate(r.seq(doc.get("users"), "users")):
        p = f"users[{i}]"
        d = r.mapping(raw, p)
        r.unknown(d, ("name", "proxy_issued_at", "proxy_lifetime"), p)
        name = r.take(d, "name", p, str)
        if name is not None:
            users.append(UserSpec(name, r.take(d, "proxy_issued_at", p, int, 0),
                                  r.take(d, "proxy_lifetime", p, int, PROXY_LIFETIME)))
    workload = []
    for i, raw in enumerate(r.seq(doc.get("workload"), "workload")):
        workload.extend(_workload_entry(r, raw, f"workload[{i}]"))
    faults = [f for i, raw in enumerate(r.seq(doc.get("faults"), "faults"))
              if (f := _fault(r, raw, f"faults[{i}]")) is not None]

    sched_raw = r.mapping(doc.get("scheduler"), "scheduler")
    known = {f.name for f in dataclasses.fields(SchedulerConfig)}
    r.unknown(sched_raw, known, "scheduler")
    try:
        sched = SchedulerConfig(**{k: v for k, v in sched_raw.items() if k in known})
    except (ValueError, TypeError) as exc:
        r.fail("scheduler", str(exc))
        sched = SchedulerConfig()

    stagein = {}
    for vm_type, raw in r.mapping(doc.get("stagein"), "stagein").items():
        p = f"stagein.{vm_type}"
        d = r.mapping(raw, p)
        r.unknown(d, ("cold", "warm"), p)
        stagein[vm_type] = StageinCost(r.take(d, "cold", p, int, 300), r.take(d, "warm", p, int, 0))

    scenario = Scenario(
        clouds=clouds, images=images, users=users, workload=workload, scheduler=sched,
        faults=faults,
        horizon=r.take(doc, "horizon", "scenario", int, 86400),
        seed=r.take(doc, "seed", "scenario", int, 0),
        stagein=stagein,
        sample_period=r.take(doc, "sample_period", "scenario", int, 300),
        io_fault_rate_per_hour=r.take(doc, "io_fault_rate_per_hour", "scenario", float, 0.1),
        stop_on_quiescence=r.take(doc, "stop_on_quiescence", "scenario", bool, True),
    )
    _check_references(r, scenario)
    if r.problems:
        raise InvalidScenario(r.problems)
    return scenario


def _check_references(r: _Reader, s: Scenario) -> None:
    if s.horizon is not None and s.horizon <= 0:
        r.fail("horizon", "must be > 0")
    if s.sample_period is not None and s.sample_period <= 0:
        r.fail("sample_period", "must be > 0")
    if s.io_fault_rate_per_hour is not None and not 0 <= s.io_fault_rate_per_hour <= 1:
        r.fail("io_fault_rate_per_hour", "must lie in [0, 1]")

    def dupes(names, path):
        seen = set()
        for i, n in enumerate(names):
            if n in seen:
                r.fail(f"{path}[{i}]", f"duplicate name {n!r}")
            seen.add(n)
    dupes([c.name for c in s.clouds], "clouds")
    dupes([im.image.image_id for im in s.images], "images")
    dupes([u.name for u in s.users], "users")

    clouds = {c.name for c in s.clouds}
    users = {u.name for u in s.users}
    avail = {im.image.image_id: im.available_at for im in s.images}
    for vm_type in s.stagein:
        if vm_type not in avail:
            r.fail(f"stagein.{vm_type}", "unknown image")

    # job ids follow submission order, which needs the expanded workload
    expected_id = 0
    for i, entry in enumerate(s.workload):
        p = f"workload[{i}]"
        if entry.owner not in users:
            r.fail(f"{p}.owner", f"unknown user {entry.owner!r}")
        if entry.vm_type not in avail:
            r.fail(f"{p}.vm_type", f"unknown image {entry.vm_type!r}")
        for c in entry.cloud_constraint or ():
            if c not in clouds:
                r.fail(f"{p}.cloud_constraint", f"unknown cloud {c!r}")
        if isinstance(entry, JobSpec) and entry.vm_type in avail and entry.arrival < avail[entry.vm_type]:
            r.fail(f"{p}.arrival", f"image {entry.vm_type!r} is not saved until {avail[entry.vm_type]}")
        if isinstance(entry, GeneratorSpec) and entry.vm_type in avail and entry.start < avail[entry.vm_type]:
            r.fail(f"{p}.start", f"image {entry.vm_type!r} is not saved until {avail[entry.vm_type]}")

    if not r.problems:
        specs = s.expand_workload(random.Random(s.seed))
        for job_id, spec in enumerate(specs, start=1):
            for dep in spec.depends_on:
                if not 1 <= dep < job_id:
                    r.fail("workload", f"job {job_id} depends on {dep}, which is not submitted before it")

    for i, f in enumerate(s.faults):
        p = f"faults[{i}]"
        if f.kind == "CloudMaintenance" and f.get("cloud") not in clouds:
            r.fail(f"{p}.cloud", f"unknown cloud {f.get('cloud')!r}")
        if f.kind == "CredentialRenewal" and f.get("user") not in users:
            r.fail(f"{p}.user", f"unknown user {f.get('user')!r}")


def load_scenario(path: Union[str, Path]) -> Scenario:
    return parse_scenario(load_document(path))


def load_document(path: Union[str, Path]) -> Dict[str, Any]:
    try:
        with open(path) as fh:
            doc = yaml.safe_load(fh)
    except yaml.YAMLError as exc:
        raise InvalidScenario([f"{path}: not valid YAML ({exc})"]) from exc
    return doc if doc is not None else {}


def save_document(doc: Dict[str, Any], path: Union[str, Path]) -> None:
    with open(path, "w") as fh:
        yaml.safe_dump(doc, fh, sort_keys=False)


def edit_document(path: Union[str, Path], edit) -> Dict[str, Any]:
    """Apply `edit` to the document at `path`; write it back only if it still parses."""
    doc = load_document(path)
    new = copy.deepcopy(doc)
    edit(new)
    parse_scenario(new)
    save_document(new, path)
    return new
