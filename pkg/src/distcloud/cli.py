"""Command-line front end.

Administrative actions edit a scenario file rather than a live system, so
every run stays replayable from its inputs.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path
from typing import List, Optional

import yaml

from .images import save_duration
from .model import DistCloudError
from .scenario import InvalidScenario, edit_document, load_scenario
from .simulator import run as run_scenario

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID = 0, 1, 2


class UsageError(Exception):
    pass


def _err(msg: str) -> None:
    print(f"distcloud: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    scenario = load_scenario(args.scenario)
    result = run_scenario(scenario, args.seed)
    out = Path(args.out)
    result.write(out)
    s = result.report.summary()
    print(f"completed={s['completed']} failed={s['failed']} "
          f"efficiency={s['aggregate_efficiency']:.4f} end_time={s['end_time']} "
          f"log_sha256={result.log.digest()} out={out}")
    return EXIT_OK


def cmd_submit(args) -> int:
    spec = yaml.safe_load(args.inline)
    if not isinstance(spec, dict):
        raise UsageError("--inline must be a mapping, e.g. '{owner: alice, vm_type: prod, runtime_cpu: 3600}'")
    edit_document(args.scenario, lambda doc: doc.setdefault("workload", []).append(spec))
    print(f"appended job spec to {args.scenario}")
    return EXIT_OK


def cmd_status(args) -> int:
    path = Path(args.run_dir) / "summary.json"
    try:
        summary = json.loads(path.read_text())
    except FileNotFoundError:
        raise UsageError(f"{path} not found; pass a directory written by 'run'")
    except json.JSONDecodeError as exc:
        raise UsageError(f"{path} is not valid JSON: {exc}")
    jobs = summary.get("jobs", {})
    print("jobs: " + " ".join(f"{k}={v}" for k, v in jobs.items()))
    print(f"completed={summary['completed']} failed={summary['failed']} "
          f"io_faults={summary['io_faults']} orphaned={summary['orphaned']}")
    print(f"efficiency={summary['aggregate_efficiency']:.4f} "
          f"wait_mean={summary['queue_wait']['mean']:.1f}s wait_p95={summary['queue_wait']['p95']:.0f}s")
    for cloud in summary.get("clouds", []):
        done = summary["per_cloud_completed"].get(cloud["name"], 0)
        print(f"  {cloud['name']:<12} {cloud['status']:<11} instances={len(cloud['instances'])} "
              f"cores={cloud['committed_cores']}/{cloud['total_cores']} completed={done}")
    return EXIT_OK


def cmd_cloud(args) -> int:
    name = args.name

    def edit(doc):
        clouds = doc.setdefault("clouds", [])
        idx = next((i for i, c in enumerate(clouds) if c.get("name") == name), None)
        if args.action == "add":
            if idx is not None:
                raise UsageError(f"cloud {name!r} already exists")
            entry = {"name": name, "family": args.family, "hypervisor": args.hypervisor,
                     "total_cores": args.total_cores, "total_memory_mb": args.total_memory_mb,
                     "scratch_pool_gb": args.scratch_pool_gb, "priority": args.priority}
            if args.group_key:
                entry["group_key"] = args.group_key
            if args.boot_fixed_delay is not None:
                entry["boot_fixed_delay"] = args.boot_fixed_delay
            if args.image_bandwidth is not None:
                entry["image_bandwidth_gb_per_s"] = args.image_bandwidth
            clouds.append(entry)
            return
        if idx is None:
            raise UsageError(f"no cloud named {name!r}")
        if args.action == "remove":
            del clouds[idx]
        else:
            clouds[idx]["status"] = "Active" if args.off else "Maintenance"

    edit_document(args.scenario, edit)
    print(f"cloud {args.action} {name}: ok")
    return EXIT_OK


def cmd_vm(args) -> int:
    if args.at < 0:
        raise UsageError("--at must be >= 0")
    fault = {"time": args.at, "kind": "VMFail", "vm_id": args.vm_id, "action": "stop"}
    edit_document(args.scenario, lambda doc: doc.setdefault("faults", []).append(fault))
    print(f"scheduled stop of {args.vm_id} at {args.at}")
    return EXIT_OK


def cmd_image(args) -> int:
    if args.action == "list":
        scenario = load_scenario(args.scenario)
        print(f"{'id':<20} {'owner':<12} {'size_gb':>8} {'hypervisors':<10} {'available_at':>12}")
        for spec in sorted(scenario.images, key=lambda s: s.image.image_id):
            im = spec.image
            hvs = ",".join(sorted(h.value for h in im.hypervisors))
            print(f"{im.image_id:<20} {im.owner:<12} {im.size_gb:>8g} {hvs:<10} {spec.available_at:>12}")
        return EXIT_OK

    if not args.image_id or not args.owner or args.size_gb is None or not args.variant:
        raise UsageError("image save needs IMAGE_ID, --owner, --size-gb and at least one --variant")
    variants = []
    for v in args.variant:
        hv, sep, loc = v.partition("=")
        if not sep:
            raise UsageError(f"--variant expects HYPERVISOR=LOCATION, got {v!r}")
        variants.append({"hypervisor": hv, "location": loc})

    def edit(doc):
        images = doc.setdefault("images", [])
        if any(im.get("image_id") == args.image_id for im in images):
            raise UsageError(f"image {args.image_id!r} already exists")
        images.append({"image_id": args.image_id, "owner": args.owner, "size_gb": args.size_gb,
                       "variants": variants, "saved_at": args.at})

    edit_document(args.scenario, edit)
    print(f"image {args.image_id} available at {args.at + save_duration(args.size_gb)}")
    return EXIT_OK


def cmd_replay(args) -> int:
    a = Path(args.log_a).read_bytes()
    b = Path(args.log_b).read_bytes()
    if a == b:
        print("identical")
        return EXIT_OK
    la, lb = a.decode().splitlines(), b.decode().splitlines()
    for i, (x, y) in enumerate(zip(la, lb)):
        if x != y:
            print(f"logs differ at line {i + 1}:\n  < {x}\n  > {y}")
            break
    else:
        print(f"logs differ in length: {len(la)} vs {len(lb)} lines")
    return EXIT_RUNTIME


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="distcloud", description="Batch scheduling over simulated IaaS clouds.")
    sub = p.add_subparsers(dest="command", required=True)

    r = sub.add_parser("run", help="run a scenario and write events.log, samples.csv, summary.json")
    r.add_argument("scenario")
    r.add_argument("--seed", type=int, default=None)
    r.add_argument("--out", default="run-out")
    r.set_defaults(func=cmd_run)

    s = sub.add_parser("submit", help="append a job spec to a scenario file")
    s.add_argument("scenario")
    s.add_argument("--inline", required=True, help="job spec as a YAML/JSON mapping")
    s.set_defaults(func=cmd_submit)

    st = sub.add_parser("status", help="summarize a finished run directory")
    st.add_argument("run_dir")
    st.set_defaults(func=cmd_status)

    c = sub.add_parser("cloud", help="add, remove or put a cloud into maintenance")
    c.add_argument("action", choices=("add", "remove", "maintain"))
    c.add_argument("name")
    c.add_argument("--scenario", required=True)
    c.add_argument("--family", choices=("nimbus-like", "openstack-like"), default="nimbus-like")
    c.add_argument("--hypervisor", choices=("kvm", "xen"), default="kvm")
    c.add_argument("--total-cores", type=int, default=64)
    c.add_argument("--total-memory-mb", type=int, default=262144)
    c.add_argument("--scratch-pool-gb", type=int, default=0)
    c.add_argument("--priority", type=int, default=0)
    c.add_argument("--group-key", default=None)
    c.add_argument("--boot-fixed-delay", type=int, default=None)
    c.add_argument("--image-bandwidth", type=float, default=None)
    c.add_argument("--off", action="store_true", help="with maintain: return the cloud to service")
    c.set_defaults(func=cmd_cloud)

    v = sub.add_parser("vm", help="schedule an administrative VM stop")
    v.add_argument("action", choices=("stop",))
    v.add_argument("vm_id")
    v.add_argument("--at", type=int, required=True)
    v.add_argument("--scenario", required=True)
    v.set_defaults(func=cmd_vm)

    im = sub.add_parser("image", help="save or list catalog images")
    im.add_argument("action", choices=("save", "list"))
    im.add_argument("image_id", nargs="?")
    im.add_argument("--scenario", required=True)
    im.add_argument("--owner")
    im.add_argument("--size-gb", type=float)
    im.add_argument("--variant", action="append", help="HYPERVISOR=LOCATION, repeatable")
    im.add_argument("--at", type=int, default=0)
    im.set_defaults(func=cmd_image)

    rp = sub.add_parser("replay", help="byte-compare two event logs")
    rp.add_argument("log_a")
    rp.add_argument("log_b")
    rp.set_defaults(func=cmd_replay)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except InvalidScenario as exc:
        for problem in exc.problems:
            _err(f"invalid scenario: {problem}")
        return EXIT_INVALID
    except (UsageError, yaml.YAMLError) as exc:
        _err(str(exc))
        return EXIT_INVALID
    except FileNotFoundError as exc:
        _err(f"no such file: {exc.filename}")
        return EXIT_INVALID
    except (DistCloudError, OSError) as exc:
        _err(f"{type(exc).__name__}: {exc}")
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
