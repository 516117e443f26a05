"""Batch scheduling over simulated multi-cloud IaaS resources."""

from .model import (
    AuthMode, CloudFamily, CloudSite, CloudStatus, Credential, Hypervisor, ImageVariant, Job,
    JobState, ResourceRequest, VMImage, VMInstance, VMState, validate_boot_parameters,
)
from .scenario import InvalidScenario, Scenario, load_scenario, parse_scenario
from .scheduler import CloudScheduler, SchedulerConfig
from .simulator import EventLog, RunResult, Simulator, run

__version__ = "0.1.0"

__all__ = [
    "AuthMode", "CloudFamily", "CloudScheduler", "CloudSite", "CloudStatus", "Credential",
    "EventLog", "Hypervisor", "ImageVariant", "InvalidScenario", "Job", "JobState",
    "ResourceRequest", "RunResult", "Scenario", "SchedulerConfig", "Simulator", "VMImage",
    "VMInstance", "VMState", "load_scenario", "parse_scenario", "run", "validate_boot_parameters",
]
