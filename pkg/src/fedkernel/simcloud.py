"""Simulated member clouds: resource pools, VM lifecycle, a local identity
provider, setup channels and a container cache: everything the federation
needs from a real cloud, as deterministic in-process actors.

Every operation, successful or not, appends exactly one entry to a global
call log; cross-module tests use that log as their ordering oracle. Faults
are planned per (operation, invocation ordinal) so abort paths can be driven
deterministically.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Optional

from .errors import (BadCredential, CapacityExhausted, ChannelAlreadyOpen,
                     InjectedFault, NoChannel, UnknownVm)
from .identity import IdpDescriptor, Principal

CAPABILITIES = ("RESOURCE_MGMT", "VM_MGMT", "IDENTITY")


@dataclass(frozen=True)
class CallRecord:
    seq: int
    cloud: str
    operation: str
    args: dict
    outcome: str  # "ok" or the error class name


@dataclass
class CallLog:
    entries: list[CallRecord] = field(default_factory=list)

    def append(self, cloud: str, operation: str, args: dict, outcome: str) -> None:
        self.entries.append(CallRecord(len(self.entries), cloud, operation,
                                       dict(args), outcome))

    def for_cloud(self, cloud: str) -> list[CallRecord]:
        return [e for e in self.entries if e.cloud == cloud]

    def operations(self, cloud: Optional[str] = None) -> list[str]:
        return [e.operation for e in self.entries if cloud is None or e.cloud == cloud]

    def __len__(self) -> int:
        return len(self.entries)


class SimCloud:
    """One member cloud. All state changes go through :meth:`_call`, which
    consults the fault plan and writes the log entry."""

    def __init__(self, cloud_id: str, pool: int, log: Optional[CallLog] = None,
                 capabilities: tuple[str, ...] = CAPABILITIES):
        self.cloud_id = cloud_id
        self.pool = pool
        self.capabilities = set(capabilities)
        self.vms: dict[str, int] = {}
        self.channel_open = False
        self.container_cache: set[str] = set()
        self.users: dict[str, str] = {}
        self.principals: dict[str, Principal] = {}
        self.fault_plan: dict[tuple[str, int], str] = {}
        self._op_counts: dict[str, int] = {}
        self._vm_counter = 0
        self.log = log if log is not None else CallLog()

    # -- bookkeeping -----------------------------------------------------------

    def add_user(self, user_id: str, credential: str,
                 principal: Optional[Principal] = None) -> None:
        self.users[user_id] = credential
        if principal is not None:
            self.principals[user_id] = principal

    def idp_descriptor(self) -> IdpDescriptor:
        descriptor = IdpDescriptor(cloud_id=self.cloud_id)
        for user_id, credential in self.users.items():
            descriptor.register_user(user_id, credential,
                                     principal=self.principals.get(user_id))
        return descriptor

    def resource_footprint(self) -> tuple[int, int, int]:
        """(free pool, live VMs, open channels): the atomicity oracle."""
        return (self.pool, len(self.vms), 1 if self.channel_open else 0)

    def inject_fault(self, operation: str, ordinal: int,
                     failure: str = "injected fault") -> None:
        """Arrange for the ordinal-th future call of ``operation`` to fail."""
        upcoming = self._op_counts.get(operation, 0) + ordinal
        self.fault_plan[(operation, upcoming)] = failure

    # -- the instrumented call path ------------------------------------------------

    def _call(self, operation: str, fn: Callable[[], object], **args) -> object:
        count = self._op_counts.get(operation, 0) + 1
        self._op_counts[operation] = count
        failure = self.fault_plan.pop((operation, count), None)
        try:
            if failure is not None:
                raise InjectedFault(f"{self.cloud_id}/{operation}#{count}: {failure}")
            result = fn()
        except Exception as exc:
            self.log.append(self.cloud_id, operation, args, type(exc).__name__)
            raise
        self.log.append(self.cloud_id, operation, args, "ok")
        return result

    # -- resource and VM management ---------------------------------------------------

    def create_vm(self, spec_units: int) -> str:
        def do() -> str:
            if spec_units > self.pool:
                raise CapacityExhausted(
                    f"{self.cloud_id}: need {spec_units}, pool {self.pool}")
            self._vm_counter += 1
            vm_id = f"vm-{self.cloud_id}-{self._vm_counter}"
            self.pool -= spec_units
            self.vms[vm_id] = spec_units
            return vm_id

        return self._call("create_vm", do, spec=spec_units)

    def destroy_vm(self, vm_id: str) -> None:
        def do() -> None:
            if vm_id not in self.vms:
                raise UnknownVm(vm_id)
            self.pool += self.vms.pop(vm_id)

        self._call("destroy_vm", do, vm=vm_id)

    # -- setup channel -------------------------------------------------------------------

    def open_setup_channel(self) -> None:
        def do() -> None:
            if self.channel_open:
                raise ChannelAlreadyOpen(self.cloud_id)
            self.channel_open = True

        self._call("open_setup_channel", do)

    def close_setup_channel(self) -> None:
        def do() -> None:
            if not self.channel_open:
                raise NoChannel(self.cloud_id)
            self.channel_open = False

        self._call("close_setup_channel", do)

    def deploy_container(self, name: str) -> None:
        def do() -> None:
            if not self.channel_open:
                raise NoChannel(f"{self.cloud_id}: no setup channel")
            self.container_cache.add(name)

        self._call("deploy_container", do, name=name)

    # -- identity ---------------------------------------------------------------------------

    def local_authenticate(self, user_id: str, credential: str) -> dict:
        def do() -> dict:
            if self.users.get(user_id) != credential:
                raise BadCredential(f"{user_id}@{self.cloud_id}")
            return {"cloud": self.cloud_id, "user": user_id, "asserted": True}

        return self._call("local_authenticate", do, user=user_id)

    # -- generic logged exchanges (configurator steps, bus traffic, notifications) ----------

    def exchange(self, operation: str, **args) -> None:
        self._call(operation, lambda: None, **args)

    def bus_call(self, source_tenant: str, target_tenant: str, endpoint: str) -> None:
        self._call("bus_call", lambda: None, source=source_tenant,
                   target=target_tenant, endpoint=endpoint)


class SimCloudHub:
    """All member clouds of one scenario plus the shared, ordered call log."""

    def __init__(self):
        self.log = CallLog()
        self.clouds: dict[str, SimCloud] = {}

    def add_cloud(self, cloud_id: str, pool: int,
                  capabilities: tuple[str, ...] = CAPABILITIES) -> SimCloud:
        cloud = SimCloud(cloud_id, pool, log=self.log, capabilities=capabilities)
        self.clouds[cloud_id] = cloud
        return cloud

    def cloud(self, cloud_id: str) -> SimCloud:
        return self.clouds[cloud_id]

    def resource_footprint(self) -> dict[str, tuple[int, int, int]]:
        return {cid: c.resource_footprint() for cid, c in self.clouds.items()}

    def conservation_holds(self, initial_totals: dict[str, int]) -> bool:
        """pool + sum of VM sizes must be constant per cloud."""
        for cid, total in initial_totals.items():
            cloud = self.clouds[cid]
            if cloud.pool + sum(cloud.vms.values()) != total:
                return False
        return True
