"""Additive secret sharing across three or more computing servers.

A secret x splits into n shares: n-1 uniform draws over Z_M and a final share
that makes the sum come out to x mod M, with M = 2^64. Any proper subset of
shares is marginally uniform, so a single server learns nothing about the
inputs it helps aggregate. Servers are in-process sequential actors; every
share and partial sum they exchange goes through a recorded message log so
privacy claims are directly testable.

A deployment hosting the servers must span at least three distinct member
clouds; two colluding hosts would otherwise reconstruct inputs outright.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional, Sequence

from .errors import DuplicateIndex, MissingShare, Overflow, TooFewServers

MODULUS = 1 << 64
MIN_SERVERS = 3


@dataclass(frozen=True)
class Share:
    server_index: int
    value: int  # in [0, MODULUS)


@dataclass(frozen=True)
class SmcDeployment:
    tenant: str
    placements: tuple[tuple[int, str], ...]  # (server_index, cloud_id)

    def __post_init__(self):
        if len(self.placements) < MIN_SERVERS:
            raise TooFewServers(
                f"{len(self.placements)} servers; at least {MIN_SERVERS} required")
        clouds = {cloud for _, cloud in self.placements}
        if len(clouds) < MIN_SERVERS:
            raise TooFewServers(
                f"servers span only {len(clouds)} clouds; more than two members required")

    @property
    def server_count(self) -> int:
        return len(self.placements)


def share(secret: int, n: int = MIN_SERVERS,
          rng: Optional[random.Random] = None) -> list[Share]:
    if n < MIN_SERVERS:
        raise TooFewServers(f"n={n}; at least {MIN_SERVERS} required")
    rng = rng or random.Random()
    secret %= MODULUS
    blinds = [rng.randrange(MODULUS) for _ in range(n - 1)]
    last = (secret - sum(blinds)) % MODULUS
    return [Share(i, v) for i, v in enumerate(blinds + [last])]


def reconstruct(shares: Sequence[Share]) -> int:
    seen: dict[int, int] = {}
    for s in shares:
        if s.server_index in seen:
            raise DuplicateIndex(str(s.server_index))
        seen[s.server_index] = s.value
    for index in range(len(seen)):
        if index not in seen:
            raise MissingShare(str(index))
    return sum(seen.values()) % MODULUS


class AggregateOp(Enum):
    SUM = "SUM"
    MEAN = "MEAN"


@dataclass(frozen=True)
class Message:
    sender: str
    recipient: str
    kind: str  # "share" | "partial"
    value: int


@dataclass
class ComputeServer:
    """Sequential actor: accumulates the shares addressed to it, reveals
    only its partial sum."""

    index: int
    cloud_id: str
    inbox: list[Message] = field(default_factory=list)

    def receive(self, message: Message) -> None:
        self.inbox.append(message)

    def partial_sum(self) -> int:
        return sum(m.value for m in self.inbox if m.kind == "share") % MODULUS


@dataclass(frozen=True)
class AggregateResult:
    op: AggregateOp
    total: int
    count: int
    mean: Optional[Fraction]
    message_log: tuple[Message, ...]

    @property
    def value(self):
        return self.mean if self.op is AggregateOp.MEAN else self.total


def smc_aggregate(inputs: Sequence[int], op: AggregateOp,
                  deployment: SmcDeployment,
                  rng: Optional[random.Random] = None) -> AggregateResult:
    """Share every input, sum locally per server, reconstruct the partials.

    Servers never exchange raw input shares among themselves: each input
    party sends one share directly to each server, and the only values a
    server emits are its partial sums.
    """
    rng = rng or random.Random()
    n = deployment.server_count
    bound = MODULUS // max(1, len(inputs))
    for x in inputs:
        if not 0 <= x < bound:
            raise Overflow(f"input {x} outside [0, {bound}) for {len(inputs)} inputs")

    servers = [ComputeServer(i, cloud) for i, cloud in deployment.placements]
    log: list[Message] = []

    for party, secret in enumerate(inputs):
        for piece in share(secret, n, rng):
            message = Message(sender=f"party-{party}",
                              recipient=f"server-{piece.server_index}",
                              kind="share", value=piece.value)
            log.append(message)
            servers[piece.server_index].receive(message)

    partials = []
    for server in servers:
        value = server.partial_sum()
        message = Message(sender=f"server-{server.index}", recipient="combiner",
                          kind="partial", value=value)
        log.append(message)
        partials.append(Share(server.index, value))

    total = reconstruct(partials)
    count = len(inputs)
    mean = Fraction(total, count) if op is AggregateOp.MEAN and count else None
    return AggregateResult(op, total, count, mean, tuple(log))


def server_view(result: AggregateResult, server_index: int) -> list[int]:
    """Every share value one server observed: the material for uniformity checks."""
    me = f"server-{server_index}"
    return [m.value for m in result.message_log if m.recipient == me and m.kind == "share"]
