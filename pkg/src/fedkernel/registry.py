"""Append-only, hash-chained governance ledger and its guarded access interface.

The ledger is the federation's source of truth: every governance fact is a
typed record inside a block, each block carries the SHA-256 of its canonical
encoding and the hash of its predecessor. Appends are serialized through a
single logical writer and authorized per component role via crypto-tokens;
reads always observe a prefix of the chain.

"Removal" is modeled as tombstone records: ``get_latest`` hides a tombstoned
key, ``get_history`` keeps the full trail, so evidence never disappears.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Callable, Iterable, Optional

from . import canonical
from .errors import LedgerNotEmpty, ParseError, SeqConflict, Unauthorized


class RecordKind(Enum):
    CONTRACT = "CONTRACT"
    MEMBERSHIP = "MEMBERSHIP"
    SERVICE = "SERVICE"
    ACCESS_POLICY = "ACCESS_POLICY"
    SLA_POLICY = "SLA_POLICY"
    ACCESS_LOG = "ACCESS_LOG"
    SLA_EVIDENCE = "SLA_EVIDENCE"
    MASKING_TABLE = "MASKING_TABLE"
    ANON_HISTORY = "ANON_HISTORY"
    TENANT_CONFIG = "TENANT_CONFIG"


class ComponentRole(Enum):
    FAM = "FAM"
    IWM = "IWM"
    DS = "DS"
    FRM = "FRM"
    DM = "DM"
    ANM = "ANM"


@dataclass(frozen=True)
class GovernanceRecord:
    kind: RecordKind
    key: str
    payload: bytes
    author: str
    seq: int
    tombstone: bool = False

    def to_doc(self) -> dict:
        return {
            "kind": self.kind.value,
            "key": self.key,
            "payload": self.payload.hex(),
            "author": self.author,
            "seq": self.seq,
            "tombstone": self.tombstone,
        }

    @classmethod
    def from_doc(cls, doc: dict) -> "GovernanceRecord":
        return cls(
            kind=RecordKind(doc["kind"]),
            key=doc["key"],
            payload=bytes.fromhex(doc["payload"]),
            author=doc["author"],
            seq=int(doc["seq"]),
            tombstone=bool(doc["tombstone"]),
        )


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: bytes
    timestamp: int
    records: tuple[GovernanceRecord, ...]
    hash: bytes

    @staticmethod
    def body_doc(index: int, prev_hash: bytes, timestamp: int,
                 records: Iterable[GovernanceRecord]) -> dict:
        return {
            "index": index,
            "prev_hash": prev_hash.hex(),
            "timestamp": timestamp,
            "records": [r.to_doc() for r in records],
        }

    @classmethod
    def seal(cls, index: int, prev_hash: bytes, timestamp: int,
             records: Iterable[GovernanceRecord]) -> "Block":
        recs = tuple(records)
        body = cls.body_doc(index, prev_hash, timestamp, recs)
        return cls(index, prev_hash, timestamp, recs, canonical.digest(body))

    def to_doc(self) -> dict:
        doc = self.body_doc(self.index, self.prev_hash, self.timestamp, self.records)
        doc["hash"] = self.hash.hex()
        return doc

    @classmethod
    def from_doc(cls, doc: dict) -> "Block":
        return cls(
            index=int(doc["index"]),
            prev_hash=bytes.fromhex(doc["prev_hash"]),
            timestamp=int(doc["timestamp"]),
            records=tuple(GovernanceRecord.from_doc(r) for r in doc["records"]),
            hash=bytes.fromhex(doc["hash"]),
        )

    def encode_line(self) -> str:
        return canonical.canonical_dumps(self.to_doc())


@dataclass(frozen=True)
class ChainStatus:
    valid: bool
    first_bad_index: Optional[int] = None

    def __bool__(self) -> bool:
        return self.valid


VALID = ChainStatus(True)


def violation(index: int) -> ChainStatus:
    return ChainStatus(False, index)


READ = "read"
APPEND = "append"

_ALL_KINDS = frozenset(RecordKind)
_READ_ANY_BUT_MASKING = frozenset(k for k in RecordKind if k is not RecordKind.MASKING_TABLE)

# Per-role (kind, verb) grants. The masking table is readable by the masking
# service alone; log/evidence kinds are writable only by the monitor role.
AUTHORIZATION_MATRIX: dict[ComponentRole, dict[str, frozenset[RecordKind]]] = {
    ComponentRole.FAM: {
        READ: _READ_ANY_BUT_MASKING,
        APPEND: frozenset({
            RecordKind.CONTRACT, RecordKind.MEMBERSHIP, RecordKind.SERVICE,
            RecordKind.ACCESS_POLICY, RecordKind.SLA_POLICY, RecordKind.TENANT_CONFIG,
        }),
    },
    ComponentRole.IWM: {READ: _READ_ANY_BUT_MASKING, APPEND: frozenset()},
    ComponentRole.DS: {READ: _READ_ANY_BUT_MASKING, APPEND: frozenset()},
    ComponentRole.FRM: {
        READ: _READ_ANY_BUT_MASKING,
        APPEND: frozenset({RecordKind.ACCESS_LOG, RecordKind.SLA_EVIDENCE}),
    },
    ComponentRole.DM: {
        READ: frozenset(_ALL_KINDS),
        APPEND: frozenset({RecordKind.MASKING_TABLE}),
    },
    ComponentRole.ANM: {
        READ: _READ_ANY_BUT_MASKING,
        APPEND: frozenset({RecordKind.ANON_HISTORY}),
    },
}


def role_permits(role: ComponentRole, verb: str, kind: RecordKind) -> bool:
    return kind in AUTHORIZATION_MATRIX[role][verb]


# The validator turns an opaque crypto-token into a component role, raising
# InvalidToken otherwise; supplied by the identity manager at wiring time.
TokenValidator = Callable[[object], ComponentRole]


@dataclass
class Ledger:
    """Single-writer hash chain with optimistic per-key versioning.

    ``path`` enables the append-only file mirror (one canonical block per
    line); ``token_validator`` is the identity hook that maps crypto-tokens
    to component roles.
    """

    token_validator: Optional[TokenValidator] = None
    path: Optional[Path] = None
    _blocks: list[Block] = field(default_factory=list, repr=False)
    _tip_seq: dict[tuple[RecordKind, str], int] = field(default_factory=dict, repr=False)
    _lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    # -- authorization ------------------------------------------------------

    def _role_for(self, token: object) -> ComponentRole:
        if self.token_validator is None:
            from .errors import InvalidToken

            raise InvalidToken("ledger has no token validator configured")
        return self.token_validator(token)

    def _check_read(self, token: object, kind: RecordKind) -> None:
        role = self._role_for(token)
        if not role_permits(role, READ, kind):
            raise Unauthorized(f"role {role.value} may not read {kind.value}")

    # -- writes --------------------------------------------------------------

    def genesis(self, contract_payload: bytes, author: str = "FAM",
                timestamp: int = 0) -> Block:
        with self._lock:
            if self._blocks:
                raise LedgerNotEmpty("genesis may only initialize an empty ledger")
            record = GovernanceRecord(
                kind=RecordKind.CONTRACT, key="contract", payload=contract_payload,
                author=author, seq=0,
            )
            block = Block.seal(0, canonical.ZERO_DIGEST, timestamp, [record])
            self._commit(block)
            return block

    def append(self, token: object, records: list[GovernanceRecord],
               timestamp: int = 0) -> int:
        """Append all ``records`` in one new block, or none of them."""
        role = self._role_for(token)
        if not records:
            raise ValueError("append requires at least one record")
        with self._lock:
            if not self._blocks:
                raise SeqConflict("ledger has no genesis block yet")
            staged: dict[tuple[RecordKind, str], int] = {}
            for record in records:
                if not role_permits(role, APPEND, record.kind):
                    raise Unauthorized(
                        f"role {role.value} may not append {record.kind.value}")
                key = (record.kind, record.key)
                expected = staged.get(key, self._tip_seq.get(key, -1)) + 1
                if record.seq != expected:
                    raise SeqConflict(
                        f"{record.kind.value}/{record.key}: have seq {expected - 1}, "
                        f"got {record.seq}")
                staged[key] = record.seq
            prev = self._blocks[-1]
            block = Block.seal(prev.index + 1, prev.hash, timestamp, records)
            self._commit(block)
            return block.index

    def _commit(self, block: Block) -> None:
        if self.path is not None:
            with open(self.path, "a", encoding="utf-8") as fh:
                fh.write(block.encode_line() + "\n")
        self._blocks.append(block)
        for record in block.records:
            self._tip_seq[(record.kind, record.key)] = record.seq

    # -- reads ----------------------------------------------------------------

    def _snapshot(self) -> list[Block]:
        return self._blocks[: len(self._blocks)]

    def get_latest(self, token: object, kind: RecordKind,
                   key: str) -> Optional[GovernanceRecord]:
        self._check_read(token, kind)
        latest: Optional[GovernanceRecord] = None
        for block in self._snapshot():
            for record in block.records:
                if record.kind is kind and record.key == key:
                    if latest is None or record.seq > latest.seq:
                        latest = record
        if latest is not None and latest.tombstone:
            return None
        return latest

    def get_history(self, token: object, kind: RecordKind,
                    key: str) -> list[GovernanceRecord]:
        self._check_read(token, kind)
        found = [r for b in self._snapshot() for r in b.records
                 if r.kind is kind and r.key == key]
        return sorted(found, key=lambda r: r.seq)

    def latest_by_kind(self, token: object, kind: RecordKind) -> dict[str, GovernanceRecord]:
        """Latest non-tombstoned record per key, for catalog-style scans."""
        self._check_read(token, kind)
        latest: dict[str, GovernanceRecord] = {}
        for block in self._snapshot():
            for record in block.records:
                if record.kind is kind:
                    cur = latest.get(record.key)
                    if cur is None or record.seq > cur.seq:
                        latest[record.key] = record
        return {k: r for k, r in latest.items() if not r.tombstone}

    def next_seq(self, token: object, kind: RecordKind, key: str) -> int:
        self._check_read(token, kind)
        return self._tip_seq.get((kind, key), -1) + 1

    def blocks(self) -> list[Block]:
        return self._snapshot()

    def tip_digest(self) -> str:
        snap = self._snapshot()
        return snap[-1].hash.hex() if snap else canonical.ZERO_DIGEST.hex()

    def record_count(self) -> int:
        return sum(len(b.records) for b in self._snapshot())

    # -- integrity ---------------------------------------------------------------

    def verify_chain(self) -> ChainStatus:
        return verify_blocks(self._snapshot())

    # -- replication ---------------------------------------------------------------

    def replay(self, target: "Ledger") -> ChainStatus:
        """Re-apply this chain into an empty follower, re-verifying each link."""
        status = self.verify_chain()
        if not status:
            return status
        with target._lock:
            if target._blocks:
                raise LedgerNotEmpty("follower must start empty")
            for block in self._snapshot():
                target._commit(block)
        return VALID


def verify_blocks(blocks: list[Block]) -> ChainStatus:
    """Recompute every hash and link; report the first violating index."""
    prev: Optional[Block] = None
    for position, block in enumerate(blocks):
        if block.index != position:
            return violation(position)
        expected_prev = canonical.ZERO_DIGEST if position == 0 else prev.hash
        if block.prev_hash != expected_prev:
            return violation(position)
        body = Block.body_doc(block.index, block.prev_hash, block.timestamp, block.records)
        if canonical.digest(body) != block.hash:
            return violation(position)
        if position == 0:
            if len(block.records) != 1 or block.records[0].kind is not RecordKind.CONTRACT:
                return violation(0)
        prev = block
    return VALID


def verify_file(path: Path | str) -> ChainStatus:
    """Verify a persisted ledger file on its own.

    Lines that fail to parse, decode, or reproduce their own canonical
    encoding count as violations at their line index, so any byte-level
    tampering of the file is reported. The canonical-form comparison closes
    representation aliases (e.g. upper-case hex digits) that would parse to
    the same block.
    """
    blocks: list[Block] = []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for line_no, line in enumerate(fh):
            line = line.rstrip("\n")
            if not line:
                return violation(line_no)
            try:
                block = Block.from_doc(canonical.canonical_loads(line))
            except (ParseError, KeyError, ValueError, TypeError):
                return violation(line_no)
            if block.encode_line() != line:
                return violation(line_no)
            blocks.append(block)
    return verify_blocks(blocks)


def load_file(path: Path | str) -> list[Block]:
    blocks = []
    with open(path, "r", encoding="utf-8") as fh:
        for line in fh:
            if line.strip():
                blocks.append(Block.from_doc(canonical.canonical_loads(line.strip())))
    return blocks


def tombstone_of(record: GovernanceRecord, author: str) -> GovernanceRecord:
    return replace(record, seq=record.seq + 1, author=author, tombstone=True,
                   payload=b"")
