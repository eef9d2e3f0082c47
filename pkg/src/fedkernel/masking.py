"""Selector-driven masking and unmasking of structured payloads.

A masking policy is an ordered rule list; each rule pairs a path selector
(dot/bracket syntax, ``[*]`` wildcards over lists) with one of five
operations: redaction, tokenization, format-preserving tokenization,
authenticated encryption, format-preserving encryption. The masked document
keeps the exact shape of the original; only selected text leaves change.

Tokenization state is a bijective token table, snapshotted to the governance
ledger on every mask call so any table version can be replayed for unmasking.
The format-preserving cipher is a 4-round keyed Feistel permutation over the
input's character-class alphabet with cycle-walking; it is deliberately small
and auditable rather than hardened.
"""

from __future__ import annotations

import hashlib
import hmac as hmac_mod
import random
import re
import string
from copy import deepcopy
from dataclasses import dataclass, field
from typing import Iterator, Optional

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives.ciphers.aead import AESGCM

from . import canonical
from .errors import SelectorMiss, UnknownToken, WrongKey
from .registry import GovernanceRecord, Ledger, RecordKind

REDACT_GLYPH = "*****"
OPS = ("REDACT", "TOKENIZE", "FPT", "ENCRYPT", "FPE")

_SEGMENT_RE = re.compile(r"(?:(?P<name>[A-Za-z_][\w\-]*)|\[(?P<index>\d+|\*)\])")


@dataclass(frozen=True)
class MaskingRule:
    selector: str
    op: str
    params: dict = field(default_factory=dict)

    def to_doc(self) -> dict:
        return {"selector": self.selector, "op": self.op, "params": self.params}

    @classmethod
    def from_doc(cls, doc: dict) -> "MaskingRule":
        return cls(doc["selector"], doc["op"], dict(doc.get("params", {})))


@dataclass(frozen=True)
class MaskingPolicy:
    rules: tuple[MaskingRule, ...]
    strict: bool = True

    @classmethod
    def of(cls, *rules: MaskingRule, strict: bool = True) -> "MaskingPolicy":
        return cls(tuple(rules), strict)

    def to_doc(self) -> dict:
        return {"rules": [r.to_doc() for r in self.rules], "strict": self.strict}

    @classmethod
    def from_doc(cls, doc: dict) -> "MaskingPolicy":
        return cls(tuple(MaskingRule.from_doc(r) for r in doc["rules"]),
                   bool(doc.get("strict", True)))


def validate_masking_policy(document: object) -> list[str]:
    """Validate a policy document; returns problems, empty when well formed."""
    problems: list[str] = []
    if not isinstance(document, dict) or "rules" not in document:
        return ["policy document must carry a rules list"]
    for i, rule in enumerate(document["rules"]):
        where = f"rule[{i}]"
        if not isinstance(rule, dict):
            problems.append(f"{where}: not a rule document")
            continue
        op = rule.get("op")
        if op not in OPS:
            problems.append(f"{where}: unknown op {op!r}")
        selector = rule.get("selector", "")
        if parse_selector(selector) is None:
            problems.append(f"{where}: bad selector {selector!r}")
        if op in ("ENCRYPT", "FPE") and not rule.get("params", {}).get("key_id"):
            problems.append(f"{where}: {op} requires params.key_id")
    return problems


# --- selectors -------------------------------------------------------------------

def parse_selector(selector: str) -> Optional[list[object]]:
    """Parse into segments: str names, int indices, '*' wildcards; None if bad."""
    if not selector:
        return None
    segments: list[object] = []
    pos = 0
    first = True
    while pos < len(selector):
        if not first:
            if selector[pos] == ".":
                pos += 1
            elif selector[pos] != "[":
                return None
        match = _SEGMENT_RE.match(selector, pos)
        if match is None:
            return None
        if match.group("name") is not None:
            segments.append(match.group("name"))
        else:
            index = match.group("index")
            segments.append("*" if index == "*" else int(index))
        pos = match.end()
        first = False
    return segments


def _walk(node: object, segments: list[object], path: tuple) -> Iterator[tuple[tuple, object]]:
    if not segments:
        yield path, node
        return
    head, rest = segments[0], segments[1:]
    if head == "*":
        if isinstance(node, list):
            for i, item in enumerate(node):
                yield from _walk(item, rest, path + (i,))
    elif isinstance(head, int):
        if isinstance(node, list) and head < len(node):
            yield from _walk(node[head], rest, path + (head,))
    else:
        if isinstance(node, dict) and head in node:
            yield from _walk(node[head], rest, path + (head,))


def resolve_selector(payload: object, selector: str) -> list[tuple[tuple, object]]:
    segments = parse_selector(selector)
    if segments is None:
        raise SelectorMiss(f"bad selector {selector!r}")
    return list(_walk(payload, segments, ()))


def _get_at(payload: object, path: tuple) -> object:
    node = payload
    for step in path:
        node = node[step]
    return node


def _set_at(payload: object, path: tuple, value: object) -> None:
    node = payload
    for step in path[:-1]:
        node = node[step]
    node[path[-1]] = value


# --- character classes ------------------------------------------------------------

_CLASS_ALPHABETS = {
    "digit": string.digits,
    "upper": string.ascii_uppercase,
    "lower": string.ascii_lowercase,
}


def char_class(ch: str) -> Optional[str]:
    if ch.isdigit() and ch in string.digits:
        return "digit"
    if ch in string.ascii_uppercase:
        return "upper"
    if ch in string.ascii_lowercase:
        return "lower"
    return None  # kept verbatim


def format_pattern(text: str) -> list[Optional[str]]:
    return [char_class(c) for c in text]


def random_in_format(text: str, rng: random.Random) -> str:
    out = []
    for ch in text:
        cls = char_class(ch)
        out.append(rng.choice(_CLASS_ALPHABETS[cls]) if cls else ch)
    return "".join(out)


# --- format-preserving permutation ---------------------------------------------------

_FEISTEL_ROUNDS = 4


def _rank(text: str) -> tuple[int, int, list[tuple[int, str]]]:
    """Map text to (rank, domain size, mutable positions) over its format class."""
    rank = 0
    size = 1
    mutable: list[tuple[int, str]] = []
    for i, ch in enumerate(text):
        cls = char_class(ch)
        if cls is None:
            continue
        alphabet = _CLASS_ALPHABETS[cls]
        rank = rank * len(alphabet) + alphabet.index(ch)
        size *= len(alphabet)
        mutable.append((i, cls))
    return rank, size, mutable


def _unrank(rank: int, template: str, mutable: list[tuple[int, str]]) -> str:
    chars = list(template)
    for i, cls in reversed(mutable):
        alphabet = _CLASS_ALPHABETS[cls]
        chars[i] = alphabet[rank % len(alphabet)]
        rank //= len(alphabet)
    return "".join(chars)


def _round_value(key: bytes, round_no: int, half: int, value: int) -> int:
    msg = bytes([round_no]) + value.to_bytes(16, "big")
    digest = hmac_mod.new(key, msg, hashlib.sha256).digest()
    return int.from_bytes(digest, "big") % (1 << half)


def _feistel(key: bytes, bits: int, x: int, inverse: bool) -> int:
    half = bits // 2
    mask = (1 << half) - 1
    left, right = x >> half, x & mask
    rounds = range(_FEISTEL_ROUNDS)
    if not inverse:
        for r in rounds:
            left, right = right, left ^ _round_value(key, r, half, right)
    else:
        for r in reversed(rounds):
            left, right = right ^ _round_value(key, r, half, left), left
    return (left << half) | right


def fpe_permute(text: str, key: bytes, inverse: bool = False) -> str:
    """Apply the keyed permutation over the text's character-class domain."""
    rank, size, mutable = _rank(text)
    if size <= 1:
        return text
    bits = max(2, (size - 1).bit_length())
    if bits % 2:
        bits += 1
    y = _feistel(key, bits, rank, inverse)
    while y >= size:  # cycle-walk back into the domain
        y = _feistel(key, bits, y, inverse)
    return _unrank(y, text, mutable)


# --- tokenization table ---------------------------------------------------------------

@dataclass
class TokenizationTable:
    version: int = 0
    token_to_original: dict[str, str] = field(default_factory=dict)
    original_to_token: dict[str, str] = field(default_factory=dict)

    def copy(self) -> "TokenizationTable":
        return TokenizationTable(self.version, dict(self.token_to_original),
                                 dict(self.original_to_token))

    def insert(self, token: str, original: str) -> None:
        self.token_to_original[token] = original
        self.original_to_token[original] = token

    def to_payload(self) -> bytes:
        return canonical.canonical_bytes(
            {"version": self.version, "entries": self.token_to_original})

    @classmethod
    def from_payload(cls, payload: bytes) -> "TokenizationTable":
        doc = canonical.canonical_loads(payload.decode("utf-8"))
        table = cls(version=int(doc["version"]))
        for token, original in doc["entries"].items():
            table.insert(token, original)
        return table


MASKING_TABLE_KEY = "tokenization-table"


class MaskingEngine:
    """Instantiates the masking/unmasking processes for given policies.

    When wired to a ledger the token table is snapshotted there before a
    mask call returns; a failed snapshot aborts the call without touching
    the in-memory table.
    """

    def __init__(self, rng: Optional[random.Random] = None,
                 keys: Optional[dict[str, bytes]] = None,
                 ledger: Optional[Ledger] = None, dm_token: object = None,
                 clock=None):
        self._rng = rng or random.Random()
        self._keys = dict(keys or {})
        self._ledger = ledger
        self._dm_token = dm_token
        self._clock = clock
        self._table = TokenizationTable()

    @property
    def table_version(self) -> int:
        return self._table.version

    def add_key(self, key_id: str, key: bytes) -> None:
        self._keys[key_id] = key

    def _key_for(self, params: dict) -> bytes:
        key_id = params.get("key_id")
        if key_id is None or key_id not in self._keys:
            raise WrongKey(f"unknown key id {key_id!r}")
        return self._keys[key_id]

    # -- leaf transforms --------------------------------------------------------

    def _new_token(self, original: str, fmt: bool, table: TokenizationTable) -> str:
        existing = table.original_to_token.get(original)
        if existing is not None:
            return existing
        for _ in range(4096):
            if fmt:
                candidate = random_in_format(original, self._rng)
                if candidate == original and _rank(original)[1] > 1:
                    continue
            else:
                candidate = "tok-" + "".join(self._rng.choices("0123456789abcdef", k=20))
            if candidate not in table.token_to_original:
                table.insert(candidate, original)
                return candidate
        raise SelectorMiss(f"token space exhausted for format of {original!r}")

    def _mask_leaf(self, rule: MaskingRule, value: str,
                   table: TokenizationTable) -> str:
        if rule.op == "REDACT":
            return rule.params.get("glyph", REDACT_GLYPH)
        if rule.op == "TOKENIZE":
            return self._new_token(value, fmt=False, table=table)
        if rule.op == "FPT":
            return self._new_token(value, fmt=True, table=table)
        if rule.op == "ENCRYPT":
            key = self._key_for(rule.params)
            nonce = self._rng.randbytes(12)
            sealed = AESGCM(key).encrypt(nonce, value.encode("utf-8"), None)
            return (nonce + sealed).hex()
        if rule.op == "FPE":
            return fpe_permute(value, self._key_for(rule.params))
        raise ValueError(f"unknown op {rule.op}")

    def _unmask_leaf(self, rule: MaskingRule, value: str,
                     table: TokenizationTable) -> str:
        if rule.op == "REDACT":
            return value
        if rule.op in ("TOKENIZE", "FPT"):
            original = table.token_to_original.get(value)
            if original is None:
                raise UnknownToken(value)
            return original
        if rule.op == "ENCRYPT":
            key = self._key_for(rule.params)
            try:
                raw = bytes.fromhex(value)
                return AESGCM(key).decrypt(raw[:12], raw[12:], None).decode("utf-8")
            except (InvalidTag, ValueError) as exc:
                raise WrongKey(str(exc)) from exc
        if rule.op == "FPE":
            return fpe_permute(value, self._key_for(rule.params), inverse=True)
        raise ValueError(f"unknown op {rule.op}")

    # -- document transforms -------------------------------------------------------

    def _claim_leaves(self, payload: object,
                      policy: MaskingPolicy) -> list[tuple[tuple, MaskingRule]]:
        problems = validate_masking_policy(policy.to_doc())
        if problems:
            raise SelectorMiss("; ".join(problems))
        claimed: dict[tuple, MaskingRule] = {}
        for rule in policy.rules:
            hits = resolve_selector(payload, rule.selector)
            text_hits = [(path, value) for path, value in hits if isinstance(value, str)]
            if policy.strict and not text_hits:
                raise SelectorMiss(f"selector {rule.selector!r} matched no text leaf")
            for path, _ in text_hits:
                claimed.setdefault(path, rule)  # first matching rule wins
        # document order; int/str path steps are not mutually comparable
        return sorted(claimed.items(),
                      key=lambda item: tuple((0, step) if isinstance(step, int)
                                             else (1, step) for step in item[0]))

    def mask(self, payload: object, policy: MaskingPolicy) -> object:
        masked = deepcopy(payload)
        staged = self._table.copy()
        for path, rule in self._claim_leaves(masked, policy):
            _set_at(masked, path, self._mask_leaf(rule, _get_at(masked, path), staged))
        if staged.token_to_original != self._table.token_to_original:
            staged.version = self._table.version + 1
            self._persist(staged)
        self._table = staged
        return masked

    def unmask(self, masked: object, policy: MaskingPolicy,
               table_version: Optional[int] = None) -> object:
        table = self._table if table_version is None else self._load(table_version)
        restored = deepcopy(masked)
        for path, rule in self._claim_leaves(restored, policy):
            _set_at(restored, path, self._unmask_leaf(rule, _get_at(restored, path), table))
        return restored

    # -- ledger persistence ------------------------------------------------------------

    def _persist(self, table: TokenizationTable) -> None:
        if self._ledger is None:
            return
        record = GovernanceRecord(
            kind=RecordKind.MASKING_TABLE, key=MASKING_TABLE_KEY,
            payload=table.to_payload(), author="DM", seq=table.version - 1)
        now = self._clock.now() if self._clock else 0
        self._ledger.append(self._dm_token, [record], timestamp=now)

    def _load(self, version: int) -> TokenizationTable:
        if version == self._table.version:
            return self._table
        if self._ledger is None:
            raise UnknownToken(f"no table snapshot for version {version}")
        history = self._ledger.get_history(self._dm_token, RecordKind.MASKING_TABLE,
                                           MASKING_TABLE_KEY)
        for record in history:
            if record.seq == version - 1 and not record.tombstone:
                return TokenizationTable.from_payload(record.payload)
        raise UnknownToken(f"no table snapshot for version {version}")
