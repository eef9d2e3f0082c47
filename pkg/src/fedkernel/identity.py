"""Identity management: federated per-cloud identity providers, reusable
SSO auth tokens for principals, and crypto-tokens for platform components.

Tokens are HMAC-SHA-256 over the canonical encoding of their fields under a
single symmetric federation key. Validation is pure given the key and the
clock, so it is safe to call concurrently.
"""

from __future__ import annotations

import hashlib
import hmac
from dataclasses import dataclass, field, replace
from enum import Enum
from typing import Optional, Union

from . import canonical
from .clock import HOUR_MS, SimClock
from .errors import (BadCredential, DuplicateCloud, Expired, InvalidToken,
                     UnknownCloud, UnknownRole)
from .registry import ComponentRole

FEDERATION_CLOUD_ID = "federation"


class PrincipalKind(Enum):
    SERVICE_USER = "SERVICE_USER"
    MEMBER_CLOUD_ADMIN = "MEMBER_CLOUD_ADMIN"
    TENANT_ADMIN = "TENANT_ADMIN"
    COMPONENT = "COMPONENT"
    CLOUD = "CLOUD"


@dataclass(frozen=True)
class Principal:
    id: str
    kind: PrincipalKind
    home_cloud: str
    attributes: dict[str, str] = field(default_factory=dict)

    def subject_attributes(self) -> dict[str, str]:
        """Attribute map fed into access requests as the ABAC subject."""
        attrs = {"id": self.id, "kind": self.kind.value, "home_cloud": self.home_cloud}
        attrs.update(self.attributes)
        return attrs


@dataclass(frozen=True)
class AuthToken:
    principal_id: str
    cloud_id: str
    issued_at: int
    expires_at: int
    mac: bytes

    def signable(self) -> dict:
        return {
            "principal_id": self.principal_id,
            "cloud_id": self.cloud_id,
            "issued_at": self.issued_at,
            "expires_at": self.expires_at,
        }


@dataclass(frozen=True)
class CryptoToken:
    component_role: ComponentRole
    issued_at: int
    mac: bytes

    def signable(self) -> dict:
        return {"component_role": self.component_role.value, "issued_at": self.issued_at}


def _salted_digest(salt: bytes, credential: str) -> bytes:
    return hashlib.sha256(salt + credential.encode("utf-8")).digest()


@dataclass
class IdpDescriptor:
    """Per-cloud identity provider: salted credential digests plus the
    principal metadata exposed to the federation."""

    cloud_id: str
    credential_verifier: dict[str, tuple[bytes, bytes]] = field(default_factory=dict)
    principals: dict[str, Principal] = field(default_factory=dict)

    def register_user(self, user_id: str, credential: str, salt: bytes = b"\x00" * 8,
                      principal: Optional[Principal] = None) -> None:
        self.credential_verifier[user_id] = (salt, _salted_digest(salt, credential))
        if principal is not None:
            self.principals[user_id] = principal

    def check(self, user_id: str, credential: str) -> bool:
        entry = self.credential_verifier.get(user_id)
        if entry is None:
            return False
        salt, expected = entry
        return hmac.compare_digest(expected, _salted_digest(salt, credential))

    def principal_of(self, user_id: str) -> Principal:
        known = self.principals.get(user_id)
        if known is not None:
            return known
        return Principal(id=user_id, kind=PrincipalKind.SERVICE_USER,
                         home_cloud=self.cloud_id)


class IdentityManager:
    def __init__(self, federation_key: bytes, clock: SimClock,
                 token_lifetime_ms: int = HOUR_MS):
        self._key = federation_key
        self._clock = clock
        self._lifetime = token_lifetime_ms
        self._idps: dict[str, IdpDescriptor] = {}

    # -- identity provider federation ----------------------------------------

    def federate_idp(self, cloud_id: str, descriptor: IdpDescriptor) -> None:
        if cloud_id in self._idps:
            raise DuplicateCloud(cloud_id)
        self._idps[cloud_id] = descriptor

    def defederate_idp(self, cloud_id: str) -> None:
        self._idps.pop(cloud_id, None)

    def is_federated(self, cloud_id: str) -> bool:
        return cloud_id in self._idps

    # -- authentication ---------------------------------------------------------

    def _mac(self, doc: dict) -> bytes:
        return hmac.new(self._key, canonical.canonical_bytes(doc), hashlib.sha256).digest()

    def authenticate(self, cloud_id: str, user_id: str, credential: str) -> AuthToken:
        idp = self._idps.get(cloud_id)
        if idp is None:
            raise UnknownCloud(cloud_id)
        if not idp.check(user_id, credential):
            raise BadCredential(f"{user_id}@{cloud_id}")
        now = self._clock.now()
        unsigned = AuthToken(principal_id=user_id, cloud_id=cloud_id, issued_at=now,
                             expires_at=now + self._lifetime, mac=b"")
        return replace(unsigned, mac=self._mac(unsigned.signable()))

    def validate(self, token: Union[AuthToken, CryptoToken]) -> Union[Principal, ComponentRole]:
        if isinstance(token, CryptoToken):
            return self.validate_component_token(token)
        if not isinstance(token, AuthToken):
            raise InvalidToken("unrecognized token type")
        if not hmac.compare_digest(token.mac, self._mac(token.signable())):
            raise InvalidToken("mac verification failed")
        if self._clock.now() >= token.expires_at:
            raise Expired(f"token for {token.principal_id} expired")
        idp = self._idps.get(token.cloud_id)
        if idp is None:
            raise InvalidToken(f"issuing cloud {token.cloud_id} no longer federated")
        return idp.principal_of(token.principal_id)

    # -- component crypto-tokens ----------------------------------------------------

    def issue_component_token(self, component_role: Union[str, ComponentRole]) -> CryptoToken:
        try:
            role = (component_role if isinstance(component_role, ComponentRole)
                    else ComponentRole(component_role))
        except ValueError as exc:
            raise UnknownRole(str(component_role)) from exc
        unsigned = CryptoToken(component_role=role, issued_at=self._clock.now(), mac=b"")
        return replace(unsigned, mac=self._mac(unsigned.signable()))

    def validate_component_token(self, token: object) -> ComponentRole:
        if not isinstance(token, CryptoToken):
            raise InvalidToken("expected a component crypto-token")
        if not hmac.compare_digest(token.mac, self._mac(token.signable())):
            raise InvalidToken("mac verification failed")
        return token.component_role

    def component_principal(self, role: ComponentRole) -> Principal:
        return Principal(id=role.value, kind=PrincipalKind.COMPONENT,
                         home_cloud=FEDERATION_CLOUD_ID)
