import random

import pytest

from fedkernel.identity import Principal, PrincipalKind
from fedkernel.iwm import ServiceOffer
from fedkernel.orchestrator import Federation, Sfac
from fedkernel.policy import Effect, Policy, Predicate
from fedkernel.registry import ComponentRole, Ledger
from fedkernel.simcloud import SimCloudHub

ROLE_TOKENS = {role.value: object() for role in ComponentRole}


def stub_validator(token):
    """Maps the opaque stub tokens above to roles, for ledger unit tests."""
    from fedkernel.errors import InvalidToken

    for name, obj in ROLE_TOKENS.items():
        if token is obj:
            return ComponentRole(name)
    raise InvalidToken("unknown stub token")


@pytest.fixture
def ledger(tmp_path):
    led = Ledger(token_validator=stub_validator, path=tmp_path / "chain.log")
    led.genesis(b"contract body", timestamp=1)
    return led


@pytest.fixture
def mem_ledger():
    led = Ledger(token_validator=stub_validator)
    led.genesis(b"contract body", timestamp=1)
    return led


def make_hub(clouds=("alpha", "beta", "gamma"), pool=30):
    hub = SimCloudHub()
    for cid in clouds:
        cloud = hub.add_cloud(cid, pool=pool)
        cloud.add_user(f"admin-{cid}", "pw",
                       Principal(f"admin-{cid}", PrincipalKind.MEMBER_CLOUD_ADMIN, cid))
        cloud.add_user(f"tadmin-{cid}", "pw",
                       Principal(f"tadmin-{cid}", PrincipalKind.TENANT_ADMIN, cid))
        cloud.add_user(f"user-{cid}", "pw",
                       Principal(f"user-{cid}", PrincipalKind.SERVICE_USER, cid))
    return hub


def make_federation(clouds=("alpha", "beta", "gamma"), founders=None, seed=7,
                    grace_ms=60_000, ledger_path=None, open_=True, pool=30):
    hub = make_hub(clouds, pool=pool)
    founders = list(founders or clouds[:2])
    sfac = Sfac("fed-test", tuple(founders), {c: 4 for c in clouds},
                grace_ms=grace_ms, open=open_)
    fed = Federation.create(hub, founders, sfac, seed=seed,
                            ledger_path=ledger_path)
    for cid in clouds:
        if cid not in founders:
            fed.join_member(cid, {"user": f"admin-{cid}", "credential": "pw",
                                  "sfac_signed": True})
    return hub, fed


def admin_auth(fed, cloud):
    return fed.identity.authenticate(cloud, f"admin-{cloud}", "pw")


def user_auth(fed, cloud):
    return fed.identity.authenticate(cloud, f"user-{cloud}", "pw")


def permit_cloud(service_id, consumer_cloud, obligations=(), pid=None):
    return Policy(pid or f"{service_id}-permit-{consumer_cloud}",
                  (Predicate("subject.home_cloud", "equals", consumer_cloud),),
                  Effect.PERMIT, tuple(obligations))


def simple_offer(service_id, cloud, tenant=None, capacity=8, cost=1.0,
                 avail=0.99, **chars):
    return ServiceOffer(service_id, cloud, tenant or f"tenant-{service_id}",
                        capacity, cost, avail, dict(chars))


def publish_simple(fed, service_id, cloud, consumer_clouds, obligations=(),
                   sla=None, **offer_kwargs):
    offer = simple_offer(service_id, cloud, **offer_kwargs)
    policies = [permit_cloud(service_id, c, obligations) for c in consumer_clouds]
    return fed.publish_service(admin_auth(fed, cloud), offer, policies, sla or [])


@pytest.fixture
def federation():
    return make_federation()


@pytest.fixture
def rng():
    return random.Random(0xFED)
