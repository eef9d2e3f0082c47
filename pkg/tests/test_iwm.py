import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fedkernel.errors import (AdapterFailure, CapacityExhausted, NoCandidates)
from fedkernel.iwm import (Objective, ServiceOffer, WorkloadManager,
                           WorkloadRequest, build_access_request)
from fedkernel.policy import Effect, Outcome, Policy, Predicate, pdp_decide
from fedkernel.registry import Ledger, RecordKind, GovernanceRecord
from fedkernel.simcloud import SimCloudHub

from conftest import ROLE_TOKENS, stub_validator
from oracles import rank_oracle


def offer(sid, cloud="a", tenant="t", capacity=5, cost=1.0, avail=0.9, **chars):
    return ServiceOffer(sid, cloud, tenant, capacity, cost, avail, dict(chars))


def make_manager(offers=(), pools=("a", "b", "c")):
    ledger = Ledger(token_validator=stub_validator)
    ledger.genesis(b"c")
    hub = SimCloudHub()
    for cid in pools:
        hub.add_cloud(cid, pool=20)

    def updater(updated):
        record = GovernanceRecord(
            RecordKind.SERVICE, updated.service_id, updated.encode(), "FAM",
            ledger.next_seq(ROLE_TOKENS["FAM"], RecordKind.SERVICE,
                            updated.service_id))
        ledger.append(ROLE_TOKENS["FAM"], [record])

    manager = WorkloadManager(ledger, ROLE_TOKENS["IWM"], hub, updater)
    for o in offers:
        updater(o)
    return manager, ledger, hub


# --- matching ----------------------------------------------------------------------

def test_match_empty_catalog():
    manager, _, _ = make_manager()
    assert manager.match_offers(WorkloadRequest("u", {}, 1)) == []


def test_match_on_characteristics_and_capacity():
    manager, _, _ = make_manager([
        offer("s1", kind="db"), offer("s2", kind="web"),
        offer("s3", capacity=2, kind="db"),
    ])
    request = WorkloadRequest("u", {"kind": "db"}, demand=3)
    assert [o.service_id for o in manager.match_offers(request)] == ["s1"]


# --- authorization filter --------------------------------------------------------------

def policies_for_factory(table):
    return lambda sid: table.get(sid, [])


def test_filter_default_deny():
    manager, _, _ = make_manager([offer("s1")])
    kept = manager.filter_authorized({"id": "u", "home_cloud": "b"},
                                     manager.catalog(),
                                     policies_for_factory({}))
    assert kept == []


def test_filter_keeps_permitted_preserving_order():
    offers = [offer("s1"), offer("s2"), offer("s3")]
    manager, _, _ = make_manager(offers)
    table = {
        "s1": [Policy("p1", (Predicate("subject.home_cloud", "equals", "b"),),
                      Effect.PERMIT)],
        "s2": [Policy("p2", (Predicate("subject.home_cloud", "equals", "zz"),),
                      Effect.PERMIT)],
        "s3": [Policy("p3", (), Effect.PERMIT)],
    }
    subject = {"id": "u", "home_cloud": "b"}
    kept = manager.filter_authorized(subject, manager.catalog(),
                                     policies_for_factory(table))
    # oracle: per-candidate decision, order preserved
    expected = [o.service_id for o in manager.catalog()
                if pdp_decide(build_access_request(subject, o, "REQUEST", {}),
                              table.get(o.service_id, [])).outcome
                is Outcome.PERMIT]
    assert [o.service_id for o in kept] == expected == ["s1", "s3"]


# --- ranking ----------------------------------------------------------------------------

def test_single_candidate_is_itself():
    ranked = WorkloadManager.optimise([offer("s1")], Objective.MIN_COST)
    assert [o.service_id for o in ranked] == ["s1"]


def test_min_cost_puts_cheaper_first():
    ranked = WorkloadManager.optimise(
        [offer("s1", cost=2.0), offer("s2", cost=1.0)], Objective.MIN_COST)
    assert [o.service_id for o in ranked] == ["s2", "s1"]


def test_weighted_example_hand_scored():
    """Frozen from the score formula: normcost = cost / max cost.

    (cost 2, avail 0.90): 2/4 - 0.90 = -0.40
    (cost 4, avail 0.99): 4/4 - 0.99 =  0.01  -> first offer wins.
    """
    first = offer("s1", cost=2.0, avail=0.90)
    second = offer("s2", cost=4.0, avail=0.99)
    ranked = WorkloadManager.optimise([second, first], Objective.WEIGHTED,
                                      w_cost=1.0, w_avail=1.0)
    assert [o.service_id for o in ranked] == ["s1", "s2"]


def test_no_candidates():
    with pytest.raises(NoCandidates):
        WorkloadManager.optimise([], Objective.MIN_COST)


@settings(max_examples=150, deadline=None)
@given(st.data())
def test_ranking_matches_comparison_sort_oracle(data):
    n = data.draw(st.integers(1, 6))
    candidates = []
    for i in range(n):
        candidates.append(offer(
            f"s{i}", cloud=data.draw(st.sampled_from(["a", "b"])),
            cost=data.draw(st.sampled_from([0.0, 1.0, 1.0, 2.5, 7.0])),
            avail=data.draw(st.sampled_from([0.5, 0.9, 0.9, 0.99]))))
    objective = data.draw(st.sampled_from(list(Objective)))
    w_cost = data.draw(st.sampled_from([0.5, 1.0, 2.0]))
    w_avail = data.draw(st.sampled_from([0.5, 1.0, 2.0]))
    ranked = WorkloadManager.optimise(candidates, objective, w_cost, w_avail)
    expected = rank_oracle([c.to_doc() for c in candidates], objective.value,
                           w_cost, w_avail)
    assert [o.service_id for o in ranked] == [o["service_id"] for o in expected]


@settings(max_examples=80, deadline=None)
@given(scale=st.floats(min_value=0.01, max_value=1000.0,
                       allow_nan=False, allow_infinity=False),
       seed=st.integers(0, 999))
def test_cost_scale_invariance(scale, seed):
    rng = random.Random(seed)
    candidates = [offer(f"s{i}", cost=rng.uniform(0.1, 5.0),
                        avail=rng.uniform(0.5, 1.0)) for i in range(5)]
    scaled = [ServiceOffer(o.service_id, o.provider_cloud, o.tenant, o.capacity,
                           o.unit_cost * scale, o.availability,
                           o.characteristics) for o in candidates]
    for objective in (Objective.MIN_COST, Objective.WEIGHTED):
        base = WorkloadManager.optimise(candidates, objective)
        after = WorkloadManager.optimise(scaled, objective)
        assert [o.service_id for o in base] == [o.service_id for o in after]


# --- execution ---------------------------------------------------------------------------

def test_execute_applies_actions_and_decrements_capacity():
    manager, _, hub = make_manager([offer("s1", cloud="a", capacity=5)])
    plan = manager.build_plan(manager.offer("s1"), demand=2, consumer="u")
    receipt = manager.execute(plan)
    assert len(receipt.resource_ids) == 2
    assert manager.offer("s1").capacity == 3
    assert hub.cloud("a").pool == 18


def test_execute_rolls_back_on_second_action_failure():
    manager, ledger, hub = make_manager([offer("s1", cloud="a", capacity=5)])
    before = hub.cloud("a").resource_footprint()
    hub.cloud("a").inject_fault("open_access", 1)
    plan = manager.build_plan(manager.offer("s1"), demand=2, consumer="u")
    with pytest.raises(AdapterFailure):
        manager.execute(plan)
    assert hub.cloud("a").resource_footprint() == before
    assert manager.offer("s1").capacity == 5
    operations = hub.log.operations("a")
    # the roll back is visible: create then destroy
    assert operations == ["create_vm", "open_access", "destroy_vm"]


def test_execute_capacity_exhausted():
    manager, _, _ = make_manager([offer("s1", capacity=1)])
    plan = manager.build_plan(manager.offer("s1"), demand=3, consumer="u")
    with pytest.raises(CapacityExhausted):
        manager.execute(plan)


def test_capacity_conservation_across_executions():
    manager, _, _ = make_manager([offer("s1", capacity=6)])
    executed = 0
    for demand in (2, 2, 2, 2):
        plan = manager.build_plan(manager.offer("s1"), demand, "u")
        try:
            manager.execute(plan)
            executed += demand
        except CapacityExhausted:
            pass
    assert executed <= 6
    assert manager.offer("s1").capacity == 6 - executed


def test_release_returns_capacity():
    manager, _, hub = make_manager([offer("s1", cloud="a", capacity=5)])
    plan = manager.build_plan(manager.offer("s1"), demand=2, consumer="u")
    receipt = manager.execute(plan)
    manager.release("s1", receipt)
    assert manager.offer("s1").capacity == 5
    assert hub.cloud("a").pool == 20
