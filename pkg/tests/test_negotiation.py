"""Negotiation contracts and the paired appraiser/attester machines."""

import json
import random
import threading

import pytest

from attestkit import canonical, framing
from attestkit.errors import ContractError
from attestkit.framing import channel_pair
from attestkit.negotiation import (
    MAX_HOPS,
    Agreed,
    Contract,
    ContractPhase,
    Deferred,
    Failed,
    PeerIdentity,
    appraiser_decide,
    appraiser_negotiate,
    attester_negotiate,
    decode_contract,
    fresh_nonce,
    fresh_session_id,
    request_contract,
)
from attestkit.policy import (
    Defer,
    Fail,
    IdentityStrength,
    Offer,
    Rule,
    SelectionPolicy,
    Strengthen,
)
from attestkit.registry import ComponentKind, Registry, register

from conftest import make_meta
from oracles import negotiation_expectation

SESSION = "0" * 32
NONCE = "1" * 64


def pair_pool(n=6):
    apbs = [f"000000a{i}-0000-4000-8000-00000000a00{i}" for i in range(n)]
    specs = [f"000000b{i}-0000-4000-8000-00000000b00{i}" for i in range(n)]
    return [(apbs[i], specs[i]) for i in range(n)]


PAIRS = pair_pool()


def registry_for(pairs):
    reg = Registry()
    seen = set()
    for apb, spec in pairs:
        if spec not in seen:
            reg = register(reg, make_meta(spec, kind=ComponentKind.MEASUREMENT_SPEC))
            seen.add(spec)
    for apb, spec in pairs:
        if apb not in seen:
            reg = register(
                reg,
                make_meta(apb, kind=ComponentKind.APB, supported_specs=(spec,)),
            )
            seen.add(apb)
    return reg


FULL_REGISTRY = registry_for(PAIRS)


def offer_policy(options, role=None):
    rules = []
    if options:
        rules.append(Rule(action=Offer(tuple(options)), role=role))
    rules.append(Rule(action=Fail("nothing matched")))
    return SelectionPolicy(tuple(rules))


def peer(name="peer", strength=IdentityStrength.TRANSPORT_AUTHENTICATED):
    return PeerIdentity(name=name, strength=strength)


class TestContractShape:
    def test_round_trip_every_phase(self):
        contracts = [
            request_contract("system-files", "host-b:9000", session_id=SESSION, nonce=NONCE),
            Contract(ContractPhase.INITIAL, SESSION, NONCE,
                     resource="system-files", options=tuple(PAIRS[:2])),
            Contract(ContractPhase.COUNTER, SESSION, NONCE, options=tuple(PAIRS[:1])),
            Contract(ContractPhase.SELECTION, SESSION, NONCE, selected=PAIRS[0]),
            Contract(ContractPhase.REFUSAL, SESSION, NONCE, reason="no"),
        ]
        for contract in contracts:
            body = json.loads(contract.encode())
            assert decode_contract(body) == contract

    def test_request_defaults_mint_fresh_session_and_nonce(self):
        a = request_contract("r", "t")
        b = request_contract("r", "t")
        assert a.session_id != b.session_id
        assert a.nonce != b.nonce
        assert len(bytes.fromhex(a.nonce)) == 32
        assert len(bytes.fromhex(a.session_id)) == 16

    @pytest.mark.parametrize(
        "bad",
        [
            {"type": "contract", "phase": "hostile", "session_id": SESSION, "nonce": NONCE},
            {"type": "report", "phase": "request", "session_id": SESSION, "nonce": NONCE},
            {"type": "contract", "phase": "refusal", "session_id": "xyz", "nonce": NONCE,
             "reason": "r"},
            {"type": "contract", "phase": "refusal", "session_id": SESSION, "nonce": "ff",
             "reason": "r"},
            {"type": "contract", "phase": "counter", "session_id": SESSION, "nonce": NONCE,
             "options": []},
            {"type": "contract", "phase": "counter", "session_id": SESSION, "nonce": NONCE,
             "options": ["not-a-pair"]},
            {"type": "contract", "phase": "refusal", "session_id": SESSION, "nonce": NONCE,
             "reason": "r", "options": ["a/b"]},
            {"type": "contract", "phase": "selection", "session_id": SESSION, "nonce": NONCE,
             "selected": "a/b", "surprise": True},
        ],
    )
    def test_malformed_bodies_rejected(self, bad):
        with pytest.raises(ContractError):
            decode_contract(bad)

    def test_duplicate_options_rejected(self):
        with pytest.raises(ContractError, match="repeat"):
            Contract(ContractPhase.COUNTER, SESSION, NONCE,
                     options=(PAIRS[0], PAIRS[0]))

    def test_hops_budget_bounded(self):
        with pytest.raises(ContractError, match="hops"):
            request_contract("r", "t", hops=MAX_HOPS + 1,
                             session_id=SESSION, nonce=NONCE)

    def test_phase_field_discipline(self):
        # a selection cannot carry options; a counter cannot carry a reason
        with pytest.raises(ContractError):
            Contract(ContractPhase.SELECTION, SESSION, NONCE,
                     selected=PAIRS[0], options=(PAIRS[1],))
        with pytest.raises(ContractError):
            Contract(ContractPhase.COUNTER, SESSION, NONCE,
                     options=(PAIRS[0],), reason="why not")


def run_session(appraiser_policy, attester_policy, request=None,
                appraiser_registry=None, attester_registry=None,
                count_messages=False):
    """Full request→selection exchange over a local channel pair."""
    request = request or request_contract("system-files", "host-b",
                                          session_id=SESSION, nonce=NONCE)
    left, right = channel_pair()
    wire_count = [1]  # the request itself was one on-wire message

    if count_messages:
        for chan in (left, right):
            original = chan.send
            def counted(body, _original=original):
                wire_count[0] += 1
                return _original(body)
            chan.send = counted

    results = {}

    def attester_side():
        try:
            initial = decode_contract(right.recv())
        except Exception:
            # the appraiser failed before opening the session
            results["attester"] = Failed("session closed before an initial arrived")
            return
        results["attester"] = attester_negotiate(
            right, attester_policy, attester_registry or FULL_REGISTRY,
            initial, peer("appraiser-am"),
        )

    thread = threading.Thread(target=attester_side)
    thread.start()
    results["appraiser"] = appraiser_negotiate(
        left, appraiser_policy, appraiser_registry or FULL_REGISTRY,
        request, peer("host-b"),
    )
    left.close()  # unblocks an attester still waiting on a frame
    thread.join(timeout=5)
    assert not thread.is_alive()
    right.close()
    if count_messages:
        return results, wire_count[0]
    return results


class TestSessions:
    def test_agreement_on_common_option(self):
        results = run_session(
            offer_policy([PAIRS[0], PAIRS[1], PAIRS[2]]),
            offer_policy([PAIRS[1], PAIRS[2]]),
        )
        assert results["appraiser"] == Agreed(PAIRS[1], SESSION, NONCE, "system-files")
        assert results["appraiser"] == results["attester"]

    def test_appraiser_preference_rank_wins(self):
        """The attester counters in offered order; the appraiser picks by
        its own rank, not the counter's order."""
        results = run_session(
            offer_policy([PAIRS[2], PAIRS[0]]),
            offer_policy([PAIRS[0], PAIRS[2]]),
        )
        assert results["appraiser"].option == PAIRS[2]

    def test_successful_session_is_exactly_four_messages(self):
        results, count = run_session(
            offer_policy([PAIRS[0]]),
            offer_policy([PAIRS[0]]),
            count_messages=True,
        )
        assert isinstance(results["appraiser"], Agreed)
        assert count == 4

    def test_empty_intersection_refused(self):
        results = run_session(
            offer_policy([PAIRS[0]]),
            offer_policy([PAIRS[1]]),
        )
        assert isinstance(results["appraiser"], Failed)
        assert isinstance(results["attester"], Failed)
        assert "acceptable" in results["appraiser"].reason

    def test_attester_fail_policy_becomes_refusal(self):
        results = run_session(
            offer_policy([PAIRS[0]]),
            SelectionPolicy((Rule(action=Fail("maintenance window")),)),
        )
        assert results["appraiser"] == Failed("maintenance window")

    def test_attester_strengthen_surfaces_to_appraiser(self):
        attester_policy = SelectionPolicy((
            Rule(action=Strengthen(IdentityStrength.KEY_BOUND)),
        ))
        results = run_session(offer_policy([PAIRS[0]]), attester_policy)
        assert results["appraiser"] == Failed("strengthen:key-bound")

    def test_session_and_nonce_echoed_verbatim(self):
        session_id = fresh_session_id()
        nonce = fresh_nonce()
        request = request_contract("system-files", "host-b",
                                   session_id=session_id, nonce=nonce)
        results = run_session(
            offer_policy([PAIRS[0]]), offer_policy([PAIRS[0]]), request=request,
        )
        agreed = results["appraiser"]
        assert (agreed.session_id, agreed.nonce) == (session_id, nonce)
        assert results["attester"].nonce == nonce

    def test_registry_filters_options_before_the_wire(self):
        """An option whose APB is not executable locally is never offered."""
        thin = registry_for(PAIRS[:1])
        results = run_session(
            offer_policy([PAIRS[0], PAIRS[1]]),
            offer_policy([PAIRS[0], PAIRS[1]]),
            appraiser_registry=thin,
        )
        assert results["appraiser"].option == PAIRS[0]

    def test_attester_registry_limits_the_counter(self):
        thin = registry_for(PAIRS[1:2])
        results = run_session(
            offer_policy([PAIRS[0], PAIRS[1]]),
            offer_policy([PAIRS[0], PAIRS[1]]),
            attester_registry=thin,
        )
        assert results["appraiser"].option == PAIRS[1]


class TestDecide:
    def request(self):
        return request_contract("db-files", "host-b", session_id=SESSION, nonce=NONCE)

    def test_fail_never_reaches_the_wire(self):
        policy = SelectionPolicy((Rule(action=Fail("not allowed")),))
        left, _ = channel_pair()
        outcome = appraiser_negotiate(left, policy, FULL_REGISTRY,
                                      self.request(), peer())
        assert outcome == Failed("not allowed")

    def test_defer_decrements_hops(self):
        policy = SelectionPolicy((
            Rule(action=Defer("upstream:9000")),
        ))
        outcome = appraiser_negotiate(None, policy, FULL_REGISTRY,
                                      self.request(), peer())
        assert outcome == Deferred("upstream:9000", MAX_HOPS - 1)

    def test_defer_with_exhausted_budget_fails(self):
        policy = SelectionPolicy((Rule(action=Defer("upstream:9000")),))
        request = request_contract("db-files", "host-b", hops=0,
                                   session_id=SESSION, nonce=NONCE)
        outcome = appraiser_negotiate(None, policy, FULL_REGISTRY, request, peer())
        assert isinstance(outcome, Failed)
        assert "hop budget" in outcome.reason

    def test_strengthen_failure_names_the_level(self):
        policy = SelectionPolicy((
            Rule(action=Strengthen(IdentityStrength.KEY_BOUND)),
        ))
        outcome = appraiser_negotiate(
            None, policy, FULL_REGISTRY, self.request(),
            peer(strength=IdentityStrength.ANONYMOUS),
        )
        assert outcome == Failed("strengthen:key-bound")

    def test_decide_rejects_non_request(self):
        from attestkit.errors import ProtocolViolation

        initial = Contract(ContractPhase.INITIAL, SESSION, NONCE,
                           resource="r", options=(PAIRS[0],))
        with pytest.raises(ProtocolViolation):
            appraiser_decide(offer_policy([PAIRS[0]]), initial, peer())


class TestViolations:
    """Hand-rolled peers that break the rules mid-session."""

    def request(self):
        return request_contract("system-files", "host-b",
                                session_id=SESSION, nonce=NONCE)

    def run_against_attester(self, script):
        """script(channel, initial) plays the attester's side raw."""
        left, right = channel_pair()
        done = {}

        def fake_attester():
            initial = decode_contract(right.recv())
            script(right, initial)

        thread = threading.Thread(target=fake_attester)
        thread.start()
        outcome = appraiser_negotiate(
            left, offer_policy([PAIRS[0], PAIRS[1]]), FULL_REGISTRY,
            self.request(), peer(),
        )
        thread.join(timeout=5)
        left.close()
        right.close()
        return outcome

    def test_counter_superset_refused(self):
        def script(chan, initial):
            counter = Contract(
                ContractPhase.COUNTER, initial.session_id, initial.nonce,
                options=(PAIRS[0], PAIRS[3]),  # PAIRS[3] was never offered
            )
            chan.send(counter.to_json())
            refusal = decode_contract(chan.recv())
            assert refusal.phase is ContractPhase.REFUSAL

        outcome = self.run_against_attester(script)
        assert isinstance(outcome, Failed)
        assert "subset" in outcome.reason

    def test_tampered_nonce_echo_refused(self):
        def script(chan, initial):
            counter = Contract(
                ContractPhase.COUNTER, initial.session_id, "2" * 64,
                options=(PAIRS[0],),
            )
            chan.send(counter.to_json())
            chan.recv()

        outcome = self.run_against_attester(script)
        assert isinstance(outcome, Failed)
        assert "echo" in outcome.reason

    def test_wrong_phase_after_initial_refused(self):
        def script(chan, initial):
            selection = Contract(
                ContractPhase.SELECTION, initial.session_id, initial.nonce,
                selected=PAIRS[0],
            )
            chan.send(selection.to_json())
            chan.recv()

        outcome = self.run_against_attester(script)
        assert isinstance(outcome, Failed)
        assert "selection" in outcome.reason

    def test_attester_rejects_selection_outside_counter(self):
        left, right = channel_pair()
        outcome_box = {}

        def attester_side():
            initial = decode_contract(right.recv())
            outcome_box["outcome"] = attester_negotiate(
                right, offer_policy([PAIRS[0]]), FULL_REGISTRY,
                initial, peer(),
            )

        thread = threading.Thread(target=attester_side)
        thread.start()
        initial = Contract(ContractPhase.INITIAL, SESSION, NONCE,
                           resource="r", options=(PAIRS[0], PAIRS[1]))
        left.send(initial.to_json())
        counter = decode_contract(left.recv())
        assert counter.options == (PAIRS[0],)
        # select something outside the counter (but inside our own offer)
        left.send(Contract(ContractPhase.SELECTION, SESSION, NONCE,
                           selected=PAIRS[1]).to_json())
        refusal = decode_contract(left.recv())
        thread.join(timeout=5)
        assert refusal.phase is ContractPhase.REFUSAL
        assert "counter" in refusal.reason
        assert isinstance(outcome_box["outcome"], Failed)
        left.close()
        right.close()

    def test_attester_rejects_session_opened_with_counter(self):
        left, right = channel_pair()
        box = {}

        def attester_side():
            first = decode_contract(right.recv())
            box["outcome"] = attester_negotiate(
                right, offer_policy([PAIRS[0]]), FULL_REGISTRY, first, peer(),
            )

        thread = threading.Thread(target=attester_side)
        thread.start()
        left.send(Contract(ContractPhase.COUNTER, SESSION, NONCE,
                           options=(PAIRS[0],)).to_json())
        refusal = decode_contract(left.recv())
        thread.join(timeout=5)
        assert refusal.phase is ContractPhase.REFUSAL
        assert isinstance(box["outcome"], Failed)
        left.close()
        right.close()


def test_randomized_policy_pairs_match_oracle():
    """Any two randomly drawn Offer policies agree exactly when the
    oracle says they should, and on the option the oracle names."""
    rng = random.Random(20260822)
    for trial in range(150):
        k_app = rng.randint(0, len(PAIRS))
        k_att = rng.randint(0, len(PAIRS))
        app_options = rng.sample(PAIRS, k_app)
        att_options = rng.sample(PAIRS, k_att)
        expected = negotiation_expectation(app_options, att_options)

        results = run_session(
            offer_policy(app_options), offer_policy(att_options),
        )
        appraiser, attester = results["appraiser"], results["attester"]
        if expected is None:
            assert isinstance(appraiser, Failed), f"trial {trial}"
            assert isinstance(attester, Failed), f"trial {trial}"
        else:
            assert isinstance(appraiser, Agreed), f"trial {trial}"
            assert appraiser.option == expected, f"trial {trial}"
            assert attester == appraiser, f"trial {trial}"
