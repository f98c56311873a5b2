"""Selection-policy parsing, first-match evaluation, and the three
negotiation-facing operations."""

import random

import pytest

from attestkit.errors import NoAcceptableOptionError, PolicySyntaxError
from attestkit.policy import (
    Defer,
    Fail,
    IdentityStrength,
    Offer,
    Phase,
    PolicyContext,
    Role,
    Rule,
    SelectionPolicy,
    Strengthen,
    choose_preferred,
    confirm_selection,
    evaluate,
    filter_options,
    parse_policy,
    render_policy,
)

from oracles import naive_policy_action

U = [f"{i:08x}-2222-4000-8000-{i:012x}" for i in range(16)]


def ctx(role=Role.APPRAISER, peer="peer-a", strength=IdentityStrength.TRANSPORT_AUTHENTICATED,
        resource="disk/etc", phase=Phase.INITIAL):
    return PolicyContext(role, peer, strength, resource, phase)


SAMPLE = f"""
# appraiser side of a disk-integrity policy
role=appraiser peer=monitor-* strength>=transport-authenticated resource=disk/* -> Offer({U[0]}/{U[1]}, {U[2]}/{U[3]})
role=appraiser peer=* resource=secret/* -> Strengthen(key-bound)
role=attester peer=tcp:* -> Fail("anonymous peers are refused")
role=appraiser resource=elsewhere/* -> Defer(other-am.test:9603)
* -> Fail("default deny")
"""


class TestParsing:
    def test_sample_parses_and_round_trips(self):
        policy = parse_policy(SAMPLE)
        assert len(policy.rules) == 5
        assert parse_policy(render_policy(policy)) == policy

    def test_first_rule_fields(self):
        rule = parse_policy(SAMPLE).rules[0]
        assert rule.role is Role.APPRAISER
        assert rule.peer_glob == "monitor-*"
        assert rule.min_strength is IdentityStrength.TRANSPORT_AUTHENTICATED
        assert rule.resource_glob == "disk/*"
        assert rule.action == Offer(((U[0], U[1]), (U[2], U[3])))

    def test_comments_and_blank_lines_ignored(self):
        policy = parse_policy("# nothing\n\n* -> Fail(\"x\")\n")
        assert len(policy.rules) == 1

    def test_missing_catch_all_rejected(self):
        with pytest.raises(PolicySyntaxError, match="catch-all"):
            parse_policy(f"role=appraiser -> Offer({U[0]}/{U[1]})\n")

    def test_empty_offer_rejected(self):
        with pytest.raises(PolicySyntaxError):
            parse_policy("* -> Offer()\n")

    def test_duplicate_offer_option_rejected(self):
        with pytest.raises(PolicySyntaxError):
            parse_policy(f"* -> Offer({U[0]}/{U[1]}, {U[0]}/{U[1]})\n")

    def test_malformed_option_rejected(self):
        with pytest.raises(PolicySyntaxError, match="apb-uuid/spec-uuid"):
            parse_policy(f"* -> Offer({U[0]})\n")

    def test_unknown_action_rejected(self):
        with pytest.raises(PolicySyntaxError, match="unknown action"):
            parse_policy('* -> Surrender("now")\n')

    def test_unknown_strength_rejected(self):
        with pytest.raises(PolicySyntaxError):
            parse_policy('strength>=heroic -> Fail("x")\n* -> Fail("y")\n')

    def test_error_carries_line_number(self):
        with pytest.raises(PolicySyntaxError) as excinfo:
            parse_policy('# one\n# two\nrole=appraiser Fail("x")\n* -> Fail("y")\n')
        assert excinfo.value.line == 3


class TestEvaluate:
    def test_first_match_wins(self):
        policy = parse_policy(SAMPLE)
        action = evaluate(policy, ctx(peer="monitor-7", resource="disk/etc"))
        assert isinstance(action, Offer)
        # the same context but a non-monitor peer falls to Strengthen only
        # for secret/*; disk/* from an unknown peer lands on default deny
        action = evaluate(policy, ctx(peer="stranger", resource="disk/etc"))
        assert action == Fail("default deny")

    def test_strength_is_a_floor(self):
        policy = parse_policy(SAMPLE)
        weak = ctx(peer="monitor-1", strength=IdentityStrength.ANONYMOUS)
        assert evaluate(policy, weak) == Fail("default deny")
        strong = ctx(peer="monitor-1", strength=IdentityStrength.KEY_BOUND)
        assert isinstance(evaluate(policy, strong), Offer)

    def test_strength_ladder_is_total_order(self):
        assert (IdentityStrength.ANONYMOUS
                < IdentityStrength.TRANSPORT_AUTHENTICATED
                < IdentityStrength.KEY_BOUND)

    def test_defer_and_strengthen_actions_surface(self):
        policy = parse_policy(SAMPLE)
        assert evaluate(policy, ctx(resource="elsewhere/db")) == Defer("other-am.test:9603")
        assert evaluate(policy, ctx(resource="secret/key")) == Strengthen(
            IdentityStrength.KEY_BOUND
        )

    def test_catch_all_always_matches(self):
        policy = parse_policy('* -> Fail("nothing else")\n')
        assert evaluate(policy, ctx(role=Role.ATTESTER, peer="", resource="")) == Fail(
            "nothing else"
        )


def _random_policy_and_rules(rng):
    """Build a random policy twice: once as attestkit rules, once as the
    raw tuples the oracle understands."""
    strengths = list(IdentityStrength)
    actions = [
        Offer(((U[rng.randrange(4)], U[4 + rng.randrange(4)]),)),
        Fail("no"),
        Strengthen(IdentityStrength.KEY_BOUND),
        Defer("elsewhere.test:1"),
    ]
    rules = []
    raw = []
    for _ in range(rng.randint(1, 6)):
        role = rng.choice([None, Role.APPRAISER, Role.ATTESTER])
        peer = rng.choice([None, "peer-*", "peer-1", "other*", "?"])
        strength = rng.choice([None] + strengths)
        resource = rng.choice([None, "r/*", "r/1", "*", "q"])
        action = rng.choice(actions)
        rules.append(Rule(action=action, role=role, peer_glob=peer,
                          min_strength=strength, resource_glob=resource))
        raw.append((role, peer, strength, resource, action))
    final = rng.choice(actions)
    rules.append(Rule(action=final))
    raw.append((None, None, None, None, final))
    return SelectionPolicy(tuple(rules)), raw


def test_evaluate_matches_naive_scan_on_random_policies():
    rng = random.Random(20260822)
    for _ in range(1000):
        policy, raw = _random_policy_and_rules(rng)
        context = ctx(
            role=rng.choice([Role.APPRAISER, Role.ATTESTER]),
            peer=rng.choice(["peer-1", "peer-22", "other9", "x", ""]),
            strength=rng.choice(list(IdentityStrength)),
            resource=rng.choice(["r/1", "r/2/3", "q", "", "zz"]),
        )
        expected = naive_policy_action(
            raw, context.role, context.peer_identity,
            context.identity_strength, context.resource,
        )
        assert evaluate(policy, context) == expected


class TestNegotiationOps:
    def offer_policy(self, *options):
        return SelectionPolicy((Rule(action=Offer(tuple(options))),))

    def test_filter_preserves_offered_order(self):
        policy = self.offer_policy((U[0], U[1]), (U[2], U[3]), (U[4], U[5]))
        offered = [(U[4], U[5]), (U[9], U[9]), (U[0], U[1])]
        assert filter_options(policy, ctx(role=Role.ATTESTER), offered) == [
            (U[4], U[5]),
            (U[0], U[1]),
        ]

    def test_filter_under_fail_permits_nothing(self):
        policy = SelectionPolicy((Rule(action=Fail("no")),))
        assert filter_options(policy, ctx(), [(U[0], U[1])]) == []

    def test_choose_preferred_uses_offer_rank_not_counter_order(self):
        policy = self.offer_policy((U[0], U[1]), (U[2], U[3]), (U[4], U[5]))
        counter = [(U[4], U[5]), (U[2], U[3])]
        assert choose_preferred(policy, ctx(phase=Phase.COUNTER), counter) == (U[2], U[3])

    def test_choose_preferred_empty_intersection_raises(self):
        policy = self.offer_policy((U[0], U[1]))
        with pytest.raises(NoAcceptableOptionError):
            choose_preferred(policy, ctx(phase=Phase.COUNTER), [(U[2], U[3])])

    def test_confirm_selection_consistent_with_filter(self):
        rng = random.Random(99)
        for _ in range(300):
            policy, _ = _random_policy_and_rules(rng)
            context = ctx(
                role=rng.choice([Role.APPRAISER, Role.ATTESTER]),
                peer=rng.choice(["peer-1", "x"]),
                strength=rng.choice(list(IdentityStrength)),
                resource=rng.choice(["r/1", "q"]),
                phase=Phase.FINAL,
            )
            option = (U[rng.randrange(8)], U[rng.randrange(8)])
            assert confirm_selection(policy, context, option) == (
                filter_options(policy, context, [option]) == [option]
            )
