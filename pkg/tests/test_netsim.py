import pytest
import sympy
from hypothesis import given, settings, strategies as st

from sendnet.netsim.engine import Simulator, run
from sendnet.netsim.model import (
    Breakpoints,
    RelayComplexityModel,
    constant,
    expected_total_time,
    predicted_transmissions,
)
from sendnet.netsim.scenario import Group, ScenarioError, SimScenario, bundled_scenario, load_scenario, parse_scenario

# --- parser ---

GOOD = """
[scenario]
name = t
seed = 4
rate = 2

[group a]
members = 5
delegation d1 = 3
other = 2
offline = 1
"""


def test_parse_minimal():
    sc = parse_scenario(GOOD)
    assert sc.name == "t" and sc.seed == 4 and sc.rate == 2
    (g,) = sc.groups
    assert (g.members, g.delegation, g.other, g.offline) == (5, {"d1": 3}, 2, 1)


@pytest.mark.parametrize("text,line,col", [
    ("[scenario]\nrate = x\n[group a]\nmembers = 2\nother = 2\n", 2, 8),
    ("[scenario]\nbogus = 1\n", 2, 1),
    ("[nope]\n", 1, 1),
    ("[scenario]\n[group a]\nmembers = 3\nother = 2\n", 2, 1),
    ("rate = 1\n", 1, 1),
    ("[scenario]\n  k=\n", 2, 5),
    ("[group a]\nmembers = 4\ndelegation = 4\n", 3, 1),
])
def test_parse_errors_carry_position(text, line, col):
    with pytest.raises(ScenarioError) as info:
        parse_scenario(text)
    assert (info.value.line, info.value.column) == (line, col)


def test_offline_cannot_exceed_other():
    with pytest.raises(ScenarioError):
        parse_scenario("[group a]\nmembers = 3\nother = 3\noffline = 4\n")


def test_bundled_scenarios_parse():
    for name in ("delegation_500", "pairwise_500", "two_member", "mixed"):
        assert load_scenario(bundled_scenario(f"{name}.scn")).groups


# --- transmission formulas ---


def scenario(*groups, rate=1, intervals=1):
    return SimScenario(rate=rate, intervals=intervals, groups=list(groups))


def test_single_delegation_500():
    no, de, i = predicted_transmissions(scenario(Group("g", 500, {"d": 500})))
    assert (no, de) == (249_500, 501)
    assert abs(i - 498.0) / 498.0 < 1e-3


def test_two_members_no_delegation():
    assert predicted_transmissions(scenario(Group("g", 2, {}, 2))) == (2, 2, 1.0)


def hop_count_oracle(sc):
    """Walk the forwarding rules for every possible sender and average: every sender costs the same."""
    total = 0
    for g in sc.groups:
        costs = set()
        for sender_on_deleg in ([True] if g.delegation else []) + ([False] if g.other else []):
            direct = sum(g.delegation.values()) - (1 if sender_on_deleg else 0)
            edge_forwards = len(g.delegation) + g.other - (0 if sender_on_deleg else 1)
            costs.add(direct + edge_forwards + 1)
        assert len(costs) == 1
        total += costs.pop() * sc.messages_per_group
    return total


groups_strategy = st.lists(
    st.tuples(st.lists(st.integers(0, 40), max_size=4), st.integers(0, 20)).filter(lambda t: sum(t[0]) + t[1] >= 2),
    min_size=1, max_size=4)


@settings(max_examples=200, deadline=None)
@given(groups_strategy, st.integers(1, 5))
def test_delegation_count_matches_hop_walk(groups, rate):
    sc = scenario(*(Group(f"g{i}", sum(d) + o, {f"d{j}": m for j, m in enumerate(d)}, o)
                    for i, (d, o) in enumerate(groups)), rate=rate)
    no, de, _ = predicted_transmissions(sc)
    assert de == hop_count_oracle(sc)
    assert no == sum(g.members * (g.members - 1) for g in sc.groups) * rate


@settings(max_examples=200, deadline=None)
@given(st.lists(st.lists(st.integers(1, 60), min_size=1, max_size=5), min_size=1, max_size=4))
def test_improvement_at_least_one_when_all_delegated(groups):
    # the bound needs three members: a pair on one node sends 2 vs 3
    groups = [d for d in groups if sum(d) >= max(3, len(d) + 1)]
    if not groups:
        return
    sc = scenario(*(Group(f"g{i}", sum(d), {f"d{j}": m for j, m in enumerate(d)}) for i, d in enumerate(groups)))
    assert predicted_transmissions(sc)[2] >= 1.0


def test_per_group_improvement_boundary_exhaustive():
    for m in range(2, 40):
        for d in range(1, m):
            sizes = [m - d + 1] + [1] * (d - 1)
            _, _, i = predicted_transmissions(scenario(Group("g", m, {f"d{j}": s for j, s in enumerate(sizes)})))
            assert (i >= 1.0) == (m * (m - 1) >= m + d)
            if m >= 3:
                assert i >= 1.0


def test_pair_on_one_delegation_node_is_below_one():
    assert predicted_transmissions(scenario(Group("g", 2, {"d": 2}))) == (2, 3, 2 / 3)


def test_zero_delegation_count_rejected():
    with pytest.raises(ZeroDivisionError):
        predicted_transmissions(SimScenario(groups=[]))


# --- time integral ---


def model(latency=constant(0), loss=constant(0), retransmit=constant(0), nodes=50, k=3, horizon=10.0):
    return RelayComplexityModel(7, nodes, k, 0.25, horizon, latency, loss, retransmit)


def test_constant_integrand_exact():
    m = model()
    assert expected_total_time(m, "broadcast") == pytest.approx(7 * 49 * 0.25 * 10, rel=1e-12)


def test_edge_is_k_over_n_minus_1_of_broadcast():
    m = model(latency=Breakpoints(((0, 0.1), (4, 0.9), (10, 0.3))), loss=constant(0.2), retransmit=constant(1.5))
    ratio = expected_total_time(m, "edge_network") / expected_total_time(m, "broadcast")
    assert ratio == pytest.approx(3 / 49, rel=1e-12)


def test_ramp_matches_symbolic_integral():
    lat = Breakpoints(((0, 0.0), (6, 1.2), (10, 1.2)))
    loss = Breakpoints(((0, 0.0), (10, 0.3)))
    rt = Breakpoints(((0, 1.0), (3, 2.0)))
    m = model(latency=lat, loss=loss, retransmit=rt)
    t = sympy.symbols("t")
    l_expr = sympy.Piecewise((sympy.Rational(12, 10) * t / 6, t <= 6), (sympy.Rational(12, 10), True))
    p_expr = sympy.Rational(3, 100) * t
    r_expr = sympy.Piecewise((1 + t / 3, t <= 3), (2, True))
    integrand = 7 * 49 * (sympy.Rational(1, 4) + l_expr) * (1 + r_expr * p_expr)
    exact = float(sympy.integrate(integrand, (t, 0, 10)))
    assert expected_total_time(m, "broadcast") == pytest.approx(exact, rel=1e-8)


def test_invalid_model_inputs():
    with pytest.raises(ValueError):
        model(loss=constant(1.5))
    with pytest.raises(ValueError):
        model(latency=constant(-1))
    with pytest.raises(ValueError):
        Breakpoints(((1, 0), (1, 2)))
    with pytest.raises(ValueError):
        expected_total_time(model(), "carrier pigeon")


# --- simulation ---


def test_delegation_500_measured_equals_predicted():
    rep = run(load_scenario(bundled_scenario("delegation_500.scn")))
    assert rep.matches_prediction()
    assert rep.counters["delegation_direct"] == 499
    assert rep.counters["clientnode_to_edge"] == 1
    assert rep.counters["edge_to_clientnode"] == 1
    assert rep.counters["dedup_discards"] == 1
    assert rep.counters["key_exchange"] == 499


def test_offline_clients_get_cached_envelopes_once():
    sc = load_scenario(bundled_scenario("mixed.scn"))
    sim = Simulator(sc)
    offline = set(sim.net.offline)
    rep = sim.run()
    assert rep.counters["cached"] == rep.counters["cache_retrievals"] > 0
    assert not sim.cache
    for ev in sim.events:
        for c in offline:
            if c.startswith(ev.group + "/") and c != ev.sender:
                assert sim.delivered[(c, ev.event_id)] == 1


def test_same_seed_identical_reports():
    sc = load_scenario(bundled_scenario("mixed.scn"))
    a, b = run(sc), run(load_scenario(bundled_scenario("mixed.scn")))
    assert a.to_text() == b.to_text() and a.to_counters() == b.to_counters()


def test_settlement_totals_conserved():
    rep = run(load_scenario(bundled_scenario("mixed.scn")))
    s = rep.settlement
    assert s["errors"] == 0 and s["bills"] > 0
    assert s["outbound_total"] == s["relay_total"] == s["inbound_total"]
    assert s["segments"] == rep.counters["edge_to_clientnode"]


@settings(max_examples=12, deadline=None)
@given(st.lists(st.tuples(st.lists(st.integers(1, 6), max_size=2), st.integers(0, 4), st.integers(0, 2)),
                min_size=1, max_size=2), st.integers(1, 2), st.integers(0, 10_000))
def test_random_scenarios_deliver_everything_once(groups, rate, seed):
    gs = []
    for i, (d, o, off) in enumerate(groups):
        if sum(d) + o < 2:
            o += 2
        gs.append(Group(f"g{i}", sum(d) + o, {f"d{j}": m for j, m in enumerate(d)}, o, min(off, o)))
    sc = SimScenario(seed=seed, rate=rate, intervals=2, edges=4, k=2, message_size=64, settlement=False,
                     reconnect=15, groups=gs)
    rep = run(sc)
    c = rep.counters
    assert rep.matches_prediction()
    assert c["duplicate_deliveries"] == c["missing_deliveries"] == c["decrypt_failures"] == 0
    assert c["deliveries"] == sum(rate * 2 * (g.members - 1) for g in gs)
