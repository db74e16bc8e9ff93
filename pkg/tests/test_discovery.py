import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iotfog.discovery import (
    DiscoveryAgent,
    ExamineOutcome,
    NoCandidates,
    SearchParams,
    default_params,
    examine,
    install_discovery,
    search,
    select,
)
from iotfog.fognet import NodeKind, Power, SimNetwork, SimulationError, TopologyConfig, build_topology
from iotfog.identity import generate_keypair
from iotfog.ledger import ChainState, append_block, build_block, new_transaction
from iotfog.nodes import deploy_consensus, submit_transaction


def network(n=50, fog=5, seed=3, slot=0.0, jitter=1.0):
    net = build_topology(TopologyConfig(n, n_fog=fog, seed=seed, jitter_ms=jitter, tx_slot_ms=slot))
    net.record_trace = False
    return net


def far_device(net):
    """A device attached to the last fog node, two fog hops from fog 0."""
    return net.of_kind(NodeKind.IOT)[-1]


class TestSearch:
    def test_self(self):
        net = network()
        install_discovery(net)
        me = net.order[0].id
        result = search(net, me, me)
        assert result.found and result.route == (me,) and result.elapsed_ms == 0

    def test_on_found_off_exhausts_budget(self):
        net = network()
        install_discovery(net)
        params = default_params(net)
        requester, target = net.order[0].id, far_device(net).id
        on = search(net, requester, target, params)
        net.drain()
        assert on.found and on.elapsed_ms < params.wave_timeout_ms and on.waves_used == 1
        net.set_power(target, Power.OFF)
        off = search(net, requester, target, params)
        assert not off.found
        assert off.elapsed_ms == params.retries * params.wave_timeout_ms > on.elapsed_ms
        assert off.waves_used == params.retries

    def test_default_params(self):
        net = network()
        params = default_params(net)
        assert net.diameter() == 3
        assert (params.ttl, params.retries, params.wave_timeout_ms) == (4, 2, 60.0)

    def test_ttl_zero(self):
        net = network()
        install_discovery(net)
        fog0 = net.order[0]
        child = next(nb for nb in fog0.neighbors if net.node(nb).kind is NodeKind.IOT)
        gate = SearchParams(ttl=0, retries=1, wave_timeout_ms=60)
        assert search(net, fog0.id, child, gate).found
        net.drain()
        assert not search(net, fog0.id, far_device(net).id, gate).found

    def test_requester_off(self):
        net = network()
        install_discovery(net)
        net.set_power(net.order[0].id, Power.OFF)
        with pytest.raises(SimulationError):
            search(net, net.order[0].id, net.order[1].id)

    def test_duplicate_suppression(self):
        net = network(n=30, fog=5)
        install_discovery(net)
        target = far_device(net).id
        net.set_power(target, Power.OFF)
        params = SearchParams(ttl=10, retries=1, wave_timeout_ms=200)
        search(net, net.order[0].id, target, params)
        # Each live node forwards once to all neighbors but the sender.
        bound = sum(len(n.neighbors) for n in net.order)
        assert net.metrics.sent <= bound

    @settings(max_examples=20)
    @given(st.integers(0, 1000), st.integers(12, 60))
    def test_route_is_a_live_path(self, seed, n):
        net = network(n=n, fog=4, seed=seed)
        install_discovery(net)
        devices = net.of_kind(NodeKind.IOT)
        requester, target = devices[0].id, devices[-1].id
        result = search(net, requester, target)
        assert result.found
        assert result.route[0] == requester and result.route[-1] == target
        assert all((a, b) in net.links for a, b in zip(result.route, result.route[1:]))
        assert len(set(result.route)) == len(result.route)


def synced_network():
    net = network(n=20, fog=4)
    deployment = deploy_consensus(net)
    install_discovery(net, deployment.chain_of)
    dev = net.of_kind(NodeKind.IOT)[0]
    for i in range(3):
        submit_transaction(net, deployment, dev.id, new_transaction(dev.key, i, i, b"x"))
    net.drain()
    return net, deployment


class TestExamine:
    def test_verified_is_one_round_trip(self):
        net, deployment = synced_network()
        requester, target = net.order[0].id, far_device(net).id
        found = search(net, requester, target)
        net.drain()
        result = examine(net, requester, target, found)
        hops = list(zip(found.route, found.route[1:]))
        assert result.outcome is ExamineOutcome.VERIFIED
        assert result.elapsed_ms == pytest.approx(2 * sum(net.latency(a, b) for a, b in hops))
        assert result.head_hash == deployment.head_of(target)
        assert deployment.chain_of(target).height >= 1

    def test_not_found_sends_nothing(self):
        net, _ = synced_network()
        target = far_device(net).id
        net.set_power(target, Power.OFF)
        found = search(net, net.order[0].id, target)
        net.drain()
        sent = net.metrics.sent
        result = examine(net, net.order[0].id, target, found)
        assert result.outcome is ExamineOutcome.NODE_OFFLINE and result.elapsed_ms == 0
        assert net.metrics.sent == sent

    def test_zeroed_signature(self):
        net, _ = synced_network()
        target = far_device(net).id
        agent = net.node(target).apps["discovery"]
        agent.respond = lambda nonce, head: bytes(64)
        found = search(net, net.order[0].id, target)
        net.drain()
        assert examine(net, net.order[0].id, target, found).outcome is ExamineOutcome.BAD_RESPONSE

    def test_head_not_on_requester_chain(self):
        net = network(n=12, fog=4)
        miner, dev = generate_keypair(1), generate_keypair(2)
        forked = append_block(ChainState(), build_block(ChainState(), [new_transaction(dev, 0, 0, b"f")], miner, 1))
        target = far_device(net).id
        install_discovery(net, lambda node: forked if node == target else ChainState())
        found = search(net, net.order[0].id, target)
        net.drain()
        assert examine(net, net.order[0].id, target, found).outcome is ExamineOutcome.BAD_RESPONSE

    def test_target_goes_off_after_search(self):
        net, _ = synced_network()
        target = far_device(net).id
        found = search(net, net.order[0].id, target)
        net.drain()
        net.set_power(target, Power.OFF)
        result = examine(net, net.order[0].id, target, found, timeout_ms=40)
        assert result.outcome is ExamineOutcome.NODE_OFFLINE and result.elapsed_ms == pytest.approx(40)


class TestSelect:
    def _star(self, latencies):
        net = SimNetwork()
        hub = net.add_node(generate_keypair(0), NodeKind.FOG)
        others = []
        for i, lat in enumerate(latencies, 1):
            node = net.add_node(generate_keypair(i), NodeKind.FOG)
            net.link(hub.id, node.id, lat)
            others.append(node.id)
        install_discovery(net)
        return net, hub.id, others

    def test_fastest_wins(self):
        net, hub, others = self._star([4.0, 1.5, 3.0])
        result = select(net, hub, others)
        assert result.chosen == others[1]
        assert dict(result.round_trips)[others[1]] == 3.0

    def test_tie_broken_by_id(self):
        net, hub, others = self._star([2.0, 2.0, 2.0])
        assert select(net, hub, others).chosen == min(others)

    def test_off_candidates_skipped(self):
        net, hub, others = self._star([1.0, 2.0])
        net.set_power(others[0], Power.OFF)
        result = select(net, hub, others, timeout_ms=20)
        assert result.chosen == others[1] and result.candidates_considered == 2

    def test_no_candidates(self):
        net, hub, others = self._star([1.0])
        net.set_power(others[0], Power.OFF)
        with pytest.raises(NoCandidates):
            select(net, hub, others, timeout_ms=10)
        with pytest.raises(NoCandidates):
            select(net, hub, [])

    def test_probe_order_does_not_bias(self):
        """With a slow radio the later PINGs leave later, but RTT is per departure."""
        net, hub, others = self._star([2.0, 2.0, 2.0])
        net.tx_slot_ms = 5.0
        rtts = dict(select(net, hub, others).round_trips)
        assert len(set(rtts.values())) == 1

    @given(st.lists(st.floats(0.5, 20), min_size=1, max_size=8))
    def test_choice_is_argmin(self, lats):
        net, hub, others = self._star(lats)
        result = select(net, hub, others, timeout_ms=100)
        best = min(zip(lats, others))[1]
        assert result.chosen == best


def test_agent_registered():
    net = network(n=12, fog=4)
    agents = install_discovery(net)
    assert all(isinstance(net.node(i).apps["discovery"], DiscoveryAgent) for i in agents)
