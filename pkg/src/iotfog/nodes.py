"""Runs consensus peers and observers on top of a simulated network."""

from __future__ import annotations

from dataclasses import dataclass

from iotfog._codec import DecodeError
from iotfog.consensus import (
    CONSENSUS_TAGS,
    CommitCertificate,
    ConsensusState,
    ObserverState,
    Outbound,
    ViewChange,
    decode_message,
    encode_message,
    handle_message,
    new_peer,
    observe,
    tick,
)
from iotfog.fognet import NodeKind, SimNetwork, SimNode
from iotfog.ledger import ChainState, Transaction


def default_view_timeout(net: SimNetwork) -> float:
    """Ten times the mean one-way link latency (radio slot included)."""
    return 10.0 * (net.mean_latency() + net.tx_slot_ms)


class FogPeer:
    """A consensus peer bound to one simulated node.

    Transactions submitted by devices are relayed once to the other peers;
    every block this peer commits is forwarded to its attached observers.
    """

    def __init__(self, net: SimNetwork, node_id: bytes, peers: list[bytes], view_timeout_ms: float) -> None:
        self.net = net
        self.id = node_id
        self.peer_set = frozenset(peers)
        self.state: ConsensusState = new_peer(net.node(node_id).key, peers, view_timeout_ms)
        self.observers = [nb for nb in net.node(node_id).neighbors if nb not in self.peer_set]
        self.commit_times: dict[int, float] = {}
        self.malformed = 0
        self.view_changes_sent = 0
        self._timer_at: float | None = None
        net.install(node_id, CONSENSUS_TAGS, self.on_message)

    @property
    def chain(self) -> ChainState:
        return self.state.chain

    def on_message(self, net: SimNetwork, node: SimNode, src: bytes, data: bytes) -> None:
        try:
            msg = decode_message(data)
        except DecodeError:
            self.malformed += 1
            return
        pooled = len(self.state.pool)
        state, out = handle_message(self.state, msg, net.clock)
        if isinstance(msg, Transaction) and src not in self.peer_set and msg in state.pool[pooled:]:
            out = [Outbound(msg)] + out
        self.apply(state, out)

    def apply(self, state: ConsensusState, out: list[Outbound]) -> None:
        committed = len(self.state.certificates)
        self.state = state
        for item in out:
            self.emit(item)
        for cert in state.certificates[committed:]:
            self.commit_times[cert.height] = self.net.clock
            data = encode_message(cert)
            for obs in self.observers:
                self.net.send(self.id, obs, data)
        self._arm_timer()

    def emit(self, item: Outbound) -> None:
        data = encode_message(item.message)
        if isinstance(item.message, ViewChange):
            self.view_changes_sent += 1
        if item.to is not None:
            self.net.send(self.id, item.to, data)
            return
        for peer in self.state.peers:
            if peer != self.id:
                self.net.send(self.id, peer, data)

    def _arm_timer(self) -> None:
        deadline = self.state.deadline
        if deadline is None or deadline == self._timer_at:
            return
        self._timer_at = deadline

        def fire(net: SimNetwork) -> None:
            if self._timer_at == deadline:
                self._timer_at = None
            self.apply(*tick(self.state, net.clock))

        self.net.schedule(self.id, deadline, fire)


class ObserverNode:
    """An IoT device that appends blocks carried by valid commit certificates."""

    def __init__(self, net: SimNetwork, node_id: bytes, peers: list[bytes]) -> None:
        self.id = node_id
        self.state = ObserverState(peers=tuple(sorted(peers)))
        self.malformed = 0
        net.install(node_id, CONSENSUS_TAGS, self.on_message)

    @property
    def chain(self) -> ChainState:
        return self.state.chain

    def on_message(self, net: SimNetwork, node: SimNode, src: bytes, data: bytes) -> None:
        try:
            msg = decode_message(data)
        except DecodeError:
            self.malformed += 1
            return
        if isinstance(msg, CommitCertificate):
            self.state = observe(self.state, msg)


@dataclass
class Deployment:
    peers: dict[bytes, FogPeer]
    observers: dict[bytes, ObserverNode]

    def chain_of(self, node_id: bytes) -> ChainState:
        app = self.peers.get(node_id) or self.observers[node_id]
        return app.chain

    def head_of(self, node_id: bytes) -> bytes:
        return self.chain_of(node_id).head_hash


def deploy_consensus(net: SimNetwork, view_timeout_ms: float | None = None) -> Deployment:
    """Fog nodes become consensus peers; IoT devices become observers."""
    timeout = default_view_timeout(net) if view_timeout_ms is None else view_timeout_ms
    peer_ids = sorted(n.id for n in net.of_kind(NodeKind.FOG))
    peers = {pid: FogPeer(net, pid, peer_ids, timeout) for pid in peer_ids}
    observers = {n.id: ObserverNode(net, n.id, peer_ids) for n in net.of_kind(NodeKind.IOT)}
    return Deployment(peers, observers)


def submit_transaction(net: SimNetwork, deployment: Deployment, origin: bytes, tx: Transaction) -> None:
    """Inject ``tx`` at ``origin``: a peer pools it directly, a device sends it
    to the first consensus peer it is linked to."""
    if origin in deployment.peers:
        peer = deployment.peers[origin]
        state, out = handle_message(peer.state, tx, net.clock)
        peer.apply(state, [Outbound(tx)] + out if tx in state.pool else out)
        return
    gateway = next(nb for nb in net.node(origin).neighbors if nb in deployment.peers)
    net.send(origin, gateway, encode_message(tx))
