"""Fault injection for consensus tests: equivocating leaders, crashes, and an
exhaustive schedule explorer for one equivocating round at n=4."""

from __future__ import annotations

import itertools
import random
from collections import deque
from collections.abc import Iterable, Iterator, Mapping
from dataclasses import dataclass

from iotfog.consensus import (
    CommitCertificate,
    Outbound,
    Proposal,
    Vote,
    handle_message,
    new_peer,
    order_pool,
    tick,
)
from iotfog.fognet import NodeKind, Power, SimNetwork
from iotfog.identity import NodeKeyPair
from iotfog.ledger import Block, ChainState, Transaction, build_block
from iotfog.nodes import Deployment, FogPeer, deploy_consensus


def conflicting_block(chain: ChainState, block: Block, key: NodeKeyPair) -> Block:
    """A second valid block at the same height: same transactions, later timestamp."""
    txs = list(block.transactions)
    return build_block(chain, txs, key, block.header.timestamp + 1)


class EquivocatingPeer(FogPeer):
    """When leading, sends block A to a random subset of peers and a
    conflicting block B to the rest, then votes for both."""

    def __init__(self, *args, rng: random.Random, **kwargs) -> None:
        super().__init__(*args, **kwargs)
        self.rng = rng
        self.equivocations = 0

    def emit(self, item: Outbound) -> None:
        msg = item.message
        if not isinstance(msg, Proposal) or msg.block.header.proposer != self.id:
            super().emit(item)
            return
        key = self.net.node(self.id).key
        other = conflicting_block(self.chain, msg.block, key)
        second = Proposal.create(other, msg.view, key)
        self.equivocations += 1
        for peer in self.state.peers:
            if peer != self.id:
                super().emit(Outbound(msg if self.rng.random() < 0.5 else second, to=peer))
        for block in (msg.block, other):
            super().emit(Outbound(Vote.create(key, block.hash, msg.height, msg.view)))


def deploy_with_equivocator(
    net: SimNetwork, byzantine: bytes, seed: int, view_timeout_ms: float | None = None
) -> Deployment:
    """Honest deployment with the peer ``byzantine`` replaced by an equivocator."""
    deployment = deploy_consensus(net, view_timeout_ms)
    honest = deployment.peers[byzantine]
    bad = EquivocatingPeer(
        net, byzantine, list(honest.state.peers), honest.state.view_timeout_ms, rng=random.Random(seed)
    )
    deployment.peers[byzantine] = bad
    return deployment


def crash_at(net: SimNetwork, node_id: bytes, at_ms: float) -> None:
    """Power ``node_id`` off at simulated time ``at_ms``; it never returns."""
    net.schedule(node_id, at_ms, lambda n: n.set_power(node_id, Power.OFF))


def honest_conflicts(chains: Mapping[bytes, ChainState]) -> list[tuple[int, set[bytes]]]:
    """Heights at which the given chains hold different block hashes."""
    conflicts = []
    top = max((c.height for c in chains.values()), default=0)
    for h in range(1, top + 1):
        hashes = {c.blocks[h].hash for c in chains.values() if c.height >= h}
        if len(hashes) > 1:
            conflicts.append((h, hashes))
    return conflicts


def honest_fog_chains(net: SimNetwork, deployment: Deployment, exclude: Iterable[bytes] = ()) -> dict[bytes, ChainState]:
    skip = set(exclude)
    return {
        n.id: deployment.peers[n.id].chain
        for n in net.of_kind(NodeKind.FOG)
        if n.id not in skip
    }


# -- exhaustive exploration -------------------------------------------------

DELIVERIES = ("", "A", "B", "AB", "BA")
LEADER_VOTES = ("", "A", "B", "AB")


@dataclass(frozen=True)
class Schedule:
    """Which proposals each honest peer receives (and in what order), and
    which blocks the equivocating leader votes for."""

    deliveries: tuple[str, ...]
    leader_votes: str


@dataclass(frozen=True)
class ScheduleOutcome:
    schedule: Schedule
    commits: Mapping[bytes, tuple[bytes, ...]]

    @property
    def safe(self) -> bool:
        depth = max((len(c) for c in self.commits.values()), default=0)
        for h in range(depth):
            if len({c[h] for c in self.commits.values() if len(c) > h}) > 1:
                return False
        return True


def all_schedules(n_honest: int = 3) -> Iterator[Schedule]:
    for deliveries in itertools.product(DELIVERIES, repeat=n_honest):
        for votes in LEADER_VOTES:
            yield Schedule(deliveries, votes)


def run_schedule(
    keys: list[NodeKeyPair], txs: list[Transaction], schedule: Schedule, timeout_rounds: int = 4
) -> ScheduleOutcome:
    """Play one equivocating round at height 1, view 0, then let the honest
    peers time out ``timeout_rounds`` times with FIFO delivery in between.

    The byzantine peer is the view-0 leader and stays silent after its round.
    """
    peers = sorted(k.public for k in keys)
    by_id = {k.public: k for k in keys}
    states = {pid: new_peer(by_id[pid], peers, view_timeout_ms=10.0) for pid in peers}
    leader = states[peers[0]].leader()
    honest = [p for p in peers if p != leader]
    lkey = by_id[leader]

    chain = ChainState()
    block_a = build_block(chain, order_pool(txs, chain), lkey, 1)
    block_b = conflicting_block(chain, block_a, lkey)
    props = {"A": Proposal.create(block_a, 0, lkey), "B": Proposal.create(block_b, 0, lkey)}

    now = 0.0
    queue: deque[tuple[bytes, object]] = deque()
    for pid, pattern in zip(honest, schedule.deliveries):
        for tx in txs:
            states[pid], _ = handle_message(states[pid], tx, now)
        queue.extend((pid, props[c]) for c in pattern)
    for c in schedule.leader_votes:
        vote = Vote.create(lkey, props[c].block.hash, 1, 0)
        queue.extend((pid, vote) for pid in honest)

    def deliver(pid: bytes, out: list[Outbound]) -> None:
        for item in out:
            targets = honest if item.to is None else [item.to]
            queue.extend((t, item.message) for t in targets if t not in (pid, leader))

    def pump() -> None:
        while queue:
            pid, msg = queue.popleft()
            states[pid], out = handle_message(states[pid], msg, now)
            deliver(pid, out)

    pump()
    for _ in range(timeout_rounds):
        now += 10.0
        for pid in honest:
            states[pid], out = tick(states[pid], now)
            deliver(pid, out)
        pump()
    commits = {pid: tuple(b.hash for b in states[pid].chain.blocks[1:]) for pid in honest}
    return ScheduleOutcome(schedule, commits)


def explore(keys: list[NodeKeyPair], txs: list[Transaction]) -> list[ScheduleOutcome]:
    """Every schedule in :func:`all_schedules` for four peers."""
    return [run_schedule(keys, txs, s) for s in all_schedules(len(keys) - 1)]


def certificate_conflicts(certs: Iterable[CommitCertificate]) -> dict[int, set[bytes]]:
    """Heights at which the given certificates name different blocks."""
    seen: dict[int, set[bytes]] = {}
    for cert in certs:
        seen.setdefault(cert.height, set()).add(cert.block_hash)
    return {h: s for h, s in seen.items() if len(s) > 1}


__all__ = [
    "EquivocatingPeer",
    "Schedule",
    "ScheduleOutcome",
    "all_schedules",
    "certificate_conflicts",
    "conflicting_block",
    "crash_at",
    "deploy_with_equivocator",
    "explore",
    "honest_conflicts",
    "honest_fog_chains",
    "run_schedule",
]
