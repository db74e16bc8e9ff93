"""Searching, Examine and Selecting over the simulated fog network.

* search: expanding-wave flooding. The requester floods LOOKUP(target, ttl);
  every live node forwards a request id once, the target answers FOUND
  back along the recorded path. A wave that gets no answer within
  ``wave_timeout_ms`` is re-issued, up to ``retries`` waves in total.
* examine: signed nonce challenge sent along the found route; the target
  signs (nonce | chain head) and the requester checks both the signature and
  that the head is a block on its own chain.
* select: PING every candidate over its direct link, keep those that answer
  within one wave timeout, choose the smallest (round trip, node id).
"""

from __future__ import annotations

import enum
import struct
from collections.abc import Callable, Iterable
from dataclasses import dataclass

from iotfog._codec import DecodeError, Reader
from iotfog.fognet import SimNetwork, SimNode, SimTimeout, SimulationError
from iotfog.identity import DIGEST_SIZE, KEY_SIZE, SIGNATURE_SIZE, sign, verify
from iotfog.ledger import ChainState

TAG_LOOKUP = 0x20
TAG_FOUND = 0x21
TAG_CHALLENGE = 0x22
TAG_RESPONSE = 0x23
TAG_PING = 0x24
TAG_PONG = 0x25
DISCOVERY_TAGS = frozenset(range(TAG_LOOKUP, TAG_PONG + 1))
NONCE_SIZE = 16
MAX_TTL = 255

ChainLookup = Callable[[bytes], ChainState]
_GENESIS_CHAIN = ChainState()


class NoCandidates(Exception):
    """No candidate answered a PING within the wave timeout."""


@dataclass(frozen=True)
class SearchParams:
    ttl: int
    retries: int = 2
    wave_timeout_ms: float = 60.0

    def __post_init__(self) -> None:
        if not 0 <= self.ttl <= MAX_TTL or self.retries < 1 or self.wave_timeout_ms <= 0:
            raise ValueError(f"invalid search parameters {self}")


def default_params(net: SimNetwork) -> SearchParams:
    """ttl = diameter + 1, two waves, wave timeout = 4 x base latency x diameter."""
    diameter = max(net.diameter(), 1)
    return SearchParams(
        ttl=min(diameter + 1, MAX_TTL),
        retries=2,
        wave_timeout_ms=4.0 * net.base_latency_ms * diameter,
    )


@dataclass(frozen=True)
class SearchResult:
    route: tuple[bytes, ...] | None
    elapsed_ms: float
    waves_used: int

    @property
    def found(self) -> bool:
        return self.route is not None


class ExamineOutcome(enum.Enum):
    VERIFIED = "verified"
    BAD_RESPONSE = "bad_response"
    NODE_OFFLINE = "node_offline"


@dataclass(frozen=True)
class ExamineResult:
    outcome: ExamineOutcome
    elapsed_ms: float
    head_hash: bytes | None = None

    @property
    def verified(self) -> bool:
        return self.outcome is ExamineOutcome.VERIFIED


@dataclass(frozen=True)
class SelectResult:
    chosen: bytes
    candidates_considered: int
    elapsed_ms: float
    round_trips: tuple[tuple[bytes, float], ...] = ()


def _pack_route(route: Iterable[bytes]) -> bytes:
    route = list(route)
    return bytes([len(route)]) + b"".join(route)


def _read_route(reader: Reader) -> tuple[bytes, ...]:
    return tuple(reader.take(KEY_SIZE) for _ in range(reader.u8()))


class DiscoveryAgent:
    """Per-node responder for the discovery protocol, plus the requester-side
    mailboxes that the search/examine/select drivers poll."""

    def __init__(self, net: SimNetwork, node_id: bytes, chain_of: ChainLookup) -> None:
        self.net = net
        self.id = node_id
        self.key = net.node(node_id).key
        self.chain_of = chain_of
        self.seen: set[int] = set()
        self.found: dict[int, tuple[bytes, ...]] = {}
        self.responses: dict[bytes, tuple[bytes, bytes]] = {}
        self.pongs: dict[int, float] = {}
        self.malformed = 0
        net.node(node_id).apps["discovery"] = self
        net.install(node_id, DISCOVERY_TAGS, self.on_message)

    def respond(self, nonce: bytes, head: bytes) -> bytes:
        """Signature returned to a challenge; overridden by fault-injection tests."""
        return sign(self.key, nonce + head)

    def on_message(self, net: SimNetwork, node: SimNode, src: bytes, data: bytes) -> None:
        try:
            self._handle(net, src, data)
        except (DecodeError, ValueError):
            self.malformed += 1

    def _handle(self, net: SimNetwork, src: bytes, data: bytes) -> None:
        tag, reader = data[0], Reader(data, 1)
        if tag == TAG_LOOKUP:
            req, target, ttl = reader.u64(), reader.take(KEY_SIZE), reader.u8()
            path = _read_route(reader)
            reader.finish()
            if req in self.seen:
                return
            self.seen.add(req)
            path = path + (self.id,)
            if self.id == target:
                reply = bytes([TAG_FOUND]) + struct.pack("<Q", req) + _pack_route(path)
                net.send(self.id, src, reply)
            elif ttl > 0 and len(path) < MAX_TTL:
                fwd = bytes([TAG_LOOKUP]) + struct.pack("<Q", req) + target + bytes([ttl - 1]) + _pack_route(path)
                for nb in net.node(self.id).neighbors:
                    if nb != src:
                        net.send(self.id, nb, fwd)
        elif tag == TAG_FOUND:
            req = reader.u64()
            route = _read_route(reader)
            reader.finish()
            pos = route.index(self.id)
            if pos == 0:
                self.found.setdefault(req, route)
            else:
                net.send(self.id, route[pos - 1], data)
        elif tag == TAG_CHALLENGE:
            nonce = reader.take(NONCE_SIZE)
            route = _read_route(reader)
            reader.finish()
            pos = route.index(self.id)
            if pos < len(route) - 1:
                net.send(self.id, route[pos + 1], data)
                return
            head = self.chain_of(self.id).head_hash
            reply = bytes([TAG_RESPONSE]) + nonce + head + self.respond(nonce, head) + _pack_route(route)
            net.send(self.id, route[pos - 1], reply)
        elif tag == TAG_RESPONSE:
            nonce, head, sig = reader.take(NONCE_SIZE), reader.take(DIGEST_SIZE), reader.take(SIGNATURE_SIZE)
            route = _read_route(reader)
            reader.finish()
            pos = route.index(self.id)
            if pos == 0:
                self.responses.setdefault(nonce, (head, sig))
            else:
                net.send(self.id, route[pos - 1], data)
        elif tag == TAG_PING:
            net.send(self.id, src, bytes([TAG_PONG]) + reader.take(8))
        elif tag == TAG_PONG:
            (token,) = struct.unpack("<Q", reader.take(8))
            self.pongs.setdefault(token, net.clock)


def install_discovery(net: SimNetwork, chain_of: ChainLookup | None = None) -> dict[bytes, DiscoveryAgent]:
    """Attach a discovery agent to every node. ``chain_of(node_id)`` supplies
    each node's chain; without it every node reports the genesis chain."""
    lookup = chain_of or (lambda _id: _GENESIS_CHAIN)
    return {n.id: DiscoveryAgent(net, n.id, lookup) for n in net.order}


def _agent(net: SimNetwork, node_id: bytes) -> DiscoveryAgent:
    agent = net.node(node_id).apps.get("discovery")
    if agent is None:
        raise SimulationError("discovery is not installed on this node")
    return agent


def _require_on(net: SimNetwork, node_id: bytes) -> None:
    if not net.node(node_id).is_on:
        raise SimulationError("requester is Off")


def search(net: SimNetwork, requester: bytes, target: bytes, params: SearchParams | None = None) -> SearchResult:
    """Locate ``target``. Elapsed is the time of the first FOUND, or the whole
    retries x wave_timeout budget when the target never answers."""
    _require_on(net, requester)
    params = params or default_params(net)
    if target == requester:
        return SearchResult((requester,), 0.0, 0)
    agent = _agent(net, requester)
    start = net.clock
    issued: list[int] = []

    def answered() -> bool:
        return any(req in agent.found for req in issued)

    for wave in range(params.retries):
        req = net.next_request_id()
        issued.append(req)
        agent.seen.add(req)
        msg = bytes([TAG_LOOKUP]) + struct.pack("<Q", req) + target + bytes([params.ttl]) + _pack_route([requester])
        net.broadcast(requester, msg)
        try:
            net.run_until(answered, until=start + (wave + 1) * params.wave_timeout_ms)
        except SimTimeout:
            continue
        route = next(agent.found[r] for r in issued if r in agent.found)
        return SearchResult(route, net.clock - start, wave + 1)
    return SearchResult(None, net.clock - start, params.retries)


def examine(
    net: SimNetwork,
    requester: bytes,
    target: bytes,
    found: SearchResult,
    timeout_ms: float | None = None,
) -> ExamineResult:
    """Challenge a located node. Without a successful search nothing is sent
    and the target is reported offline."""
    if not found.found or found.route[-1] != target:
        return ExamineResult(ExamineOutcome.NODE_OFFLINE, 0.0)
    _require_on(net, requester)
    agent = _agent(net, requester)
    own_chain = agent.chain_of(requester)
    if target == requester:
        return ExamineResult(ExamineOutcome.VERIFIED, 0.0, own_chain.head_hash)
    timeout = timeout_ms if timeout_ms is not None else default_params(net).wave_timeout_ms
    nonce = net.rng.randbytes(NONCE_SIZE)
    start = net.clock
    net.send(requester, found.route[1], bytes([TAG_CHALLENGE]) + nonce + _pack_route(found.route))
    try:
        net.run_until(lambda: nonce in agent.responses, until=start + timeout)
    except SimTimeout:
        return ExamineResult(ExamineOutcome.NODE_OFFLINE, net.clock - start)
    head, sig = agent.responses[nonce]
    elapsed = net.clock - start
    if verify(target, nonce + head, sig) and own_chain.contains(head):
        return ExamineResult(ExamineOutcome.VERIFIED, elapsed, head)
    return ExamineResult(ExamineOutcome.BAD_RESPONSE, elapsed, head)


def select(
    net: SimNetwork,
    requester: bytes,
    candidates: Iterable[bytes],
    timeout_ms: float | None = None,
) -> SelectResult:
    """Pick the responsive candidate with the smallest (round trip, id).

    Round trips are measured from each PING's departure, so the order in
    which candidates are probed does not bias the choice.
    """
    _require_on(net, requester)
    agent = _agent(net, requester)
    timeout = timeout_ms if timeout_ms is not None else default_params(net).wave_timeout_ms
    pool = sorted(set(candidates))
    if not pool:
        raise NoCandidates("empty candidate set")
    start = net.clock
    neighbors = set(net.node(requester).neighbors)
    departures: dict[int, tuple[bytes, float]] = {}
    rtts: dict[bytes, float] = {}
    for cand in pool:
        if cand == requester:
            rtts[cand] = 0.0
        elif cand in neighbors:
            token = net.next_request_id()
            at = net.send(requester, cand, bytes([TAG_PING]) + struct.pack("<Q", token))
            departures[token] = (cand, at - net.latency(requester, cand) - net.tx_slot_ms)
    try:
        net.run_until(lambda: all(t in agent.pongs for t in departures), until=start + timeout)
    except SimTimeout:
        pass
    for token, (cand, left) in departures.items():
        if token in agent.pongs and agent.pongs[token] - start <= timeout:
            rtts[cand] = agent.pongs[token] - left
    if not rtts:
        raise NoCandidates(f"none of {len(pool)} candidates answered within {timeout} ms")
    chosen = min(rtts, key=lambda c: (rtts[c], c))
    return SelectResult(chosen, len(pool), net.clock - start, tuple(sorted(rtts.items())))
