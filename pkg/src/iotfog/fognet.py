"""Deterministic discrete-event simulation of a fog/IoT network.

Time is simulated milliseconds. Each node has one radio: frames it sends
leave one after another, ``tx_slot_ms`` apart, and then spend the link's
latency in flight. Power is checked when a frame arrives, so a node that is
Off at delivery time loses the frame.
"""

from __future__ import annotations

import enum
import hashlib
import heapq
import random
import struct
from collections import deque
from collections.abc import Callable, Iterable
from dataclasses import dataclass, field
from pathlib import Path

from iotfog.identity import NodeKeyPair, generate_keypair

DELIVER = 0
TIMER = 1


class NodeKind(enum.Enum):
    FOG = "fog"
    IOT = "iot"


class Power(enum.Enum):
    ON = "on"
    OFF = "off"


class Topology(enum.Enum):
    FULL_MESH = "full_mesh"
    FOG_STAR = "fog_star"


class SimulationError(RuntimeError):
    """Misuse of the simulator, e.g. sending from an Off node."""


class SimTimeout(Exception):
    """A run hit its time bound (or ran out of events) before its condition held."""

    def __init__(self, elapsed_ms: float, metrics: Metrics) -> None:
        super().__init__(f"condition not met after {elapsed_ms:.3f} ms")
        self.elapsed_ms = elapsed_ms
        self.metrics = metrics


@dataclass(frozen=True)
class TopologyConfig:
    n_total: int
    n_fog: int = 1
    base_latency_ms: float = 5.0
    jitter_ms: float = 0.0
    topology: Topology = Topology.FOG_STAR
    seed: int = 0
    tx_slot_ms: float = 0.0

    def validate(self) -> None:
        if self.n_total < 1:
            raise ValueError(f"n_total must be >= 1, got {self.n_total}")
        if not 1 <= self.n_fog <= self.n_total:
            raise ValueError(f"n_fog must be in [1, {self.n_total}], got {self.n_fog}")
        if self.base_latency_ms <= 0:
            raise ValueError("base_latency_ms must be positive")
        if self.jitter_ms < 0 or self.tx_slot_ms < 0:
            raise ValueError("jitter_ms and tx_slot_ms must be non-negative")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must fit in 64 unsigned bits")


@dataclass
class Metrics:
    sent: int = 0
    delivered: int = 0
    dropped: int = 0
    unhandled: int = 0

    def copy(self) -> Metrics:
        return Metrics(self.sent, self.delivered, self.dropped, self.unhandled)


Handler = Callable[["SimNetwork", "SimNode", bytes, bytes], None]


@dataclass(eq=False)
class SimNode:
    id: bytes
    index: int
    kind: NodeKind
    key: NodeKeyPair
    power: Power = Power.ON
    neighbors: list[bytes] = field(default_factory=list)
    handlers: dict[int, Handler] = field(default_factory=dict)
    apps: dict[str, object] = field(default_factory=dict)
    inbox: int = 0
    radio_free_at: float = 0.0

    @property
    def is_on(self) -> bool:
        return self.power is Power.ON

    @property
    def label(self) -> str:
        return f"{self.kind.value}{self.index}"


class SimNetwork:
    def __init__(self, *, seed: int = 0, tx_slot_ms: float = 0.0, base_latency_ms: float = 5.0) -> None:
        self.nodes: dict[bytes, SimNode] = {}
        self.order: list[SimNode] = []
        self.links: dict[tuple[bytes, bytes], float] = {}
        self.clock = 0.0
        self.rng = random.Random(seed)
        self.tx_slot_ms = tx_slot_ms
        self.base_latency_ms = base_latency_ms
        self.metrics = Metrics()
        self.record_trace = True
        self.trace: list[tuple[float, str, bytes, bytes | str, int]] = []
        self._queue: list[tuple] = []
        self._seq = 0
        self._ids = 0
        self._diameter: int | None = None

    # -- construction -----------------------------------------------------

    def add_node(self, key: NodeKeyPair, kind: NodeKind) -> SimNode:
        if key.public in self.nodes:
            raise ValueError("duplicate node id")
        node = SimNode(id=key.public, index=len(self.order), kind=kind, key=key)
        self.nodes[node.id] = node
        self.order.append(node)
        self._diameter = None
        return node

    def link(self, a: bytes, b: bytes, latency_ms: float) -> None:
        if a == b or latency_ms <= 0:
            raise ValueError("links join two distinct nodes with positive latency")
        if (a, b) in self.links:
            raise ValueError("duplicate link")
        self.links[(a, b)] = self.links[(b, a)] = latency_ms
        self.nodes[a].neighbors.append(b)
        self.nodes[b].neighbors.append(a)
        self._diameter = None

    def install(self, node_id: bytes, tags: Iterable[int], handler: Handler) -> None:
        node = self.nodes[node_id]
        for tag in tags:
            node.handlers[tag] = handler

    # -- queries ----------------------------------------------------------

    def node(self, node_id: bytes) -> SimNode:
        return self.nodes[node_id]

    def latency(self, a: bytes, b: bytes) -> float:
        return self.links[(a, b)]

    @property
    def link_count(self) -> int:
        return len(self.links) // 2

    def of_kind(self, kind: NodeKind) -> list[SimNode]:
        return [n for n in self.order if n.kind is kind]

    def mean_latency(self) -> float:
        if not self.links:
            return self.base_latency_ms
        return sum(self.links.values()) / len(self.links)

    def diameter(self) -> int:
        """Longest shortest path in hops over the static topology."""
        if self._diameter is None:
            best = 0
            for src in self.order:
                dist = {src.id: 0}
                todo = deque([src.id])
                while todo:
                    cur = todo.popleft()
                    for nb in self.nodes[cur].neighbors:
                        if nb not in dist:
                            dist[nb] = dist[cur] + 1
                            todo.append(nb)
                if len(dist) != len(self.order):
                    raise SimulationError("topology is disconnected")
                best = max(best, max(dist.values()))
            self._diameter = best
        return self._diameter

    def next_request_id(self) -> int:
        self._ids += 1
        return self._ids

    @property
    def pending(self) -> int:
        return len(self._queue)

    # -- actions ----------------------------------------------------------

    def send(self, src: bytes, dst: bytes, data: bytes) -> float:
        """Queue ``data`` on src's radio; returns the scheduled arrival time.

        The frame leaves at ``arrival - latency(src, dst) - tx_slot_ms``.
        """
        node = self.nodes[src]
        if not node.is_on:
            raise SimulationError(f"{node.label} is Off and cannot send")
        latency = self.links.get((src, dst))
        if latency is None:
            raise SimulationError(f"no link {node.label} -> {self.nodes[dst].label}")
        depart = max(self.clock, node.radio_free_at)
        node.radio_free_at = depart + self.tx_slot_ms
        at = depart + self.tx_slot_ms + latency
        self._push(at, DELIVER, src, dst, data)
        self.nodes[dst].inbox += 1
        self.metrics.sent += 1
        self._record("SEND", src, dst, len(data))
        return at

    def broadcast(self, src: bytes, data: bytes, targets: Iterable[bytes] | None = None) -> list[float]:
        targets = self.nodes[src].neighbors if targets is None else targets
        return [self.send(src, dst, data) for dst in list(targets)]

    def set_power(self, node_id: bytes, power: Power) -> None:
        node = self.nodes[node_id]
        node.power = power
        self._record("POWER", node_id, power.value.upper(), 0)

    def schedule(self, node_id: bytes, at: float, callback: Callable[[SimNetwork], None]) -> None:
        """Run ``callback`` at simulated time ``at`` if the node is On then."""
        self._push(max(at, self.clock), TIMER, node_id, node_id, callback)

    def run_until(
        self,
        condition: Callable[[], bool] | None = None,
        until: float | None = None,
    ) -> float:
        """Process events in (time, insertion) order and return elapsed ms.

        Stops as soon as ``condition`` holds, when the next event lies beyond
        ``until`` (the clock then advances to ``until``), or when no events
        remain. If ``condition`` was given and does not hold at that point,
        raises :class:`SimTimeout` carrying the elapsed time and metrics.
        """
        start = self.clock
        while True:
            if condition is not None and condition():
                return self.clock - start
            if not self._queue or (until is not None and self._queue[0][0] > until):
                if until is not None:
                    self.clock = max(self.clock, until)
                if condition is not None:
                    raise SimTimeout(self.clock - start, self.metrics.copy())
                return self.clock - start
            self._step()

    def drain(self) -> float:
        return self.run_until()

    # -- internals --------------------------------------------------------

    def _push(self, at: float, kind: int, a: bytes, b: bytes, data: object) -> None:
        self._seq += 1
        heapq.heappush(self._queue, (at, self._seq, kind, a, b, data))

    def _step(self) -> None:
        at, _, kind, src, dst, data = heapq.heappop(self._queue)
        if at < self.clock:
            raise SimulationError("event queue went backwards")
        self.clock = at
        node = self.nodes[dst]
        if kind == TIMER:
            if node.is_on:
                data(self)
            return
        node.inbox -= 1
        if not node.is_on:
            self.metrics.dropped += 1
            self._record("DROP", src, dst, len(data))
            return
        self.metrics.delivered += 1
        self._record("DELIVER", src, dst, len(data))
        handler = node.handlers.get(data[0]) if data else None
        if handler is None:
            self.metrics.unhandled += 1
            return
        handler(self, node, src, data)

    def _record(self, kind: str, src: bytes, dst: bytes | str, length: int) -> None:
        if self.record_trace:
            self.trace.append((self.clock, kind, src, dst, length))

    def trace_lines(self) -> list[str]:
        """Event trace, one tab-separated line per event:
        time_ms, kind, from, to, payload length."""
        lines = []
        for at, kind, src, dst, length in self.trace:
            to = dst if isinstance(dst, str) else dst.hex()
            lines.append(f"{at:.6f}\t{kind}\t{src.hex()}\t{to}\t{length}")
        return lines

    def dump_trace(self, path: str | Path) -> None:
        Path(path).write_text("".join(line + "\n" for line in self.trace_lines()))


def node_seed(seed: int, index: int) -> int:
    """Per-node 64-bit key seed derived from the network seed."""
    digest = hashlib.sha256(b"iotfog-node" + struct.pack("<QI", seed, index)).digest()
    return int.from_bytes(digest[:8], "little")


def build_topology(cfg: TopologyConfig) -> SimNetwork:
    """Deterministic network for ``cfg``; every node starts On.

    Nodes ``0 .. n_fog-1`` are fog nodes, the rest IoT devices. In FOG_STAR
    the fog nodes form a full mesh and the devices, laid out in index order
    around the fog ring, each attach to their nearest fog node (contiguous,
    near-equal blocks). Per-link jitter is drawn once here from the seed.
    """
    cfg.validate()
    net = SimNetwork(seed=cfg.seed, tx_slot_ms=cfg.tx_slot_ms, base_latency_ms=cfg.base_latency_ms)
    for i in range(cfg.n_total):
        kind = NodeKind.FOG if i < cfg.n_fog else NodeKind.IOT
        net.add_node(generate_keypair(node_seed(cfg.seed, i)), kind)

    def latency() -> float:
        return cfg.base_latency_ms + net.rng.uniform(0.0, cfg.jitter_ms)

    ids = [n.id for n in net.order]
    if cfg.topology is Topology.FULL_MESH:
        for i in range(cfg.n_total):
            for j in range(i + 1, cfg.n_total):
                net.link(ids[i], ids[j], latency())
    else:
        for i in range(cfg.n_fog):
            for j in range(i + 1, cfg.n_fog):
                net.link(ids[i], ids[j], latency())
        n_iot = cfg.n_total - cfg.n_fog
        for d in range(n_iot):
            fog = d * cfg.n_fog // n_iot
            net.link(ids[fog], ids[cfg.n_fog + d], latency())
    return net
