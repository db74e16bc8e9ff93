"""End-to-end scenario: transactions, consensus, then ON/OFF discovery measurements."""

from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

from iotfog.discovery import (
    SearchParams,
    default_params,
    examine,
    install_discovery,
    search,
    select,
)
from iotfog.fognet import (
    NodeKind,
    Power,
    SimNetwork,
    SimTimeout,
    TopologyConfig,
    build_topology,
)
from iotfog.harness.config import ScenarioConfig
from iotfog.ledger import dump_chain, new_transaction
from iotfog.nodes import Deployment, deploy_consensus, submit_transaction

log = logging.getLogger(__name__)


class ScenarioError(RuntimeError):
    """The simulated system failed to reach the state a measurement needs."""


@dataclass(frozen=True)
class Cell:
    """One (target, power) measurement; times in simulated seconds."""

    target: int
    node: str
    power: str
    searching_s: float
    examine_s: float | None
    selecting_s: float


@dataclass(frozen=True)
class SizeReport:
    size: int
    n_fog: int
    cells: tuple[Cell, ...]
    blocks_committed: int
    transactions_committed: int
    commit_latency_s: float
    view_changes: int
    sent: int
    delivered: int
    dropped: int
    chains_consistent: bool
    head_hash: str

    def cell(self, target: int, power: str) -> Cell:
        return next(c for c in self.cells if c.target == target and c.power == power)

    @property
    def targets(self) -> list[int]:
        return list(dict.fromkeys(c.target for c in self.cells))

    def mean_searching(self) -> float:
        return sum(c.searching_s for c in self.cells) / len(self.cells)


@dataclass(frozen=True)
class ScenarioReport:
    seed: int
    sizes: tuple[SizeReport, ...]
    traces: dict[int, tuple[str, ...]] = field(default_factory=dict, compare=False, repr=False)

    def size(self, n: int) -> SizeReport:
        return next(s for s in self.sizes if s.size == n)


def _search_params(cfg: ScenarioConfig, net: SimNetwork) -> SearchParams:
    auto = default_params(net)
    return SearchParams(
        ttl=auto.ttl if cfg.ttl is None else cfg.ttl,
        retries=cfg.retries,
        wave_timeout_ms=auto.wave_timeout_ms if cfg.wave_timeout_ms is None else cfg.wave_timeout_ms,
    )


def _submit_load(net: SimNetwork, deployment: Deployment, tx_load: int) -> None:
    devices = net.of_kind(NodeKind.IOT)
    for i in range(tx_load):
        device = devices[i % len(devices)]
        payload = f"reading {i} from {device.label}".encode()
        tx = new_transaction(device.key, i // len(devices), int(net.clock), payload)
        submit_transaction(net, deployment, device.id, tx)


def _run_consensus(cfg: ScenarioConfig, net: SimNetwork, deployment: Deployment) -> float:
    start = net.clock
    _submit_load(net, deployment, cfg.tx_load)
    peers = list(deployment.peers.values())

    def committed() -> bool:
        return all(p.chain.tx_count == cfg.tx_load for p in peers)

    try:
        net.run_until(committed, until=start + cfg.commit_bound_ms)
    except SimTimeout as exc:
        counts = sorted(p.chain.tx_count for p in peers)
        raise ScenarioError(
            f"consensus committed {counts} of {cfg.tx_load} transactions "
            f"within {exc.elapsed_ms:.0f} ms (sent={exc.metrics.sent}, dropped={exc.metrics.dropped})"
        ) from exc
    last_commit = max(t for p in peers for t in p.commit_times.values())
    net.drain()
    lagging = [o for o in deployment.observers.values() if o.chain.height != peers[0].chain.height]
    if lagging:
        raise ScenarioError(f"{len(lagging)} observers did not receive every block")
    return last_commit - start


def target_position(k: int, span: int, n_devices: int) -> int:
    """Device index for target ``k`` of ``1..span``."""
    return (k - 1) * n_devices // span


def measure_size(cfg: ScenarioConfig, size: int, keep_trace: bool = False) -> tuple[SizeReport, tuple[str, ...]]:
    """Build one network of ``size`` nodes and run every ON/OFF measurement on it.

    The requester is the first fog node (the middleware host); Selecting
    probes the other fog peers. Target index k out of ``max(target_indices)``
    names the device at the same relative position in the device list, so
    targets are spread across fog subtrees at every size.
    """
    topo = TopologyConfig(
        n_total=size,
        n_fog=cfg.fog_count(size),
        base_latency_ms=cfg.base_latency_ms,
        jitter_ms=cfg.jitter_ms,
        topology=cfg.topology,
        seed=cfg.seed,
        tx_slot_ms=cfg.tx_slot_ms,
    )
    net = build_topology(topo)
    net.record_trace = keep_trace
    deployment = deploy_consensus(net, cfg.view_timeout_ms)
    install_discovery(net, deployment.chain_of)
    commit_latency = _run_consensus(cfg, net, deployment)

    params = _search_params(cfg, net)
    fogs = net.of_kind(NodeKind.FOG)
    devices = net.of_kind(NodeKind.IOT)
    requester = fogs[0].id
    candidates = [f.id for f in fogs[1:]]

    span = max(cfg.target_indices)
    cells = []
    for k in cfg.target_indices:
        target = devices[target_position(k, span, len(devices))]
        for power in (Power.ON, Power.OFF):
            net.set_power(target.id, power)
            found = search(net, requester, target.id, params)
            net.drain()
            checked = examine(net, requester, target.id, found, params.wave_timeout_ms)
            net.drain()
            chosen = select(net, requester, candidates, params.wave_timeout_ms)
            net.drain()
            cells.append(
                Cell(
                    target=k,
                    node=target.label,
                    power=power.value,
                    searching_s=found.elapsed_ms / 1000.0,
                    examine_s=checked.elapsed_ms / 1000.0 if checked.verified else None,
                    selecting_s=chosen.elapsed_ms / 1000.0,
                )
            )
        net.set_power(target.id, Power.ON)

    peer_chains = {dump_chain(p.chain) for p in deployment.peers.values() if net.node(p.id).is_on}
    first = next(iter(deployment.peers.values())).chain
    report = SizeReport(
        size=size,
        n_fog=topo.n_fog,
        cells=tuple(cells),
        blocks_committed=first.height,
        transactions_committed=first.tx_count,
        commit_latency_s=commit_latency / 1000.0,
        view_changes=sum(p.view_changes_sent for p in deployment.peers.values()),
        sent=net.metrics.sent,
        delivered=net.metrics.delivered,
        dropped=net.metrics.dropped,
        chains_consistent=len(peer_chains) == 1,
        head_hash=first.head_hash.hex(),
    )
    log.info("size %d: %d blocks, %d messages", size, report.blocks_committed, report.sent)
    return report, tuple(net.trace_lines()) if keep_trace else ()


def run_scenario(cfg: ScenarioConfig, parallel: bool = False, keep_traces: bool = False) -> ScenarioReport:
    """Run every configured size; sizes run in worker processes when ``parallel``."""
    cfg.validate()
    sizes = sorted(cfg.sizes)
    if parallel and len(sizes) > 1:
        with ProcessPoolExecutor(max_workers=len(sizes)) as pool:
            results = list(pool.map(measure_size, [cfg] * len(sizes), sizes, [keep_traces] * len(sizes)))
    else:
        results = [measure_size(cfg, size, keep_traces) for size in sizes]
    return ScenarioReport(
        seed=cfg.seed,
        sizes=tuple(r for r, _ in results),
        traces={s: t for s, (_, t) in zip(sizes, results)} if keep_traces else {},
    )
