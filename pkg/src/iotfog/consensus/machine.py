"""Three-step leader/validator consensus as a pure state machine.

Step 1: the leader for (height, view) orders its pool, seals a block and
broadcasts a signed proposal. Step 2: validators check the leader signature
and the block against their own chain, then sign and broadcast a vote.
Step 3: a block commits once 2f+1 distinct peers voted for it in one view.

Safety rests on a per-height vote lock: once a peer has voted for a block at
some height it never votes for a different block at that height, in any
view. Two quorums of 2f+1 out of 3f+1 overlap in at least one honest peer,
so no two different blocks can both gather a quorum at the same height.
"""

from __future__ import annotations

import enum
from collections.abc import Iterable, Mapping
from dataclasses import dataclass, field, replace

from iotfog.consensus.messages import (
    CommitCertificate,
    Message,
    Proposal,
    ViewChange,
    Vote,
    max_faulty,
    quorum,
    rotate_leader,
)
from iotfog.identity import NodeKeyPair, verify
from iotfog.ledger import (
    Block,
    BlockVerdict,
    ChainState,
    Transaction,
    TxVerdict,
    append_block,
    build_block,
    validate_block,
    validate_transaction,
)

MAX_BUFFERED = 512


class Rejection(enum.Enum):
    WRONG_LEADER = "wrong_leader"
    BAD_BLOCK = "bad_block"
    ALREADY_VOTED = "already_voted"
    STALE_HEIGHT = "stale_height"


class PeerRole(enum.Enum):
    LEADER = "leader"
    VALIDATOR = "validator"
    OBSERVER = "observer"


class NotLeader(Exception):
    """Raised when a peer that does not lead the current round tries to propose."""


@dataclass(frozen=True)
class Outbound:
    """A message the state machine wants sent. ``to=None`` means every other
    consensus peer."""

    message: Message
    to: bytes | None = None


@dataclass(frozen=True)
class ConsensusState:
    key: NodeKeyPair
    peers: tuple[bytes, ...]
    view_timeout_ms: float = 50.0
    chain: ChainState = field(default_factory=ChainState)
    pool: tuple[Transaction, ...] = ()
    view: int = 0
    # Everything below is scoped to the working height (chain height + 1).
    votes: Mapping[tuple[bytes, int], Mapping[bytes, Vote]] = field(default_factory=dict)
    blocks: Mapping[bytes, Block] = field(default_factory=dict)
    my_votes: Mapping[int, bytes] = field(default_factory=dict)
    lock: bytes | None = None
    proposed: frozenset[int] = frozenset()
    view_changes: Mapping[int, frozenset[bytes]] = field(default_factory=dict)
    vc_sent: int = 0
    deadline: float | None = None
    buffered: tuple[Message, ...] = ()
    certificates: tuple[CommitCertificate, ...] = ()
    dropped: int = 0

    def __post_init__(self) -> None:
        if list(self.peers) != sorted(self.peers) or len(set(self.peers)) != len(self.peers):
            raise ValueError("peers must be sorted and distinct")
        if self.key.public not in self.peers:
            raise ValueError("own key is not in the peer list")

    @property
    def height(self) -> int:
        return self.chain.height

    @property
    def working(self) -> int:
        return self.chain.height + 1

    @property
    def quorum(self) -> int:
        return quorum(len(self.peers))

    @property
    def me(self) -> bytes:
        return self.key.public

    def leader(self, view: int | None = None) -> bytes:
        return rotate_leader(self.peers, self.working, self.view if view is None else view)

    def role(self) -> PeerRole:
        return PeerRole.LEADER if self.leader() == self.me else PeerRole.VALIDATOR


def new_peer(key: NodeKeyPair, peers: Iterable[bytes], view_timeout_ms: float = 50.0) -> ConsensusState:
    return ConsensusState(key=key, peers=tuple(sorted(peers)), view_timeout_ms=view_timeout_ms)


def peer_role(peers: tuple[bytes, ...], me: bytes, height: int, view: int) -> PeerRole:
    if me not in peers:
        return PeerRole.OBSERVER
    return PeerRole.LEADER if rotate_leader(peers, height, view) == me else PeerRole.VALIDATOR


def order_pool(pool: Iterable[Transaction], chain: ChainState | None = None) -> list[Transaction]:
    """Valid pooled transactions sorted by (timestamp, hash).

    A transaction whose (author, nonce) already appeared earlier in the
    order is dropped so the result can always be sealed into one block.
    """
    chain = chain if chain is not None else ChainState()
    ordered = sorted(
        (tx for tx in pool if validate_transaction(tx, chain) is TxVerdict.VALID),
        key=lambda tx: (tx.timestamp, tx.hash),
    )
    seen: set[tuple[bytes, int]] = set()
    result = []
    for tx in ordered:
        if (tx.author, tx.nonce) not in seen:
            seen.add((tx.author, tx.nonce))
            result.append(tx)
    return result


def propose(state: ConsensusState, now: float, key: NodeKeyPair | None = None) -> Proposal | None:
    """Build the leader's proposal for the working height, or None with nothing to propose.

    A leader that is already locked on a block at this height re-proposes it;
    otherwise it re-proposes the best-supported block it has seen, and only
    then seals a fresh block from its ordered pool.
    """
    key = key or state.key
    if key.public != state.leader():
        raise NotLeader(f"{key.public.hex()[:12]} does not lead height {state.working} view {state.view}")
    block = None
    if state.lock is not None:
        block = state.blocks.get(state.lock)
    if block is None and state.blocks:
        support = {h: 0 for h in state.blocks}
        for (h, _), voters in state.votes.items():
            if h in support:
                support[h] += len(voters)
        best = max(support.items(), key=lambda kv: (kv[1], kv[0]))
        block = state.blocks[best[0]]
    if block is None:
        ordered = order_pool(state.pool, state.chain)
        if not ordered:
            return None
        block = build_block(state.chain, ordered, key, int(now))
    return Proposal.create(block, state.view, key)


def validate_and_sign(
    state: ConsensusState, p: Proposal, key: NodeKeyPair | None = None
) -> Vote | Rejection:
    key = key or state.key
    if p.height != state.working:
        return Rejection.STALE_HEIGHT
    leader = rotate_leader(state.peers, p.height, p.view)
    if not verify(leader, p.signing_bytes(), p.leader_signature):
        return Rejection.WRONG_LEADER
    if p.block.header.proposer not in state.peers:
        return Rejection.BAD_BLOCK
    if validate_block(p.block, state.chain) is not BlockVerdict.VALID:
        return Rejection.BAD_BLOCK
    block_hash = p.block.hash
    if state.my_votes.get(p.view, block_hash) != block_hash:
        return Rejection.ALREADY_VOTED
    if state.lock is not None and state.lock != block_hash:
        return Rejection.ALREADY_VOTED
    return Vote.create(key, block_hash, p.height, p.view)


def try_commit(
    state: ConsensusState, vote: Vote
) -> tuple[ConsensusState, CommitCertificate | None]:
    """Record ``vote``; commit if it completes a quorum for a known block.

    Duplicate votes from one voter count once; votes for other heights are
    ignored.
    """
    if vote.height != state.working or vote.voter not in state.peers:
        return state, None
    key = (vote.block_hash, vote.view)
    voters = state.votes.get(key, {})
    if vote.voter in voters:
        return state, None
    state = replace(state, votes={**state.votes, key: {**voters, vote.voter: vote}})
    return _commit_ready(state, key)


def _commit_ready(
    state: ConsensusState, key: tuple[bytes, int]
) -> tuple[ConsensusState, CommitCertificate | None]:
    voters = state.votes.get(key, {})
    block = state.blocks.get(key[0])
    if len(voters) < state.quorum or block is None:
        return state, None
    if validate_block(block, state.chain) is not BlockVerdict.VALID:
        return state, None
    votes = tuple(voters[v] for v in sorted(voters))
    cert = CommitCertificate(key[0], state.working, key[1], votes, block)
    return _commit(state, block, cert), cert


def _commit(state: ConsensusState, block: Block, cert: CommitCertificate) -> ConsensusState:
    chain = append_block(state.chain, block)
    pool = tuple(tx for tx in state.pool if not chain.has_nonce(tx.author, tx.nonce))
    return replace(
        state,
        chain=chain,
        pool=pool,
        view=0,
        votes={},
        blocks={},
        my_votes={},
        lock=None,
        proposed=frozenset(),
        view_changes={},
        vc_sent=0,
        deadline=None,
        certificates=state.certificates + (cert,),
    )


def _height_of(msg: Message) -> int | None:
    if isinstance(msg, Transaction):
        return None
    return msg.height


def _buffer(state: ConsensusState, msg: Message) -> ConsensusState:
    if len(state.buffered) >= MAX_BUFFERED:
        return replace(state, dropped=state.dropped + 1)
    return replace(state, buffered=state.buffered + (msg,))


def _drop(state: ConsensusState) -> ConsensusState:
    return replace(state, dropped=state.dropped + 1)


def handle_message(
    state: ConsensusState, msg: Message, now: float
) -> tuple[ConsensusState, list[Outbound]]:
    """Apply one inbound message. Pure: same (state, msg, now) gives the same result.

    Malformed or wrongly signed messages only bump ``state.dropped``.
    """
    out: list[Outbound] = []
    state = _dispatch(state, msg, now, out)
    return state, out


def tick(state: ConsensusState, now: float) -> tuple[ConsensusState, list[Outbound]]:
    """Timer input: on an expired deadline, vote to move to the next view."""
    out: list[Outbound] = []
    if state.deadline is None or now < state.deadline:
        return state, out
    target = max(state.view, state.vc_sent) + 1
    vc = ViewChange.create(state.key, state.working, target)
    changes = {**state.view_changes, target: state.view_changes.get(target, frozenset()) | {state.me}}
    state = replace(state, view_changes=changes, vc_sent=target, deadline=now + state.view_timeout_ms)
    out.append(Outbound(vc))
    state = _maybe_change_view(state, now, out)
    return _progress(state, now, out), out


def _dispatch(state: ConsensusState, msg: Message, now: float, out: list[Outbound]) -> ConsensusState:
    start_height = state.height
    height = _height_of(msg)
    if height is not None and height < state.working:
        return state
    if height is not None and height > state.working:
        return _buffer(state, msg)
    if isinstance(msg, Transaction):
        state = _on_transaction(state, msg)
    elif isinstance(msg, Proposal):
        state = _accept_proposal(state, msg, out)
    elif isinstance(msg, Vote):
        if msg.voter not in state.peers or not msg.is_valid():
            return _drop(state)
        state, cert = try_commit(state, msg)
        if cert is not None:
            out.append(Outbound(cert))
    elif isinstance(msg, CommitCertificate):
        state = _on_certificate(state, msg)
    elif isinstance(msg, ViewChange):
        state = _on_view_change(state, msg, now, out)
    else:
        return _drop(state)
    if state.height > start_height:
        state = _replay(state, now, out)
    return _progress(state, now, out)


def _replay(state: ConsensusState, now: float, out: list[Outbound]) -> ConsensusState:
    ready = [m for m in state.buffered if m.height <= state.working]
    if not ready:
        return state
    state = replace(state, buffered=tuple(m for m in state.buffered if m.height > state.working))
    for msg in ready:
        state = _dispatch(state, msg, now, out)
    return state


def _on_transaction(state: ConsensusState, tx: Transaction) -> ConsensusState:
    if any(p.hash == tx.hash for p in state.pool):
        return state
    verdict = validate_transaction(tx, state.chain)
    if verdict is TxVerdict.BAD_SIGNATURE:
        return _drop(state)
    if verdict is TxVerdict.DUPLICATE_NONCE:
        return state
    return replace(state, pool=state.pool + (tx,))


def _accept_proposal(state: ConsensusState, p: Proposal, out: list[Outbound]) -> ConsensusState:
    result = validate_and_sign(state, p)
    if result is Rejection.STALE_HEIGHT:
        return state
    if result in (Rejection.WRONG_LEADER, Rejection.BAD_BLOCK):
        return _drop(state)
    block_hash = p.block.hash
    if block_hash not in state.blocks:
        state = replace(state, blocks={**state.blocks, block_hash: p.block})
    if isinstance(result, Vote) and state.my_votes.get(p.view) != block_hash:
        state = replace(
            state,
            my_votes={**state.my_votes, p.view: block_hash},
            lock=block_hash,
            view=max(state.view, p.view),
        )
        out.append(Outbound(result))
        state, cert = try_commit(state, result)
        if cert is not None:
            out.append(Outbound(cert))
            return state
    # Votes may have reached quorum before the block itself arrived.
    for key in [k for k in state.votes if k[0] == block_hash]:
        state, cert = _commit_ready(state, key)
        if cert is not None:
            out.append(Outbound(cert))
            break
    return state


def _on_certificate(state: ConsensusState, cert: CommitCertificate) -> ConsensusState:
    if cert.problem(state.peers) is not None:
        return _drop(state)
    if validate_block(cert.block, state.chain) is not BlockVerdict.VALID:
        return _drop(state)
    return _commit(state, cert.block, cert)


def _on_view_change(
    state: ConsensusState, vc: ViewChange, now: float, out: list[Outbound]
) -> ConsensusState:
    if vc.voter not in state.peers or not vc.is_valid():
        return _drop(state)
    if vc.view <= state.view:
        return state
    changes = {**state.view_changes, vc.view: state.view_changes.get(vc.view, frozenset()) | {vc.voter}}
    return _maybe_change_view(replace(state, view_changes=changes), now, out)


def _maybe_change_view(state: ConsensusState, now: float, out: list[Outbound]) -> ConsensusState:
    # f+1 view changes for a higher view prove at least one honest peer timed
    # out, so join it rather than wait for our own timer.
    join = max_faulty(len(state.peers)) + 1
    for v in sorted(state.view_changes):
        if v > max(state.view, state.vc_sent) and len(state.view_changes[v]) >= join:
            vc = ViewChange.create(state.key, state.working, v)
            changes = {**state.view_changes, v: state.view_changes[v] | {state.me}}
            state = replace(state, view_changes=changes, vc_sent=v)
            out.append(Outbound(vc))
    ready = [v for v, s in state.view_changes.items() if v > state.view and len(s) >= state.quorum]
    if ready:
        target = max(ready)
        state = replace(
            state,
            view=target,
            deadline=now + state.view_timeout_ms,
            view_changes={v: s for v, s in state.view_changes.items() if v > target},
        )
    return state


def _has_work(state: ConsensusState) -> bool:
    return bool(state.pool) or bool(state.blocks)


def _progress(state: ConsensusState, now: float, out: list[Outbound]) -> ConsensusState:
    if not _has_work(state):
        return state
    if state.deadline is None:
        state = replace(state, deadline=now + state.view_timeout_ms)
    if state.leader() != state.me or state.view in state.proposed:
        return state
    proposal = propose(state, now)
    if proposal is None:
        return state
    state = replace(state, proposed=state.proposed | {state.view})
    out.append(Outbound(proposal))
    return _accept_proposal(state, proposal, out)


@dataclass(frozen=True)
class ObserverState:
    """Non-voting node: appends blocks carried by valid commit certificates."""

    peers: tuple[bytes, ...]
    chain: ChainState = field(default_factory=ChainState)
    buffered: Mapping[int, CommitCertificate] = field(default_factory=dict)
    dropped: int = 0


def observe(state: ObserverState, cert: CommitCertificate) -> ObserverState:
    if cert.height <= state.chain.height or cert.height in state.buffered:
        return state
    if cert.problem(state.peers) is not None:
        return replace(state, dropped=state.dropped + 1)
    if cert.height > state.chain.height + 1:
        return replace(state, buffered={**state.buffered, cert.height: cert})
    chain = state.chain
    buffered = dict(state.buffered)
    nxt: CommitCertificate | None = cert
    while nxt is not None:
        if validate_block(nxt.block, chain) is not BlockVerdict.VALID:
            return replace(state, chain=chain, buffered=buffered, dropped=state.dropped + 1)
        chain = append_block(chain, nxt.block)
        nxt = buffered.pop(chain.height + 1, None)
    return replace(state, chain=chain, buffered=buffered)
