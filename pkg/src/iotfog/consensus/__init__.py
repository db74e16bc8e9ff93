"""Leader/validator consensus: message types, encodings and the pure state machine."""

from iotfog.consensus.machine import (
    ConsensusState,
    NotLeader,
    ObserverState,
    Outbound,
    PeerRole,
    Rejection,
    handle_message,
    new_peer,
    observe,
    order_pool,
    peer_role,
    propose,
    tick,
    try_commit,
    validate_and_sign,
)
from iotfog.consensus.messages import (
    CONSENSUS_TAGS,
    CommitCertificate,
    Message,
    Proposal,
    ViewChange,
    Vote,
    decode_message,
    encode_message,
    max_faulty,
    quorum,
    rotate_leader,
)

__all__ = [
    "CONSENSUS_TAGS",
    "CommitCertificate",
    "ConsensusState",
    "Message",
    "NotLeader",
    "ObserverState",
    "Outbound",
    "PeerRole",
    "Proposal",
    "Rejection",
    "ViewChange",
    "Vote",
    "decode_message",
    "encode_message",
    "handle_message",
    "max_faulty",
    "new_peer",
    "observe",
    "order_pool",
    "peer_role",
    "propose",
    "quorum",
    "rotate_leader",
    "tick",
    "try_commit",
    "validate_and_sign",
]
