"""Per-node gossip protocol: inv/getdata/block exchange and chain selection.

Nodes request a block from the first peer that advertised it and wait up to
20 simulated minutes; a peer that fails to deliver is disconnected and the
block is re-requested from the next advertiser in announcement order.  The
active chain is the highest one, first-seen winning ties.
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass, field

from . import wire

BLOCK_REQUEST_TIMEOUT = 1200.0  # the infamous 20 minutes


@dataclass(frozen=True)
class Block:
    hash: bytes
    parent: bytes | None
    height: int
    miner: str
    created: float


GENESIS = Block(hashlib.sha256(b"genesis").digest(), None, 0, "_genesis", 0.0)


def make_block(parent: Block, miner: str, index: int, now: float) -> Block:
    h = hashlib.sha256(f"{parent.hash.hex()}:{miner}:{index}".encode()).digest()
    return Block(h, parent.hash, parent.height + 1, miner, now)


# -- protocol messages ---------------------------------------------------------


@dataclass
class InvMsg:
    items: list[tuple[int, bytes]]


@dataclass
class GetDataMsg:
    items: list[tuple[int, bytes]]


@dataclass
class BlockMsg:
    block: Block
    valid: bool = True  # False once a checksum-breaking corruption happened


def block_inv(block_hash: bytes) -> InvMsg:
    return InvMsg([(wire.INV_BLOCK, block_hash)])


def block_to_payload(block: Block) -> bytes:
    miner = block.miner.encode()
    return (
        (block.parent or bytes(32))
        + block.hash
        + struct.pack("<Id", block.height, block.created)
        + wire.encode_varint(len(miner))
        + miner
    )


def block_from_payload(payload: bytes) -> Block:
    parent = payload[:32]
    h = payload[32:64]
    height, created = struct.unpack_from("<Id", payload, 64)
    n, off = wire.decode_varint(payload, 76)
    miner = payload[off : off + n].decode()
    return Block(h, None if parent == bytes(32) else parent, height, miner, created)


def to_wire(msg) -> bytes:
    if isinstance(msg, InvMsg):
        return wire.serialize_inventory("inv", msg.items)
    if isinstance(msg, GetDataMsg):
        return wire.serialize_inventory("getdata", msg.items)
    if isinstance(msg, BlockMsg):
        return wire.serialize("block", block_to_payload(msg.block))
    raise TypeError(f"unknown message {msg!r}")


def from_wire(frame: bytes):
    parsed = wire.parse(frame)
    if parsed.command == "inv":
        return InvMsg(parsed.inventory)
    if parsed.command == "getdata":
        return GetDataMsg(parsed.inventory)
    if parsed.command == "block":
        if not parsed.checksum_ok:
            return BlockMsg(GENESIS, valid=False)  # content is untrusted garbage
        return BlockMsg(block_from_payload(parsed.payload))
    raise wire.WireError(f"unexpected command {parsed.command}")


# -- chain state -----------------------------------------------------------------


class ChainView:
    """Block tree plus the node's idea of the active tip."""

    def __init__(self):
        self.blocks: dict[bytes, Block] = {GENESIS.hash: GENESIS}
        self.arrival: dict[bytes, float] = {GENESIS.hash: 0.0}
        self.tip: Block = GENESIS
        self._waiting: dict[bytes, list[Block]] = {}  # parent hash -> orphaned children

    def has(self, h: bytes) -> bool:
        return h in self.blocks

    def is_buffered(self, h: bytes) -> bool:
        return any(b.hash == h for kids in self._waiting.values() for b in kids)

    def add(self, block: Block, now: float) -> list[Block]:
        """Insert if the parent is known; return every block that became connected."""
        if block.hash in self.blocks:
            return []
        if block.parent not in self.blocks:
            kids = self._waiting.setdefault(block.parent, [])
            if all(b.hash != block.hash for b in kids):
                kids.append(block)
            return []
        connected = []
        queue = [block]
        while queue:
            blk = queue.pop(0)
            if blk.hash in self.blocks:
                continue
            self.blocks[blk.hash] = blk
            self.arrival[blk.hash] = now
            connected.append(blk)
            if blk.height > self.tip.height:
                self.tip = blk
            queue.extend(self._waiting.pop(blk.hash, []))
        return connected

    def main_chain(self) -> list[bytes]:
        """Hashes from genesis to the tip."""
        out = []
        cur: Block | None = self.tip
        while cur is not None:
            out.append(cur.hash)
            cur = self.blocks.get(cur.parent) if cur.parent else None
        return list(reversed(out))


def orphan_rate(chain: ChainView, mined: int) -> float:
    """Share of mined blocks that did not make this chain's active branch."""
    if mined == 0:
        return 0.0
    on_chain = len(chain.main_chain()) - 1  # genesis does not count
    return (mined - on_chain) / mined


# -- node state machine ------------------------------------------------------------


@dataclass
class Conn:
    direction: str  # "out" | "in"
    established: float


@dataclass
class Pending:
    peer: str
    deadline: float
    requested_at: float


@dataclass
class Send:
    dst: str
    msg: object


@dataclass
class StartTimer:
    block_hash: bytes
    deadline: float


@dataclass
class Disconnect:
    peer: str
    reason: str


class Node:
    """One Bitcoin node.  Handlers return actions for the engine to execute."""

    def __init__(self, node_id: str):
        self.node_id = node_id
        self.chain = ChainView()
        self.peers: dict[str, Conn] = {}
        self.pending: dict[bytes, Pending] = {}
        self.advertisers: dict[bytes, list[str]] = {}
        self.disconnect_log: list[tuple[str, float, str]] = []

    @property
    def outgoing(self) -> set[str]:
        return {p for p, c in self.peers.items() if c.direction == "out"}

    def on_connect(self, peer: str, direction: str, now: float) -> list:
        self.peers[peer] = Conn(direction, now)
        if self.chain.tip is not GENESIS:
            return [Send(peer, block_inv(self.chain.tip.hash))]
        return []

    def on_disconnect(self, peer: str) -> None:
        self.peers.pop(peer, None)

    def _request(self, h: bytes, peer: str, now: float) -> list:
        self.pending[h] = Pending(peer, now + BLOCK_REQUEST_TIMEOUT, now)
        return [
            Send(peer, GetDataMsg([(wire.INV_BLOCK, h)])),
            StartTimer(h, now + BLOCK_REQUEST_TIMEOUT),
        ]

    def on_inv(self, from_peer: str, msg: InvMsg, now: float) -> list:
        actions = []
        for inv_type, h in msg.items:
            if inv_type != wire.INV_BLOCK:
                continue
            if self.chain.has(h):
                continue
            ads = self.advertisers.setdefault(h, [])
            if from_peer not in ads:
                ads.append(from_peer)
            if h not in self.pending:
                actions.extend(self._request(h, from_peer, now))
        return actions

    def on_getdata(self, from_peer: str, msg: GetDataMsg, now: float) -> list:
        actions = []
        for inv_type, h in msg.items:
            if inv_type == wire.INV_BLOCK and self.chain.has(h):
                actions.append(Send(from_peer, BlockMsg(self.chain.blocks[h])))
            # tx requests are background noise: nothing to serve
        return actions

    def accept_block(self, block: Block, now: float, exclude: str | None = None) -> list:
        """Connect a block (and any buffered children), announcing the news."""
        connected = self.chain.add(block, now)
        actions = []
        for blk in connected:
            self.pending.pop(blk.hash, None)
            inv = block_inv(blk.hash)
            for peer in sorted(self.peers):
                if peer != exclude:
                    actions.append(Send(peer, inv))
        return actions

    def on_block(self, from_peer: str, msg: BlockMsg, now: float) -> list:
        if not msg.valid:
            # Checksum mismatch: the client drops the message on the floor and,
            # crucially, never re-requests — the pending entry keeps ticking.
            return []
        block = msg.block
        if self.chain.has(block.hash):
            self.pending.pop(block.hash, None)
            return []
        self.pending.pop(block.hash, None)
        actions = self.accept_block(block, now, exclude=from_peer)
        if not actions and not self.chain.has(block.hash):
            # parent unknown: block is parked; chase the parent hash
            parent = block.parent
            if parent and not self.chain.has(parent) and parent not in self.pending:
                ads = self.advertisers.setdefault(parent, [])
                if from_peer not in ads:
                    ads.append(from_peer)
                actions = self._request(parent, from_peer, now)
        return actions

    def on_timeout(self, h: bytes, deadline: float, now: float) -> list:
        entry = self.pending.get(h)
        if entry is None or entry.deadline != deadline or self.chain.has(h):
            return []
        del self.pending[h]
        slow = entry.peer
        actions: list = []
        if slow in self.peers:
            self.disconnect_log.append((slow, now, "block request timed out"))
            actions.append(Disconnect(slow, "block request timed out"))
        for candidate in self.advertisers.get(h, []):
            if candidate != slow and candidate in self.peers:
                actions.extend(self._request(h, candidate, now))
                break
        return actions

    def mine(self, index: int, now: float) -> tuple[Block, list]:
        block = make_block(self.chain.tip, self.node_id, index, now)
        return block, self.accept_block(block, now)
