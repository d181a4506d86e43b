"""Attacker-side logic: partition traffic policing and in-path delay tampering.

The partition attacker sits on the diverted routes and forwards only frames
that travel between partition members, none of which mention a block mined
outside.  A member caught relaying outside information is `leaked` and cut
off; a member not heard from for `threshold` seconds is `unresponsive`.

The delay attacker rewrites block requests in flight so the victim's peer
serves a block the victim already has.  The original request is remembered
and, shortly before the victim's 20-minute patience runs out, smuggled back
inside an unrelated transaction request, so the block arrives late but the
connection survives.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from . import topology as tp
from . import wire
from .protocol import GENESIS, BlockMsg, InvMsg


@dataclass
class PartitionReport:
    partition: list[str]
    leaked: list[str]
    unresponsive: list[str]
    isolated: list[str]
    forwarded: int
    dropped: int
    leak_events: list[tuple[float, str]]

    def to_dict(self) -> dict:
        return {
            "partition": self.partition,
            "leaked": self.leaked,
            "unresponsive": self.unresponsive,
            "isolated": self.isolated,
            "forwarded": self.forwarded,
            "dropped": self.dropped,
            "leak_events": [[t, n] for t, n in self.leak_events],
        }


class PartitionAttacker:
    """Filtering policy over diverted traffic, with leak and liveness tracking."""

    def __init__(self, partition, threshold: float, now: float):
        self.partition = frozenset(partition)
        self.threshold = threshold
        self.leaked: set[str] = set()
        self.unresponsive: set[str] = set()
        self.last_seen: dict[str, float] = {n: now for n in self.partition}
        self._external: set[bytes] = set()
        self.forwarded = 0
        self.dropped = 0
        self.leak_events: list[tuple[float, str]] = []

    @property
    def monitored(self) -> frozenset:
        """P \\ L: members still being kept inside."""
        return self.partition - self.leaked

    def register_block(self, block_hash: bytes, miner, mine_time: float) -> None:
        """Record a block's origin the moment it is mined.

        `miner` is a node id, or the set of nodes a pool injects the block at.
        Externality is judged against P \\ L *as of the mining instant*; a
        block mined by a member that leaks later does not retroactively
        become outside information.
        """
        miners = {miner} if isinstance(miner, str) else set(miner)
        if not miners <= self.monitored:
            self._external.add(block_hash)

    def is_external(self, block_hash: bytes) -> bool:
        return block_hash in self._external

    def _mentions_external(self, msg) -> bool:
        if isinstance(msg, InvMsg):
            return any(h in self._external for _, h in msg.items)
        if isinstance(msg, BlockMsg):
            return msg.block.hash in self._external
        return False  # getdata and the rest carry no new knowledge

    def tick(self, src: str, dst: str, msg, now: float) -> bool:
        """Police one diverted frame; True means deliver it."""
        if src in self.partition:
            self.last_seen[src] = now
            self.unresponsive.discard(src)
        if src not in self.monitored or dst not in self.partition:
            self.dropped += 1
            return False
        if self._mentions_external(msg):
            self.leaked.add(src)
            self.unresponsive.discard(src)
            self.leak_events.append((now, src))
            self.dropped += 1
            return False
        self.forwarded += 1
        return True

    def sweep(self, now: float) -> None:
        """Refresh the unresponsive set from the liveness clocks."""
        self.unresponsive = {
            n for n in self.monitored if now - self.last_seen[n] >= self.threshold
        }

    def report(self) -> PartitionReport:
        iso = self.partition - self.leaked - self.unresponsive
        return PartitionReport(
            partition=sorted(self.partition),
            leaked=sorted(self.leaked),
            unresponsive=sorted(self.unresponsive),
            isolated=sorted(iso),
            forwarded=self.forwarded,
            dropped=self.dropped,
            leak_events=list(self.leak_events),
        )


# -- delay attacks ---------------------------------------------------------------


@dataclass
class _Stash:
    block_hash: bytes
    expires: float  # swap time + restore_margin; no restore after this


def _first_item(frame_inventory, inv_type):
    for i, (t, h) in enumerate(frame_inventory):
        if t == inv_type:
            return i, h
    return None, None


@dataclass
class DelayAttacker:
    """In-path tamperer for block delivery on intercepted connections.

    `mode="node"` pins a fixed number of the victim's outgoing connections
    (round(interception * outgoing_target)), re-acquiring replacements as
    connections churn.  `mode="network"` intercepts every connection whose
    AS path crosses the coalition, and never restores: every delayed block
    costs the downstream node a 20-minute wait and the connection.
    """

    mode: str = "node"
    direction: str = "outgoing"  # node mode: "outgoing" | "incoming"
    victim: str | None = None
    interception: float = 1.0
    outgoing_target: int = 8
    restore_margin: float = 300.0
    coalition: frozenset = frozenset()
    topo: tp.Topology | None = None
    seed: int = 0

    def __post_init__(self):
        self.rng = random.Random(f"{self.seed}:delay")
        self.intercepted: set[str] = set()
        self._stash: dict[tuple[str, str], _Stash] = {}
        self._path_hits: dict[tuple[int, int], bool] = {}
        self.rewrites = 0
        self.restores = 0
        self.corruptions = 0

    # ---- interception bookkeeping (node mode) ----

    @property
    def target_count(self) -> int:
        return round(self.interception * self.outgoing_target)

    def on_connect(self, a: str, b: str) -> None:
        if self.mode != "node":
            return
        if a == self.victim and len(self.intercepted) < self.target_count:
            self.intercepted.add(b)

    def on_disconnect(self, a: str, b: str) -> None:
        if self.mode != "node":
            return
        if a == self.victim:
            self.intercepted.discard(b)
            self._stash.pop((a, b), None)
            self._stash.pop((b, a), None)

    # ---- frame selection ----

    def _crosses_coalition(self, src: str, dst: str) -> bool:
        key = (self.topo.nodes[src].home_as, self.topo.nodes[dst].home_as)
        hit = self._path_hits.get(key)
        if hit is None:
            try:
                ases = tp.intercepting_ases(self.topo, src, dst)
            except tp.ScenarioError:
                ases = set()
            hit = bool(ases & self.coalition)
            self._path_hits[key] = hit
        return hit

    def intercepts(self, src: str, dst: str) -> bool:
        if self.mode == "network":
            if self.topo.group_of(src) is not None and self.topo.group_of(
                src
            ) == self.topo.group_of(dst):
                return False  # private pool fabric, not routed over the open net
            return self._crosses_coalition(src, dst)
        if self.direction == "outgoing":
            return src == self.victim and dst in self.intercepted
        return dst == self.victim and src in self.intercepted

    # ---- frame tampering ----

    def transform(self, src: str, dst: str, frame: bytes, now: float) -> bytes:
        """Rewrite one intercepted frame; always length-preserving."""
        parsed = wire.parse(frame)
        if self.mode == "node" and self.direction == "incoming":
            if parsed.command == "block":
                self.corruptions += 1
                return wire.corrupt_block(frame, self.rng)
            return frame
        if parsed.command != "getdata":
            return frame
        return self._tamper_getdata(src, dst, frame, parsed, now)

    def _tamper_getdata(self, src, dst, frame, parsed, now) -> bytes:
        key = (src, dst)
        stash = self._stash.get(key)
        if stash is not None and now >= stash.expires:
            self._stash.pop(key, None)
            stash = None
        idx, block_hash = _first_item(parsed.inventory, wire.INV_BLOCK)
        if block_hash is not None and block_hash != GENESIS.hash:
            if self.mode == "node" and stash is not None:
                # one tampered retrieval per connection at a time: while a
                # swap is pending, further block requests pass untouched
                return frame
            rewritten = wire.rewrite_getdata_hash(frame, block_hash, GENESIS.hash)
            self.rewrites += 1
            if self.mode == "node":
                self._stash[key] = _Stash(block_hash, expires=now + self.restore_margin)
            return rewritten  # network mode never stashes: it never restores
        if self.mode == "node" and stash is not None:
            tx_idx, _ = _first_item(parsed.inventory, wire.INV_TX)
            if tx_idx is not None:
                items = list(parsed.inventory)
                items[tx_idx] = (wire.INV_BLOCK, stash.block_hash)
                restored = wire.serialize_inventory("getdata", items)
                assert len(restored) == len(frame)
                self._stash.pop(key, None)
                self.restores += 1
                return restored
        return frame
