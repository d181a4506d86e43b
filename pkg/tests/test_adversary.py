"""Attacker logic: partition filtering/leak detection and delay tampering."""

import hashlib

from btcrs import adversary as adv
from btcrs import protocol as pr
from btcrs import topology as tp
from btcrs import wire

G = pr.GENESIS
SCN = __import__("pathlib").Path(__file__).resolve().parent.parent / "scenarios"


def mk(parent, miner, idx, now=0.0):
    return pr.make_block(parent, miner, idx, now)


def inv_of(*blocks):
    return pr.InvMsg([(wire.INV_BLOCK, b.hash) for b in blocks])


# ---------------------------------------------------------------- partition --


def test_forwarding_matrix():
    a = adv.PartitionAttacker({"a", "b"}, threshold=600.0, now=0.0)
    internal = mk(G, "a", 0)
    a.register_block(internal.hash, "a", 1.0)
    msg = inv_of(internal)
    assert a.tick("a", "b", msg, 2.0) is True  # member to member, clean
    assert a.tick("o", "b", msg, 3.0) is False  # outsider talking in
    assert a.tick("a", "o", msg, 4.0) is False  # member talking out
    assert a.forwarded == 1 and a.dropped == 2


def test_external_inv_marks_the_source_leaked():
    a = adv.PartitionAttacker({"a", "b"}, threshold=600.0, now=0.0)
    ext = mk(G, "outsider", 0)
    a.register_block(ext.hash, "outsider", 5.0)
    assert a.tick("a", "b", inv_of(ext), 6.0) is False
    assert a.leaked == {"a"}
    assert a.leak_events == [(6.0, "a")]
    # everything from a leaked member is dropped from then on, clean or not
    internal = mk(G, "b", 1)
    a.register_block(internal.hash, "b", 7.0)
    assert a.tick("a", "b", inv_of(internal), 8.0) is False


def test_external_block_message_leaks_but_getdata_does_not():
    a = adv.PartitionAttacker({"a", "b"}, threshold=600.0, now=0.0)
    ext = mk(G, "outsider", 0)
    a.register_block(ext.hash, "outsider", 5.0)
    # asking for a hash is not proof of possession; the reply would be
    assert a.tick("a", "b", pr.GetDataMsg([(wire.INV_BLOCK, ext.hash)]), 6.0) is True
    assert a.leaked == set()
    assert a.tick("b", "a", pr.BlockMsg(ext), 7.0) is False
    assert a.leaked == {"b"}


def test_externality_is_judged_at_mining_time():
    a = adv.PartitionAttacker({"a", "b"}, threshold=600.0, now=0.0)
    early = mk(G, "a", 0)
    a.register_block(early.hash, "a", 1.0)  # a is still monitored: internal
    ext = mk(G, "outsider", 1)
    a.register_block(ext.hash, "outsider", 2.0)
    a.tick("a", "b", inv_of(ext), 3.0)  # a leaks
    late = mk(early, "a", 2)
    a.register_block(late.hash, "a", 4.0)  # mined by a leaked member: external
    assert not a.is_external(early.hash)  # no retroactive reclassification
    assert a.is_external(late.hash)
    assert not a.is_external(G.hash)


def test_tx_chatter_is_forwarded_and_counts_as_liveness():
    a = adv.PartitionAttacker({"a", "b"}, threshold=600.0, now=0.0)
    tx = hashlib.sha256(b"sometx").digest()
    assert a.tick("a", "b", pr.InvMsg([(wire.INV_TX, tx)]), 50.0) is True
    assert a.last_seen["a"] == 50.0


def test_liveness_sweep_tracks_silence():
    a = adv.PartitionAttacker({"a", "b", "c"}, threshold=600.0, now=0.0)
    blk = mk(G, "a", 0)
    a.register_block(blk.hash, "a", 1.0)
    a.tick("a", "b", inv_of(blk), 550.0)
    a.sweep(700.0)
    assert a.unresponsive == {"b", "c"}  # silent since t=0
    a.tick("b", "a", inv_of(blk), 710.0)  # b speaks again
    assert "b" not in a.unresponsive
    a.sweep(720.0)
    assert a.unresponsive == {"c"}
    ext = mk(G, "o", 9)
    a.register_block(ext.hash, "o", 730.0)
    a.tick("c", "a", inv_of(ext), 740.0)  # c leaks: leaves U, joins L
    assert a.leaked == {"c"} and "c" not in a.unresponsive
    a.sweep(5000.0)
    assert "c" not in a.unresponsive  # leaked members are not tracked
    rep = a.report()
    assert rep.isolated == sorted({"a", "b"} - set(rep.unresponsive))
    assert rep.to_dict()["leaked"] == ["c"]


# -------------------------------------------------------------------- delay --


class Pipe:
    """Victim and one peer joined by an attacker-controlled zero-latency link."""

    def __init__(self, attacker):
        self.v = pr.Node("v")
        self.p = pr.Node("p")
        self.attacker = attacker
        attacker.on_connect("v", "p")
        self.v.on_connect("p", "out", 0.0)
        self.p.on_connect("v", "in", 0.0)
        self.timers = []  # StartTimer actions raised by the victim
        self.disconnects = []  # (who, peer, time)

    def _deliver(self, src_node, dst_node, msg, now):
        frame = pr.to_wire(msg)
        if self.attacker.intercepts(src_node.node_id, dst_node.node_id):
            frame = self.attacker.transform(src_node.node_id, dst_node.node_id, frame, now)
        msg = pr.from_wire(frame)
        if isinstance(msg, pr.InvMsg):
            acts = dst_node.on_inv(src_node.node_id, msg, now)
        elif isinstance(msg, pr.GetDataMsg):
            acts = dst_node.on_getdata(src_node.node_id, msg, now)
        else:
            acts = dst_node.on_block(src_node.node_id, msg, now)
        self._run(dst_node, acts, now)

    def _run(self, node, actions, now):
        other = self.p if node is self.v else self.v
        for act in actions:
            if isinstance(act, pr.Send):
                self._deliver(node, other, act.msg, now)
            elif isinstance(act, pr.StartTimer):
                if node is self.v:
                    self.timers.append(act)
            elif isinstance(act, pr.Disconnect):
                self.disconnects.append((node.node_id, act.peer, now))
                node.on_disconnect(act.peer)
                other.on_disconnect(node.node_id)
                self.attacker.on_disconnect("v", "p")

    def peer_mines(self, idx, now):
        block, acts = self.p.mine(idx, now)
        self._run(self.p, acts, now)
        return block

    def victim_tx_request(self, now):
        tx = hashlib.sha256(f"tx@{now}".encode()).digest()
        self._deliver(self.v, self.p, pr.GetDataMsg([(wire.INV_TX, tx)]), now)

    def fire_timer(self, timer, now):
        self._run(self.v, self.v.on_timeout(timer.block_hash, timer.deadline, now), now)


def outgoing_attacker():
    return adv.DelayAttacker(
        mode="node", direction="outgoing", victim="v", interception=1.0, seed=3
    )


def test_outgoing_delay_holds_block_then_restores_on_next_tx():
    pipe = Pipe(outgoing_attacker())
    b = pipe.peer_mines(0, 10.0)
    # the INV went through, the getdata got rewritten to the genesis hash:
    # peer served a block the victim already had, so the request is still open
    assert not pipe.v.chain.has(b.hash)
    assert pipe.v.pending[b.hash].deadline == 10.0 + 1200.0
    assert pipe.attacker.rewrites == 1
    # first tx request while the stash is live carries the request back
    pipe.victim_tx_request(250.0)
    assert pipe.v.chain.tip == b  # delivered 240 s late
    assert b.hash not in pipe.v.pending
    assert pipe.attacker.restores == 1
    # the deadline passes without incident: no disconnect
    for t in list(pipe.timers):
        pipe.fire_timer(t, t.deadline)
    assert pipe.disconnects == []
    assert "p" in pipe.v.peers


def test_second_block_request_passes_while_a_swap_is_pending():
    pipe = Pipe(outgoing_attacker())
    b1 = pipe.peer_mines(0, 0.0)
    b2 = pipe.peer_mines(1, 30.0)
    # one tampered retrieval per connection: b2's getdata went through intact,
    # but the block it fetched is parentless until b1 is released
    assert pipe.attacker.rewrites == 1
    stash = pipe.attacker._stash[("v", "p")]
    assert stash.block_hash == b1.hash
    assert pipe.v.chain.is_buffered(b2.hash)
    assert pipe.v.chain.tip.height == 0
    pipe.victim_tx_request(250.0)  # restore b1: the buffered child cascades in
    assert pipe.v.chain.has(b1.hash) and pipe.v.chain.has(b2.hash)
    assert pipe.v.chain.tip == b2
    for t in list(pipe.timers):
        pipe.fire_timer(t, t.deadline)
    assert pipe.disconnects == []


def test_stash_expires_restore_margin_after_the_swap():
    pipe = Pipe(outgoing_attacker())
    b = pipe.peer_mines(0, 0.0)
    pipe.victim_tx_request(300.0)  # margin is 300 s: one tick too late
    assert not pipe.v.chain.has(b.hash)
    assert ("v", "p") not in pipe.attacker._stash
    # with no carrier in time the victim walks away at the protocol deadline
    (t,) = pipe.timers
    pipe.fire_timer(t, t.deadline)
    assert pipe.disconnects == [("v", "p", 1200.0)]


def test_incoming_corruption_starves_victim_until_exact_timeout():
    attacker = adv.DelayAttacker(
        mode="node", direction="incoming", victim="v", interception=1.0, seed=3
    )
    pipe = Pipe(attacker)
    b = pipe.peer_mines(0, 10.0)
    # the block did cross the wire, but with a broken checksum every time
    assert attacker.corruptions == 1
    assert not pipe.v.chain.has(b.hash)
    assert b.hash in pipe.v.pending  # corrupted copies are not re-requested
    (t,) = pipe.timers
    assert t.deadline == 10.0 + 1200.0
    pipe.fire_timer(t, t.deadline)
    assert pipe.disconnects == [("v", "p", 1210.0)]  # exactly request + 1200 s
    assert not pipe.v.chain.has(b.hash)


def test_node_mode_interception_bookkeeping():
    a = adv.DelayAttacker(mode="node", victim="v", interception=0.5, outgoing_target=8)
    assert a.target_count == 4
    for i in range(8):
        a.on_connect("v", f"p{i}")
    assert a.intercepted == {"p0", "p1", "p2", "p3"}
    a.on_disconnect("v", "p1")
    assert a.intercepted == {"p0", "p2", "p3"}
    a.on_connect("v", "p8")  # the refilled slot inherits interception
    assert a.intercepted == {"p0", "p2", "p3", "p8"}
    a.on_connect("v", "p9")  # back at target: left alone
    assert "p9" not in a.intercepted
    assert adv.DelayAttacker(victim="v", interception=0.8).target_count == 6
    assert not a.intercepts("v", "p9") and a.intercepts("v", "p8")
    assert not a.intercepts("p8", "v")  # outgoing mode tampers one direction


def test_network_mode_follows_as_paths_and_spares_pool_fabric():
    topo = tp.load_topology(SCN / "paperlike.scn")
    a = adv.DelayAttacker(mode="network", coalition=frozenset({3, 7}), topo=topo, seed=1)
    assert a.intercepts("A", "H")  # AS1 -> AS4 transits through 3 and 7
    assert not a.intercepts("A", "C")  # AS1 -> AS2 is a direct peering
    assert a.intercepts("K", "A")  # traffic from AS3 itself is on-path
    assert not a.intercepts("I", "F")  # red pool fabric, despite the AS7 path
    b = pr.make_block(G, "m", 0, 5.0)
    frame = pr.to_wire(pr.GetDataMsg([(wire.INV_BLOCK, b.hash)]))
    out = a.transform("A", "H", frame, 5.0)
    items = pr.from_wire(out).items
    assert items == [(wire.INV_BLOCK, G.hash)]
    assert a._stash == {}  # network mode never intends to give the block back
    tx = pr.to_wire(pr.GetDataMsg([(wire.INV_TX, bytes(32))]))
    assert a.transform("A", "H", tx, 900.0) == tx


def test_non_getdata_frames_pass_untouched_in_outgoing_mode():
    a = outgoing_attacker()
    a.on_connect("v", "p")
    b = pr.make_block(G, "m", 0, 5.0)
    for msg in (pr.InvMsg([(wire.INV_BLOCK, b.hash)]), pr.BlockMsg(b)):
        frame = pr.to_wire(msg)
        assert a.transform("v", "p", frame, 5.0) == frame
