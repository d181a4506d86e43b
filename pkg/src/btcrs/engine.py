"""Deterministic event-driven simulation of Bitcoin gossip over an AS topology.

A single heap orders deliveries, mining, request timeouts, background
transaction chatter, churn reboots and attack control; ties break on
insertion order, so a (scenario, seed) pair always replays identically.
Latency between two nodes is `base_delay` plus `per_hop_delay` for every
inter-AS hop of the policy-compliant route; members of the same pool fabric
exchange messages instantly and invisibly to any on-path attacker.
"""

from __future__ import annotations

import concurrent.futures
import heapq
import os
import random
from dataclasses import dataclass, field

from . import planner
from . import protocol as pr
from . import topology as tp
from . import wire
from .adversary import DelayAttacker, PartitionAttacker, PartitionReport

SWEEP_INTERVAL = 60.0


@dataclass
class SimParams:
    block_interval_mean: float = 600.0
    blocks: int = 144
    per_hop_delay: float = 1.0
    base_delay: float = 0.05
    tx_getdata_rate: float = 0.0
    drain_time: float = 7200.0
    threshold: float = 600.0
    restore_margin: float = 300.0
    convergence_delay: float = 90.0
    outgoing_target: int = 8
    max_connections: int = 125
    residual_share: float | None = None
    churn: dict | None = None
    connections: list | None = None

    @classmethod
    def from_mapping(cls, mapping: dict) -> "SimParams":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in mapping.items() if k in known})


@dataclass
class MinedBlock:
    time: float
    block: pr.Block
    miner: str
    inserted: tuple[str, ...]


@dataclass
class RunResult:
    seed: int
    config_digest: str
    params: SimParams
    mined: list[MinedBlock]
    last_mine_time: float
    tip_series: dict[str, list[tuple[float, int]]]
    nodes: dict[str, pr.Node]
    partition: PartitionReport | None
    partition_attacker: PartitionAttacker | None
    delay_attacker: DelayAttacker | None
    dials: int
    disconnects: int
    end_time: float


def _slash16(ip: str) -> str:
    return ".".join(ip.split(".")[:2])


class Simulation:
    """One seeded run over a loaded topology."""

    def __init__(self, topo: tp.Topology, seed: int, overrides: dict | None = None,
                 attack: dict | None | str = "scenario", end_time: float | None = None):
        merged = dict(topo.params)
        if overrides:
            merged.update(overrides)
        self.topo = topo
        self.seed = seed
        self.params = SimParams.from_mapping(merged)
        self.now = 0.0
        self._heap: list = []
        self._seq = 0
        self.nodes = {nid: pr.Node(nid) for nid in sorted(topo.nodes)}
        self._node_order = sorted(topo.nodes)
        self.rng_mine = random.Random(f"{seed}:mine")
        self.rng_net = random.Random(f"{seed}:net")
        self._tx_rng = {n: random.Random(f"{seed}:tx:{n}") for n in self._node_order}
        self._churn_rng = {n: random.Random(f"{seed}:churn:{n}") for n in self._node_order}
        self._lifetime: dict[str, float] = {}
        self._path_len: dict[tuple[int, int], int] = {}
        self._routable_cache: dict[tuple[int, int], bool] = {}
        self._ip16 = {n: _slash16(topo.nodes[n].ip) for n in self._node_order}
        self.dial_veto = None  # callable(a, b) -> True to refuse the dial
        self.tip_series = {n: [(0.0, 0)] for n in self._node_order}
        self.mined: list[MinedBlock] = []
        self.last_mine_time = 0.0
        self.dials = 0
        self.disconnects = 0
        self._blocks_left = self.params.blocks
        self._next_index = 0
        self.horizon: float | None = end_time
        if self.params.blocks == 0 and end_time is None:
            self.horizon = self.params.drain_time

        # pool fabric: gateways of privately peered pools form instant cliques
        self._clique: dict[str, frozenset] = {}
        for group in topo.pool_groups():
            gws = frozenset(g for p in group for g in topo.pools[p].gateways)
            for g in gws:
                self._clique[g] = gws

        self.partition_attacker: PartitionAttacker | None = None
        self._coverage: tp.Coverage | None = None
        self._perfect_side: set[str] | None = None
        self.delay_attacker: DelayAttacker | None = None
        self._attack = topo.attack if attack == "scenario" else attack
        self._regular = sorted(topo.regular_ids)
        self._pools_sorted = sorted(topo.pools.values(), key=lambda p: p.pool_id)

    # ---- scheduling primitives ----

    def _push(self, when: float, kind: str, payload) -> None:
        heapq.heappush(self._heap, (when, self._seq, kind, payload))
        self._seq += 1

    def schedule_control(self, when: float, fn) -> None:
        self._push(when, "control", fn)

    # ---- connections ----

    def _same_fabric(self, a: str, b: str) -> bool:
        return b in self._clique.get(a, ())

    def _routable(self, a: str, b: str) -> bool:
        pa, pb = self.topo.nodes[a].home_as, self.topo.nodes[b].home_as
        if pa == pb:
            return True
        hit = self._routable_cache.get((pa, pb))
        if hit is None:
            hit = self.topo.forwarding.has_path(pa, pb) and self.topo.forwarding.has_path(pb, pa)
            self._routable_cache[(pa, pb)] = hit
        return hit

    def _connect(self, a: str, b: str, kind: str = "out") -> None:
        na, nb = self.nodes[a], self.nodes[b]
        if kind == "out":
            self.dials += 1
        acts_a = na.on_connect(b, "clique" if kind == "clique" else "out", self.now)
        acts_b = nb.on_connect(a, "clique" if kind == "clique" else "in", self.now)
        if self.delay_attacker is not None and kind == "out":
            self.delay_attacker.on_connect(a, b)
        self._execute(a, acts_a)
        self._execute(b, acts_b)

    def _dial(self, nid: str, exclude: frozenset = frozenset()) -> bool:
        node = self.nodes[nid]
        taken_groups = {self._ip16[p] for p in node.outgoing}

        def eligible(cand: str) -> bool:
            if cand == nid or cand in node.peers or cand in exclude:
                return False
            if self.dial_veto is not None and self.dial_veto(nid, cand):
                return False
            if len(self.nodes[cand].peers) >= self.params.max_connections:
                return False
            if self._ip16[cand] in taken_groups:
                return False
            return self._routable(nid, cand)

        # rejection sampling stays uniform over the eligible set and avoids
        # scanning every node on the common path; the scan is the slow proof
        # that nothing (or only a rare candidate) is left
        order = self._node_order
        for _ in range(24):
            cand = order[self.rng_net.randrange(len(order))]
            if eligible(cand):
                self._connect(nid, cand, "out")
                return True
        candidates = [c for c in order if eligible(c)]
        if not candidates:
            return False
        self._connect(nid, self.rng_net.choice(candidates), "out")
        return True

    def _disconnect(self, a: str, b: str, refill: bool = True) -> None:
        na, nb = self.nodes[a], self.nodes[b]
        if b not in na.peers:
            return
        lost_out_a = b in na.outgoing
        lost_out_b = a in nb.outgoing
        na.on_disconnect(b)
        nb.on_disconnect(a)
        if self.delay_attacker is not None:
            self.delay_attacker.on_disconnect(a, b)
            self.delay_attacker.on_disconnect(b, a)
        self.disconnects += 1
        if refill:
            if lost_out_a and len(na.outgoing) < self.params.outgoing_target:
                self._dial(a, exclude=frozenset({b}))
            if lost_out_b and len(nb.outgoing) < self.params.outgoing_target:
                self._dial(b, exclude=frozenset({a}))

    def _setup_connections(self) -> None:
        for group in self.topo.pool_groups():
            gws = sorted(g for p in group for g in self.topo.pools[p].gateways)
            for i, a in enumerate(gws):
                for b in gws[i + 1 :]:
                    self._connect(a, b, "clique")
        if self.params.connections is not None:
            for a, b in self.params.connections:
                if b not in self.nodes[a].peers:
                    self._connect(a, b, "out")
        else:
            for nid in self._node_order:
                while len(self.nodes[nid].outgoing) < self.params.outgoing_target:
                    if not self._dial(nid):
                        break

    def cross_fraction(self, side: set[str]) -> float:
        total = crossing = 0
        for nid, node in self.nodes.items():
            for peer in node.outgoing:
                total += 1
                crossing += (nid in side) != (peer in side)
        return crossing / total if total else 0.0

    def sever_crossing(self, side: set[str]) -> None:
        for a in self._node_order:
            for b in sorted(self.nodes[a].peers):
                if a < b and ((a in side) != (b in side)):
                    self._disconnect(a, b, refill=True)

    # ---- attacks ----

    def _install_attack(self) -> None:
        spec = self._attack
        if not spec:
            return
        kind = spec.get("kind")
        targets = list(spec.get("target", []))
        ap = dict(spec.get("params", {}))
        start = float(ap.get("start", 0.0))
        end = ap.get("end")
        if kind == "partition" and ap.get("mode") == "perfect":
            side = set(targets)

            def begin(sim: "Simulation") -> None:
                sim._perfect_side = side
                sim.dial_veto = lambda a, b: (a in side) != (b in side)
                sim.sever_crossing(side)

            def lift(sim: "Simulation") -> None:
                sim._perfect_side = None
                sim.dial_veto = None

            self.schedule_control(start, begin)
            if end is not None:
                self.schedule_control(float(end), lift)
        elif kind == "partition":
            announced = ap.get("announced")
            if announced is None:
                announced = planner.cover_nodes(self.topo, targets)
            else:
                announced = [
                    (p.rsplit("/", 1)[0], int(p.rsplit("/", 1)[1])) if isinstance(p, str) else tuple(p)
                    for p in announced
                ]
            attacker_as = int(ap["attacker_as"])
            active_at = start + self.params.convergence_delay

            def activate(sim: "Simulation") -> None:
                sim._coverage = tp.hijack_coverage(sim.topo, announced, attacker_as, sim.seed)
                sim.partition_attacker = PartitionAttacker(targets, sim.params.threshold, sim.now)
                sim._push(sim.now + SWEEP_INTERVAL, "sweep", None)

            def deactivate(sim: "Simulation") -> None:
                if sim.partition_attacker is not None:
                    sim.partition_attacker.sweep(sim.now)
                sim._coverage = None

            self.schedule_control(active_at, activate)
            if end is not None:
                self.schedule_control(float(end), deactivate)
        elif kind == "delay":
            if "coalition" in ap:
                self.delay_attacker = DelayAttacker(
                    mode="network",
                    coalition=frozenset(tp.resolve_coalition(self.topo, ap["coalition"])),
                    topo=self.topo,
                    seed=self.seed,
                )
            else:
                self.delay_attacker = DelayAttacker(
                    mode="node",
                    direction=ap.get("direction", "outgoing"),
                    victim=targets[0],
                    interception=float(ap.get("interception", 1.0)),
                    outgoing_target=self.params.outgoing_target,
                    restore_margin=float(ap.get("restore_margin", self.params.restore_margin)),
                    seed=self.seed,
                )
        else:
            raise tp.ScenarioError(f"unknown attack kind {kind!r}")

    # ---- event handlers ----

    def _execute(self, nid: str, actions) -> None:
        for act in actions:
            if isinstance(act, pr.Send):
                self._send(nid, act.dst, act.msg)
            elif isinstance(act, pr.StartTimer):
                self._push(act.deadline, "timeout", (nid, act.block_hash, act.deadline))
            elif isinstance(act, pr.Disconnect):
                self._disconnect(nid, act.peer)
        node = self.nodes[nid]
        series = self.tip_series[nid]
        height = node.chain.tip.height
        if height != series[-1][1]:
            series.append((self.now, height))

    def _send(self, src: str, dst: str, msg) -> None:
        if dst not in self.nodes[src].peers:
            return
        if self._same_fabric(src, dst):
            self._push(self.now, "deliver", (src, dst, msg))
            return
        src_as = self.topo.nodes[src].home_as
        dst_as = self.topo.nodes[dst].home_as
        if self._coverage is not None and self._coverage.diverted(dst, src_as):
            if not self.partition_attacker.tick(src, dst, msg, self.now):
                return
        if self.delay_attacker is not None and self.delay_attacker.intercepts(src, dst):
            msg = pr.from_wire(self.delay_attacker.transform(src, dst, pr.to_wire(msg), self.now))
        if src_as == dst_as:
            hops = 1
        else:
            key = (src_as, dst_as)
            hops = self._path_len.get(key)
            if hops is None:
                path = self.topo.forwarding.path(src_as, dst_as)
                hops = len(path) if path else 1
                self._path_len[key] = hops
        delay = self.params.base_delay + self.params.per_hop_delay * (hops - 1)
        self._push(self.now + delay, "deliver", (src, dst, msg))

    def _ev_deliver(self, src: str, dst: str, msg) -> None:
        node = self.nodes[dst]
        if src not in node.peers:
            return  # the connection died while the frame was in flight
        if isinstance(msg, pr.InvMsg):
            acts = node.on_inv(src, msg, self.now)
        elif isinstance(msg, pr.GetDataMsg):
            acts = node.on_getdata(src, msg, self.now)
        elif isinstance(msg, pr.BlockMsg):
            acts = node.on_block(src, msg, self.now)
        else:  # pragma: no cover
            raise TypeError(f"unroutable message {msg!r}")
        self._execute(dst, acts)

    def _ev_timeout(self, nid: str, block_hash: bytes, deadline: float) -> None:
        self._execute(nid, self.nodes[nid].on_timeout(block_hash, deadline, self.now))

    def _pick_miner(self) -> tuple[str, list[str]]:
        r = self.rng_mine.random()
        acc = 0.0
        for pool in self._pools_sorted:
            acc += pool.hash_share
            if r < acc:
                return pool.pool_id, sorted(pool.gateways)
        if self._regular:
            return (nid := self.rng_mine.choice(self._regular)), [nid]
        pool = self._pools_sorted[-1]
        return pool.pool_id, sorted(pool.gateways)

    def _ev_mine(self) -> None:
        self._blocks_left -= 1
        miner, inserted = self._pick_miner()
        parent = self.nodes[inserted[0]].chain.tip
        block = pr.make_block(parent, miner, self._next_index, self.now)
        self._next_index += 1
        self.mined.append(MinedBlock(self.now, block, miner, tuple(inserted)))
        self.last_mine_time = self.now
        if self.partition_attacker is not None and self._coverage is not None:
            self.partition_attacker.register_block(block.hash, set(inserted), self.now)
        for nid in inserted:
            self._execute(nid, self.nodes[nid].accept_block(block, self.now))
        if self._blocks_left > 0:
            self._push(
                self.now + self.rng_mine.expovariate(1.0 / self.params.block_interval_mean),
                "mine",
                None,
            )
        elif self.horizon is None:
            self.horizon = self.now + self.params.drain_time

    def _ev_txreq(self, nid: str) -> None:
        node = self.nodes[nid]
        rng = self._tx_rng[nid]
        peers = sorted(node.peers)
        if peers:
            fake_tx = rng.randbytes(32)
            self._send(nid, rng.choice(peers), pr.GetDataMsg([(wire.INV_TX, fake_tx)]))
        else:
            rng.randbytes(32)  # keep the stream aligned whether or not we sent
        # tx_getdata_rate is per connection; the node-level process is the
        # superposition over however many peers it has right now
        rate = self.params.tx_getdata_rate * max(len(peers), 1)
        self._push(self.now + rng.expovariate(rate), "txreq", nid)

    def _ev_churn(self, nid: str) -> None:
        node = self.nodes[nid]
        for peer in sorted(node.peers):
            other = self.nodes[peer]
            lost_out = nid in other.outgoing
            node.on_disconnect(peer)
            other.on_disconnect(nid)
            if self.delay_attacker is not None:
                self.delay_attacker.on_disconnect(nid, peer)
                self.delay_attacker.on_disconnect(peer, nid)
            self.disconnects += 1
            if lost_out and len(other.outgoing) < self.params.outgoing_target:
                self._dial(peer, exclude=frozenset({nid}))
        node.pending.clear()
        node.advertisers.clear()
        for g in sorted(self._clique.get(nid, ())):
            if g != nid and g not in node.peers:
                self._connect(nid, g, "clique")
        for _ in range(self.params.outgoing_target):
            if not self._dial(nid):
                break
        self._push(
            self.now + self._churn_rng[nid].expovariate(1.0 / self._lifetime[nid]),
            "churn",
            nid,
        )

    def _ev_sweep(self) -> None:
        if self.partition_attacker is not None and self._coverage is not None:
            self.partition_attacker.sweep(self.now)
            self._push(self.now + SWEEP_INTERVAL, "sweep", None)

    # ---- main loop ----

    def _schedule_initial(self) -> None:
        if self._blocks_left > 0:
            self._push(self.rng_mine.expovariate(1.0 / self.params.block_interval_mean), "mine", None)
        if self.params.tx_getdata_rate > 0:
            for nid in self._node_order:
                self._push(self._tx_rng[nid].expovariate(self.params.tx_getdata_rate), "txreq", nid)
        churn = self.params.churn or {}
        if churn.get("enabled"):
            table = churn.get("lifetime_table") or [[1.0, 86_400.0]]
            for nid in self._node_order:
                rng = self._churn_rng[nid]
                u, acc = rng.random(), 0.0
                mean = table[-1][1]
                for p, m in table:
                    acc += p
                    if u < acc:
                        mean = m
                        break
                self._lifetime[nid] = float(mean)
                self._push(rng.expovariate(1.0 / mean), "churn", nid)

    def run(self) -> RunResult:
        self._install_attack()
        self._setup_connections()
        self._schedule_initial()
        while self._heap:
            when, _, kind, payload = heapq.heappop(self._heap)
            if self.horizon is not None and when > self.horizon:
                break
            self.now = when
            if kind == "deliver":
                self._ev_deliver(*payload)
            elif kind == "timeout":
                self._ev_timeout(*payload)
            elif kind == "mine":
                self._ev_mine()
            elif kind == "txreq":
                self._ev_txreq(payload)
            elif kind == "churn":
                self._ev_churn(payload)
            elif kind == "control":
                payload(self)
            elif kind == "sweep":
                self._ev_sweep()
        report = None
        if self.partition_attacker is not None:
            self.partition_attacker.sweep(self.now)
            report = self.partition_attacker.report()
        return RunResult(
            seed=self.seed,
            config_digest=self.topo.config_digest(),
            params=self.params,
            mined=self.mined,
            last_mine_time=self.last_mine_time,
            tip_series=self.tip_series,
            nodes=self.nodes,
            partition=report,
            partition_attacker=self.partition_attacker,
            delay_attacker=self.delay_attacker,
            dials=self.dials,
            disconnects=self.disconnects,
            end_time=self.now,
        )


# -- experiment drivers ------------------------------------------------------------


def run_scenario(raw, seed: int, overrides: dict | None = None,
                 attack="scenario", end_time: float | None = None) -> RunResult:
    topo = raw if isinstance(raw, tp.Topology) else tp.load_topology(raw)
    return Simulation(topo, seed, overrides, attack, end_time).run()


def worker_count(n_tasks: int) -> int:
    cap = os.environ.get("BTCRS_THREADS")
    if cap:
        return max(1, min(int(cap), n_tasks))
    return max(1, min(os.cpu_count() or 1, n_tasks))


def _map_tasks(fn, tasks: list[tuple]) -> list:
    workers = worker_count(len(tasks))
    if workers <= 1 or len(tasks) <= 1:
        return [fn(*t) for t in tasks]
    with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(fn, *zip(*tasks)))


def run_seeds(raw: dict, seeds, overrides: dict | None = None, attack="scenario") -> list[RunResult]:
    return _map_tasks(run_scenario, [(raw, s, overrides, attack) for s in seeds])


# -- partition recovery ------------------------------------------------------------

HEAL_WARMUP = 1800.0
HEAL_ATTACK = 3600.0
HEAL_WATCH = 36_000.0
HEAL_SAMPLE_EVERY = 1800.0


@dataclass
class HealResult:
    seed: int
    onpath: float
    baseline: float
    samples: list[tuple[float, float]] = field(default_factory=list)

    @property
    def final_ratio(self) -> float:
        return self.samples[-1][1] / self.baseline if self.baseline else 0.0

    def to_dict(self) -> dict:
        return {
            "seed": self.seed,
            "onpath": self.onpath,
            "baseline_cross_fraction": self.baseline,
            "samples": [[t, f] for t, f in self.samples],
            "final_ratio": self.final_ratio,
        }


def run_healing(raw, seed: int, onpath: float = 0.0, overrides: dict | None = None) -> HealResult:
    """Perfect partition, lift, then watch connectivity knit back together.

    While the partition holds, cross-boundary connections are severed and
    cross-boundary dials fail.  After lifting, a seeded `onpath` fraction of
    cross pairs keeps failing, the persistent-drop behaviour of an attacker
    who stays on the routes.  Recovery is driven entirely by churn.
    """
    topo = raw if isinstance(raw, tp.Topology) else tp.load_topology(raw)
    side = set(topo.attack["target"])
    result = HealResult(seed=seed, onpath=onpath, baseline=0.0)
    end = HEAL_WARMUP + HEAL_ATTACK + HEAL_WATCH + 1.0
    sim = Simulation(topo, seed, overrides, attack=None, end_time=end)

    verdicts: dict[tuple[str, str], bool] = {}

    def suppressed(a: str, b: str) -> bool:
        pair = (a, b) if a < b else (b, a)
        hit = verdicts.get(pair)
        if hit is None:
            lo, hi = pair
            hit = random.Random(f"{seed}:onpath:{lo}:{hi}").random() < onpath
            verdicts[pair] = hit
        return hit

    def measure_baseline(s: Simulation) -> None:
        result.baseline = s.cross_fraction(side)

    def begin(s: Simulation) -> None:
        s.dial_veto = lambda a, b: (a in side) != (b in side)
        s.sever_crossing(side)

    def lift(s: Simulation) -> None:
        if onpath > 0.0:
            s.dial_veto = lambda a, b: ((a in side) != (b in side)) and suppressed(a, b)
        else:
            s.dial_veto = None

    def sample(s: Simulation) -> None:
        result.samples.append((s.now - HEAL_WARMUP - HEAL_ATTACK, s.cross_fraction(side)))

    sim.schedule_control(HEAL_WARMUP - 1.0, measure_baseline)
    sim.schedule_control(HEAL_WARMUP, begin)
    lift_at = HEAL_WARMUP + HEAL_ATTACK
    sim.schedule_control(lift_at, lift)
    t = lift_at + HEAL_SAMPLE_EVERY
    while t <= lift_at + HEAL_WATCH:
        sim.schedule_control(t, sample)
        t += HEAL_SAMPLE_EVERY
    sim.run()
    return result


def run_healing_seeds(raw: dict, seeds, onpath: float, overrides: dict | None = None) -> list[HealResult]:
    return _map_tasks(run_healing, [(raw, s, onpath, overrides) for s in seeds])
