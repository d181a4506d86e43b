"""AS-level topology: scenario loading, policy routing, and hijack coverage.

The Internet model is the standard customer/provider + settlement-free peer
graph.  Routes are selected the way BGP economics dictate: customer-learned
routes beat peer-learned ones, which beat provider-learned ones, regardless
of length; ties fall back to shortest AS path and then to the lowest
next-hop AS id, so every function here is deterministic.
"""

from __future__ import annotations

import hashlib
import ipaddress
import json
import random
from dataclasses import dataclass, field
from pathlib import Path


class ScenarioError(ValueError):
    """A scenario file failed validation; message carries the JSON location."""


@dataclass(frozen=True)
class Prefix:
    base: str
    length: int
    origin_as: int

    @property
    def network(self) -> ipaddress.IPv4Network:
        return ipaddress.IPv4Network(f"{self.base}/{self.length}")

    def covers(self, ip: str) -> bool:
        return ipaddress.IPv4Address(ip) in self.network

    def __str__(self) -> str:
        return f"{self.base}/{self.length}"


@dataclass(frozen=True)
class NodePlacement:
    node_id: str
    ip: str
    home_prefix: Prefix
    home_as: int


@dataclass
class Pool:
    pool_id: str
    gateways: list[str]
    hash_share: float
    private_peers: list[str] = field(default_factory=list)


@dataclass
class AsGraph:
    """ASes plus relationship adjacency.  `providers[a]` are the ASes a pays."""

    countries: dict[int, str]
    providers: dict[int, set[int]]
    customers: dict[int, set[int]]
    peers: dict[int, set[int]]

    @property
    def as_ids(self) -> set[int]:
        return set(self.countries)

    def ases_of_country(self, country: str) -> set[int]:
        return {a for a, c in self.countries.items() if c == country}


class ForwardingTable:
    """Per-destination routing trees; `path(a, b)` is directional."""

    def __init__(self, next_hop: dict[int, dict[int, int]]):
        # next_hop[dst][src] -> neighbour src forwards to (absent = no route)
        self._next_hop = next_hop

    def path(self, src: int, dst: int) -> list[int] | None:
        if src == dst:
            return [src]
        hops = [src]
        cur = src
        table = self._next_hop.get(dst, {})
        while cur != dst:
            nxt = table.get(cur)
            if nxt is None:
                return None
            hops.append(nxt)
            cur = nxt
            if len(hops) > len(table) + 2:  # defensive: would mean a routing loop
                raise RuntimeError(f"routing loop toward AS{dst}: {hops}")
        return hops

    def has_path(self, src: int, dst: int) -> bool:
        return self.path(src, dst) is not None


def compute_forwarding(graph: AsGraph) -> ForwardingTable:
    """Build routing trees for every destination AS.

    Three sweeps per destination mirror route export rules: customer routes
    climb provider links and are exported to everyone; peer routes are taken
    from a peer's customer route; provider routes descend to customers and
    may chain further down.
    """
    import heapq

    next_hop: dict[int, dict[int, int]] = {}
    for dst in sorted(graph.as_ids):
        table: dict[int, int] = {}
        # 1. customer-learned: BFS up provider edges from dst.
        cust_dist = {dst: 0}
        frontier = [dst]
        while frontier:
            nxt_frontier = []
            for u in sorted(frontier):
                for p in graph.providers[u]:
                    if p not in cust_dist:
                        cust_dist[p] = cust_dist[u] + 1
                        table[p] = u
                        nxt_frontier.append(p)
                    elif cust_dist[p] == cust_dist[u] + 1 and u < table[p]:
                        table[p] = u
            frontier = nxt_frontier
        # 2. peer-learned, for ASes with no customer route.
        chosen_dist = dict(cust_dist)
        for u in sorted(graph.as_ids):
            if u in cust_dist:
                continue
            best = None
            for v in graph.peers[u]:
                if v in cust_dist:
                    cand = (cust_dist[v] + 1, v)
                    if best is None or cand < best:
                        best = cand
            if best is not None:
                chosen_dist[u] = best[0]
                table[u] = best[1]
        # 3. provider-learned: multi-source shortest descent along customer edges.
        heap = [(d, u, -1) for u, d in chosen_dist.items()]
        heapq.heapify(heap)
        seen = set(chosen_dist)
        while heap:
            d, u, via = heapq.heappop(heap)
            if u in seen and via != -1:
                continue
            if via != -1:
                seen.add(u)
                chosen_dist[u] = d
                table[u] = via
            for c in graph.customers[u]:
                if c not in seen:
                    heapq.heappush(heap, (d + 1, c, u))
        next_hop[dst] = table
    return ForwardingTable(next_hop)


@dataclass
class Topology:
    graph: AsGraph
    prefixes: list[Prefix]
    nodes: dict[str, NodePlacement]
    pools: dict[str, Pool]
    params: dict
    attack: dict | None
    raw: dict
    forwarding: ForwardingTable = field(init=False)

    def __post_init__(self):
        self.forwarding = compute_forwarding(self.graph)
        self._pool_of = {}
        for pool in self.pools.values():
            for g in pool.gateways:
                self._pool_of[g] = pool.pool_id

    # -- node / pool helpers -------------------------------------------------

    def pool_of(self, node_id: str) -> str | None:
        return self._pool_of.get(node_id)

    @property
    def gateway_ids(self) -> set[str]:
        return set(self._pool_of)

    @property
    def regular_ids(self) -> list[str]:
        return [n for n in self.nodes if n not in self._pool_of]

    def residual_share(self) -> float:
        declared = self.params.get("residual_share")
        if declared is not None:
            return float(declared)
        return 1.0 - sum(p.hash_share for p in self.pools.values())

    def pool_groups(self) -> list[set[str]]:
        """Pools merged across private peerings (treated as one larger pool)."""
        parent = {p: p for p in self.pools}

        def find(x):
            while parent[x] != x:
                parent[x] = parent[parent[x]]
                x = parent[x]
            return x

        for pool in self.pools.values():
            for other in pool.private_peers:
                parent[find(pool.pool_id)] = find(other)
        groups: dict[str, set[str]] = {}
        for p in self.pools:
            groups.setdefault(find(p), set()).add(p)
        return sorted(groups.values(), key=lambda g: min(g))

    def group_of(self, node_id: str) -> frozenset[str] | None:
        pool = self.pool_of(node_id)
        if pool is None:
            return None
        for group in self.pool_groups():
            if pool in group:
                return frozenset(group)
        return None

    def nodes_in_as(self, as_id: int) -> list[str]:
        return [n for n, pl in self.nodes.items() if pl.home_as == as_id]

    def nodes_in_prefix(self, prefix: Prefix) -> list[str]:
        return [n for n, pl in self.nodes.items() if pl.home_prefix == prefix]

    def config_digest(self) -> str:
        blob = json.dumps(self.raw, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


# -- connection classification ------------------------------------------------


def stealth_kind(topo: Topology, a: str, b: str) -> str | None:
    """Why the attacker can never see traffic between a and b, if so."""
    pa, pb = topo.nodes[a], topo.nodes[b]
    if pa.home_as == pb.home_as:
        return "intra-as"
    ga, gb = topo.pool_of(a), topo.pool_of(b)
    if ga is not None and ga == gb:
        return "intra-pool"
    if ga is not None and gb is not None and topo.group_of(a) == topo.group_of(b):
        return "pool-to-pool"
    return None


@dataclass
class AttackerSpec:
    """What the adversary controls: her AS, a coalition, and/or hijacks."""

    attacker_as: int | None = None
    coalition: set[int] = field(default_factory=set)
    announced: list[tuple[str, int]] = field(default_factory=list)
    seed: int = 0


class Coverage:
    """Which (victim node, source AS) traffic a set of announcements diverts.

    A strictly more-specific announcement wins longest-prefix match everywhere;
    an equal-length one is adopted by roughly half of the source ASes (seeded
    per announced prefix and source AS).  Traffic from the victim's own AS
    never leaves it and can never be diverted.
    """

    def __init__(self, topo: Topology, announced: list[tuple[str, int]], seed: int = 0):
        for base, length in announced:
            if length > 24:
                raise ScenarioError(
                    f"announcement {base}/{length}: prefixes longer than /24 are filtered Internet-wide"
                )
            ipaddress.IPv4Network(f"{base}/{length}")  # validates base/mask alignment
        self._topo = topo
        self._seed = seed
        self._best: dict[str, tuple[int, str] | None] = {}
        for node_id, pl in topo.nodes.items():
            covering = [
                (length, base)
                for base, length in announced
                if ipaddress.IPv4Address(pl.ip) in ipaddress.IPv4Network(f"{base}/{length}")
            ]
            self._best[node_id] = max(covering) if covering else None

    def fully_diverted(self, node_id: str) -> bool:
        best = self._best[node_id]
        return best is not None and best[0] > self._topo.nodes[node_id].home_prefix.length

    def diverted(self, node_id: str, src_as: int) -> bool:
        pl = self._topo.nodes[node_id]
        if src_as == pl.home_as:
            return False
        best = self._best[node_id]
        if best is None:
            return False
        length, base = best
        if length > pl.home_prefix.length:
            return True
        if length < pl.home_prefix.length:
            return False
        # equal-length race: each source AS adopts one of the two routes
        coin = random.Random(f"{self._seed}:eqlen:{base}/{length}:{src_as}")
        return coin.random() < 0.5


def hijack_coverage(
    topo: Topology, announced: list[tuple[str, int]], attacker_as: int, seed: int = 0
) -> Coverage:
    if attacker_as not in topo.graph.as_ids:
        raise ScenarioError(f"attacker AS{attacker_as} not in topology")
    return Coverage(topo, announced, seed)


def intercepting_ases(topo: Topology, src_node: str, dst_node: str) -> set[int]:
    """All ASes that naturally see src→dst traffic (endpoints included)."""
    a = topo.nodes[src_node].home_as
    b = topo.nodes[dst_node].home_as
    path = topo.forwarding.path(a, b)
    if path is None:
        raise ScenarioError(f"no route from AS{a} to AS{b}; setup should have rejected this pair")
    return set(path)


@dataclass
class ConnectionClass:
    kind: str  # "vulnerable" | "intra-as" | "intra-pool" | "pool-to-pool"
    a_to_b: bool = False  # attacker sees the a→b direction
    b_to_a: bool = False

    @property
    def is_stealth(self) -> bool:
        return self.kind != "vulnerable"


def classify_connection(
    topo: Topology, a: str, b: str, attacker: AttackerSpec | None = None
) -> ConnectionClass:
    if a == b:
        raise ScenarioError("a connection needs two distinct endpoints")
    kind = stealth_kind(topo, a, b)
    if kind is not None:
        return ConnectionClass(kind)
    cls = ConnectionClass("vulnerable")
    if attacker is None:
        return cls
    cov = Coverage(topo, attacker.announced, attacker.seed) if attacker.announced else None
    pa, pb = topo.nodes[a], topo.nodes[b]
    fwd = topo.forwarding

    def seen(src_pl, dst_pl, dst_id):
        path = fwd.path(src_pl.home_as, dst_pl.home_as)
        if path and attacker.coalition.intersection(path):
            return True
        return cov.diverted(dst_id, src_pl.home_as) if cov else False

    cls.a_to_b = seen(pa, pb, b)
    cls.b_to_a = seen(pb, pa, a)
    return cls


# -- scenario loading -----------------------------------------------------------


def _require(cond: bool, where: str, message: str) -> None:
    if not cond:
        raise ScenarioError(f"{where}: {message}")


KNOWN_PARAMS = {
    "block_interval_mean",
    "blocks",
    "per_hop_delay",
    "base_delay",
    "tx_getdata_rate",
    "drain_time",
    "threshold",
    "restore_margin",
    "convergence_delay",
    "residual_share",
    "churn",
    "outgoing_target",
    "max_connections",
    "connections",
}


def load_topology(path: str | Path | dict) -> Topology:
    """Parse and validate a scenario file (UTF-8 JSON).

    Every validation failure names the offending JSON location, e.g.
    ``pools[1].hash_share: hash shares sum to 0.9``.
    """
    if isinstance(path, dict):
        raw = path
    else:
        try:
            raw = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    _require(isinstance(raw, dict), "$", "scenario must be a JSON object")
    for key in raw:
        _require(
            key in {"ases", "links", "prefixes", "nodes", "pools", "params", "attack"},
            key,
            "unknown top-level key",
        )

    countries: dict[int, str] = {}
    for i, entry in enumerate(raw.get("ases", [])):
        where = f"ases[{i}]"
        _require(isinstance(entry.get("id"), int), where + ".id", "AS id must be an integer")
        _require(entry["id"] not in countries, where + ".id", f"duplicate AS id {entry['id']}")
        countries[entry["id"]] = str(entry.get("country", ""))
    _require(len(countries) > 0, "ases", "at least one AS required")

    providers = {a: set() for a in countries}
    customers = {a: set() for a in countries}
    peers = {a: set() for a in countries}
    seen_pairs = set()
    for i, entry in enumerate(raw.get("links", [])):
        where = f"links[{i}]"
        a, b, rel = entry.get("a"), entry.get("b"), entry.get("rel")
        _require(a in countries, where + ".a", f"unknown AS {a}")
        _require(b in countries, where + ".b", f"unknown AS {b}")
        _require(a != b, where, "self-links are not allowed")
        _require(rel in ("c2p", "p2p"), where + ".rel", f"rel must be c2p or p2p, got {rel!r}")
        pair = frozenset((a, b))
        _require(pair not in seen_pairs, where, f"duplicate link between AS{a} and AS{b}")
        seen_pairs.add(pair)
        if rel == "c2p":
            providers[a].add(b)
            customers[b].add(a)
        else:
            peers[a].add(b)
            peers[b].add(a)
    _check_provider_acyclic(providers)

    prefixes: list[Prefix] = []
    nets: list[tuple[ipaddress.IPv4Network, str]] = []
    for i, entry in enumerate(raw.get("prefixes", [])):
        where = f"prefixes[{i}]"
        base, length, origin = entry.get("base"), entry.get("len"), entry.get("origin_as")
        _require(isinstance(length, int), where + ".len", "prefix length must be an integer")
        _require(length <= 24, where, f"prefix {base}/{length} longer than /24 (filtered Internet-wide)")
        try:
            net = ipaddress.IPv4Network(f"{base}/{length}")
        except (ValueError, TypeError) as exc:
            raise ScenarioError(f"{where}: invalid prefix {base}/{length} ({exc})") from None
        _require(origin in countries, where + ".origin_as", f"unknown AS {origin}")
        for other, ow in nets:
            _require(not net.overlaps(other), where, f"prefix {net} overlaps {other} ({ow})")
        nets.append((net, where))
        prefixes.append(Prefix(str(net.network_address), length, origin))

    by_str = {str(p): p for p in prefixes}
    nodes: dict[str, NodePlacement] = {}
    ips_seen = set()
    for i, entry in enumerate(raw.get("nodes", [])):
        where = f"nodes[{i}]"
        nid = entry.get("id")
        _require(isinstance(nid, str) and nid, where + ".id", "node id must be a non-empty string")
        _require(nid not in nodes, where + ".id", f"duplicate node id {nid!r}")
        prefix = by_str.get(entry.get("prefix", ""))
        _require(prefix is not None, where + ".prefix", f"unknown prefix {entry.get('prefix')!r}")
        ip = entry.get("ip")
        try:
            ipaddress.IPv4Address(ip)
        except (ValueError, TypeError):
            raise ScenarioError(f"{where}.ip: invalid IPv4 address {ip!r}") from None
        _require(prefix.covers(ip), where + ".ip", f"{ip} is outside {prefix}")
        _require(ip not in ips_seen, where + ".ip", f"duplicate IP {ip}")
        ips_seen.add(ip)
        home_as = entry.get("as", prefix.origin_as)
        _require(
            home_as == prefix.origin_as,
            where + ".as",
            f"node sits in {prefix} originated by AS{prefix.origin_as}, not AS{home_as}",
        )
        nodes[nid] = NodePlacement(nid, ip, prefix, home_as)

    pools: dict[str, Pool] = {}
    share_sum = 0.0
    for i, entry in enumerate(raw.get("pools", [])):
        where = f"pools[{i}]"
        pid = entry.get("id")
        _require(isinstance(pid, str) and pid, where + ".id", "pool id must be a non-empty string")
        _require(pid not in pools, where + ".id", f"duplicate pool id {pid!r}")
        gateways = entry.get("gateways", [])
        _require(len(gateways) > 0, where + ".gateways", "a pool needs at least one gateway")
        for g in gateways:
            _require(g in nodes, where + ".gateways", f"unknown node {g!r}")
        share = entry.get("hash_share")
        _require(
            isinstance(share, (int, float)) and 0 <= share <= 1,
            where + ".hash_share",
            f"hash_share must be in [0,1], got {share!r}",
        )
        share_sum += share
        pools[pid] = Pool(pid, list(gateways), float(share), list(entry.get("private_peers", [])))
    taken: dict[str, str] = {}
    for pool in pools.values():
        for g in pool.gateways:
            _require(
                g not in taken,
                f"pools[{list(pools).index(pool.pool_id)}].gateways",
                f"node {g!r} is a gateway of both {taken.get(g)!r} and {pool.pool_id!r}",
            )
            taken[g] = pool.pool_id
        for other in pool.private_peers:
            _require(other in pools, "pools", f"private peer {other!r} of {pool.pool_id!r} unknown")
            _require(other != pool.pool_id, "pools", f"{pool.pool_id!r} privately peers with itself")

    params = dict(raw.get("params", {}))
    for key in params:
        _require(key in KNOWN_PARAMS, f"params.{key}", "unknown parameter")
    residual = params.get("residual_share")
    n_regular = len(nodes) - len(taken)
    if residual is not None:
        total = share_sum + float(residual)
        _require(abs(total - 1.0) <= 1e-9, "pools", f"hash shares sum to {total:g}")
        _require(residual == 0 or n_regular > 0, "params.residual_share",
                 "residual share assigned but there are no regular nodes")
    else:
        _require(share_sum <= 1 + 1e-9, "pools", f"hash shares sum to {share_sum:g}")
        _require(
            share_sum >= 1 - 1e-9 or n_regular > 0,
            "pools",
            f"hash shares sum to {share_sum:g} and no regular nodes can absorb the rest",
        )

    attack = raw.get("attack")
    if attack is not None:
        _require(attack.get("kind") in ("partition", "delay"), "attack.kind",
                 f"kind must be partition or delay, got {attack.get('kind')!r}")
        for t in attack.get("target", []):
            _require(t in nodes, "attack.target", f"unknown node {t!r}")
        coalition = attack.get("coalition", [])
        if isinstance(coalition, list):
            for c in coalition:
                _require(c in countries, "attack.coalition", f"unknown AS {c}")
        else:
            _require(
                any(v == coalition for v in countries.values()),
                "attack.coalition",
                f"no AS belongs to country {coalition!r}",
            )

    topo = Topology(
        graph=AsGraph(countries, providers, customers, peers),
        prefixes=prefixes,
        nodes=nodes,
        pools=pools,
        params=params,
        attack=attack,
        raw=raw,
    )
    return topo


def _check_provider_acyclic(providers: dict[int, set[int]]) -> None:
    state: dict[int, int] = {}

    def visit(u: int, trail: list[int]):
        state[u] = 1
        for p in providers[u]:
            if state.get(p) == 1:
                cycle = trail[trail.index(p):] + [p] if p in trail else [u, p]
                raise ScenarioError(f"links: customer-provider cycle {cycle}")
            if state.get(p) != 2:
                visit(p, trail + [p])
        state[u] = 2

    for a in providers:
        if state.get(a) != 2:
            visit(a, [a])


def resolve_coalition(topo: Topology, coalition) -> set[int]:
    """Accept either a list of AS ids or a country code."""
    if isinstance(coalition, (list, set, tuple)):
        return set(coalition)
    ases = topo.graph.ases_of_country(str(coalition))
    if not ases:
        raise ScenarioError(f"attack.coalition: no AS belongs to country {coalition!r}")
    return ases
