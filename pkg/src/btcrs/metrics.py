"""Run-level measurements and their serialization.

Everything here is pure post-processing over a finished run: the simulator
never consults these numbers while events are in flight.  The observer for
chain-level quantities is the lowest node id, an arbitrary but stable choice.
"""

from __future__ import annotations

import csv
import io
import json
import statistics
from dataclasses import dataclass, field

from .protocol import orphan_rate


def uninformed_fraction(victim_series, reference_series, until: float) -> float:
    """Fraction of [0, until] where the victim's tip height trails the reference.

    Both inputs are tip-height step series [(time, height), ...] in event
    order.  Strict comparison: matching heights count as informed.
    """
    if until <= 0:
        return 0.0
    points = sorted(
        {t for t, _ in victim_series if t <= until}
        | {t for t, _ in reference_series if t <= until}
        | {until}
    )

    def stepper(series):
        series = [p for p in series if p[0] <= until]

        def at(t, _pos=[0], _val=[0]):
            while _pos[0] < len(series) and series[_pos[0]][0] <= t:
                _val[0] = series[_pos[0]][1]
                _pos[0] += 1
            return _val[0]

        return at

    v_at, r_at = stepper(victim_series), stepper(reference_series)
    lag = 0.0
    for a, b in zip(points, points[1:]):
        if v_at(a) < r_at(a):
            lag += b - a
    return lag / until


def p50_propagation(run) -> tuple[float | None, bool]:
    """Median over blocks of the time until half the nodes hold the block.

    A block that never reaches half of all nodes is measured over the nodes
    it did reach, and the result is flagged partial — the healthy-network
    reading only makes sense when the flag stays False.
    """
    n_nodes = len(run.nodes)
    half = -(-n_nodes // 2)  # ceil
    delays, partial = [], False
    for mb in run.mined:
        arrivals = sorted(
            node.chain.arrival[mb.block.hash] - mb.time
            for node in run.nodes.values()
            if mb.block.hash in node.chain.arrival
        )
        if not arrivals:
            partial = True
            continue
        if len(arrivals) >= half:
            delays.append(arrivals[half - 1])
        else:
            partial = True
            delays.append(arrivals[-(-len(arrivals) // 2) - 1])
    if not delays:
        return None, True
    return statistics.median(delays), partial


@dataclass
class MetricsReport:
    """The evaluation quantities of one seeded run."""

    seed: int
    config: str
    orphan_rate: float
    prop_delay_p50: float | None
    prop_delay_partial: bool
    uninformed: dict[str, float] = field(default_factory=dict)
    cross_partition_series: list[tuple[float, float]] = field(default_factory=list)
    blocks_mined: dict[str, int] = field(default_factory=dict)
    blocks_in_chain: dict[str, int] = field(default_factory=dict)
    partition: dict | None = None

    def __post_init__(self):
        for m, k in self.blocks_in_chain.items():
            assert k <= self.blocks_mined.get(m, 0), f"chain exceeds mined for {m}"

    def to_dict(self) -> dict:
        d = {
            "seed": self.seed,
            "config": self.config,
            "orphan_rate": self.orphan_rate,
            "prop_delay_p50": self.prop_delay_p50,
            "prop_delay_partial": self.prop_delay_partial,
            "uninformed": dict(sorted(self.uninformed.items())),
            "cross_partition_series": [[t, f] for t, f in self.cross_partition_series],
            "blocks_mined": dict(sorted(self.blocks_mined.items())),
            "blocks_in_chain": dict(sorted(self.blocks_in_chain.items())),
        }
        if self.partition is not None:
            d["partition"] = self.partition
        return d

    def rows(self) -> list[tuple[str, int, str, float]]:
        """Flatten to (config, seed, metric, value) rows for CSV emission."""
        rows = [(self.config, self.seed, "orphan_rate", self.orphan_rate)]
        if self.prop_delay_p50 is not None:
            rows.append((self.config, self.seed, "prop_delay_p50", self.prop_delay_p50))
        for node, frac in sorted(self.uninformed.items()):
            rows.append((self.config, self.seed, f"uninformed.{node}", frac))
        for miner in sorted(self.blocks_mined):
            rows.append((self.config, self.seed, f"blocks_mined.{miner}", self.blocks_mined[miner]))
            rows.append(
                (self.config, self.seed, f"blocks_in_chain.{miner}", self.blocks_in_chain.get(miner, 0))
            )
        return rows


def summarize(run, uninformed_pairs=None) -> MetricsReport:
    """Distill one run into a MetricsReport.

    `uninformed_pairs` maps victim node id -> reference node id; when omitted
    and the run carried a single-victim delay attack, the victim is compared
    against a node literally named "ref" if the scenario ships one.
    """
    observer = run.nodes[min(run.nodes)]
    mined_total = len(run.mined)
    blocks_mined: dict[str, int] = {}
    for mb in run.mined:
        blocks_mined[mb.miner] = blocks_mined.get(mb.miner, 0) + 1
    on_chain = set(observer.chain.main_chain())
    blocks_in_chain: dict[str, int] = {}
    for mb in run.mined:
        if mb.block.hash in on_chain:
            blocks_in_chain[mb.miner] = blocks_in_chain.get(mb.miner, 0) + 1

    if uninformed_pairs is None:
        uninformed_pairs = {}
        da = run.delay_attacker
        if da is not None and da.mode == "node" and da.victim and "ref" in run.nodes:
            uninformed_pairs = {da.victim: "ref"}
    uninformed = {
        victim: uninformed_fraction(
            run.tip_series[victim], run.tip_series[reference], run.last_mine_time
        )
        for victim, reference in uninformed_pairs.items()
    }

    partition = None
    if run.partition_attacker is not None:
        rep = run.partition_attacker.report()
        external_in_isolated = sum(
            1
            for nid in rep.isolated
            for h in run.nodes[nid].chain.blocks
            if run.partition_attacker.is_external(h)
        )
        partition = dict(rep.to_dict(), external_blocks_in_isolated=external_in_isolated)

    p50, flagged = p50_propagation(run)
    report = MetricsReport(
        seed=run.seed,
        config=run.config_digest,
        orphan_rate=orphan_rate(observer.chain, mined_total) if mined_total else 0.0,
        prop_delay_p50=p50,
        prop_delay_partial=flagged,
        uninformed=uninformed,
        blocks_mined=blocks_mined,
        blocks_in_chain=blocks_in_chain,
        partition=partition,
    )
    return report


def emit(reports, fmt: str = "json") -> bytes:
    """Serialize one or many reports deterministically.

    JSON carries the full structure with sorted keys; CSV flattens to the
    fixed column order config, seed, metric, value.
    """
    if isinstance(reports, MetricsReport):
        reports = [reports]
    reports = sorted(reports, key=lambda r: (r.config, r.seed))
    if fmt == "json":
        body = {"runs": [r.to_dict() for r in reports]}
        scalar = [r.orphan_rate for r in reports]
        if scalar:
            body["aggregates"] = {"orphan_rate_mean": statistics.mean(scalar)}
            p50s = [r.prop_delay_p50 for r in reports if r.prop_delay_p50 is not None]
            if p50s:
                body["aggregates"]["prop_delay_p50_mean"] = statistics.mean(p50s)
        return (json.dumps(body, sort_keys=True, indent=2) + "\n").encode()
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["config", "seed", "metric", "value"])
        for r in reports:
            for config, seed, metric, value in r.rows():
                writer.writerow([config, seed, metric, repr(value) if isinstance(value, float) else value])
        return buf.getvalue().encode()
    raise ValueError(f"unknown format: {fmt}")
