"""Latency bookkeeping, distribution estimators and resource accounting.

A packet's latency runs from its generation to the instant every
intended recipient holds it.  A packet that did not make it before its
successor was generated is replaced; the open entry keeps accumulating
whole generation periods until some later packet from the same source
reaches the remaining recipients, so a k-times-replaced entry lands at
its within-period delivery time plus k periods.

Three views of the resulting latency matrix are computed: the flat
distribution over all entries, the distribution of per-user means, and
one distribution per user.
"""
from __future__ import annotations

import csv
import json
import os
from dataclasses import dataclass

import numpy as np


class MetricsError(ValueError):
    pass


@dataclass(frozen=True)
class LatencyEntry:
    source: int
    sequence: int
    generation_tti: int
    delivery_tti: int
    latency_ttis: int
    replacements: int           # k: generation periods elapsed before delivery


def close_packet(source: int, sequence: int, generation_tti: int,
                 delivery_tti: int, k_losses: int) -> LatencyEntry:
    """Finalize one latency entry; latency is delivery minus generation."""
    if delivery_tti < generation_tti:
        raise MetricsError(
            f"delivery at {delivery_tti} precedes generation at {generation_tti}")
    return LatencyEntry(
        source=source,
        sequence=sequence,
        generation_tti=generation_tti,
        delivery_tti=delivery_tti,
        latency_ttis=delivery_tti - generation_tti,
        replacements=k_losses,
    )


@dataclass(frozen=True)
class EcdfCurve:
    """Right-continuous empirical distribution: F(x) = #{samples <= x} / N."""
    samples: np.ndarray         # sorted, duplicates kept
    values: np.ndarray          # sorted unique sample values
    probs: np.ndarray           # cumulative probability at each value

    def evaluate(self, x) -> np.ndarray:
        idx = np.searchsorted(self.values, np.asarray(x, dtype=float),
                              side="right")
        padded = np.concatenate([[0.0], self.probs])
        return padded[idx]

    def mean(self) -> float:
        return float(self.samples.mean())


def ecdf(samples) -> EcdfCurve:
    s = np.sort(np.asarray(samples, dtype=float).ravel())
    if s.size == 0:
        raise MetricsError("ECDF of an empty sample set")
    values, counts = np.unique(s, return_counts=True)
    probs = np.cumsum(counts) / s.size
    return EcdfCurve(samples=s, values=values, probs=probs)


def cdf_combined(latency_matrix: np.ndarray) -> EcdfCurve:
    """Distribution over every (packet, user) latency entry."""
    return ecdf(np.asarray(latency_matrix, dtype=float).ravel())


def cdf_mean(latency_matrix: np.ndarray) -> EcdfCurve:
    """Distribution of each user's mean latency (column means)."""
    m = np.asarray(latency_matrix, dtype=float)
    if m.size == 0:
        raise MetricsError("empty latency matrix")
    return ecdf(m.mean(axis=0))


def cdf_individual(latency_matrix: np.ndarray) -> list[EcdfCurve]:
    """One latency distribution per user (column)."""
    m = np.asarray(latency_matrix, dtype=float)
    if m.size == 0:
        raise MetricsError("empty latency matrix")
    return [ecdf(m[:, i]) for i in range(m.shape[1])]


def utilization(packet_bits: float, n_mbms_users: int, n_rb: float,
                n_re_per_rb: float, efficiency: float) -> float:
    """Share of the RB grid (percent) that carrying one packet from every
    source per accounting window consumes; above 100 means infeasible."""
    denominator = n_rb * n_re_per_rb * efficiency
    if denominator <= 0:
        raise MetricsError("utilization denominator must be positive")
    return 100.0 * packet_bits * n_mbms_users / denominator


def predicted_throughput_ratio(util_a: float, rb_a: float,
                               util_b: float, rb_b: float) -> float:
    """Expected ordinary-user throughput ratio between two bandwidth
    configurations, from their RB counts and multicast utilizations."""
    for u in (util_a, util_b):
        if not 0.0 <= u < 1.0:
            raise MetricsError(f"utilization {u} outside [0, 1)")
    return ((1.0 - util_b) * rb_b) / ((1.0 - util_a) * rb_a)


class LatencyRecorder:
    """Tracks open per-packet entries until every recipient is served.

    Each packet carries its own recipient set (membership can change between
    generations).  A recipient is 'satisfied through' sequence s once it
    fully receives any packet with sequence >= s from that source, so one
    successful delivery can close several superseded entries at once.
    """

    def __init__(self, sources, period: int):
        self.sources = list(sources)
        self.period = period
        self._open: dict[int, list[list]] = {s: [] for s in self.sources}
        self.entries: list[LatencyEntry] = []

    def on_generation(self, source: int, sequence: int, tti: int,
                      receivers) -> None:
        self._open[source].append([sequence, tti, set(receivers)])

    def on_delivery(self, source: int, sequence: int, delivery_tti: int,
                    satisfied_receivers) -> None:
        """Recipients in `satisfied_receivers` fully received packet
        `sequence`; close every open entry they were the last to block."""
        satisfied = set(satisfied_receivers)
        remaining = []
        for entry in self._open[source]:
            seq, gen, pending = entry
            if seq <= sequence:
                pending -= satisfied
            if seq <= sequence and not pending:
                self.entries.append(close_packet(
                    source, seq, gen, delivery_tti, k_losses=sequence - seq))
            else:
                remaining.append(entry)
        self._open[source] = remaining

    def on_receiver_exit(self, receiver: int, tti: int) -> None:
        """`receiver` stopped being an intended recipient (left the area);
        open entries no longer wait for it."""
        for source in self.sources:
            remaining = []
            for entry in self._open[source]:
                seq, gen, pending = entry
                was_blocking = receiver in pending
                pending.discard(receiver)
                if was_blocking and not pending:
                    self.entries.append(close_packet(
                        source, seq, gen, tti,
                        k_losses=max((tti - gen) // self.period, 0)))
                else:
                    remaining.append(entry)
            self._open[source] = remaining

    @property
    def n_open(self) -> int:
        return sum(len(v) for v in self._open.values())

    def latency_matrix(self) -> np.ndarray:
        """Rectangular (n_packets, n_sources) matrix of closed-entry latencies,
        truncated to the packet count every source completed."""
        per_source = latencies_by_source(self.entries, self.sources)
        if not per_source:
            return np.empty((0, 0))
        n_min = min(len(v) for v in per_source.values())
        if n_min == 0:
            return np.empty((0, len(self.sources)))
        return np.array([per_source[s][:n_min] for s in self.sources],
                        dtype=float).T


# ---------------------------------------------------------------------------
# File emission


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def format_value(x) -> str:
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_curve_csv(path, curve: EcdfCurve, value_name: str) -> None:
    rows = [(format_value(v), format_value(p))
            for v, p in zip(curve.values, curve.probs)]
    write_csv(path, (value_name, "cum_prob"), rows)


SUMMARY_COLUMNS = ("mode", "bandwidth", "cqi_policy", "mean_latency_tti",
                   "mean_throughput_mbps", "utilization_pct",
                   "measured_utilization_pct", "congested")


def write_summary_csv(path, rows: list[dict]) -> None:
    out = [[format_value(r[c]) for c in SUMMARY_COLUMNS] for r in rows]
    write_csv(path, SUMMARY_COLUMNS, out)


def latencies_by_source(entries, sources) -> dict[int, list[int]]:
    out = {s: [] for s in sources}
    for e in sorted(entries, key=lambda e: (e.source, e.sequence)):
        out[e.source].append(e.latency_ttis)
    return out


def write_run_outputs(out_dir, record) -> None:
    """Emit the CSV artifact set and manifest for one finished run.

    Curves are built from whatever entries closed; sources may complete
    unequal packet counts under congestion, so the flat entry list rather
    than the rectangular matrix is the emission basis.
    """
    os.makedirs(out_dir, exist_ok=True)
    per_source = latencies_by_source(record.entries, record.sources)
    all_lat = [v for vals in per_source.values() for v in vals]
    if all_lat:
        write_curve_csv(os.path.join(out_dir, "latency_combined.csv"),
                        ecdf(all_lat), "latency_tti")
        means = [float(np.mean(v)) for v in per_source.values() if v]
        write_curve_csv(os.path.join(out_dir, "latency_mean.csv"),
                        ecdf(means), "mean_latency_tti")
    else:
        write_csv(os.path.join(out_dir, "latency_combined.csv"),
                  ("latency_tti", "cum_prob"), [])
        write_csv(os.path.join(out_dir, "latency_mean.csv"),
                  ("mean_latency_tti", "cum_prob"), [])
    for source in record.sources:
        path = os.path.join(out_dir, f"latency_user_{source}.csv")
        if per_source[source]:
            write_curve_csv(path, ecdf(per_source[source]), "latency_tti")
        else:
            write_csv(path, ("latency_tti", "cum_prob"), [])
    tp = record.ordinary_throughput_mbps
    rows = sorted(((u, tp[u]) for u in tp), key=lambda kv: (kv[1], kv[0]))
    n = max(len(rows), 1)
    write_csv(os.path.join(out_dir, "throughput_ordinary.csv"),
              ("user_id", "mean_throughput_mbps", "cum_prob"),
              [(format_value(u), format_value(v), format_value((i + 1) / n))
               for i, (u, v) in enumerate(rows)])
    write_summary_csv(os.path.join(out_dir, "summary.csv"), [record.summary()])
    manifest = {
        "config": record.config_dict,
        "seed": record.seed,
        "config_hash": record.config_hash,
        "n_latency_entries": len(record.entries),
        "n_open_entries": record.n_open_entries,
    }
    with open(os.path.join(out_dir, "run_manifest.json"), "w",
              encoding="utf-8") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True)
        fh.write("\n")
