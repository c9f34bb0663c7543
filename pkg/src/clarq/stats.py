"""Per-domain distribution of the final dataset, as CSV and an SVG bar chart."""

from __future__ import annotations

import csv
import os
from collections import Counter
from dataclasses import dataclass
from typing import Iterable
from xml.sax.saxutils import escape

from clarq.corpus import ClarQRecord

OTHERS = "others"


@dataclass(frozen=True)
class DomainStats:
    counts: list[tuple[str, int]]  # descending by count, ties by domain name
    total: int

    def share(self, domain: str) -> float:
        return dict(self.counts).get(domain, 0) / self.total if self.total else 0.0

    def top_k_share(self, k: int) -> float:
        if not self.total:
            return 0.0
        return sum(n for _, n in self.counts[:k]) / self.total

    def top_k_with_others(self, k: int) -> list[tuple[str, int]]:
        head = self.counts[:k]
        rest = sum(n for _, n in self.counts[k:])
        return head + [(OTHERS, rest)]


def domain_distribution(dataset: Iterable[ClarQRecord]) -> DomainStats:
    counter = Counter(r.domain for r in dataset)
    ordered = sorted(counter.items(), key=lambda kv: (-kv[1], kv[0]))
    return DomainStats(ordered, sum(counter.values()))


def write_stats_csv(stats: DomainStats, path: str | os.PathLike, top_k: int = 20) -> None:
    """One row per domain in the top ``top_k``, then the aggregated remainder."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\r\n")
        writer.writerow(["rank", "domain", "count", "share"])
        rows = stats.top_k_with_others(top_k)
        for rank, (domain, n) in enumerate(rows, start=1):
            share = n / stats.total if stats.total else 0.0
            writer.writerow([rank if domain != OTHERS else "", domain, n, f"{share:.6f}"])


def render_svg(stats: DomainStats, top_k: int = 20, width: int = 900, height: int = 420) -> str:
    rows = stats.top_k_with_others(top_k)
    margin_left, margin_bottom, margin_top = 50, 110, 30
    plot_w = width - margin_left - 20
    plot_h = height - margin_bottom - margin_top
    peak = max((n for _, n in rows), default=0) or 1
    slot = plot_w / max(len(rows), 1)
    bar_w = slot * 0.7
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">',
        f'<text x="{width / 2:.1f}" y="18" text-anchor="middle" font-family="sans-serif" font-size="14">'
        f"Clarification questions per domain (top {top_k} + {OTHERS}, n={stats.total})</text>",
        f'<line x1="{margin_left}" y1="{margin_top + plot_h}" x2="{width - 20}" y2="{margin_top + plot_h}" stroke="black"/>',
    ]
    for i, (domain, n) in enumerate(rows):
        h = plot_h * n / peak
        x = margin_left + i * slot + (slot - bar_w) / 2
        y = margin_top + plot_h - h
        fill = "#9e9e9e" if domain == OTHERS else "#3b6ea5"
        parts.append(f'<rect x="{x:.1f}" y="{y:.1f}" width="{bar_w:.1f}" height="{h:.1f}" fill="{fill}"/>')
        parts.append(
            f'<text x="{x + bar_w / 2:.1f}" y="{y - 3:.1f}" text-anchor="middle" font-family="sans-serif" font-size="9">{n}</text>'
        )
        lx, ly = x + bar_w / 2, margin_top + plot_h + 8
        parts.append(
            f'<text x="{lx:.1f}" y="{ly:.1f}" transform="rotate(60 {lx:.1f} {ly:.1f})" '
            f'font-family="sans-serif" font-size="10">{escape(domain)}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts) + "\n"


def write_svg(stats: DomainStats, path: str | os.PathLike, top_k: int = 20) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(render_svg(stats, top_k))
