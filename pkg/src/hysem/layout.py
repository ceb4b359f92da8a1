"""Geometric post-processing of layout-detector clusters.

All coordinates are page pixels with a top-left origin (``t < b`` means ``t``
is above ``b``). Every operation returns new objects; inputs are not mutated.
"""

from __future__ import annotations

import dataclasses
import logging
import re
import statistics
from dataclasses import dataclass, field
from typing import Any, Hashable, Iterable, Mapping, Sequence

logger = logging.getLogger(__name__)

FORMULA = "FORMULA"
TABLE = "TABLE"
TEXT = "TEXT"
DOCUMENT_INDEX = "DOCUMENT_INDEX"
KEY_VALUE_REGION = "KEY_VALUE_REGION"
FORM = "FORM"

LARGE_WRAPPER_LABELS = frozenset({TABLE, DOCUMENT_INDEX, KEY_VALUE_REGION, FORM})

# Required horizontal overlap when the geometry alone is only loosely aligned.
LOOSE_ALIGNMENT_OVERLAP = 0.85

DEFAULT_FORMULA_NUMBER_PATTERN = r"\(([A-Za-z]?\d+[a-z]?)\)"


@dataclass(frozen=True)
class BoundingBox:
    l: float
    t: float
    r: float
    b: float

    def __post_init__(self) -> None:
        if self.l > self.r or self.t > self.b:
            raise ValueError(f"invalid bounding box {self.as_tuple()}")

    @property
    def width(self) -> float:
        return self.r - self.l

    @property
    def height(self) -> float:
        return self.b - self.t

    def area(self) -> float:
        return self.width * self.height

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.l, self.t, self.r, self.b)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> BoundingBox:
        return cls(float(d["l"]), float(d["t"]), float(d["r"]), float(d["b"]))

    def to_dict(self) -> dict[str, float]:
        return {"l": self.l, "t": self.t, "r": self.r, "b": self.b}


@dataclass(frozen=True)
class TextCell:
    bbox: BoundingBox
    text: str = ""

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> TextCell:
        return cls(BoundingBox.from_dict(d["bbox"]), d.get("text", ""))

    def to_dict(self) -> dict[str, Any]:
        return {"bbox": self.bbox.to_dict(), "text": self.text}


@dataclass(frozen=True)
class Cluster:
    id: int
    label: str
    bbox: BoundingBox
    cells: tuple[TextCell, ...] = ()
    confidence: float = 1.0
    children: tuple[Cluster, ...] = ()

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Cluster:
        return cls(
            id=int(d["id"]),
            label=str(d["label"]),
            bbox=BoundingBox.from_dict(d["bbox"]),
            cells=tuple(TextCell.from_dict(c) for c in d.get("cells", ())),
            confidence=float(d.get("confidence", 1.0)),
            children=tuple(Cluster.from_dict(c) for c in d.get("children", ())),
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "id": self.id,
            "label": self.label,
            "confidence": self.confidence,
            "bbox": self.bbox.to_dict(),
            "cells": [c.to_dict() for c in self.cells],
        }
        if self.children:
            out["children"] = [c.to_dict() for c in self.children]
        return out

    @property
    def text(self) -> str:
        return " ".join(c.text for c in self.cells)


@dataclass(frozen=True)
class PageGeometry:
    width: float
    height: float
    image_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.width <= 0 or self.height <= 0:
            raise ValueError("page width and height must be positive")
        if self.image_scale <= 0:
            raise ValueError("image_scale must be positive")

    @property
    def area(self) -> float:
        return self.width * self.height


@dataclass(frozen=True)
class LayoutConfig:
    vertical_threshold_factor: float = 1.8
    horizontal_overlap_threshold: float = 0.7
    padding: float = 50.0
    alignment_threshold: float = 20.0
    max_alignment_ratio: float = 0.2
    unnumbered_max_gap: float = 3.0
    mixed_max_gap: float = 12.8
    unnumbered_min_overlap: float = 0.9
    mixed_min_overlap: float = 0.95
    min_area_ratio: float = 0.70
    min_cells_threshold: int = 50
    min_density_threshold: float = 0.001
    left_margin_threshold: float = 0.08
    min_height_threshold: float = 5.0
    mask_top_expansion: float = 0.045
    mask_bottom_expansion: float = 0.045
    formula_number_pattern: str = DEFAULT_FORMULA_NUMBER_PATTERN

    def __post_init__(self) -> None:
        for f in dataclasses.fields(self):
            value = getattr(self, f.name)
            if isinstance(value, (int, float)) and value <= 0:
                raise ValueError(f"{f.name} must be positive, got {value}")
        for name in (
            "horizontal_overlap_threshold",
            "max_alignment_ratio",
            "unnumbered_min_overlap",
            "mixed_min_overlap",
            "min_area_ratio",
            "left_margin_threshold",
            "mask_top_expansion",
            "mask_bottom_expansion",
        ):
            if not 0 < getattr(self, name) < 1:
                raise ValueError(f"{name} must lie in (0, 1)")


class UnionFind:
    """Disjoint sets over arbitrary hashable ids, remembering insertion order."""

    def __init__(self, ids: Iterable[Hashable] = ()) -> None:
        self.parent: dict[Hashable, Hashable] = {}
        for i in ids:
            self.add(i)

    def add(self, x: Hashable) -> None:
        self.parent.setdefault(x, x)

    def find(self, x: Hashable) -> Hashable:
        root = x
        while self.parent[root] != root:
            root = self.parent[root]
        while self.parent[x] != root:
            self.parent[x], x = root, self.parent[x]
        return root

    def union(self, x: Hashable, y: Hashable) -> None:
        rx, ry = self.find(x), self.find(y)
        if rx != ry:
            self.parent[ry] = rx

    def get_groups(self) -> list[list[Hashable]]:
        """Groups ordered by their first-inserted member; members in insertion order."""
        groups: dict[Hashable, list[Hashable]] = {}
        for x in self.parent:
            groups.setdefault(self.find(x), []).append(x)
        return list(groups.values())


def filter_margin_line_numbers(
    cells: Sequence[TextCell], page: PageGeometry, cfg: LayoutConfig = LayoutConfig()
) -> list[TextCell]:
    """Drop narrow, reasonably tall cells sitting in the left page margin."""
    max_width = page.width * cfg.left_margin_threshold

    def is_line_number(cell: TextCell) -> bool:
        box = cell.bbox
        return (
            box.l < max_width
            and box.width < max_width
            and box.height >= cfg.min_height_threshold
        )

    return [c for c in cells if not is_line_number(c)]


def extract_formula_number(
    cluster: Cluster, pattern: str = DEFAULT_FORMULA_NUMBER_PATTERN
) -> str | None:
    """Rightmost parenthesized equation label in the cluster text, e.g. ``"2a"``."""
    matches = re.findall(pattern, cluster.text)
    return matches[-1] if matches else None


def _alignment_factor(a: BoundingBox, b: BoundingBox) -> float:
    avg_width = max((a.width + b.width) / 2.0, 1e-6)
    return max(abs(a.l - b.l) / avg_width, abs(a.r - b.r) / avg_width)


def _should_merge(
    c1: Cluster,
    c2: Cluster,
    num1: str | None,
    num2: str | None,
    vertical_threshold: float,
    cfg: LayoutConfig,
) -> bool:
    gap = c2.bbox.t - c1.bbox.b
    if gap < 0 or gap > vertical_threshold:
        return False

    e1_l, e1_r = c1.bbox.l - cfg.padding, c1.bbox.r + cfg.padding
    e2_l, e2_r = c2.bbox.l - cfg.padding, c2.bbox.r + cfg.padding
    overlap = min(e1_r, e2_r) - max(e1_l, e2_l)
    min_width = min(e1_r - e1_l, e2_r - e2_l)
    overlap_ratio = overlap / min_width if min_width > 0 else 0.0

    left_diff = abs(c1.bbox.l - c2.bbox.l)
    right_diff = abs(c1.bbox.r - c2.bbox.r)

    if num1 and num2 and num1 != num2:
        return False

    if gap <= 0.5 * vertical_threshold:
        if left_diff <= cfg.alignment_threshold and right_diff <= cfg.alignment_threshold:
            required = cfg.horizontal_overlap_threshold
        else:
            required = LOOSE_ALIGNMENT_OVERLAP
    elif _alignment_factor(c1.bbox, c2.bbox) <= cfg.max_alignment_ratio:
        required = LOOSE_ALIGNMENT_OVERLAP
    else:
        return False

    if num1 is None and num2 is None:
        if gap > cfg.unnumbered_max_gap:
            return False
        required = max(required, cfg.unnumbered_min_overlap)
    elif (num1 is None) != (num2 is None):
        if gap > cfg.mixed_max_gap:
            return False
        required = max(required, cfg.mixed_min_overlap)

    return overlap_ratio >= required


def _dedup_and_sort_cells(cells: Iterable[TextCell]) -> tuple[TextCell, ...]:
    unique = list(dict.fromkeys(cells))
    unique.sort(key=lambda c: (c.bbox.t, c.bbox.l))
    return tuple(unique)


def _merge_pass(formulas: list[Cluster], cfg: LayoutConfig) -> list[Cluster]:
    formulas = sorted(formulas, key=lambda c: c.bbox.t)
    vertical_threshold = (
        statistics.median(c.bbox.height for c in formulas) * cfg.vertical_threshold_factor
    )
    numbers = [extract_formula_number(c, cfg.formula_number_pattern) for c in formulas]

    uf = UnionFind(range(len(formulas)))
    n = len(formulas)
    # Equation number carried by each group, keyed by root. An unnumbered
    # fragment must not bridge two differently numbered equations.
    group_number = dict(enumerate(numbers))
    for i in range(n):
        for j in range(i + 1, n):
            if not _should_merge(
                formulas[i], formulas[j], numbers[i], numbers[j], vertical_threshold, cfg
            ):
                continue
            ri, rj = uf.find(i), uf.find(j)
            ni, nj = group_number[ri], group_number[rj]
            if ri == rj or (ni and nj and ni != nj):
                continue
            uf.union(i, j)
            group_number[uf.find(i)] = ni or nj

    merged = []
    for group in uf.get_groups():
        members = [formulas[i] for i in group]
        envelope = BoundingBox(
            l=min(c.bbox.l for c in members),
            t=min(c.bbox.t for c in members),
            r=max(c.bbox.r for c in members),
            b=max(c.bbox.b for c in members),
        )
        cells = _dedup_and_sort_cells(cell for c in members for cell in c.cells)
        merged.append(dataclasses.replace(members[0], bbox=envelope, cells=cells))
    return merged


def merge_adjacent_formulas(
    clusters: Sequence[Cluster], cfg: LayoutConfig = LayoutConfig()
) -> list[Cluster]:
    """Merge vertically adjacent FORMULA fragments into whole equations.

    Non-formula clusters are returned first and unchanged, followed by the
    formula clusters sorted by top edge. Each merge pass unions qualifying
    pairs and collapses every group into its first (topmost) member with the
    envelope box and the de-duplicated, reading-ordered cells of the group.
    Passes repeat until the cluster count stops shrinking, so applying the
    function to its own output changes nothing.
    """
    ids = [c.id for c in clusters]
    if len(set(ids)) != len(ids):
        raise ValueError("cluster ids must be unique")

    others = [c for c in clusters if c.label != FORMULA]
    formulas = [c for c in clusters if c.label == FORMULA]
    if not formulas:
        return list(clusters)

    while True:
        merged = _merge_pass(formulas, cfg)
        if len(merged) == len(formulas):
            break
        formulas = merged
    return others + merged


def collect_all_cells(cluster: Cluster) -> list[TextCell]:
    cells = list(cluster.cells)
    for child in cluster.children:
        cells.extend(collect_all_cells(child))
    return cells


def reclassify_sparse_tables(
    clusters: Sequence[Cluster], page: PageGeometry, cfg: LayoutConfig = LayoutConfig()
) -> list[Cluster]:
    """Relabel page-sized but sparsely populated table-like clusters as TEXT."""
    out = []
    for cluster in clusters:
        if cluster.label in LARGE_WRAPPER_LABELS:
            area = cluster.bbox.area()
            if area / page.area >= cfg.min_area_ratio:
                n_cells = len(collect_all_cells(cluster))
                density = n_cells / area
                if n_cells < cfg.min_cells_threshold or density < cfg.min_density_threshold:
                    logger.debug("relabel cluster %s %s -> TEXT", cluster.id, cluster.label)
                    cluster = dataclasses.replace(cluster, label=TEXT)
        out.append(cluster)
    return out


def compute_mask_regions(
    clusters: Sequence[Cluster], page: PageGeometry, cfg: LayoutConfig = LayoutConfig()
) -> list[BoundingBox]:
    """Image-space rectangles to paint white so only formulas remain visible."""
    regions = []
    scale = page.image_scale
    for cluster in clusters:
        if cluster.label == FORMULA:
            continue
        box = cluster.bbox
        h = box.height
        regions.append(
            BoundingBox(
                l=box.l * scale,
                t=(box.t - h * cfg.mask_top_expansion) * scale,
                r=box.r * scale,
                b=(box.b + h * cfg.mask_bottom_expansion) * scale,
            )
        )
    return regions


@dataclass
class Page:
    """One page of detector output, as read from the page cluster JSON."""

    geometry: PageGeometry
    clusters: list[Cluster]
    cells: list[TextCell] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> Page:
        p = d["page"]
        return cls(
            geometry=PageGeometry(
                float(p["width"]), float(p["height"]), float(p.get("image_scale", 1.0))
            ),
            clusters=[Cluster.from_dict(c) for c in d.get("clusters", ())],
            cells=[TextCell.from_dict(c) for c in d.get("cells", ())],
        )

    def to_dict(self) -> dict[str, Any]:
        out: dict[str, Any] = {
            "page": {
                "width": self.geometry.width,
                "height": self.geometry.height,
                "image_scale": self.geometry.image_scale,
            },
            "clusters": [c.to_dict() for c in self.clusters],
        }
        if self.cells:
            out["cells"] = [c.to_dict() for c in self.cells]
        return out


def fix_page(page: Page, cfg: LayoutConfig = LayoutConfig()) -> tuple[Page, list[BoundingBox]]:
    """Full repair sequence for one page; returns the page and its mask regions.

    Margin line numbers are removed from the raw cells and from every
    cluster before table reclassification, so they cannot inflate cell counts.
    """
    geom = page.geometry

    def strip_margins(c: Cluster) -> Cluster:
        return dataclasses.replace(
            c,
            cells=tuple(filter_margin_line_numbers(c.cells, geom, cfg)),
            children=tuple(strip_margins(ch) for ch in c.children),
        )

    cells = filter_margin_line_numbers(page.cells, geom, cfg)
    clusters = [strip_margins(c) for c in page.clusters]
    clusters = reclassify_sparse_tables(clusters, geom, cfg)
    clusters = merge_adjacent_formulas(clusters, cfg)
    masks = compute_mask_regions(clusters, geom, cfg)
    return Page(geom, clusters, cells), masks
