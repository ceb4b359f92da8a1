"""Hand-traced formula-merge pages under default LayoutConfig.

Every formula is 30 px tall unless noted, so the vertical threshold is
30 * 1.8 = 54 px and the tight-gap branch applies up to 27 px. Expanded
widths add 2 * 50 px of padding. Each case lists (id, (l, t, r, b), text)
and the expected partition of formula ids.
"""

from __future__ import annotations

from hysem.layout import FORMULA, BoundingBox, Cluster, TextCell


def make_cluster(cid, box, text, label=FORMULA):
    bbox = BoundingBox(*box)
    return Cluster(cid, label, bbox, (TextCell(bbox, f"c{cid} {text}"),))


GOLDEN = [
    # Distinct numbers never merge, even when perfectly stacked.
    ("distinct_numbers", [(1, (100, 100, 400, 130), "a (1)"), (2, (100, 135, 400, 165), "b (2)")], [[1], [2]]),
    ("distinct_numbers_touching", [(1, (100, 100, 400, 130), "a (1)"), (2, (100, 130, 400, 160), "b (2a)")], [[1], [2]]),
    # Both unnumbered: gap 2 <= 3, overlap 1.0 >= 0.9.
    ("unnumbered_gap2", [(1, (100, 100, 400, 130), "x"), (2, (100, 132, 400, 162), "y")], [[1, 2]]),
    # Both unnumbered: gap 3 is the inclusive limit, gap 4 is past it.
    ("unnumbered_gap3", [(1, (100, 100, 400, 130), "x"), (2, (100, 133, 400, 163), "y")], [[1, 2]]),
    ("unnumbered_gap4", [(1, (100, 100, 400, 130), "x"), (2, (100, 134, 400, 164), "y")], [[1], [2]]),
    # Both unnumbered, shifted 50 px: overlap 350/400 = 0.875 < 0.9.
    ("unnumbered_overlap_0875", [(1, (100, 100, 400, 130), "x"), (2, (150, 132, 450, 162), "y")], [[1], [2]]),
    # Same number, shifted 50 px: loose branch needs 0.85, 0.875 passes.
    ("same_number_loose_branch", [(1, (100, 100, 400, 130), "x (3)"), (2, (150, 132, 450, 162), "y (3)")], [[1, 2]]),
    # Narrow boxes (expanded width 110): 20 px shift is tight-aligned,
    # overlap 90/110 = 0.818 >= 0.7.
    ("tight_alignment_0818", [(1, (100, 100, 110, 130), "(4)"), (2, (120, 132, 130, 162), "(4)")], [[1, 2]]),
    # 21 px shift leaves tight alignment; 89/110 = 0.809 < 0.85.
    ("loose_alignment_0809", [(1, (100, 100, 110, 130), "(4)"), (2, (121, 132, 131, 162), "(4)")], [[1], [2]]),
    # Gap 40 lies in (27, 54]: alignment factor 0 <= 0.2, overlap 1.0 >= 0.85.
    ("wide_gap_aligned", [(1, (100, 100, 400, 130), "(5)"), (2, (100, 170, 400, 200), "(5)")], [[1, 2]]),
    # Gap 40 with 70 px shift: factor 70/300 = 0.233 > 0.2, skipped.
    ("wide_gap_misaligned", [(1, (100, 100, 400, 130), "(5)"), (2, (170, 170, 470, 200), "(5)")], [[1], [2]]),
    # Gap 55 exceeds the 54 px threshold.
    ("gap_over_threshold", [(1, (100, 100, 400, 130), "(6)"), (2, (100, 185, 400, 215), "(6)")], [[1], [2]]),
    # Vertically overlapping boxes (negative gap) never merge.
    ("negative_gap", [(1, (100, 100, 400, 130), "x"), (2, (100, 125, 400, 155), "y")], [[1], [2]]),
    # Mixed numbering: gap 10 <= 12.8 and overlap 1.0 >= 0.95.
    ("mixed_gap10", [(1, (100, 100, 400, 130), "x"), (2, (100, 140, 400, 170), "y (7)")], [[1, 2]]),
    # Mixed numbering: gap 13 > 12.8.
    ("mixed_gap13", [(1, (100, 100, 400, 130), "x"), (2, (100, 143, 400, 173), "y (7)")], [[1], [2]]),
    # Mixed numbering, 20 px shift: overlap 380/400 = 0.95 passes exactly.
    ("mixed_overlap_095", [(1, (100, 100, 400, 130), "x"), (2, (120, 140, 420, 170), "(7)")], [[1, 2]]),
    # Mixed numbering, 24 px shift: 376/400 = 0.94 < 0.95.
    ("mixed_overlap_094", [(1, (100, 100, 400, 130), "x"), (2, (124, 140, 424, 170), "(7)")], [[1], [2]]),
    # Three unnumbered fragments chain into one equation.
    ("chain_of_three", [(1, (100, 100, 400, 130), "a"), (2, (100, 132, 400, 162), "b"), (3, (100, 164, 400, 194), "c")], [[1, 2, 3]]),
    # An unnumbered fragment cannot bridge two numbered equations.
    ("no_bridge", [(1, (100, 100, 400, 130), "a (1)"), (2, (100, 140, 400, 170), "b"), (3, (100, 180, 400, 210), "c (2)")], [[1, 2], [3]]),
    # A lone formula is untouched.
    ("single", [(1, (100, 100, 400, 130), "x (1)")], [[1]]),
]


def build(case):
    _, spec, _ = case
    return [make_cluster(cid, box, text) for cid, box, text in spec]


def partition(clusters):
    """Formula partition recovered from the ``c<id>`` tag on every cell."""
    groups = []
    for c in clusters:
        if c.label == FORMULA:
            groups.append(sorted(int(cell.text.split()[0][1:]) for cell in c.cells))
    return sorted(groups)
