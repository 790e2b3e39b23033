"""Reference implementations used only to cross-check production code.

These deliberately avoid the vectorised formulations in metrics.py: the
average-precision reference walks the ranked list accumulating
(recall step) x (precision) with explicit counters.
"""

from itertools import product


def ap_reference(scores, labels) -> float:
    """Brute-force average precision; stable ties by original index."""
    n = len(scores)
    order = sorted(range(n), key=lambda i: (-scores[i], i))
    n_pos = sum(labels)
    if n_pos == 0:
        raise ValueError("no positives")
    ap = 0.0
    true_positives = 0
    prev_recall = 0.0
    for rank, i in enumerate(order, start=1):
        if labels[i]:
            true_positives += 1
        precision = true_positives / rank
        recall = true_positives / n_pos
        ap += (recall - prev_recall) * precision
        prev_recall = recall
    return ap


def enumerate_ranked_instances(max_n: int):
    """Every realizable (scores, labels) class for lists up to ``max_n``.

    Average precision with index-stable tie-breaking depends only on the
    ordered label sequence and which adjacent ranks share a score, so
    enumerating label vectors x tie compositions covers the entire input
    space exhaustively. Scores are emitted descending with equal values
    inside each tie group.
    """
    for n in range(1, max_n + 1):
        for labels in product((0, 1), repeat=n):
            if not any(labels):
                continue
            # each composition of n encodes the tie-group boundaries
            for boundary_bits in product((0, 1), repeat=n - 1):
                scores = []
                group = 0
                for i in range(n):
                    scores.append(1.0 - 0.1 * group)
                    if i < n - 1 and boundary_bits[i]:
                        group += 1
                yield scores, list(labels)
