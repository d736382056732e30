"""Tour of the evaluation metrics on hand-checkable toy cases.

    python3 demos/05_metrics_tour.py
"""

import numpy as np

from alorat import metrics
from alorat.metrics import EventSegment

print("=== point-wise best-F1 sweep ===")
scores = np.array([0.1, 0.2, 0.3, 2.0, 2.5, 1.8, 0.2, 0.1, 0.3, 0.2])
labels = np.array([0, 0, 0, 1, 1, 1, 0, 0, 0, 0])
f1, precision, recall, h2 = metrics.best_f1_sweep(scores, labels)
print(f"scores: {scores.tolist()}")
print(f"labels: {labels.tolist()}")
print(f"best F1 {f1:.2f} at threshold {h2} (precision {precision:.2f}, recall {recall:.2f})")

print("\n=== event-level affiliation-style metrics ===")
truth = [EventSegment(10, 20)]
for shift in (0, 1, 5, 25):
    pred = [EventSegment(10 + shift, 20 + shift)]
    res = metrics.affiliation_pr(pred, truth, horizon=10)
    print(f"prediction shifted by {shift:>2}: precision {res.precision:.2f} "
          f"recall {res.recall:.2f} f1 {res.f1:.2f}")
print("affinity decays linearly with the directed gap and floors at 0.")

print("\n=== localization ranking metrics ===")
# four series; truth says series 1 and 3 are anomalous; our ranking puts
# 1 first but 3 only third
ranked = [1, 0, 3, 2]
g = {1, 3}
for p in (100, 150, 200):
    hr = metrics.hit_rate(ranked, g, p)
    nd = metrics.ndcg(ranked, g, p)
    k = -(-len(g) * p // 100)
    print(f"P={p:>3} (top-{k}): hit rate {hr:.2f}, NDCG {nd:.3f}")

print("\n=== segment-level interpretation score ===")
las = np.zeros((30, 4))
las[5:10, 1] = 3.0     # segment 1: series 1 dominates, truth {1} -> hit
las[20:25, 2] = 2.0    # segment 2: series 2 dominates, truth {0, 2} -> half
las[20:25, 3] = 1.5
segments = [EventSegment(5, 10), EventSegment(20, 25)]
ips = metrics.ips(las, segments, [{1}, {0, 2}])
print(f"IPS over two equally weighted segments = {ips:.3f}")
