"""Brute-force recomputation of the continual-learning metrics on fixture M*.

Run with `python3 metrics_oracle.py`; the printed values are frozen into
tests/acceptance.rs and src/metrics.rs tests.
"""
from statistics import median

N = 3
zero = [0.4, 0.1, 0.3]
a = {
    (1, 1): 1.0, (1, 2): 0.2,
    (2, 1): 0.7, (2, 2): 0.8, (2, 3): 0.5,
    (3, 1): 0.5, (3, 2): 0.6, (3, 3): 0.9,
}

acc = sum(a[(N, j)] for j in range(1, N + 1)) / N
forget = sum(
    max(max(a[(k, j)] for k in range(1, j + 1) if (k, j) in a), a[(N, j)]) - a[(N, j)]
    for j in range(1, N)
) / (N - 1)
ft = sum(a[(i, i + 1)] - zero[i] for i in range(1, N)) / (N - 1)
bwt = sum(a[(N, i)] - a[(i, i)] for i in range(1, N)) / (N - 1)
aulc = sum(sum(a[(k, k)] for k in range(1, i + 1)) / i for i in range(1, N + 1)) / N
clp = sum(a[(i, i)] for i in range(1, N + 1)) / N
cls = 1 - forget


def fbeta(p, s, b):
    return (1 + b * b) * p * s / (b * b * p + s)


f1 = fbeta(clp, cls, 1.0)
f2 = fbeta(clp, cls, 2.0)
score = acc - 0.5 * forget + 0.5 * ft + 0.5 * bwt + 0.2 * aulc + f1

for name, v in [("ACC", acc), ("F", forget), ("FT", ft), ("BWT", bwt), ("AULC", aulc),
                ("CL-P", clp), ("CL-S", cls), ("CL-F1", f1), ("CL-F2", f2), ("CL-Score", score)]:
    print(f"{name:9s} {v!r}")

d = [12, 8, 20, 16]
ok = [True, True, False, False]
print("TUE      ", repr(median([x for x, s in zip(d, ok) if s]) / median(d)))
