"""Quantile-coupling reference for 1D W1 and the N-quantile compaction error.

Input cloud: 1000 atoms at (i+1/2)/1000, equal weights (uniform surrogate).
Compacted: 100 atoms at the (j+1/2)/100 quantiles of the input, equal weights.
W1 of two discrete 1D measures equals the integral of |F - G|.
"""

import numpy as np


def cdf_integral(xs_a, ws_a, xs_b, ws_b):
    events = sorted([(x, w) for x, w in zip(xs_a, ws_a)] +
                    [(x, -w) for x, w in zip(xs_b, ws_b)])
    total, F, prev = 0.0, 0.0, None
    for x, dw in events:
        if prev is not None and x > prev:
            total += abs(F) * (x - prev)
        F += dw
        prev = x
    return total


def discrete_quantiles(xs, ws, N):
    order = np.argsort(xs)
    xs, ws = np.asarray(xs)[order], np.asarray(ws)[order]
    cum = np.cumsum(ws)
    out = []
    for j in range(N):
        t = (j + 0.5) / N * cum[-1]
        k = np.searchsorted(cum, t)
        k = min(k, len(xs) - 1)
        out.append(xs[k])
    return out


if __name__ == "__main__":
    xs = [(i + 0.5) / 1000.0 for i in range(1000)]
    ws = [1.0 / 1000.0] * 1000
    q = discrete_quantiles(xs, ws, 100)
    w1 = cdf_integral(xs, ws, q, [1.0 / 100.0] * 100)
    print(f"w1_1000_to_100: {w1!r}")
    print("first five quantiles:", q[:5])
