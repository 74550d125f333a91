"""Exact W1 reference values via the full transport LP (scipy/HiGHS).

Instances are generated by integer congruences so the C++ tests can rebuild
the identical atom clouds without sharing any RNG code.  Run:

    python3 tests/oracles/transport_lp.py
"""

import numpy as np
from scipy.optimize import linprog


def solve_w1(ax, aw, bx, bw):
    m, n = len(aw), len(bw)
    cost = np.array([[np.hypot(ax[i][0] - bx[j][0], ax[i][1] - bx[j][1])
                      for j in range(n)] for i in range(m)])
    c = cost.reshape(-1)
    A_eq = []
    b_eq = []
    for i in range(m):
        row = np.zeros(m * n)
        row[i * n:(i + 1) * n] = 1.0
        A_eq.append(row)
        b_eq.append(aw[i])
    for j in range(n):
        row = np.zeros(m * n)
        row[j::n] = 1.0
        A_eq.append(row)
        b_eq.append(bw[j])
    res = linprog(c, A_eq=np.array(A_eq), b_eq=np.array(b_eq),
                  bounds=(0, None), method="highs")
    assert res.status == 0, res.message
    return res.fun


def instance_pair():
    # spec'd 2x2 case, embedded in the plane
    ax = [(0.0, 0.0), (1.0, 0.0)]
    aw = [0.5, 0.5]
    bx = [(0.25, 0.0), (0.75, 0.0)]
    bw = [0.5, 0.5]
    return ax, aw, bx, bw


def instance_small():
    ax = [(((7 * i + 3) % 23) / 23.0, ((11 * i + 5) % 19) / 19.0) for i in range(7)]
    aw = np.array([1.0 + ((i * 13) % 5) for i in range(7)])
    aw = (aw / aw.sum()).tolist()
    bx = [(((5 * j + 2) % 29) / 29.0, ((17 * j + 7) % 31) / 31.0) for j in range(9)]
    bw = np.array([1.0 + ((j * 7) % 4) for j in range(9)])
    bw = (bw / bw.sum()).tolist()
    return ax, aw, bx, bw


def instance_medium():
    ax = [((((3 * i * i + 5 * i + 1) % 97)) / 97.0, (((2 * i * i + 7 * i + 3) % 89)) / 89.0)
          for i in range(25)]
    aw = np.array([1.0 + ((i * i) % 7) for i in range(25)])
    aw = (aw / aw.sum()).tolist()
    bx = [((((5 * j * j + j + 2) % 83)) / 83.0, (((7 * j * j + 3 * j + 1) % 79)) / 79.0)
          for j in range(25)]
    bw = np.array([1.0 + ((3 * j) % 5) for j in range(25)])
    bw = (bw / bw.sum()).tolist()
    return ax, aw, bx, bw


if __name__ == "__main__":
    for name, inst in [("pair", instance_pair()),
                       ("small", instance_small()),
                       ("medium", instance_medium())]:
        val = solve_w1(*inst)
        print(f"{name}: {val!r}")
