"""Shared oracles for the test modules and the acceptance run."""

import math
from fractions import Fraction
from itertools import combinations

import numpy as np

from linecodec.quantizer import (QuantConfig, accumulation_bound, fit_quantized_line,
                                 quantize_line, reconstruct_base)


def random_even_line(rng):
    """Exactly evenly spaced points on a random line, plus its quantizer config."""
    n = int(rng.integers(2, 200))
    b = rng.normal(size=3)
    b /= np.linalg.norm(b)
    d = float(rng.uniform(0.2, 8.0))
    a = rng.uniform(0, 1000, 3)
    x = a + np.arange(n)[:, None] * d * b
    cfg = QuantConfig(q_g=float(rng.choice([0.5, 1, 2, 4, 8, 16, 32])),
                      q_a=int(rng.integers(4, 129)))
    return x, cfg, (n - 1) * d


def accumulation_error(x, cfg, origin=(0, 0, 0)):
    """(max point error, bound) for one evenly spaced line."""
    line, proj = fit_quantized_line(x, cfg)
    q = quantize_line(line, proj, cfg, origin)
    rec = reconstruct_base(q, cfg, origin)
    src = x[line.member_indices]
    p_max = float(np.linalg.norm(x[-1] - x[0]))
    err = np.linalg.norm(rec - src, axis=1).max()
    return err, accumulation_bound(cfg, len(x), p_max)


def window_dbar(d):
    """Mean cumulative deviation of a window of spacings, evaluated exactly in
    rationals straight from the definition."""
    d = [Fraction(v) for v in d]
    m = sum(d) / len(d)
    acc, total = Fraction(0), Fraction(0)
    for v in d:
        acc += v - m
        total += abs(acc)
    return total / len(d)


def brute_subset(d, d_c_bar):
    """Exhaustive search: longest window with deviation < d_c_bar; ties go to
    the smaller deviation, then the earlier start.  Returns 0-based point
    indices (i, j), or None when nothing is feasible."""
    best = None
    dc = Fraction(d_c_bar)
    for i, j in combinations(range(len(d) + 1), 2):
        dev = window_dbar(d[i:j])
        if dev < dc:
            key = (-(j - i), dev, i)
            if best is None or key < best[0]:
                best = (key, (i, j))
    return None if best is None else best[1]
