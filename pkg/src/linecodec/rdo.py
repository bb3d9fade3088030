"""Rate-distortion decisions for the linear model.

Fast stage: the longest run of points whose spacings are close to even
(mean cumulative deviation below a tolerance).  Full stage: quantize the
line, count its exact coded bits with a probe coder and measure the PSNR of
the reconstructed members; the line is kept when P - lambda*R exceeds T.
"""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from enum import Enum
from typing import NamedTuple

import numpy as np
from numba import njit

from . import bitstream as bs
from .metrics import d1, psnr
from .quantizer import reconstruct

PSNR_CAP = 999.0  # stands in for an exact reconstruction
DEFAULT_LAMBDAS = (0, 5, 10, 15, 20, 25, 30)
DEFAULT_QG_GRID = (1, 2, 4, 8, 16, 32)
DEFAULT_T_STEPS = 21


@dataclass
class RdoConfig:
    lam: float = 0.0
    d_c_bar: float | None = None  # None: Q_g / 2
    T: float | None = None  # None: from the lambda model (or the built-in default)

    def __post_init__(self):
        if not (math.isfinite(self.lam) and self.lam >= 0):
            raise ValueError("lambda must be finite and non-negative")
        if self.d_c_bar is not None and not (math.isfinite(self.d_c_bar) and self.d_c_bar > 0):
            raise ValueError("D_c_bar must be positive")
        if self.T is not None and math.isnan(self.T):
            raise ValueError("T must not be NaN")

    def tolerance(self, q_g):
        return 0.5 * float(q_g) if self.d_c_bar is None else float(self.d_c_bar)


@dataclass
class RdScore:
    P_l: float
    R_l: float  # bits per member point
    lam: float
    bits: float = 0.0

    @property
    def rds(self):
        return self.P_l - self.lam * self.R_l


class Mode(Enum):
    OCTREE = 0
    LINEAR = 1


def decide_mode(score, T):
    rds = score.rds if isinstance(score, RdScore) else float(score)
    return Mode.LINEAR if rds > T else Mode.OCTREE


# --- fast subset search -----------------------------------------------------------

TIE_EPS = 1e-12


class Window(NamedTuple):
    i: int  # first point (0-based)
    j: int  # last point, inclusive; the window spans spacings d[i:j]
    dbar: float
    feasible: bool


@njit(cache=True)
def _window_dev(S, i, j):
    # L^2 times the mean cumulative deviation of spacings d[i:j]; scaling by
    # L keeps integer spacings exact, so ties and the threshold test are exact
    L = j - i
    tot = S[j] - S[i]
    acc = 0.0
    for t in range(i + 1, j + 1):
        acc += abs(L * (S[t] - S[i]) - (t - i) * tot)
    return acc


@njit(cache=True)
def _best_window(d, dc):
    n = d.shape[0]
    S = np.zeros(n + 1)
    for t in range(n):
        S[t + 1] = S[t] + d[t]
    scale = 0.0
    for t in range(n):
        scale += abs(d[t])
    for L in range(n, 0, -1):
        best_i = -1
        best = np.inf
        lim = dc * L * L
        # deviations closer than rounding noise count as ties (earlier start wins)
        tie = TIE_EPS * L * L * scale
        for i in range(n - L + 1):
            v = _window_dev(S, i, i + L)
            if v < lim and v < best - tie:
                best = v
                best_i = i
        if best_i >= 0:
            return best_i, best_i + L, best / (L * L), True
    return 0, 1, 0.0, False


def best_window(d, d_c_bar):
    """Longest window of spacings whose mean cumulative deviation is below
    ``d_c_bar``; ties go to the smaller deviation, then the earlier start."""
    d = np.ascontiguousarray(d, dtype=np.float64)
    if d.ndim != 1 or len(d) == 0:
        raise ValueError("need at least one spacing (N >= 2)")
    i, j, v, ok = _best_window(d, float(d_c_bar))
    return Window(int(i), int(j), float(v), bool(ok))


def fast_subset(d, d_c_bar):
    w = best_window(d, d_c_bar)
    return w.i, w.j


# --- full RD score ---------------------------------------------------------------

def _d1_small(a, b):
    diff = np.asarray(b, dtype=np.float64)[:, None, :] - np.asarray(a, dtype=np.float64)[None]
    return float((diff * diff).sum(axis=2).min(axis=1).mean())


def line_psnr(original, recon, peak):
    """Symmetric D1 PSNR of a reconstructed line against its members."""
    if len(original) * len(recon) <= 1 << 16:
        mse = max(_d1_small(original, recon), _d1_small(recon, original))
    else:
        mse = max(d1(original, recon), d1(recon, original))
    return min(PSNR_CAP, psnr(mse, peak))


def score_linear(points, q, qcfg, rdo, probe, origin, peak, prev=None, lossless=False, P=None):
    """Quantize-reconstruct-measure one candidate.

    ``q`` is the quantized line for ``points`` (members in line order);
    ``probe`` is a discarding encoder whose line contexts match the emitter.
    The probe is advanced, so callers pass a copy per candidate.  ``P`` may
    carry an already measured PSNR for ``q``.
    """
    with probe.measure() as box:
        bs.write_line(probe, q, prev, qcfg.q_a, offsets=q.offset_indices is not None)
    if P is None:
        P = line_psnr(points, reconstruct(q, qcfg, origin, lossless), peak)
    return RdScore(P, box[0] / q.N, rdo.lam, box[0])


# --- lambda model ---------------------------------------------------------------

@dataclass
class LambdaModel:
    """Q_g(lambda) = alpha * exp(beta * lambda), T(lambda) = gamma * exp(-delta * lambda)."""

    qg_coeffs: tuple = (1.0, 0.0)
    t_coeffs: tuple = (0.0, 0.0)
    fit_residuals: list = field(default_factory=list)
    lambda_range: tuple = (0.0, 30.0)

    def qg(self, lam):
        a, b = self.qg_coeffs
        return a * math.exp(b * lam)

    def T(self, lam):
        g, dl = self.t_coeffs
        return g * math.exp(-dl * lam)

    def lambda_for_qg(self, q_g):
        """Inverse of qg(), clamped to the fitted range."""
        a, b = self.qg_coeffs
        lo, hi = self.lambda_range
        if b == 0:
            return lo
        return min(hi, max(lo, math.log(q_g / a) / b))

    def check_monotone(self):
        lo, hi = self.lambda_range
        lams = np.linspace(lo, hi, 31)
        q = np.array([self.qg(x) for x in lams])
        t = np.array([self.T(x) for x in lams])
        return bool(np.all(q > 0) and np.all(np.diff(q) >= 0) and np.all(np.diff(t) <= 0))

    def to_json(self):
        return json.dumps(asdict(self), indent=2)

    @classmethod
    def from_json(cls, text):
        raw = json.loads(text)
        return cls(tuple(raw["qg_coeffs"]), tuple(raw["t_coeffs"]),
                   [tuple(r) for r in raw.get("fit_residuals", [])],
                   tuple(raw.get("lambda_range", (0.0, 30.0))))

    def save(self, path):
        with open(path, "w") as f:
            f.write(self.to_json() + "\n")

    @classmethod
    def load(cls, path):
        with open(path) as f:
            return cls.from_json(f.read())


def _fit_exp(x, y, sign):
    """Least squares y = c * exp(sign * k * x); returns (c, k)."""
    from scipy.optimize import curve_fit

    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if np.all(y == y[0]) or np.ptp(x) == 0:
        return float(y[0]), 0.0
    if np.all(y > 0):
        k, logc = np.polyfit(x, np.log(y), 1)
        return float(math.exp(logc)), float(sign * k)
    c0 = float(np.mean(y))
    (c, k), _ = curve_fit(lambda t, c, k: c * np.exp(sign * k * t), x, y, p0=(c0, 0.0),
                          maxfev=20000)
    return float(c), float(k)


def fit_lambda_model(lams, qg_opt, t_opt):
    """Q_g by log-linear regression; T by the same when all T > 0, else by
    nonlinear least squares."""
    lams = np.asarray(lams, dtype=np.float64)
    a, b = _fit_exp(lams, qg_opt, +1.0)
    g, dl = _fit_exp(lams, t_opt, -1.0)
    model = LambdaModel((a, b), (g, dl), lambda_range=(float(lams.min()), float(lams.max())))
    model.fit_residuals = [(float(q - model.qg(x)), float(t - model.T(x)))
                           for x, q, t in zip(lams, qg_opt, t_opt)]
    return model


@dataclass
class SweepRow:
    lam: float
    q_g: float
    T: float
    rds: float


def _sweep_cell(clouds, q_g, T, lam, encoder_kwargs, peaks, floor, caches):
    from .codec import EncoderConfig, decode, encode
    from .metrics import d1 as _d1

    scores = []
    for cloud, peak, cache in zip(clouds, peaks, caches):
        cfg = EncoderConfig.make(q_g=q_g, lam=lam, T=T, **encoder_kwargs)
        data, _ = encode(cloud, cfg, cache)
        rec = decode(data)
        mse = max(_d1(cloud.points, rec.points), _d1(rec.points, cloud.points)) + floor
        bpp = 8.0 * len(data) / len(cloud)
        scores.append(psnr(mse, peak) - lam * bpp)
    return float(np.mean(scores))


def candidate_rds_range(clouds, q_g, lam, encoder_kwargs=None, caches=None):
    """Range of candidate RDS values seen when every candidate is accepted."""
    from .codec import EncoderConfig, encode

    vals = []
    caches = caches or [None] * len(clouds)
    for cloud, cache in zip(clouds, caches):
        cfg = EncoderConfig.make(q_g=q_g, lam=lam, T=-math.inf, **(encoder_kwargs or {}))
        _, stats = encode(cloud, cfg, cache)
        vals += stats.candidate_rds
    vals = [v for v in vals if math.isfinite(v)]
    if not vals:
        return 0.0, 0.0
    return float(min(vals)), float(max(vals))


def _sweep_lambda(clouds, lam, qg_grid, t_steps, encoder_kwargs, voxel_floor, refine=2):
    peaks = [max(1.0, float(np.max(c.extent))) for c in clouds]
    caches = [{} for _ in clouds]
    ranges = [candidate_rds_range(clouds, q_g, lam, encoder_kwargs, caches) for q_g in qg_grid]
    lo = min(r[0] for r in ranges)
    hi = max(r[1] for r in ranges)
    ts = np.linspace(lo, hi, t_steps) if t_steps > 1 else np.array([lo])

    def run(q_g, grid):
        return [SweepRow(float(lam), float(q_g), float(T),
                         _sweep_cell(clouds, q_g, float(T), lam, encoder_kwargs, peaks,
                                     voxel_floor, caches)) for T in grid]

    coarse = {q_g: run(q_g, ts) for q_g in qg_grid}
    rows = [r for q_g in qg_grid for r in coarse[q_g]]
    if t_steps < 3 or not refine:
        return rows
    # zoom into the neighbourhood of the best coarse T for the leading Q_g values
    lead = sorted(qg_grid, key=lambda q: -max(r.rds for r in coarse[q]))[:refine]
    step = ts[1] - ts[0]
    for q_g in lead:
        best = max(coarse[q_g], key=lambda r: r.rds).T
        fine = np.linspace(best - step, best + step, t_steps)[1:-1]
        rows += run(q_g, fine[(fine >= lo) & (fine <= hi)])
    return rows


def sweep(clouds, lambda_grid=DEFAULT_LAMBDAS, qg_grid=DEFAULT_QG_GRID, t_steps=DEFAULT_T_STEPS,
          encoder_kwargs=None, voxel_floor=0.25, threads=1):
    """Grid search of (Q_g, T) per lambda.

    Cloud RDS is D1 PSNR minus lambda times bits per point.  The MSE adds
    ``voxel_floor`` (the variance of voxelization, 3/12) so an exact
    reconstruction scores finitely.  The T grid for a lambda spans the
    candidate RDS values seen over the whole Q_g grid.  Returns (grid rows,
    optimum rows).
    """
    encoder_kwargs = dict(encoder_kwargs or {})
    args = [(clouds, lam, tuple(qg_grid), t_steps, encoder_kwargs, voxel_floor)
            for lam in lambda_grid]
    if threads > 1 and len(args) > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(min(threads, len(args))) as ex:
            parts = list(ex.map(_sweep_lambda, *zip(*args)))
    else:
        parts = [_sweep_lambda(*a) for a in args]
    rows = [r for part in parts for r in part]
    return rows, optima(rows)


def optima(rows):
    """Best row per lambda.  Exact ties (identical decisions) go to the
    smaller Q_g; the reported T is the centre of the tied T values, the
    middle of the interval of equally good thresholds."""
    out = []
    for lam in sorted({r.lam for r in rows}):
        rs = [r for r in rows if r.lam == lam]
        best = max(r.rds for r in rs)
        q_g = min(r.q_g for r in rs if r.rds == best)
        ts = [r.T for r in rs if r.rds == best and r.q_g == q_g]
        out.append(SweepRow(lam, q_g, 0.5 * (min(ts) + max(ts)), best))
    return out


def sweep_and_fit(clouds, lambda_grid=DEFAULT_LAMBDAS, **kwargs):
    if len(clouds) < 2:
        raise ValueError("the lambda sweep needs at least two training clouds")
    rows, opt = sweep(clouds, lambda_grid, **kwargs)
    model = fit_lambda_model([r.lam for r in opt], [r.q_g for r in opt], [r.T for r in opt])
    return model, rows, opt


def write_optima_csv(opt, path):
    with open(path, "w") as f:
        f.write("lambda,qg_opt,t_opt,rds\n")
        for r in opt:
            f.write(f"{r.lam:g},{r.q_g:g},{r.T:.6f},{r.rds:.6f}\n")


def write_grid_csv(rows, path):
    with open(path, "w") as f:
        f.write("lambda,qg,t,rds\n")
        for r in rows:
            f.write(f"{r.lam:g},{r.q_g:g},{r.T:.6f},{r.rds:.6f}\n")


def read_optima_csv(path):
    import csv

    with open(path, newline="") as f:
        rows = list(csv.DictReader(f))
    if not rows:
        raise ValueError(f"{path}: no rows")
    return [SweepRow(float(r["lambda"]), float(r["qg_opt"]), float(r["t_opt"]), float(r["rds"]))
            for r in rows]
