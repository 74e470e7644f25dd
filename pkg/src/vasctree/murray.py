"""Bifurcation-exponent solving and the empirical width-exponent table.

The scaling relation r_p^a = sum_i r_ci^a is solved in log space,
g(a) = a*ln(r_p) - LSE_i(a*ln(r_ci)), which is strictly increasing whenever
every child is narrower than the parent, so a sign check at the bracket ends
decides solvability and bisection converges unconditionally.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import DataError, NumericalError
from .vessgraph import BifurcationRecord

ALPHA_MIN = 0.05
ALPHA_MAX = 12.0
DEFAULT_CANDIDATES = np.round(np.arange(0.5, 6.0 + 1e-9, 0.1), 10)


@dataclass(frozen=True)
class ExponentTable:
    """Width-binned empirical exponents (1 um bins) with a log-radius scale."""

    widths_um: np.ndarray       # bin centers, ascending
    alphas: np.ndarray          # per-bin mean exponent (interpolated if sparse)
    counts: np.ndarray          # accepted samples per bin
    sigma_log: float            # std of ln(parent width um) over accepted records
    cls: str = "single"
    ci: tuple[float, float] | None = None
    n_records: int = 0

    def __post_init__(self):
        w = np.ascontiguousarray(self.widths_um, dtype=np.float64)
        a = np.ascontiguousarray(self.alphas, dtype=np.float64)
        c = np.ascontiguousarray(self.counts, dtype=np.int64)
        if not (len(w) == len(a) == len(c)) or len(w) == 0:
            raise DataError("table arrays must be non-empty and equal length")
        if (np.diff(w) <= 0).any():
            raise DataError("bin widths must be strictly ascending")
        if not np.isfinite(a).all() or (a <= 0).any():
            raise DataError("bin exponents must be finite and positive")
        if self.sigma_log <= 0:
            raise DataError("sigma_log must be positive")
        for arr in (w, a, c):
            arr.setflags(write=False)
        object.__setattr__(self, "widths_um", w)
        object.__setattr__(self, "alphas", a)
        object.__setattr__(self, "counts", c)


def _g(alpha: float, log_rp: float, log_children: list[float]) -> float:
    m = max(alpha * lc for lc in log_children)
    s = sum(math.exp(alpha * lc - m) for lc in log_children)
    return alpha * log_rp - (m + math.log(s))


def solve_alpha(r_p: float, children, tol: float = 1e-10) -> float | None:
    """Unique positive exponent solving the bifurcation power law, or None.

    None marks a discarded bifurcation: some child at least as wide as the
    parent (no root exists) or the root falling outside (0.05, 12].
    Non-positive radii are an error, not a discard.
    """
    children = [float(c) for c in children]
    r_p = float(r_p)
    if r_p <= 0 or any(c <= 0 for c in children):
        raise DataError("radii must be positive")
    if len(children) < 2:
        raise DataError("need at least two children")
    if max(children) >= r_p:
        return None  # f(a) < 0 for every positive a
    log_rp = math.log(r_p)
    log_children = [math.log(c) for c in children]
    lo, hi = ALPHA_MIN, ALPHA_MAX
    g_lo = _g(lo, log_rp, log_children)
    g_hi = _g(hi, log_rp, log_children)
    if g_lo > 0 or g_hi < 0:
        return None  # root outside the physiological bracket
    if g_lo == 0:
        return lo
    if g_hi == 0:
        return hi
    best = lo
    for _ in range(300):
        mid = 0.5 * (lo + hi)
        gm = _g(mid, log_rp, log_children)
        best = mid
        if abs(gm) < tol:
            return mid
        if gm < 0:
            lo = mid
        else:
            hi = mid
        if hi - lo <= 1e-16 * max(1.0, hi):
            break
    return best if abs(_g(best, log_rp, log_children)) < 1e-6 else None


def lse_capacity(children, alpha: float) -> float:
    """log(sum_i r_i^alpha) evaluated without overflow."""
    children = [float(c) for c in children]
    if not children or any(c <= 0 for c in children):
        raise DataError("children must be non-empty and positive")
    logs = [alpha * math.log(c) for c in children]
    m = max(logs)
    return m + math.log(sum(math.exp(l - m) for l in logs))


def child_weights(children, tau: float = 0.1) -> np.ndarray:
    """Softmax weighting of child radii, logits r_i / (tau * max_j r_j)."""
    r = np.asarray(children, dtype=np.float64)
    if r.size == 0:
        raise DataError("children must be non-empty")
    logits = r / (tau * r.max())
    logits -= logits.max()
    w = np.exp(logits)
    return w / w.sum()


def alpha_predicted(r_p: float, children, candidates=None,
                    t_argmin: float = 0.05) -> float:
    """Soft-argmin exponent over a candidate grid.

    Per-candidate error is the squared log-space residual of the scaling
    relation; the prediction is the error-softmin-weighted candidate mean.
    """
    cand = np.asarray(DEFAULT_CANDIDATES if candidates is None else candidates,
                      dtype=np.float64)
    if cand.size == 0:
        raise DataError("candidate set must be non-empty")
    log_rp = math.log(float(r_p))
    errs = np.array([(a * log_rp - lse_capacity(children, a)) ** 2 for a in cand])
    logits = -errs / t_argmin
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    return float(w @ cand)


def alpha_target(r_p_um: float, table: ExponentTable) -> float:
    """Gaussian-in-log-width interpolation of the empirical exponent map."""
    if r_p_um <= 0:
        raise DataError("parent width must be positive")
    d = np.log(table.widths_um) - math.log(r_p_um)
    logits = -(d * d) / (2.0 * table.sigma_log ** 2)
    logits -= logits.max()
    w = np.exp(logits)
    w /= w.sum()
    return float(w @ table.alphas)


def fixed_table(alpha: float, cls: str = "single") -> ExponentTable:
    """Degenerate table: the same exponent at every width, sigma_log 1."""
    if alpha <= 0:
        raise DataError("alpha must be positive")
    return ExponentTable(np.array([1.0]), np.array([float(alpha)]),
                         np.array([0]), 1.0, cls, None, 0)


def build_table(records: list[BifurcationRecord], scale: float | None = None,
                cls: str | None = None, n_bootstrap: int = 1000,
                seed: int = 42) -> ExponentTable:
    """Empirical width-exponent table from bifurcation records.

    ``scale`` (um/px) converts parent radii to widths; when omitted, each
    record's own stored width in micrometers is used.  Bins span 1 um; bins
    holding fewer than 5 samples are filled by linear interpolation between
    well-populated bins (all populated bins serve as sources when none
    reaches 5 samples).  The pooled 95% CI comes from a fixed-seed
    bootstrap over the accepted per-bifurcation exponents.
    """
    if not records:
        raise DataError("no bifurcation records given")
    widths = []
    alphas = []
    for rec in records:
        a = solve_alpha(rec.r_p_px, rec.children_px)
        if a is None:
            continue
        w = rec.r_p_px * scale if scale is not None else rec.r_p_um
        widths.append(w)
        alphas.append(a)
    if not alphas:
        raise NumericalError("zero accepted Murray records")
    widths = np.asarray(widths)
    alphas = np.asarray(alphas)

    lo_bin = int(math.floor(widths.min()))
    hi_bin = int(math.floor(widths.max()))
    centers = np.arange(lo_bin, hi_bin + 1) + 0.5
    sums = np.zeros(len(centers))
    counts = np.zeros(len(centers), dtype=np.int64)
    idx = np.floor(widths).astype(int) - lo_bin
    np.add.at(sums, idx, alphas)
    np.add.at(counts, idx, 1)
    means = np.divide(sums, counts, out=np.zeros_like(sums), where=counts > 0)

    source = counts >= 5
    if not source.any():
        source = counts > 0
    fill = ~source
    if fill.any():
        means[fill] = np.interp(centers[fill], centers[source], means[source])

    sigma_log = float(np.log(widths).std())
    sigma_log = max(sigma_log, 1e-9)

    rng = np.random.default_rng(seed)
    boot = np.array([rng.choice(alphas, size=alphas.size, replace=True).mean()
                     for _ in range(n_bootstrap)])
    ci = (float(np.percentile(boot, 2.5)), float(np.percentile(boot, 97.5)))

    return ExponentTable(centers, means, counts, sigma_log,
                         cls or records[0].cls, ci, len(alphas))


def pooled_alpha(records: list[BifurcationRecord]) -> float:
    """Mean accepted exponent across records."""
    vals = [a for rec in records
            if (a := solve_alpha(rec.r_p_px, rec.children_px)) is not None]
    if not vals:
        raise NumericalError("zero accepted Murray records")
    return float(np.mean(vals))
