"""Level-set iteration certifying local boundedness of weak solutions.

Given a discrete solution on a domain containing the parabolic cylinder
Q_2 = (-4,4) x B_2, the iteration tracks shrinking cylinders
Gamma_n = (-t_n, t_n) x B_{lambda_n} and rising levels kappa_n, and fits
the geometric recursion a_{n+1} <= C0 * lam^n * a_n^{1+eps} whose
fast-convergence lemma drives the sup bound.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from sdlab.grids import GridSpec, SpaceTimeField
from sdlab.norms import NormSpec, conjugate_exponents, mixed_norm, smooth_transition


def t_seq(n: int) -> float:
    return 4.0 * (0.25 + 3.0 * 4.0 ** (-n))


def lambda_seq(n: int) -> float:
    return 1.0 + 2.0 ** (1 - n)


def kappa_seq(kappa: float, n: int) -> float:
    return kappa * (1.0 - 2.0 ** (1 - n))


@dataclass
class DeGiorgiState:
    n: int
    t_n: float
    lambda_n: float
    kappa_n: float
    ell_n: tuple
    a_n: float

    def record(self) -> dict:
        return {
            "n": self.n,
            "t_n": self.t_n,
            "lambda_n": self.lambda_n,
            "kappa_n": self.kappa_n,
            "ell_1": self.ell_n[0],
            "ell_2": self.ell_n[1],
            "ell_3": self.ell_n[2],
            "a_n": self.a_n,
        }


class CutoffLadder:
    """Smooth cutoffs eta_n: 1 on Gamma_{n+1}, 0 off Gamma_n.

    The sharpness gauge Xi = 1 + |d_t eta| + |grad eta|^2 + |grad^2 eta|
    is measured by fine 1-d sampling of the radial profiles, so the bound
    Xi_n <= C*4^n can be checked beyond the resolution of any one grid.
    """

    def __init__(self, n_max: int = 12):
        self.n_max = n_max

    def profiles(self, n: int):
        tin, tout = t_seq(n + 1), t_seq(n)
        lin, lout = lambda_seq(n + 1), lambda_seq(n)

        def time_profile(t):
            return smooth_transition(np.abs(np.asarray(t, float)), tin, tout)

        def space_profile(rho):
            return smooth_transition(np.asarray(rho, float), lin, lout)

        return time_profile, space_profile

    def field(self, grid: GridSpec, n: int) -> SpaceTimeField:
        time_profile, space_profile = self.profiles(n)
        tc = time_profile(grid.times)
        rho = np.sqrt(sum(m**2 for m in grid.meshgrid()))
        vals = tc.reshape((-1,) + (1,) * grid.spatial_dim) * space_profile(rho)[None]
        return SpaceTimeField(grid, vals, 1)

    def xi(self, n: int, dim: int = 3, samples: int = 20001) -> float:
        time_profile, space_profile = self.profiles(n)
        ts = np.linspace(0.0, t_seq(n) * 1.05, samples)
        rs = np.linspace(1e-9, lambda_seq(n) * 1.05, samples)
        dt_max = float(np.abs(np.gradient(time_profile(ts), ts)).max())
        sp = space_profile(rs)
        d1 = np.gradient(sp, rs)
        d2 = np.gradient(d1, rs)
        grad_max = float(np.abs(d1).max())
        # radial Hessian bound: |eta''| + (dim-1)|eta'|/rho, away from 0
        inner = rs > lambda_seq(n + 1)
        hess = float((np.abs(d2) + (dim - 1) * np.abs(d1) / rs)[inner].max())
        return 1.0 + dt_max + grad_max**2 + hess

    def xi_growth_constant(self, n_levels: int = 6, dim: int = 3) -> float:
        """Smallest C with xi(n) <= C*4^n over the first levels."""
        return max(self.xi(n, dim) / 4.0**n for n in range(1, n_levels + 1))


def _cylinder_mask(grid: GridSpec, t_n: float, lambda_n: float) -> np.ndarray:
    tmask = (np.abs(grid.times) < t_n).astype(float)
    rho = np.sqrt(sum(m**2 for m in grid.meshgrid()))
    smask = (rho < lambda_n).astype(float)
    return tmask.reshape((-1,) + (1,) * grid.spatial_dim) * smask[None]


def _level_norms(u: SpaceTimeField, kappa_n: float, t_n: float, lambda_n: float, rs_pairs):
    grid = u.grid
    w = np.maximum(u.values - kappa_n, 0.0) * _cylinder_mask(grid, t_n, lambda_n)
    wf = SpaceTimeField(grid, w, 1)
    return tuple(mixed_norm(wf, r, s) for r, s in rs_pairs)


def fit_recursion(a_seq) -> dict:
    """Least-squares fit of log a_{n+1} = log C0 + (n-1) log lam + (1+eps) log a_n.

    The geometric factor counts applications of the recursion starting
    from zero, matching the fast-convergence threshold below.  Only
    consecutive strictly positive pairs contribute; with fewer than three
    usable pairs the fit is under-determined and NaNs are returned.
    """
    pairs = [
        (n, a_seq[i], a_seq[i + 1])
        for i, n in enumerate(range(1, len(a_seq)))
        if a_seq[i] > 0 and a_seq[i + 1] > 0
    ]
    if len(pairs) < 3:
        return {"C0": np.nan, "lam": np.nan, "eps": np.nan, "n_pairs": len(pairs)}
    ns = np.array([p[0] for p in pairs], float)
    la = np.log([p[1] for p in pairs])
    lb = np.log([p[2] for p in pairs])
    X = np.column_stack([np.ones_like(ns), ns - 1.0, la])
    coef, *_ = np.linalg.lstsq(X, lb, rcond=None)
    return {
        "C0": float(np.exp(coef[0])),
        "lam": float(np.exp(coef[1])),
        "eps": float(coef[2] - 1.0),
        "n_pairs": len(pairs),
    }


def run_iteration(u, exponents, kappa: float, n_max: int = 12):
    """Compute the ladder of states for levels n = 1..n_max.

    ``u`` is a SolutionBundle or a scalar SpaceTimeField whose grid must
    contain Q_2 in both time and space.  Returns (states, fit).
    """
    field = u.u if hasattr(u, "u") else u
    if kappa <= 0:
        raise ValueError("kappa must be positive")
    if n_max < 2:
        raise ValueError("n_max must be at least 2")
    grid = field.grid
    if grid.time_start > -4 or grid.time_end < 4 or grid.extent / 2 < 2:
        raise ValueError("solution domain must contain Q_2 = (-4,4) x B_2")
    if len(exponents) != 3:
        raise ValueError("exactly three exponent triples expected")
    rs_pairs = [conjugate_exponents(s.alpha, s.p, s.q) for s in exponents]

    states = []
    for n in range(1, n_max + 1):
        tn, ln, kn = t_seq(n), lambda_seq(n), kappa_seq(kappa, n)
        ell = _level_norms(field, kn, tn, ln, rs_pairs)
        states.append(DeGiorgiState(n, tn, ln, kn, ell, sum(ell) / kappa))
    fit = fit_recursion([s.a_n for s in states])
    return states, fit


def sufficient_smallness(C0: float, lam: float, eps: float) -> float:
    """Fast-convergence threshold for a_1, computed in log space."""
    if not (C0 > 0 and lam > 0 and eps > 0):
        return np.nan
    return float(np.exp(-np.log(C0) / eps - np.log(lam) / eps**2))


def recursion_converges(C0: float, lam: float, eps: float, a1: float, n_terms: int = 200) -> bool:
    """Decide whether a_{n+1} = C0 lam^{n-1} a_n^{1+eps} drives a_n to 0.

    Starting exactly at the threshold a* = C0^{-1/eps} lam^{-1/eps^2} the
    trajectory is a_n = a* lam^{-(n-1)/eps}.  The log-deviation from that
    trajectory obeys e_{n+1} = (1+eps) e_n exactly, so naive floating
    iteration is unstable at the borderline (round-off is amplified
    geometrically).  We therefore track the deviation in closed form:
    the sequence converges to zero iff e_1 = log(a1/a*) <= 0, i.e. the
    geometric growth of a positive deviation eventually beats the linear
    decay of the threshold trajectory.
    """
    if a1 == 0:
        return True
    e1 = np.log(a1) - np.log(sufficient_smallness(C0, lam, eps))
    if e1 <= 0:
        return True
    # positive deviation: confirm escape within n_terms applications
    for n in range(1, n_terms + 1):
        la = (
            np.log(a1)
            - (n - 1) * np.log(lam) / eps
            + e1 * (1 + eps) ** (n - 1)
        )
        if la > 700:
            return False
    return False


def threshold_kappa(u, exponents, f_norm: float = 0.0, n_max: int = 8) -> dict:
    """Smallest kappa (within 5% relative) whose ladder certifies decay.

    Certification: a_n nonincreasing after the first level and
    a_{n_max} < 1e-8 * a_1 (or a_1 = 0).  The search is geometric so the
    result is scale-covariant in u.  Also reports the sufficient bound
    C0^{1/eps} * lam^{1/eps^2} * ||u+||_sup derived from the fitted
    recursion constants; certification failure up to 1e6*||u||_sup is
    reported rather than raised.
    """
    field = u.u if hasattr(u, "u") else u
    scale = float(np.abs(field.values).max())

    def certifies(kappa: float) -> bool:
        states, _ = run_iteration(field, exponents, kappa, n_max)
        a = [s.a_n for s in states]
        if a[0] == 0:
            return True
        dec = all(a[i + 1] <= a[i] * (1 + 1e-12) for i in range(1, len(a) - 1))
        return dec and a[-1] < 1e-8 * a[0]

    lo = 1e-6 * scale if scale > 0 else 1e-6
    hi = max(1e6 * scale, lo * 10)
    if not certifies(hi):
        return {"kappa": np.nan, "certified": False, "reason": "no kappa up to 1e6*sup|u| certifies"}
    if certifies(lo):
        return {"kappa": lo, "certified": True, "floor": True, "sufficient_bound": np.nan}

    while hi / lo > 1.05:
        mid = np.sqrt(lo * hi)
        if certifies(mid):
            hi = mid
        else:
            lo = mid
    kappa = hi

    # fit the recursion constants at a reference level where many ladder
    # entries remain positive (at the certified kappa they vanish too fast
    # for a stable regression)
    fit = {"C0": np.nan, "lam": np.nan, "eps": np.nan, "n_pairs": 0}
    for frac in (0.125, 0.25, 0.5, 1.0):
        _, cand = run_iteration(field, exponents, kappa * frac, n_max)
        if cand["n_pairs"] > fit["n_pairs"] and cand.get("eps", 0) > 0:
            fit = cand
    bound = np.nan
    if np.isfinite(fit.get("eps", np.nan)) and fit["eps"] > 0 and fit["C0"] > 0:
        from sdlab.norms import vnorm as _vnorm

        u_plus = _vnorm(
            SpaceTimeField(field.grid, np.maximum(field.values, 0.0), 1)
        )
        # theoretical constants are >= 1 by construction; a fitted value
        # below 1 reflects a faster-than-required empirical recursion and
        # would spuriously shrink the sufficient bound, so clamp
        c0 = max(fit["C0"], 1.0)
        lam = max(fit["lam"], 1.0)
        log_bound = (
            np.log(c0) / fit["eps"]
            + np.log(lam) / fit["eps"] ** 2
            + np.log(max(u_plus, 1e-300))
        )
        bound = max(float(np.exp(min(log_bound, 700.0))), f_norm)
    return {"kappa": float(kappa), "certified": True, "floor": False, "sufficient_bound": bound, "fit": fit}
