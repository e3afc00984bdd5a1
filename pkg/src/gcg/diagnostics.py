"""Convergence-theory constants and post-hoc rate verification.

The solver in :mod:`gcg.core` produces a history of objective values and
gap certificates.  This module turns that history into checkable claims:
a sublinear decay envelope that every run must respect, a geometric rate
constant for problems with quadratic growth, improved sublinear constants
driven by a scalar recursion, and least-squares fits for the observed
decay rate and the growth exponent of the adjoint level sets.

Everything here is pure arithmetic on floats and small arrays; nothing
touches the PDE layer.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

__all__ = [
    "RateConstants",
    "check_envelope",
    "envelope_q",
    "fit_kappa",
    "fit_rate",
    "linear_lambda",
    "rate_constants",
    "rate_fit_window",
    "recursion_oracle_44",
    "recursion_oracle_48",
    "report_lines",
    "residuals_from_history",
    "select_growth_bins",
    "sublinear_constants",
]


def _require_positive(**kwargs: float) -> None:
    for name, value in kwargs.items():
        if not math.isfinite(value) or value <= 0.0:
            raise ValueError(f"{name} must be positive and finite, got {value!r}")


def envelope_q(r0: float, alpha: float, gamma: float, L: float, mstar: float) -> float:
    """Decay constant of the sublinear envelope r0 / (1 + q k).

    q = alpha * min{ (1-alpha) * gamma * r0 / (2 L mstar^2), 1 }.

    ``r0`` is the initial objective residual, ``L`` the curvature bound of
    the smooth part along the iterate segments, and ``mstar`` a bound on
    the dual norms of all iterates and oracle directions.  The min clamps
    at 1, so q <= alpha <= 1/2 always.
    """
    _require_positive(r0=r0, alpha=alpha, gamma=gamma, L=L, mstar=mstar)
    if alpha > 0.5:
        raise ValueError(f"alpha must lie in (0, 1/2], got {alpha!r}")
    if gamma >= 1.0:
        raise ValueError(f"gamma must lie in (0, 1), got {gamma!r}")
    return float(alpha * min((1.0 - alpha) * gamma * r0 / (2.0 * L * mstar * mstar), 1.0))


def residuals_from_history(history, j_ref: float) -> np.ndarray:
    """Objective residuals j(u^k) - j_ref for each record of a solve history."""
    return np.array([record.j_value for record in history], dtype=float) - j_ref


def check_envelope(
    residuals, q: float, eps_fp: float = 0.0
) -> tuple[bool, int | None]:
    """Verify r_k <= r_0 / (1 + q k) + eps_fp for every k.

    Returns ``(True, None)`` when the envelope holds, otherwise
    ``(False, k)`` with the first violating index.  The k-th entry of
    ``residuals`` is read as the residual of iterate k.
    """
    r = np.asarray(residuals, dtype=float)
    if r.size == 0:
        return True, None
    _require_positive(q=q)
    k = np.arange(r.size)
    bound = r[0] / (1.0 + q * k) + eps_fp
    bad = np.nonzero(r > bound)[0]
    if bad.size:
        return False, int(bad[0])
    return True, None


def linear_lambda(alpha: float, gamma: float, L: float, cbar: float) -> float:
    """Geometric rate constant max{1 - 2 alpha gamma (1-alpha) / (L cbar^2), 1-alpha}.

    Valid for problems whose solution satisfies a quadratic growth
    condition.  The value can reach or exceed 1 when the supplied
    constants are inconsistent; the caller decides whether that is fatal.
    """
    _require_positive(alpha=alpha, gamma=gamma, L=L, cbar=cbar)
    first = 1.0 - 2.0 * alpha * gamma * (1.0 - alpha) / (L * cbar * cbar)
    return max(first, 1.0 - alpha)


def sublinear_constants(
    delta: float, exponent_beta: float, C: float, rK: float
) -> tuple[float, float]:
    """Constants (n, M) of the improved sublinear bound M / (k + n)^(1/beta).

    n = (2 - (1/delta)^beta) / ((1/delta)^beta - 1)
    M = max{ rK * n^(1/beta),
             1 / (delta * ((beta - (1-beta)(2^beta - 1)) * C)^(1/beta)) }

    ``rK`` is the residual at the first iterate where it drops to 1 or
    below.  n is positive exactly when (1/delta)^beta < 2; a negative n
    is returned as computed so the caller can detect the regime.
    """
    if not 0.5 <= delta < 1.0:
        raise ValueError(f"delta must lie in [1/2, 1), got {delta!r}")
    if not 0.0 < exponent_beta < 1.0:
        raise ValueError(f"exponent_beta must lie in (0, 1), got {exponent_beta!r}")
    _require_positive(C=C)
    if rK < 0.0 or not math.isfinite(rK):
        raise ValueError(f"rK must be nonnegative, got {rK!r}")
    beta = exponent_beta
    growth = (1.0 / delta) ** beta
    n = (2.0 - growth) / (growth - 1.0)
    base = (beta - (1.0 - beta) * (2.0**beta - 1.0)) * C
    if base <= 0.0:
        raise ValueError(
            f"recursion constant base is nonpositive ({base!r}); "
            "the bound constants are not real for these parameters"
        )
    m_left = rK * n ** (1.0 / beta) if n > 0.0 else float("-inf")
    m_right = 1.0 / (delta * base ** (1.0 / beta))
    return n, max(m_left, m_right)


def recursion_oracle_44(q: float, steps: int) -> np.ndarray:
    """Extremal sequence of the recursion h_{k+1} = h_k - q h_k^2, h_0 = 1.

    The generated sequence is the worst case among all sequences with
    h_{k+1} <= (1 - q h_k) h_k and serves as a test harness for the decay
    bound h_k <= 1 / (1 + q k).
    """
    if not 0.0 < q <= 1.0:
        raise ValueError(f"q must lie in (0, 1], got {q!r}")
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    h = np.empty(steps + 1)
    h[0] = 1.0
    for k in range(steps):
        h[k + 1] = h[k] - q * h[k] * h[k]
    return h


def recursion_oracle_48(
    delta: float,
    C: float,
    exponent_beta: float,
    steps: int,
    h0: float = 1.0,
) -> tuple[np.ndarray, int | None]:
    """Extremal sequence of h_{k+1} = max{delta, 1 - C h_k^beta} h_k with its bound check.

    Iterates the recursion from ``h0`` and checks h_k <= M / (k + n)^(1/beta)
    with (n, M) from :func:`sublinear_constants` at rK = h0.  Returns the
    sequence and the first index violating the bound (``None`` if it holds
    throughout).

    The bound is guaranteed in the slow-start regime C * h0^beta < 1 - delta,
    where the max is attained by the delta branch at the start.  Outside that
    regime the stated constants can fail by a small margin at early indices,
    so callers probing the bound should draw parameters from the slow-start
    region.
    """
    if steps < 0:
        raise ValueError("steps must be nonnegative")
    if h0 < 0.0 or not math.isfinite(h0):
        raise ValueError(f"h0 must be nonnegative, got {h0!r}")
    beta = exponent_beta
    n, M = sublinear_constants(delta, beta, C, h0)
    h = np.empty(steps + 1)
    h[0] = h0
    for k in range(steps):
        h[k + 1] = max(delta, 1.0 - C * h[k] ** beta) * h[k]
    violation = None
    for k in range(steps + 1):
        shifted = k + n
        if shifted <= 0.0:
            violation = k
            break
        if h[k] > M / shifted ** (1.0 / beta):
            violation = k
            break
    return h, violation


def rate_fit_window(
    residuals,
    eps_fp: float = 0.0,
    tail_decades: float = 2.0,
    burn_in: float = 0.2,
) -> np.ndarray:
    """Indices of the residual history suitable for an asymptotic rate fit.

    Three cuts are applied in order.  Records at or below ``10 * eps_fp``
    carry no signal and are dropped.  Records within ``tail_decades``
    decades of the smallest positive residual are dropped because the
    reference value, taken from the end of the tightest run, contaminates
    them.  Finally the first ``burn_in`` fraction of the remaining records
    is dropped as transient: a solve started far from the solution spends
    its first iterations in a regime whose decay says nothing about the
    asymptotic rate.
    """
    if not 0.0 <= burn_in < 1.0:
        raise ValueError(f"burn_in must lie in [0, 1), got {burn_in!r}")
    r = np.asarray(residuals, dtype=float)
    positive = r > 0.0
    if not positive.any():
        return np.empty(0, dtype=int)
    floor = r[positive].min() * 10.0**tail_decades
    keep = np.nonzero((r > 10.0 * eps_fp) & (r >= floor))[0]
    drop = int(np.floor(burn_in * keep.size))
    return keep[drop:]


def fit_rate(residuals, eps_fp: float = 0.0) -> tuple[float, float]:
    """Least-squares geometric decay rate of a residual sequence.

    Fits log r_k = k log(lambda) + const over the records with
    r_k > 10 * eps_fp and returns ``(lambda_hat, r_squared)``.  The array
    position is taken as the iteration number.  Residual histories are
    nonincreasing, so the windows produced by :func:`rate_fit_window` are
    contiguous and ``residuals[window]`` preserves the iteration spacing;
    the fitted rate is then per iteration as expected.
    """
    r = np.asarray(residuals, dtype=float)
    usable = np.nonzero(r > 10.0 * eps_fp)[0]
    if usable.size < 5:
        raise ValueError(
            f"rate fit needs at least 5 usable records, got {usable.size}"
        )
    k = usable.astype(float)
    y = np.log(r[usable])
    slope, intercept = np.polyfit(k, y, 1)
    pred = slope * k + intercept
    ss_res = float(np.sum((y - pred) ** 2))
    ss_tot = float(np.sum((y - y.mean()) ** 2))
    r_squared = 1.0 if ss_tot == 0.0 else 1.0 - ss_res / ss_tot
    return float(np.exp(slope)), r_squared


def select_growth_bins(
    epsilons, measures, quantum: float
) -> tuple[np.ndarray, np.ndarray]:
    """Filter level-set measure samples down to the scaling regime.

    A bin is kept when its measure contains at least 4 mesh quanta (below
    that the count is dominated by discretization) and stays under half
    the largest sampled measure (above that the level set saturates
    toward the whole domain and the power law is trivially satisfied).
    """
    _require_positive(quantum=quantum)
    eps = np.asarray(epsilons, dtype=float)
    meas = np.asarray(measures, dtype=float)
    if eps.shape != meas.shape:
        raise ValueError("epsilons and measures must have matching shapes")
    if meas.size == 0:
        return eps, meas
    keep = (meas >= 4.0 * quantum) & (meas < 0.5 * meas.max())
    return eps[keep], meas[keep]


def fit_kappa(epsilons, measures) -> float | None:
    """Least-squares log-log slope of level-set measures against epsilon.

    Estimates kappa in meas{ level set at eps } ~ C eps^kappa.  Returns
    ``None`` when every measure is zero (the growth assumption holds
    vacuously).  Requires at least 4 nonzero samples otherwise.
    """
    eps = np.asarray(epsilons, dtype=float)
    meas = np.asarray(measures, dtype=float)
    if eps.shape != meas.shape:
        raise ValueError("epsilons and measures must have matching shapes")
    nonzero = meas > 0.0
    if not nonzero.any():
        return None
    if nonzero.sum() < 4:
        raise ValueError(
            f"kappa fit needs at least 4 nonzero measures, got {int(nonzero.sum())}"
        )
    x = np.log(eps[nonzero])
    y = np.log(meas[nonzero])
    slope, _ = np.polyfit(x, y, 1)
    return float(slope)


@dataclass(frozen=True)
class RateConstants:
    """Bundle of every constant the convergence theory attaches to a run.

    ``q_env`` drives the unconditional envelope r0 / (1 + q k).  When the
    growth exponent ``q_growth`` equals 2 the geometric rate
    ``linear_rate`` applies; for ``q_growth`` > 2 the recursion constants
    (``C_rec``, ``n_rec``, ``M_rec``) yield the improved sublinear bound
    with exponent 1/``exponent_beta``.  ``c1``, ``c2`` couple iterate
    errors to residuals, ``cbar`` is their sum.
    """

    q_env: float
    linear_rate: float
    delta: float
    exponent_beta: float | None
    C_rec: float | None
    n_rec: float | None
    M_rec: float | None
    c1: float
    c2: float
    cbar: float
    L_est: float
    mstar: float
    theta_hat: float
    q_growth: float


def rate_constants(
    r0: float,
    alpha: float,
    gamma: float,
    L_est: float,
    mstar: float,
    theta_hat: float,
    kappa_hat: float,
    rK: float | None = None,
) -> RateConstants:
    """Assemble :class:`RateConstants` from measured run quantities.

    ``theta_hat`` is the empirical growth constant (the spot-check
    minimum) and ``kappa_hat`` the fitted level-set exponent; the growth
    power is q = 1 + 1/kappa_hat.  The recursion constants are populated
    only when q > 2 and the derived exponent lies in (0, 1); otherwise
    the geometric branch applies and they are ``None``.  ``rK`` defaults
    to min(r0, 1), the residual scale at which the improved bound takes
    over.
    """
    _require_positive(theta_hat=theta_hat, kappa_hat=kappa_hat)
    q = 1.0 + 1.0 / kappa_hat
    c1 = (1.0 / theta_hat) ** (1.0 / q)
    c2 = (L_est / theta_hat) ** (1.0 / (q - 1.0)) * (1.0 / theta_hat) ** (
        1.0 / (q * (q - 1.0))
    )
    cbar = c1 + c2
    delta = 1.0 - alpha
    beta = 1.0 - 2.0 / (q * (q - 1.0))
    C = 2.0 * alpha * gamma * (1.0 - alpha) / (L_est * cbar * cbar)
    if rK is None:
        rK = min(r0, 1.0)
    if 0.0 < beta < 1.0:
        n_rec, M_rec = sublinear_constants(delta, beta, C, rK)
        exponent: float | None = beta
        C_out: float | None = C
    else:
        n_rec = M_rec = exponent = C_out = None
    return RateConstants(
        q_env=envelope_q(r0, alpha, gamma, L_est, mstar),
        linear_rate=linear_lambda(alpha, gamma, L_est, cbar),
        delta=delta,
        exponent_beta=exponent,
        C_rec=C_out,
        n_rec=n_rec,
        M_rec=M_rec,
        c1=c1,
        c2=c2,
        cbar=cbar,
        L_est=L_est,
        mstar=mstar,
        theta_hat=theta_hat,
        q_growth=q,
    )


def report_lines(constants: RateConstants) -> list[str]:
    """Render the constants as one "name = value" line each."""
    lines = []
    for name in (
        "q_env",
        "linear_rate",
        "delta",
        "exponent_beta",
        "C_rec",
        "n_rec",
        "M_rec",
        "c1",
        "c2",
        "cbar",
        "L_est",
        "mstar",
        "theta_hat",
        "q_growth",
    ):
        value = getattr(constants, name)
        rendered = "n/a" if value is None else repr(float(value))
        lines.append(f"{name} = {rendered}")
    return lines
