"""From a verified convergence profile back to the drift conditions.

Given an operator P, a strictly positive comparison weight psi, a
nonnegative eigenpair (eta, theta0) and a measured uniform convergence
profile zeta, this module constructs the objects that witness the
mixing-and-drift conditions: the conjugated stochastic operator R on the
support of eta, the Foster-Lyapunov function V0, a small set K as a
sublevel set of psi/eta, the weight psi1 extended off the support, and a
minorizing measure, then certifies the whole package through the
`condition_g` verifier with psi2 = eta.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .condition_g import (
    GReport,
    check_g1,
    check_g2,
    check_g3,
    check_g4,
)
from .core import (
    Measure,
    SubsetMask,
    TransferOperator,
    WeightedFunction,
)
from .spectral import PowerIterationError, power_iterate
from .transforms import HTransformRecord, h_transform


class ZetaConditionError(RuntimeError):
    """zeta_m^(1/m) <= lambda unattainable within the allowed truncations."""


class DriftSearchError(RuntimeError):
    """No admissible sublevel set produced the drift inequality."""


@dataclass(frozen=True, eq=False)
class ReciprocalInput:
    """Inputs of the reverse construction.

    ``zeta`` is the measured uniform profile (index n = 0, 1, ...); it is
    expected to decay after a burn-in. ``nu_P`` may be omitted, in which
    case the left eigenmeasure is recomputed by power iteration.
    """

    P: TransferOperator
    psi: WeightedFunction
    eta: WeightedFunction
    theta0: float
    zeta: np.ndarray
    nu_P: Measure | None = None

    def __post_init__(self):
        if np.any(self.psi.values <= 0.0):
            raise ValueError("psi must be strictly positive")
        if np.any(self.eta.values < 0.0):
            raise ValueError("eta must be nonnegative")
        if self.theta0 <= 0.0:
            raise ValueError("theta0 must be positive")
        z = np.array(self.zeta, dtype=float).reshape(-1)
        if z.size < 2 or np.any(z < 0.0):
            raise ValueError("zeta must be a nonnegative profile with >= 2 entries")
        z.flags.writeable = False
        object.__setattr__(self, "zeta", z)


@dataclass(frozen=True, eq=False)
class DriftResult:
    """Outcome of the sublevel-set drift search on the support space.

    ``passed`` is False either when no admissible level exists or when the
    drift inequality fails somewhere and only the full support qualifies
    (the degenerate case of a constant Lyapunov function); the full-space
    set is still returned so a caller can proceed and let the final
    verification decide.
    """

    K: SubsetMask
    C_R: float
    d: float
    n2: int
    passed: bool
    full_space: bool
    diagnostics: str = ""


def build_v0(
    inp: ReciprocalInput,
    m: int,
    lam: float,
    h_record: HTransformRecord | None = None,
) -> WeightedFunction:
    """Foster-Lyapunov function V0 = sum_{k<m} lam^-k R_k(psi/eta) on E'."""
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if h_record is None:
        h_record = h_transform(inp.P, inp.eta, inp.theta0, psi1=inp.psi)
    idx = h_record.support.indices
    u = inp.psi.values[idx] / inp.eta.values[idx]
    g = u.copy()
    acc = u.copy()
    R = h_record.transformed.kernel
    for _ in range(int(m) - 1):
        g = (R @ g) / lam
        acc = acc + g
    return WeightedFunction(h_record.transformed.space, acc)


def find_drift(
    v0: WeightedFunction,
    R: TransferOperator,
    rho: float,
    level: WeightedFunction,
    nu_R: Measure,
    n_max: int | None = None,
) -> DriftResult:
    """Smallest sublevel set of ``level`` outside which R contracts V0.

    Scans the grid values d of ``level`` in increasing order; a level is
    admissible when ``R V0 <= rho V0`` holds at every point above it and
    the resulting set K is reachable from ``nu_R`` within ``n_max`` steps
    (the accessibility horizon, defaulting to the space size). Returns the
    surplus constant ``C_R = max_K (R V0 - rho V0)_+`` for the chosen set.
    """
    if not 0.0 < rho < 1.0:
        raise ValueError(f"rho must lie in (0, 1), got {rho}")
    if n_max is None:
        n_max = R.space.size
    Rv = R.kernel @ v0.values
    ok = Rv <= rho * v0.values
    candidates = np.unique(level.values)
    for d in candidates:
        member = level.values <= d
        if not member.any():
            continue
        if not ok[~member].all():
            continue
        n2 = _accessibility_steps(nu_R, R, member, n_max)
        if n2 is None:
            continue
        C_R = float(max(np.max((Rv - rho * v0.values)[member]), 0.0))
        full = bool(member.all())
        degenerate = full and not ok.all()
        return DriftResult(
            K=SubsetMask(R.space, member),
            C_R=C_R,
            d=float(d),
            n2=n2,
            passed=not degenerate,
            full_space=full,
            diagnostics="full-space small set required" if degenerate else "",
        )
    raise DriftSearchError(
        "no sublevel set is reachable from nu_R within "
        f"{n_max} steps (drift holds above {candidates[-1]:g} at best)"
    )


def _accessibility_steps(nu_R, R, member, n_max):
    m = nu_R.masses.copy()
    for n in range(int(n_max) + 1):
        if float(m[member].sum()) > 0.0:
            return n
        m = m @ R.kernel
    return None


def extend_psi1(inp: ReciprocalInput, m: int, lam: float) -> WeightedFunction:
    """Weight psi1 = sum_{k<m} (lam theta0)^-k P_k psi on the full space.

    Equals eta * V0 on the support of eta and satisfies the one-step
    contraction ``P psi1 <= lam theta0 psi1`` off the support, provided the
    measured profile satisfies ``zeta_m^(1/m) <= lam`` (checked here; raise
    and retry with larger m, lambda if it fails).
    """
    if not 0.0 < lam < 1.0:
        raise ValueError(f"lambda must lie in (0, 1), got {lam}")
    if m < 1:
        raise ValueError(f"m must be >= 1, got {m}")
    if m >= inp.zeta.size:
        raise ZetaConditionError(
            f"zeta is only measured up to n = {inp.zeta.size - 1}, need zeta_{m}"
        )
    z = inp.zeta[m]
    if z > 0.0 and z ** (1.0 / m) > lam:
        raise ZetaConditionError(
            f"zeta_{m}^(1/{m}) = {z ** (1.0 / m):.6g} exceeds lambda = {lam:.6g}"
        )
    g = inp.psi.values.copy()
    acc = g.copy()
    scale = lam * inp.theta0
    for _ in range(int(m) - 1):
        g = (inp.P.kernel @ g) / scale
        acc = acc + g
    return WeightedFunction(inp.P.space, acc)


@dataclass(frozen=True, eq=False)
class ReciprocalCertificate:
    """Everything the reverse construction produced, plus the verdict.

    ``passed`` is True exactly when the final verification report is
    overall-true; ``stage`` names the first stage that failed otherwise
    ("eigenfunction", "spectral", "zeta", "find_drift", "condition-g").
    """

    passed: bool
    stage: str
    m: int
    lam: float
    rho: float
    d: float
    V0: WeightedFunction | None
    psi1: WeightedFunction | None
    K: SubsetMask | None
    nu: Measure | None
    c2: float
    C_R: float
    n2: int
    eigen_residual: float
    support: SubsetMask | None
    g_report: GReport | None
    zeta: np.ndarray | None
    diagnostics: str = ""

    def to_dict(self) -> dict:
        return {
            "overall": self.passed,
            "stage": self.stage,
            "m": self.m,
            "lambda": self.lam,
            "rho": self.rho,
            "d": self.d,
            "c2": self.c2,
            "C_R": self.C_R,
            "n2": self.n2,
            "eigen_residual": self.eigen_residual,
            "V0": None if self.V0 is None else self.V0.values.tolist(),
            "psi1": None if self.psi1 is None else self.psi1.values.tolist(),
            "K": None if self.K is None else self.K.indices.tolist(),
            "nu": None if self.nu is None else self.nu.density.tolist(),
            "support": None if self.support is None else self.support.indices.tolist(),
            "g_report": None if self.g_report is None else self.g_report.to_dict(),
            "zeta": None if self.zeta is None else self.zeta.tolist(),
            "diagnostics": self.diagnostics,
        }


def _failed(stage, inp, eigen_residual, diagnostics="", **kw):
    return ReciprocalCertificate(
        passed=False,
        stage=stage,
        m=kw.get("m", 0),
        lam=kw.get("lam", float("nan")),
        rho=kw.get("rho", float("nan")),
        d=kw.get("d", float("nan")),
        V0=kw.get("V0"),
        psi1=kw.get("psi1"),
        K=kw.get("K"),
        nu=kw.get("nu"),
        c2=kw.get("c2", float("nan")),
        C_R=kw.get("C_R", float("nan")),
        n2=kw.get("n2", -1),
        eigen_residual=eigen_residual,
        support=kw.get("support"),
        g_report=kw.get("g_report"),
        zeta=inp.zeta,
        diagnostics=diagnostics,
    )


def certify(
    inp: ReciprocalInput,
    m: int = 8,
    lam: float = 0.9,
    rho: float = 0.95,
    m_max: int = 128,
    eigen_rtol: float = 1e-8,
    n1: int | None = None,
    n_g3: int = 100,
    n_g4: int = 100,
    tol: float = 1e-12,
) -> ReciprocalCertificate:
    """Run the full reverse pipeline and verify the resulting package.

    Stages: validate that (eta, theta0) really is an eigenpair at relative
    residual ``eigen_rtol`` (a fabricated eigenfunction must never produce a
    passing certificate), recover nu_P if absent, conjugate to the
    stochastic operator on the support, build V0, locate the small set and
    the surplus constant, extend psi1 to the full space, assemble the
    minorizing measure, and check (G1)-(G4) with psi2 = eta. On failure the
    parameters back off geometrically (m doubles; lambda and rho move
    halfway to 1) until ``m_max`` is exhausted.

    ``n1`` fixes the minorization horizon; when omitted it is searched in
    doubling steps until the certificate mass is positive (banded kernels
    need roughly the diameter of K).
    """
    P, psi, eta, theta0 = inp.P, inp.psi, inp.eta, inp.theta0
    resid = (
        float(np.max(np.abs(P.kernel @ eta.values - theta0 * eta.values) / psi.values))
        / theta0
    )
    if resid > eigen_rtol:
        return _failed(
            "eigenfunction",
            inp,
            resid,
            diagnostics=f"eigen residual {resid:.3e} exceeds {eigen_rtol:g}",
        )

    if inp.nu_P is not None:
        nu_P = inp.nu_P
    else:
        try:
            triple = power_iterate(P, psi, tol=tol)
        except PowerIterationError as err:
            return _failed("spectral", inp, resid, diagnostics=str(err))
        if abs(triple.theta0 - theta0) > 1e-6 * theta0:
            return _failed(
                "spectral",
                inp,
                resid,
                diagnostics=(
                    f"dominant eigenvalue {triple.theta0:.12g} disagrees with "
                    f"the supplied theta0 = {theta0:.12g}"
                ),
            )
        nu_P = triple.nu_P

    H = h_transform(P, eta, theta0, psi1=psi)
    idx = H.support.indices
    sub_space = H.transformed.space
    u = WeightedFunction(sub_space, psi.values[idx] / eta.values[idx])
    nu_R = Measure(sub_space, eta.values[idx] * nu_P.density[idx])
    if nu_R.total_mass() <= 0.0:
        return _failed(
            "spectral", inp, resid, diagnostics="nu_P gives no mass to the support"
        )

    attempted = False
    last = None
    while m <= m_max:
        if m >= inp.zeta.size or (
            inp.zeta[m] > 0.0 and inp.zeta[m] ** (1.0 / m) > lam
        ):
            m, lam, rho = 2 * m, (1 + lam) / 2, (1 + rho) / 2
            continue
        attempted = True
        V0 = build_v0(inp, m, lam, h_record=H)
        try:
            drift = find_drift(V0, H.transformed, rho, u, nu_R)
        except DriftSearchError as err:
            last = _failed(
                "find_drift", inp, resid, diagnostics=str(err), m=m, lam=lam, rho=rho
            )
            m, lam, rho = 2 * m, (1 + lam) / 2, (1 + rho) / 2
            continue
        psi1 = extend_psi1(inp, m, lam)
        K_full = SubsetMask.from_indices(P.space, idx[drift.K.member])
        nu = _minorizing_measure(inp, H, nu_R, drift)
        g1 = _search_g1(P, K_full, psi1, n1)
        g_report = GReport(
            g1=g1,
            g2=check_g2(P, K_full, psi1, eta),
            g3=check_g3(P, K_full, psi1, n_g3),
            g4=check_g4(P, K_full, psi1, n_g4),
        )
        cert = ReciprocalCertificate(
            passed=g_report.overall,
            stage="ok" if g_report.overall else "condition-g",
            m=m,
            lam=lam,
            rho=rho,
            d=drift.d,
            V0=V0,
            psi1=psi1,
            K=K_full,
            nu=nu,
            c2=g_report.g2.c2,
            C_R=drift.C_R,
            n2=drift.n2,
            eigen_residual=resid,
            support=H.support,
            g_report=g_report,
            zeta=inp.zeta,
            diagnostics=drift.diagnostics,
        )
        if cert.passed:
            return cert
        last = cert
        m, lam, rho = 2 * m, (1 + lam) / 2, (1 + rho) / 2
    if not attempted:
        raise ZetaConditionError(
            f"zeta_m^(1/m) <= lambda unattainable for any m <= {m_max} "
            f"(profile length {inp.zeta.size})"
        )
    return last


def _search_g1(P, K_full, psi1, n1):
    if n1 is not None:
        return check_g1(P, K_full, psi1, n1)
    cand = 1
    best = None
    while cand <= 2 * P.space.size:
        best = check_g1(P, K_full, psi1, cand)
        if best.passed:
            return best
        cand *= 2
    return best


def _minorizing_measure(inp, H, nu_R, drift):
    """nu = (psi / (a eta)) 1_K d(nu_R R_n2), normalized to a probability."""
    idx = H.support.indices
    m = nu_R.masses.copy()
    for _ in range(drift.n2):
        m = m @ H.transformed.kernel
    inside = drift.K.member
    a = float(m[inside].sum())
    density_sub = np.zeros(idx.size)
    w_sub = H.transformed.space.ref_weights
    u = inp.psi.values[idx] / inp.eta.values[idx]
    density_sub[inside] = (u[inside] / a) * (m[inside] / w_sub[inside])
    density = np.zeros(inp.P.space.size)
    density[idx] = density_sub
    return Measure(inp.P.space, density).normalized()
