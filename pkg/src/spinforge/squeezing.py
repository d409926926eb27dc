"""Quadrature variances, squeezing angle, and the Wineland parameter.

Transverse quadratures are parametrized as S_psi = cos(psi) T1 - sin(psi) T2,
where (T1, T2) is the declared transverse axis pair: (Sy, Sz) for a single
ensemble with mean spin along x, or (Sy, Dz) in the two-spin measurement
frame, Dz = Sz1 - Sz2. With

    A = Var(T1) - Var(T2),  B = <T1 T2 + T2 T1> - 2<T1><T2>,  C = Var sum,

the extremal variances are V+- = [C +- sqrt(A^2+B^2)]/2, the angle
nu = atan2(B, A)/2 puts the maximum at psi = -nu and the minimum at
psi_min = pi/2 - nu (the convention under which that statement is exact).
"""

import numpy as np
from dataclasses import dataclass, field

from . import spin_core as sc

__all__ = [
    "QuadratureCorrelators", "SqueezingReport", "variances_from_correlators",
    "squeezing_parameter", "squeezing_report", "min_variance_scan",
    "tss_frame_map", "cavity_field_estimate", "transverse_moments",
    "correlators_from_state",
]


@dataclass(frozen=True)
class QuadratureCorrelators:
    """Second moments (A, B, C) in spin^2 units plus the mean spin vector."""

    A: float
    B: float
    C: float
    mean_spin: tuple = (0.0, 0.0, 0.0)
    axis_pair: str = "Sy,Sz"

    def __post_init__(self):
        scale = max(abs(self.C), 1.0)
        if self.C < abs(self.A) - 1e-9 * scale:
            raise ValueError(f"C = {self.C} < |A| = {abs(self.A)}: negative variance")
        if self.C < np.hypot(self.A, self.B) - 1e-9 * scale:
            raise ValueError("C < sqrt(A^2+B^2): V- would be negative")

    @property
    def spin_length(self):
        return float(np.linalg.norm(self.mean_spin))


@dataclass(frozen=True)
class SqueezingReport:
    """Squeezing figures at a single time."""

    V_minus: float
    V_plus: float
    psi_min: float
    xi2: float          # Wineland: N V- / |<S>|^2
    xi2_dB: float
    spin_length: float
    xi2_proj: float     # V- / (S/2) with S = N/2: fixed projection-noise norm
    xi2_proj_dB: float


def variances_from_correlators(c: QuadratureCorrelators):
    """Return (V-, V+, nu). nu defaults to 0 for an isotropic distribution."""
    r = float(np.hypot(c.A, c.B))
    V_minus = 0.5 * (c.C - r)
    V_plus = 0.5 * (c.C + r)
    nu = 0.0 if (c.A == 0.0 and c.B == 0.0) else 0.5 * np.arctan2(c.B, c.A)
    return V_minus, V_plus, nu


def min_variance_scan(c: QuadratureCorrelators, n=10001):
    """Brute-force V(psi) minimum over psi in [0, pi); oracle for V-."""
    psi = np.linspace(0.0, np.pi, n, endpoint=False)
    var_t1 = 0.5 * (c.C + c.A)
    var_t2 = 0.5 * (c.C - c.A)
    v = (np.cos(psi) ** 2 * var_t1 + np.sin(psi) ** 2 * var_t2
         - np.cos(psi) * np.sin(psi) * c.B)
    i = int(np.argmin(v))
    return float(v[i]), float(psi[i])


def squeezing_parameter(V_minus, spin_length, N):
    """Wineland parameter N V- / |<S>|^2; raises when the spin length vanishes."""
    if spin_length <= 0.0:
        raise ValueError("zero mean spin length: metrological gain undefined")
    xi2 = N * V_minus / spin_length**2
    return xi2, 10.0 * np.log10(xi2)


def squeezing_report(c: QuadratureCorrelators, N):
    V_minus, V_plus, nu = variances_from_correlators(c)
    xi2, xi2_db = squeezing_parameter(V_minus, c.spin_length, N)
    xi2_proj = V_minus / (N / 4.0)
    return SqueezingReport(
        V_minus=V_minus, V_plus=V_plus, psi_min=float(np.pi / 2 - nu),
        xi2=float(xi2), xi2_dB=float(xi2_db), spin_length=c.spin_length,
        xi2_proj=float(xi2_proj), xi2_proj_dB=float(10 * np.log10(xi2_proj)))


# ---------------------------------------------------------------------------
# moments from states
# ---------------------------------------------------------------------------

def _single_moments(state):
    ev = lambda name: sc.expectation(state, name)
    sy = ev("Sy").real
    szv = ev("Sz").real
    sx = ev("Sx").real
    syy = sc.expectation(state, sc.collective_sparse("Sy", _S_of(state)) ** 2).real
    szz = sc.expectation(state, sc.collective_sparse("Sz", _S_of(state)) ** 2).real
    Sy = sc.collective_sparse("Sy", _S_of(state))
    Sz = sc.collective_sparse("Sz", _S_of(state))
    b = sc.expectation(state, (Sy @ Sz + Sz @ Sy)).real
    return dict(Sx=sx, Sy=sy, T2=szv, var_Sy=syy - sy**2, var_T2=szz - szv**2,
                B=b - 2 * sy * szv, SpSm=ev("S+S-").real)


def _S_of(state):
    if isinstance(state, sc.DickeKet):
        return state.S
    if isinstance(state, sc.DensityOperator) and state.basis == "dicke":
        return state.meta[0]
    raise TypeError("expected a single-spin state")


def _two_ensemble_moments(state: sc.TwoEnsembleKet):
    """Measurement-frame pair (Sy_total, Dz = Sz1 - Sz2) moments, without
    actually applying the pi rotation (the correlator path)."""
    sy_state = sc.apply_collective("Sy", state, "sum")
    dz_state_1 = sc.apply_collective("Sz", state, 1)
    dz_state_2 = sc.apply_collective("Sz", state, 2)
    dz_amps = dz_state_1.amps - dz_state_2.amps
    amps = state.amps
    sy = float(np.sum(np.conj(amps) * sy_state.amps).real)
    dz = float(np.sum(np.conj(amps) * dz_amps).real)
    syy = float(np.vdot(sy_state.amps, sy_state.amps).real)
    dzz = float(np.vdot(dz_amps, dz_amps).real)
    b = float(2 * np.sum(np.conj(sy_state.amps) * dz_amps).real)
    # measurement-frame mean spin: x component is Dx = Sx1 - Sx2
    dx1 = sc.apply_collective("Sx", state, 1)
    dx2 = sc.apply_collective("Sx", state, 2)
    dx = float(np.sum(np.conj(amps) * (dx1.amps - dx2.amps)).real)
    spsm = sc.expectation(state, "S+S-").real
    return dict(Sx=dx, Sy=sy, T2=dz, var_Sy=syy - sy**2, var_T2=dzz - dz**2,
                B=b - 2 * sy * dz, SpSm=spsm)


def transverse_moments(state, pair_basis=None, packed=None):
    """Transverse moment dictionary for any supported state representation.

    For a packed pair-basis vector pass (pair_basis, packed); the rotated
    frame's (Jy, Jz) directly realize the measurement pair (Sy, Dz).
    """
    if pair_basis is not None:
        pb, v = pair_basis, packed
        ev = lambda op: float(np.vdot(v, op @ v).real)
        sy, jz = ev(pb.Jy), ev(pb.Jz)
        syy = float(np.vdot(pb.Jy @ v, pb.Jy @ v).real)
        jzz = float(np.vdot(pb.Jz @ v, pb.Jz @ v).real)
        b = float((np.vdot(v, pb.Jy @ (pb.Jz @ v)) + np.vdot(v, pb.Jz @ (pb.Jy @ v))).real)
        sx = ev(pb.Jx)
        low = pb.Jm @ v
        return dict(Sx=sx, Sy=sy, T2=jz, var_Sy=syy - sy**2, var_T2=jzz - jz**2,
                    B=b - 2 * sy * jz, SpSm=float(np.vdot(low, low).real))
    if isinstance(state, sc.TwoEnsembleKet):
        return _two_ensemble_moments(state)
    return _single_moments(state)


def correlators_from_state(state, pair_basis=None, packed=None):
    m = transverse_moments(state, pair_basis, packed)
    axis = "Sy,Dz" if (pair_basis is not None
                       or isinstance(state, sc.TwoEnsembleKet)) else "Sy,Sz"
    return QuadratureCorrelators(
        A=m["var_Sy"] - m["var_T2"], B=m["B"], C=m["var_Sy"] + m["var_T2"],
        mean_spin=(m["Sx"], m["Sy"], m["T2"]), axis_pair=axis)


def correlators_perpendicular(mean, cov, axis_pair="transverse"):
    """(A, B, C) in the plane exactly perpendicular to the mean spin.

    Collective emission tips the mean spin away from +x, so the fixed
    (Sy, Sz) pair mixes in the longitudinal direction; here the transverse
    basis (e1 ~ y, e2 = n x e1) tracks the tilt. mean and cov are the mean
    vector and symmetrized covariance in the measurement-frame (x, y, z).
    """
    mean = np.asarray(mean, dtype=float)
    cov = np.asarray(cov, dtype=float)
    norm = np.linalg.norm(mean)
    if norm <= 0:
        raise ValueError("zero mean spin: transverse plane undefined")
    n = mean / norm
    seed = np.array([0.0, 1.0, 0.0])
    if abs(n[1]) > 0.9:
        seed = np.array([0.0, 0.0, 1.0])
    e1 = seed - (seed @ n) * n
    e1 /= np.linalg.norm(e1)
    e2 = np.cross(n, e1)
    t11 = float(e1 @ cov @ e1)
    t22 = float(e2 @ cov @ e2)
    t12 = float(e1 @ cov @ e2)
    return QuadratureCorrelators(A=t11 - t22, B=2 * t12, C=t11 + t22,
                                 mean_spin=tuple(mean), axis_pair=axis_pair)


def correlators_from_records(records, i, axis_pair):
    """Build QuadratureCorrelators at time index i from a record dict.

    Uses the exact perpendicular plane whenever the full second-moment set
    (m_Sx2, m_Bxz, m_Bxy) is present; falls back to the declared fixed pair
    otherwise.
    """
    r = records
    mean = np.array([r["Sx"][i], r["Sy"][i], r["T2"][i]])
    if "m_Sx2" in r and np.linalg.norm(mean) > 0:
        vx = r["m_Sx2"][i] - mean[0] ** 2
        vy = r["var_Sy"][i]
        vz = r["var_T2"][i]
        cxy = r["m_Bxy"][i] / 2 - mean[0] * mean[1]
        cxz = r["m_Bxz"][i] / 2 - mean[0] * mean[2]
        cyz = r["B"][i] / 2
        cov = np.array([[vx, cxy, cxz], [cxy, vy, cyz], [cxz, cyz, vz]])
        return correlators_perpendicular(mean, cov, axis_pair)
    return QuadratureCorrelators(
        A=r["var_Sy"][i] - r["var_T2"][i], B=r["B"][i],
        C=r["var_Sy"][i] + r["var_T2"][i], mean_spin=tuple(mean),
        axis_pair=axis_pair)


def tss_frame_map(state_or_corr, path="auto"):
    """Map a lab-frame two-ensemble state to measurement-frame correlators.

    path='state' applies the pi rotation about y to ensemble 2 and reads
    (Sy, Sz) of the rotated state; path='correlator' substitutes Dz moments
    directly. Both agree identically; 'auto' uses the correlator path.
    """
    if isinstance(state_or_corr, QuadratureCorrelators):
        if state_or_corr.axis_pair != "Sy,Dz":
            raise ValueError("correlators already require the (Sy, Dz) pair")
        return state_or_corr
    state = state_or_corr
    if not isinstance(state, sc.TwoEnsembleKet):
        raise TypeError("tss_frame_map needs a two-ensemble input")
    if path in ("auto", "correlator"):
        return correlators_from_state(state)
    if path == "state":
        rot = sc.rotate_y(state, np.pi, ensemble=2)
        sy_state = sc.apply_collective("Sy", rot, "sum")
        sz_state = sc.apply_collective("Sz", rot, "sum")
        sx_state = sc.apply_collective("Sx", rot, "sum")
        amps = rot.amps
        sy = float(np.sum(np.conj(amps) * sy_state.amps).real)
        szv = float(np.sum(np.conj(amps) * sz_state.amps).real)
        sx = float(np.sum(np.conj(amps) * sx_state.amps).real)
        syy = float(np.vdot(sy_state.amps, sy_state.amps).real)
        szz = float(np.vdot(sz_state.amps, sz_state.amps).real)
        b = float(2 * np.sum(np.conj(sy_state.amps) * sz_state.amps).real)
        return QuadratureCorrelators(
            A=(syy - sy**2) - (szz - szv**2), B=b - 2 * sy * szv,
            C=(syy - sy**2) + (szz - szv**2),
            mean_spin=(sx, sy, szv), axis_pair="Sy,Dz")
    raise ValueError(f"unknown path {path!r}")


def cavity_field_estimate(state, g, kappa, delta_c):
    """Slaved cavity field: <a> = 2g <S->/(2 Dc + i k), <a+a> from <S+S->."""
    if delta_c == 0.0 and kappa == 0.0:
        raise ZeroDivisionError("delta_c and kappa cannot both vanish")
    pref = 2.0 / (2.0 * delta_c + 1j * kappa)
    s_minus = sc.expectation(state, "S-")
    spsm = sc.expectation(state, "S+S-").real
    a = pref * g * s_minus
    n_phot = abs(pref) ** 2 * g**2 * spsm
    return complex(a), float(n_phot)
