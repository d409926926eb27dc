"""Exact evolution under the effective spin models: dense master equation,
truncated-manifold unitary and dissipative evolution, and Monte Carlo
wavefunction (quantum trajectory) unraveling.

Hamiltonians (chi is signed; Gamma >= 0):
    oat              chi S+S-  (single ensemble, S = N/2)
    oat_twist_only   chi Sz^2  (default twisting form; the closed-form
                     correlators hold for it exactly, and xi^2 agrees with
                     the chi S+S- variant, which differs only by a frame
                     rotation about z and a twist-sign flip)
    tss_rotated      chi [(Sx1-Sx2)^2 + (Sy1+Sy2)^2]
    tss_rotated_exact  the exact frame transform, adding (Sz1-Sz2)
    tss_sy_only      chi (Sy1+Sy2)^2
    tss_lab          chi S+S- over two ensembles in the product basis
Jumps (the dissipator is Gamma [L0 rho L0+ - {L0+ L0, rho}/2], matching the
doubled-form master term (G/2)(2 L0 rho L0+ - ...); operators below therefore
carry sqrt(Gamma)):
    collective_emission     S-
    rotated_frame_full      (Sx1-Sx2) - i(Sy1+Sy2)
    rotated_frame_sy_only   (Sy1+Sy2)
    lab_collective          S1- + S2-
"""

import json
import os
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .integrate import DormandPrince45, solve_to
from .pair_basis import PairBasis
from .spin_core import SpinLength, coherent_state, collective_sparse

__all__ = [
    "LindbladSpec", "EvolutionResult", "DimensionError",
    "evolve_oat_master", "evolve_tss_unitary_truncated",
    "evolve_tss_master_truncated", "evolve_tss_lab", "trajectory_unravel",
    "xi2_batch_standard_error", "oat_mixture_number_fluct",
    "tss_mixture_number_fluct",
]

DEFAULT_BUDGET_GIB = 2.0
_HAMILTONIANS = ("oat", "oat_twist_only", "tss_rotated", "tss_rotated_exact",
                 "tss_sy_only", "tss_lab")
_JUMPS = ("collective_emission", "rotated_frame_full",
          "rotated_frame_sy_only", "lab_collective")


class DimensionError(ValueError):
    """Raised when a dense representation would exceed its configured cap."""


def _budget_bytes():
    gib = float(os.environ.get("SPINFORGE_BUDGET_GIB", DEFAULT_BUDGET_GIB))
    return gib * 2**30


@dataclass(frozen=True)
class LindbladSpec:
    """Model selector: Hamiltonian kind, jump kinds, rates, and system size."""

    hamiltonian: str
    jumps: tuple
    N: int
    chi: float
    gamma: float = 0.0
    n_trunc: int = 5

    def __post_init__(self):
        if self.hamiltonian not in _HAMILTONIANS:
            raise ValueError(f"unknown hamiltonian {self.hamiltonian!r}")
        for j in self.jumps:
            if j not in _JUMPS:
                raise ValueError(f"unknown jump {j!r}")
        if self.gamma < 0:
            raise ValueError("gamma must be >= 0 (chi may have either sign)")
        if self.hamiltonian.startswith("tss") and self.N % 2:
            raise ValueError("two-spin models need even N")

    def build(self):
        if self.hamiltonian in ("oat", "oat_twist_only"):
            return _SingleDickeOps(self)
        if self.hamiltonian == "tss_lab":
            return _LabPairOps(self)
        return _RotatedPairOps(self.hamiltonian, self.jumps, self.N // 2,
                               self.N // 2, self.n_trunc, self.chi, self.gamma)


# ---------------------------------------------------------------------------
# operator bundles (Hamiltonian, jumps, initial state, moment extraction)
# ---------------------------------------------------------------------------

class _SingleDickeOps:
    axis_pair = "Sy,Sz"

    def __init__(self, spec):
        self.spec = spec
        self.S = SpinLength(spec.N)  # twice_S = N, so S = N/2
        s = self.S.value
        m = self.S.m_values
        self.m = m
        # cp[i] = <m_{i+1}|S+|m_i>, padded with 0 at the top
        self.cp = np.concatenate(
            [np.sqrt(s * (s + 1) - m[:-1] * (m[:-1] + 1)), [0.0]])
        # cm[i] = lowering amplitude out of level i
        self.cm = np.sqrt(s * (s + 1) - m * (m - 1))
        self.lam = (m**2 if spec.hamiltonian == "oat_twist_only"
                    else s * (s + 1) - m * (m - 1))
        self.dim = self.S.dim

    def hamiltonian(self):
        return sp.diags(self.spec.chi * self.lam).tocsr()

    def jump_ops(self):
        if self.spec.gamma == 0 or not self.spec.jumps:
            return []
        if tuple(self.spec.jumps) != ("collective_emission",):
            raise ValueError("single-ensemble models take the collective_emission jump")
        return [collective_sparse("S-", self.S) * np.sqrt(self.spec.gamma)]

    def psi0(self):
        return coherent_state(self.S, (1.0, 0.0, 0.0)).amps.astype(complex)

    def moments_diagonals(self, d0, d1, d2):
        """Moments from the upper diagonals u_k[i] = rho[i, i+k].

        Includes the full second-moment set (m_Sx2, m_Bxz, m_Bxy) so the
        squeezing can be evaluated in the plane perpendicular to the
        instantaneous mean spin, which tilts under collective emission.
        """
        m, cp = self.m, self.cp
        tr = float(np.sum(d0).real)
        sz = float(np.sum(m * d0.real))
        sz2 = float(np.sum(m**2 * d0.real))
        spsm = float(np.sum(self.cm**2 * d0.real))
        smsp = float(np.sum(cp**2 * d0.real))
        sp1 = complex(np.sum(cp[:-1] * d1))
        sp2 = complex(np.sum(cp[:-2] * cp[1:-1] * d2))
        sy2 = (spsm + smsp - 2 * sp2.real) / 4.0
        sx2 = (spsm + smsp + 2 * sp2.real) / 4.0
        x = complex(np.sum(cp[:-1] * (m[:-1] + m[1:]) * d1))
        return dict(Sx=sp1.real, Sy=sp1.imag, T2=sz, m_Sy2=sy2, m_T22=sz2,
                    m_Bsym=x.imag, SpSm=spsm, trace=tr,
                    m_Sx2=sx2, m_Bxz=x.real, m_Bxy=sp2.imag)

    def moments_psi(self, psi):
        d0 = (np.conj(psi) * psi)
        d1 = psi[:-1] * np.conj(psi[1:])
        d2 = psi[:-2] * np.conj(psi[2:])
        return self.moments_diagonals(d0, d1, d2)

    def moments_rho(self, rho):
        return self.moments_diagonals(np.diagonal(rho).copy(),
                                      np.diagonal(rho, 1).copy(),
                                      np.diagonal(rho, 2).copy())

    def extra_psi(self, psi):
        return {}


def _rotated_op_cache(pb):
    return {
        "Jy": pb.Jy, "Jz": pb.Jz, "Jx": pb.Jx,
        "Jy2": (pb.Jy @ pb.Jy).tocsr(),
        "Jz2": (pb.Jz @ pb.Jz).tocsr(),
        "Jx2": (pb.Jx @ pb.Jx).tocsr(),
        "Byz": (pb.Jy @ pb.Jz + pb.Jz @ pb.Jy).tocsr(),
        "Bxz": (pb.Jx @ pb.Jz + pb.Jz @ pb.Jx).tocsr(),
        "Bxy": (pb.Jx @ pb.Jy + pb.Jy @ pb.Jx).tocsr(),
        "Slab_minus": (pb.Kx - 1j * pb.Jy).tocsr(),
    }


class _RotatedPairOps:
    """Rotated-frame two-spin operators over a (possibly asymmetric) pair basis.

    The rotated frame is the measurement frame: (Jy, Jz) here realize the
    (Sy, Dz) pair of the back-to-back picture, and the lab coherence S+S-
    maps to the rotated lowering operator (Sx1-Sx2) - i(Sy1+Sy2).
    """

    axis_pair = "Sy,Dz"

    def __init__(self, hamiltonian, jumps, twice_j1, twice_j2, n_trunc, chi, gamma):
        self.kind = hamiltonian
        self.jumps = tuple(jumps)
        self.chi = chi
        self.gamma = gamma
        self.pb = PairBasis(twice_j1, twice_j2, n_trunc)
        self.dim = self.pb.dim
        self._H = self.pb.hamiltonian(hamiltonian, chi)
        self._ops = _rotated_op_cache(self.pb)
        o = self._ops["Slab_minus"]
        self._ops["SpSm"] = (o.conj().T @ o).tocsr()

    def hamiltonian(self):
        return self._H

    def jump_ops(self):
        if self.gamma == 0 or not self.jumps:
            return []
        return [self.pb.jump(kind, self.gamma) for kind in self.jumps]

    def psi0(self):
        return self.pb.stretched_x()

    def moments_psi(self, psi):
        ops = self._ops
        ev = lambda o: float(np.vdot(psi, o @ psi).real)
        low = ops["Slab_minus"] @ psi
        row = dict(Sx=ev(ops["Jx"]), Sy=ev(ops["Jy"]), T2=ev(ops["Jz"]),
                   m_Sy2=ev(ops["Jy2"]), m_T22=ev(ops["Jz2"]),
                   m_Bsym=ev(ops["Byz"]), SpSm=float(np.vdot(low, low).real),
                   trace=float(np.vdot(psi, psi).real),
                   m_Sx2=ev(ops["Jx2"]), m_Bxz=ev(ops["Bxz"]),
                   m_Bxy=ev(ops["Bxy"]))
        for k, pop in enumerate(self.pb.block_populations(psi)):
            row[f"pop_block_{k}"] = pop
        return row

    def moments_rho(self, rho):
        ops = self._ops
        tr = lambda o: float((o.multiply(rho.T)).sum().real)
        return dict(Sx=tr(ops["Jx"]), Sy=tr(ops["Jy"]), T2=tr(ops["Jz"]),
                    m_Sy2=tr(ops["Jy2"]), m_T22=tr(ops["Jz2"]),
                    m_Bsym=tr(ops["Byz"]), SpSm=tr(ops["SpSm"]),
                    trace=float(np.trace(rho).real),
                    m_Sx2=tr(ops["Jx2"]), m_Bxz=tr(ops["Bxz"]),
                    m_Bxy=tr(ops["Bxy"]))

    def extra_psi(self, psi):
        return {"block_populations": self.pb.block_populations(psi)}

    def extra_rho(self, rho):
        pops = [float(np.trace(rho[self.pb.block_slice(k),
                                   self.pb.block_slice(k)]).real)
                for k in range(self.pb.n_blocks)]
        return {"block_populations": np.array(pops)}


class _LabPairOps:
    """Two-ensemble product basis; correlators in the measurement frame."""

    axis_pair = "Sy,Dz"

    def __init__(self, spec):
        self.spec = spec
        tj = spec.N // 2
        self.j1, self.j2 = SpinLength(tj), SpinLength(tj)
        d1, d2 = self.j1.dim, self.j2.dim
        self.dim = d1 * d2
        eye1 = sp.identity(d1, format="csr")
        eye2 = sp.identity(d2, format="csr")

        def pair(name, sign):
            return (sp.kron(collective_sparse(name, self.j1), eye2) +
                    sign * sp.kron(eye1, collective_sparse(name, self.j2))).tocsr()

        self.Sp, self.Sm = pair("S+", +1), pair("S-", +1)
        self.Sy, self.Sz = pair("Sy", +1), pair("Sz", +1)
        self.Dz, self.Dx = pair("Sz", -1), pair("Sx", -1)
        self._ops = {
            "Sy2": (self.Sy @ self.Sy).tocsr(),
            "Dz2": (self.Dz @ self.Dz).tocsr(),
            "Dx2": (self.Dx @ self.Dx).tocsr(),
            "Byz": (self.Sy @ self.Dz + self.Dz @ self.Sy).tocsr(),
            "Bxz": (self.Dx @ self.Dz + self.Dz @ self.Dx).tocsr(),
            "Bxy": (self.Dx @ self.Sy + self.Sy @ self.Dx).tocsr(),
            "SpSm": (self.Sp @ self.Sm).tocsr(),
        }
        self._H = self._ops["SpSm"] * spec.chi

    def hamiltonian(self):
        return self._H

    def jump_ops(self):
        if self.spec.gamma == 0 or not self.spec.jumps:
            return []
        if tuple(self.spec.jumps) != ("lab_collective",):
            raise ValueError("lab-frame models take the lab_collective jump")
        return [self.Sm * np.sqrt(self.spec.gamma)]

    def psi0(self):
        a = coherent_state(self.j1, (1.0, 0.0, 0.0)).amps
        b = coherent_state(self.j2, (-1.0, 0.0, 0.0)).amps
        return np.kron(a, b).astype(complex)

    def moments_psi(self, psi):
        ev = lambda o: float(np.vdot(psi, o @ psi).real)
        return dict(Sx=ev(self.Dx), Sy=ev(self.Sy), T2=ev(self.Dz),
                    m_Sy2=ev(self._ops["Sy2"]), m_T22=ev(self._ops["Dz2"]),
                    m_Bsym=ev(self._ops["Byz"]), SpSm=ev(self._ops["SpSm"]),
                    trace=float(np.vdot(psi, psi).real),
                    Sz_total_lab=ev(self.Sz), m_Sx2=ev(self._ops["Dx2"]),
                    m_Bxz=ev(self._ops["Bxz"]), m_Bxy=ev(self._ops["Bxy"]))

    def moments_rho(self, rho):
        tr = lambda o: float((o.multiply(rho.T)).sum().real)
        return dict(Sx=tr(self.Dx), Sy=tr(self.Sy), T2=tr(self.Dz),
                    m_Sy2=tr(self._ops["Sy2"]), m_T22=tr(self._ops["Dz2"]),
                    m_Bsym=tr(self._ops["Byz"]), SpSm=tr(self._ops["SpSm"]),
                    trace=float(np.trace(rho).real),
                    Sz_total_lab=tr(self.Sz), m_Sx2=tr(self._ops["Dx2"]),
                    m_Bxz=tr(self._ops["Bxz"]), m_Bxy=tr(self._ops["Bxy"]))

    def extra_psi(self, psi):
        return {}


# ---------------------------------------------------------------------------
# result container
# ---------------------------------------------------------------------------

@dataclass
class EvolutionResult:
    """Correlator time series with metadata.

    records maps column name to an array over the time grid. T2 denotes the
    second transverse axis of axis_pair ((Sy,Sz) or (Sy,Dz)); Sx, Sy, T2 form
    the measurement-frame mean spin. var_* and B are centered; m_* columns
    keep raw uncentered moments for exact mixture averaging.
    manifold_populations has shape (nt, n_blocks) for truncated runs.
    """

    times: np.ndarray
    records: dict
    axis_pair: str
    time_unit: str = "1/chi"
    manifold_populations: np.ndarray = None
    meta: dict = field(default_factory=dict)
    batch_moments: dict = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        if t.ndim != 1 or len(t) == 0 or np.any(np.diff(t) < 0):
            raise ValueError("times must be a non-empty non-decreasing 1-D grid")
        self.times = t

    def correlators(self, i):
        from .squeezing import correlators_from_records
        return correlators_from_records(self.records, i, self.axis_pair)

    def squeezing_series(self, N=None):
        from .squeezing import squeezing_report
        N = N if N is not None else self.meta.get("N")
        return [squeezing_report(self.correlators(i), N)
                for i in range(len(self.times))]

    def min_xi2(self, N=None, which="xi2_proj"):
        """(min value, time of min, index) for the chosen xi^2 definition."""
        series = self.squeezing_series(N)
        vals = np.array([getattr(s, which) for s in series])
        i = int(np.argmin(vals))
        return float(vals[i]), float(self.times[i]), i

    def columns(self):
        return list(self.records.keys())

    def to_csv(self, path):
        cols = self.columns()
        with open(path, "w") as f:
            f.write("time," + ",".join(cols))
            if self.manifold_populations is not None:
                f.write("," + ",".join(
                    f"pop_block_{k}"
                    for k in range(self.manifold_populations.shape[1])))
            f.write("\n")
            for i, t in enumerate(self.times):
                row = [f"{t:.17g}"] + [f"{self.records[c][i]:.17g}" for c in cols]
                if self.manifold_populations is not None:
                    row += [f"{p:.17g}" for p in self.manifold_populations[i]]
                f.write(",".join(row) + "\n")

    def write_metadata(self, path):
        payload = dict(self.meta)
        payload["axis_pair"] = self.axis_pair
        payload["time_unit"] = self.time_unit
        payload["columns"] = self.columns()
        with open(path, "w") as f:
            json.dump(payload, f, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, (np.floating, np.integer)):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.bool_):
        return bool(obj)
    return str(obj)


def _derive_columns(raw):
    """Centered correlators from raw uncentered moment columns."""
    out = dict(raw)
    out["var_Sy"] = raw["m_Sy2"] - raw["Sy"] ** 2
    out["var_T2"] = raw["m_T22"] - raw["T2"] ** 2
    out["B"] = raw["m_Bsym"] - 2 * raw["Sy"] * raw["T2"]
    out["trace_drift"] = raw["trace"] - 1.0
    del out["trace"]
    return out


def _stack_rows(rows):
    return {k: np.array([r[k] for r in rows]) for k in rows[0]}


def _validate_grid(t_grid):
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0:
        raise ValueError("t_grid must be a non-empty 1-D array")
    if np.any(np.diff(t) < 0) or t[0] < 0:
        raise ValueError("t_grid must be non-decreasing and non-negative")
    return t


def _from_zero(t):
    """Solvers define the initial state at time 0; grids may start later."""
    if t[0] > 0:
        return np.concatenate([[0.0], t]), True
    return t, False


def _batch_bounds(n_traj, n_batches):
    n_batches = int(min(n_batches, n_traj))
    sizes = np.full(n_batches, n_traj // n_batches)
    sizes[: n_traj % n_batches] += 1
    return np.concatenate([[0], np.cumsum(sizes)])


# ---------------------------------------------------------------------------
# one-axis twisting master equation (diagonal Hamiltonian structure)
# ---------------------------------------------------------------------------

def evolve_oat_master(N, chi, gamma, t_grid, *, hamiltonian="oat_twist_only",
                      method="auto", rtol=1e-8, atol=1e-10, dense_cap=1000,
                      positivity_dim_cap=260, time_unit="1/chi"):
    """Master-equation evolution of twisting with collective emission.

    Initial state is the +x coherent state in S = N/2. The Hamiltonian is
    diagonal in the Dicke basis and the jump couples rho along its diagonals
    only, so three exact representations are available:

    method='dense'     full density matrix, adaptive RK45 (hermiticity and
                       positivity monitored when dim <= positivity_dim_cap)
    method='diagonals' evolves only the rho diagonals k = 0, 1, 2 that carry
                       every reported correlator (same Liouvillian, exact)
    method='exact'     gamma = 0 closed phase evolution
    method='auto'      exact if gamma == 0, dense for N <= 200, else diagonals
    """
    t = _validate_grid(t_grid)
    if gamma < 0:
        raise ValueError("gamma must be >= 0")
    if method == "dense" and N > dense_cap:
        raise DimensionError(
            f"N = {N} beyond dense cap {dense_cap}: use method='diagonals', "
            "trajectory_unravel, or the twa solver")
    if method == "auto":
        method = "exact" if gamma == 0 else ("dense" if N <= 200 else "diagonals")
    if method == "exact" and gamma != 0:
        raise ValueError("method='exact' is the closed gamma = 0 evolution")

    spec = LindbladSpec(hamiltonian,
                        ("collective_emission",) if gamma > 0 else (),
                        N, chi, gamma)
    ops = spec.build()
    a0 = ops.psi0()
    t0 = time.time()

    if method == "exact":
        rows = [ops.moments_psi(a0 * np.exp(-1j * chi * ops.lam * tv)) for tv in t]
    elif method == "diagonals":
        rows = _oat_diagonals_run(ops, a0, chi, gamma, t, rtol, atol)
    elif method == "dense":
        rows = _oat_dense_run(ops, a0, chi, gamma, t, rtol, atol,
                              positivity_dim_cap)
    else:
        raise ValueError(f"unknown method {method!r}")

    rec = _derive_columns(_stack_rows(rows))
    res = EvolutionResult(t, rec, ops.axis_pair, time_unit,
                          meta=dict(N=N, chi=chi, gamma=gamma, method=method,
                                    hamiltonian=hamiltonian, rtol=rtol,
                                    atol=atol, wall_time_s=time.time() - t0))
    drift = float(np.max(np.abs(rec["trace_drift"])))
    res.meta["max_trace_drift"] = drift
    if method in ("dense", "diagonals") and drift > 1e-6:
        warnings.warn(f"trace drift {drift:.2e} exceeds 1e-6")
    return res


def _oat_diagonals_run(ops, a0, chi, gamma, t, rtol, atol):
    d = ops.dim
    lam, cm = ops.lam, ops.cm
    cm_pad = np.concatenate([cm, [0.0]])
    # upper diagonals u_k[i] = rho[i, i+k] of the pure initial state
    u0 = [a0[: d - k] * np.conj(a0[k:]) for k in range(3)]
    mults, gains = [], []
    for k in range(3):
        n = d - k
        mults.append(-1j * chi * (lam[:n] - lam[k:])
                     - 0.5 * gamma * (cm[:n] ** 2 + cm[k:] ** 2))
        gains.append(gamma * cm_pad[1: n + 1] * cm_pad[k + 1: k + n + 1])
    splits = np.cumsum([d, d - 1])[:2]

    def rhs(_t, y):
        u = np.split(y, splits)
        out = []
        for k in range(3):
            dy = mults[k] * u[k]
            dy[:-1] = dy[:-1] + gains[k][:-1] * u[k][1:]
            out.append(dy)
        return np.concatenate(out)

    rows = []
    grid, skip0 = _from_zero(t)

    def cb(i, tv, y):
        if skip0 and i == 0:
            return
        u = np.split(y, splits)
        rows.append(ops.moments_diagonals(u[0], u[1], u[2]))

    solve_to(rhs, np.concatenate(u0), grid, rtol=rtol, atol=atol, callback=cb)
    return rows


def _oat_dense_run(ops, a0, chi, gamma, t, rtol, atol, positivity_dim_cap):
    lam, cm = ops.lam, ops.cm
    mult = (-1j * chi * (lam[:, None] - lam[None, :])
            - 0.5 * gamma * (cm[:, None] ** 2 + cm[None, :] ** 2))
    gain_w = gamma * cm[1:, None] * cm[None, 1:]
    rho0 = np.outer(a0, np.conj(a0))

    def rhs(_t, rho):
        out = mult * rho
        out[:-1, :-1] += gain_w * rho[1:, 1:]
        return out

    rows = []
    check = ops.dim <= positivity_dim_cap
    grid, skip0 = _from_zero(t)

    def cb(i, tv, rho):
        if skip0 and i == 0:
            return
        row = ops.moments_rho(rho)
        if check:
            row["herm_defect"] = float(np.max(np.abs(rho - rho.conj().T)))
            row["min_eig"] = float(
                np.linalg.eigvalsh((rho + rho.conj().T) / 2).min())
        rows.append(row)

    solve_to(rhs, rho0, grid, rtol=rtol, atol=atol, callback=cb)
    return rows


# ---------------------------------------------------------------------------
# generic dense master equation and pure-state integration
# ---------------------------------------------------------------------------

def _nonhermitian_h(H, Ls):
    Hnh = H.astype(complex)
    for L in Ls:
        Hnh = (Hnh - 0.5j * (L.conj().T @ L)).tocsr()
    return Hnh


def _master_dense_run(H, Ls, psi0, t_grid, moments_rho, extra_rho=None,
                      rtol=1e-8, atol=1e-10):
    """drho/dt = -i(Hnh rho - rho Hnh+) + sum L rho L+ on a dense rho."""
    Hnh = _nonhermitian_h(H, Ls)
    rho0 = np.outer(psi0, np.conj(psi0))

    def rhs(_t, rho):
        A = Hnh @ rho
        # rho Hnh_dag = (Hnh rho_dag)_dag, two sparse-dense products total
        B = Hnh @ rho.conj().T
        out = -1j * A + 1j * B.conj().T
        for L in Ls:
            C = L @ rho
            out += (L @ C.conj().T).conj().T
        return out

    rows, extras = [], []
    grid, skip0 = _from_zero(t_grid)

    def cb(i, tv, rho):
        if skip0 and i == 0:
            return
        rows.append(moments_rho(rho))
        if extra_rho is not None:
            extras.append(extra_rho(rho))

    solve_to(rhs, rho0, grid, rtol=rtol, atol=atol, callback=cb)
    return rows, extras


def _unitary_state_run(H, psi0, t_grid, moments_psi, extra_psi=None,
                       integrator="rk45", rtol=1e-10, atol=1e-12, energy=True):
    rows, extras = [], []
    Hc = H.tocsr()

    def record(psi):
        row = moments_psi(psi)
        if energy:
            row["energy"] = float(np.vdot(psi, Hc @ psi).real)
        rows.append(row)
        if extra_psi is not None:
            extras.append(extra_psi(psi))

    grid, skip0 = _from_zero(t_grid)
    if integrator == "expm":
        from scipy.sparse.linalg import expm_multiply
        psi = psi0.astype(complex)
        t_prev = 0.0
        for k, tv in enumerate(grid):
            if tv > t_prev:
                psi = expm_multiply((-1j * (tv - t_prev)) * Hc, psi)
                t_prev = tv
            if not (skip0 and k == 0):
                record(psi)
    elif integrator == "rk45":
        solve_to(lambda _t, y: -1j * (Hc @ y), psi0, grid, rtol=rtol,
                 atol=atol,
                 callback=lambda i, tv, y: None if (skip0 and i == 0)
                 else record(y))
    else:
        raise ValueError(f"unknown integrator {integrator!r}")
    return rows, extras


# ---------------------------------------------------------------------------
# Monte Carlo wavefunction unraveling
# ---------------------------------------------------------------------------

def _mcwf_single(Hnh, Ls, psi0, t_grid, rng, rtol, atol, moments_psi):
    """One jump-unraveled trajectory; one moments row per output time."""
    rows = []
    do_jumps = len(Ls) > 0

    def rhs(_t, y):
        return -1j * (Hnh @ y)

    r_target = rng.random() if do_jumps else -1.0
    stepper = DormandPrince45(rhs, 0.0, psi0.astype(complex),
                              rtol=rtol, atol=atol)
    for t_out in t_grid:
        while stepper.t < t_out - 1e-15 * max(1.0, abs(t_out)):
            stepper.step(t_limit=t_out)
            if do_jumps and float(np.vdot(stepper.y, stepper.y).real) < r_target:
                lo, hi = stepper.t_old, stepper.t
                for _ in range(80):
                    mid = 0.5 * (lo + hi)
                    ym = stepper.interpolate(mid)
                    if float(np.vdot(ym, ym).real) < r_target:
                        hi = mid
                    else:
                        lo = mid
                    if hi - lo <= 1e-13 * max(1.0, abs(hi)):
                        break
                t_jump = 0.5 * (lo + hi)
                psi_j = stepper.interpolate(t_jump)
                weights = np.array([float(np.vdot(L @ psi_j, L @ psi_j).real)
                                    for L in Ls])
                total = float(weights.sum())
                if total <= 0:
                    raise RuntimeError("vanishing jump weight at norm crossing")
                k = int(np.searchsorted(np.cumsum(weights) / total, rng.random()))
                k = min(k, len(Ls) - 1)
                psi_new = Ls[k] @ psi_j
                psi_new /= np.linalg.norm(psi_new)
                r_target = rng.random()
                stepper = DormandPrince45(rhs, t_jump, psi_new, rtol=rtol, atol=atol)
        y = stepper.y
        rows.append(moments_psi(y / np.linalg.norm(y)))
    return rows


def _traj_chunk(args):
    (Hnh, Ls, psi0, t_grid, seed, lo, hi, rtol, atol, moments_psi) = args
    from numpy.random import Generator, Philox
    sums = None
    for idx in range(lo, hi):
        bg = Philox(key=seed)
        bg.advance(int(idx) << 64)
        rows = _mcwf_single(Hnh, Ls, psi0, t_grid, Generator(bg), rtol, atol,
                            moments_psi)
        if sums is None:
            sums = {k: np.zeros(len(t_grid)) for k in rows[0]}
        for i, row in enumerate(rows):
            for k, v in row.items():
                sums[k][i] += v
    return sums


def _run_trajectories(ops, psi0, t, n_traj, seed, rtol, atol, n_jobs, n_batches):
    Hnh = _nonhermitian_h(ops.hamiltonian(), ops.jump_ops())
    Ls = ops.jump_ops()
    bounds = _batch_bounds(n_traj, n_batches)
    tasks = [(Hnh, Ls, psi0, t, seed, int(lo), int(hi), rtol, atol,
              ops.moments_psi)
             for lo, hi in zip(bounds[:-1], bounds[1:])]
    if n_jobs > 1 and len(tasks) > 1:
        import concurrent.futures as cf
        with cf.ProcessPoolExecutor(max_workers=n_jobs) as ex:
            partials = list(ex.map(_traj_chunk, tasks))
    else:
        partials = [_traj_chunk(task) for task in tasks]
    keys = list(partials[0].keys())
    total = {k: np.zeros(len(t)) for k in keys}
    for p in partials:  # fixed batch order keeps the reduction deterministic
        for k in keys:
            total[k] += p[k]
    raw = {k: total[k] / n_traj for k in keys}
    sizes = (bounds[1:] - bounds[:-1]).astype(float)
    batch_means = {k: np.stack([p[k] / s for p, s in zip(partials, sizes)])
                   for k in keys}
    return raw, batch_means, sizes


def trajectory_unravel(spec: LindbladSpec, psi0, n_traj, seed, t_grid, *,
                       rtol=1e-8, atol=1e-10, n_jobs=1, n_batches=32,
                       time_unit="1/chi"):
    """Quantum-trajectory average of the Lindblad dynamics in ``spec``.

    Deterministic: trajectory k draws from a Philox stream keyed by (seed, k)
    and partial sums reduce in fixed batch order, so identical inputs give
    bit-identical results for any worker count. Averaged correlators converge
    to the master equation as n_traj grows; per-batch means are kept on the
    result for standard-error estimates (xi2_batch_standard_error).
    """
    t = _validate_grid(t_grid)
    if n_traj < 1:
        raise ValueError("n_traj must be >= 1")
    ops = spec.build()
    if psi0 is None:
        psi0 = ops.psi0()
    t0 = time.time()
    raw, batch_means, sizes = _run_trajectories(ops, psi0, t, n_traj, seed,
                                                rtol, atol, n_jobs, n_batches)
    rec = _derive_columns(raw)
    pop_keys = sorted((k for k in rec if k.startswith("pop_block_")),
                      key=lambda k: int(k.rsplit("_", 1)[1]))
    pops = (np.stack([rec.pop(k) for k in pop_keys], axis=1)
            if pop_keys else None)
    res = EvolutionResult(t, rec, ops.axis_pair, time_unit,
                          manifold_populations=pops,
                          meta=dict(N=spec.N, chi=spec.chi, gamma=spec.gamma,
                                    hamiltonian=spec.hamiltonian,
                                    jumps=list(spec.jumps), n_traj=n_traj,
                                    seed=seed, rtol=rtol, atol=atol,
                                    method="trajectories",
                                    batch_sizes=sizes.tolist(),
                                    wall_time_s=time.time() - t0),
                          batch_moments=batch_means)
    return res


def xi2_batch_standard_error(result: EvolutionResult, N, i, which="xi2_proj"):
    """Batch-means standard error of xi^2 at time index i (trajectory runs)."""
    from .squeezing import correlators_from_records, squeezing_report
    bm = result.batch_moments
    if bm is None:
        raise ValueError("result carries no batch moments")
    n_b = next(iter(bm.values())).shape[0]
    vals = []
    for b in range(n_b):
        rec = _derive_columns({k: bm[k][b] for k in bm})
        c = correlators_from_records(rec, i, result.axis_pair)
        vals.append(getattr(squeezing_report(c, N), which))
    vals = np.array(vals)
    return float(np.std(vals, ddof=1) / np.sqrt(len(vals)))


# ---------------------------------------------------------------------------
# public two-spin entry points
# ---------------------------------------------------------------------------

def evolve_tss_unitary_truncated(N, n_trunc, chi, t_grid, *,
                                 hamiltonian="tss_rotated", integrator="rk45",
                                 rtol=1e-10, atol=1e-12, convergence_tol=1e-6,
                                 time_unit="1/chi"):
    """Unitary rotated-frame two-spin evolution in the truncated pair basis.

    Starts from the +x stretched state of the fully symmetric manifold and
    reports per-manifold populations; flags the run unconverged when the
    lowest retained manifold ever exceeds convergence_tol population.
    """
    t = _validate_grid(t_grid)
    spec = LindbladSpec(hamiltonian, (), N, chi, 0.0, n_trunc)
    ops = spec.build()
    t0 = time.time()
    rows, extras = _unitary_state_run(ops.hamiltonian(), ops.psi0(), t,
                                      ops.moments_psi, ops.extra_psi,
                                      integrator=integrator, rtol=rtol, atol=atol)
    rec = _derive_columns(_stack_rows(rows))
    pops = np.stack([e["block_populations"] for e in extras])
    res = EvolutionResult(t, rec, ops.axis_pair, time_unit, pops,
                          meta=dict(N=N, chi=chi, gamma=0.0, n_trunc=n_trunc,
                                    hamiltonian=hamiltonian,
                                    integrator=integrator, rtol=rtol, atol=atol,
                                    method="unitary_truncated",
                                    wall_time_s=time.time() - t0))
    worst = float(pops[:, -1].max())
    res.meta["max_lowest_block_population"] = worst
    res.meta["unconverged"] = bool(worst > convergence_tol)
    if res.meta["unconverged"]:
        warnings.warn(
            f"lowest retained manifold reached population {worst:.2e} > "
            f"{convergence_tol:.0e}; consider raising n_trunc")
    return res


def evolve_tss_master_truncated(N, n_trunc, chi, gamma, t_grid, *,
                                variant="full", hamiltonian="tss_rotated",
                                method="auto", n_traj=256, seed=0, n_jobs=1,
                                rtol=1e-8, atol=1e-10, convergence_tol=1e-6,
                                time_unit="1/chi"):
    """Dissipative rotated-frame two-spin evolution (truncated pair basis).

    variant='full' uses the exact rotated jump, 'sy_only' its Sy
    approximation. method='auto' evolves the dense density matrix when it
    fits the memory budget (SPINFORGE_BUDGET_GIB, default 2 GiB) and falls
    back to trajectory unraveling with a notice otherwise.
    """
    t = _validate_grid(t_grid)
    if gamma == 0:
        return evolve_tss_unitary_truncated(
            N, n_trunc, chi, t, hamiltonian=hamiltonian,
            convergence_tol=convergence_tol, time_unit=time_unit)
    jump = {"full": "rotated_frame_full",
            "sy_only": "rotated_frame_sy_only"}[variant]
    spec = LindbladSpec(hamiltonian, (jump,), N, chi, gamma, n_trunc)
    ops = spec.build()
    if method == "auto":
        need = (ops.dim**2) * 16 * 8  # rho plus integrator stages
        if need <= _budget_bytes():
            method = "dense"
        else:
            warnings.warn(
                f"density matrix would need ~{need / 2**30:.1f} GiB; "
                "falling back to trajectory unraveling")
            method = "traj"
    t0 = time.time()
    if method == "dense":
        rows, extras = _master_dense_run(ops.hamiltonian(), ops.jump_ops(),
                                         ops.psi0(), t, ops.moments_rho,
                                         ops.extra_rho, rtol=rtol, atol=atol)
        rec = _derive_columns(_stack_rows(rows))
        pops = np.stack([e["block_populations"] for e in extras])
        return EvolutionResult(t, rec, ops.axis_pair, time_unit, pops,
                               meta=dict(N=N, chi=chi, gamma=gamma,
                                         n_trunc=n_trunc, variant=variant,
                                         hamiltonian=hamiltonian,
                                         method="dense_master", rtol=rtol,
                                         atol=atol,
                                         wall_time_s=time.time() - t0))
    if method == "traj":
        res = trajectory_unravel(spec, None, n_traj, seed, t, rtol=rtol,
                                 atol=atol, n_jobs=n_jobs, time_unit=time_unit)
        res.meta["variant"] = variant
        return res
    raise ValueError(f"unknown method {method!r}")


def evolve_tss_lab(N, chi, gamma, t_grid, *, method="auto", n_traj=256, seed=0,
                   n_jobs=1, rtol=1e-10, atol=1e-12, time_unit="1/chi"):
    """Lab-frame two-spin evolution in the full product basis (small N).

    Measurement-frame correlators (Sy, Dz) are reported directly, so results
    compare one-to-one with the rotated-frame solvers whose generator is the
    exact transform ('tss_rotated_exact').
    """
    t = _validate_grid(t_grid)
    jumps = ("lab_collective",) if gamma > 0 else ()
    spec = LindbladSpec("tss_lab", jumps, N, chi, gamma)
    ops = spec.build()
    if ops.dim > 5000:
        raise DimensionError("lab-frame product basis beyond its intended "
                             "size; use the truncated rotated-frame solvers")
    t0 = time.time()
    if gamma == 0:
        rows, _ = _unitary_state_run(ops.hamiltonian(), ops.psi0(), t,
                                     ops.moments_psi, None, integrator="rk45",
                                     rtol=rtol, atol=atol)
        rec = _derive_columns(_stack_rows(rows))
        return EvolutionResult(t, rec, ops.axis_pair, time_unit,
                               meta=dict(N=N, chi=chi, gamma=0.0,
                                         method="lab_unitary", rtol=rtol,
                                         atol=atol,
                                         wall_time_s=time.time() - t0))
    if method == "auto":
        method = "dense" if (ops.dim**2) * 16 * 8 <= _budget_bytes() else "traj"
    if method == "dense":
        rows, _ = _master_dense_run(ops.hamiltonian(), ops.jump_ops(),
                                    ops.psi0(), t, ops.moments_rho, None,
                                    rtol=rtol, atol=atol)
        rec = _derive_columns(_stack_rows(rows))
        return EvolutionResult(t, rec, ops.axis_pair, time_unit,
                               meta=dict(N=N, chi=chi, gamma=gamma,
                                         method="lab_dense_master",
                                         wall_time_s=time.time() - t0))
    return trajectory_unravel(spec, None, n_traj, seed, t, rtol=rtol,
                              atol=atol, n_jobs=n_jobs, time_unit=time_unit)


# ---------------------------------------------------------------------------
# atom-number fluctuation mixtures (exact backends)
# ---------------------------------------------------------------------------

def _gaussian_integer_weights(sigma, n_sigma=2.5, step=1):
    if sigma == 0:
        return np.array([0]), np.array([1.0])
    k = int(np.ceil(n_sigma * sigma))
    offs = np.arange(-k, k + 1, step)
    w = np.exp(-offs.astype(float) ** 2 / (2 * sigma**2))
    return offs, w / w.sum()


def _combine_mixture(results, weights, times, axis_pair, time_unit, meta):
    keys = ["Sx", "Sy", "T2", "m_Sy2", "m_T22", "m_Bsym", "SpSm"]
    extra = [k for k in ("m_Sx2", "m_Bxz", "m_Bxy")
             if all(k in r.records for r in results)]
    keys = keys + extra
    raw = {k: np.zeros(len(times)) for k in keys}
    raw["trace"] = np.zeros(len(times))
    for res, w in zip(results, weights):
        r = res.records
        for k in keys:
            raw[k] = raw[k] + w * r[k]
        raw["trace"] += w * (r["trace_drift"] + 1.0)
    rec = _derive_columns(raw)
    return EvolutionResult(np.asarray(times, float), rec, axis_pair,
                           time_unit, meta=meta)


def oat_mixture_number_fluct(N, sigma_total, chi, gamma, t_grid, *,
                             method="diagonals", rtol=1e-8, atol=1e-10,
                             n_sigma=2.5, step=1, time_unit="1/chi"):
    """Twisting with a Gaussian-mixed total atom number (std sigma_total)."""
    t = _validate_grid(t_grid)
    offs, w = _gaussian_integer_weights(sigma_total, n_sigma, step)
    parts = [evolve_oat_master(N + int(d), chi, gamma, t,
                               method=("exact" if gamma == 0 else method),
                               rtol=rtol, atol=atol)
             for d in offs]
    meta = dict(N=N, sigma_total=sigma_total, chi=chi, gamma=gamma,
                components=len(offs), method=f"mixture/{method}")
    return _combine_mixture(parts, w, t, "Sy,Sz", time_unit, meta)


def tss_mixture_number_fluct(N, sigma_n, chi, gamma, t_grid, *, n_trunc=5,
                             variant="full", n_traj=64, seed=0, n_jobs=1,
                             n_sigma=2.0, step=1, rtol=1e-8, atol=1e-10,
                             hamiltonian="tss_rotated", time_unit="1/chi",
                             integrator="expm"):
    """Two-spin squeezing with independent per-ensemble number fluctuations.

    The initial mixture over ensemble sizes (N/2 + d1, N/2 + d2) is evaluated
    on an integer offset grid with Gaussian weights (std sigma_n each); each
    component evolves in its own coupled basis with j_i = (N/2 + d_i)/2 and
    the mixture's moments are the weighted component moments.
    """
    t = _validate_grid(t_grid)
    offs, w1 = _gaussian_integer_weights(sigma_n, n_sigma, step)
    results, weights = [], []
    for i, d1 in enumerate(offs):
        for j, d2 in enumerate(offs):
            tj1, tj2 = N // 2 + int(d1), N // 2 + int(d2)
            jumps = (("rotated_frame_full" if variant == "full"
                      else "rotated_frame_sy_only"),) if gamma > 0 else ()
            ops = _RotatedPairOps(hamiltonian, jumps, tj1, tj2, n_trunc,
                                  chi, gamma)
            if gamma == 0:
                rows, _ = _unitary_state_run(ops.hamiltonian(), ops.psi0(), t,
                                             ops.moments_psi, None,
                                             integrator=integrator, rtol=rtol,
                                             atol=atol, energy=False)
                res = EvolutionResult(t, _derive_columns(_stack_rows(rows)),
                                      "Sy,Dz", time_unit)
            else:
                comp_seed = (seed * 1000003 + i * 1009 + j) & 0xFFFFFFFF
                raw, _, _ = _run_trajectories(ops, ops.psi0(), t, n_traj,
                                              comp_seed, rtol, atol, n_jobs,
                                              n_batches=min(4, n_traj))
                res = EvolutionResult(t, _derive_columns(raw), "Sy,Dz",
                                      time_unit)
            results.append(res)
            weights.append(w1[i] * w1[j])
    meta = dict(N=N, sigma_n=sigma_n, chi=chi, gamma=gamma, n_trunc=n_trunc,
                variant=variant, components=len(results), n_traj=n_traj,
                seed=seed, method="tss_number_fluct_mixture")
    return _combine_mixture(results, weights, t, "Sy,Dz", time_unit, meta)
