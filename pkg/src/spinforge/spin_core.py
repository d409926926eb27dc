"""Collective-spin algebra in the Dicke basis.

States carry amplitudes over magnetic sublevels m = -S..S (ascending). Spin
lengths are stored as 2S (integer) so half-integer spins stay exact. All state
objects are immutable values; every operation returns a new object.
"""

import json
from dataclasses import dataclass
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
from scipy.linalg import eigh_tridiagonal, expm

__all__ = [
    "SpinLength", "DickeKet", "TwoEnsembleKet", "TruncatedManifoldKet",
    "DensityOperator", "collective_matrix", "collective_sparse",
    "coherent_state", "apply_collective", "rotate_y", "rotate_z",
    "expectation", "wigner_d_y", "state_to_json", "state_from_json",
]

NORM_TOL = 1e-10


@dataclass(frozen=True)
class SpinLength:
    """Total spin quantum number, stored as twice_S = 2S."""

    twice_S: int

    def __post_init__(self):
        if self.twice_S < 0 or int(self.twice_S) != self.twice_S:
            raise ValueError(f"twice_S must be a non-negative integer, got {self.twice_S}")

    @property
    def value(self):
        return self.twice_S / 2.0

    @property
    def dim(self):
        return self.twice_S + 1

    @property
    def m_values(self):
        """Magnetic quantum numbers, ascending from -S to S."""
        return np.arange(-self.twice_S, self.twice_S + 1, 2) / 2.0

    @classmethod
    def from_value(cls, S):
        twice = int(round(2 * S))
        if abs(twice - 2 * S) > 1e-9:
            raise ValueError(f"S = {S} is not a half-integer")
        return cls(twice)


def _frozen_array(a, shape=None):
    arr = np.array(a, dtype=complex)
    if shape is not None and arr.shape != shape:
        raise ValueError(f"amplitude array has shape {arr.shape}, expected {shape}")
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class DickeKet:
    """Pure state of a single collective spin."""

    S: SpinLength
    amps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amps", _frozen_array(self.amps, (self.S.dim,)))

    @property
    def norm(self):
        return float(np.linalg.norm(self.amps))

    def normalized(self):
        return DickeKet(self.S, self.amps / self.norm)

    def require_normalized(self, tol=NORM_TOL):
        if abs(self.norm - 1.0) > tol:
            raise ValueError(f"state norm {self.norm} deviates from 1 beyond {tol}")
        return self


@dataclass(frozen=True)
class TwoEnsembleKet:
    """Product-basis pure state of two collective spins; amps[m1, m2]."""

    S1: SpinLength
    S2: SpinLength
    amps: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "amps",
                           _frozen_array(self.amps, (self.S1.dim, self.S2.dim)))

    @property
    def norm(self):
        return float(np.linalg.norm(self.amps))

    def normalized(self):
        return TwoEnsembleKet(self.S1, self.S2, self.amps / self.norm)


@dataclass(frozen=True)
class TruncatedManifoldKet:
    """State over the few highest total-spin manifolds of two coupled ensembles.

    blocks[k] holds (S_k, amplitudes) for S_k = S_max - k, with S_max the
    fully symmetric manifold. Used by the rotated-frame two-spin solvers.
    """

    N: int
    n_trunc: int
    blocks: tuple

    def __post_init__(self):
        frozen = tuple((S, _frozen_array(a, (S.dim,))) for S, a in self.blocks)
        object.__setattr__(self, "blocks", frozen)

    @property
    def norm(self):
        return float(np.sqrt(sum(np.vdot(a, a).real for _, a in self.blocks)))

    @property
    def block_populations(self):
        return np.array([np.vdot(a, a).real for _, a in self.blocks])

    def is_converged(self, tol=1e-6):
        """True when the lowest retained manifold holds < tol population."""
        return self.block_populations[-1] < tol


@dataclass(frozen=True)
class DensityOperator:
    """Density matrix over one of the state bases.

    basis is one of 'dicke', 'two_ensemble', 'truncated'; meta carries the
    corresponding dimensional descriptor (SpinLength, (S1, S2), or the
    truncated-manifold block list).
    """

    basis: str
    meta: tuple
    mat: np.ndarray

    def __post_init__(self):
        m = np.array(self.mat, dtype=complex)
        if m.ndim != 2 or m.shape[0] != m.shape[1]:
            raise ValueError("density matrix must be square")
        m.setflags(write=False)
        object.__setattr__(self, "mat", m)

    @property
    def trace(self):
        return complex(np.trace(self.mat))

    def hermiticity_defect(self):
        return float(np.max(np.abs(self.mat - self.mat.conj().T)))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh((self.mat + self.mat.conj().T) / 2).min())

    def check(self, herm_tol=1e-10, trace_tol=1e-8, eig_tol=1e-8):
        if self.hermiticity_defect() > herm_tol:
            raise ValueError("density matrix not Hermitian within tolerance")
        if abs(self.trace - 1.0) > trace_tol:
            raise ValueError(f"trace {self.trace} deviates from 1")
        if self.min_eigenvalue() < -eig_tol:
            raise ValueError("density matrix has a negative eigenvalue beyond tolerance")
        return self


# ---------------------------------------------------------------------------
# operator matrices
# ---------------------------------------------------------------------------

def _ladder_coeffs(S: SpinLength):
    """c_m = <m|S+ S-|m>^(1/2) = sqrt(S(S+1) - m(m-1)), m ascending."""
    s = S.value
    m = S.m_values
    return np.sqrt(s * (s + 1) - m * (m - 1))


def collective_sparse(name, S: SpinLength):
    """Sparse matrix of a collective operator in the |S, m> basis.

    name: one of 'S+', 'S-', 'Sx', 'Sy', 'Sz', 'S2', 'S+S-', 'I'.
    """
    d = S.dim
    s = S.value
    m = S.m_values
    if name == "Sz":
        return sp.diags(m).tocsr()
    if name == "S2":
        return sp.diags(np.full(d, s * (s + 1))).tocsr()
    if name == "S+S-":
        return sp.diags(_ladder_coeffs(S) ** 2).tocsr()
    if name == "I":
        return sp.identity(d, format="csr")
    cp = np.sqrt(s * (s + 1) - m[:-1] * (m[:-1] + 1))  # <m+1|S+|m>
    Sp = sp.diags(cp, -1)
    Sm = sp.diags(cp, 1)
    if name == "S+":
        return Sp.tocsr()
    if name == "S-":
        return Sm.tocsr()
    if name == "Sx":
        return ((Sp + Sm) / 2).tocsr()
    if name == "Sy":
        return ((Sp - Sm) / 2j).tocsr()
    raise ValueError(f"unknown collective operator {name!r}")


def collective_matrix(name, S: SpinLength):
    """Dense counterpart of :func:`collective_sparse`."""
    return collective_sparse(name, S).toarray()


@lru_cache(maxsize=32)
def _sy_eigensystem(twice_S):
    """Eigen-decomposition of Sy via its real tridiagonal similarity transform.

    With D = diag(i^k), D Sy D^dag is real symmetric tridiagonal with
    off-diagonal c_+(m)/2, which eigh_tridiagonal handles stably at large S.
    """
    S = SpinLength(twice_S)
    s = S.value
    m = S.m_values
    off = 0.5 * np.sqrt(s * (s + 1) - m[:-1] * (m[:-1] + 1))
    w, v = eigh_tridiagonal(np.zeros(S.dim), off)
    Dk = 1j ** np.arange(S.dim)
    return w, v, Dk


def wigner_d_y(twice_S, phi):
    """Rotation matrix exp(-i phi Sy) in the |S, m> basis (m ascending)."""
    w, v, Dk = _sy_eigensystem(twice_S)
    U = (v * np.exp(-1j * phi * w)) @ v.T
    return np.conj(Dk)[:, None] * U * Dk[None, :]


def _rotate_y_expm(twice_S, phi):
    """Dense-exponential oracle for the rotation matrix (small S only)."""
    Sy = collective_matrix("Sy", SpinLength(twice_S))
    return expm(-1j * phi * Sy)


# ---------------------------------------------------------------------------
# state constructors and operations
# ---------------------------------------------------------------------------

def coherent_state(S: SpinLength, axis):
    """Stretched (spin coherent) state along a unit 3-vector axis.

    The state is the rotation of |m = S> that carries +z onto the axis:
    Rz(phi_az) Ry(theta) |S, S>, with <vec(S) . axis> = S and isotropic
    transverse variance S/2.
    """
    axis = np.asarray(axis, dtype=float)
    if abs(np.linalg.norm(axis) - 1.0) > 1e-9:
        raise ValueError("axis must be a unit vector")
    theta = np.arccos(np.clip(axis[2], -1.0, 1.0))
    phi_az = np.arctan2(axis[1], axis[0])
    amps = np.zeros(S.dim, dtype=complex)
    amps[-1] = 1.0
    ket = DickeKet(S, amps)
    if theta != 0.0:
        ket = rotate_y(ket, theta)
    if phi_az != 0.0 and theta != 0.0:
        ket = rotate_z(ket, phi_az)
    return ket


def _op_for(name, S: SpinLength):
    return collective_sparse(name, S)


def apply_collective(name, state, ensemble="sum"):
    """Apply a collective operator; returns an unnormalized state of same type.

    ensemble selects which internal ensemble the operator acts on: 1, 2, or
    'sum' (two-ensemble representations only; ignored for a single spin).
    """
    if isinstance(state, DickeKet):
        return DickeKet(state.S, _op_for(name, state.S) @ state.amps)
    if isinstance(state, TwoEnsembleKet):
        if ensemble == 1:
            return TwoEnsembleKet(state.S1, state.S2,
                                  _op_for(name, state.S1) @ state.amps)
        if ensemble == 2:
            return TwoEnsembleKet(state.S1, state.S2,
                                  state.amps @ _op_for(name, state.S2).T.toarray())
        if ensemble == "sum":
            a = _op_for(name, state.S1) @ state.amps
            b = state.amps @ _op_for(name, state.S2).T.toarray()
            return TwoEnsembleKet(state.S1, state.S2, a + b)
        raise ValueError(f"ensemble selector {ensemble!r} out of range")
    if isinstance(state, TruncatedManifoldKet):
        if ensemble != "sum":
            raise ValueError("truncated-manifold states only support collective "
                             "(sum) operators here")
        blocks = tuple((S, _op_for(name, S) @ a) for S, a in state.blocks)
        return TruncatedManifoldKet(state.N, state.n_trunc, blocks)
    raise TypeError(f"unsupported state type {type(state)!r}")


def _rot_mat(twice_S, phi, method):
    if method == "wigner_d":
        return wigner_d_y(twice_S, phi)
    if method == "expm":
        return _rotate_y_expm(twice_S, phi)
    raise ValueError(f"unknown rotation method {method!r}")


def rotate_y(state, phi, ensemble="all", method="wigner_d"):
    """Collective rotation exp(-i phi Sy), norm preserving.

    For two-ensemble states, ensemble may be 1, 2, or 'all'. The default
    construction diagonalizes the tridiagonal Sy; method='expm' uses a dense
    matrix exponential as an independent oracle (small S).
    """
    if isinstance(state, DickeKet):
        return DickeKet(state.S, _rot_mat(state.S.twice_S, phi, method) @ state.amps)
    if isinstance(state, TwoEnsembleKet):
        a = state.amps
        if ensemble in (1, "all"):
            a = _rot_mat(state.S1.twice_S, phi, method) @ a
        if ensemble in (2, "all"):
            a = a @ _rot_mat(state.S2.twice_S, phi, method).T
        if ensemble not in (1, 2, "all"):
            raise ValueError(f"ensemble selector {ensemble!r} out of range")
        return TwoEnsembleKet(state.S1, state.S2, a)
    if isinstance(state, TruncatedManifoldKet):
        if ensemble != "all":
            raise ValueError("per-ensemble rotations are not defined on the "
                             "truncated-manifold representation")
        blocks = tuple((S, _rot_mat(S.twice_S, phi, method) @ a)
                       for S, a in state.blocks)
        return TruncatedManifoldKet(state.N, state.n_trunc, blocks)
    if isinstance(state, DensityOperator):
        if state.basis != "dicke":
            raise ValueError("rotate_y on DensityOperator supports the single "
                             "Dicke basis only")
        U = _rot_mat(state.meta[0].twice_S, phi, method)
        return DensityOperator(state.basis, state.meta, U @ state.mat @ U.conj().T)
    raise TypeError(f"unsupported state type {type(state)!r}")


def rotate_z(state, phi, ensemble="all"):
    """Collective rotation exp(-i phi Sz): exact diagonal phases."""
    def phases(S):
        return np.exp(-1j * phi * S.m_values)

    if isinstance(state, DickeKet):
        return DickeKet(state.S, phases(state.S) * state.amps)
    if isinstance(state, TwoEnsembleKet):
        a = state.amps
        if ensemble in (1, "all"):
            a = phases(state.S1)[:, None] * a
        if ensemble in (2, "all"):
            a = a * phases(state.S2)[None, :]
        return TwoEnsembleKet(state.S1, state.S2, a)
    if isinstance(state, TruncatedManifoldKet):
        blocks = tuple((S, phases(S) * a) for S, a in state.blocks)
        return TruncatedManifoldKet(state.N, state.n_trunc, blocks)
    raise TypeError(f"unsupported state type {type(state)!r}")


def expectation(state, op, ensemble="sum"):
    """<O> for kets, Tr(rho O) for density operators.

    op is an operator name ('Sx', 'Sy', 'Sz', 'S+', 'S-', 'S2', 'S+S-') or an
    explicit matrix matching the state's full Hilbert space.
    """
    if isinstance(state, DickeKet):
        if isinstance(op, str):
            op = _op_for(op, state.S)
        v = op @ state.amps
        return complex(np.vdot(state.amps, v))
    if isinstance(state, TwoEnsembleKet):
        if isinstance(op, str):
            if op == "S+S-":
                # (S1+ + S2+)(S1- + S2-) expanded over the product structure
                low = apply_collective("S-", state, "sum")
                return complex(np.vdot(low.amps, low.amps))
            applied = apply_collective(op, state, ensemble)
            return complex(np.sum(np.conj(state.amps) * applied.amps))
        v = op @ state.amps.ravel()
        return complex(np.vdot(state.amps.ravel(), v))
    if isinstance(state, TruncatedManifoldKet):
        if isinstance(op, str):
            if op == "S+S-":
                low = apply_collective("S-", state)
                return complex(sum(np.vdot(a, a) for _, a in low.blocks))
            applied = apply_collective(op, state)
            return complex(sum(np.vdot(a, b) for (_, a), (_, b)
                               in zip(state.blocks, applied.blocks)))
        raise TypeError("matrix operators on truncated states go through "
                        "pair_basis.PairBasis")
    if isinstance(state, DensityOperator):
        if isinstance(op, str):
            if state.basis != "dicke":
                raise ValueError("named operators on DensityOperator support "
                                 "the single Dicke basis only")
            op = _op_for(op, state.meta[0])
        if op.shape[1] != state.mat.shape[0]:
            raise ValueError("operator/state dimension mismatch")
        return complex(np.trace(op @ state.mat))
    raise TypeError(f"unsupported state type {type(state)!r}")


# ---------------------------------------------------------------------------
# JSON snapshots
# ---------------------------------------------------------------------------

def state_to_json(state):
    """Serialize a state snapshot to a JSON string.

    Layout is documented and bit-stable: amplitudes as re[]/im[] arrays with
    m ascending (row-major m1-major for two-ensemble states).
    """
    if isinstance(state, DickeKet):
        payload = {"basis": "dicke", "twice_S": state.S.twice_S,
                   "re": state.amps.real.tolist(), "im": state.amps.imag.tolist()}
    elif isinstance(state, TwoEnsembleKet):
        flat = state.amps.ravel()
        payload = {"basis": "two_ensemble",
                   "twice_S": [state.S1.twice_S, state.S2.twice_S],
                   "re": flat.real.tolist(), "im": flat.imag.tolist()}
    elif isinstance(state, TruncatedManifoldKet):
        payload = {"basis": "truncated", "N": state.N, "n_trunc": state.n_trunc,
                   "blocks": [{"twice_S": S.twice_S, "re": a.real.tolist(),
                               "im": a.imag.tolist()} for S, a in state.blocks]}
    else:
        raise TypeError(f"unsupported state type {type(state)!r}")
    return json.dumps(payload)


def state_from_json(text):
    payload = json.loads(text)
    basis = payload["basis"]
    if basis == "dicke":
        amps = np.array(payload["re"]) + 1j * np.array(payload["im"])
        return DickeKet(SpinLength(payload["twice_S"]), amps)
    if basis == "two_ensemble":
        t1, t2 = payload["twice_S"]
        amps = (np.array(payload["re"]) + 1j * np.array(payload["im"]))
        return TwoEnsembleKet(SpinLength(t1), SpinLength(t2),
                              amps.reshape(t1 + 1, t2 + 1))
    if basis == "truncated":
        blocks = tuple((SpinLength(b["twice_S"]),
                        np.array(b["re"]) + 1j * np.array(b["im"]))
                       for b in payload["blocks"])
        return TruncatedManifoldKet(payload["N"], payload["n_trunc"], blocks)
    raise ValueError(f"unknown basis {basis!r}")
