"""Coupled total-spin basis for two ensembles, truncated to the top manifolds.

Two collective spins j1, j2 couple to total spin S = j1+j2 .. |j1-j2|. The
rotated-frame two-spin dynamics mostly stays in the highest few manifolds, so
operators are built over S = S_max .. S_max - n_blocks + 1 only.

Collective operators J = J1 + J2 are block diagonal. The difference operator
K = J1 - J2 is a rank-1 tensor whose matrix elements follow the projection
theorem within a manifold and carry a single reduced amplitude A_S between
adjacent manifolds (Condon-Shortley phases, verified against an explicit
Clebsch-Gordan construction in the tests):

    <S,M|Kz|S,M>        = M [j1(j1+1) - j2(j2+1)] / (S(S+1))
    <S-1,M|Kz|S,M>      = A_S sqrt(S^2 - M^2)
    <S-1,M+-1|K+-|S,M>  = +-A_S sqrt((S -+ M)(S -+ M - 1))
    A_S = sqrt[(S^2 - (j1-j2)^2)((j1+j2+1)^2 - S^2)] / (S sqrt(4S^2 - 1))
"""

from functools import cached_property

import numpy as np
import scipy.sparse as sp

from .spin_core import SpinLength, TruncatedManifoldKet, wigner_d_y

__all__ = ["PairBasis"]


class PairBasis:
    """Block basis |S, M> for manifolds S = S_max .. S_max - n_blocks + 1."""

    def __init__(self, twice_j1, twice_j2, n_blocks):
        self.j1 = SpinLength(twice_j1)
        self.j2 = SpinLength(twice_j2)
        twice_S_max = twice_j1 + twice_j2
        twice_S_min = abs(twice_j1 - twice_j2)
        max_blocks = (twice_S_max - twice_S_min) // 2 + 1
        self.n_blocks = int(min(n_blocks, max_blocks))
        if self.n_blocks < 1:
            raise ValueError("need at least one manifold")
        self.S_blocks = [SpinLength(twice_S_max - 2 * k) for k in range(self.n_blocks)]
        self.sizes = np.array([S.dim for S in self.S_blocks])
        self.offsets = np.concatenate([[0], np.cumsum(self.sizes)])
        self.dim = int(self.offsets[-1])

    # -- bookkeeping ---------------------------------------------------

    def block_slice(self, k):
        return slice(int(self.offsets[k]), int(self.offsets[k + 1]))

    def pack(self, ket: TruncatedManifoldKet):
        v = np.zeros(self.dim, dtype=complex)
        for k, (S, a) in enumerate(ket.blocks):
            if S.twice_S != self.S_blocks[k].twice_S:
                raise ValueError("block layout mismatch")
            v[self.block_slice(k)] = a
        return v

    def unpack(self, v, N=None, n_trunc=None):
        N = N if N is not None else (self.j1.twice_S + self.j2.twice_S)
        blocks = tuple((S, v[self.block_slice(k)])
                       for k, S in enumerate(self.S_blocks))
        return TruncatedManifoldKet(N, n_trunc or self.n_blocks, blocks)

    def block_populations(self, v):
        return np.array([float(np.vdot(v[self.block_slice(k)],
                                       v[self.block_slice(k)]).real)
                         for k in range(self.n_blocks)])

    def stretched_x(self):
        """|S_max> along +x as a packed vector (top manifold only)."""
        v = np.zeros(self.dim, dtype=complex)
        top = self.S_blocks[0]
        v[:top.dim] = wigner_d_y(top.twice_S, np.pi / 2)[:, -1]
        return v

    # -- collective operators (block diagonal) --------------------------

    def _collective(self, which):
        rows, cols, vals = [], [], []
        for k, S in enumerate(self.S_blocks):
            o = int(self.offsets[k])
            s = S.value
            m = S.m_values
            n = S.dim
            if which == "z":
                rows.extend(range(o, o + n)); cols.extend(range(o, o + n))
                vals.extend(m)
            else:
                c = np.sqrt(s * (s + 1) - m[:-1] * (m[:-1] + 1))
                if which == "+":
                    rows.extend(range(o + 1, o + n)); cols.extend(range(o, o + n - 1))
                else:
                    rows.extend(range(o, o + n - 1)); cols.extend(range(o + 1, o + n))
                vals.extend(c)
        return sp.csr_matrix((vals, (rows, cols)), shape=(self.dim, self.dim))

    @cached_property
    def Jz(self):
        return self._collective("z")

    @cached_property
    def Jp(self):
        return self._collective("+")

    @cached_property
    def Jm(self):
        return self._collective("-")

    @cached_property
    def Jx(self):
        return ((self.Jp + self.Jm) / 2).tocsr()

    @cached_property
    def Jy(self):
        return ((self.Jp - self.Jm) / 2j).tocsr()

    # -- difference operator K = J1 - J2 --------------------------------

    def _reduced_amp(self, S):
        j1, j2 = self.j1.value, self.j2.value
        s = S.value
        num = (s * s - (j1 - j2) ** 2) * ((j1 + j2 + 1) ** 2 - s * s)
        return np.sqrt(num) / (s * np.sqrt(4 * s * s - 1))

    @cached_property
    def _K_parts(self):
        j1, j2 = self.j1.value, self.j2.value
        rz, cz, vz = [], [], []
        rp, cp, vp = [], [], []
        # within-manifold projection: K = c_S * J with c_S below
        for k, S in enumerate(self.S_blocks):
            s = S.value
            if s == 0:
                continue
            c = (j1 * (j1 + 1) - j2 * (j2 + 1)) / (s * (s + 1))
            if c == 0.0:
                continue
            o = int(self.offsets[k])
            m = S.m_values
            rz.extend(range(o, o + S.dim)); cz.extend(range(o, o + S.dim))
            vz.extend(c * m)
            cc = c * np.sqrt(s * (s + 1) - m[:-1] * (m[:-1] + 1))
            rp.extend(range(o + 1, o + S.dim)); cp.extend(range(o, o + S.dim - 1))
            vp.extend(cc)
        # between adjacent manifolds
        for k in range(self.n_blocks - 1):
            S = self.S_blocks[k]
            s = S.value
            A = self._reduced_amp(S)
            o_hi = int(self.offsets[k])
            o_lo = int(self.offsets[k + 1])
            m_lo = self.S_blocks[k + 1].m_values
            # Kz, symmetric: <S-1,M|Kz|S,M>
            val = A * np.sqrt(s * s - m_lo * m_lo)
            i_lo = o_lo + np.arange(self.S_blocks[k + 1].dim)
            i_hi = o_hi + np.arange(1, S.dim - 1)
            rz.extend(i_lo); cz.extend(i_hi); vz.extend(val)
            rz.extend(i_hi); cz.extend(i_lo); vz.extend(val)
            # K+ downward: <S-1,M+1|K+|S,M> = +A sqrt((S-M)(S-M-1)), M = -S..S-2
            M = np.arange(-s, s - 1)
            keep = np.abs(M + 1) <= s - 1
            M = M[keep]
            rp.extend(o_lo + (M + 1 + s - 1).astype(int))
            cp.extend(o_hi + (M + s).astype(int))
            vp.extend(A * np.sqrt((s - M) * (s - M - 1)))
            # K+ upward: <S,M+1|K+|S-1,M> = -A sqrt((S+M+1)(S+M)), M = -(S-1)..S-1
            M = np.arange(-(s - 1), s)
            rp.extend(o_hi + (M + 1 + s).astype(int))
            cp.extend(o_lo + (M + s - 1).astype(int))
            vp.extend(-A * np.sqrt((s + M + 1) * (s + M)))
        Kz = sp.csr_matrix((vz, (rz, cz)), shape=(self.dim, self.dim))
        Kp = sp.csr_matrix((vp, (rp, cp)), shape=(self.dim, self.dim))
        return Kz, Kp

    @cached_property
    def Kz(self):
        return self._K_parts[0]

    @cached_property
    def Kp(self):
        return self._K_parts[1]

    @cached_property
    def Km(self):
        return self.Kp.conj().T.tocsr()

    @cached_property
    def Kx(self):
        return ((self.Kp + self.Km) / 2).tocsr()

    @cached_property
    def Ky(self):
        return ((self.Kp - self.Km) / 2j).tocsr()

    # -- model builders --------------------------------------------------

    def hamiltonian(self, kind, chi):
        """Sparse Hamiltonian over this basis.

        kind: 'tss_rotated'        chi [(Sx1-Sx2)^2 + (Sy1+Sy2)^2]
              'tss_rotated_exact'  the exact frame transform of chi S+S-,
                                   which adds the commutator term (Sz1-Sz2)
              'tss_sy_only'        chi (Sy1+Sy2)^2
        """
        if kind == "tss_rotated":
            return (self.Kx @ self.Kx + self.Jy @ self.Jy).tocsr() * chi
        if kind == "tss_rotated_exact":
            return (self.Kx @ self.Kx + self.Jy @ self.Jy + self.Kz).tocsr() * chi
        if kind == "tss_sy_only":
            return (self.Jy @ self.Jy).tocsr() * chi
        raise ValueError(f"unknown pair-basis hamiltonian {kind!r}")

    def jump(self, kind, gamma):
        """Sparse jump operator over this basis.

        kind: 'rotated_frame_full'     (Sx1-Sx2) - i(Sy1+Sy2)
              'rotated_frame_sy_only'  (Sy1+Sy2)
        Operators carry sqrt(gamma) for the standard dissipator
        D[L] = L rho L+ - {L+L, rho}/2, which reproduces the doubled-form
        master term (gamma/2)(2 L0 rho L0+ - {L0+L0, rho}) of the models.
        """
        if gamma < 0:
            raise ValueError("collective emission rate must be >= 0")
        amp = np.sqrt(gamma)
        if kind == "rotated_frame_full":
            return ((self.Kx - 1j * self.Jy) * amp).tocsr()
        if kind == "rotated_frame_sy_only":
            return (self.Jy * amp).tocsr()
        raise ValueError(f"unknown pair-basis jump {kind!r}")

    # -- test utility ----------------------------------------------------

    def coupling_isometry(self):
        """Dense map from the coupled basis to the product basis (columns are
        the |S,M> states, Condon-Shortley phases). For small-system checks."""
        d1, d2 = self.j1.dim, self.j2.dim
        m1 = np.repeat(self.j1.m_values, d2)
        m2 = np.tile(self.j2.m_values, d1)

        from .spin_core import collective_sparse as _cs
        JM = (sp.kron(_cs("S-", self.j1), sp.identity(d2)) +
              sp.kron(sp.identity(d1), _cs("S-", self.j2))).tocsr()

        cols = np.zeros((d1 * d2, self.dim), dtype=complex)
        for k, S in enumerate(self.S_blocks):
            s = S.value
            sel = np.where(np.abs(m1 + m2 - s) < 1e-9)[0]
            P = np.zeros((d1 * d2, len(sel)), dtype=complex)
            P[sel, np.arange(len(sel))] = 1.0
            # project out |S', M=s> from every higher manifold S' > S
            for kk in range(k):
                j = int(self.offsets[kk]) + int(round(s + self.S_blocks[kk].value))
                v = cols[:, j]
                P -= np.outer(v, np.conj(v) @ P)
            u = np.linalg.svd(P)[0][:, 0]
            # Condon-Shortley: <j1, j1; j2, S-j1 | S, S> > 0
            idx = np.where((np.abs(m1 - self.j1.value) < 1e-9)
                           & (np.abs(m2 - (s - self.j1.value)) < 1e-9))[0]
            if len(idx) and u[idx[0]].real < 0:
                u = -u
            vecs = [u]
            while len(vecs) < S.dim:
                w = JM @ vecs[-1]
                vecs.append(w / np.linalg.norm(w))
            for i, w in enumerate(reversed(vecs)):  # store m ascending
                cols[:, int(self.offsets[k]) + i] = w
        return cols
