"""Truncated Wigner approximation for the twisting protocols.

Initial phase-space points carry the quantum noise of the stretched states:
each ensemble of n_i atoms (spin S_i = n_i/2) is sampled with its x component
fixed at +-S_i and transverse components Gaussian with variance S_i/2. The
classical mean-field equations are then integrated per sample and observables
are symmetrically ordered trajectory averages.

Collective emission is never modeled stochastically here; Gamma-dependent
predictions route through the exact solvers or the analytic module.
"""

import struct
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.random import Generator, Philox

from .dicke_solver import EvolutionResult, _batch_bounds, _derive_columns

__all__ = [
    "WignerSamplingSpec", "MeanFieldParams", "TrajectoryBatch",
    "TrajectorySeries", "sample_initial", "evolve_trajectories",
    "batch_correlators", "run_twa", "dump_trajectories_binary",
    "load_trajectories_binary",
]

_CHUNK = 4096
_BINARY_MAGIC = b"SFTWA1\x00"


@dataclass(frozen=True)
class WignerSamplingSpec:
    """Sampling plan: system size, protocol, per-ensemble number noise."""

    N: int
    protocol: str = "tss"
    sigma_n: float = 0.0
    n_traj: int = 10_000
    seed: int = 0

    def __post_init__(self):
        if self.protocol not in ("oat", "tss"):
            raise ValueError(f"unknown protocol {self.protocol!r}")
        if self.n_traj < 2:
            raise ValueError("n_traj must be >= 2")
        if self.sigma_n < 0:
            raise ValueError("sigma_n must be >= 0")
        if self.protocol == "tss" and self.N % 2:
            raise ValueError("tss needs even N")

    @property
    def n_ensembles(self):
        return 2 if self.protocol == "tss" else 1


@dataclass(frozen=True)
class MeanFieldParams:
    """chi is signed; gamma_s, gamma_el >= 0. frozen_sy freezes the shearing
    field Sy at its initial value (reduced-model diagnostics)."""

    chi: float
    gamma_s: float = 0.0
    gamma_el: float = 0.0
    frozen_sy: bool = False

    def __post_init__(self):
        if self.gamma_s < 0 or self.gamma_el < 0:
            raise ValueError("decoherence rates must be >= 0")

    @property
    def reduced_model(self):
        """True when the single-particle (Sy^2-sheared) equation set applies."""
        return self.gamma_s > 0 or self.gamma_el > 0 or self.frozen_sy


@dataclass
class TrajectoryBatch:
    """Sampled Bloch vectors, spin units: ens[k, i] = (Sx_i, Sy_i, Sz_i)."""

    spec: WignerSamplingSpec
    ens: np.ndarray          # (n_traj, n_ens, 3)
    spins: np.ndarray        # (n_traj, n_ens) spin lengths S_i = n_i / 2
    rejection_rate: float = 0.0


def sample_initial(spec: WignerSamplingSpec):
    """Draw the initial phase-space samples.

    Deterministic and chunk-parallel: chunk c draws from Philox(seed) advanced
    by c << 64, samples in a fixed order (number offsets first when
    sigma_n > 0, then transverse pairs), and invalid rows (non-positive atom
    number) are redrawn from the same stream. Errors out when the rejection
    rate exceeds 10%.
    """
    n_ens = spec.n_ensembles
    ens = np.empty((spec.n_traj, n_ens, 3))
    spins = np.empty((spec.n_traj, n_ens))
    signs = np.array([1.0, -1.0])[:n_ens]
    n_nominal = spec.N / n_ens
    rejected = 0
    for lo in range(0, spec.n_traj, _CHUNK):
        hi = min(lo + _CHUNK, spec.n_traj)
        size = hi - lo
        bg = Philox(key=spec.seed)
        bg.advance((lo // _CHUNK) << 64)
        rng = Generator(bg)
        if spec.sigma_n > 0:
            n_atoms = n_nominal + spec.sigma_n * rng.standard_normal((size, n_ens))
            bad = np.where(np.any(n_atoms <= 0, axis=1))[0]
            while len(bad):
                rejected += len(bad)
                n_atoms[bad] = n_nominal + spec.sigma_n * rng.standard_normal(
                    (len(bad), n_ens))
                bad = bad[np.any(n_atoms[bad] <= 0, axis=1)]
        else:
            n_atoms = np.full((size, n_ens), n_nominal)
        S = n_atoms / 2.0
        yz = rng.standard_normal((size, n_ens, 2)) * np.sqrt(S / 2.0)[..., None]
        ens[lo:hi, :, 0] = signs * S
        ens[lo:hi, :, 1:] = yz
        spins[lo:hi] = S
    rate = rejected / spec.n_traj
    if rate > 0.10:
        raise ValueError(f"number-fluctuation rejection rate {rate:.1%} > 10%: "
                         "sigma_n too large for the ensemble size")
    return TrajectoryBatch(spec, ens, spins, rate)


# ---------------------------------------------------------------------------
# mean-field equations
# ---------------------------------------------------------------------------

def _rhs_full(ens, chi):
    """Ideal equations of the full collective model chi (Sx^2 + Sy^2)."""
    X, Y, Z = ens[..., 0], ens[..., 1], ens[..., 2]
    sx = X.sum(axis=1, keepdims=True)
    sy = Y.sum(axis=1, keepdims=True)
    out = np.empty_like(ens)
    out[..., 0] = 2 * chi * sy * Z
    out[..., 1] = -2 * chi * sx * Z
    out[..., 2] = 2 * chi * (Y * sx - X * sy)
    return out


def _rhs_reduced(ens, chi, gamma_s, gamma_el, spins, sy_shear):
    """Single-particle equation set, shearing about y only.

    sy_shear is the instantaneous (or frozen) total Sy. Spontaneous emission
    damps all components at gamma_s/2 and pumps Sz toward -S_i; dephasing
    damps the transverse components at gamma_el/2 and leaves Sz alone.
    """
    X, Y, Z = ens[..., 0], ens[..., 1], ens[..., 2]
    g_t = 0.5 * (gamma_s + gamma_el)
    out = np.empty_like(ens)
    out[..., 0] = 2 * chi * sy_shear * Z - g_t * X
    out[..., 1] = -g_t * Y
    out[..., 2] = -2 * chi * sy_shear * X - 0.5 * gamma_s * (Z + spins)
    return out


@dataclass
class TrajectorySeries:
    """Per-time batch sums of the measurement-frame observables.

    batch_sums[q] has shape (nt, n_batches); q runs over Sx, Sy, T2, Sy2,
    T22, SyT2, SpSm, Sz_lab and the squared moments used for standard
    errors. trajectories is (nt, n_traj, n_ens, 3) when kept.
    """

    spec: WignerSamplingSpec
    params: MeanFieldParams
    times: np.ndarray
    batch_sums: dict
    batch_sizes: np.ndarray
    trajectories: np.ndarray = None
    meta: dict = field(default_factory=dict)

    @property
    def n_traj(self):
        return int(self.batch_sizes.sum())


_Q_NAMES = ("Sx", "Sy", "T2", "Sy2", "T22", "SyT2", "SpSm", "Sz_lab",
            "Sy2_sq", "T22_sq", "SyT2_sq")


def _observables(ens):
    """Measurement-frame per-trajectory observables (spin units)."""
    X, Y, Z = ens[..., 0], ens[..., 1], ens[..., 2]
    n_ens = ens.shape[1]
    sy = Y.sum(axis=1)
    sz_lab = Z.sum(axis=1)
    if n_ens == 2:
        sx_meas = X[:, 0] - X[:, 1]
        t2 = Z[:, 0] - Z[:, 1]
    else:
        sx_meas = X[:, 0]
        t2 = Z[:, 0]
    sx_lab = X.sum(axis=1)
    spsm = sx_lab**2 + sy**2 + sz_lab  # S+S- = Sx^2 + Sy^2 + Sz, sym ordered
    sy2 = sy * sy
    t22 = t2 * t2
    syt2 = sy * t2
    return {"Sx": sx_meas, "Sy": sy, "T2": t2, "Sy2": sy2, "T22": t22,
            "SyT2": syt2, "SpSm": spsm, "Sz_lab": sz_lab,
            "Sy2_sq": sy2 * sy2, "T22_sq": t22 * t22, "SyT2_sq": syt2 * syt2}


def evolve_trajectories(batch: TrajectoryBatch, params: MeanFieldParams,
                        t_grid, dt=None, n_batches=32,
                        keep_trajectories=False):
    """Integrate the mean-field equations for every sample (fixed-step RK4).

    Default step dt = 0.01 / (|chi| sqrt(N)) resolves the shearing timescale.
    Ideal runs (no decoherence, no frozen shear) use the full collective
    equations; otherwise the reduced single-particle set applies. A warning
    fires when gamma_s t_max leaves the weak-decoherence regime (> 0.5).
    """
    t = np.asarray(t_grid, dtype=float)
    if t.ndim != 1 or len(t) == 0 or np.any(np.diff(t) < 0):
        raise ValueError("t_grid must be a non-empty non-decreasing 1-D grid")
    spec = batch.spec
    if params.gamma_s * float(t[-1]) > 0.5:
        warnings.warn("gamma_s * t_max > 0.5: outside the weak-decoherence "
                      "validity of the reduced equations")
    if dt is None:
        rates = [abs(params.chi) * np.sqrt(spec.N),
                 params.gamma_s, params.gamma_el]
        fastest = max(rates)
        dt = 0.01 / fastest if fastest > 0 else (t[-1] if t[-1] > 0 else 1.0)
    n_traj = spec.n_traj
    bounds = _batch_bounds(n_traj, n_batches)
    n_batches = len(bounds) - 1
    sizes = np.diff(bounds)
    cuts = bounds[:-1]

    ens = batch.ens.copy()
    reduced = params.reduced_model
    sy0 = ens[..., 1].sum(axis=1) if params.frozen_sy else None
    sums = {q: np.zeros((len(t), n_batches)) for q in _Q_NAMES}
    kept = (np.empty((len(t),) + ens.shape) if keep_trajectories else None)

    def rhs(y):
        if not reduced:
            return _rhs_full(y, params.chi)
        shear = sy0 if params.frozen_sy else y[..., 1].sum(axis=1)
        return _rhs_reduced(y, params.chi, params.gamma_s, params.gamma_el,
                            batch.spins, shear[:, None])

    t0 = time.time()
    t_now = 0.0
    for i, t_out in enumerate(t):
        span = t_out - t_now
        if span > 0:
            n_sub = max(1, int(np.ceil(span / dt - 1e-12)))
            h = span / n_sub
            for _ in range(n_sub):
                k1 = rhs(ens)
                k2 = rhs(ens + (h / 2) * k1)
                k3 = rhs(ens + (h / 2) * k2)
                k4 = rhs(ens + h * k3)
                ens += (h / 6) * (k1 + 2 * k2 + 2 * k3 + k4)
            t_now = t_out
        obs = _observables(ens)
        for q in _Q_NAMES:
            sums[q][i] = np.add.reduceat(obs[q], cuts)
        if keep_trajectories:
            kept[i] = ens
    meta = dict(N=spec.N, protocol=spec.protocol, sigma_n=spec.sigma_n,
                n_traj=n_traj, seed=spec.seed, chi=params.chi,
                gamma_s=params.gamma_s, gamma_el=params.gamma_el,
                frozen_sy=params.frozen_sy, dt=dt,
                rejection_rate=batch.rejection_rate,
                reduced_model=reduced, wall_time_s=time.time() - t0)
    return TrajectorySeries(spec, params, t, sums, sizes.astype(int), kept, meta)


def batch_correlators(series: TrajectorySeries, enforce_sy_floor=True):
    """Trajectory-averaged correlators as an EvolutionResult.

    When gamma_s > 0 (and the flag is on) the Sy variance is pinned to its
    conserved single-particle value S/2, S = N/2: the reduced equations damp
    it spuriously. Standard errors of the second-moment estimators are
    attached as se_* columns; per-batch means feed xi^2 error estimates.
    """
    spec, params = series.spec, series.params
    n = series.n_traj
    mean = {q: series.batch_sums[q].sum(axis=1) / n for q in _Q_NAMES}
    enforce = bool(enforce_sy_floor and params.gamma_s > 0)
    if enforce:
        mean["Sy2"] = spec.N / 4.0 + mean["Sy"] ** 2
    raw = {"Sx": mean["Sx"], "Sy": mean["Sy"], "T2": mean["T2"],
           "m_Sy2": mean["Sy2"], "m_T22": mean["T22"],
           "m_Bsym": 2 * mean["SyT2"], "SpSm": mean["SpSm"],
           "Sz_lab": mean["Sz_lab"], "trace": np.ones(len(series.times))}
    rec = _derive_columns(raw)
    for q, sq in (("Sy2", "Sy2_sq"), ("T22", "T22_sq"), ("SyT2", "SyT2_sq")):
        var_est = mean[sq] - mean[q] ** 2
        rec[f"se_{q}"] = np.sqrt(np.maximum(var_est, 0.0) / n)
    axis = "Sy,Dz" if spec.protocol == "tss" else "Sy,Sz"
    sizes = series.batch_sizes.astype(float)
    batch_means = {
        "Sx": series.batch_sums["Sx"].T / sizes[:, None],
        "Sy": series.batch_sums["Sy"].T / sizes[:, None],
        "T2": series.batch_sums["T2"].T / sizes[:, None],
        "m_Sy2": series.batch_sums["Sy2"].T / sizes[:, None],
        "m_T22": series.batch_sums["T22"].T / sizes[:, None],
        "m_Bsym": 2 * series.batch_sums["SyT2"].T / sizes[:, None],
        "SpSm": series.batch_sums["SpSm"].T / sizes[:, None],
        "trace": np.ones((len(sizes), len(series.times))),
    }
    if enforce:
        batch_means["m_Sy2"] = spec.N / 4.0 + batch_means["Sy"] ** 2
    meta = dict(series.meta)
    meta["sy_floor_enforced"] = enforce
    meta["method"] = "twa"
    return EvolutionResult(series.times, rec, axis, "1/chi",
                           meta=meta, batch_moments=batch_means)


def run_twa(spec: WignerSamplingSpec, params: MeanFieldParams, t_grid,
            dt=None, enforce_sy_floor=True, keep_trajectories=False):
    """sample_initial + evolve_trajectories + batch_correlators in one call."""
    batch = sample_initial(spec)
    series = evolve_trajectories(batch, params, t_grid, dt=dt,
                                 keep_trajectories=keep_trajectories)
    out = batch_correlators(series, enforce_sy_floor=enforce_sy_floor)
    if keep_trajectories:
        out.meta["trajectories_kept"] = True
        out.trajectories = series.trajectories
    return out


# ---------------------------------------------------------------------------
# binary export (little-endian float64, documented record layout)
# ---------------------------------------------------------------------------

def dump_trajectories_binary(path, series: TrajectorySeries):
    """Write kept trajectories: magic, then uint64 (nt, n_traj, n_ens),
    then nt float64 times, then the (nt, n_traj, n_ens, 3) array, all
    little-endian, C order, components (Sx, Sy, Sz)."""
    if series.trajectories is None:
        raise ValueError("series was run without keep_trajectories=True")
    arr = series.trajectories
    with open(path, "wb") as f:
        f.write(_BINARY_MAGIC)
        f.write(struct.pack("<QQQ", arr.shape[0], arr.shape[1], arr.shape[2]))
        f.write(np.asarray(series.times, "<f8").tobytes())
        f.write(arr.astype("<f8").tobytes())


def load_trajectories_binary(path):
    with open(path, "rb") as f:
        magic = f.read(len(_BINARY_MAGIC))
        if magic != _BINARY_MAGIC:
            raise ValueError("not a spinforge trajectory dump")
        nt, n_traj, n_ens = struct.unpack("<QQQ", f.read(24))
        times = np.frombuffer(f.read(8 * nt), "<f8")
        data = np.frombuffer(f.read(8 * nt * n_traj * n_ens * 3), "<f8")
    return times, data.reshape(nt, n_traj, n_ens, 3)
