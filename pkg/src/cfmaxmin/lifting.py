"""Real-valued lifting of the feasibility-check problem.

Layout conventions (0-based):

* ``V`` holds the primal blocks as rows, shape (K, 2MN); row j is
  [Re v_j ; Im v_j] with v_j stacked AP-major (index m*N + n).
* The constraint vector has K SOC blocks of length 2K+2 followed by M power
  blocks of length 2KN.  In SOC block k, entries (2j, 2j+1) hold
  [Re, Im] of h_k^H v_j, entry 2K holds sigma_k (from the offset b) and entry
  2K+1 holds sqrt(e(s_c)) Re{h_k^H v_k}.
* Power block m stacks [Re v_1[m]; Im v_1[m]; ...; Re v_K[m]; Im v_K[m]].

The operator A = [A_1 ... A_K] is never formed; it acts through ``hbar``,
the (2MN, 2K) matrix whose columns 2k, 2k+1 are the two rows of H~_k.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .cones import ConeLayout
from .scenario import Scenario

DENSE_LIMIT = 512


class StaleFactorsError(RuntimeError):
    pass


def e_factor(s_c: float) -> float:
    """SINR factor 2^s / (2^s - 1)."""
    if not s_c > 0:
        raise ValueError(f"target rate must be > 0, got {s_c}")
    return 1.0 / (-np.expm1(-s_c * np.log(2.0)))


def real_channel(h: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(H~, h~) for one joint channel h of length MN.

    H~ @ [Re v; Im v] == [Re(h^H v), Im(h^H v)] and h~ is the first row.
    """
    h = np.asarray(h, dtype=complex).reshape(-1)
    top = np.concatenate([h.real, h.imag])
    bot = np.concatenate([-h.imag, h.real])
    Ht = np.vstack([top, bot])
    return Ht, top.copy()


def to_real(v: np.ndarray) -> np.ndarray:
    """Complex beamformers (K, M, N) -> real blocks (K, 2MN)."""
    v = np.asarray(v, dtype=complex)
    K = v.shape[0]
    flat = v.reshape(K, -1)
    return np.concatenate([flat.real, flat.imag], axis=1)


def to_complex(V: np.ndarray, M: int, N: int) -> np.ndarray:
    """Real blocks (K, 2MN) -> complex beamformers (K, M, N)."""
    V = np.asarray(V, dtype=float)
    K = V.shape[0]
    half = V.reshape(K, 2, M, N)
    return half[:, 0] + 1j * half[:, 1]


def permute_to_ap_major(V: np.ndarray, M: int, N: int) -> np.ndarray:
    """User-major real blocks -> AP-major vector (the P_ap permutation)."""
    V = np.asarray(V, dtype=float)
    if V.size % (2 * M * N):
        raise ValueError("length is not a multiple of 2MN")
    K = V.size // (2 * M * N)
    return V.reshape(K, 2, M, N).transpose(2, 0, 1, 3).reshape(-1)


def permute_from_ap_major(vb: np.ndarray, M: int, N: int, K: int) -> np.ndarray:
    vb = np.asarray(vb, dtype=float)
    if vb.size != 2 * M * N * K:
        raise ValueError(f"expected length {2 * M * N * K}, got {vb.size}")
    return vb.reshape(M, K, 2, N).transpose(1, 2, 0, 3).reshape(K, 2 * M * N)


class LiftedChannels:
    """Per-scenario data shared by every target rate."""

    def __init__(self, scenario: Scenario):
        self.M, self.N, self.K = scenario.M, scenario.N, scenario.K
        h = scenario.joint_channels  # (K, MN)
        self.h = h
        hbar = np.empty((2 * self.M * self.N, 2 * self.K))
        hbar[:, 0::2] = np.concatenate([h.real, h.imag], axis=1).T
        hbar[:, 1::2] = np.concatenate([-h.imag, h.real], axis=1).T
        hbar.setflags(write=False)
        self.hbar = hbar
        self.htilde_rows = np.ascontiguousarray(hbar[:, 0::2].T)  # (K, 2MN)
        self.sigma = np.sqrt(scenario.noise_power)
        self.radii = np.sqrt(scenario.power)
        self._caps = {}

    def capacitance(self, shift: float):
        """Cholesky factor of shift*I + hbar^T hbar (size 2K), cached per shift."""
        if shift not in self._caps:
            C = self.hbar.T @ self.hbar
            C[np.diag_indices_from(C)] += shift
            self._caps[shift] = cho_factor(C, lower=True)
        return self._caps[shift]


class FeasibilityProblem:
    """The lifted problem  find V : A V + b in D  for one target rate."""

    def __init__(self, channels: LiftedChannels, s_c: float, include_power: bool = True):
        self.channels = channels
        self.M, self.N, self.K = channels.M, channels.N, channels.K
        self.s_c = float(s_c)
        self.e_sc = e_factor(s_c)
        self.sqrt_e = np.sqrt(self.e_sc)
        self.include_power = include_power
        K, M, N = self.K, self.M, self.N
        self.soc_dim = 2 * K + 2
        self.soc_size = K * self.soc_dim
        radii = channels.radii if include_power else np.empty(0)
        self.layout = ConeLayout(K, self.soc_dim, radii, 2 * K * N if include_power else 0)
        self.n_rows = self.layout.size
        self.n_cols = 2 * M * N * K
        b = np.zeros(self.n_rows)
        b[np.arange(K) * self.soc_dim + 2 * K] = channels.sigma
        b.setflags(write=False)
        self.b = b
        self.mask_rows = self._mask_rows()

    @property
    def block_dim(self) -> int:
        return 2 * self.M * self.N

    @property
    def hbar(self) -> np.ndarray:
        return self.channels.hbar

    def _mask_rows(self) -> np.ndarray:
        K, M, N = self.K, self.M, self.N
        rows = []
        for j in range(K):
            pairs = (np.arange(K)[:, None] * self.soc_dim + 2 * j + np.arange(2)).reshape(-1)
            last = [j * self.soc_dim + 2 * K + 1]
            parts = [pairs, last]
            if self.include_power:
                power = (self.soc_size + np.arange(M)[:, None] * 2 * K * N
                         + j * 2 * N + np.arange(2 * N)).reshape(-1)
                parts.append(power)
            rows.append(np.concatenate(parts))
        out = np.array(rows, dtype=np.intp)
        out.setflags(write=False)
        return out

    def nonzero_mask(self, j: int) -> np.ndarray:
        """Row indices where A_j is nonzero (the diagonal of D_j)."""
        return self.mask_rows[j]

    # -- block operators ----------------------------------------------------

    def _check_block(self, j, v=None):
        if not 0 <= j < self.K:
            raise IndexError(f"block index {j} out of range 0..{self.K - 1}")
        if v is not None and np.shape(v) != (self.block_dim,):
            raise ValueError(f"block vector must have length {self.block_dim}")

    def block_values(self, idx, Vs: np.ndarray) -> np.ndarray:
        """Values of A_j v_j on mask rows for blocks ``idx``; shape (len(idx), nnz)."""
        idx = np.asarray(idx)
        Y = Vs @ self.hbar  # (s, 2K)
        parts = [Y, self.sqrt_e * Y[np.arange(idx.size), 2 * idx][:, None]]
        if self.include_power:
            s = idx.size
            parts.append(Vs.reshape(s, 2, self.M, self.N).transpose(0, 2, 1, 3).reshape(s, -1))
        return np.concatenate(parts, axis=1)

    def block_transpose_values(self, idx, G: np.ndarray) -> np.ndarray:
        """A_j^T applied to mask-row values G (len(idx), nnz); shape (len(idx), 2MN)."""
        idx = np.asarray(idx)
        K2 = 2 * self.K
        X = G[:, :K2] @ self.hbar.T
        X += (self.sqrt_e * G[:, K2])[:, None] * self.channels.htilde_rows[idx]
        if self.include_power:
            s = idx.size
            X += G[:, K2 + 1:].reshape(s, self.M, 2, self.N).transpose(0, 2, 1, 3).reshape(s, -1)
        return X

    def apply_block(self, j: int, v_j: np.ndarray) -> np.ndarray:
        """A_j v_j as a full-length vector (nonzero only on the block's mask)."""
        self._check_block(j, v_j)
        out = np.zeros(self.n_rows)
        out[self.mask_rows[j]] = self.block_values(np.array([j]), np.asarray(v_j)[None, :])[0]
        return out

    def apply_block_transpose(self, j: int, r: np.ndarray) -> np.ndarray:
        self._check_block(j)
        r = np.asarray(r, dtype=float)
        if r.shape != (self.n_rows,):
            raise ValueError(f"residual must have length {self.n_rows}")
        return self.block_transpose_values(np.array([j]), r[self.mask_rows[j]][None, :])[0]

    # -- full operators -----------------------------------------------------

    def apply(self, V: np.ndarray) -> np.ndarray:
        """sum_j A_j v_j for V of shape (K, 2MN)."""
        K = self.K
        V = np.asarray(V, dtype=float).reshape(K, self.block_dim)
        Y = V @ self.hbar  # Y[j, 2k+c] = (H~_k v_j)_c
        out = np.empty(self.n_rows)
        soc = out[: self.soc_size].reshape(K, self.soc_dim)
        soc[:, : 2 * K] = Y.reshape(K, K, 2).transpose(1, 0, 2).reshape(K, 2 * K)
        soc[:, 2 * K] = 0.0
        soc[:, 2 * K + 1] = self.sqrt_e * Y[np.arange(K), 2 * np.arange(K)]
        if self.include_power:
            out[self.soc_size:] = permute_to_ap_major(V, self.M, self.N)
        return out

    def apply_transpose(self, r: np.ndarray) -> np.ndarray:
        """A^T r, returned as (K, 2MN)."""
        K = self.K
        r = np.asarray(r, dtype=float)
        soc = r[: self.soc_size].reshape(K, self.soc_dim)
        P = soc[:, : 2 * K].reshape(K, K, 2).transpose(1, 0, 2).reshape(K, 2 * K)
        X = P @ self.hbar.T
        X += (self.sqrt_e * soc[:, 2 * K + 1])[:, None] * self.channels.htilde_rows
        if self.include_power:
            X += permute_from_ap_major(r[self.soc_size:], self.M, self.N, K)
        return X

    def soc_vectors(self, V: np.ndarray) -> np.ndarray:
        """The K assembled SOC blocks of A V + b, shape (K, 2K+2)."""
        return (self.apply(V) + self.b)[: self.soc_size].reshape(self.K, self.soc_dim)


def build_problem(scenario_or_channels, s_c: float, include_power: bool = True) -> FeasibilityProblem:
    """Lift a scenario (or reuse already-lifted channels) at target rate s_c."""
    ch = scenario_or_channels
    if isinstance(ch, Scenario):
        ch = LiftedChannels(ch)
    return FeasibilityProblem(ch, s_c, include_power=include_power)


def build_qos_problem(scenario_or_channels, s_c: float) -> FeasibilityProblem:
    """SOC-only variant used by the min-power mode."""
    return build_problem(scenario_or_channels, s_c, include_power=False)


# -- Gram inverses ----------------------------------------------------------

@dataclass(frozen=True)
class WoodburyFactors:
    """Factored inverses of  shift*I + hbar hbar^T + e h~_j h~_j^T  for every j.

    The shared part is inverted through the 2K x 2K capacitance matrix; each
    block then adds its rank-one e h~_j h~_j^T term via Sherman-Morrison.
    """

    hbar: np.ndarray
    shift: float
    cap: tuple
    u_rows: np.ndarray  # (K, 2MN): rows B^{-1} h~_j
    gamma: np.ndarray  # h~_j^T B^{-1} h~_j
    e_sc: float
    htilde_rows: np.ndarray = field(repr=False)
    chol: np.ndarray = field(init=False, repr=False)  # lower factor of the capacitance
    hbar_t: np.ndarray = field(init=False, repr=False)
    cap_inv_hbar_t: np.ndarray = field(init=False, repr=False)  # C^{-1} hbar^T

    def __post_init__(self):
        c, lower = self.cap
        object.__setattr__(self, "chol", np.ascontiguousarray(np.tril(c) if lower else np.triu(c).T))
        object.__setattr__(self, "hbar_t", np.ascontiguousarray(self.hbar.T))
        object.__setattr__(self, "cap_inv_hbar_t", cho_solve(self.cap, self.hbar_t))

    def base_solve_rows(self, X: np.ndarray) -> np.ndarray:
        """Rows of X multiplied by B^{-1}, B = shift*I + hbar hbar^T."""
        Z = (X @ self.hbar) @ self.cap_inv_hbar_t
        Z -= X
        Z *= -1.0 / self.shift
        return Z

    def solve_rows(self, idx, X: np.ndarray) -> np.ndarray:
        """Row i of X multiplied by (A_j^T A_j)^{-1} for j = idx[i]."""
        idx = np.asarray(idx)
        Y = self.base_solve_rows(X)
        ht = self.htilde_rows[idx]
        coef = self.e_sc * np.einsum("ij,ij->i", Y, ht) / (1.0 + self.e_sc * self.gamma[idx])
        Y -= coef[:, None] * self.u_rows[idx]
        return Y

    def dense_gram(self, j: int) -> np.ndarray:
        h = self.htilde_rows[j]
        G = self.hbar @ self.hbar.T + self.e_sc * np.outer(h, h)
        G[np.diag_indices_from(G)] += self.shift
        return G


def build_factors(problem: FeasibilityProblem, extra_shift: float = 0.0) -> WoodburyFactors:
    """Woodbury factors for the block Gram matrices of ``problem``.

    ``extra_shift`` adds a multiple of the identity (the min-power mode uses
    2/beta); the power rows already contribute the identity when present.
    """
    ch = problem.channels
    shift = (1.0 if problem.include_power else 0.0) + float(extra_shift)
    if not shift > 0:
        raise ValueError("Gram matrix needs a positive identity shift")
    cap = ch.capacitance(shift)
    key = ("u", shift)
    if key not in ch._caps:
        tmp = WoodburyFactors(ch.hbar, shift, cap, None, None, 0.0, ch.htilde_rows)
        U = tmp.base_solve_rows(ch.htilde_rows)
        U.setflags(write=False)
        ch._caps[key] = (U, np.einsum("ij,ij->i", U, ch.htilde_rows))
    U, gamma = ch._caps[key]
    return WoodburyFactors(ch.hbar, shift, cap, U, gamma, problem.e_sc, ch.htilde_rows)


def check_factors(problem: FeasibilityProblem, factors: WoodburyFactors) -> None:
    if factors.hbar is not problem.hbar or factors.e_sc != problem.e_sc:
        raise StaleFactorsError("Woodbury factors were built for a different problem")


def solve_block_ls(problem: FeasibilityProblem, factors: WoodburyFactors, j: int, rhs: np.ndarray) -> np.ndarray:
    """-(A_j^T A_j)^{-1} A_j^T D_j rhs for one block."""
    check_factors(problem, factors)
    x = problem.apply_block_transpose(j, rhs)
    return -factors.solve_rows(np.array([j]), x[None, :])[0]


def solve_all_blocks(problem, factors, rhs) -> np.ndarray:
    check_factors(problem, factors)
    return -factors.solve_rows(np.arange(problem.K), problem.apply_transpose(rhs))


def apply_block(problem: FeasibilityProblem, j: int, v_j) -> np.ndarray:
    return problem.apply_block(j, v_j)


def apply_block_transpose(problem: FeasibilityProblem, j: int, r) -> np.ndarray:
    return problem.apply_block_transpose(j, r)


# -- physical quantities ----------------------------------------------------

def achieved_rates(channels: np.ndarray, noise_power: np.ndarray, beamformers: np.ndarray) -> np.ndarray:
    """Per-user rates in bits/s/Hz; channels and beamformers are (K, M, N)."""
    h = np.asarray(channels, dtype=complex)
    v = np.asarray(beamformers, dtype=complex)
    if not np.all(np.isfinite(v)):
        raise ValueError("beamformers must be finite")
    K = h.shape[0]
    G = np.abs(h.reshape(K, -1).conj() @ v.reshape(K, -1).T) ** 2  # G[k, j] = |h_k^H v_j|^2
    desired = np.diag(G)
    interference = G.sum(axis=1) - desired
    return np.log2(1.0 + desired / (interference + np.asarray(noise_power, dtype=float)))


def scenario_rates(scenario: Scenario, beamformers: np.ndarray) -> np.ndarray:
    return achieved_rates(scenario.channels, scenario.noise_power, beamformers)


def per_ap_power(beamformers: np.ndarray) -> np.ndarray:
    v = np.asarray(beamformers)
    return np.sum(np.abs(v) ** 2, axis=(0, 2))


# -- dense debug path -------------------------------------------------------

def dense_matrix(problem: FeasibilityProblem) -> np.ndarray:
    """Explicit A built entry by entry from the block definitions (small only)."""
    if problem.n_cols > DENSE_LIMIT:
        raise ValueError(f"dense materialisation limited to 2MNK <= {DENSE_LIMIT}")
    K, M, N = problem.K, problem.M, problem.N
    d = 2 * M * N
    A = np.zeros((problem.n_rows, problem.n_cols))
    for k in range(K):
        Ht, _ = real_channel(problem.channels.h[k])
        base = k * problem.soc_dim
        for j in range(K):
            A[base + 2 * j: base + 2 * j + 2, j * d:(j + 1) * d] = Ht
        A[base + 2 * K + 1, k * d:(k + 1) * d] = problem.sqrt_e * Ht[0]
    if problem.include_power:
        for m in range(M):
            for k in range(K):
                for part in range(2):
                    for n in range(N):
                        row = problem.soc_size + m * 2 * K * N + k * 2 * N + part * N + n
                        col = k * d + part * M * N + m * N + n
                        A[row, col] = 1.0
    return A


def dump_dense(problem: FeasibilityProblem, path) -> None:
    """Write the dense A and b in Matrix Market coordinate format."""
    from scipy.io import mmwrite
    from scipy.sparse import coo_matrix

    A = coo_matrix(dense_matrix(problem))
    mmwrite(str(path), A, comment=f"K={problem.K} M={problem.M} N={problem.N} s_c={problem.s_c!r}")
    mmwrite(str(path) + ".b", coo_matrix(problem.b[:, None]))
