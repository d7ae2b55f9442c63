"""Projections onto the product set D = C x ... x C x P_1 x ... x P_M,
the squared-distance objective f, its gradient and its proximal map.

Every SOC block is the standard cone {(rest, last): ||rest|| <= last}; every
power block is a Euclidean ball of radius sqrt(p_m).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MEMBER_TOL = 1e-12


@dataclass(frozen=True)
class ConeLayout:
    num_soc: int
    soc_dim: int
    radii: np.ndarray  # (M,), empty when there are no power blocks
    power_dim: int = 0

    def __post_init__(self):
        radii = np.asarray(self.radii, dtype=float).reshape(-1)
        object.__setattr__(self, "radii", radii)
        if self.num_soc and self.soc_dim < 2:
            raise ValueError("SOC blocks need dimension >= 2")
        if radii.size and (self.power_dim < 1 or np.any(radii <= 0)):
            raise ValueError("power blocks need positive radii and dimension")

    @property
    def soc_size(self) -> int:
        return self.num_soc * self.soc_dim

    @property
    def num_power(self) -> int:
        return self.radii.size

    @property
    def size(self) -> int:
        return self.soc_size + self.num_power * self.power_dim

    def blocks(self, w):
        """Views of ``w`` as (num_soc, soc_dim) and (M, power_dim) arrays."""
        w = np.asarray(w)
        if w.shape[-1] != self.size:
            raise ValueError(f"vector length {w.shape[-1]} != layout size {self.size}")
        soc = w[: self.soc_size].reshape(self.num_soc, self.soc_dim)
        pw = w[self.soc_size:].reshape(self.num_power, self.power_dim)
        return soc, pw


def _soc_member(nrest, last, tol=MEMBER_TOL):
    return nrest <= last + tol * (1.0 + np.hypot(nrest, last))


def project_soc(x) -> np.ndarray:
    """Euclidean projection of one vector (rest, last) onto the SOC."""
    x = np.asarray(x, dtype=float)
    if x.ndim != 1 or x.size < 2:
        raise ValueError("SOC vectors need length >= 2")
    return project_soc_rows(x[None, :])[0]


def project_soc_rows(X: np.ndarray) -> np.ndarray:
    """Row-wise SOC projection of a (B, n) array."""
    rest = X[:, :-1]
    last = X[:, -1]
    nrest = np.sqrt(np.einsum("ij,ij->i", rest, rest))
    inside = _soc_member(nrest, last)
    with np.errstate(divide="ignore", invalid="ignore"):
        # 1 inside the cone, 0 in the polar cone, (1 + last/|rest|)/2 between
        a = np.where(inside, 1.0, np.clip(0.5 * (1.0 + last / nrest), 0.0, 1.0))
    out = np.empty_like(X)
    np.multiply(rest, a[:, None], out=out[:, :-1])
    out[:, -1] = np.where(inside, last, a * nrest)
    return out


def project_power_block(d, radius: float) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    return project_ball_rows(d[None, :], np.array([radius]))[0]


def project_ball_rows(X: np.ndarray, radii: np.ndarray) -> np.ndarray:
    if np.any(radii <= 0):
        raise ValueError("radius must be > 0")
    nrm = np.sqrt(np.einsum("ij,ij->i", X, X))
    scale = np.where(nrm > radii * (1.0 + MEMBER_TOL), radii / np.maximum(nrm, 1e-300), 1.0)
    return X * scale[:, None]


def project_D(w, layout: ConeLayout) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    soc, pw = layout.blocks(w)
    out = np.empty_like(w)
    osoc, opw = layout.blocks(out)
    osoc[...] = project_soc_rows(soc)
    if layout.num_power:
        opw[...] = project_ball_rows(pw, layout.radii)
    return out


def f_value(w, layout: ConeLayout) -> float:
    """Half the squared distance from ``w`` to D."""
    r = np.asarray(w, dtype=float) - project_D(w, layout)
    return 0.5 * float(r @ r)


def f_gradient(w, layout: ConeLayout) -> np.ndarray:
    w = np.asarray(w, dtype=float)
    return w - project_D(w, layout)


def prox_f_block(d, beta: float, kind: str = "soc", radius: float | None = None) -> np.ndarray:
    """argmin_w f_i(w) + beta/2 ||w - d||^2 for a single block.

    ``kind`` is ``"soc"`` or ``"ball"`` (the latter needs ``radius``).
    """
    if not beta > 0:
        raise ValueError("beta must be > 0")
    d = np.asarray(d, dtype=float)
    if kind == "soc":
        p = project_soc(d)
    elif kind == "ball":
        if radius is None:
            raise ValueError("ball blocks need a radius")
        p = project_power_block(d, radius)
    else:
        raise ValueError(f"unknown block kind {kind!r}")
    if np.array_equal(p, d):
        return d.copy()
    return (beta * d + p) / (1.0 + beta)


def prox_D(d, beta: float, layout: ConeLayout, return_f: bool = False):
    """Blockwise prox of f at ``d`` with weight ``beta``.

    With ``return_f`` also returns f at the output point, which is free:
    the output lies on the segment [d, Proj(d)] so its projection is Proj(d).
    """
    if not beta > 0:
        raise ValueError("beta must be > 0")
    p = project_D(d, layout)
    gap = d - p
    w = p + (beta / (1.0 + beta)) * gap
    if return_f:
        c = beta / (1.0 + beta)
        return w, 0.5 * c * c * float(gap @ gap)
    return w
