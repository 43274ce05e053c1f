"""Weighted proper orthogonal decomposition of snapshot matrices.

Method of snapshots: the M x M Gram matrix S' W S is diagonalized and the
modes are recovered as q_i = S phi_i / sqrt(lambda_i), which avoids ever
factorizing the (large, sparse) weighting matrix W.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp

from .errors import ConfigError, NumericalError

RANK_CUTOFF = 1e-12  # relative to the leading eigenvalue


def weighting_hash(W) -> str:
    """Content hash of a (sparse or dense) symmetric weighting matrix.

    Dense input is converted to CSR first so the hash depends only on the
    matrix values, not on the storage format.
    """
    Wc = (W if sp.issparse(W) else sp.csr_matrix(np.asarray(W, dtype=float))).tocsr()
    Wc.sort_indices()
    Wc.eliminate_zeros()
    h = hashlib.sha256()
    h.update(np.asarray(Wc.shape, dtype=np.int64).tobytes())
    h.update(Wc.indptr.astype(np.int64).tobytes())
    h.update(Wc.indices.astype(np.int64).tobytes())
    h.update(Wc.data.astype(np.float64).tobytes())
    return h.hexdigest()


@dataclass
class SnapshotMatrix:
    """Full-order solutions as columns, aligned with their parameter vectors."""

    data: np.ndarray              # (N, M)
    params: list = field(default_factory=list)

    def __post_init__(self):
        self.data = np.asarray(self.data, dtype=float)
        if self.data.ndim != 2 or self.data.shape[1] < 1:
            raise ValueError("snapshot matrix must be N x M with M >= 1")
        if self.params and len(self.params) != self.data.shape[1]:
            raise ValueError("parameter list does not match the number of columns")


@dataclass
class PodBasis:
    Q: np.ndarray                   # (N, m), W-orthonormal modes
    eigenvalues: np.ndarray         # retained, descending, > 0
    all_eigenvalues: np.ndarray     # full spectrum of the Gram matrix
    energy_captured: float
    weighting_id: str
    rank_truncated: bool = False
    metadata: dict = field(default_factory=dict)

    @property
    def m(self) -> int:
        return self.Q.shape[1]

    @property
    def n(self) -> int:
        return self.Q.shape[0]


def weighted_pod(
    S: SnapshotMatrix,
    W,
    m: int | None = None,
    energy_tol: float | None = None,
    metadata: dict | None = None,
) -> PodBasis:
    """POD basis of the snapshot set in the W-weighted inner product.

    Either ``m`` fixes the mode count directly, or ``energy_tol`` selects the
    smallest m whose relative cumulative eigenvalue energy reaches the
    tolerance.  Eigenvalues below RANK_CUTOFF * lambda_1 are discarded as
    numerically rank deficient.
    """
    if (m is None) == (energy_tol is None):
        raise ConfigError("specify exactly one of mode count m or energy_tol")
    if energy_tol is not None and not 0.0 < energy_tol <= 1.0:
        raise ConfigError("energy_tol must lie in (0, 1]")
    data = S.data
    Wop = W.tocsr() if sp.issparse(W) else np.asarray(W, dtype=float)
    asym = abs(Wop - Wop.T)
    asym_max = asym.max() if not sp.issparse(W) else (asym.data.max() if asym.nnz else 0.0)
    scale = abs(Wop).max() if not sp.issparse(W) else abs(Wop).data.max()
    if asym_max > 1e-10 * max(scale, 1.0):
        raise ConfigError("weighting matrix is not symmetric")

    gram = data.T @ (Wop @ data)
    gram = 0.5 * (gram + gram.T)
    lam, phi = np.linalg.eigh(gram)
    order = np.argsort(lam)[::-1]
    lam, phi = lam[order], phi[:, order]
    total = float(np.sum(np.clip(lam, 0.0, None)))
    rank = int(np.sum(lam > RANK_CUTOFF * max(lam[0], 0.0)))
    if rank == 0:
        raise NumericalError("snapshot matrix has numerical rank zero")

    truncated = False
    if m is not None:
        if m < 1:
            raise ConfigError("mode count m must be >= 1")
        if m > rank:
            m_eff = rank
            truncated = True
        else:
            m_eff = m
    else:
        cum = np.cumsum(lam[:rank]) / total
        m_eff = int(np.searchsorted(cum, energy_tol) + 1)
        m_eff = min(m_eff, rank)

    lam_keep = lam[:m_eff]
    Q = data @ (phi[:, :m_eff] / np.sqrt(lam_keep))
    # sign convention: the entry of largest magnitude is positive
    for j in range(m_eff):
        i = int(np.argmax(np.abs(Q[:, j])))
        if Q[i, j] < 0:
            Q[:, j] = -Q[:, j]
    energy = float(np.sum(lam_keep) / total)
    return PodBasis(
        Q=Q,
        eigenvalues=lam_keep,
        all_eigenvalues=lam,
        energy_captured=energy,
        weighting_id=weighting_hash(W),
        rank_truncated=truncated,
        metadata=metadata or {},
    )


def _check_hash(basis: PodBasis, W) -> None:
    if weighting_hash(W) != basis.weighting_id:
        raise ConfigError("weighting matrix does not match the basis (hash mismatch)")


def project(basis: PodBasis, W, u: np.ndarray) -> np.ndarray:
    """Reduced coordinates Q' W u."""
    _check_hash(basis, W)
    return basis.Q.T @ (W @ np.asarray(u, dtype=float))


def reconstruct(basis: PodBasis, ubar: np.ndarray) -> np.ndarray:
    """Full vector Q ubar."""
    ubar = np.asarray(ubar, dtype=float)
    if ubar.shape[-1] != basis.m:
        raise ConfigError(f"reduced vector has length {ubar.shape[-1]}, basis has m={basis.m}")
    return basis.Q @ ubar


def reconstruction_error(basis: PodBasis, W, u: np.ndarray) -> float:
    """Relative W-semi-norm error of the rank-m reconstruction of u."""
    from .postprocess import seminorm_error

    v = reconstruct(basis, project(basis, W, u))
    return seminorm_error(u, v, W)


# ---------------------------------------------------------------------------
# persistence: JSON header + little-endian float64 payload, column-major

_MAGIC = b"IGFPOD1\n"


def save_basis(basis: PodBasis, path) -> None:
    header = {
        "format": "igafield-pod-basis",
        "version": 1,
        "n": basis.n,
        "m": basis.m,
        "eigenvalues": basis.eigenvalues.tolist(),
        "all_eigenvalues": basis.all_eigenvalues.tolist(),
        "energy_captured": basis.energy_captured,
        "weighting_id": basis.weighting_id,
        "rank_truncated": basis.rank_truncated,
        "metadata": basis.metadata,
    }
    blob = json.dumps(header, sort_keys=True).encode()
    payload = np.asfortranarray(basis.Q, dtype="<f8").tobytes(order="F")
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(struct.pack("<I", len(blob)))
        fh.write(blob)
        fh.write(payload)


def read_basis_header(path) -> dict:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError(f"{path}: not a POD basis file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        return json.loads(fh.read(hlen))


def load_basis(path) -> PodBasis:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigError(f"{path}: not a POD basis file")
        (hlen,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(hlen))
        n, m = header["n"], header["m"]
        payload = fh.read(n * m * 8)
        if len(payload) != n * m * 8:
            raise ConfigError(f"{path}: truncated payload")
        Q = np.frombuffer(payload, dtype="<f8").reshape((n, m), order="F").copy()
    return PodBasis(
        Q=Q,
        eigenvalues=np.asarray(header["eigenvalues"]),
        all_eigenvalues=np.asarray(header["all_eigenvalues"]),
        energy_captured=header["energy_captured"],
        weighting_id=header["weighting_id"],
        rank_truncated=header["rank_truncated"],
        metadata=header.get("metadata", {}),
    )
