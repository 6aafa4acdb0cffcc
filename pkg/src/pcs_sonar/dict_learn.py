"""Discriminative refinement of per-class patch dictionaries.

For each class the learned atoms should reconstruct that class's patches
well while reconstructing everybody else's patches badly.  The per-class
objective at sparsity level L is

    (1/n) ||Y_in - D B_in||_F^2  -  (rho/n_out) ||Y_out - D B_out||_F^2

where the codes B are L-sparse per column (orthogonal matching pursuit) and
D is updated by a projected gradient step with a backtracking line search,
so every accepted update is non-increasing at fixed codes.  Atoms stay unit
norm throughout.

Learned dictionaries persist to a flat little-endian binary file:
magic ``PCSD``, version u32, N, M, K (u32 each), K (start, stop) column
ranges (u32 pairs), then column-major float64 atom data.
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .sparse_solver import Dictionary

DICT_MAGIC = b"PCSD"
DICT_VERSION = 1


@dataclass
class DfdlConfig:
    rho: float = 0.1
    sparsity_level: int = 4
    atoms_per_class: int = 64
    outer_iters: int = 10
    seed: int = 0

    def __post_init__(self):
        if self.rho < 0:
            raise ValueError("rho must be >= 0")
        if self.sparsity_level < 0:
            raise ValueError("sparsity_level must be >= 0")
        if self.atoms_per_class < 1:
            raise ValueError("atoms_per_class must be >= 1")
        if self.outer_iters < 1:
            raise ValueError("outer_iters must be >= 1")


@dataclass
class CodeMatrix:
    codes: np.ndarray  # (atoms, samples)
    support_counts: np.ndarray  # nonzeros per column

    def __post_init__(self):
        self.codes = np.asarray(self.codes, dtype=float)
        self.support_counts = np.asarray(self.support_counts, dtype=int)


def sparse_code_omp(samples: np.ndarray, atoms: np.ndarray, level: int) -> CodeMatrix:
    """Orthogonal matching pursuit, column by column.

    Each column receives min(level, rank) greedy selections, stopping early
    once its residual norm falls below 1e-10; coefficients are the least
    squares fit on the selected support.
    """
    y = np.asarray(samples, dtype=float)
    d = np.asarray(atoms, dtype=float)
    if y.ndim == 1:
        y = y[:, None]
    if d.ndim != 2 or y.shape[0] != d.shape[0]:
        raise ValueError("samples and atoms must share the row dimension")
    norms = np.linalg.norm(d, axis=0)
    if np.any(np.abs(norms - 1.0) > 1e-6):
        raise ValueError("atoms must be unit norm")
    n_atoms, n_samples = d.shape[1], y.shape[1]
    codes = np.zeros((n_atoms, n_samples))
    counts = np.zeros(n_samples, dtype=int)
    if level == 0:
        return CodeMatrix(codes, counts)
    resid = y.copy()
    supports = [[] for _ in range(n_samples)]
    active = np.linalg.norm(resid, axis=0) >= 1e-10
    for _ in range(min(level, n_atoms)):
        if not active.any():
            break
        corr = np.abs(d.T @ resid)  # one pass for every still-active column
        for col in np.nonzero(active)[0]:
            c = corr[:, col]
            if supports[col]:
                c = c.copy()
                c[supports[col]] = -1.0
            j = int(np.argmax(c))
            if c[j] <= 1e-12:  # residual orthogonal to the remaining atoms
                active[col] = False
                continue
            supports[col].append(j)
            sub = d[:, supports[col]]
            coef, *_ = np.linalg.lstsq(sub, y[:, col], rcond=None)
            codes[:, col] = 0.0
            codes[supports[col], col] = coef
            resid[:, col] = y[:, col] - sub @ coef
            counts[col] = len(supports[col])
            if np.linalg.norm(resid[:, col]) < 1e-10:
                active[col] = False
    return CodeMatrix(codes, counts)


def dfdl_objective(atoms, y_in, y_out, codes_in, codes_out, rho: float) -> float:
    """Signed discriminative objective: in-class fit minus rho-weighted out-class fit."""
    n = y_in.shape[1]
    n_out = y_out.shape[1]
    if n == 0 or n_out == 0:
        raise ValueError("both the in-class and out-class sample sets must be nonempty")
    e_in = y_in - atoms @ codes_in
    e_out = y_out - atoms @ codes_out
    return float(np.sum(e_in * e_in) / n - rho * np.sum(e_out * e_out) / n_out)


def _normalize_columns(mat: np.ndarray, fallback: np.ndarray) -> np.ndarray:
    """Unit-normalize columns; degenerate (near-zero) columns keep their old atom."""
    norms = np.linalg.norm(mat, axis=0)
    out = mat.copy()
    dead = norms < 1e-12
    if dead.any():
        out[:, dead] = fallback[:, dead]
        norms = np.linalg.norm(out, axis=0)
    return out / norms


def learn_dictionary(patch_sets, config: DfdlConfig, history: list | None = None) -> Dictionary:
    """Learn one refined sub-dictionary per class and concatenate them.

    Per class: atoms start as a seeded random subset of that class's patches,
    then ``outer_iters`` rounds alternate OMP coding (in-class and out-class)
    with a backtracked projected-gradient update of the atoms.  Appends one
    record per update to `history` when a list is passed.

    The out-class pool is assembled in sorted-label order so the result is
    equivariant under permutations of the input class order.
    """
    groups: dict[str, list[np.ndarray]] = {}
    for ps in patch_sets:
        if ps.label is None:
            raise ValueError("patch sets must carry a class label")
        groups.setdefault(ps.label, []).append(ps.patches)
    if len(groups) < 2:
        raise ValueError("need at least 2 classes")
    pools = {label: np.hstack(mats) for label, mats in groups.items()}
    for label, pool in pools.items():
        if pool.shape[1] < config.atoms_per_class:
            raise ValueError(
                f"class {label!r} has {pool.shape[1]} patches, "
                f"fewer than atoms_per_class={config.atoms_per_class}"
            )
        if not np.any(pool):
            raise ValueError(f"class {label!r} is all zero")

    labels = list(pools)  # first-seen input order defines the output blocks
    blocks = []
    for label in labels:
        y_in = pools[label]
        y_out = np.hstack([pools[l] for l in sorted(pools) if l != label])
        rng = np.random.default_rng([config.seed, zlib.crc32(label.encode("utf-8"))])
        pick = np.sort(rng.choice(y_in.shape[1], size=config.atoms_per_class, replace=False))
        atoms = y_in[:, pick].copy()
        level = min(config.sparsity_level, config.atoms_per_class)
        for it in range(config.outer_iters):
            b_in = sparse_code_omp(y_in, atoms, level).codes
            b_out = sparse_code_omp(y_out, atoms, level).codes
            obj = dfdl_objective(atoms, y_in, y_out, b_in, b_out, config.rho)
            grad = (
                -(2.0 / y_in.shape[1]) * (y_in - atoms @ b_in) @ b_in.T
                + (2.0 * config.rho / y_out.shape[1]) * (y_out - atoms @ b_out) @ b_out.T
            )
            step = 1.0
            accepted = False
            for _ in range(40):
                cand = _normalize_columns(atoms - step * grad, atoms)
                cand_obj = dfdl_objective(cand, y_in, y_out, b_in, b_out, config.rho)
                if cand_obj <= obj:
                    accepted = True
                    break
                step *= 0.5
            if accepted:
                atoms = cand
            if history is not None:
                norms = np.linalg.norm(atoms, axis=0)
                history.append(
                    {
                        "class": label,
                        "iteration": it,
                        "objective_before": obj,
                        "objective_after": cand_obj if accepted else obj,
                        "step": step if accepted else 0.0,
                        "accepted": accepted,
                        "atom_norm_dev": float(np.max(np.abs(norms - 1.0))),
                    }
                )
        blocks.append(atoms)
    index_sets = []
    start = 0
    for block in blocks:
        index_sets.append(np.arange(start, start + block.shape[1]))
        start += block.shape[1]
    return Dictionary(np.hstack(blocks), index_sets, labels)


# ---------------------------------------------------------------------------
# persistence


def save_dictionary(path, dic: Dictionary) -> None:
    """Write the PCSD flat binary format (requires contiguous class blocks)."""
    ranges = []
    for ix in dic.class_index_sets:
        s = np.sort(ix)
        if len(s) == 0 or not np.array_equal(s, np.arange(s[0], s[-1] + 1)):
            raise ValueError("class index sets must be contiguous ranges to persist")
        ranges.append((int(s[0]), int(s[-1]) + 1))
    with open(path, "wb") as fh:
        fh.write(DICT_MAGIC)
        fh.write(struct.pack("<IIII", DICT_VERSION, dic.n_rows, dic.n_atoms, dic.n_classes))
        for start, stop in ranges:
            fh.write(struct.pack("<II", start, stop))
        fh.write(np.asarray(dic.atoms, dtype="<f8").flatten(order="F").tobytes())


def load_dictionary(path, class_labels: list[str] | None = None) -> Dictionary:
    """Read the PCSD format; labels default to class_0..class_{K-1}."""
    data = Path(path).read_bytes()
    if data[:4] != DICT_MAGIC:
        raise ValueError("not a PCSD dictionary file")
    version, n, m, k = struct.unpack_from("<IIII", data, 4)
    if version != DICT_VERSION:
        raise ValueError(f"unsupported PCSD version {version}")
    off = 20
    index_sets = []
    for _ in range(k):
        start, stop = struct.unpack_from("<II", data, off)
        index_sets.append(np.arange(start, stop))
        off += 8
    atoms = np.frombuffer(data, dtype="<f8", count=n * m, offset=off).reshape(
        (n, m), order="F"
    )
    if class_labels is None:
        class_labels = [f"class_{i}" for i in range(k)]
    return Dictionary(atoms.copy(), index_sets, list(class_labels))
