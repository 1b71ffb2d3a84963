"""Agency data: choice counts, co-subscription networks and their vectorization.

Product indices are 1-based wherever they cross the public surface (CSV files,
``pair_index``) and 0-based inside arrays. Edge indices ``l`` are always
0-based and follow the column-major order of the strict lower triangle:
(2,1), (3,1), ..., (V,1), (3,2), ..., (V,V-1).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np


class DataError(ValueError):
    """Raised for invalid matrices, counts or malformed input files."""


def n_pairs(V: int) -> int:
    return V * (V - 1) // 2


def pair_index(v: int, u: int, V: int) -> int:
    """Edge index of the product pair (v, u), with 1 <= u < v <= V."""
    if not (1 <= u < v <= V):
        raise DataError(f"invalid pair (v={v}, u={u}) for V={V}; need 1 <= u < v <= V")
    offset = (u - 1) * V - (u - 1) * u // 2
    return offset + (v - u - 1)


def pair_from_index(l: int, V: int) -> tuple[int, int]:
    """Inverse of :func:`pair_index`; returns the 1-based pair (v, u)."""
    if not 0 <= l < n_pairs(V):
        raise DataError(f"edge index {l} out of range for V={V}")
    rows, cols = pair_rows_cols(V)
    return int(rows[l]) + 1, int(cols[l]) + 1


@lru_cache(maxsize=None)
def pair_rows_cols(V: int) -> tuple[np.ndarray, np.ndarray]:
    """0-based (v, u) arrays, v > u, listed in edge-index order."""
    cols, rows = np.triu_indices(V, 1)
    rows.setflags(write=False)
    cols.setflags(write=False)
    return rows, cols


@lru_cache(maxsize=None)
def edge_index_matrix(V: int) -> np.ndarray:
    """Symmetric V x V matrix of edge indices; -1 on the diagonal."""
    rows, cols = pair_rows_cols(V)
    out = np.full((V, V), -1, dtype=np.int64)
    out[rows, cols] = np.arange(rows.size)
    out[cols, rows] = np.arange(rows.size)
    out.setflags(write=False)
    return out


@lru_cache(maxsize=None)
def incident_edges(V: int) -> tuple[np.ndarray, np.ndarray]:
    """For every product v, its V-1 neighbours (ascending) and the matching edge indices.

    Returns ``(others, edges)``, both of shape (V, V-1), so that
    ``edges[v, j]`` is the edge joining ``v`` and ``others[v, j]``.
    """
    idx = edge_index_matrix(V)
    others = np.array([[w for w in range(V) if w != v] for v in range(V)], dtype=np.int64)
    edges = np.take_along_axis(idx, others, axis=1)
    others.setflags(write=False)
    edges.setflags(write=False)
    return others, edges


def lower_vec(matrix: np.ndarray) -> np.ndarray:
    """Strict lower triangle of a square matrix in edge-index order (no validation)."""
    rows, cols = pair_rows_cols(matrix.shape[-1])
    return matrix[..., rows, cols]


@dataclass(frozen=True)
class EdgeVector:
    v_count: int
    bits: np.ndarray

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if self.v_count < 2:
            raise DataError(f"need at least 2 products, got V={self.v_count}")
        if bits.shape != (n_pairs(self.v_count),):
            raise DataError(
                f"edge vector has length {bits.size}, expected {n_pairs(self.v_count)} for V={self.v_count}")
        bad = np.flatnonzero((bits != 0) & (bits != 1))
        if bad.size:
            raise DataError(f"edge vector entry {bad[0]} is {bits[bad[0]]}, expected 0 or 1")
        bits = bits.astype(np.uint8)
        bits.setflags(write=False)
        object.__setattr__(self, "bits", bits)

    def to_matrix(self) -> np.ndarray:
        return devectorize(self)

    def __eq__(self, other):
        if not isinstance(other, EdgeVector):
            return NotImplemented
        return self.v_count == other.v_count and np.array_equal(self.bits, other.bits)

    def __hash__(self):
        return hash((self.v_count, self.bits.tobytes()))


def vectorize_lower(matrix) -> EdgeVector:
    """Vectorize a symmetric, hollow, binary adjacency matrix."""
    A = np.asarray(matrix)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise DataError(f"adjacency matrix must be square, got shape {A.shape}")
    V = A.shape[0]
    diag = np.flatnonzero(np.diag(A) != 0)
    if diag.size:
        d = diag[0]
        raise DataError(f"nonzero diagonal entry at product {d + 1}: {A[d, d]}")
    bad = np.argwhere((A != 0) & (A != 1))
    if bad.size:
        r, c = bad[0]
        raise DataError(f"non-binary entry at ({r + 1},{c + 1}): {A[r, c]}")
    asym = np.argwhere(A != A.T)
    if asym.size:
        r, c = asym[0]
        raise DataError(f"matrix not symmetric at ({r + 1},{c + 1}): {A[r, c]} vs {A[c, r]}")
    return EdgeVector(V, lower_vec(A))


def devectorize(ev: EdgeVector) -> np.ndarray:
    V = ev.v_count
    rows, cols = pair_rows_cols(V)
    A = np.zeros((V, V), dtype=np.uint8)
    A[rows, cols] = ev.bits
    A[cols, rows] = ev.bits
    return A


# ---------------------------------------------------------------------------
# Thresholding raw co-subscription counts


def _check_cosub(cosub: np.ndarray, m: np.ndarray):
    V = m.size
    if cosub.shape != (V, V):
        raise DataError(f"co-subscription counts must be {V}x{V}, got {cosub.shape}")
    if np.any(m < 0) or np.any(cosub < 0):
        raise DataError("co-subscription and product counts must be nonnegative")
    rows, cols = pair_rows_cols(V)
    c = cosub[rows, cols]
    over = np.flatnonzero((c > m[rows]) | (c > m[cols]))
    if over.size:
        l = over[0]
        v, u = rows[l] + 1, cols[l] + 1
        raise DataError(
            f"inconsistent counts for pair ({v},{u}): c={c[l]} exceeds "
            f"m_{v}={m[rows[l]]} or m_{u}={m[cols[l]]}")
    return c, m[rows], m[cols]


def threshold_network(cosub_counts, product_counts, tau: float = 0.10) -> EdgeVector:
    """Adjacency from co-subscription counts.

    An edge (v, u) is present when the customers holding both products are
    strictly more than ``tau`` of those holding at least one of the two,
    i.e. ``c_vu / (m_v + m_u - c_vu) > tau``. Pairs nobody holds get no edge.

    ``cosub_counts`` is a V x V matrix (only the strict lower triangle is
    read) and ``product_counts`` the multi-product holders of each product.
    """
    if not 0.0 < tau < 1.0:
        raise DataError(f"tau must lie in (0, 1), got {tau}")
    m = np.asarray(product_counts, dtype=np.int64)
    cosub = np.asarray(cosub_counts, dtype=np.int64)
    c, mv, mu = _check_cosub(cosub, m)
    union = mv + mu - c
    safe = np.where(union > 0, union, 1)
    edge = (union > 0) & (c / safe > tau)
    return EdgeVector(m.size, edge.astype(np.uint8))


def threshold_sensitivity(cosub_data: Iterable[tuple[np.ndarray, np.ndarray]],
                          tau_a: float, tau_b: float) -> float:
    """Fraction of (agency, pair) edge entries that change between two thresholds."""
    changed = 0
    total = 0
    for cosub, m in cosub_data:
        a = threshold_network(cosub, m, tau_a).bits
        b = threshold_network(cosub, m, tau_b).bits
        changed += int(np.count_nonzero(a != b))
        total += a.size
    if total == 0:
        raise DataError("no agencies supplied")
    return changed / total


# ---------------------------------------------------------------------------
# Dataset


@dataclass(frozen=True)
class AgencyRecord:
    agency_id: str
    choice_counts: np.ndarray
    network: EdgeVector

    def __post_init__(self):
        counts = np.asarray(self.choice_counts, dtype=np.int64)
        if counts.shape != (self.network.v_count,):
            raise DataError(
                f"agency {self.agency_id}: {counts.size} choice counts for V={self.network.v_count}")
        if np.any(counts < 0):
            raise DataError(f"agency {self.agency_id}: negative choice count")
        if counts.sum() < 1:
            raise DataError(f"agency {self.agency_id}: no mono-product customers")
        counts.setflags(write=False)
        object.__setattr__(self, "choice_counts", counts)


@dataclass(frozen=True)
class Dataset:
    """Agencies sharing V products, with stacked arrays for the sampler.

    ``counts`` is (n, V) and ``edges`` is (n, L); rows follow ``agencies``.
    """
    v_count: int
    agencies: tuple[AgencyRecord, ...]
    counts: np.ndarray = field(init=False, repr=False)
    edges: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        agencies = tuple(self.agencies)
        if not agencies:
            raise DataError("dataset has no agencies")
        seen = set()
        for rec in agencies:
            if rec.network.v_count != self.v_count:
                raise DataError(f"agency {rec.agency_id}: V={rec.network.v_count}, dataset V={self.v_count}")
            if rec.agency_id in seen:
                raise DataError(f"duplicate agency id {rec.agency_id!r}")
            seen.add(rec.agency_id)
        counts = np.stack([r.choice_counts for r in agencies]).astype(np.int64)
        edges = np.stack([r.network.bits for r in agencies]).astype(np.uint8)
        counts.setflags(write=False)
        edges.setflags(write=False)
        object.__setattr__(self, "agencies", agencies)
        object.__setattr__(self, "counts", counts)
        object.__setattr__(self, "edges", edges)

    @property
    def n(self) -> int:
        return len(self.agencies)

    @property
    def n_pairs(self) -> int:
        return n_pairs(self.v_count)

    @property
    def ids(self) -> list[str]:
        return [r.agency_id for r in self.agencies]

    def index_of(self, agency_id: str) -> int:
        for i, r in enumerate(self.agencies):
            if r.agency_id == agency_id:
                return i
        raise KeyError(f"unknown agency id {agency_id!r}")

    @classmethod
    def from_arrays(cls, counts, edges, ids: Sequence[str] | None = None) -> "Dataset":
        counts = np.asarray(counts)
        edges = np.asarray(edges)
        n, V = counts.shape
        if ids is None:
            ids = [str(i + 1) for i in range(n)]
        recs = tuple(AgencyRecord(str(a), counts[i], EdgeVector(V, edges[i])) for i, a in enumerate(ids))
        return cls(V, recs)


# ---------------------------------------------------------------------------
# CSV I/O


def _parse_int(text: str, path, lineno: int, column: str) -> int:
    try:
        value = int(text.strip())
    except ValueError:
        raise DataError(f"{path}:{lineno}: column {column!r} is not an integer: {text!r}") from None
    return value


def _read_rows(path) -> tuple[list[str], list[tuple[int, list[str]]]]:
    path = Path(path)
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise DataError(f"{path}: empty file") from None
        rows = [(reader.line_num, row) for row in reader if row and any(c.strip() for c in row)]
    if not header or header[0] != "agency_id":
        raise DataError(f"{path}:1: first column must be 'agency_id'")
    return header, rows


def read_choices(path) -> dict[str, np.ndarray]:
    header, rows = _read_rows(path)
    V = len(header) - 1
    if V < 2:
        raise DataError(f"{path}:1: need at least two product columns")
    out: dict[str, np.ndarray] = {}
    for lineno, row in rows:
        if len(row) != V + 1:
            raise DataError(f"{path}:{lineno}: expected {V + 1} columns, got {len(row)}")
        aid = row[0].strip()
        if aid in out:
            raise DataError(f"{path}:{lineno}: duplicate agency id {aid!r}")
        counts = np.array([_parse_int(x, path, lineno, header[j + 1]) for j, x in enumerate(row[1:])])
        if np.any(counts < 0):
            raise DataError(f"{path}:{lineno}: negative count")
        out[aid] = counts
    return out


def read_networks(path, V: int) -> dict[str, np.ndarray]:
    header, rows = _read_rows(path)
    L = n_pairs(V)
    if len(header) != L + 1:
        raise DataError(f"{path}:1: expected {L + 1} columns for V={V}, got {len(header)}")
    out: dict[str, np.ndarray] = {}
    for lineno, row in rows:
        if len(row) != L + 1:
            raise DataError(f"{path}:{lineno}: expected {L + 1} columns, got {len(row)}")
        aid = row[0].strip()
        if aid in out:
            raise DataError(f"{path}:{lineno}: duplicate agency id {aid!r}")
        bits = np.array([_parse_int(x, path, lineno, header[j + 1]) for j, x in enumerate(row[1:])])
        if np.any((bits != 0) & (bits != 1)):
            raise DataError(f"{path}:{lineno}: edge entries must be 0 or 1")
        out[aid] = bits
    return out


def read_edge_list(path, V: int, agency_ids: Iterable[str] = ()) -> dict[str, np.ndarray]:
    """Edge-list networks ``agency_id,v,u``; agencies in ``agency_ids`` default to empty graphs."""
    header, rows = _read_rows(path)
    if header != ["agency_id", "v", "u"]:
        raise DataError(f"{path}:1: edge-list header must be agency_id,v,u")
    out = {a: np.zeros(n_pairs(V), dtype=np.uint8) for a in agency_ids}
    for lineno, row in rows:
        if len(row) != 3:
            raise DataError(f"{path}:{lineno}: expected 3 columns, got {len(row)}")
        aid = row[0].strip()
        v = _parse_int(row[1], path, lineno, "v")
        u = _parse_int(row[2], path, lineno, "u")
        try:
            l = pair_index(v, u, V)
        except DataError as exc:
            raise DataError(f"{path}:{lineno}: {exc}") from None
        out.setdefault(aid, np.zeros(n_pairs(V), dtype=np.uint8))[l] = 1
    return out


def load_dataset(choices_path, networks_path, edge_list: bool = False) -> Dataset:
    """Read and cross-validate the choices and networks CSV files."""
    choices = read_choices(choices_path)
    if not choices:
        raise DataError(f"{choices_path}: no agencies")
    V = len(next(iter(choices.values())))
    if edge_list:
        networks = read_edge_list(networks_path, V, choices.keys())
    else:
        networks = read_networks(networks_path, V)
    missing = [a for a in choices if a not in networks]
    if missing:
        raise DataError(f"agency {missing[0]!r} in {choices_path} has no network in {networks_path}")
    extra = [a for a in networks if a not in choices]
    if extra:
        raise DataError(f"agency {extra[0]!r} in {networks_path} has no choices in {choices_path}")
    recs = []
    for aid, counts in choices.items():
        if counts.sum() < 1:
            raise DataError(f"{choices_path}: agency {aid!r} has no mono-product customers")
        recs.append(AgencyRecord(aid, counts, EdgeVector(V, networks[aid])))
    return Dataset(V, tuple(recs))


def write_choices(dataset: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agency_id"] + [f"n_{v + 1}" for v in range(dataset.v_count)])
        for rec in dataset.agencies:
            w.writerow([rec.agency_id] + [int(x) for x in rec.choice_counts])


def write_networks(dataset: Dataset, path) -> None:
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["agency_id"] + [f"e_{l + 1}" for l in range(dataset.n_pairs)])
        for rec in dataset.agencies:
            w.writerow([rec.agency_id] + [int(x) for x in rec.network.bits])


def read_cosubscriptions(pairs_path, products_path, V: int) -> dict[str, tuple[np.ndarray, np.ndarray]]:
    """Raw co-subscription counts: ``agency_id,v,u,c_vu`` and ``agency_id,v,m_v``.

    Returns, per agency, a V x V symmetric count matrix and the holder counts.
    Missing pairs and products count as zero.
    """
    out: dict[str, tuple[np.ndarray, np.ndarray]] = {}

    def entry(aid):
        return out.setdefault(aid, (np.zeros((V, V), dtype=np.int64), np.zeros(V, dtype=np.int64)))

    header, rows = _read_rows(products_path)
    if header != ["agency_id", "v", "m_v"]:
        raise DataError(f"{products_path}:1: header must be agency_id,v,m_v")
    for lineno, row in rows:
        if len(row) != 3:
            raise DataError(f"{products_path}:{lineno}: expected 3 columns, got {len(row)}")
        v = _parse_int(row[1], products_path, lineno, "v")
        if not 1 <= v <= V:
            raise DataError(f"{products_path}:{lineno}: product {v} outside 1..{V}")
        entry(row[0].strip())[1][v - 1] = _parse_int(row[2], products_path, lineno, "m_v")

    header, rows = _read_rows(pairs_path)
    if header != ["agency_id", "v", "u", "c_vu"]:
        raise DataError(f"{pairs_path}:1: header must be agency_id,v,u,c_vu")
    for lineno, row in rows:
        if len(row) != 4:
            raise DataError(f"{pairs_path}:{lineno}: expected 4 columns, got {len(row)}")
        v = _parse_int(row[1], pairs_path, lineno, "v")
        u = _parse_int(row[2], pairs_path, lineno, "u")
        try:
            pair_index(v, u, V)
        except DataError as exc:
            raise DataError(f"{pairs_path}:{lineno}: {exc}") from None
        c = _parse_int(row[3], pairs_path, lineno, "c_vu")
        mat = entry(row[0].strip())[0]
        mat[v - 1, u - 1] = mat[u - 1, v - 1] = c
    return out


def threshold_all(cosub: Mapping[str, tuple[np.ndarray, np.ndarray]], tau: float = 0.10) -> dict[str, EdgeVector]:
    return {aid: threshold_network(c, m, tau) for aid, (c, m) in cosub.items()}
