"""Synthetic quality labels by voting, ordering and merging, plus correlation criteria."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Callable, Optional

import numpy as np

from .quality import HIGHER, LOWER, block_match_disparity, diff_map, epe, ssim_pair


@dataclass(frozen=True)
class Voter:
    """Deterministic scorer ``fn(distorted, reference) -> float`` with a polarity."""

    name: str
    polarity: str
    fn: Callable

    def __post_init__(self):
        if self.polarity not in (HIGHER, LOWER):
            raise ValueError(f"unknown polarity {self.polarity!r}")

    def __call__(self, distorted, reference):
        return float(self.fn(distorted, reference))


def _spatial(dist, ref):
    return ssim_pair(dist, ref).value


def _stereo(dist, ref):
    return -float(np.mean(np.abs(diff_map(dist) - diff_map(ref))))


def _practicality(dist, ref, window=7, max_search=16):
    return -epe(block_match_disparity(dist, window, max_search), block_match_disparity(ref, window, max_search)).value


SPATIAL_VOTER = Voter("spatial_ssim", HIGHER, _spatial)
STEREO_VOTER = Voter("stereo_diff", HIGHER, _stereo)
PRACTICALITY_VOTER = Voter("practicality_epe", HIGHER, _practicality)


def default_voters():
    return [SPATIAL_VOTER, STEREO_VOTER, PRACTICALITY_VOTER]


@dataclass
class VoteTable:
    raw: np.ndarray  # (refs, versions, voters)
    voter_names: list
    polarities: list
    ranks: Optional[np.ndarray] = None

    @property
    def dims(self):
        return self.raw.shape


@dataclass
class RankMosTable:
    rs: np.ndarray  # (refs, versions) mean rank
    rankmos: np.ndarray
    per_reference: bool = True
    meta: dict = field(default_factory=dict)


class VoterError(RuntimeError):
    def __init__(self, i, j, k, cause):
        super().__init__(f"voter {k} failed on reference {i}, version {j}: {cause}")
        self.index = (i, j, k)


def vote(refs, versions, voters=None):
    """Score every version of every reference with every voter."""
    voters = default_voters() if voters is None else list(voters)
    if not voters:
        raise ValueError("at least one voter is required")
    if len(versions) != len(refs):
        raise ValueError("one version list per reference is required")
    n_versions = {len(v) for v in versions}
    if len(n_versions) != 1 or min(n_versions) < 2:
        raise ValueError(f"every reference needs the same version count J >= 2, got {sorted(n_versions)}")
    raw = np.empty((len(refs), n_versions.pop(), len(voters)))
    for i, (ref, vers) in enumerate(zip(refs, versions)):
        for j, dist in enumerate(vers):
            for k, voter in enumerate(voters):
                try:
                    raw[i, j, k] = voter(dist, ref)
                except Exception as exc:
                    raise VoterError(i, j, k, exc) from exc
    return VoteTable(raw, [v.name for v in voters], [v.polarity for v in voters])


def average_ranks(values):
    """1-based ascending ranks; tied values share the mean of their positions."""
    values = np.asarray(values, dtype=np.float64)
    n = values.size
    order = np.argsort(values, kind="stable")
    sorted_vals = values[order]
    ranks = np.empty(n)
    start = 0
    while start < n:
        stop = start + 1
        while stop < n and sorted_vals[stop] == sorted_vals[start]:
            stop += 1
        # positions start+1 .. stop, averaged
        ranks[order[start:stop]] = (start + 1 + stop) / 2.0
        start = stop
    return ranks


def order(table):
    """Fill ``table.ranks``: per (reference, voter), rank 1 is the worst version."""
    if np.isnan(table.raw).any():
        i, j, k = np.argwhere(np.isnan(table.raw))[0]
        raise ValueError(f"NaN score at reference {i}, version {j}, voter {k}")
    ranks = np.empty_like(table.raw)
    n_refs, _, n_voters = table.raw.shape
    for k in range(n_voters):
        sign = 1.0 if table.polarities[k] == HIGHER else -1.0
        for i in range(n_refs):
            ranks[i, :, k] = average_ranks(sign * table.raw[i, :, k])
    table.ranks = ranks
    return table


def merge(table, per_reference=True):
    """Average ranks over voters and map them affinely onto [1, 10].

    Normalization runs over rank sums rather than means (same affine map,
    exact in floating point since rank sums are half-integers). With
    ``per_reference=False`` the min/max span the whole table.
    """
    if table.ranks is None:
        raise ValueError("order() must run before merge()")
    sums = table.ranks.sum(axis=2)
    rs = sums / table.ranks.shape[2]
    out = np.empty_like(rs)
    if per_reference:
        for i in range(sums.shape[0]):
            out[i] = _to_range(sums[i])
    else:
        out = _to_range(sums)
    return RankMosTable(rs, out, per_reference)


def _to_range(t):
    lo, hi = t.min(), t.max()
    if hi == lo:
        return np.full(t.shape, 5.5)
    return 1.0 + 9.0 * ((t - lo) / (hi - lo))


def synthesize(refs, versions, voters=None, per_reference=True):
    table = order(vote(refs, versions, voters))
    return table, merge(table, per_reference)


# ------------------------------------------------------------- correlations

def _pair(x, y):
    x, y = np.asarray(x, dtype=np.float64), np.asarray(y, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError(f"expected equal-length 1-D inputs, got {x.shape} and {y.shape}")
    if x.size < 2:
        raise ValueError("need at least two observations")
    return x, y


def _require_variation(x, y):
    if np.all(x == x[0]) or np.all(y == y[0]):
        raise ValueError("correlation undefined for constant input")


def plcc(x, y):
    """Pearson correlation on raw values (no logistic fitting)."""
    x, y = _pair(x, y)
    _require_variation(x, y)
    xc, yc = x - x.mean(), y - y.mean()
    return float(np.dot(xc, yc) / np.sqrt(np.dot(xc, xc) * np.dot(yc, yc)))


def srocc(x, y):
    x, y = _pair(x, y)
    _require_variation(x, y)
    return plcc(average_ranks(x), average_ranks(y))


def krocc(x, y):
    """Kendall tau-b."""
    x, y = _pair(x, y)
    _require_variation(x, y)
    iu = np.triu_indices(x.size, k=1)
    dx = np.sign(x[:, None] - x[None, :])[iu]
    dy = np.sign(y[:, None] - y[None, :])[iu]
    s = float(np.sum(dx * dy))
    return s / np.sqrt(float(np.count_nonzero(dx)) * float(np.count_nonzero(dy)))


def rmse(x, y):
    x, y = _pair(x, y)
    return float(np.sqrt(np.mean((x - y) ** 2)))


def correlation_report(pred, label):
    return {"SROCC": srocc(pred, label), "PLCC": plcc(pred, label), "KROCC": krocc(pred, label), "RMSE": rmse(pred, label)}


# ---------------------------------------------------------------------- CSV

def write_vote_csv(path, table):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ref", "version", "voter", "raw", "rank"])
        n_refs, n_versions, n_voters = table.raw.shape
        for i in range(n_refs):
            for j in range(n_versions):
                for k in range(n_voters):
                    rank = "" if table.ranks is None else repr(float(table.ranks[i, j, k]))
                    w.writerow([i, j, table.voter_names[k], repr(float(table.raw[i, j, k])), rank])


def write_rankmos_csv(path, mos):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ref", "version", "RS", "rankMOS"])
        for i in range(mos.rs.shape[0]):
            for j in range(mos.rs.shape[1]):
                w.writerow([i, j, repr(float(mos.rs[i, j])), repr(float(mos.rankmos[i, j]))])


def read_rankmos_csv(path):
    """Return a ``{(ref, version): rankMOS}`` mapping."""
    out = {}
    with open(path, newline="") as fh:
        for row in csv.DictReader(fh):
            out[(int(row["ref"]), int(row["version"]))] = float(row["rankMOS"])
    return out
