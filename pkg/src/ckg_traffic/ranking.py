"""Tie-aware (realistic) mean rank for link prediction."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import IndexOutOfRange, UnembeddedEntity
from .kge import EmbeddingSet, candidate_scores


def realistic_rank(scores, true_index: int) -> float:
    """Expected rank of the true candidate over all orderings of tied scores.

    rank = #strictly better + (#ties including itself + 1) / 2
    """
    s = np.asarray(scores, dtype=np.float64).reshape(-1)
    if not 0 <= true_index < len(s):
        raise IndexOutOfRange(f"true index {true_index} outside 0..{len(s) - 1}")
    if not np.all(np.isfinite(s)):
        raise ValueError("scores must be finite")
    v = s[true_index]
    better = np.count_nonzero(s > v)
    ties = np.count_nonzero(s == v)
    return better + (ties + 1) / 2.0


def realistic_ranks(scores: np.ndarray, true_col: np.ndarray) -> np.ndarray:
    """Row-wise realistic rank for a (B, C) score matrix."""
    scores = np.asarray(scores, dtype=np.float64)
    true_col = np.asarray(true_col)
    v = scores[np.arange(len(scores)), true_col][:, None]
    better = np.count_nonzero(scores > v, axis=1)
    ties = np.count_nonzero(scores == v, axis=1)
    return better + (ties + 1) / 2.0


@dataclass
class RankReport:
    mr_left: float
    mr_right: float
    mr_both: float
    ranks_left: np.ndarray = field(repr=False)
    ranks_right: np.ndarray = field(repr=False)
    n_candidates: int = 0

    def as_dict(self) -> dict:
        return {"left": self.mr_left, "right": self.mr_right, "both": self.mr_both}


def evaluate_mr(triples: np.ndarray, emb: EmbeddingSet, side: str = "both",
                candidates: np.ndarray | None = None, chunk: int = 256) -> RankReport:
    """Raw realistic mean rank of ``triples`` under ``emb``.

    Left side ranks the true head among all candidates for (?, r, t); right
    side ranks the true tail for (h, r, ?). Candidates default to the
    entities the embedding was trained on. ``mr_both`` averages the union of
    left and right ranks. A side not requested reports NaN.
    """
    if side not in ("left", "right", "both"):
        raise ValueError("side must be left, right, or both")
    tr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    cands = np.asarray(emb.entities if candidates is None else candidates, dtype=np.int64)
    known = set(cands.tolist())
    missing = {int(x) for x in np.concatenate([tr[:, 0], tr[:, 2]]) if int(x) not in known}
    if missing:
        raise UnembeddedEntity(f"entities without embeddings: {sorted(missing)[:5]}")
    col = np.full(cands.max() + 1 if len(cands) else 1, -1, dtype=np.int64)
    col[cands] = np.arange(len(cands))
    left, right = np.zeros(0), np.zeros(0)
    if side in ("left", "both"):
        left = np.concatenate([np.zeros(0)] + [
            realistic_ranks(candidate_scores(emb, tr[i:i + chunk, 2], tr[i:i + chunk, 1], cands, "head"),
                            col[tr[i:i + chunk, 0]]) for i in range(0, len(tr), chunk)])
    if side in ("right", "both"):
        right = np.concatenate([np.zeros(0)] + [
            realistic_ranks(candidate_scores(emb, tr[i:i + chunk, 0], tr[i:i + chunk, 1], cands, "tail"),
                            col[tr[i:i + chunk, 2]]) for i in range(0, len(tr), chunk)])
    both = np.concatenate([left, right])

    def mean(x):
        return float(x.mean()) if len(x) else float("nan")

    return RankReport(mean(left), mean(right), mean(both), left, right, len(cands))


def evaluate_unit(kg, unit: str, emb: EmbeddingSet, side: str = "both", holdout_only: bool = False) -> RankReport:
    """MR over all facts of a unit, or only the held-out ones."""
    tr = kg.triples(unit)
    if holdout_only:
        tr = tr[emb.test_index]
    return evaluate_mr(tr, emb, side)


MR_COLUMNS = ["model", "buffer_cfg", "link_cfg", "side", "MR"]


def write_mr_csv(path: str | Path | None, rows: list[dict], columns: list[str] | None = None) -> str:
    """Write (model, buffer_cfg, link_cfg, side, MR) rows; returns the text."""
    cols = columns or MR_COLUMNS
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=cols, lineterminator="\n", extrasaction="ignore")
    w.writeheader()
    for r in rows:
        w.writerow({k: (repr(float(v)) if isinstance(v, (float, np.floating)) else v) for k, v in r.items()})
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text
