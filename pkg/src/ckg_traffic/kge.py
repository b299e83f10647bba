"""Knowledge-graph embedding models: six scoring functions, negative sampling,
losses, and a mini-batch trainer.

Scorers take engine tensors (or arrays) batched over leading dimensions and
return one score per fact; higher means more plausible. Distance families
(TransE, TransR, KG2E) train with a margin ranking loss, similarity families
(RESCAL, ComplEx, NTN) with a logistic loss.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import engine as E
from .engine import Tensor, as_tensor
from .errors import EmptyGraph, NonPositiveCovariance, ShapeMismatch, UnknownId

FAMILIES = ("TransE", "TransR", "KG2E", "RESCAL", "ComplEx", "NTN")
DISTANCE_FAMILIES = frozenset({"TransE", "TransR", "KG2E"})
SIMILARITY_FAMILIES = frozenset({"RESCAL", "ComplEx", "NTN"})
COV_MIN, COV_MAX = 0.05, 5.0
LOG_2PI = math.log(2.0 * math.pi)


def check_family(name: str) -> str:
    if name not in FAMILIES:
        raise UnknownId(f"unknown embedding family {name!r}; expected one of {', '.join(FAMILIES)}")
    return name


def _same_last(*ts: Tensor) -> None:
    dims = {t.shape[-1] if t.ndim else None for t in ts}
    if len(dims) != 1 or None in dims:
        raise ShapeMismatch(f"embedding dims differ: {[t.shape for t in ts]}")


def _row(x: Tensor) -> Tensor:
    """(..., e) -> (..., 1, e) for batched vector-matrix products."""
    return E.reshape(x, x.shape[:-1] + (1, x.shape[-1]))


def _unrow(x: Tensor) -> Tensor:
    return E.reshape(x, x.shape[:-2] + (x.shape[-1],))


# -- scoring functions ------------------------------------------------------

def score_transe(h, r, t) -> Tensor:
    h, r, t = as_tensor(h), as_tensor(r), as_tensor(t)
    _same_last(h, r, t)
    d = h + r - t
    return -E.sum_(d * d, axis=-1)


def score_transr(h, r, t, M) -> Tensor:
    """-|h M + r - t M|^2 with M of shape (..., e, k)."""
    h, r, t, M = as_tensor(h), as_tensor(r), as_tensor(t), as_tensor(M)
    _same_last(h, t)
    if M.ndim < 2 or M.shape[-2] != h.shape[-1] or M.shape[-1] != r.shape[-1]:
        raise ShapeMismatch(f"projection {M.shape} does not map {h.shape[-1]} to {r.shape[-1]}")
    d = _unrow(E.matmul(_row(h), M)) + r - _unrow(E.matmul(_row(t), M))
    return -E.sum_(d * d, axis=-1)


def score_kg2e(mu_h, sig_h, mu_r, sig_r, mu_t, sig_t) -> Tensor:
    """Log expected likelihood of the entity-difference and relation Gaussians.

    Covariances are diagonal and given as their diagonals.
    """
    ts = [as_tensor(x) for x in (mu_h, sig_h, mu_r, sig_r, mu_t, sig_t)]
    _same_last(*ts)
    mu_h, sig_h, mu_r, sig_r, mu_t, sig_t = ts
    for s in (sig_h, sig_r, sig_t):
        if np.any(s.data <= 0):
            raise NonPositiveCovariance("KG2E covariance diagonals must be positive")
    dm = mu_t - mu_h - mu_r
    cov = sig_t + sig_h + sig_r
    e = dm.shape[-1]
    return -0.5 * (E.sum_(dm * dm / cov, axis=-1) + E.sum_(E.log(cov), axis=-1) + e * LOG_2PI)


def score_rescal(h, t, M) -> Tensor:
    h, t, M = as_tensor(h), as_tensor(t), as_tensor(M)
    _same_last(h, t)
    if M.ndim < 2 or M.shape[-2:] != (h.shape[-1], h.shape[-1]):
        raise ShapeMismatch(f"RESCAL matrix {M.shape} does not match dim {h.shape[-1]}")
    ht = E.matmul(_row(h), M)
    return E.sum_(_unrow(ht) * t, axis=-1)


def split_complex(x) -> tuple[Tensor, Tensor]:
    """(re, im) tensors from a pair or a (possibly complex) array."""
    if isinstance(x, tuple):
        return as_tensor(x[0]), as_tensor(x[1])
    if isinstance(x, Tensor):
        return x, E.Tensor(np.zeros_like(x.data))
    arr = np.asarray(x)
    return E.Tensor(arr.real.astype(np.float64)), E.Tensor(np.asarray(arr.imag, dtype=np.float64))


def score_complex(h, r, t) -> Tensor:
    """Re(sum r h conj(t)); each argument is a (re, im) pair or a complex array."""
    hr, hi = split_complex(h)
    rr, ri = split_complex(r)
    tr, ti = split_complex(t)
    _same_last(hr, hi, rr, ri, tr, ti)
    return E.sum_(rr * (hr * tr + hi * ti) + ri * (hr * ti - hi * tr), axis=-1)


def score_ntn(h, t, W, M1, M2, b, u) -> Tensor:
    """u^T tanh(h^T W t + h^T M1 + t^T M2 + b); W is (..., e, e, k)."""
    h, t, W, M1, M2, b, u = (as_tensor(x) for x in (h, t, W, M1, M2, b, u))
    _same_last(h, t)
    e, k = h.shape[-1], u.shape[-1]
    if W.shape[-3:] != (e, e, k) or M1.shape[-2:] != (e, k) or M2.shape[-2:] != (e, k) or b.shape[-1] != k:
        raise ShapeMismatch("NTN parameter shapes disagree with entity dim and slice count")
    lead = W.shape[:-3]
    hW = E.reshape(E.matmul(_row(h), E.reshape(W, lead + (e, e * k))), lead + (e, k))
    bil = _unrow(E.matmul(_row(t), hW))
    z = bil + _unrow(E.matmul(_row(h), M1)) + _unrow(E.matmul(_row(t), M2)) + b
    return E.sum_(u * E.tanh(z), axis=-1)


def ntn_bilinear(h: Tensor, W: Tensor, rel: np.ndarray, t: Tensor) -> Tensor:
    """h_m^T W[rel_m] t_m for every fact m, without materialising W per fact.

    ``W`` holds one (e, e, k) tensor per row; facts are grouped by row.
    """
    H, T, Wd = h.data, t.data, W.data
    rel = np.asarray(rel)
    e, k = Wd.shape[-3], Wd.shape[-1]
    out = np.empty((H.shape[0], k))
    groups = []
    for r in np.unique(rel):
        m = np.flatnonzero(rel == r)
        HW = (H[m] @ Wd[r].reshape(e, e * k)).reshape(len(m), e, k)
        out[m] = np.einsum("mj,mjk->mk", T[m], HW)
        groups.append((r, m, HW))

    def backward(g):
        gh = np.zeros_like(H) if h.requires_grad else None
        gt = np.zeros_like(T) if t.requires_grad else None
        gW = np.zeros_like(Wd) if W.requires_grad else None
        for r, m, HW in groups:
            gm = g[m]
            tg = (T[m][:, :, None] * gm[:, None, :]).reshape(len(m), e * k)
            if gh is not None:
                gh[m] = tg @ Wd[r].reshape(e, e * k).T
            if gt is not None:
                gt[m] = np.einsum("mjk,mk->mj", HW, gm)
            if gW is not None:
                gW[r] = (H[m].T @ tg).reshape(e, e, k)
        return gh, gW, gt

    return Tensor.from_op(out, (h, W, t), backward)


# -- parameter layout ---------------------------------------------------------

def param_layout(family: str, dim: int, rel_dim: int) -> tuple[dict, dict]:
    """Per-row shapes of entity and relation parameter tables."""
    check_family(family)
    e, k = dim, rel_dim
    if family == "TransE":
        return {"E": (e,)}, {"R": (e,)}
    if family == "TransR":
        return {"E": (e,)}, {"R": (k,), "M": (e, k)}
    if family == "KG2E":
        return {"mu": (e,), "sigma": (e,)}, {"mu": (e,), "sigma": (e,)}
    if family == "RESCAL":
        return {"E": (e,)}, {"M": (e, e)}
    if family == "ComplEx":
        if e % 2:
            raise ValueError("ComplEx needs an even dim (real and imaginary halves)")
        c = e // 2
        return {"re": (c,), "im": (c,)}, {"re": (c,), "im": (c,)}
    return {"E": (e,)}, {"W": (e, e, k), "M1": (e, k), "M2": (e, k), "b": (k,), "u": (k,)}


def _score_rows(family: str, ent: dict, rel: dict, hi, ri, ti) -> Tensor:
    """Scores of facts given gathered parameter tables and per-fact row indices."""
    def eh(name):
        return E.take(ent[name], hi, axis=0)

    def et(name):
        return E.take(ent[name], ti, axis=0)

    def rr(name):
        return E.take(rel[name], ri, axis=0)

    if family == "TransE":
        return score_transe(eh("E"), rr("R"), et("E"))
    if family == "TransR":
        return score_transr(eh("E"), rr("R"), et("E"), rr("M"))
    if family == "KG2E":
        return score_kg2e(eh("mu"), eh("sigma"), rr("mu"), rr("sigma"), et("mu"), et("sigma"))
    if family == "RESCAL":
        return score_rescal(eh("E"), et("E"), rr("M"))
    if family == "ComplEx":
        return score_complex((eh("re"), eh("im")), (rr("re"), rr("im")), (et("re"), et("im")))
    h, t = eh("E"), et("E")
    z = (ntn_bilinear(h, rel["W"], ri, t) + E.sum_(_row(h).transpose(0, 2, 1) * rr("M1"), axis=1)
         + E.sum_(_row(t).transpose(0, 2, 1) * rr("M2"), axis=1) + rr("b"))
    return E.sum_(rr("u") * E.tanh(z), axis=-1)


# -- embedding sets -------------------------------------------------------------

@dataclass
class TrainConfig:
    dim: int = 40
    rel_dim: int = 40
    negatives: int = 10
    margin: float = 1.0
    epochs: int = 500
    batch_size: int = 128
    lr: float = 0.01
    l2: float = 0.0
    holdout: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.dim <= 0 or self.rel_dim <= 0:
            raise ValueError("dims must be positive")
        if self.negatives < 1:
            raise ValueError("need at least one negative per positive")
        if self.epochs < 0 or self.batch_size < 1 or not 0.0 <= self.holdout < 1.0:
            raise ValueError("invalid epochs, batch size, or holdout fraction")


@dataclass
class EmbeddingSet:
    family: str
    dim: int
    rel_dim: int
    entity: dict[str, np.ndarray]
    relation: dict[str, np.ndarray]
    entities: np.ndarray            # ids of entities seen in training (candidate set)
    relations: np.ndarray
    test_index: np.ndarray = field(default_factory=lambda: np.zeros(0, np.int64))
    loss_history: list[float] = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def is_distance(self) -> bool:
        return self.family in DISTANCE_FAMILIES

    def entity_vector(self, i) -> np.ndarray:
        """Real vector of length ``dim`` used for path integration."""
        if self.family == "KG2E":
            return self.entity["mu"][i]
        if self.family == "ComplEx":
            return np.concatenate([self.entity["re"][i], self.entity["im"][i]], axis=-1)
        return self.entity["E"][i]

    def relation_vector(self, i) -> np.ndarray:
        """Relation vector for paths. RESCAL has none (its relations are matrices)."""
        if self.family in ("TransE", "TransR"):
            return self.relation["R"][i]
        if self.family == "KG2E":
            return self.relation["mu"][i]
        if self.family == "ComplEx":
            return np.concatenate([self.relation["re"][i], self.relation["im"][i]], axis=-1)
        if self.family == "NTN":
            return self.relation["u"][i]
        raise ValueError("RESCAL relations are matrices; use relation['M']")

    def params(self) -> dict[str, np.ndarray]:
        out = {f"entity.{k}": v for k, v in self.entity.items()}
        out.update({f"relation.{k}": v for k, v in self.relation.items()})
        return out

    def save(self, path: str | Path) -> None:
        meta = {"family": self.family, "dim": self.dim, "rel_dim": self.rel_dim,
                "entities": self.entities.tolist(), "relations": self.relations.tolist(),
                "test_index": self.test_index.tolist(), "loss_history": [float(x) for x in self.loss_history],
                "config": self.config}
        E.save_params(path, self.params(), meta=meta)

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingSet":
        params, meta = E.load_params_with_meta(path)
        ent = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("entity.")}
        rel = {k.split(".", 1)[1]: v for k, v in params.items() if k.startswith("relation.")}
        return cls(family=meta["family"], dim=int(meta["dim"]), rel_dim=int(meta["rel_dim"]), entity=ent,
                   relation=rel, entities=np.array(meta["entities"], dtype=np.int64),
                   relations=np.array(meta["relations"], dtype=np.int64),
                   test_index=np.array(meta.get("test_index", []), dtype=np.int64),
                   loss_history=list(meta.get("loss_history", [])), config=meta.get("config", {}))


def init_embeddings(family: str, n_entities: int, n_relations: int, cfg: TrainConfig,
                    rng: np.random.Generator) -> tuple[dict, dict]:
    ent_l, rel_l = param_layout(family, cfg.dim, cfg.rel_dim)
    e, k = cfg.dim, cfg.rel_dim
    ent: dict[str, np.ndarray] = {}
    rel: dict[str, np.ndarray] = {}
    if family in ("TransE", "TransR"):
        b = 6.0 / math.sqrt(e)
        ent["E"] = rng.uniform(-b, b, (n_entities, e))
        ent["E"] /= np.maximum(np.linalg.norm(ent["E"], axis=1, keepdims=True), 1.0)
        rel["R"] = rng.uniform(-6.0 / math.sqrt(k), 6.0 / math.sqrt(k), (n_relations, rel_l["R"][0]))
        rel["R"] /= np.linalg.norm(rel["R"], axis=1, keepdims=True)
        if family == "TransR":
            rel["M"] = np.tile(np.eye(e, k), (n_relations, 1, 1)) + rng.normal(0, 0.01, (n_relations, e, k))
    elif family == "KG2E":
        b = 6.0 / math.sqrt(e)
        ent["mu"] = rng.uniform(-b, b, (n_entities, e))
        ent["mu"] /= np.maximum(np.linalg.norm(ent["mu"], axis=1, keepdims=True), 1.0)
        ent["sigma"] = np.ones((n_entities, e))
        rel["mu"] = rng.uniform(-b, b, (n_relations, e))
        rel["mu"] /= np.maximum(np.linalg.norm(rel["mu"], axis=1, keepdims=True), 1.0)
        rel["sigma"] = np.ones((n_relations, e))
    elif family == "RESCAL":
        ent["E"] = rng.normal(0, 1.0 / math.sqrt(e), (n_entities, e))
        rel["M"] = rng.normal(0, 1.0 / math.sqrt(e), (n_relations, e, e))
    elif family == "ComplEx":
        c = e // 2
        for name in ("re", "im"):
            ent[name] = rng.normal(0, 1.0 / math.sqrt(c), (n_entities, c))
            rel[name] = rng.normal(0, 1.0 / math.sqrt(c), (n_relations, c))
    else:
        ent["E"] = rng.normal(0, 1.0 / math.sqrt(e), (n_entities, e))
        rel["W"] = rng.normal(0, 1.0 / e, (n_relations, e, e, k))
        rel["M1"] = E.glorot(rng, (n_relations, e, k))
        rel["M2"] = E.glorot(rng, (n_relations, e, k))
        rel["b"] = np.zeros((n_relations, k))
        rel["u"] = rng.normal(0, 1.0 / math.sqrt(k), (n_relations, k))
    return ent, rel


def apply_constraints(family: str, ent: dict, rel: dict, ent_rows=None, rel_rows=None) -> None:
    """Unit-ball entity norms for TransE/TransR, covariance clamps for KG2E."""
    er = slice(None) if ent_rows is None else ent_rows
    rr = slice(None) if rel_rows is None else rel_rows
    if family in ("TransE", "TransR"):
        X = ent["E"][er]
        ent["E"][er] = X / np.maximum(np.linalg.norm(X, axis=-1, keepdims=True), 1.0)
    elif family == "KG2E":
        ent["sigma"][er] = np.clip(ent["sigma"][er], COV_MIN, COV_MAX)
        rel["sigma"][rr] = np.clip(rel["sigma"][rr], COV_MIN, COV_MAX)


# -- negative sampling -------------------------------------------------------------

def negative_sample(fact, candidates, rng: np.random.Generator, side: str | None = None) -> tuple[int, int, int]:
    """Corrupt one side of ``fact`` with a uniformly drawn different entity.

    The side is uniform unless given. Accidental true facts are not filtered.
    """
    h, r, t = int(fact[0]), int(fact[1]), int(fact[2])
    cands = np.asarray(candidates)
    if len(cands) < 2:
        raise ValueError("negative sampling needs at least two entities")
    side = side or ("head" if rng.random() < 0.5 else "tail")
    old = h if side == "head" else t
    pool = cands[cands != old]
    new = int(pool[rng.integers(len(pool))])
    return (new, r, t) if side == "head" else (h, r, new)


def corrupt_batch(triples: np.ndarray, n_neg: int, candidates: np.ndarray,
                  rng: np.random.Generator) -> np.ndarray:
    """(B, n_neg, 3) corrupted copies; vectorised form of ``negative_sample``."""
    B = len(triples)
    cands = np.asarray(candidates)
    pos = np.full(cands.max() + 1, -1, dtype=np.int64)
    pos[cands] = np.arange(len(cands))
    out = np.repeat(triples[:, None, :], n_neg, axis=1).copy()
    head = rng.random((B, n_neg)) < 0.5
    col = np.where(head, 0, 2)
    old = np.take_along_axis(out, col[..., None], axis=2)[..., 0]
    draw = rng.integers(0, len(cands) - 1, size=(B, n_neg))
    old_pos = pos[old]
    draw = draw + (draw >= old_pos)
    new = cands[draw]
    np.put_along_axis(out, col[..., None], new[..., None], axis=2)
    return out


# -- losses -------------------------------------------------------------------------

def margin_loss(pos: Tensor, neg: Tensor, margin: float) -> Tensor:
    """mean max(0, margin - f(pos) + f(neg)) over (B, n) pairs."""
    return E.mean(E.relu(margin - E.reshape(pos, (pos.shape[0], 1)) + neg))


def logistic_loss(pos: Tensor, neg: Tensor) -> Tensor:
    return E.mean(E.softplus(-pos)) + E.mean(E.softplus(neg))


# -- training -------------------------------------------------------------------------

def split_holdout(n: int, frac: float, seed: int) -> tuple[np.ndarray, np.ndarray]:
    if frac <= 0:
        return np.arange(n), np.zeros(0, np.int64)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(99,)))
    perm = rng.permutation(n)
    k = int(round(frac * n))
    return np.sort(perm[k:]), np.sort(perm[:k])


def train_triples(triples: np.ndarray, n_entities: int, n_relations: int, family: str,
                  cfg: TrainConfig | None = None, candidates: np.ndarray | None = None) -> EmbeddingSet:
    """Train on a (n, 3) int array of (head, relation, tail) ids."""
    cfg = cfg or TrainConfig()
    check_family(family)
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    if len(triples) == 0:
        raise EmptyGraph("no facts to train on")
    if candidates is None:
        candidates = np.unique(np.concatenate([triples[:, 0], triples[:, 2]]))
    candidates = np.asarray(candidates, dtype=np.int64)
    train_idx, test_idx = split_holdout(len(triples), cfg.holdout, cfg.seed)
    train = triples[train_idx]
    rng = np.random.default_rng(cfg.seed)
    ent, rel = init_embeddings(family, n_entities, n_relations, cfg, rng)
    apply_constraints(family, ent, rel)
    moments = {("e", k): (np.zeros_like(v), np.zeros_like(v)) for k, v in ent.items()}
    moments.update({("r", k): (np.zeros_like(v), np.zeros_like(v)) for k, v in rel.items()})
    step = 0
    history: list[float] = []
    distance = family in DISTANCE_FAMILIES
    for _epoch in range(cfg.epochs):
        order = rng.permutation(len(train))
        total, count = 0.0, 0
        for start in range(0, len(order), cfg.batch_size):
            pos = train[order[start:start + cfg.batch_size]]
            neg = corrupt_batch(pos, cfg.negatives, candidates, rng).reshape(-1, 3)
            allf = np.vstack([pos, neg])
            erows, einv = np.unique(np.concatenate([allf[:, 0], allf[:, 2]]), return_inverse=True)
            rrows, rinv = np.unique(allf[:, 1], return_inverse=True)
            n = len(allf)
            leaves_e = {k: E.parameter(v[erows]) for k, v in ent.items()}
            leaves_r = {k: E.parameter(v[rrows]) for k, v in rel.items()}
            s = _score_rows(family, leaves_e, leaves_r, einv[:n], rinv, einv[n:])
            sp = s[:len(pos)]
            sn = E.reshape(s[len(pos):], (len(pos), cfg.negatives))
            loss = margin_loss(sp, sn, cfg.margin) if distance else logistic_loss(sp, sn)
            if cfg.l2 > 0:
                reg = sum(E.mean(x * x) for x in list(leaves_e.values()) + list(leaves_r.values()))
                loss = loss + cfg.l2 * reg
            loss.backward()
            step += 1
            for k, leaf in leaves_e.items():
                m, v = moments[("e", k)]
                E.adam_step_rows(ent[k], m, v, erows, leaf.grad, step, lr=cfg.lr)
            for k, leaf in leaves_r.items():
                m, v = moments[("r", k)]
                E.adam_step_rows(rel[k], m, v, rrows, leaf.grad, step, lr=cfg.lr)
            apply_constraints(family, ent, rel, erows, rrows)
            total += loss.item() * len(pos)
            count += len(pos)
        history.append(total / count)
    return EmbeddingSet(family=family, dim=cfg.dim, rel_dim=cfg.rel_dim, entity=ent, relation=rel,
                        entities=candidates, relations=np.unique(triples[:, 1]), test_index=test_idx,
                        loss_history=history, config=asdict(cfg))


def train(kg, unit: str, family: str, cfg: TrainConfig | None = None) -> EmbeddingSet:
    """Embed one unit ("spatial" or "temporal") of a KnowledgeGraph."""
    triples = kg.triples(unit)
    if len(triples) == 0:
        raise EmptyGraph(f"{unit} unit has no facts")
    return train_triples(triples, len(kg.entities), len(kg.relations), family, cfg, kg.unit_entities(unit))


# -- candidate scoring (numpy, no graph) ------------------------------------------------

def candidate_scores(emb: EmbeddingSet, anchor: np.ndarray, rel: np.ndarray, cands: np.ndarray,
                     side: str) -> np.ndarray:
    """(B, C) scores of every candidate as tail (``side="tail"``: anchor is
    the head) or as head (``side="head"``: anchor is the tail)."""
    anchor = np.asarray(anchor)
    rel = np.asarray(rel)
    cands = np.asarray(cands)
    f, P, Q = emb.family, emb.entity, emb.relation
    tail = side == "tail"
    if side not in ("head", "tail"):
        raise ValueError("side must be 'head' or 'tail'")

    def pair(X):
        a = X[anchor][:, None]
        c = X[cands][None, :]
        return (a, c) if tail else (c, a)

    if f == "TransE":
        h, t = pair(P["E"])
        d = h + Q["R"][rel][:, None] - t
        return -np.sum(d * d, axis=-1)
    if f == "TransR":
        M = Q["M"][rel]                                       # (B, e, k)
        pa = np.einsum("be,bek->bk", P["E"][anchor], M)[:, None]
        pc = np.einsum("ce,bek->bck", P["E"][cands], M)
        h, t = (pa, pc) if tail else (pc, pa)
        d = h + Q["R"][rel][:, None] - t
        return -np.sum(d * d, axis=-1)
    if f == "KG2E":
        mh, mt = pair(P["mu"])
        sh, st = pair(P["sigma"])
        dm = mt - mh - Q["mu"][rel][:, None]
        cov = st + sh + Q["sigma"][rel][:, None]
        e = dm.shape[-1]
        return -0.5 * (np.sum(dm * dm / cov, axis=-1) + np.sum(np.log(cov), axis=-1) + e * LOG_2PI)
    if f == "RESCAL":
        M = Q["M"][rel]
        if tail:
            return np.einsum("be,bef,cf->bc", P["E"][anchor], M, P["E"][cands], optimize=True)
        return np.einsum("ce,bef,bf->bc", P["E"][cands], M, P["E"][anchor], optimize=True)
    if f == "ComplEx":
        hr, tr = pair(P["re"])
        hi, ti = pair(P["im"])
        rr, ri = Q["re"][rel][:, None], Q["im"][rel][:, None]
        return np.sum(rr * (hr * tr + hi * ti) + ri * (hr * ti - hi * tr), axis=-1)
    # NTN
    W, u = Q["W"][rel], Q["u"][rel]
    A, C = P["E"][anchor], P["E"][cands]
    if tail:
        bil = np.einsum("bi,bijk,cj->bck", A, W, C, optimize=True)
        lin = np.einsum("bi,bik->bk", A, Q["M1"][rel])[:, None] + np.einsum("cj,bjk->bck", C, Q["M2"][rel])
    else:
        bil = np.einsum("ci,bijk,bj->bck", C, W, A, optimize=True)
        lin = np.einsum("ci,bik->bck", C, Q["M1"][rel]) + np.einsum("bj,bjk->bk", A, Q["M2"][rel])[:, None]
    return np.sum(u[:, None] * np.tanh(bil + lin + Q["b"][rel][:, None]), axis=-1)


def fact_scores(emb: EmbeddingSet, triples: np.ndarray) -> np.ndarray:
    """Scores of given facts via the differentiable scorers (no graph)."""
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    with E.no_grad():
        ent = {k: E.Tensor(v) for k, v in emb.entity.items()}
        rel = {k: E.Tensor(v) for k, v in emb.relation.items()}
        return _score_rows(emb.family, ent, rel, triples[:, 0], triples[:, 1], triples[:, 2]).data.copy()
