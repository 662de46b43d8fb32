"""VF2 subgraph matching with node-attribute predicates.

Two modes are supported:

``monomorphism``
    injective map where every query edge lands on a target edge; extra
    target edges among the image are tolerated.
``isomorphism``
    induced variant: additionally every query non-edge maps to a target
    non-edge.

The search is the classic VF2 state-space DFS with terminal-set candidate
selection and the one-step lookahead rules.  Target candidates are tried in
ascending node index so results are deterministic.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Callable, Union

import numpy as np

from .graph import Cfg, GraphError, NodeRecord, to_undirected

log = logging.getLogger(__name__)

MONOMORPHISM = "monomorphism"
ISOMORPHISM = "isomorphism"
MODES = (MONOMORPHISM, ISOMORPHISM)

EXACT = "exact"
COSINE = "cosine"
ANY = "any"
PREDICATES = (EXACT, COSINE, ANY)

DEFAULT_CAP = 10_000
DEFAULT_DELTA = 0.9
# absorbs rounding so identical vectors (cos computed as 1 - 1ulp) pass delta=1
COS_TOLERANCE = 1e-12

Predicate = Callable[[NodeRecord, NodeRecord], bool]


class MatchError(ValueError):
    pass


def exact_attribute_predicate(u: NodeRecord, v: NodeRecord) -> bool:
    if u.feature is None or v.feature is None:
        raise MatchError("exact matching needs node features")
    return u.feature.shape == v.feature.shape and u.feature.tobytes() == v.feature.tobytes()


def _cosine_block(a: np.ndarray, b: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Pairwise cosine of rows of ``a`` and ``b`` plus a validity mask.

    Scalar and matrix callers share this routine so that both agree bit for
    bit on threshold decisions.
    """
    dots = (a[:, None, :] * b[None, :, :]).sum(-1)
    na = np.sqrt((a * a).sum(-1))
    nb = np.sqrt((b * b).sum(-1))
    denom = na[:, None] * nb[None, :]
    valid = denom > 0
    with np.errstate(invalid="ignore", divide="ignore"):
        cos = np.where(valid, dots / np.where(valid, denom, 1.0), 0.0)
    return cos, valid


def cosine_attribute_predicate(u: NodeRecord, v: NodeRecord, delta: float = DEFAULT_DELTA) -> bool:
    """``cos(emb(u), emb(v)) >= delta``; zero vectors never match."""
    _check_delta(delta)
    if u.embedding is None or v.embedding is None:
        missing = [n.id for n in (u, v) if n.embedding is None]
        raise MatchError(f"cosine matching needs embeddings; missing on {missing}")
    cos, valid = _cosine_block(u.embedding[None, :], v.embedding[None, :])
    if not valid[0, 0]:
        log.warning("zero embedding on %s/%s: cosine undefined, treated as no match", u.id, v.id)
        return False
    return bool(cos[0, 0] >= delta - COS_TOLERANCE)


def cosine_predicate(delta: float) -> Predicate:
    _check_delta(delta)
    return lambda u, v: cosine_attribute_predicate(u, v, delta)


def any_attribute_predicate(u: NodeRecord, v: NodeRecord) -> bool:
    return True


def _check_delta(delta: float) -> None:
    if not 0.0 <= delta <= 1.0:
        raise MatchError(f"cosine threshold {delta} outside [0, 1]")


@dataclass(frozen=True)
class MatchQuery:
    query: Cfg
    target: Cfg
    mode: str = MONOMORPHISM
    predicate: Union[str, Predicate] = EXACT
    delta: float = DEFAULT_DELTA
    cap: int = DEFAULT_CAP

    def __post_init__(self) -> None:
        if self.mode not in MODES:
            raise MatchError(f"unknown match mode {self.mode!r}")
        if isinstance(self.predicate, str):
            if self.predicate not in PREDICATES:
                raise MatchError(f"unknown predicate {self.predicate!r}")
            if self.predicate == COSINE:
                _check_delta(self.delta)
        if self.cap < 1:
            raise MatchError("enumeration cap must be positive")


@dataclass(frozen=True)
class MatchResult:
    query_id: str
    target_id: str
    mappings: tuple[dict[str, str], ...] = ()
    truncated: bool = False

    @property
    def matched(self) -> bool:
        return bool(self.mappings)

    def covered(self) -> set[str]:
        """Union of mapped target node ids over all mappings."""
        out: set[str] = set()
        for m in self.mappings:
            out.update(m.values())
        return out

    def hit_counts(self) -> dict[str, int]:
        """How many mappings touch each target node."""
        counts: dict[str, int] = {}
        for m in self.mappings:
            for t in m.values():
                counts[t] = counts.get(t, 0) + 1
        return counts


def _compat_matrix(q: Cfg, t: Cfg, predicate: Union[str, Predicate], delta: float) -> np.ndarray:
    nq, nt = len(q.nodes), len(t.nodes)
    if predicate == ANY:
        return np.ones((nq, nt), dtype=bool)
    if predicate == EXACT:
        keys: dict[bytes, int] = {}
        qk = np.array([keys.setdefault(n.feature.tobytes(), len(keys)) for n in q.nodes])
        tk = np.array([keys.setdefault(n.feature.tobytes(), len(keys)) for n in t.nodes])
        return qk[:, None] == tk[None, :]
    if predicate == COSINE:
        for g in (q, t):
            missing = [n.id for n in g.nodes if n.embedding is None]
            if missing:
                raise MatchError(f"cosine matching needs embeddings; graph {g.id!r} lacks {missing}")
        cos, valid = _cosine_block(q.embedding_matrix, t.embedding_matrix)
        if not valid.all():
            log.warning("zero embeddings in %s vs %s: cosine undefined, treated as no match",
                        q.id, t.id)
        return valid & (cos >= delta - COS_TOLERANCE)
    out = np.zeros((nq, nt), dtype=bool)
    for i, u in enumerate(q.nodes):
        for j, v in enumerate(t.nodes):
            out[i, j] = bool(predicate(u, v))
    return out


class _Vf2State:
    """Mutable DFS state for one (query, target) pair."""

    def __init__(self, q: Cfg, t: Cfg, compat: np.ndarray, induced: bool, cap: int):
        self.q, self.t = q, t
        self.nq, self.nt = len(q.nodes), len(t.nodes)
        self.qs, self.qp = q.successors, q.predecessors
        self.ts, self.tp = t.successors, t.predecessors
        self.directed = q.directed
        self.induced = induced
        self.cap = cap

        qout = np.array([len(s) for s in self.qs])
        qin = np.array([len(p) for p in self.qp])
        tout = np.array([len(s) for s in self.ts])
        tin = np.array([len(p) for p in self.tp])
        deg_ok = (qout[:, None] <= tout[None, :]) & (qin[:, None] <= tin[None, :])
        self.compat = compat & deg_ok

        self.core_q = [-1] * self.nq
        self.core_t = [-1] * self.nt
        # depth at which a node entered the out/in terminal sets (0 = never)
        self.out_q = [0] * self.nq
        self.in_q = [0] * self.nq
        self.out_t = [0] * self.nt
        self.in_t = [0] * self.nt
        self.depth = 0
        self.results: list[tuple[int, ...]] = []
        self.truncated = False

    # candidate generation -------------------------------------------------

    def _candidates(self) -> tuple[int, list[int]]:
        cq, ct = self.core_q, self.core_t
        u = next((i for i in range(self.nq) if cq[i] == -1 and self.out_q[i]), -1)
        if u >= 0:
            return u, [j for j in range(self.nt) if ct[j] == -1 and self.out_t[j]]
        if self.directed:
            u = next((i for i in range(self.nq) if cq[i] == -1 and self.in_q[i]), -1)
            if u >= 0:
                return u, [j for j in range(self.nt) if ct[j] == -1 and self.in_t[j]]
        u = next(i for i in range(self.nq) if cq[i] == -1)
        return u, [j for j in range(self.nt) if ct[j] == -1]

    # feasibility ----------------------------------------------------------

    def _lookahead(self, nbrs: frozenset[int], core: list[int], out_d: list[int],
                   in_d: list[int]) -> tuple[int, int, int]:
        n_out = n_in = n_new = 0
        for w in nbrs:
            if core[w] != -1:
                continue
            o, i = out_d[w], in_d[w]
            if o:
                n_out += 1
            if i:
                n_in += 1
            if not o and not i:
                n_new += 1
        return n_out, n_in, n_new

    def _feasible(self, u: int, v: int) -> bool:
        if not self.compat[u, v]:
            return False
        cq, ct = self.core_q, self.core_t
        qs_u, qp_u, ts_v, tp_v = self.qs[u], self.qp[u], self.ts[v], self.tp[v]
        for w in qs_u:
            if cq[w] != -1 and cq[w] not in ts_v:
                return False
        if self.directed:
            for w in qp_u:
                if cq[w] != -1 and cq[w] not in tp_v:
                    return False
        if self.induced:
            for x in ts_v:
                if ct[x] != -1 and ct[x] not in qs_u:
                    return False
            if self.directed:
                for x in tp_v:
                    if ct[x] != -1 and ct[x] not in qp_u:
                        return False

        dirs = [(qs_u, ts_v)] + ([(qp_u, tp_v)] if self.directed else [])
        for qn, tn in dirs:
            qo, qi, qnew = self._lookahead(qn, cq, self.out_q, self.in_q)
            to, ti, tnew = self._lookahead(tn, ct, self.out_t, self.in_t)
            if qo > to or qi > ti:
                return False
            if self.induced and qnew > tnew:
                return False
        return True

    # state push/pop -------------------------------------------------------

    def _push(self, u: int, v: int) -> None:
        self.depth += 1
        d = self.depth
        self.core_q[u] = v
        self.core_t[v] = u
        for arr, node, nbrs in ((self.out_q, u, self.qs), (self.out_t, v, self.ts)):
            if not arr[node]:
                arr[node] = d
            for w in nbrs[node]:
                if not arr[w]:
                    arr[w] = d
        if self.directed:
            for arr, node, nbrs in ((self.in_q, u, self.qp), (self.in_t, v, self.tp)):
                if not arr[node]:
                    arr[node] = d
                for w in nbrs[node]:
                    if not arr[w]:
                        arr[w] = d
        else:
            self.in_q = self.out_q
            self.in_t = self.out_t

    def _pop(self, u: int, v: int) -> None:
        d = self.depth
        self.core_q[u] = -1
        self.core_t[v] = -1
        arrays = [self.out_q, self.out_t] + ([self.in_q, self.in_t] if self.directed else [])
        for arr in arrays:
            for i, x in enumerate(arr):
                if x == d:
                    arr[i] = 0
        self.depth -= 1

    def search(self) -> None:
        if not self.directed:
            self.in_q, self.in_t = self.out_q, self.out_t
        self._dfs(0)

    def _dfs(self, matched: int) -> bool:
        """Return True when enumeration must stop."""
        if matched == self.nq:
            if len(self.results) == self.cap:
                self.truncated = True
                return True
            self.results.append(tuple(self.core_q))
            return False
        u, cands = self._candidates()
        for v in cands:
            if self._feasible(u, v):
                self._push(u, v)
                stop = self._dfs(matched + 1)
                self._pop(u, v)
                if stop:
                    return True
        return False


def _aligned(q: Cfg, t: Cfg) -> tuple[Cfg, Cfg]:
    if q.directed and t.directed:
        return q, t
    return (to_undirected(q) if q.directed else q), (to_undirected(t) if t.directed else t)


def vf2_match(mq: MatchQuery) -> MatchResult:
    """Enumerate every mapping of ``mq.query`` into ``mq.target``.

    Graphs are matched as directed only if both are directed; otherwise both
    are collapsed with :func:`to_undirected`.  Stops after ``cap`` mappings
    and sets ``truncated`` only if a further mapping exists.
    """
    q, t = _aligned(mq.query, mq.target)
    if not q.nodes:
        raise MatchError("query graph is empty")
    if len(q.nodes) > len(t.nodes):
        return MatchResult(q.id, t.id)
    try:
        compat = _compat_matrix(q, t, mq.predicate, mq.delta)
    except GraphError as exc:
        raise MatchError(str(exc)) from None
    state = _Vf2State(q, t, compat, mq.mode == ISOMORPHISM, mq.cap)
    if compat.any(axis=1).all():
        state.search()
    qids = [n.id for n in q.nodes]
    tids = [n.id for n in t.nodes]
    mappings = tuple({qids[i]: tids[j] for i, j in enumerate(core)} for core in state.results)
    return MatchResult(q.id, t.id, mappings, state.truncated)


def match(query: Cfg, target: Cfg, mode: str = MONOMORPHISM,
          predicate: Union[str, Predicate] = EXACT, delta: float = DEFAULT_DELTA,
          cap: int = DEFAULT_CAP) -> MatchResult:
    return vf2_match(MatchQuery(query, target, mode, predicate, delta, cap))


def is_match(query: Cfg, target: Cfg, mode: str = MONOMORPHISM,
             predicate: Union[str, Predicate] = EXACT, delta: float = DEFAULT_DELTA) -> bool:
    return vf2_match(MatchQuery(query, target, mode, predicate, delta, cap=1)).matched


__all__ = [
    "ANY", "COSINE", "DEFAULT_CAP", "DEFAULT_DELTA", "EXACT", "ISOMORPHISM", "MONOMORPHISM",
    "MatchError", "MatchQuery", "MatchResult",
    "any_attribute_predicate", "cosine_attribute_predicate", "cosine_predicate",
    "exact_attribute_predicate", "is_match", "match", "vf2_match",
]
