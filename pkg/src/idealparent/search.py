"""Greedy hill-climbing structure search with ideal-parent candidate screening.

Deletions and reversals are always scored exactly. Additions and
replacements are either all scored exactly (``mode="greedy"``) or ranked by
ideal-profile similarity, with only the top ``k`` legal candidates per
profile refitted (``mode="ideal"``). Whatever the mode, an applied move's
score change always comes from a full refit of the families it touches.
"""

from __future__ import annotations

import json
import time
import zlib
from collections import Counter
from dataclasses import dataclass, field
from typing import Any

import numpy as np

from .cpd import FittedFamily, fit_family
from .ideal import ideal_profile, replacement_profile, screening_scores
from .model import (CPDKind, Dataset, FamilyParams, MoveKind, NetworkGraph, SearchMove,
                    apply_move, is_legal_move)

_KIND_ORDER = {MoveKind.ADD: 0, MoveKind.DELETE: 1, MoveKind.REVERSE: 2, MoveKind.REPLACE: 3}


@dataclass
class SearchConfig:
    """Knobs of the hill-climbing search.

    ``k`` is the number of candidates per ideal profile that get a full score;
    it is required in ideal mode. ``restarts`` is the number of random-walk
    perturbation rounds (each of ``perturb_flips`` random legal edge changes)
    tried after the climb stalls.
    """

    k: int | None = None
    mode: str = "ideal"
    tabu_len: int = 10
    restarts: int = 2
    perturb_flips: int = 5
    max_in_degree: int | None = None
    two_layer: bool = False
    seed: int = 0
    cpd: CPDKind = CPDKind.LINEAR
    sigmoid_restarts: int = 3
    min_improvement: float = 1e-9
    max_moves: int = 100_000

    def __post_init__(self):
        self.cpd = CPDKind(self.cpd)
        if self.mode in ("greedy_exhaustive", "exhaustive"):
            self.mode = "greedy"
        if self.mode not in ("greedy", "ideal"):
            raise ValueError(f"unknown search mode {self.mode!r}")
        if self.mode == "ideal" and self.k is None:
            raise ValueError("ideal mode requires k (candidates per profile)")
        if self.k is not None and self.k < 1:
            raise ValueError("k must be at least 1")


@dataclass
class SearchTrace:
    records: list[dict] = field(default_factory=list)
    exact_evals: Counter = field(default_factory=Counter)
    move_evals: Counter = field(default_factory=Counter)
    screening_evals: int = 0
    wall_seconds: float = 0.0
    initial_score: float = float("nan")
    final_score: float = float("nan")
    mode: str = ""
    k: int | None = None

    @property
    def moves_taken(self) -> int:
        return sum(1 for r in self.records if r["phase"] == "climb")

    @property
    def addrep_evals(self) -> int:
        return self.exact_evals["add"] + self.exact_evals["replace"]

    @property
    def addrep_moves(self) -> int:
        """Add/replace moves given an exact score, summed over iterations (cache hits included)."""
        return self.move_evals["add"] + self.move_evals["replace"]

    @property
    def total_exact_evals(self) -> int:
        return sum(self.exact_evals.values())

    def write_jsonl(self, path) -> None:
        with open(path, "w") as fh:
            for rec in self.records:
                fh.write(json.dumps(rec) + "\n")


@dataclass
class SearchResult:
    graph: NetworkGraph
    score: float
    trace: SearchTrace


def _working_arrays(data: Any, graph: NetworkGraph):
    """Posterior means and variances aligned with the graph's nodes.

    ``data`` is a complete :class:`Dataset` or anything exposing ``names``,
    ``mean`` and ``var`` (posterior moments).
    """
    if isinstance(data, Dataset):
        if not data.fully_observed:
            raise ValueError("dataset has missing values; use structural_em")
        idx = []
        for name in graph.names:
            if name not in data.names:
                raise ValueError(f"no data column for node {name!r}; use structural_em")
            idx.append(data.names.index(name))
        return data.values[:, idx], None
    idx = [data.names.index(name) for name in graph.names]
    mean = data.mean[:, idx]
    var = data.var[:, idx]
    return mean, (var if np.any(var > 0) else None)


class FamilyCache:
    """Memoized family fits on fixed (expected) data, with evaluation counters."""

    def __init__(self, graph: NetworkGraph, mean: np.ndarray, var: np.ndarray | None,
                 sigmoid_restarts: int = 3, seed: int = 0):
        self.mean = mean
        self.var = var
        self.m = mean.shape[0]
        self.kinds = [n.kind for n in graph.nodes]
        self.has_var = (np.zeros(mean.shape[1], dtype=bool) if var is None
                        else np.any(var > 0, axis=0))
        self.sigmoid_restarts = sigmoid_restarts
        self.seed = seed
        self.fits: dict[tuple, FittedFamily] = {}
        self.evals: Counter = Counter()

    def fit(self, child: int, parents, category: str, init: FamilyParams | None = None
            ) -> FittedFamily:
        parents = tuple(sorted(parents))
        key = (child, parents)
        hit = self.fits.get(key)
        if hit is not None:
            return hit
        self.evals[category] += 1
        cvar = self.var[:, child] if self.has_var[child] else None
        pvar = None
        if parents and self.has_var[list(parents)].any():
            pvar = self.var[:, list(parents)]
        seed = zlib.crc32(np.asarray(key[1] + (child, self.seed), dtype=np.int64).tobytes())
        fit = fit_family(self.kinds[child], self.mean[:, child], self.mean[:, list(parents)],
                         child_var=cvar, parent_var=pvar, init=init,
                         restarts=self.sigmoid_restarts, seed=seed)
        self.fits[key] = fit
        return fit


def _warm_start(current: FittedFamily, old_parents, new_parents) -> FamilyParams:
    old = dict(zip(old_parents, current.params.alpha))
    return FamilyParams([old.get(p, 0.0) for p in sorted(new_parents)],
                        current.params.theta, current.params.sigma2)


class _Searcher:
    def __init__(self, graph: NetworkGraph, cache: FamilyCache, config: SearchConfig):
        self.graph = graph
        self.cache = cache
        self.config = config
        self.rankings: dict[tuple, list[int]] = {}
        self.screening_evals = 0
        self.move_evals: Counter = Counter()
        n = graph.n_nodes
        self.measure = {i: ("c2" if graph.nodes[i].kind is CPDKind.LINEAR else "distorted")
                        for i in range(n)}

    # -- scoring helpers ---------------------------------------------------
    def family(self, child: int, parents, category: str, init_from=None) -> FittedFamily:
        init = None
        if init_from is not None and self.graph.nodes[child].kind is CPDKind.SIGMOID:
            init = _warm_start(init_from[0], init_from[1], parents)
        return self.cache.fit(child, parents, category, init)

    def current(self, child: int) -> FittedFamily:
        init = self.graph.params[child]
        if (init is None or self.graph.nodes[child].kind is not CPDKind.SIGMOID
                or len(init.alpha) != len(self.graph.parents[child])):
            init = None
        return self.cache.fit(child, self.graph.parents[child], "initial", init)

    def score(self) -> float:
        return sum(self.current(i).bic for i in range(self.graph.n_nodes))

    def candidates(self, x: int) -> list[int]:
        g = self.graph
        out = []
        for z in range(g.n_nodes):
            if z == x or z in g.parents[x]:
                continue
            if g.two_layer and not (g.nodes[z].hidden and not g.nodes[x].hidden):
                continue
            out.append(z)
        return out

    def ranking(self, x: int, replaced: int | None) -> list[int]:
        g = self.graph
        parents = tuple(g.parents[x])
        key = (x, parents, replaced)
        hit = self.rankings.get(key)
        if hit is not None:
            return hit
        cands = self.candidates(x)
        if not cands:
            self.rankings[key] = []
            return []
        cur = self.current(x)
        mean = self.cache.mean
        kind = g.nodes[x].kind
        if replaced is None:
            prof = ideal_profile(kind, mean[:, x], mean[:, list(parents)], cur.params)
        else:
            prof = replacement_profile(kind, mean[:, x], mean[:, list(parents)], cur.params,
                                       parents.index(replaced))
        scores = screening_scores(prof, mean[:, cands], self.measure[x])
        self.screening_evals += len(cands)
        order = sorted(range(len(cands)), key=lambda i: (-scores[i], cands[i]))
        ranked = [cands[i] for i in order]
        self.rankings[key] = ranked
        return ranked

    # -- move enumeration --------------------------------------------------
    def scored_moves(self) -> list[SearchMove]:
        g = self.graph
        reach = g.reachability()
        cfg = self.config
        moves = []
        for x in range(g.n_nodes):
            parents = list(g.parents[x])
            cur = self.current(x)
            base = (cur, parents)
            # deletions and reversals: always exact
            for z in parents:
                rest = [p for p in parents if p != z]
                fam_x = self.family(x, rest, "delete", base)
                d_del = fam_x.bic - cur.bic
                moves.append(SearchMove(MoveKind.DELETE, x, z, None, d_del, "exact",
                                        {x: fam_x.params}))
                rev = SearchMove(MoveKind.REVERSE, x, z)
                if is_legal_move(g, rev, reach):
                    zp = list(g.parents[z])
                    cur_z = self.current(z)
                    fam_z = self.family(z, zp + [x], "reverse", (cur_z, zp))
                    rev.delta_bic = d_del + fam_z.bic - cur_z.bic
                    rev.families = {x: fam_x.params, z: fam_z.params}
                    moves.append(rev)
            # additions
            add_ok = g.max_in_degree is None or len(parents) < g.max_in_degree
            if add_ok:
                for z in self._pick(x, None, reach):
                    fam = self.family(x, parents + [z], "add", base)
                    self.move_evals["add"] += 1
                    moves.append(SearchMove(MoveKind.ADD, x, z, None, fam.bic - cur.bic,
                                            self._tag(x), {x: fam.params}))
            # replacements
            for r in parents:
                rest = [p for p in parents if p != r]
                for w in self._pick(x, r, reach):
                    fam = self.family(x, rest + [w], "replace", base)
                    self.move_evals["replace"] += 1
                    moves.append(SearchMove(MoveKind.REPLACE, x, r, w, fam.bic - cur.bic,
                                            self._tag(x), {x: fam.params}))
        return moves

    def _tag(self, x: int) -> str:
        if self.config.mode == "greedy":
            return "exact"
        return "c2" if self.measure[x] == "c2" else "distorted"

    def _pick(self, x: int, replaced: int | None, reach) -> list[int]:
        """Legal add (or replace) candidates that get an exact score."""
        g = self.graph
        if self.config.mode == "greedy":
            pool = self.candidates(x)
        else:
            pool = self.ranking(x, replaced)
        out = []
        for z in pool:
            if reach[x, z]:
                continue
            out.append(z)
            if self.config.mode == "ideal" and len(out) >= self.config.k:
                break
        return out

    def legal_random_moves(self) -> list[SearchMove]:
        g = self.graph
        reach = g.reachability()
        out = []
        for x in range(g.n_nodes):
            for z in g.parents[x]:
                out.append(SearchMove(MoveKind.DELETE, x, z))
                rev = SearchMove(MoveKind.REVERSE, x, z)
                if is_legal_move(g, rev, reach):
                    out.append(rev)
            for z in self.candidates(x):
                mv = SearchMove(MoveKind.ADD, x, z)
                if is_legal_move(g, mv, reach):
                    out.append(mv)
        return out

    def score_move(self, mv: SearchMove, category: str) -> SearchMove:
        g = self.graph
        x, z = mv.child, mv.parent
        parents = list(g.parents[x])
        cur = self.current(x)
        if mv.kind is MoveKind.ADD:
            new = parents + [z]
        else:
            new = [p for p in parents if p != z]
        fam = self.family(x, new, category, (cur, parents))
        mv.delta_bic = fam.bic - cur.bic
        mv.families = {x: fam.params}
        if mv.kind is MoveKind.REVERSE:
            zp = list(g.parents[z])
            cur_z = self.current(z)
            fam_z = self.family(z, zp + [x], category, (cur_z, zp))
            mv.delta_bic += fam_z.bic - cur_z.bic
            mv.families[z] = fam_z.params
        return mv


def _move_order(mv: SearchMove) -> tuple:
    return (-mv.delta_bic, mv.child, mv.parent if mv.parent is not None else -1,
            mv.new_parent if mv.new_parent is not None else -1, _KIND_ORDER[mv.kind])


def _record(trace: SearchTrace, t0: float, it: int, phase: str, mv: SearchMove,
            g: NetworkGraph, score: float, cache: FamilyCache, screening: int,
            scored: int) -> None:
    name = lambda i: None if i is None else g.nodes[i].name  # noqa: E731
    trace.records.append({
        "iteration": it,
        "phase": phase,
        "move": mv.kind.value,
        "child": name(mv.child),
        "parent": name(mv.parent),
        "new_parent": name(mv.new_parent),
        "delta_bic": mv.delta_bic,
        "score": score,
        "screened_by": mv.screened_by,
        "exact_evals": sum(cache.evals.values()),
        "scored_moves": scored,
        "screening_evals": screening,
        "seconds": time.perf_counter() - t0,
    })


def greedy_search(data, config: SearchConfig, initial_graph: NetworkGraph | None = None,
                  *, cache: FamilyCache | None = None) -> SearchResult:
    """Hill-climb the BIC (or expected BIC) from ``initial_graph``.

    Each iteration scores deletions and reversals exactly, picks additions and
    replacements per ``config.mode``, and applies the best move with a positive
    exact score change (inverse moves are tabu for ``tabu_len`` iterations).
    When no move helps, up to ``config.restarts`` random-walk perturbations are
    tried. The best graph seen is returned together with a trace.
    """
    t0 = time.perf_counter()
    if initial_graph is None:
        names = data.names
        graph = NetworkGraph.empty(names, config.cpd, max_in_degree=config.max_in_degree,
                                   two_layer=config.two_layer)
    else:
        graph = initial_graph.copy()
        if config.max_in_degree is not None:
            graph.max_in_degree = config.max_in_degree
        if config.two_layer:
            graph.two_layer = True
    mean, var = _working_arrays(data, graph)
    if cache is None:
        cache = FamilyCache(graph, mean, var, config.sigmoid_restarts, config.seed)
    s = _Searcher(graph, cache, config)
    for i in range(graph.n_nodes):
        graph.params[i] = s.current(i).params

    trace = SearchTrace(mode=config.mode, k=config.k)
    score = s.score()
    trace.initial_score = score
    best_score, best_graph = score, graph.copy()
    rng = np.random.default_rng(config.seed)
    tabu: dict[tuple, int] = {}
    rounds = 0
    it = 0
    while it < config.max_moves:
        it += 1
        moves = [mv for mv in s.scored_moves()
                 if mv.delta_bic > config.min_improvement and tabu.get(mv.key(), 0) < it]
        if moves:
            mv = min(moves, key=_move_order)
            apply_move(graph, mv)
            score += mv.delta_bic
            tabu[mv.inverse().key()] = it + config.tabu_len
            _record(trace, t0, it, "climb", mv, graph, score, cache, s.screening_evals,
                    sum(s.move_evals.values()))
            if score > best_score:
                best_score, best_graph = score, graph.copy()
            continue
        if rounds >= config.restarts:
            break
        rounds += 1
        for _ in range(config.perturb_flips):
            options = s.legal_random_moves()
            if not options:
                break
            mv = s.score_move(options[rng.integers(len(options))], "perturb")
            mv.screened_by = "random"
            apply_move(graph, mv)
            score += mv.delta_bic
            tabu[mv.inverse().key()] = it + config.tabu_len
            _record(trace, t0, it, "perturb", mv, graph, score, cache, s.screening_evals,
                    sum(s.move_evals.values()))

    trace.exact_evals = Counter(cache.evals)
    trace.move_evals = s.move_evals
    trace.screening_evals = s.screening_evals
    trace.final_score = best_score
    trace.wall_seconds = time.perf_counter() - t0
    return SearchResult(best_graph, best_score, trace)


def screen_candidates(graph: NetworkGraph, data, child, config: SearchConfig
                      ) -> list[SearchMove]:
    """Top-k add and replace moves for one child, each with its exact score change.

    Ranks legal candidates by C2 (linear) or slope-weighted C2 (sigmoid)
    against the child's ideal profile and against one replacement profile per
    current parent. In greedy mode every legal candidate is returned.
    """
    g = graph.copy()
    mean, var = _working_arrays(data, g)
    cache = FamilyCache(g, mean, var, config.sigmoid_restarts, config.seed)
    s = _Searcher(g, cache, config)
    x = g.index(child)
    for i in range(g.n_nodes):
        if g.params[i] is None or len(g.params[i].alpha) != len(g.parents[i]):
            g.params[i] = s.current(i).params
    reach = g.reachability()
    parents = list(g.parents[x])
    cur = s.current(x)
    out = []
    if g.max_in_degree is None or len(parents) < g.max_in_degree:
        for z in s._pick(x, None, reach):
            fam = s.family(x, parents + [z], "add", (cur, parents))
            out.append(SearchMove(MoveKind.ADD, x, z, None, fam.bic - cur.bic, s._tag(x),
                                  {x: fam.params}))
    for r in parents:
        rest = [p for p in parents if p != r]
        for w in s._pick(x, r, reach):
            fam = s.family(x, rest + [w], "replace", (cur, parents))
            out.append(SearchMove(MoveKind.REPLACE, x, r, w, fam.bic - cur.bic, s._tag(x),
                                  {x: fam.params}))
    return out


def evaluation_counters(trace: SearchTrace, baseline: SearchTrace | None = None) -> dict:
    """Evaluation counts of a run, with ratios against a paired baseline run."""
    report = {
        "mode": trace.mode,
        "k": trace.k,
        "exact_evals": trace.total_exact_evals,
        "exact_evals_add_replace": trace.addrep_evals,
        "scored_moves_add_replace": trace.addrep_moves,
        "screening_evals": trace.screening_evals,
        "moves": trace.moves_taken,
        "wall_seconds": trace.wall_seconds,
        "score": trace.final_score,
    }
    if baseline is not None:
        def ratio(a, b):
            return a / b if b else float("nan")
        report["eval_ratio"] = ratio(trace.addrep_evals, baseline.addrep_evals)
        report["scored_moves_ratio"] = ratio(trace.addrep_moves, baseline.addrep_moves)
        report["total_eval_ratio"] = ratio(trace.total_exact_evals, baseline.total_exact_evals)
        report["moves_ratio"] = ratio(trace.moves_taken, baseline.moves_taken)
        report["speedup"] = ratio(baseline.wall_seconds, trace.wall_seconds)
    return report
