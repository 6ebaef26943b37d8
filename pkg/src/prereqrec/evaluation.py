"""Ranking protocol (1 positive + 99 sampled negatives), HR/NDCG, regression metrics, reports."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

log = logging.getLogger(__name__)


def hr_at_k(rank: int, k: int) -> int:
    if k < 1:
        raise ValueError("k must be >= 1")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return int(rank <= k)


def ndcg_at_k(rank: int, k: int) -> float:
    if k < 1:
        raise ValueError("k must be >= 1")
    if rank < 1:
        raise ValueError("rank must be >= 1")
    return 1.0 / math.log2(rank + 1) if rank <= k else 0.0


@dataclass
class RankingTask:
    user: int
    positive: int
    negatives: np.ndarray

    @property
    def candidates(self) -> np.ndarray:
        return np.concatenate([[self.positive], self.negatives])


@dataclass
class TaskSet:
    tasks: list[RankingTask]
    shortfall: int = 0  # tasks that got fewer than the requested negatives

    def __len__(self):
        return len(self.tasks)

    def __iter__(self):
        return iter(self.tasks)

    def __getitem__(self, k):
        return self.tasks[k]


def build_tasks(pairs, n_items: int, exclude: dict, n_negatives: int = 99, seed: int = 0) -> TaskSet:
    """One ranking task per (user, positive item) pair.

    ``exclude[user]`` is every item the user ever interacted with; negatives
    are drawn uniformly without replacement from the remaining catalog.
    """
    rng = np.random.default_rng(seed)
    all_items = np.arange(n_items)
    tasks, short = [], 0
    for user, pos in pairs:
        user, pos = int(user), int(pos)
        seen = exclude.get(user, set()) | {pos}
        pool = np.setdiff1d(all_items, np.fromiter(seen, dtype=np.int64), assume_unique=False)
        if len(pool) < n_negatives:
            short += 1
            negs = pool.copy()
        elif len(pool) == n_negatives:
            negs = pool.copy()
        else:
            negs = np.sort(rng.choice(pool, size=n_negatives, replace=False))
        tasks.append(RankingTask(user, pos, negs))
    if short:
        log.warning("%d task(s) had fewer than %d candidate negatives", short, n_negatives)
    return TaskSet(tasks, short)


def tasks_from_split(split, part: str = "test", exclude=None, n_negatives: int = 99, seed: int = 0) -> TaskSet:
    idx = getattr(split, part)
    c = split.corpus
    pairs = list(zip(c.users[idx].tolist(), c.items[idx].tolist()))
    if exclude is None:
        exclude = c.positives_by_user()
    return build_tasks(pairs, c.n_items, exclude, n_negatives, seed)


def positive_ranks(scorer, tasks) -> np.ndarray:
    """Rank (1 = best) of each task's positive; ties go to the lower item id."""
    if len(tasks) == 0:
        return np.zeros(0, dtype=np.int64)
    cands = [t.candidates for t in tasks]
    sizes = np.array([len(c) for c in cands])
    items = np.concatenate(cands)
    users = np.repeat([t.user for t in tasks], sizes)
    scores = np.asarray(scorer(users, items), dtype=np.float64)
    ranks = np.empty(len(tasks), dtype=np.int64)
    start = 0
    for k, n in enumerate(sizes):
        s = scores[start:start + n]
        v = items[start:start + n]
        better = (s[1:] > s[0]) | ((s[1:] == s[0]) & (v[1:] < v[0]))
        ranks[k] = 1 + int(better.sum())
        start += n
    return ranks


@dataclass
class EvalReport:
    metrics: dict = field(default_factory=dict)  # (metric, k, scenario, variant) -> value
    notes: dict = field(default_factory=dict)

    def get(self, metric, k, scenario="warm", variant="pdrs"):
        return self.metrics[(metric, k, scenario, variant)]

    def merge(self, other: "EvalReport") -> "EvalReport":
        self.metrics.update(other.metrics)
        self.notes.update(other.notes)
        return self

    def rows(self):
        for (metric, k, scenario, variant), value in sorted(self.metrics.items(), key=lambda kv: tuple(map(str, kv[0]))):
            yield {"metric": metric, "k": k, "scenario": scenario, "variant": variant, "value": value}

    def to_tsv(self, path, config_hash: str = "", seed: int = 0):
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("metric\tk\tscenario\tvariant\tvalue\tconfig_hash\tseed\n")
            for r in self.rows():
                fh.write(f"{r['metric']}\t{r['k']}\t{r['scenario']}\t{r['variant']}\t{r['value']!r}\t{config_hash}\t{seed}\n")


def evaluate(scorer, tasks, ks=(2, 10), scenario: str = "warm", variant: str = "pdrs") -> EvalReport:
    """Mean HR@k and NDCG@k over tasks."""
    ranks = positive_ranks(scorer, tasks)
    report = EvalReport()
    for k in ks:
        if k < 1:
            raise ValueError("k must be >= 1")
        hit = ranks <= k
        report.metrics[("HR", k, scenario, variant)] = float(hit.mean()) if len(ranks) else 0.0
        gains = np.where(hit, 1.0 / np.log2(ranks + 1.0), 0.0)
        report.metrics[("NDCG", k, scenario, variant)] = float(gains.mean()) if len(ranks) else 0.0
    report.notes[f"{scenario}/{variant}/tasks"] = len(ranks)
    return report


def regression_metrics(preds, targets) -> tuple[float, float]:
    """(RMSE, R2). R2 is NaN, with a warning, when the targets are constant."""
    p = np.asarray(preds, float)
    t = np.asarray(targets, float)
    if len(p) != len(t) or len(t) < 2:
        raise ValueError("need equal-length inputs with at least two points")
    sse = float(np.sum((p - t) ** 2))
    rmse = math.sqrt(sse / len(t))
    sst = float(np.sum((t - t.mean()) ** 2))
    if sst == 0.0:
        log.warning("constant targets: R2 is undefined")
        return rmse, float("nan")
    return rmse, 1.0 - sse / sst


def cold_start_eval(model, tasks, mode: str, ks=(2, 10), ablated=None) -> EvalReport:
    """Scores a cold split with mean-embedding substitution for unseen ids.

    ``model`` needs ``score(users, items, substitute_cold=True)`` and the
    ``warm_users`` / ``warm_items`` masks set during training. ``ablated``
    is the same architecture trained without the cold side's contexts.
    """
    if mode not in ("cold-user", "cold-item"):
        raise ValueError("mode must be cold-user or cold-item")
    scenario = mode
    report = evaluate(lambda u, v: model.score(u, v, substitute_cold=True), tasks, ks, scenario, "pdrs")
    bare = model.contextless_cold(tasks, mode)
    report.notes[f"{scenario}/pdrs/no_side_information"] = bare
    if bare:
        log.warning("%d cold %s(s) have no side information; mean embedding only", bare, mode.split("-")[1])
    if ablated is not None:
        report.merge(evaluate(lambda u, v: ablated.score(u, v, substitute_cold=True), tasks, ks,
                              scenario, "pdrs-ablated"))
    return report
