"""Monte-Carlo ticket search, held-out verification, Pareto and cross-task analysis."""

from __future__ import annotations

import json
import logging
import math
import multiprocessing as mp
from dataclasses import dataclass, field

import numpy as np

from .envs import EnvSpec
from .flow import FlowModel
from .policy import GaussianNoise, NoiseSource, PolicyConfig, Ticket, TicketNoise, gaussian_vector, rollout

log = logging.getLogger(__name__)

Z95 = 1.959963984540054
BASE_ID = "base"


class SeedOverlapError(ValueError):
    pass


@dataclass
class SearchConfig:
    n_tickets: int
    search_env_seeds: list[int]
    ticket_seed: int = 0
    objective: str = "return-mean"

    def __post_init__(self):
        if self.n_tickets < 1:
            raise ValueError("n_tickets must be >= 1")
        if not self.search_env_seeds:
            raise ValueError("search_env_seeds (the environment set E) is empty")
        if self.objective != "return-mean":
            raise ValueError(f"unsupported objective {self.objective!r}")
        self.search_env_seeds = [int(s) for s in self.search_env_seeds]


@dataclass
class TicketReport:
    ticket_id: str
    mean_return: float
    success_rate: float
    mean_success_len: float | None
    returns: list[float]
    ci: float
    lengths: list[int] = field(default_factory=list, repr=False)
    index: int = -1

    @property
    def n(self) -> int:
        return len(self.returns)

    @property
    def length_key(self) -> float:
        return math.inf if self.mean_success_len is None else self.mean_success_len


def binomial_ci(rate: float, n: int) -> float:
    """Half-width of the normal-approximation 95% interval."""
    if n == 0:
        return math.inf
    return Z95 * math.sqrt(max(rate * (1.0 - rate), 0.0) / n)


def make_report(ticket_id: str, results, index: int = -1) -> TicketReport:
    returns = [float(r.ret) for r in results]
    successes = [r for r in results if r.success]
    n = len(results)
    rate = len(successes) / n
    mean_len = sum(r.length for r in successes) / len(successes) if successes else None
    return TicketReport(
        ticket_id=ticket_id,
        mean_return=math.fsum(returns) / n,
        success_rate=rate,
        mean_success_len=mean_len,
        returns=returns,
        ci=binomial_ci(rate, n),
        lengths=[int(r.length) for r in results],
        index=index,
    )


# ------------------------------------------------------------ parallel runs

_WORK: dict = {}


def _episode(task):
    noise, seed = task
    w = _WORK
    return w["rollout"](w["spec"], w["model"], w["cfg"], noise, seed)


def run_episodes(rollout_fn, spec, model, cfg, tasks, jobs: int = 1):
    """Run ``(noise, seed)`` episodes, in order. Results do not depend on ``jobs``."""
    tasks = list(tasks)
    _WORK.update(rollout=rollout_fn, spec=spec, model=model, cfg=cfg)
    try:
        if jobs <= 1 or len(tasks) < 2:
            return [_episode(t) for t in tasks]
        # fork shares the (possibly unpicklable) rollout function and model with workers
        ctx = mp.get_context("fork")
        with ctx.Pool(jobs) as pool:
            return pool.map(_episode, tasks, chunksize=max(1, len(tasks) // (4 * jobs)))
    finally:
        _WORK.clear()


def noise_id(noise: NoiseSource) -> str:
    return noise.ticket.id if isinstance(noise, TicketNoise) else BASE_ID


def evaluate(model, cfg, spec, noise: NoiseSource, eval_seeds, rollout_fn=rollout, jobs: int = 1) -> TicketReport:
    """Monte-Carlo estimate of a noise source's return over ``eval_seeds``."""
    eval_seeds = [int(s) for s in eval_seeds]
    if not eval_seeds:
        raise ValueError("eval_seeds is empty")
    results = run_episodes(rollout_fn, spec, model, cfg, [(noise, s) for s in eval_seeds], jobs)
    return make_report(noise_id(noise), results)


def draw_tickets(n: int, ticket_seed: int, dim: int) -> list[Ticket]:
    return [Ticket(gaussian_vector(ticket_seed, i, dim), (ticket_seed, i)) for i in range(n)]


@dataclass
class SearchResult:
    reports: list[TicketReport]  # ranked: best first, ties by ticket index
    best: Ticket
    tickets: list[Ticket]

    @property
    def best_report(self) -> TicketReport:
        return self.reports[0]


def search(model: FlowModel, cfg: PolicyConfig, spec: EnvSpec, sc: SearchConfig, rollout_fn=rollout, jobs: int = 1) -> SearchResult:
    """Random search over constant initial-noise vectors.

    Every ticket is scored by its average return over the same environment
    seeds; the best one is kept with a strict ``>`` so the earliest of
    equally good tickets wins.
    """
    tickets = draw_tickets(sc.n_tickets, sc.ticket_seed, model.chunk_dim)
    tasks = [(TicketNoise(t), s) for t in tickets for s in sc.search_env_seeds]
    results = run_episodes(rollout_fn, spec, model, cfg, tasks, jobs)
    m = len(sc.search_env_seeds)
    reports = [make_report(t.id, results[i * m : (i + 1) * m], i) for i, t in enumerate(tickets)]

    best_score, best = -math.inf, None
    for ticket, report in zip(tickets, reports):
        if report.mean_return > best_score:
            best_score, best = report.mean_return, ticket
    ranked = sorted(reports, key=lambda r: (-r.mean_return, r.index))
    log.info("search: best ticket %s scored %.3f over %d envs", best.id, best_score, m)
    return SearchResult(ranked, best, tickets)


@dataclass
class GoldenVerdict:
    ticket_id: str
    held_out_rate: float
    base_rate: float
    delta: float
    ticket_ci: float
    base_ci: float
    is_golden: bool
    n_held_out: int
    n_base: int

    def to_json(self) -> dict:
        return dict(self.__dict__)


def check_disjoint(held_out_seeds, search_seeds) -> None:
    overlap = sorted(set(int(s) for s in held_out_seeds) & set(int(s) for s in search_seeds))
    if overlap:
        shown = ", ".join(str(s) for s in overlap[:5])
        raise SeedOverlapError(
            f"{len(overlap)} held-out seed(s) also used for search ({shown}{', ...' if len(overlap) > 5 else ''}); "
            "verification on search environments would be contaminated"
        )


def verify_golden(
    model,
    cfg,
    spec,
    candidate: Ticket,
    held_out_seeds,
    base_episodes: int | None = None,
    search_seeds=(),
    base_seed: int = 0,
    rollout_fn=rollout,
    jobs: int = 1,
) -> GoldenVerdict:
    """Compare a ticket with the Gaussian base policy on unseen environments.

    The ticket is golden when its success rate beats the base rate by more
    than the sum of both 95% half-widths.
    """
    held_out_seeds = [int(s) for s in held_out_seeds]
    if not held_out_seeds:
        raise ValueError("held_out_seeds is empty")
    check_disjoint(held_out_seeds, search_seeds)
    if base_episodes is None:
        base_episodes = len(held_out_seeds)
    if not 1 <= base_episodes <= len(held_out_seeds):
        raise ValueError(f"base_episodes must lie in [1, {len(held_out_seeds)}]")
    ticket_report = evaluate(model, cfg, spec, TicketNoise(candidate), held_out_seeds, rollout_fn, jobs)
    base_report = evaluate(model, cfg, spec, GaussianNoise(base_seed), held_out_seeds[:base_episodes], rollout_fn, jobs)
    delta = ticket_report.success_rate - base_report.success_rate
    return GoldenVerdict(
        ticket_id=candidate.id,
        held_out_rate=ticket_report.success_rate,
        base_rate=base_report.success_rate,
        delta=delta,
        ticket_ci=ticket_report.ci,
        base_ci=base_report.ci,
        is_golden=delta > ticket_report.ci + base_report.ci,
        n_held_out=len(held_out_seeds),
        n_base=base_episodes,
    )


# ------------------------------------------------------------------ pareto


def dominates(a: TicketReport, b: TicketReport) -> bool:
    """``a`` is at least as good on rate and length and strictly better on one."""
    ra, rb, la, lb = a.success_rate, b.success_rate, a.length_key, b.length_key
    return ra >= rb and la <= lb and (ra > rb or la < lb)


def pareto(reports: list[TicketReport]) -> list[TicketReport]:
    """Non-dominated reports (max success rate, min mean successful length), input order kept."""
    if not reports:
        raise ValueError("pareto() needs at least one report")
    order = sorted(range(len(reports)), key=lambda i: (-reports[i].success_rate, reports[i].length_key))
    keep = [False] * len(reports)
    best_above = None  # shortest length among strictly higher success rates
    i = 0
    while i < len(order):
        rate = reports[order[i]].success_rate
        j = i
        while j < len(order) and reports[order[j]].success_rate == rate:
            j += 1
        group_min = reports[order[i]].length_key
        for k in order[i:j]:
            length = reports[k].length_key
            keep[k] = length == group_min and (best_above is None or length < best_above)
        best_above = group_min if best_above is None else min(best_above, group_min)
        i = j
    return [r for r, k in zip(reports, keep) if k]


# -------------------------------------------------------------- cross-task


@dataclass
class CrossTaskMatrix:
    column_ids: list[str]  # "base" first, then ticket ids
    source_tasks: list[int | None]  # task each ticket was searched on; None for base
    rates: np.ndarray  # (n_tasks, n_columns) success rates

    @property
    def averages(self) -> np.ndarray:
        return self.rates.mean(axis=0)

    @property
    def labels(self) -> list[str]:
        """Column labels ``id@T<source task>``; one ticket can be top-1 on several tasks."""
        return [cid if src is None else f"{cid}@T{src}" for cid, src in zip(self.column_ids, self.source_tasks)]

    def tickets_beating_base(self, min_tasks: int = 2) -> list[str]:
        base = self.rates[:, 0]
        wins = (self.rates[:, 1:] > base[:, None]).sum(axis=0)
        return [label for label, w in zip(self.labels[1:], wins) if w >= min_tasks]

    def to_csv(self) -> str:
        lines = [",".join(["task"] + self.labels)]
        for k, row in enumerate(self.rates):
            lines.append(",".join([f"T{k}"] + [repr(float(v)) for v in row]))
        lines.append(",".join(["avg"] + [repr(float(v)) for v in self.averages]))
        return "\n".join(lines) + "\n"


def cross_task_matrix(
    model,
    cfg,
    spec: EnvSpec,
    tickets: list[tuple[Ticket, int]],
    eval_seeds_per_task: list[list[int]],
    base_seed: int = 0,
    rollout_fn=rollout,
    jobs: int = 1,
) -> CrossTaskMatrix:
    """Success rate of the base policy and every ticket on every task."""
    k = spec.n_tasks
    if len(eval_seeds_per_task) != k:
        raise ValueError(f"need eval seeds for each of the {k} tasks")
    columns: list[NoiseSource] = [GaussianNoise(base_seed)] + [TicketNoise(t) for t, _ in tickets]
    rates = np.zeros((k, len(columns)))
    for task in range(k):
        task_spec = spec.for_task(task)
        seeds = [int(s) for s in eval_seeds_per_task[task]]
        tasks = [(noise, s) for noise in columns for s in seeds]
        results = run_episodes(rollout_fn, task_spec, model, cfg, tasks, jobs)
        for c in range(len(columns)):
            chunk = results[c * len(seeds) : (c + 1) * len(seeds)]
            rates[task, c] = sum(r.success for r in chunk) / len(seeds)
    return CrossTaskMatrix(
        [BASE_ID] + [t.id for t, _ in tickets],
        [None] + [int(src) for _, src in tickets],
        rates,
    )


# ------------------------------------------------------- budget trade-off


@dataclass
class BudgetPoint:
    n_tickets: int
    n_envs: int
    best_id: str
    search_rate: float
    held_out_rate: float

    @property
    def gap(self) -> float:
        return self.search_rate - self.held_out_rate


def budget_tradeoff(
    model,
    cfg,
    spec,
    budget: int,
    splits: list[int],
    ticket_seed: int,
    search_seed_pool: list[int],
    held_out_seeds: list[int],
    rollout_fn=rollout,
    jobs: int = 1,
) -> list[BudgetPoint]:
    """Search with ``n`` tickets on ``budget // n`` environments for each ``n`` in ``splits``."""
    check_disjoint(held_out_seeds, search_seed_pool)
    points = []
    for n in splits:
        n_envs = budget // n
        if n_envs < 1 or n_envs > len(search_seed_pool):
            raise ValueError(f"split n={n} needs {n_envs} search envs; pool has {len(search_seed_pool)}")
        sc = SearchConfig(n, list(search_seed_pool[:n_envs]), ticket_seed)
        found = search(model, cfg, spec, sc, rollout_fn, jobs)
        held = evaluate(model, cfg, spec, TicketNoise(found.best), held_out_seeds, rollout_fn, jobs)
        points.append(BudgetPoint(n, n_envs, found.best.id, found.best_report.success_rate, held.success_rate))
    return points


# ------------------------------------------------------------- persistence

REPORT_COLUMNS = ["ticket_id", "mean_return", "success_rate", "mean_success_len", "ci", "returns"]


def _fmt(x) -> str:
    return "" if x is None else repr(float(x))


def reports_to_csv(reports: list[TicketReport]) -> str:
    lines = [",".join(REPORT_COLUMNS)]
    for r in reports:
        returns = json.dumps([float(v) for v in r.returns], separators=(",", ":"))
        lines.append(
            ",".join(
                [r.ticket_id, _fmt(r.mean_return), _fmt(r.success_rate), _fmt(r.mean_success_len), _fmt(r.ci), f'"{returns}"']
            )
        )
    return "\n".join(lines) + "\n"


def reports_from_csv(text: str) -> list[TicketReport]:
    import csv
    import io

    rows = list(csv.DictReader(io.StringIO(text)))
    out = []
    for i, row in enumerate(rows):
        missing = [c for c in REPORT_COLUMNS if c not in row]
        if missing:
            raise ValueError(f"report CSV is missing columns {missing}")
        out.append(
            TicketReport(
                ticket_id=row["ticket_id"],
                mean_return=float(row["mean_return"]),
                success_rate=float(row["success_rate"]),
                mean_success_len=float(row["mean_success_len"]) if row["mean_success_len"] else None,
                returns=[float(v) for v in json.loads(row["returns"])],
                ci=float(row["ci"]),
                index=i,
            )
        )
    return out
