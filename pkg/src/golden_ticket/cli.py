"""Command-line pipeline: gen-data, train, eval-base, search, verify, pareto, cross-task, budget, report.

Every command reads one JSON run config (``--config``) and reads/writes
artifacts in a run directory (``--out``, default: the config's
``output_dir``). Policy-dependent artifacts carry the flow step count in
their name, e.g. ``search_s8.csv``.

Exit codes: 0 success, 1 runtime failure (e.g. the expert failed too often
or the output is unwritable), 2 validation error or missing/corrupt
artifact, 3 ``verify --require-golden`` on a ticket that is not golden.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import os
import sys
import tempfile
from pathlib import Path

from . import checkpoint, envs, search as ts
from .config import ConfigError, RunConfig
from .flow import Dataset, train
from .policy import GaussianNoise, Ticket

log = logging.getLogger("golden_ticket")

EXIT_OK, EXIT_RUNTIME, EXIT_INVALID, EXIT_NOT_GOLDEN = 0, 1, 2, 3
STEP_CHOICES = (2, 8)

DATASET = "dataset.gtds"
MANIFEST = "manifest.json"
MODEL = "model.gtck"
TRACE = "loss_trace.csv"
REPORT_DIR = "report"
PARETO_COLUMNS = ["ticket_id", "success_rate", "mean_success_len", "on_frontier"]


def base_name(s): return f"base_s{s}.csv"
def base_tasks_name(s): return f"base_tasks_s{s}.csv"
def search_name(s): return f"search_s{s}.csv"
def ticket_name(s): return f"best_ticket_s{s}.json"
def verdict_name(s): return f"verdict_s{s}.json"
def pareto_name(s): return f"pareto_s{s}.csv"
def cross_name(s): return f"cross_task_s{s}.csv"
def cross_tickets_name(s): return f"cross_task_tickets_s{s}.json"
def budget_name(s): return f"budget_s{s}.csv"


class ArtifactError(ValueError):
    """A required input artifact is missing, corrupt, or inconsistent with the config."""


# ----------------------------------------------------------------- file io


def atomic_write(path: Path, data) -> None:
    """Write to a sibling temp file, fsync, then rename over ``path``."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = data.encode() if isinstance(data, str) else bytes(data)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def write_json(path: Path, obj) -> None:
    atomic_write(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def write_csv(path: Path, header: list[str], rows: list[list]) -> None:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    atomic_write(path, buf.getvalue())


def fmt(x) -> str:
    return "" if x is None else repr(float(x))


def require(path: Path, made_by: str) -> Path:
    if not path.is_file():
        raise ArtifactError(f"missing artifact {path} (run `golden-ticket {made_by}` first)")
    return path


def load_model(run: Path, cfg: RunConfig):
    path = require(run / MODEL, "train")
    try:
        model = checkpoint.load(path)
    except checkpoint.CheckpointError as exc:
        raise ArtifactError(f"{path}: {exc}") from exc
    spec = cfg.env_spec()
    if model.cond_dim != spec.obs_dim:
        raise ArtifactError(
            f"{path}: model takes {model.cond_dim}-dim observations but task {spec.task} emits {spec.obs_dim}"
        )
    if model.chunk_dim != envs.CHUNK_HORIZON * envs.ACTION_DIM:
        raise ArtifactError(f"{path}: chunk width {model.chunk_dim} does not match the env action chunk")
    return model


def load_ticket(path: Path, model) -> Ticket:
    try:
        ticket = Ticket.load(path)
    except (OSError, ValueError, KeyError) as exc:
        raise ArtifactError(f"{path}: unreadable ticket ({exc})") from exc
    if ticket.dim != model.chunk_dim:
        raise ArtifactError(f"{path}: ticket dim {ticket.dim} but model noise dim {model.chunk_dim}")
    return ticket


def load_reports(path: Path) -> list[ts.TicketReport]:
    try:
        return ts.reports_from_csv(path.read_text())
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{path}: corrupt report CSV ({exc})") from exc


# ---------------------------------------------------------------- commands


def cmd_gen_data(cfg: RunConfig, run: Path, args) -> int:
    spec, dc = cfg.data_spec(), cfg.data_config()
    ds = envs.generate_dataset(spec, dc)
    blob = ds.to_bytes()
    atomic_write(run / DATASET, blob)
    manifest = {
        "dataset": DATASET,
        "content_hash": ds.content_hash(),
        "task": spec.task,
        "demo_horizon": spec.horizon,
        "seed": dc.seed,
        "n_demos": dc.n_demos,
        "n_pairs": len(ds),
        "skipped": ds.meta["skipped"],
        "stride": dc.stride,
        "style_weights": dict(sorted(dc.style_weights.items())),
    }
    write_json(run / MANIFEST, manifest)
    print(f"gen-data: {len(ds)} pairs from {dc.n_demos - ds.meta['skipped']}/{dc.n_demos} demos, sha256 {manifest['content_hash'][:16]}")
    return EXIT_OK


def cmd_train(cfg: RunConfig, run: Path, args) -> int:
    path = require(run / DATASET, "gen-data")
    try:
        ds = Dataset.from_bytes(path.read_bytes())
    except (ValueError, KeyError, json.JSONDecodeError) as exc:
        raise ArtifactError(f"{path}: corrupt dataset ({exc})") from exc
    if (run / MANIFEST).is_file():
        expected = json.loads((run / MANIFEST).read_text()).get("content_hash")
        if expected and expected != ds.content_hash():
            raise ArtifactError(f"{path}: content hash does not match {MANIFEST}")
    spec = cfg.env_spec()
    if ds.env_id != spec.task or ds.cond_dim != spec.obs_dim:
        raise ArtifactError(f"{path}: dataset is for {ds.env_id} ({ds.cond_dim}-dim obs), config task is {spec.task} ({spec.obs_dim}-dim)")
    tc = cfg.train_config()
    model, trace = train(tc, ds)
    atomic_write(run / MODEL, checkpoint.to_bytes(model))
    buf = io.StringIO()
    buf.write("epoch,train_loss,val_loss\n")
    for s in trace:
        buf.write(f"{s.epoch},{s.train_loss:.9g},{s.val_loss:.9g}\n")
    atomic_write(run / TRACE, buf.getvalue())
    print(f"train: {tc.epochs} epochs on {len(ds)} pairs, val loss {trace[0].val_loss:.4f} -> {trace[-1].val_loss:.4f}")
    return EXIT_OK


def cmd_eval_base(cfg: RunConfig, run: Path, args) -> int:
    model = load_model(run, cfg)
    spec, pc, steps = cfg.env_spec(), cfg.policy_config(args.steps), args.steps
    noise = GaussianNoise(cfg.base_noise_seed)
    report = ts.evaluate(model, pc, spec, noise, cfg.held_out_seeds(), jobs=args.jobs)
    atomic_write(run / base_name(steps), ts.reports_to_csv([report]))
    print(f"eval-base ({steps} steps): success {report.success_rate:.3f} +/- {report.ci:.3f} over {report.n} held-out episodes")
    if spec.task == "multi-goal":
        per_task = []
        for k in range(spec.n_tasks):
            r = ts.evaluate(model, pc, spec.for_task(k), noise, cfg.cross_eval_seeds(k), jobs=args.jobs)
            r.ticket_id = f"base@T{k}"
            per_task.append(r)
            print(f"  task {k}: success {r.success_rate:.3f}")
        atomic_write(run / base_tasks_name(steps), ts.reports_to_csv(per_task))
    return EXIT_OK


def cmd_search(cfg: RunConfig, run: Path, args) -> int:
    model = load_model(run, cfg)
    sc = ts.SearchConfig(cfg.search.n_tickets, cfg.search_env_seeds(), cfg.ticket_seed)
    result = ts.search(model, cfg.policy_config(args.steps), cfg.env_spec(), sc, jobs=args.jobs)
    atomic_write(run / search_name(args.steps), ts.reports_to_csv(result.reports))
    write_json(run / ticket_name(args.steps), result.best.to_json())
    b = result.best_report
    print(f"search ({args.steps} steps): best of {sc.n_tickets} is {b.ticket_id} with success {b.success_rate:.3f} on {b.n} search envs")
    return EXIT_OK


def cmd_verify(cfg: RunConfig, run: Path, args) -> int:
    model = load_model(run, cfg)
    ticket_path = Path(args.ticket) if args.ticket else require(run / ticket_name(args.steps), "search")
    ticket = load_ticket(ticket_path, model)
    verdict = ts.verify_golden(
        model,
        cfg.policy_config(args.steps),
        cfg.env_spec(),
        ticket,
        cfg.held_out_seeds(),
        cfg.held_out.base_episodes,
        search_seeds=cfg.budget_seed_pool() + cfg.search_env_seeds(),
        base_seed=cfg.base_noise_seed,
        jobs=args.jobs,
    )
    out = verdict.to_json()
    out["steps"] = args.steps
    write_json(run / verdict_name(args.steps), out)
    word = "GOLDEN" if verdict.is_golden else "not golden"
    print(
        f"verify ({args.steps} steps): ticket {verdict.ticket_id} {verdict.held_out_rate:.3f} vs base {verdict.base_rate:.3f} "
        f"(delta {verdict.delta:+.3f}, CI sum {verdict.ticket_ci + verdict.base_ci:.3f}) -> {word}"
    )
    if args.require_golden and not verdict.is_golden:
        return EXIT_NOT_GOLDEN
    return EXIT_OK


def pareto_csv(reports) -> str:
    front = {id(r) for r in ts.pareto(reports)}
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(PARETO_COLUMNS)
    for r in reports:
        w.writerow([r.ticket_id, fmt(r.success_rate), fmt(r.mean_success_len), int(id(r) in front)])
    return buf.getvalue()


def cmd_pareto(cfg: RunConfig | None, run: Path, args) -> int:
    src = Path(args.reports) if args.reports else require(run / search_name(args.steps), "search")
    if not src.is_file():
        raise ArtifactError(f"missing report CSV {src}")
    reports = load_reports(src)
    if not reports:
        raise ArtifactError(f"{src}: no reports")
    text = pareto_csv(reports)
    atomic_write(run / pareto_name(args.steps), text)
    n_front = sum(line.endswith(",1") for line in text.splitlines())
    print(f"pareto: {n_front} of {len(reports)} tickets on the frontier")
    return EXIT_OK


def cmd_cross_task(cfg: RunConfig, run: Path, args) -> int:
    spec = cfg.env_spec()
    if spec.task != "multi-goal":
        raise ConfigError("cross-task needs a multi-goal task config")
    model = load_model(run, cfg)
    pc = cfg.policy_config(args.steps)
    chosen, search_rows = [], []
    for k in range(spec.n_tasks):
        search_seeds = cfg.cross_search_seeds(k)
        ts.check_disjoint(cfg.cross_eval_seeds(k), search_seeds)
        sc = ts.SearchConfig(cfg.cross_task.n_tickets, search_seeds, cfg.ticket_seed)
        result = ts.search(model, pc, spec.for_task(k), sc, jobs=args.jobs)
        chosen.append((result.best, k))
        b = result.best_report
        search_rows.append({"task": k, "ticket": result.best.to_json(), "search_success_rate": b.success_rate})
        print(f"cross-task: task {k} top-1 ticket {b.ticket_id} ({b.success_rate:.3f} on {b.n} search envs)")
    matrix = ts.cross_task_matrix(
        model,
        pc,
        spec,
        chosen,
        [cfg.cross_eval_seeds(k) for k in range(spec.n_tasks)],
        base_seed=cfg.base_noise_seed,
        jobs=args.jobs,
    )
    atomic_write(run / cross_name(args.steps), matrix.to_csv())
    beating = matrix.tickets_beating_base(2)
    write_json(run / cross_tickets_name(args.steps), {"tickets": search_rows, "beat_base_on_2_plus_tasks": beating})
    print(f"cross-task: {len(beating)} ticket(s) beat base on >= 2 tasks: {', '.join(beating) or 'none'}")
    return EXIT_OK


def cmd_budget(cfg: RunConfig, run: Path, args) -> int:
    model = load_model(run, cfg)
    points = ts.budget_tradeoff(
        model,
        cfg.policy_config(args.steps),
        cfg.env_spec(),
        cfg.budget.budget,
        list(cfg.budget.splits),
        cfg.ticket_seed,
        cfg.budget_seed_pool(),
        cfg.held_out_seeds(),
        jobs=args.jobs,
    )
    rows = [[p.n_tickets, p.n_envs, p.best_id, fmt(p.search_rate), fmt(p.held_out_rate), fmt(p.gap)] for p in points]
    write_csv(run / budget_name(args.steps), ["n_tickets", "n_envs", "best_id", "search_rate", "held_out_rate", "gap"], rows)
    for p in points:
        print(f"budget: n={p.n_tickets:4d} |E|={p.n_envs:4d} search {p.search_rate:.3f} held-out {p.held_out_rate:.3f} gap {p.gap:+.3f}")
    return EXIT_OK


def report_inputs(cfg: RunConfig, run: Path) -> dict[str, Path]:
    s = cfg.policy.num_steps
    need = {
        "verdict": run / verdict_name(s),
        "pareto": run / pareto_name(s),
        "budget": run / budget_name(s),
    }
    for steps in STEP_CHOICES:
        need[f"verdict_s{steps}"] = run / verdict_name(steps)
    return need


def cmd_report(cfg: RunConfig, run: Path, args) -> int:
    need = report_inputs(cfg, run)
    missing = sorted({str(p) for p in need.values() if not p.is_file()})
    if missing:
        raise ArtifactError("cannot build report; missing artifacts:\n  " + "\n  ".join(missing))
    out = run / REPORT_DIR

    def verdict(path):
        try:
            return json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ArtifactError(f"{path}: corrupt verdict ({exc})") from exc

    v = verdict(need["verdict"])
    write_csv(
        out / "success_bars.csv",
        ["policy", "ticket_id", "steps", "success_rate", "ci", "n_episodes"],
        [
            ["base", "", v["steps"], fmt(v["base_rate"]), fmt(v["base_ci"]), v["n_base"]],
            ["ticket", v["ticket_id"], v["steps"], fmt(v["held_out_rate"]), fmt(v["ticket_ci"]), v["n_held_out"]],
        ],
    )
    # the scatter is the pareto command's output verbatim, so the frontier flags cannot drift
    atomic_write(out / "pareto_scatter.csv", need["pareto"].read_bytes())
    rows = []
    for steps in STEP_CHOICES:
        vs = verdict(need[f"verdict_s{steps}"])
        rows.append([steps, fmt(vs["base_rate"]), fmt(vs["base_ci"]), vs["ticket_id"], fmt(vs["held_out_rate"]), fmt(vs["ticket_ci"]), fmt(vs["delta"]), int(vs["is_golden"])])
    write_csv(out / "step_ablation.csv", ["steps", "base_rate", "base_ci", "ticket_id", "ticket_rate", "ticket_ci", "delta", "is_golden"], rows)
    atomic_write(out / "budget_tradeoff.csv", need["budget"].read_bytes())
    d2, d8 = (float(r[6]) for r in rows)
    bigger = "2" if d2 > d8 else "8" if d8 > d2 else "neither"
    print(f"report: wrote {out}; ticket gain {d2:+.3f} at 2 steps, {d8:+.3f} at 8 steps (larger at: {bigger})")
    return EXIT_OK


COMMANDS = {
    "gen-data": cmd_gen_data,
    "train": cmd_train,
    "eval-base": cmd_eval_base,
    "search": cmd_search,
    "verify": cmd_verify,
    "pareto": cmd_pareto,
    "cross-task": cmd_cross_task,
    "budget": cmd_budget,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="golden-ticket", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        sp = sub.add_parser(name)
        sp.add_argument("--config", help="run config JSON (optional for `pareto --reports`)")
        sp.add_argument("--out", help="run directory (default: the config's output_dir)")
        sp.add_argument("--jobs", type=int, default=1, help="parallel evaluation workers")
        sp.add_argument("--steps", type=int, choices=STEP_CHOICES, default=None, help="flow sampler steps")
        if name == "verify":
            sp.add_argument("--require-golden", action="store_true", help="exit 3 unless the ticket is golden")
            sp.add_argument("--ticket", help="ticket JSON (default: this run's best ticket)")
        if name == "pareto":
            sp.add_argument("--reports", help="report CSV (default: this run's search reports)")
    return p


def setup_logging() -> None:
    level = os.environ.get("GT_LOG", "WARNING").upper()
    logging.basicConfig(level=getattr(logging, level, logging.WARNING), format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)


def main(argv=None) -> int:
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        if args.jobs < 1:
            raise ConfigError("--jobs must be >= 1")
        if args.config:
            cfg = RunConfig.load(args.config)
        elif args.command == "pareto" and args.reports:
            cfg = None
        else:
            raise ConfigError("--config is required")
        if args.steps is None:
            args.steps = cfg.policy.num_steps if cfg else 8
        run = Path(args.out) if args.out else Path(cfg.output_dir if cfg else ".")
        return COMMANDS[args.command](cfg, run, args)
    except (ConfigError, ArtifactError, ts.SeedOverlapError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except envs.EnvError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
