"""Regenerate the committed Pareto fixture: 400 ticket reports and their frontier.

The frontier file is produced by an O(n^2) pairwise scan that shares no
code with the library's sweep, so the CLI test compares two independent
computations. Usage: python scripts/make_pareto_fixture.py [out_dir]
"""

import csv
import math
import sys
from pathlib import Path

import numpy as np

from golden_ticket.search import TicketReport, binomial_ci, reports_to_csv

N_TICKETS, N_ENVS, SEED = 400, 50, 20240


def synth_reports(rng) -> list[TicketReport]:
    out = []
    for i in range(N_TICKETS):
        p = rng.beta(2.0, 1.5)
        ok = rng.random(N_ENVS) < p
        # lengths land on a coarse grid so that rate/length ties actually occur
        lengths = rng.integers(6, 14, N_ENVS)
        rate = ok.sum() / N_ENVS
        mean_len = float(lengths[ok].mean()) if ok.any() else None
        out.append(
            TicketReport(
                ticket_id=f"{i:08x}",
                mean_return=float(rate),
                success_rate=float(rate),
                mean_success_len=mean_len,
                returns=[float(v) for v in ok],
                ci=binomial_ci(float(rate), N_ENVS),
            )
        )
    return out


def brute_force_flags(reports) -> list[int]:
    def key_len(r):
        return math.inf if r.mean_success_len is None else r.mean_success_len

    flags = []
    for r in reports:
        beaten = False
        for o in reports:
            no_worse = o.success_rate >= r.success_rate and key_len(o) <= key_len(r)
            better = o.success_rate > r.success_rate or key_len(o) < key_len(r)
            if no_worse and better:
                beaten = True
                break
        flags.append(0 if beaten else 1)
    return flags


def fmt(x) -> str:
    return "" if x is None else repr(float(x))


def main(out_dir="tests/fixtures") -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    reports = synth_reports(np.random.default_rng(SEED))
    # swap five tail rows for duplicates so the fixture always contains exact ties
    for k in range(5):
        src = reports[k * 37]
        reports[-1 - k] = TicketReport(f"dup{k:05d}", src.mean_return, src.success_rate, src.mean_success_len, list(src.returns), src.ci)
    (out / "pareto_reports_400.csv").write_text(reports_to_csv(reports))
    with open(out / "pareto_oracle_400.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["ticket_id", "success_rate", "mean_success_len", "on_frontier"])
        for r, flag in zip(reports, brute_force_flags(reports)):
            w.writerow([r.ticket_id, fmt(r.success_rate), fmt(r.mean_success_len), flag])
    print(f"wrote {len(reports)} reports, {sum(brute_force_flags(reports))} on the frontier")


if __name__ == "__main__":
    main(*sys.argv[1:])
