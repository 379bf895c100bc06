"""Command-line surface: single-file analysis, CFG dumps, corpus build and
the batch benchmark harness (metrics, timing CSV, timing figure).

Exit codes: 0 all findings Safe, 1 any Vulnerable or Inconclusive finding,
2 unreadable or malformed input.
"""

import csv
import json
import multiprocessing
import sys
from pathlib import Path

import click

from . import __version__, corpus
from .cfg import build_cfg, cfg_to_dot
from .detectors import (
    DETECTORS,
    FAKE_NOTICE,
    FAKE_TRANSFER,
    SAFE,
    Whitelist,
    WhitelistError,
)
from .errors import EvulHunterError
from .loader import find_export, parse_module
from .report import MetricsSummary, analyze

_DETECTOR_FLAG = {
    "fake-transfer": (FAKE_TRANSFER,),
    "fake-notice": (FAKE_NOTICE,),
    "all": DETECTORS,
}
_FLAG_OF = {FAKE_TRANSFER: "fake-transfer", FAKE_NOTICE: "fake-notice"}


@click.group()
@click.version_option(__version__)
def main():
    """Detect fake-transfer vulnerabilities in EOSIO WASM contracts."""


def _load_whitelist(path):
    if path is None:
        return Whitelist()
    try:
        return Whitelist.from_file(path)
    except WhitelistError as exc:
        raise click.ClickException(str(exc))


def _render_text(report):
    lines = [f"{report.input} ({report.bytes} bytes, {report.duration_ms:.1f} ms)"]
    for f in report.findings:
        flag = " [degraded]" if f.degraded else ""
        reason = f" ({f.reason})" if f.reason else ""
        lines.append(f"  {f.detector}: {f.verdict}{flag}{reason}")
        for e in f.evidence:
            lines.append(f"    fn {e.function} @ {e.offset:#x}: {e.message}")
    for err in report.errors:
        lines.append(f"  error: {err}")
    return "\n".join(lines)


@main.command("analyze")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.option("--detector", type=click.Choice(sorted(_DETECTOR_FLAG)), default="all",
              show_default=True)
@click.option("--whitelist", "whitelist_path", type=click.Path(exists=True),
              help="Extra legal token accounts, one name per line.")
@click.option("--format", "fmt", type=click.Choice(["text", "json"]), default="text",
              show_default=True)
@click.option("--dump-cfg", "dump_fn", metavar="FN",
              help="Print the DOT CFG of a function (index or export name) and exit.")
def cmd_analyze(path, detector, whitelist_path, fmt, dump_fn):
    """Analyze one .wasm contract."""
    data = Path(path).read_bytes()
    if dump_fn is not None:
        click.echo(_dot_for(data, dump_fn))
        return
    wl = _load_whitelist(whitelist_path)
    report = analyze(data, wl, _DETECTOR_FLAG[detector], input_name=path)
    click.echo(report.to_json() if fmt == "json" else _render_text(report))
    if report.errors:
        sys.exit(2)
    sys.exit(0 if report.worst_verdict == SAFE else 1)


def _dot_for(data, fn):
    try:
        module = parse_module(data)
    except EvulHunterError as exc:
        click.echo(f"error: {exc}", err=True)
        sys.exit(2)
    fidx = find_export(module, fn)
    if fidx is None:
        try:
            fidx = int(fn)
        except ValueError:
            fidx = None
    if fidx is None or fidx >= module.num_funcs or module.is_import(fidx):
        click.echo(f"error: no such defined function {fn!r}", err=True)
        sys.exit(2)
    body = module.body_of(fidx)
    return cfg_to_dot(build_cfg(body), body, title=f"f{fidx}")


@main.command("dump-cfg")
@click.argument("path", type=click.Path(exists=True, dir_okay=False))
@click.argument("function")
def cmd_dump_cfg(path, function):
    """Print a function's control-flow graph as GraphViz DOT."""
    click.echo(_dot_for(Path(path).read_bytes(), function))


def _analyze_one(args):
    path, wl_accounts = args
    data = Path(path).read_bytes()
    wl = Whitelist(wl_accounts)
    return analyze(data, wl, DETECTORS, input_name=str(path))


@main.command("batch")
@click.argument("directory", type=click.Path(exists=True, file_okay=False))
@click.option("--labels", "labels_path", type=click.Path(exists=True), required=True,
              help="CSV with header file,detector,label.")
@click.option("--metrics", "metrics_path", type=click.Path(), help="Metrics JSON output.")
@click.option("--timing", "timing_path", type=click.Path(), help="Timing CSV output.")
@click.option("--plot", "plot_path", type=click.Path(),
              help="Render a size-vs-time figure (PNG) of the run.")
@click.option("--reports", "reports_dir", type=click.Path(),
              help="Write one JSON report per analyzed file into this directory.")
@click.option("--jobs", type=int, default=None,
              help="Worker processes [default: CPU count].")
@click.option("--whitelist", "whitelist_path", type=click.Path(exists=True))
def cmd_batch(directory, labels_path, metrics_path, timing_path, plot_path,
              reports_dir, jobs, whitelist_path):
    """Analyze every *.wasm under DIRECTORY and score against labels."""
    root = Path(directory)
    files = sorted(root.rglob("*.wasm"))
    if not files:
        raise click.ClickException(f"no .wasm files under {directory}")
    wl = _load_whitelist(whitelist_path)

    labels = {}
    with open(labels_path, newline="") as fh:
        for row in csv.DictReader(fh):
            if row["label"] not in ("vulnerable", "safe"):
                raise click.ClickException(
                    f"bad label {row['label']!r} for {row['file']}")
            labels[(row["file"], row["detector"])] = row["label"]

    jobs = jobs or multiprocessing.cpu_count()
    work = [(str(p), frozenset(wl.accounts)) for p in files]
    if jobs > 1 and len(files) > 1:
        with multiprocessing.Pool(jobs) as pool:
            reports = pool.map(_analyze_one, work)
    else:
        reports = [_analyze_one(w) for w in work]
    reports.sort(key=lambda r: r.input)

    summary = MetricsSummary()
    timing_rows = []
    error_rows = []
    for report in reports:
        rel = str(Path(report.input).relative_to(root))
        timing_rows.append((rel, report.bytes, report.duration_ms))
        if report.errors:
            error_rows.append((rel, "; ".join(report.errors)))
            continue
        for finding in report.findings:
            key = (rel, _FLAG_OF[finding.detector])
            if key in labels:
                summary.score(finding.detector, finding.verdict, labels[key])
            else:
                summary.unlabeled.append(f"{rel}:{_FLAG_OF[finding.detector]}")

    if reports_dir:
        out = Path(reports_dir)
        out.mkdir(parents=True, exist_ok=True)
        for report in reports:
            rel = Path(report.input).relative_to(root)
            dest = out / rel.with_suffix(".json")
            dest.parent.mkdir(parents=True, exist_ok=True)
            dest.write_text(report.to_json())
    if timing_path:
        with open(timing_path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["file", "bytes", "milliseconds"])
            writer.writerows(timing_rows)
    if plot_path:
        from .plotting import plot_timing
        plot_timing(timing_rows, plot_path)
    if metrics_path:
        Path(metrics_path).write_text(json.dumps(summary.to_dict(), indent=2))

    _print_metrics(summary, error_rows)


def _print_metrics(summary, error_rows):
    def pct(v):
        return "n/a" if v is None else f"{100 * v:.2f}%"

    click.echo(f"{'detector':<20} {'tp':>4} {'fp':>4} {'tn':>4} {'fn':>4} "
               f"{'precision':>10} {'recall':>8} {'accuracy':>9}")
    rows = list(sorted(summary.per_detector.items())) + [("total", summary.total)]
    for label, r in rows:
        click.echo(f"{label:<20} {r.tp:>4} {r.fp:>4} {r.tn:>4} {r.fn:>4} "
                   f"{pct(r.precision):>10} {pct(r.recall):>8} {pct(r.accuracy):>9}")
    if summary.unlabeled:
        click.echo(f"unlabeled: {len(summary.unlabeled)} verdicts excluded from metrics")
    for rel, err in error_rows:
        click.echo(f"error: {rel}: {err}")


@main.command("corpus")
@click.argument("directory", type=click.Path(file_okay=False))
@click.option("--no-assemble", is_flag=True, help="Write .wat sources only.")
def cmd_corpus(directory, no_assemble):
    """Generate the synthetic fixture corpus under DIRECTORY."""
    specs = corpus.build_corpus(directory, do_assemble=not no_assemble)
    click.echo(f"wrote {len(specs)} fixtures to {directory}")


if __name__ == "__main__":
    main()
