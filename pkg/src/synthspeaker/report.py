"""Render run directories into markdown and CSV reports.

Three views per replication: the transfer matrix (rows = synthetic corpus
sizes, column groups per generator, with the shared no-transfer row at size
0), a best-model comparison sorted by accuracy, and a cross-subject average
table. Numbers are formatted once and averages are computed from the
formatted values, so the two output formats agree digit for digit and an
average can be recomputed from the rows it summarizes.
"""
from __future__ import annotations

import json
from pathlib import Path

METRIC_KEYS = ("accuracy", "f1", "precision", "recall")


def fmt(x: float) -> str:
    return f"{float(x):.12g}"


def collect_rows(runs_dir: Path) -> list[dict]:
    """Load every cell status under a run directory, stably ordered."""
    rows = []
    for status_path in sorted(Path(runs_dir).rglob("status.json")):
        with open(status_path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
        payload["path"] = str(status_path.parent.relative_to(runs_dir))
        rows.append(payload)
    rows.sort(key=lambda r: (r.get("subject") or "", r.get("seed") or 0,
                             r.get("kind") or "", str(r.get("generator")),
                             r.get("size") if r.get("size") is not None else -1,
                             str(r.get("variant"))))
    return rows


def _metric_strings(row: dict) -> dict[str, str]:
    return {k: fmt(row["metrics"][k]) for k in METRIC_KEYS}


def _mean_of_formatted(values: list[str]) -> str:
    parsed = [float(v) for v in values]
    return fmt(sum(parsed) / len(parsed))


def _matrix_lines(subject, seed, rows, generators, sizes, md: list[str],
                  csv: list[str]) -> None:
    by_cell = {}
    baseline = None
    for r in rows:
        if r["kind"] == "baseline" and r["ok"]:
            baseline = r
        elif r["kind"] == "transfer" and r["ok"]:
            by_cell[(r["generator"], r["size"])] = r

    base_acc = float(fmt(baseline["metrics"]["accuracy"])) if baseline else None
    best_acc = None
    accs = []
    if baseline:
        accs.append(float(fmt(baseline["metrics"]["accuracy"])))
    accs += [float(fmt(r["metrics"]["accuracy"])) for r in by_cell.values()]
    if accs:
        best_acc = max(accs)

    md.append(f"### {subject} seed {seed}: transfer matrix")
    md.append("")
    header = ["synthetic rows"]
    for g in generators:
        header += [f"{g} {k}" for k in METRIC_KEYS]
    md.append("| " + " | ".join(header) + " |")
    md.append("|" + "---|" * len(header))

    def flags(acc_str: str) -> str:
        marks = ""
        acc = float(acc_str)
        if best_acc is not None and acc == best_acc:
            marks += " (best)"
        if base_acc is not None and acc < base_acc:
            marks += " (below baseline)"
        return marks

    for size in sizes:
        cells = [str(size)]
        for g in generators:
            row = baseline if size == 0 else by_cell.get((g, size))
            if row is None:
                cells += ["-"] * len(METRIC_KEYS)
                continue
            strings = _metric_strings(row)
            cells.append(strings["accuracy"] + flags(strings["accuracy"]))
            cells += [strings[k] for k in METRIC_KEYS[1:]]
            csv.append(",".join([
                "matrix", subject, str(seed), g, str(size),
                strings["accuracy"], strings["f1"], strings["precision"],
                strings["recall"],
                "1" if best_acc is not None
                and float(strings["accuracy"]) == best_acc else "0",
                "1" if base_acc is not None
                and float(strings["accuracy"]) < base_acc else "0",
            ]))
        md.append("| " + " | ".join(cells) + " |")
    md.append("")


def _comparison_entries(rows) -> list[tuple[str, dict[str, str]]]:
    """Best transfer cell per generator, the control, and the classical models."""
    entries = []
    best_by_gen: dict[str, dict] = {}
    for r in rows:
        if not r["ok"]:
            continue
        if r["kind"] == "transfer":
            g = r["generator"]
            cur = best_by_gen.get(g)
            if cur is None or r["metrics"]["accuracy"] > cur["metrics"]["accuracy"]:
                best_by_gen[g] = r
        elif r["kind"] == "baseline":
            entries.append(("dnn no-transfer", _metric_strings(r)))
        elif r["kind"] == "classical":
            entries.append((r["variant"], _metric_strings(r)))
    for g in sorted(best_by_gen):
        r = best_by_gen[g]
        entries.append((f"dnn transfer {g} (rows={r['size']})", _metric_strings(r)))
    entries.sort(key=lambda e: (-float(e[1]["accuracy"]), e[0]))
    return entries


def _comparison_lines(subject, seed, rows, md: list[str], csv: list[str]) -> None:
    entries = _comparison_entries(rows)
    if not entries:
        return
    md.append(f"### {subject} seed {seed}: model comparison")
    md.append("")
    md.append("| model | accuracy | f1 | precision | recall |")
    md.append("|---|---|---|---|---|")
    acc_counts: dict[str, int] = {}
    for _, strings in entries:
        acc_counts[strings["accuracy"]] = acc_counts.get(strings["accuracy"], 0) + 1
    for name, strings in entries:
        tie = acc_counts[strings["accuracy"]] > 1
        shown = strings["accuracy"] + (" (=)" if tie else "")
        md.append(f"| {name} | {shown} | {strings['f1']} | "
                  f"{strings['precision']} | {strings['recall']} |")
        csv.append(",".join([
            "comparison", subject, str(seed), name.replace(",", ";"),
            "", strings["accuracy"], strings["f1"], strings["precision"],
            strings["recall"], "", "1" if tie else "0",
        ]))
    md.append("")


def _average_lines(all_rows, md: list[str], csv: list[str]) -> None:
    """Cross-subject averages of the comparison entries, per seed."""
    seeds = sorted({r["seed"] for r in all_rows})
    for seed in seeds:
        per_subject: dict[str, list[tuple[str, dict[str, str]]]] = {}
        for subject in sorted({r["subject"] for r in all_rows}):
            rows = [r for r in all_rows
                    if r["subject"] == subject and r["seed"] == seed]
            for name, strings in _comparison_entries(rows):
                family = name.split(" (rows=")[0]
                per_subject.setdefault(family, []).append(strings)
        if not per_subject:
            continue
        md.append(f"### seed {seed}: averages across subjects")
        md.append("")
        md.append("| model | accuracy | f1 | precision | recall |")
        md.append("|---|---|---|---|---|")
        families = sorted(
            per_subject,
            key=lambda f: -sum(float(s["accuracy"]) for s in per_subject[f])
            / len(per_subject[f]),
        )
        for family in families:
            strings = per_subject[family]
            means = {k: _mean_of_formatted([s[k] for s in strings])
                     for k in METRIC_KEYS}
            md.append(f"| {family} | {means['accuracy']} | {means['f1']} | "
                      f"{means['precision']} | {means['recall']} |")
            csv.append(",".join([
                "average", "", str(seed), family.replace(",", ";"), "",
                means["accuracy"], means["f1"], means["precision"],
                means["recall"], "", "",
            ]))
        md.append("")


def render_reports(runs_dir: Path) -> tuple[str, str]:
    """Build (markdown, csv) report text for a run directory."""
    rows = collect_rows(runs_dir)
    md: list[str] = ["# Experiment report", ""]
    csv: list[str] = [
        "table,subject,seed,model_or_generator,size,"
        "accuracy,f1,precision,recall,best,flag"
    ]
    subjects = sorted({r["subject"] for r in rows})
    for subject in subjects:
        for seed in sorted({r["seed"] for r in rows if r["subject"] == subject}):
            cell_rows = [r for r in rows
                         if r["subject"] == subject and r["seed"] == seed]
            generators = sorted({r["generator"] for r in cell_rows
                                 if r["kind"] == "transfer"})
            if not generators:
                generators = ["lstm", "gpt"]
            sizes = sorted({r["size"] for r in cell_rows
                            if r["kind"] == "transfer" and r["size"] is not None})
            _matrix_lines(subject, seed, cell_rows, generators, [0] + sizes,
                          md, csv)
            _comparison_lines(subject, seed, cell_rows, md, csv)
    _average_lines(rows, md, csv)

    failures = [r for r in rows if not r["ok"]]
    if failures:
        md.append("### failures")
        md.append("")
        for r in failures:
            md.append(f"- `{r['path']}`: {r.get('error', 'unknown error')}")
        md.append("")
    return "\n".join(md) + "\n", "\n".join(csv) + "\n"


def write_reports(runs_dir: Path) -> tuple[Path, Path]:
    runs_dir = Path(runs_dir)
    md_text, csv_text = render_reports(runs_dir)
    md_path = runs_dir / "report.md"
    csv_path = runs_dir / "report.csv"
    md_path.write_text(md_text)
    csv_path.write_text(csv_text)
    return md_path, csv_path
