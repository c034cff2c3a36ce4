"""Accuracy metrics and Table-style reports (one row per attribute)."""
from __future__ import annotations

import csv
import io
from collections.abc import Mapping, Sequence
from dataclasses import dataclass, field
from pathlib import Path


def evaluate(predictions: Mapping[str, int], truth: Mapping[str, int]) -> tuple[float, float]:
    """Plain accuracy and class-balanced accuracy, both in percent."""
    if set(predictions) != set(truth):
        missing = sorted(set(truth) - set(predictions))[:5]
        extra = sorted(set(predictions) - set(truth))[:5]
        raise ValueError(f"prediction/truth ids differ (missing {missing}, extra {extra})")
    if not truth:
        raise ValueError("nothing to evaluate")
    correct = {0: 0, 1: 0}
    total = {0: 0, 1: 0}
    for sid, t in truth.items():
        if t not in (0, 1):
            raise ValueError(f"truth label for {sid!r} must be 0 or 1")
        total[t] += 1
        correct[t] += int(predictions[sid] == t)
    acc = 100.0 * (correct[0] + correct[1]) / (total[0] + total[1])
    recalls = [correct[c] / total[c] for c in (0, 1) if total[c]]
    return acc, 100.0 * sum(recalls) / len(recalls)


def column_name(regime: str, scheme: str) -> str:
    return f"{regime}/{scheme}"


@dataclass
class EvalReport:
    attributes: list[str]
    columns: list[tuple[str, str]]  # (regime, scheme)
    accuracy: dict[tuple[str, tuple[str, str]], float] = field(default_factory=dict)
    balanced: dict[tuple[str, tuple[str, str]], float] = field(default_factory=dict)
    metadata: dict[str, str] = field(default_factory=dict)
    skipped: dict[str, str] = field(default_factory=dict)

    def add(self, attr: str, col: tuple[str, str], acc: float, bal: float) -> None:
        self.accuracy[(attr, col)] = acc
        self.balanced[(attr, col)] = bal

    def average(self, col: tuple[str, str], balanced: bool = False) -> float:
        table = self.balanced if balanced else self.accuracy
        vals = [table[(a, col)] for a in self.attributes]
        return sum(vals) / len(vals)

    def mean_accuracy(self, regime: str, scheme: str) -> float:
        return self.average((regime, scheme))

    def to_csv(self, balanced: bool = False) -> str:
        table = self.balanced if balanced else self.accuracy
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["attribute"] + [column_name(*c) for c in self.columns])
        for a in self.attributes:
            w.writerow([a] + [f"{table[(a, c)]:.8f}" for c in self.columns])
        w.writerow(["AVERAGE"] + [f"{self.average(c, balanced):.8f}" for c in self.columns])
        return buf.getvalue()

    def to_text(self, balanced: bool = False) -> str:
        table = self.balanced if balanced else self.accuracy
        regimes = list(dict.fromkeys(r for r, _ in self.columns))
        schemes = {r: [s for rr, s in self.columns if rr == r] for r in regimes}
        name_w = max([len("Attribute"), len("AVERAGE")] + [len(a) for a in self.attributes])
        cell_w = max(6, max(len(s) for s in (x for _, x in self.columns)))

        def group(r, values):
            return " ".join(f"{v:>{cell_w}}" for v in values)

        lines = [f"# {k}: {v}" for k, v in sorted(self.metadata.items())]
        metric = "balanced accuracy" if balanced else "accuracy"
        lines.append(f"# metric: {metric} (%)")
        head = [f"{'Attribute':<{name_w}}"] + [
            f"{r.upper():<{(cell_w + 1) * len(schemes[r]) - 1}}" for r in regimes]
        lines.append(" | ".join(head))
        sub = [" " * name_w] + [group(r, schemes[r]) for r in regimes]
        lines.append(" | ".join(sub))
        lines.append("-" * len(lines[-1]))
        for a in self.attributes + ["AVERAGE"]:
            row = [f"{a:<{name_w}}"]
            for r in regimes:
                vals = []
                for s in schemes[r]:
                    v = self.average((r, s), balanced) if a == "AVERAGE" else table[(a, (r, s))]
                    vals.append(f"{v:.1f}")
                row.append(group(r, vals))
            if a == "AVERAGE":
                lines.append("-" * len(lines[-1]))
            lines.append(" | ".join(row))
        for a, why in sorted(self.skipped.items()):
            lines.append(f"# skipped {a}: {why}")
        return "\n".join(lines) + "\n"

    def write(self, out_dir) -> list[Path]:
        out = Path(out_dir)
        out.mkdir(parents=True, exist_ok=True)
        files = {
            "report.txt": self.to_text(),
            "accuracy.csv": self.to_csv(),
            "balanced_accuracy.csv": self.to_csv(balanced=True),
            "balanced_report.txt": self.to_text(balanced=True),
        }
        paths = []
        for name, text in files.items():
            p = out / name
            p.write_text(text, encoding="utf-8")
            paths.append(p)
        return paths


def read_csv_report(path) -> tuple[list[str], dict[str, list[float]]]:
    """Parse an accuracy CSV back into (column names, {row name: values})."""
    with open(path, newline="", encoding="utf-8") as fh:
        rows = list(csv.reader(fh))
    header = rows[0][1:]
    return header, {r[0]: [float(x) for x in r[1:]] for r in rows[1:]}


def write_predictions(path, rows: Sequence[tuple[str, str, str, str, int]]) -> None:
    """TSV of (attribute, regime, scheme, id, label)."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("#attribute\tregime\tscheme\tid\tlabel\n")
        for r in rows:
            fh.write("\t".join(str(x) for x in r) + "\n")


def read_predictions(path) -> dict[tuple[str, str, str], dict[str, int]]:
    out: dict[tuple[str, str, str], dict[str, int]] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip() or line.startswith("#"):
                continue
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 5:
                raise ValueError(f"{path}:{lineno}: expected 5 fields")
            attr, regime, scheme, sid, lab = parts
            out.setdefault((attr, regime, scheme), {})[sid] = int(lab)
    return out
