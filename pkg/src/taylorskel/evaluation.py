"""Top-k accuracy, confusion matrices and per-class gain/loss tables."""

import csv
import io
import json
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from importlib import resources

import numpy as np

from . import ntu


@dataclass
class EvalReport:
    num_classes: int
    top1: float
    top5: float
    per_class_acc: np.ndarray  # percent, NaN for classes without samples
    confusion: np.ndarray  # rows = true class, columns = predicted; None if unknown
    sample_count: int
    tag: str = ""
    class_names: list = None

    def to_dict(self):
        def num(v):
            return None if v is None or not np.isfinite(v) else float(v)

        return {
            "tag": self.tag,
            "num_classes": self.num_classes,
            "sample_count": self.sample_count,
            "top1": num(self.top1),
            "top5": num(self.top5),
            "per_class_acc": [num(v) for v in self.per_class_acc],
            "confusion": None if self.confusion is None else self.confusion.astype(int).tolist(),
            "class_names": self.class_names,
        }

    @classmethod
    def from_dict(cls, doc):
        nan = float("nan")

        def val(v):
            return nan if v is None else float(v)

        confusion = doc.get("confusion")
        return cls(
            num_classes=doc["num_classes"],
            top1=val(doc.get("top1")),
            top5=val(doc.get("top5")),
            per_class_acc=np.array([val(v) for v in doc["per_class_acc"]]),
            confusion=None if confusion is None else np.array(confusion, dtype=np.int64),
            sample_count=doc.get("sample_count", 0),
            tag=doc.get("tag", ""),
            class_names=doc.get("class_names"),
        )

    @classmethod
    def from_per_class(cls, per_class_acc, tag="", class_names=None):
        """A report known only through per-class accuracies."""
        acc = np.asarray(per_class_acc, dtype=np.float64)
        nan = float("nan")
        return cls(len(acc), nan, nan, acc, None, 0, tag, class_names)

    def save(self, path_json, path_csv=None):
        with open(path_json, "w") as fh:
            json.dump(self.to_dict(), fh, indent=1)
        if path_csv and self.confusion is not None:
            np.savetxt(path_csv, self.confusion, fmt="%d", delimiter=",")

    @classmethod
    def load(cls, path):
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def true_label_ranks(logits, labels):
    """0-based rank of each true label; ties go to the lower class index."""
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels)
    true = logits[np.arange(len(labels)), labels][:, None]
    cls = np.arange(logits.shape[1])[None, :]
    above = (logits > true) | ((logits == true) & (cls < labels[:, None]))
    return above.sum(axis=1)


def _counts(logits, labels, num_classes):
    ranks = true_label_ranks(logits, labels)
    pred = logits.argmax(axis=1)
    conf = np.zeros((num_classes, num_classes), dtype=np.int64)
    np.add.at(conf, (labels, pred), 1)
    return conf, int((ranks < 5).sum())


def evaluate(logits, labels, num_classes=None, tag="", class_names=None, shards=1):
    """Top-1/top-5 (percent), per-class accuracy and confusion matrix.

    ``shards > 1`` splits samples across threads and merges the counts.
    """
    logits = np.asarray(logits, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    if logits.ndim != 2 or labels.shape != (logits.shape[0],):
        raise ValueError(f"logits {logits.shape} and labels {labels.shape} do not match")
    n = len(labels)
    if n < 1:
        raise ValueError("need at least one sample")
    k = logits.shape[1] if num_classes is None else num_classes
    if logits.shape[1] != k:
        raise ValueError(f"logits have {logits.shape[1]} columns, expected {k} classes")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError("labels outside [0, num_classes)")

    chunks = np.array_split(np.arange(n), max(1, min(shards, n)))
    if len(chunks) == 1:
        parts = [_counts(logits, labels, k)]
    else:
        with ThreadPoolExecutor(len(chunks)) as pool:
            parts = list(pool.map(lambda c: _counts(logits[c], labels[c], k), chunks))
    conf = sum(p[0] for p in parts)
    top5_hits = sum(p[1] for p in parts)

    rows = conf.sum(axis=1)
    with np.errstate(invalid="ignore", divide="ignore"):
        per_class = np.where(rows > 0, 100.0 * np.diag(conf) / rows, np.nan)
    return EvalReport(
        num_classes=k,
        top1=100.0 * np.trace(conf) / n,
        top5=100.0 * top5_hits / n,
        per_class_acc=per_class,
        confusion=conf,
        sample_count=n,
        tag=tag,
        class_names=class_names,
    )


def filter_confusion(report, threshold_percent=5.0):
    """Row-normalize to percents and zero entries strictly below the threshold."""
    if not 0 <= threshold_percent <= 100:
        raise ValueError("threshold must lie in [0, 100]")
    conf = report.confusion if isinstance(report, EvalReport) else report
    conf = np.asarray(conf, dtype=np.float64)
    rows = conf.sum(axis=1, keepdims=True)
    pct = np.divide(conf * 100.0, rows, out=np.zeros_like(conf), where=rows > 0)
    pct[pct < threshold_percent] = 0.0
    return pct


# ------------------------------------------------------------------ delta tables


@dataclass(frozen=True)
class DeltaRow:
    index: int
    name: str
    acc_a: float
    acc_b: float
    delta: float


@dataclass
class DeltaTable:
    rows: list  # every class with both accuracies, by descending delta
    top_k_gains: list
    top_k_losses: list
    tag_a: str = ""
    tag_b: str = ""
    k: int = 10

    def format(self):
        out = io.StringIO()
        head = f"{self.tag_a or 'a'} -> {self.tag_b or 'b'}"
        for title, rows in (("gains", self.top_k_gains), ("losses", self.top_k_losses)):
            out.write(f"Top {self.k} {title} ({head})\n")
            width = max([len(r.name) for r in rows] + [5])
            for r in rows:
                out.write(f"  {r.name:<{width}}  {r.acc_a:6.1f}  {r.acc_b:6.1f}  {r.delta:+6.1f}\n")
        return out.getvalue()

    def to_csv(self):
        out = io.StringIO()
        w = csv.writer(out)
        w.writerow(["section", "rank", "class_index", "class_name", "acc_a", "acc_b", "delta"])
        for title, rows in (("gain", self.top_k_gains), ("loss", self.top_k_losses)):
            for rank, r in enumerate(rows, start=1):
                w.writerow([title, rank, r.index, r.name, r.acc_a, r.acc_b, r.delta])
        return out.getvalue()


def delta_table(a, b, k=10, names=None, decimals=1):
    """Per-class ``acc_b - acc_a`` rounded to ``decimals``; top-k gains and losses.

    Gains are strictly positive deltas, largest first; losses strictly
    negative, most negative first. Equal deltas are ordered by class index.
    Classes lacking an accuracy in either report are skipped.
    """
    if a.num_classes != b.num_classes:
        raise ValueError(f"class counts differ: {a.num_classes} vs {b.num_classes}")
    names = names or a.class_names or b.class_names or [str(i) for i in range(a.num_classes)]
    rows = []
    for i in range(a.num_classes):
        x, y = a.per_class_acc[i], b.per_class_acc[i]
        if np.isfinite(x) and np.isfinite(y):
            rows.append(DeltaRow(i, names[i], float(x), float(y), round(float(y) - float(x), decimals) + 0.0))
    rows.sort(key=lambda r: (-r.delta, r.index))
    gains = [r for r in rows if r.delta > 0][:k]
    losses = sorted((r for r in rows if r.delta < 0), key=lambda r: (r.delta, r.index))[:k]
    return DeltaTable(rows, gains, losses, a.tag, b.tag, k)


# ------------------------------------------------------------------ published fixtures


@dataclass
class PublishedTable:
    """Per-class accuracies (original vs Taylor input) as printed in a results table."""

    name: str
    num_classes: int
    description: str
    entries: list = field(default_factory=list)  # (class index, name, original, taylor, reported delta)

    def reports(self):
        a = np.full(self.num_classes, np.nan)
        b = np.full(self.num_classes, np.nan)
        for idx, _, orig, tay, _ in self.entries:
            a[idx], b[idx] = orig, tay
        names = list(ntu.ACTION_NAMES[:self.num_classes])
        return (EvalReport.from_per_class(a, f"{self.name}:original", names),
                EvalReport.from_per_class(b, f"{self.name}:taylor", names))


class FixtureError(ValueError):
    pass


def fixture_names():
    files = resources.files("taylorskel").joinpath("fixtures").iterdir()
    return sorted(os.path.splitext(f.name)[0] for f in files if f.name.endswith(".csv"))


def load_fixture(name):
    text = resources.files("taylorskel").joinpath("fixtures", f"{name}.csv").read_text()
    return parse_fixture(text, name)


def parse_fixture(text, name=""):
    comments = [ln[1:].strip() for ln in text.splitlines() if ln.startswith("#")]
    body = [ln for ln in text.splitlines() if ln and not ln.startswith("#")]
    num_classes = None
    for c in comments:
        if c.startswith("num_classes:"):
            num_classes = int(c.split(":", 1)[1])
    if num_classes is None:
        raise FixtureError(f"fixture {name}: missing '# num_classes:' header")
    table = PublishedTable(name, num_classes, comments[0] if comments else "")
    for row in csv.DictReader(body):
        try:
            idx = ntu.action_index(row["class_name"])
        except KeyError as exc:
            raise FixtureError(f"fixture {name}: {exc.args[0]}") from None
        if idx >= num_classes:
            raise FixtureError(f"fixture {name}: {row['class_name']!r} is not among {num_classes} classes")
        table.entries.append((idx, row["class_name"], float(row["original"]), float(row["taylor"]),
                              float(row["reported_delta"])))
    return table
