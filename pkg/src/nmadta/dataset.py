"""Evidence-network ingestion, validation and structural analysis.

A dataset is a collection of threshold series: for one study, one test and
one disease group, the number of patients testing positive at each reported
cut-off. Binary tests carry a single series entry with no threshold.
"""
from __future__ import annotations

import csv
import hashlib
import io
import math
import re
from collections import defaultdict
from dataclasses import dataclass, field
from enum import Enum, IntEnum
from pathlib import Path
from typing import Sequence, TextIO

__all__ = [
    "DatasetError",
    "DiseaseGroup",
    "TestKind",
    "TestDescriptor",
    "ThresholdSeries",
    "Dataset",
    "NetworkGraph",
    "Finding",
    "ValidationReport",
    "parse_dataset",
    "read_dataset",
    "write_dataset",
    "select_reference_threshold",
    "build_network_graph",
    "validate_for_model",
    "reduce_to_reference_thresholds",
]

COLUMNS = ("study_id", "test_id", "test_kind", "group", "threshold", "positives", "group_size")
_CSTAR_RE = re.compile(r"cstar:\s*([^=\s]+)\s*=\s*(\S+)")


class DatasetError(ValueError):
    """Malformed input or a violated dataset invariant."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        super().__init__(f"line {line}: {message}" if line is not None else message)


class DiseaseGroup(IntEnum):
    NONDISEASED = 0
    DISEASED = 1

    @classmethod
    def parse(cls, text: str) -> "DiseaseGroup":
        key = text.strip().lower().replace("-", "").replace("_", "")
        if key in ("diseased", "d", "1"):
            return cls.DISEASED
        if key in ("nondiseased", "healthy", "nd", "0"):
            return cls.NONDISEASED
        raise ValueError(f"unknown disease group {text!r}")

    @property
    def label(self) -> str:
        return "diseased" if self is DiseaseGroup.DISEASED else "nondiseased"


class TestKind(str, Enum):
    BINARY = "binary"
    CONTINUOUS = "continuous"


@dataclass(frozen=True)
class TestDescriptor:
    test_id: str
    name: str
    kind: TestKind
    c_star: float | None = None

    def __post_init__(self):
        if self.kind is TestKind.CONTINUOUS:
            if self.c_star is None or not (math.isfinite(self.c_star) and self.c_star > 0):
                raise DatasetError(f"test {self.test_id}: continuous test needs a positive c_star")
        elif self.c_star is not None:
            raise DatasetError(f"test {self.test_id}: binary test cannot carry c_star")

    @property
    def is_continuous(self) -> bool:
        return self.kind is TestKind.CONTINUOUS


@dataclass(frozen=True)
class ThresholdSeries:
    """Positive counts of one (study, test, group) cell across ascending thresholds.

    ``thresholds`` is ``(None,)`` for binary tests.
    """

    study_id: str
    test_id: str
    group: DiseaseGroup
    group_size: int
    thresholds: tuple
    positives: tuple

    def __post_init__(self):
        where = f"series ({self.study_id}, {self.test_id}, {self.group.label})"
        if len(self.thresholds) == 0 or len(self.thresholds) != len(self.positives):
            raise DatasetError(f"{where}: thresholds and positives must be non-empty and equal length")
        if int(self.group_size) != self.group_size or self.group_size <= 0:
            raise DatasetError(f"{where}: group_size must be a positive integer")
        for x in self.positives:
            if int(x) != x or x < 0:
                raise DatasetError(f"{where}: counts must be non-negative integers")
        if self.thresholds[0] is None:
            if len(self.thresholds) != 1:
                raise DatasetError(f"{where}: a binary series has exactly one entry")
        else:
            if any(c is None or not math.isfinite(c) or c <= 0 for c in self.thresholds):
                raise DatasetError(f"{where}: thresholds must be positive reals")
            if any(b <= a for a, b in zip(self.thresholds, self.thresholds[1:])):
                raise DatasetError(f"{where}: thresholds must be strictly ascending without duplicates")
        if self.positives[0] > self.group_size:
            raise DatasetError(f"{where}: positives exceed group_size")
        if any(b > a for a, b in zip(self.positives, self.positives[1:])):
            raise DatasetError(f"{where}: positives increase with threshold (must be non-increasing)")

    @property
    def is_binary(self) -> bool:
        return self.thresholds[0] is None

    @property
    def key(self) -> tuple[str, str, DiseaseGroup]:
        return (self.study_id, self.test_id, self.group)


@dataclass(frozen=True)
class Dataset:
    tests: tuple[TestDescriptor, ...]
    series: tuple[ThresholdSeries, ...]
    _test_index: dict = field(init=False, repr=False, compare=False)

    def __post_init__(self):
        index = {}
        for t in self.tests:
            if t.test_id in index:
                raise DatasetError(f"duplicate test {t.test_id}")
            index[t.test_id] = t
        object.__setattr__(self, "_test_index", index)
        seen = set()
        groups = defaultdict(set)
        for s in self.series:
            test = index.get(s.test_id)
            if test is None:
                raise DatasetError(f"series ({s.study_id}, {s.test_id}) references an undeclared test")
            if test.is_continuous == s.is_binary:
                raise DatasetError(f"series ({s.study_id}, {s.test_id}, {s.group.label}): threshold form does not match test kind")
            if s.key in seen:
                raise DatasetError(f"duplicate series ({s.study_id}, {s.test_id}, {s.group.label})")
            seen.add(s.key)
            groups[(s.study_id, s.test_id)].add(s.group)
        for (study, test), gs in groups.items():
            if len(gs) != 2:
                raise DatasetError(f"study {study}, test {test}: both disease groups must be present")

    @property
    def studies(self) -> frozenset[str]:
        return frozenset(s.study_id for s in self.series)

    def test(self, test_id: str) -> TestDescriptor:
        return self._test_index[test_id]

    def series_for(self, test_id: str) -> list[ThresholdSeries]:
        return [s for s in self.series if s.test_id == test_id]

    def studies_for(self, test_id: str) -> set[str]:
        return {s.study_id for s in self.series if s.test_id == test_id}

    def threshold_range(self, test_id: str) -> tuple[float, float]:
        values = [c for s in self.series_for(test_id) for c in s.thresholds if c is not None]
        if not values:
            raise ValueError(f"test {test_id} has no numeric thresholds")
        return min(values), max(values)

    def fingerprint(self) -> str:
        """Content hash, independent of the order of tests and series."""
        canonical = Dataset(tuple(sorted(self.tests, key=lambda t: t.test_id)),
                            tuple(sorted(self.series, key=lambda s: (s.study_id, s.test_id, int(s.group)))))
        buf = io.StringIO()
        write_dataset(canonical, buf)
        return hashlib.sha256(buf.getvalue().encode()).hexdigest()


def select_reference_threshold(series_for_test: Sequence[ThresholdSeries]) -> float:
    """Threshold reported by the most distinct studies; ties go to the smaller value."""
    studies_at = defaultdict(set)
    for s in series_for_test:
        for c in s.thresholds:
            if c is not None:
                studies_at[float(c)].add(s.study_id)
    if not studies_at:
        raise DatasetError("no thresholds present to select a reference threshold from")
    return min(studies_at, key=lambda c: (-len(studies_at[c]), c))


def _parse_threshold(text: str) -> float | None:
    text = text.strip()
    if text.upper() in ("NA", "", "NAN", "NONE"):
        return None
    return float(text)


def parse_dataset(source: TextIO | str) -> Dataset:
    """Parse the delimited cell format (one row per study/test/group/threshold)."""
    text = source if isinstance(source, str) else source.read()
    lines = text.splitlines()
    overrides: dict[str, float] = {}
    body: list[tuple[int, str]] = []
    for lineno, raw in enumerate(lines, start=1):
        stripped = raw.strip()
        if not stripped:
            continue
        if stripped.startswith("#"):
            m = _CSTAR_RE.search(stripped)
            if m:
                try:
                    overrides[m.group(1)] = float(m.group(2))
                except ValueError:
                    raise DatasetError(f"bad cstar directive {stripped!r}", lineno) from None
            continue
        body.append((lineno, raw))
    if not body:
        raise DatasetError("empty dataset: no header row")

    dialect = "\t" if "\t" in body[0][1] else ","
    header_line, header_text = body[0]
    header = [h.strip().lower() for h in next(csv.reader([header_text], delimiter=dialect))]
    missing = [c for c in COLUMNS if c not in header]
    if missing:
        raise DatasetError(f"missing columns {missing}", header_line)
    col = {name: header.index(name) for name in header}

    kinds: dict[str, TestKind] = {}
    names: dict[str, str] = {}
    cells: dict[tuple, list] = defaultdict(list)
    sizes: dict[tuple, int] = {}
    for lineno, raw in body[1:]:
        row = next(csv.reader([raw], delimiter=dialect))
        if len(row) < len(header):
            raise DatasetError(f"expected {len(header)} fields, got {len(row)}", lineno)
        get = lambda name: row[col[name]].strip()
        try:
            kind = TestKind(get("test_kind").lower())
        except ValueError:
            raise DatasetError(f"unknown test kind {get('test_kind')!r}", lineno) from None
        try:
            group = DiseaseGroup.parse(get("group"))
            threshold = _parse_threshold(get("threshold"))
            positives_f = float(get("positives"))
            size_f = float(get("group_size"))
        except ValueError as exc:
            raise DatasetError(str(exc), lineno) from None
        if positives_f != int(positives_f) or size_f != int(size_f):
            raise DatasetError("counts must be integers", lineno)
        positives, size = int(positives_f), int(size_f)
        if size <= 0:
            raise DatasetError("group_size must be positive", lineno)
        if positives < 0 or positives > size:
            raise DatasetError("positives must lie in [0, group_size]", lineno)
        if (kind is TestKind.BINARY) != (threshold is None):
            raise DatasetError("binary tests take threshold NA; continuous tests need a number", lineno)
        if threshold is not None and not (math.isfinite(threshold) and threshold > 0):
            raise DatasetError("thresholds must be positive", lineno)
        test_id = get("test_id")
        if kinds.setdefault(test_id, kind) is not kind:
            raise DatasetError(f"test {test_id} declared with conflicting kinds", lineno)
        if "test_name" in col and get("test_name"):
            names.setdefault(test_id, get("test_name"))
        key = (get("study_id"), test_id, group)
        if sizes.setdefault(key, size) != size:
            raise DatasetError(f"inconsistent group_size within series {key[:2]} {group.label}", lineno)
        cells[key].append((threshold, positives, lineno))

    series = []
    for (study, test_id, group), rows in cells.items():
        if kinds[test_id] is TestKind.BINARY:
            if len(rows) != 1:
                raise DatasetError(f"binary series ({study}, {test_id}, {group.label}) has {len(rows)} rows", rows[1][2])
            thresholds, positives = (None,), (rows[0][1],)
        else:
            rows = sorted(rows, key=lambda r: r[0])
            for a, b in zip(rows, rows[1:]):
                if a[0] == b[0]:
                    raise DatasetError(f"duplicate threshold {a[0]} in series ({study}, {test_id}, {group.label})", b[2])
            thresholds = tuple(r[0] for r in rows)
            positives = tuple(r[1] for r in rows)
        series.append(ThresholdSeries(study, test_id, group, sizes[(study, test_id, group)], thresholds, positives))

    tests = []
    for test_id, kind in kinds.items():
        c_star = None
        if kind is TestKind.CONTINUOUS:
            c_star = overrides.get(test_id)
            if c_star is None:
                c_star = select_reference_threshold([s for s in series if s.test_id == test_id])
        tests.append(TestDescriptor(test_id, names.get(test_id, test_id), kind, c_star))
    return Dataset(tuple(tests), tuple(series))


def read_dataset(path: str | Path) -> Dataset:
    with open(path, newline="") as fh:
        return parse_dataset(fh)


def write_dataset(d: Dataset, stream: TextIO, *, include_cstar: bool = True) -> None:
    """Inverse of :func:`parse_dataset`; c_star values are written as directives."""
    if include_cstar:
        for t in d.tests:
            if t.is_continuous:
                stream.write(f"# cstar:{t.test_id}={t.c_star!r}\n")
    writer = csv.writer(stream, lineterminator="\n")
    writer.writerow(COLUMNS + ("test_name",))
    for s in d.series:
        test = d.test(s.test_id)
        for c, x in zip(s.thresholds, s.positives):
            writer.writerow([s.study_id, s.test_id, test.kind.value, s.group.label,
                             "NA" if c is None else repr(float(c)), x, s.group_size, test.name])


@dataclass(frozen=True)
class NetworkGraph:
    nodes: tuple[str, ...]
    edges: tuple[tuple[str, str, str], ...]
    components: tuple[tuple[str, ...], ...]

    def component_of(self, test_id: str) -> tuple[str, ...]:
        for comp in self.components:
            if test_id in comp:
                return comp
        raise KeyError(test_id)

    @property
    def is_connected(self) -> bool:
        return len(self.components) <= 1


def build_network_graph(d: Dataset) -> NetworkGraph:
    """Tests are nodes; two tests share an edge per study evaluating both."""
    nodes = tuple(sorted(t.test_id for t in d.tests))
    by_study = defaultdict(set)
    for s in d.series:
        by_study[s.study_id].add(s.test_id)
    parent = {n: n for n in nodes}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    edges = []
    for study, tests in by_study.items():
        ordered = sorted(tests)
        for i, a in enumerate(ordered):
            for b in ordered[i + 1:]:
                edges.append((a, b, study))
                ra, rb = find(a), find(b)
                if ra != rb:
                    parent[max(ra, rb)] = min(ra, rb)
    members = defaultdict(list)
    for n in nodes:
        members[find(n)].append(n)
    components = tuple(sorted(tuple(sorted(m)) for m in members.values()))
    return NetworkGraph(nodes, tuple(sorted(edges)), components)


@dataclass(frozen=True)
class Finding:
    severity: str  # "error" | "info"
    rule: str
    location: str

    def __str__(self) -> str:
        return f"{self.severity}\t{self.rule}\t{self.location}"


@dataclass(frozen=True)
class ValidationReport:
    variant: str
    findings: tuple[Finding, ...]

    @property
    def violations(self) -> tuple[Finding, ...]:
        return tuple(f for f in self.findings if f.severity == "error")

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_text(self) -> str:
        lines = [str(f) for f in self.findings]
        lines.append(f"summary\t{'pass' if self.ok else 'fail'}\tvariant={self.variant}")
        return "\n".join(lines) + "\n"


def validate_for_model(d: Dataset, g: NetworkGraph, variant) -> ValidationReport:
    """Check the structural data requirements of a model variant.

    ``variant`` is a :class:`nmadta.model.ModelVariant` or its string value.
    Violations are collected rather than raised.
    """
    name = getattr(variant, "value", variant)
    if name not in ("independent", "meta_regression", "anova", "anova_plus"):
        raise ValueError(f"unknown model variant {variant!r}")
    findings: list[Finding] = []
    needs_connected = name in ("anova", "anova_plus")
    rejects_one_study = name in ("independent", "anova")

    if needs_connected and not g.is_connected:
        for comp in g.components:
            findings.append(Finding("error", "disconnected-network", "component:" + ",".join(comp)))
    for t in sorted(d.tests, key=lambda t: t.test_id):
        n = len(d.studies_for(t.test_id))
        if n == 0:
            findings.append(Finding("error", "test-without-data", f"test:{t.test_id}"))
        elif n < 2 and rejects_one_study:
            findings.append(Finding("error", "one-study-test", f"test:{t.test_id}"))
        elif n < 2:
            findings.append(Finding("info", "one-study-test-admitted", f"test:{t.test_id}"))
    if needs_connected:
        by_study = defaultdict(set)
        for s in d.series:
            by_study[s.study_id].add(s.test_id)
        for study in sorted(by_study):
            if len(by_study[study]) == 1:
                findings.append(Finding("info", "single-test-study", f"study:{study}"))
    return ValidationReport(name, tuple(findings))


def reduce_to_reference_thresholds(d: Dataset) -> Dataset:
    """Keep only each continuous test's reference threshold, as a binary-style analysis would.

    A (study, test) pair is dropped unless both disease groups report c_star.
    The reduced tests stay continuous with a single threshold equal to c_star.
    """
    kept: dict[tuple, ThresholdSeries] = {}
    for s in d.series:
        test = d.test(s.test_id)
        if not test.is_continuous:
            kept[s.key] = s
            continue
        for c, x in zip(s.thresholds, s.positives):
            if c == test.c_star:
                kept[s.key] = ThresholdSeries(s.study_id, s.test_id, s.group, s.group_size, (c,), (x,))
    series = [s for s in kept.values()
              if (s.study_id, s.test_id, DiseaseGroup(1 - s.group)) in kept]
    present = {s.test_id for s in series}
    tests = tuple(t for t in d.tests if t.test_id in present)
    return Dataset(tests, tuple(series))

