"""Analysis reports, JSON serialization and benchmark metrics."""

import json
import time
from dataclasses import dataclass, field

from . import __version__
from .detectors import DETECTORS, INCONCLUSIVE, SAFE, VULNERABLE, Whitelist, run_detectors
from .errors import EvulHunterError
from .loader import parse_module


@dataclass
class AnalysisReport:
    input: str
    bytes: int
    duration_ms: float
    findings: list = field(default_factory=list)
    errors: list = field(default_factory=list)
    version: str = __version__

    @property
    def worst_verdict(self):
        order = {SAFE: 0, INCONCLUSIVE: 1, VULNERABLE: 2}
        if self.errors:
            return None
        return max((f.verdict for f in self.findings), key=order.get, default=SAFE)

    def to_dict(self):
        return {
            "input": self.input,
            "bytes": self.bytes,
            "duration_ms": self.duration_ms,
            "findings": [
                {
                    "detector": f.detector,
                    "verdict": f.verdict,
                    "degraded": f.degraded,
                    "reason": f.reason,
                    "evidence": [
                        {"function": e.function, "offset": e.offset, "message": e.message}
                        for e in f.evidence
                    ],
                }
                for f in self.findings
            ],
            "errors": list(self.errors),
        }

    def to_json(self, indent=2):
        return json.dumps(self.to_dict(), indent=indent)


def analyze(data: bytes, wl: Whitelist = None, which=DETECTORS,
            input_name: str = "<bytes>") -> AnalysisReport:
    """Parse and run the selected detectors over one module.  Parse and
    shape errors become report-level error entries, never exceptions.
    Duration covers parsing and detection, not file IO."""
    start = time.perf_counter()
    report = AnalysisReport(input_name, len(data), 0.0)
    try:
        module = parse_module(data)
        report.findings = run_detectors(module, wl, which)
    except EvulHunterError as exc:
        report.errors.append(f"{type(exc).__name__}: {exc}")
    report.duration_ms = (time.perf_counter() - start) * 1000.0
    return report


@dataclass
class MetricsRow:
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    @property
    def precision(self):
        d = self.tp + self.fp
        return self.tp / d if d else None

    @property
    def recall(self):
        d = self.tp + self.fn
        return self.tp / d if d else None

    @property
    def accuracy(self):
        d = self.tp + self.fp + self.tn + self.fn
        return (self.tp + self.tn) / d if d else None

    def add(self, predicted_vulnerable: bool, labeled_vulnerable: bool):
        if predicted_vulnerable and labeled_vulnerable:
            self.tp += 1
        elif predicted_vulnerable:
            self.fp += 1
        elif labeled_vulnerable:
            self.fn += 1
        else:
            self.tn += 1

    def to_dict(self):
        return {
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "precision": self.precision, "recall": self.recall,
            "accuracy": self.accuracy,
        }


@dataclass
class MetricsSummary:
    per_detector: dict = field(default_factory=dict)   # detector -> MetricsRow
    total: MetricsRow = field(default_factory=MetricsRow)
    unlabeled: list = field(default_factory=list)

    def score(self, detector: str, verdict: str, label: str):
        """Inconclusive scores as vulnerable: the conservative bias inflates
        false positives, never false negatives."""
        predicted = verdict in (VULNERABLE, INCONCLUSIVE)
        labeled = label == "vulnerable"
        self.per_detector.setdefault(detector, MetricsRow()).add(predicted, labeled)
        self.total.add(predicted, labeled)

    def to_dict(self):
        return {
            "per_detector": {d: r.to_dict() for d, r in sorted(self.per_detector.items())},
            "total": self.total.to_dict(),
            "unlabeled": sorted(self.unlabeled),
        }
