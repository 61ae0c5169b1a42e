"""Run manifest and metrics stream.

The manifest is the audit record of one experiment: the resolved config, an
ordered list of phase records (contiguous in the global step clock), final
parameter checksums, and file paths. Metrics are JSONL, one dict per line,
each tagged with the index of the phase that produced it so a resumed run
can truncate exactly at the last completed phase.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from pathlib import Path


@dataclass
class PhaseRecord:
    kind: str  # agnostic_explore | agnostic_compress | progress | compress | fisher
    task: str | None
    visit: int | None
    sample: int | None
    seed: int
    start_step: int
    end_step: int
    metrics: dict = field(default_factory=dict)

    @property
    def length(self) -> int:
        return self.end_step - self.start_step


@dataclass
class RunManifest:
    algorithm: str
    variation: int
    master_seed: int
    profile: str
    config: dict
    config_hash: str
    status: str = "running"  # running | completed | failed | stopped
    records: list[PhaseRecord] = field(default_factory=list)
    final_checksums: dict[str, str] = field(default_factory=dict)
    out_dir: str = ""
    metrics_path: str = ""
    checkpoint_path: str = ""

    def phase_template(self) -> list[tuple]:
        """(kind, task, visit, sample) per record; the schedule-conformance view."""
        return [(r.kind, r.task, r.visit, r.sample) for r in self.records]

    def phase_signature(self) -> list[tuple]:
        """(kind, task, length, seed) per record; offset-free, used to compare
        a baseline run against the matching suffix of a pretrained run."""
        return [(r.kind, r.task, r.length, r.seed) for r in self.records]

    def save(self, path: str | Path) -> None:
        payload = asdict(self)
        Path(path).write_text(json.dumps(payload, indent=2, sort_keys=True))

    @staticmethod
    def load(path: str | Path) -> "RunManifest":
        payload = json.loads(Path(path).read_text())
        records = [PhaseRecord(**r) for r in payload.pop("records")]
        return RunManifest(records=records, **payload)


class MetricsWriter:
    """Append-only JSONL; ``truncate_to_phase`` rewrites the file keeping only
    records from phases before the given index (used on resume)."""

    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if not self.path.exists():
            self.path.touch()

    def append(self, record: dict) -> None:
        with self.path.open("a") as f:
            f.write(json.dumps(record, sort_keys=True))
            f.write("\n")

    def truncate_to_phase(self, phase_index: int) -> None:
        kept = [r for r in self.read() if r.get("phase_index", -1) < phase_index]
        with self.path.open("w") as f:
            for r in kept:
                f.write(json.dumps(r, sort_keys=True))
                f.write("\n")

    def read(self) -> list[dict]:
        records = []
        with self.path.open() as f:
            for line in f:
                line = line.strip()
                if line:
                    records.append(json.loads(line))
        return records


def load_metrics(path: str | Path) -> list[dict]:
    return MetricsWriter(path).read()
