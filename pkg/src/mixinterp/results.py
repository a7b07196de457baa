"""Append-only line-delimited JSON result store.

Each line is one record: scalar metrics carry (model_id, metric, value,
se); curve records additionally carry a payload with x/y/se arrays.
Reports are regenerated from these records, never from in-process state.
"""

from __future__ import annotations

import json
import time
from dataclasses import dataclass, asdict, field
from pathlib import Path
from typing import Any, Dict, List, Optional

from .errors import MissingArtifactError


@dataclass
class ResultRecord:
    run_id: str
    config_hash: str
    model_id: str
    metric: str
    value: Optional[float] = None
    se: Optional[float] = None
    timestamp: float = 0.0
    payload: Optional[Dict[str, Any]] = None

    def canonical(self) -> Dict[str, Any]:
        """Record contents minus wall-clock fields, for determinism checks."""
        d = asdict(self)
        d.pop("timestamp")
        return d


class ResultStore:
    def __init__(self, path: str | Path):
        self.path = Path(path)

    def append(self, record: ResultRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        if record.timestamp == 0.0:
            record.timestamp = time.time()
        with open(self.path, "a") as fh:
            fh.write(json.dumps(asdict(record), sort_keys=True) + "\n")

    def load(self, run_id: Optional[str] = None) -> List[ResultRecord]:
        if not self.path.exists():
            raise MissingArtifactError(f"result file not found: {self.path}")
        records = []
        for line in self.path.read_text().splitlines():
            if not line.strip():
                continue
            rec = ResultRecord(**json.loads(line))
            if run_id is None or rec.run_id == run_id:
                records.append(rec)
        return records
