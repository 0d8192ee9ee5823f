"""Content-addressed run ledger for stage idempotence and provenance.

Each completed stage appends one JSONL entry naming the stage, the hash of
the configuration slice that determines its outputs, the hashes of its
parent stages, and the artifact paths it produced (relative to the ledger
directory).  A stage whose (name, hash) already has an entry with all
artifacts still present is skipped on rerun.
"""

from __future__ import annotations

import json
import os
from dataclasses import dataclass
from pathlib import Path


@dataclass(frozen=True)
class LedgerEntry:
    stage: str
    config_hash: str
    parents: tuple[str, ...]
    outputs: tuple[str, ...]
    extra: dict

    def to_json(self) -> dict:
        return {
            "stage": self.stage,
            "config_hash": self.config_hash,
            "parents": list(self.parents),
            "outputs": list(self.outputs),
            "extra": self.extra,
        }

    @staticmethod
    def from_json(payload: dict) -> "LedgerEntry":
        return LedgerEntry(
            stage=payload["stage"],
            config_hash=payload["config_hash"],
            parents=tuple(payload.get("parents", ())),
            outputs=tuple(payload.get("outputs", ())),
            extra=payload.get("extra", {}),
        )


class RunLedger:
    def __init__(self, path: str | Path):
        self.path = Path(path)
        self.entries: list[LedgerEntry] = []
        if self.path.is_file():
            for line in self.path.read_text().splitlines():
                line = line.strip()
                if line:
                    self.entries.append(LedgerEntry.from_json(json.loads(line)))

    def record(
        self,
        stage: str,
        config_hash: str,
        outputs: list[str],
        parents: list[str] | None = None,
        extra: dict | None = None,
    ) -> LedgerEntry:
        entry = LedgerEntry(
            stage=stage,
            config_hash=config_hash,
            parents=tuple(parents or ()),
            outputs=tuple(outputs),
            extra=extra or {},
        )
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a") as fh:
            fh.write(json.dumps(entry.to_json(), sort_keys=True) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        self.entries.append(entry)
        return entry

    def find(self, stage: str, config_hash: str) -> LedgerEntry | None:
        """Latest matching entry, or None."""
        for entry in reversed(self.entries):
            if entry.stage == stage and entry.config_hash == config_hash:
                return entry
        return None

    def is_complete(self, stage: str, config_hash: str) -> bool:
        """True when a matching entry exists and its artifacts are intact."""
        entry = self.find(stage, config_hash)
        if entry is None:
            return False
        base = self.path.parent
        return all((base / out).exists() for out in entry.outputs)
