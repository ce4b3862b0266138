"""The append-only run manifest: every iteration's artifacts and scores.

The manifest is the resume point and the audit trail. All artifact paths are
stored relative to the run directory, every referenced file carries its
content digest, and serialization is canonical (sorted keys, fixed indent,
trailing newline) so that a resumed run and an uninterrupted run produce
byte-identical manifests. Saves are atomic (write-then-replace). Nothing
volatile — no timestamps, no latencies — may enter this file.
"""

from __future__ import annotations

import json
import os
from pathlib import Path
from typing import Optional

from .hashing import file_digest

STAGES = ("synthesize", "train", "search", "evaluate")


class ManifestError(RuntimeError):
    pass


class RunManifest:
    def __init__(self, path, data: dict):
        self.path = Path(path)
        self.data = data

    @classmethod
    def create(cls, path, config_dict: dict, config_digest: str,
               initial_reward: dict, template_digests: dict) -> "RunManifest":
        data = {
            "config": config_dict,
            "config_digest": config_digest,
            "status": "running",
            "initial_reward": initial_reward,
            "template_digests": template_digests,
            "iterations": [],
            "best_checkpoint": None,
            "final_reward": None,
            "last_error": None,
        }
        manifest = cls(path, data)
        manifest.save()
        return manifest

    @classmethod
    def load(cls, path) -> "RunManifest":
        path = Path(path)
        if not path.exists():
            raise ManifestError(f"manifest not found: {path}")
        try:
            data = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ManifestError(f"corrupt manifest {path}: {exc.msg}") from exc
        return cls(path, data)

    def save(self) -> None:
        blob = json.dumps(self.data, sort_keys=True, indent=2, ensure_ascii=False) + "\n"
        tmp = self.path.with_suffix(".tmp")
        tmp.write_text(blob, encoding="utf-8")
        os.replace(tmp, self.path)

    def bytes(self) -> bytes:
        return self.path.read_bytes()

    # -- iteration bookkeeping -------------------------------------------

    def iteration(self, k: int) -> dict:
        for entry in self.data["iterations"]:
            if entry["k"] == k:
                return entry
        entry = {"k": k, "stages": {stage: False for stage in STAGES}}
        self.data["iterations"].append(entry)
        return entry

    def stage_done(self, k: int, stage: str) -> bool:
        for entry in self.data["iterations"]:
            if entry["k"] == k:
                return bool(entry["stages"].get(stage))
        return False

    def mark_stage(self, k: int, stage: str, **fields) -> None:
        if stage not in STAGES:
            raise ManifestError(f"unknown stage {stage!r}")
        entry = self.iteration(k)
        entry.update(fields)
        entry["stages"][stage] = True
        self.data["last_error"] = None
        self.save()

    def record_failure(self, k: int, stage: str, error: str) -> None:
        self.data["status"] = "failed"
        self.data["last_error"] = {"k": k, "stage": stage, "error": error}
        self.save()

    def first_incomplete(self, total_iterations: int) -> Optional[tuple[int, str]]:
        for k in range(1, total_iterations + 1):
            for stage in STAGES:
                if not self.stage_done(k, stage):
                    return k, stage
        return None

    def complete(self, best_checkpoint: Optional[dict], final_reward: Optional[dict]) -> None:
        self.data["status"] = "complete"
        self.data["best_checkpoint"] = best_checkpoint
        self.data["final_reward"] = final_reward
        self.data["last_error"] = None
        self.save()

    # -- integrity --------------------------------------------------------

    ARTIFACT_FIELDS = (
        ("dataset_file", "dataset_digest"),
        ("samples_file", "samples_digest"),
        ("skip_log", "skip_log_digest"),
        ("search_trace", "search_trace_digest"),
        ("eval_report", "eval_report_digest"),
    )

    def verify_artifacts(self, run_dir) -> None:
        """Check that every referenced artifact exists and matches its digest."""
        run_dir = Path(run_dir)
        for entry in self.data["iterations"]:
            for file_field, digest_field in self.ARTIFACT_FIELDS:
                rel = entry.get(file_field)
                digest = entry.get(digest_field)
                if rel is None or digest is None:
                    continue
                path = run_dir / rel
                if not path.exists():
                    raise ManifestError(f"artifact missing: {path}")
                actual = file_digest(path)
                if actual != digest:
                    raise ManifestError(
                        f"artifact digest mismatch for {path}: "
                        f"recorded {digest[:12]}…, found {actual[:12]}…")
