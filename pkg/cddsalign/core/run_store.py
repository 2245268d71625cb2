"""
Run Store

Owns one run directory and everything written into it: the manifest,
metric tables, reports and inspection dumps. Every file written through the
store is recorded in the manifest outputs.
"""

import csv
import json
import logging
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence, Union

import numpy as np

from cddsalign.core.errors import CorruptionError
from cddsalign.core.manifest import RunManifest

logger = logging.getLogger(__name__)

MANIFEST_FILE = "manifest.json"


def run_name(seed: Optional[int], now: Optional[datetime] = None) -> str:
    """Directory name of a run: timestamp plus seed"""
    stamp = (now or datetime.now()).strftime("%Y%m%d-%H%M%S")
    return f"{stamp}-seed{seed if seed is not None else 'none'}"


class RunStore:
    """
    Usage:
        store = RunStore.create("runs", manifest)
        store.write_csv("metrics.csv", history, metric_fields(config))
        store.save_manifest()
    """

    def __init__(self, run_dir: Union[str, Path], manifest: RunManifest):
        self.run_dir = Path(run_dir)
        self.manifest = manifest

    @classmethod
    def create(cls, root: Union[str, Path], manifest: RunManifest) -> "RunStore":
        """New run directory under root, suffixed when the name is taken"""
        root = Path(root)
        root.mkdir(parents=True, exist_ok=True)
        base = run_name(manifest.seed)
        run_dir = root / base
        suffix = 1
        while run_dir.exists():
            suffix += 1
            run_dir = root / f"{base}-{suffix}"
        run_dir.mkdir()
        logger.info(f"Run directory: {run_dir}")
        store = cls(run_dir, manifest)
        store.save_manifest()
        return store

    def child(self, name: str, manifest: RunManifest) -> "RunStore":
        """Sub-run directory (one per ablation or mode) with its own manifest"""
        run_dir = self.run_dir / name
        run_dir.mkdir(parents=True, exist_ok=True)
        store = RunStore(run_dir, manifest)
        store.save_manifest()
        self.manifest.outputs[name] = name
        return store

    def path(self, name: str) -> Path:
        return self.run_dir / name

    def record(self, name: str, key: Optional[str] = None) -> Path:
        """Register an output written by someone else (checkpoints, containers)"""
        self.manifest.outputs[key or name] = name
        return self.path(name)

    # ------------------------------------------------------------------
    # writers
    # ------------------------------------------------------------------

    def write_json(self, name: str, payload: Any) -> Path:
        target = self.record(name)
        with open(target, "w", encoding="utf-8") as f:
            json.dump(payload, f, indent=2, sort_keys=True)
        logger.debug(f"Wrote {target}")
        return target

    def write_csv(self, name: str, rows: Iterable[Mapping[str, Any]], fields: Sequence[str]) -> Path:
        target = self.record(name)
        with open(target, "w", encoding="utf-8", newline="") as f:
            writer = csv.DictWriter(f, fieldnames=list(fields), extrasaction="ignore", lineterminator="\n")
            writer.writeheader()
            for row in rows:
                writer.writerow(row)
        logger.debug(f"Wrote {target}")
        return target

    def write_matrix(self, name: str, matrix: np.ndarray, header: Optional[List[str]] = None) -> Path:
        """Dense 1-D or 2-D array as CSV, full float precision"""
        matrix = np.atleast_2d(np.asarray(matrix))
        target = self.record(name)
        with open(target, "w", encoding="utf-8", newline="") as f:
            writer = csv.writer(f, lineterminator="\n")
            if header is not None:
                writer.writerow(header)
            for row in matrix:
                writer.writerow([repr(float(v)) if np.issubdtype(matrix.dtype, np.floating) else int(v)
                                 for v in row])
        logger.debug(f"Wrote {target}")
        return target

    def save_manifest(self) -> Path:
        target = self.run_dir / MANIFEST_FILE
        with open(target, "w", encoding="utf-8") as f:
            json.dump(self.manifest.to_dict(), f, indent=2)
        return target

    def finish(self) -> Path:
        self.manifest.finish()
        return self.save_manifest()


def load_manifest(run_dir: Union[str, Path]) -> RunManifest:
    target = Path(run_dir) / MANIFEST_FILE
    if not target.exists():
        raise FileNotFoundError(f"no manifest at {target}")
    with open(target, "r", encoding="utf-8") as f:
        try:
            return RunManifest.from_dict(json.load(f))
        except json.JSONDecodeError as e:
            raise CorruptionError(f"{target}: invalid JSON ({e})") from e


def read_csv_rows(path: Union[str, Path]) -> List[Dict[str, str]]:
    with open(path, "r", encoding="utf-8", newline="") as f:
        return list(csv.DictReader(f))
