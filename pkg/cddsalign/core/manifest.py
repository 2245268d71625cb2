"""
Run manifest

Describes one run completely: the command line, the resolved configuration,
the seed and where the outputs went. Replaying the recorded command with the
recorded configuration reproduces the metrics.
"""

import logging
import subprocess
from dataclasses import asdict, dataclass, field
from datetime import datetime
from pathlib import Path
from typing import Any, Dict, List, Optional

from cddsalign import __version__

logger = logging.getLogger(__name__)


def source_revision() -> str:
    """Git commit of the source tree, or the package version outside a checkout"""
    try:
        result = subprocess.run(
            ["git", "rev-parse", "HEAD"],
            cwd=Path(__file__).resolve().parent,
            capture_output=True, text=True, timeout=5, check=False,
        )
    except (OSError, subprocess.SubprocessError):
        result = None
    if result is not None and result.returncode == 0 and result.stdout.strip():
        return result.stdout.strip()
    return f"cddsalign {__version__}"


@dataclass
class RunManifest:
    """
    Attributes:
        command: Subcommand name
        argv: Full command line
        config: Resolved configuration, one entry per config object
        seed: Primary seed of the run
        revision: Source revision string
        outputs: Output name -> path relative to the run directory
    """
    command: str
    argv: List[str]
    config: Dict[str, Any] = field(default_factory=dict)
    seed: Optional[int] = None
    revision: str = field(default_factory=source_revision)
    started_at: str = field(default_factory=lambda: datetime.now().isoformat())
    finished_at: Optional[str] = None
    outputs: Dict[str, str] = field(default_factory=dict)

    def finish(self) -> None:
        self.finished_at = datetime.now().isoformat()

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "RunManifest":
        return cls(
            command=data.get("command", ""),
            argv=list(data.get("argv", [])),
            config=data.get("config", {}),
            seed=data.get("seed"),
            revision=data.get("revision", ""),
            started_at=data.get("started_at", datetime.now().isoformat()),
            finished_at=data.get("finished_at"),
            outputs=data.get("outputs", {}),
        )
