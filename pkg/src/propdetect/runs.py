"""Run directories: staged writes, manifests with output digests, locking."""

from __future__ import annotations

import hashlib
import json
import os
import shutil
import time
from contextlib import contextmanager
from pathlib import Path

from filelock import FileLock, Timeout

from . import __version__

WORKSPACE_ENV = "PROPDETECT_WORKSPACE"
MANIFEST = "manifest.json"


class WorkspaceBusy(RuntimeError):
    pass


def workspace_root(explicit: str | None = None) -> Path:
    return Path(explicit or os.environ.get(WORKSPACE_ENV) or "workspace")


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def digests(directory: Path) -> dict[str, str]:
    return {
        str(p.relative_to(directory)): sha256_file(p)
        for p in sorted(directory.rglob("*"))
        if p.is_file() and p.name != MANIFEST
    }


def verify_manifest(stage_dir: str | Path) -> list[str]:
    """Files whose digest no longer matches the manifest (missing, changed or new)."""
    stage_dir = Path(stage_dir)
    recorded = json.loads((stage_dir / MANIFEST).read_text())["outputs"]
    current = digests(stage_dir)
    return sorted(k for k in set(recorded) | set(current) if recorded.get(k) != current.get(k))


@contextmanager
def locked(root: Path):
    root.mkdir(parents=True, exist_ok=True)
    lock = FileLock(str(root / ".lock"), timeout=0)
    try:
        lock.acquire()
    except Timeout:
        raise WorkspaceBusy(f"workspace {root} is locked by another run") from None
    try:
        yield
    finally:
        lock.release()


class Stage:
    """Collects a command's outputs in a scratch directory and only moves
    them into ``root/name`` once the command succeeded."""

    def __init__(self, root: Path, name: str, command: str, config: dict):
        self.root = root
        self.name = name
        self.command = command
        self.config = config
        self.dir = root / f".staging-{name}"
        self.timings: dict[str, float] = {}

    @contextmanager
    def timed(self, label: str):
        t0 = time.perf_counter()
        try:
            yield
        finally:
            self.timings[label] = round(time.perf_counter() - t0, 3)

    def __enter__(self) -> "Stage":
        if self.dir.exists():
            shutil.rmtree(self.dir)
        self.dir.mkdir(parents=True)
        self._t0 = time.perf_counter()
        return self

    def __exit__(self, exc_type, exc, tb):
        if exc_type is not None:
            shutil.rmtree(self.dir, ignore_errors=True)
            return False
        self.timings["total"] = round(time.perf_counter() - self._t0, 3)
        manifest = {
            "command": self.command,
            "toolkit_version": __version__,
            "config": self.config,
            "timings": self.timings,
            "outputs": digests(self.dir),
        }
        (self.dir / MANIFEST).write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
        final = self.root / self.name
        if final.exists():
            shutil.rmtree(final)
        self.dir.rename(final)
        return False
