"""Output-directory plumbing: lock file, run manifest, content hashes."""

from __future__ import annotations

import datetime as _dt
import hashlib
import json
import os
from pathlib import Path

from . import __version__
from .checkpoint import atomic_write

LOCK_NAME = ".iwdrift.lock"
MANIFEST_NAME = "manifest.json"


class LockError(RuntimeError):
    pass


class OutDirLock:
    """Exclusive claim on an output directory for the duration of a command.

    The lock is a file created with ``O_EXCL`` holding the owner's pid; a
    second invocation on the same directory fails instead of interleaving
    writes.
    """

    def __init__(self, out_dir):
        self.path = Path(out_dir) / LOCK_NAME
        self.held = False

    def __enter__(self):
        self.path.parent.mkdir(parents=True, exist_ok=True)
        try:
            fd = os.open(self.path, os.O_CREAT | os.O_EXCL | os.O_WRONLY, 0o644)
        except FileExistsError:
            raise LockError(f"{self.path.parent} is in use by another run (remove {self.path} if stale)") from None
        with os.fdopen(fd, "w") as fh:
            fh.write(f"{os.getpid()}\n")
        self.held = True
        return self

    def __exit__(self, *exc):
        if self.held:
            self.path.unlink(missing_ok=True)
            self.held = False
        return False


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def now_iso() -> str:
    return _dt.datetime.now(_dt.timezone.utc).isoformat(timespec="seconds")


def write_manifest(out_dir, command: str, config: dict, seed: int, files, started: str,
                   extra: dict | None = None) -> Path:
    """Hash every produced file and write ``manifest.json`` atomically.

    Timestamps live only here so every other output stays byte-reproducible.
    """
    out_dir = Path(out_dir)
    entries = []
    for f in sorted({Path(f).resolve() for f in files}):
        entries.append({"path": os.path.relpath(f, out_dir.resolve()), "sha256": sha256_file(f),
                        "bytes": f.stat().st_size})
    manifest = {
        "tool": "iwdrift",
        "version": __version__,
        "command": command,
        "seed": int(seed),
        "started": started,
        "finished": now_iso(),
        "config": config,
        "files": entries,
    }
    if extra:
        manifest.update(extra)
    path = out_dir / MANIFEST_NAME
    atomic_write(path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode())
    return path


def verify_manifest(out_dir) -> list[str]:
    """Paths whose current hash differs from the manifest (empty when all verify)."""
    out_dir = Path(out_dir)
    manifest = json.loads((out_dir / MANIFEST_NAME).read_text())
    bad = []
    for e in manifest["files"]:
        p = out_dir / e["path"]
        if not p.exists() or sha256_file(p) != e["sha256"]:
            bad.append(e["path"])
    return bad
