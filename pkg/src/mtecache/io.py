"""Atomic file writes and output headers shared by every stage."""

import hashlib
import os
import tempfile
from pathlib import Path

from mtecache import __version__


def atomic_write_bytes(path, data):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def atomic_write_text(path, text):
    atomic_write_bytes(path, text.encode())


def provenance_header(config_hash=None, seed=None, extra=None):
    """Comment lines stamped at the top of every CSV the toolkit writes."""
    fields = {"tool": "mtecache", "version": __version__}
    if config_hash is not None:
        fields["config_sha256"] = config_hash
    if seed is not None:
        fields["seed"] = seed
    if extra:
        fields.update(extra)
    return "# " + " ".join(f"{k}={v}" for k, v in fields.items()) + "\n"


def sha256_text(text):
    return hashlib.sha256(text.encode()).hexdigest()
