"""Small filesystem helpers shared by checkpointing and the CLI."""

import hashlib
import os
import tempfile
from contextlib import contextmanager
from pathlib import Path


@contextmanager
def atomic_path(path):
    """Yield a temp path in the target directory; rename over ``path`` on success.

    A crashed or killed writer leaves at most a stray ``*.tmp*`` file, never a
    truncated artifact under the final name.
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(prefix=path.name + ".tmp", dir=path.parent)
    os.close(fd)
    tmp = Path(tmp)
    try:
        yield tmp
        os.replace(tmp, path)
    except BaseException:
        tmp.unlink(missing_ok=True)
        raise


def worker_count() -> int:
    """Worker-pool cap from HIFORMER_THREADS (default 1, i.e. sequential)."""
    env = os.environ.get("HIFORMER_THREADS", "").strip()
    if not env:
        return 1
    try:
        return max(1, int(env))
    except ValueError:
        return 1


def file_sha256(path) -> str:
    """Content hash used as the dataset fingerprint in manifests."""
    digest = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            digest.update(chunk)
    return digest.hexdigest()
