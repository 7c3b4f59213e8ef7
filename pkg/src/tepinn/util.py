"""Small shared helpers."""

from __future__ import annotations

import os


def atomic_write_text(path: str, text: str) -> None:
    """Write via a temp file + rename so readers never see a partial file."""
    parent = os.path.dirname(os.path.abspath(path))
    os.makedirs(parent, exist_ok=True)
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="\n") as f:
        f.write(text)
    os.replace(tmp, path)
