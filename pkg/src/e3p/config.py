"""Flat key/value session config files (a small TOML-like subset).

Supported per line: comments (``#``), blank lines, and ``key = value``
where value is a quoted string, a bare token (letters, digits, ``_./:+-``),
an integer, a float, ``true``/``false``, or a single-line array of those:

    command = ["python3", "bench.py", "--model", "levit"]
    source = "tegrastats"
    interval_ms = 1000
    rails = "sum:VDD_SYS_GPU+VDD_SYS_CPU+VDD_SYS_SOC+VDD_SYS_DDR"
    trials = 3
    window = "handshake"
    model = "LeViT_Conv_192"
    device = "jetson-tx2"
    dataset = "cifar-10"

No nesting, no multi-line values, no escape sequences.
"""

from __future__ import annotations

import re
from pathlib import Path

from .errors import ConfigError

_KEY_RE = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")
_BARE_RE = re.compile(r"^[A-Za-z0-9_./:+\-]+$")


def _strip_comment(line: str) -> str:
    out = []
    in_string = False
    for ch in line:
        if ch == '"':
            in_string = not in_string
        elif ch == "#" and not in_string:
            break
        out.append(ch)
    return "".join(out)


def _split_array_items(body: str, where: str) -> list[str]:
    items = []
    current = []
    in_string = False
    for ch in body:
        if ch == '"':
            in_string = not in_string
            current.append(ch)
        elif ch == "," and not in_string:
            items.append("".join(current).strip())
            current = []
        else:
            current.append(ch)
    tail = "".join(current).strip()
    if tail:
        items.append(tail)
    if in_string:
        raise ConfigError(f"{where}: unterminated string in array")
    return [item for item in items if item]


def _parse_scalar(raw: str, where: str):
    if raw.startswith('"'):
        if len(raw) < 2 or not raw.endswith('"') or '"' in raw[1:-1]:
            raise ConfigError(f"{where}: malformed string {raw!r}")
        return raw[1:-1]
    if raw == "true":
        return True
    if raw == "false":
        return False
    try:
        return int(raw)
    except ValueError:
        pass
    try:
        return float(raw)
    except ValueError:
        pass
    if _BARE_RE.match(raw):
        return raw
    raise ConfigError(f"{where}: cannot parse value {raw!r}")


def parse_kv_config(text: str, where: str = "<config>") -> dict:
    """Parse config text into a flat dict. Duplicate keys are an error."""
    values: dict = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        here = f"{where}:{lineno}"
        stripped = _strip_comment(line).strip()
        if not stripped:
            continue
        key, eq, raw = stripped.partition("=")
        if not eq:
            raise ConfigError(f"{here}: expected 'key = value'")
        key = key.strip()
        raw = raw.strip()
        if not _KEY_RE.match(key):
            raise ConfigError(f"{here}: invalid key {key!r}")
        if key in values:
            raise ConfigError(f"{here}: duplicate key {key!r}")
        if not raw:
            raise ConfigError(f"{here}: missing value for {key!r}")
        if raw.startswith("["):
            if not raw.endswith("]"):
                raise ConfigError(f"{here}: arrays must close on one line")
            values[key] = [
                _parse_scalar(item, here)
                for item in _split_array_items(raw[1:-1], here)]
        else:
            values[key] = _parse_scalar(raw, here)
    return values


def load_kv_config(path: str | Path) -> dict:
    """Read and parse a config file."""
    path = Path(path)
    try:
        text = path.read_text(encoding="utf-8")
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from None
    return parse_kv_config(text, where=str(path))
