"""Model catalog: load, validate, and serve device-agnostic model cards.

A registry is an ordered, immutable collection of :class:`ModelCard` records
loaded from JSON or CSV. Numeric fields are kept at full double precision
exactly as parsed; no rounding happens on load, so downstream scores are
reproducible from the stored inputs.

File formats:
    JSON -- array of objects with keys ``name``, ``params_m``, ``macs_g``,
        ``top1_acc_pct`` and optional ``tags`` (list of strings).
    CSV  -- header row required; columns resolved by name, not position:
        ``name,params_m,macs_g,top1_acc_pct[,tags]`` with ``tags``
        ``;``-separated.
"""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import IO, Iterable

from .errors import RegistryError

_REQUIRED_FIELDS = ("name", "params_m", "macs_g", "top1_acc_pct")
_CSV_HEADER = ("name", "params_m", "macs_g", "top1_acc_pct", "tags")


@dataclass(frozen=True)
class ModelCard:
    """Device-agnostic description of one candidate model.

    Attributes:
        name: Unique identifier within a registry.
        params_m: Parameter count in millions, > 0.
        macs_g: Multiply-accumulate operations per inference in billions, > 0.
        top1_acc_pct: Top-1 accuracy in percent, in (0, 100].
        tags: Free-form family labels (e.g. "distilled", "hybrid").
    """

    name: str
    params_m: float
    macs_g: float
    top1_acc_pct: float
    tags: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.name or not isinstance(self.name, str):
            raise RegistryError("model card requires a nonempty string name")
        for fname in ("params_m", "macs_g", "top1_acc_pct"):
            value = getattr(self, fname)
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                raise RegistryError(
                    f"model {self.name!r}: field {fname!r} must be numeric, "
                    f"got {value!r}"
                )
            if not math.isfinite(value) or value <= 0:
                raise RegistryError(
                    f"model {self.name!r}: field {fname!r} must be a finite "
                    f"positive number, got {value!r}"
                )
        if self.top1_acc_pct > 100:
            raise RegistryError(
                f"model {self.name!r}: field 'top1_acc_pct' must be in "
                f"(0, 100], got {self.top1_acc_pct!r}"
            )


@dataclass(frozen=True)
class Registry:
    """Ordered, immutable catalog of model cards.

    Immutable after load, so it is safe to share across concurrent readers.
    """

    cards: tuple[ModelCard, ...]
    source_path: str = "<memory>"
    _by_name: dict = field(init=False, repr=False, compare=False, hash=False)

    def __post_init__(self):
        object.__setattr__(self, "_by_name", {c.name: c for c in self.cards})

    def __len__(self) -> int:
        return len(self.cards)

    def __iter__(self):
        return iter(self.cards)

    def lookup(self, name: str) -> ModelCard | None:
        """Return the card with this name, or None. Absence is not an error."""
        return self._by_name.get(name)


def lookup(registry: Registry, name: str) -> ModelCard | None:
    """Return the unique card named ``name`` from ``registry``, or None."""
    return registry.lookup(name)


def _card_from_record(record: dict, where: str) -> ModelCard:
    """Validate one raw record (JSON object or CSV row dict) into a card."""
    missing = [f for f in _REQUIRED_FIELDS if record.get(f) in (None, "")]
    if missing:
        raise RegistryError(f"{where}: missing required field(s) {missing}")
    tags = record.get("tags") or ()
    if isinstance(tags, str):
        tags = tuple(t.strip() for t in tags.split(";") if t.strip())
    elif isinstance(tags, (list, tuple)):
        bad = [t for t in tags if not isinstance(t, str)]
        if bad:
            raise RegistryError(f"{where}: tags must be strings, got {bad!r}")
        tags = tuple(tags)
    else:
        raise RegistryError(f"{where}: field 'tags' must be a list or "
                            f"';'-separated string, got {tags!r}")
    try:
        return ModelCard(
            name=record["name"],
            params_m=record["params_m"],
            macs_g=record["macs_g"],
            top1_acc_pct=record["top1_acc_pct"],
            tags=tags,
        )
    except RegistryError as exc:
        raise RegistryError(f"{where}: {exc}") from None


def _build(cards: Iterable[ModelCard], source_path: str) -> Registry:
    cards = tuple(cards)
    if not cards:
        raise RegistryError(f"{source_path}: registry is empty after load")
    seen: set[str] = set()
    for card in cards:
        if card.name in seen:
            raise RegistryError(
                f"{source_path}: duplicate model name {card.name!r}")
        seen.add(card.name)
    return Registry(cards=cards, source_path=source_path)


def _load_json(text: str, source_path: str) -> Registry:
    try:
        data = json.loads(text)
    except json.JSONDecodeError as exc:
        raise RegistryError(f"{source_path}: invalid JSON: {exc}") from None
    if not isinstance(data, list):
        raise RegistryError(
            f"{source_path}: expected a JSON array of model objects")
    cards = []
    for i, record in enumerate(data):
        where = f"{source_path}: record {i}"
        if not isinstance(record, dict):
            raise RegistryError(f"{where}: expected an object, got "
                                f"{type(record).__name__}")
        cards.append(_card_from_record(record, where))
    return _build(cards, source_path)


def _load_csv(text: str, source_path: str) -> Registry:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames is None:
        raise RegistryError(f"{source_path}: empty CSV, header row required")
    header = [h.strip() for h in reader.fieldnames]
    missing = [f for f in _REQUIRED_FIELDS if f not in header]
    if missing:
        raise RegistryError(
            f"{source_path}: CSV header missing column(s) {missing}; "
            f"got {header}")
    cards = []
    for i, row in enumerate(reader, start=1):
        where = f"{source_path}: row {i}"
        record: dict = {"name": (row.get("name") or "").strip()}
        for fname in ("params_m", "macs_g", "top1_acc_pct"):
            raw = (row.get(fname) or "").strip()
            if not raw:
                record[fname] = None
                continue
            try:
                record[fname] = float(raw)
            except ValueError:
                raise RegistryError(
                    f"{where}: field {fname!r} is not a number: {raw!r}"
                ) from None
        record["tags"] = (row.get("tags") or "").strip()
        cards.append(_card_from_record(record, where))
    return _build(cards, source_path)


def load_registry(source: str | Path | IO[str], fmt: str | None = None) -> Registry:
    """Load and validate a model catalog.

    Args:
        source: Path to a file, or an open text stream.
        fmt: "json" or "csv". Inferred from the file extension when None;
            required for streams.

    Returns:
        A validated Registry preserving input order.

    Raises:
        RegistryError: On malformed records (reported with record index and
            field name), duplicate names, nonpositive numeric fields, or
            an empty catalog.
        ConfigError-like RegistryError: if the format cannot be determined.
    """
    if hasattr(source, "read"):
        text = source.read()
        source_path = getattr(source, "name", "<stream>")
    else:
        path = Path(source)
        source_path = str(path)
        try:
            text = path.read_text(encoding="utf-8")
        except OSError as exc:
            raise RegistryError(f"cannot read registry {source_path}: {exc}") from None
        if fmt is None:
            suffix = path.suffix.lower().lstrip(".")
            if suffix in ("json", "csv"):
                fmt = suffix
    if fmt is None:
        raise RegistryError(
            f"{source_path}: cannot infer format; pass fmt='json' or 'csv'")
    fmt = fmt.lower()
    if fmt == "json":
        return _load_json(text, source_path)
    if fmt == "csv":
        return _load_csv(text, source_path)
    raise RegistryError(f"unsupported registry format {fmt!r}")


def to_json(registry: Registry) -> str:
    """Serialize a registry to its JSON interchange form (full precision)."""
    records = []
    for card in registry.cards:
        record: dict = {
            "name": card.name,
            "params_m": card.params_m,
            "macs_g": card.macs_g,
            "top1_acc_pct": card.top1_acc_pct,
        }
        if card.tags:
            record["tags"] = list(card.tags)
        records.append(record)
    return json.dumps(records, indent=2) + "\n"


def to_csv(registry: Registry) -> str:
    """Serialize a registry to its CSV interchange form (full precision)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(_CSV_HEADER)
    for card in registry.cards:
        # repr() keeps the shortest round-trip decimal form of each float
        writer.writerow([
            card.name,
            repr(card.params_m),
            repr(card.macs_g),
            repr(card.top1_acc_pct),
            ";".join(card.tags),
        ])
    return buf.getvalue()
