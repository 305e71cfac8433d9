"""NSL-KDD records: the 41-feature schema, line parsing and attack taxonomy."""
from __future__ import annotations

import enum
import hashlib
import math
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Iterable, Optional, Union

N_FEATURES = 41


class DatasetError(ValueError):
    """Malformed input data. ``lineno`` is 1-based when known."""

    def __init__(self, message: str, lineno: Optional[int] = None, path=None):
        self.lineno = lineno
        self.path = path
        where = ""
        if path is not None:
            where += f"{path}:"
        if lineno is not None:
            where += f"{lineno}:"
        super().__init__(f"{where} {message}" if where else message)


class Kind(str, enum.Enum):
    CONTINUOUS = "continuous"
    DISCRETE = "discrete-numeric"
    SYMBOLIC = "symbolic-categorical"
    BINARY = "binary"


class Group(str, enum.Enum):
    INTRINSIC = "Intrinsic"
    CONTENT = "Content"
    TIME_BASED = "TimeBased"
    HOST_BASED = "HostBased"


class Category(str, enum.Enum):
    NORMAL = "Normal"
    DOS = "DoS"
    PROBE = "Probe"
    U2R = "U2R"
    R2L = "R2L"
    U2R_R2L = "U2R+R2L"

    @classmethod
    def parse(cls, text: str) -> "Category":
        key = text.strip().lower().replace("_", "+").replace("-", "+")
        for c in cls:
            if c.value.lower() == key:
                return c
        raise ValueError(f"unknown traffic category {text!r}")

    @property
    def is_attack(self) -> bool:
        return self is not Category.NORMAL


ATTACK_CATEGORIES = (Category.DOS, Category.PROBE, Category.U2R, Category.R2L)

FEATURE_NAMES = (
    "duration", "protocol_type", "service", "flag", "src_bytes", "dst_bytes",
    "land", "wrong_fragment", "urgent", "hot", "num_failed_logins", "logged_in",
    "num_compromised", "root_shell", "su_attempted", "num_root",
    "num_file_creations", "num_shells", "num_access_files", "num_outbound_cmds",
    "is_host_login", "is_guest_login", "count", "srv_count", "serror_rate",
    "srv_serror_rate", "rerror_rate", "srv_rerror_rate", "same_srv_rate",
    "diff_srv_rate", "srv_diff_host_rate", "dst_host_count",
    "dst_host_srv_count", "dst_host_same_srv_rate", "dst_host_diff_srv_rate",
    "dst_host_same_src_port_rate", "dst_host_srv_diff_host_rate",
    "dst_host_serror_rate", "dst_host_srv_serror_rate", "dst_host_rerror_rate",
    "dst_host_srv_rerror_rate",
)

_SYMBOLIC = {2, 3, 4}
_BINARY = {7, 12, 21, 22}
# inclusive 1-based index ranges
_GROUP_RANGES = (
    (Group.INTRINSIC, 1, 9),
    (Group.CONTENT, 10, 22),
    (Group.TIME_BASED, 23, 31),
    (Group.HOST_BASED, 32, 41),
)


@dataclass(frozen=True)
class FeatureSpec:
    index: int  # 1-based
    name: str
    kind: Kind
    group: Group

    @property
    def is_numeric(self) -> bool:
        return self.kind is not Kind.SYMBOLIC


@dataclass(frozen=True)
class FeatureSchema:
    features: tuple

    def __len__(self):
        return len(self.features)

    def __getitem__(self, index: int) -> FeatureSpec:
        """Look up by 1-based feature index."""
        if not 1 <= index <= len(self.features):
            raise IndexError(index)
        return self.features[index - 1]

    def indices(self, group: Group) -> tuple:
        return tuple(f.index for f in self.features if f.group is group)

    @property
    def symbolic_indices(self) -> tuple:
        return tuple(f.index for f in self.features if f.kind is Kind.SYMBOLIC)

    @property
    def numeric_indices(self) -> tuple:
        return tuple(f.index for f in self.features if f.is_numeric)

    def digest(self) -> str:
        text = "\n".join(f"{f.index}:{f.name}:{f.kind.value}:{f.group.value}" for f in self.features)
        return hashlib.sha256(text.encode()).hexdigest()[:16]


def _build_schema() -> FeatureSchema:
    def group_of(i):
        for g, lo, hi in _GROUP_RANGES:
            if lo <= i <= hi:
                return g
        raise AssertionError(i)

    feats = []
    for i, name in enumerate(FEATURE_NAMES, start=1):
        if i in _SYMBOLIC:
            kind = Kind.SYMBOLIC
        elif i in _BINARY:
            kind = Kind.BINARY
        else:
            kind = Kind.CONTINUOUS
        feats.append(FeatureSpec(i, name, kind, group_of(i)))
    return FeatureSchema(tuple(feats))


SCHEMA = _build_schema()


@dataclass(frozen=True)
class RawRecord:
    """One NSL-KDD line. Symbolic features are ``str``, all others ``float``."""

    features: tuple
    label: str
    difficulty: Optional[int] = None

    def __post_init__(self):
        if len(self.features) != N_FEATURES:
            raise DatasetError(f"expected {N_FEATURES} features, got {len(self.features)}")
        if not self.label:
            raise DatasetError("empty label")
        for spec, value in zip(SCHEMA.features, self.features):
            if spec.kind is Kind.SYMBOLIC:
                if not isinstance(value, str) or not value:
                    raise DatasetError(f"{spec.name}: expected category text, got {value!r}")
            elif not (isinstance(value, float) and math.isfinite(value) and value >= 0):
                raise DatasetError(f"{spec.name}: expected finite non-negative float, got {value!r}")
        if self.difficulty is not None and not 0 <= self.difficulty <= 21:
            raise DatasetError(f"difficulty {self.difficulty} outside [0, 21]")


def _format_number(value: float) -> str:
    if value.is_integer() and abs(value) < 2**53:
        return str(int(value))
    return repr(value)


def serialize_record(record: RawRecord) -> str:
    parts = [v if isinstance(v, str) else _format_number(v) for v in record.features]
    parts.append(record.label)
    if record.difficulty is not None:
        parts.append(str(record.difficulty))
    return ",".join(parts)


def parse_record(line: str) -> RawRecord:
    """Parse a 42-field (no difficulty) or 43-field NSL-KDD line."""
    fields = [f.strip() for f in line.strip().split(",")]
    if len(fields) not in (N_FEATURES + 1, N_FEATURES + 2):
        n = 0 if not line.strip() else len(fields)
        raise DatasetError(f"expected 42 or 43 comma-separated fields, got {n}")
    values = []
    for spec, text in zip(SCHEMA.features, fields):
        if spec.kind is Kind.SYMBOLIC:
            values.append(text)
            continue
        try:
            value = float(text)
        except ValueError:
            raise DatasetError(f"{spec.name}: non-numeric value {text!r}") from None
        if not math.isfinite(value) or value < 0:
            raise DatasetError(f"{spec.name}: value {text!r} is not a finite non-negative number")
        if spec.kind is Kind.BINARY and value not in (0.0, 1.0):
            raise DatasetError(f"{spec.name}: unknown boolean encoding {text!r}")
        values.append(value)
    difficulty = None
    if len(fields) == N_FEATURES + 2:
        try:
            difficulty = int(fields[-1])
        except ValueError:
            raise DatasetError(f"difficulty: not an integer {fields[-1]!r}") from None
    return RawRecord(tuple(values), fields[N_FEATURES], difficulty)


@dataclass(frozen=True)
class AttackTaxonomy:
    mapping: dict

    def __post_init__(self):
        if self.mapping.get("normal") is not Category.NORMAL:
            raise ValueError("taxonomy must map 'normal' to Normal")
        bad = {c for c in self.mapping.values() if c is Category.U2R_R2L}
        if bad:
            raise ValueError("taxonomy labels must map to one of the five base categories")

    def __contains__(self, label: str) -> bool:
        return label.strip().lower() in self.mapping

    def category(self, label: str) -> Category:
        return self.mapping[label.strip().lower()]

    @classmethod
    def from_lines(cls, lines: Iterable[str]) -> "AttackTaxonomy":
        mapping = {}
        for lineno, line in enumerate(lines, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            try:
                name, cat = (p.strip() for p in line.split(","))
                mapping[name.lower()] = Category.parse(cat)
            except ValueError as exc:
                raise DatasetError(f"bad taxonomy line {line!r}: {exc}", lineno) from None
        return cls(mapping)

    @classmethod
    def from_file(cls, path) -> "AttackTaxonomy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_lines(fh)

    @classmethod
    def default(cls) -> "AttackTaxonomy":
        text = resources.files("ids_ebgan").joinpath("data/attack_taxonomy.txt").read_text("utf-8")
        return cls.from_lines(text.splitlines())


@dataclass
class Partition:
    normal: list = field(default_factory=list)
    attacks: dict = field(default_factory=lambda: {c: [] for c in ATTACK_CATEGORIES})

    def __len__(self):
        return len(self.normal) + sum(len(v) for v in self.attacks.values())

    def counts(self) -> dict:
        out = {Category.NORMAL: len(self.normal)}
        out.update({c: len(v) for c, v in self.attacks.items()})
        return out


def read_records(path: Union[str, Path], taxonomy: Optional[AttackTaxonomy] = None):
    """Parse every line of ``path`` in order.

    Returns a list of ``(record, category)`` pairs; ``category`` is ``None`` when
    no taxonomy is given. Blank lines are skipped but still counted for line numbers.
    """
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                rec = parse_record(line)
            except DatasetError as exc:
                raise DatasetError(str(exc), lineno, path) from None
            cat = None
            if taxonomy is not None:
                if rec.label not in taxonomy:
                    raise DatasetError(f"unknown attack label {rec.label!r}", lineno, path)
                cat = taxonomy.category(rec.label)
            out.append((rec, cat))
    return out


def load_split(path, taxonomy: Optional[AttackTaxonomy] = None) -> Partition:
    taxonomy = taxonomy or AttackTaxonomy.default()
    part = Partition()
    for rec, cat in read_records(path, taxonomy):
        if cat is Category.NORMAL:
            part.normal.append(rec)
        else:
            part.attacks[cat].append(rec)
    return part


def merge_rare_categories(part: Partition) -> Partition:
    """Fold U2R and R2L into one U2R+R2L bucket (U2R records first)."""
    rare = (Category.U2R, Category.R2L, Category.U2R_R2L)
    attacks = {c: list(v) for c, v in part.attacks.items() if c not in rare}
    attacks[Category.U2R_R2L] = (
        list(part.attacks.get(Category.U2R_R2L, ()))
        + list(part.attacks.get(Category.U2R, ()))
        + list(part.attacks.get(Category.R2L, ()))
    )
    return Partition(list(part.normal), attacks)


def training_bucket(part: Partition, category: Category) -> list:
    """Malicious records used to train against ``category``."""
    if category in (Category.U2R, Category.R2L, Category.U2R_R2L):
        part = merge_rare_categories(part)
        return part.attacks[Category.U2R_R2L]
    if category is Category.NORMAL:
        raise ValueError("Normal is not an attack category")
    return part.attacks[category]
