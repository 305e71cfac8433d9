"""One-hot + min-max encoding of NSL-KDD records and per-attack functional masks."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import SCHEMA, Category, FeatureSchema, Group, Kind, RawRecord

UNKNOWN = "<unknown>"
REFERENCE_ENCODED_DIM = 121
FORMAT_VERSION = 1


class EncodingError(ValueError):
    pass


@dataclass(frozen=True)
class EncodingModel:
    """Fitted vocabularies and per-column ranges.

    ``vocabularies`` maps 1-based symbolic feature index to its sorted category
    tuple; ``ranges`` maps 1-based numeric feature index to ``(x_min, x_max)``.
    Encoded columns follow raw feature order, with each symbolic feature
    expanded in place to a one-hot block.
    """

    vocabularies: dict
    ranges: dict
    schema_digest: str = SCHEMA.digest()

    def __post_init__(self):
        for idx, vocab in self.vocabularies.items():
            if list(vocab) != sorted(set(vocab)):
                raise EncodingError(f"vocabulary for feature {idx} must be sorted and duplicate-free")
        for idx, (lo, hi) in self.ranges.items():
            if not lo <= hi:
                raise EncodingError(f"feature {idx}: x_min {lo} > x_max {hi}")
        expected = set(SCHEMA.symbolic_indices) | set(SCHEMA.numeric_indices)
        if set(self.vocabularies) | set(self.ranges) != expected:
            raise EncodingError("model does not cover every schema feature")
        slices, start = {}, 0
        for spec in SCHEMA.features:
            width = len(self.vocabularies[spec.index]) if spec.kind is Kind.SYMBOLIC else 1
            slices[spec.index] = (start, start + width)
            start += width
        object.__setattr__(self, "_slices", slices)
        object.__setattr__(self, "_dim", start)
        object.__setattr__(
            self, "_lookup", {i: {c: k for k, c in enumerate(v)} for i, v in self.vocabularies.items()}
        )

    @property
    def encoded_dim(self) -> int:
        return self._dim

    def columns(self, index: int) -> range:
        """Encoded column indices produced by raw feature ``index`` (1-based)."""
        lo, hi = self._slices[index]
        return range(lo, hi)

    def column_names(self) -> list:
        names = []
        for spec in SCHEMA.features:
            if spec.kind is Kind.SYMBOLIC:
                names.extend(f"{spec.name}={c}" for c in self.vocabularies[spec.index])
            else:
                names.append(spec.name)
        return names

    # persistence -----------------------------------------------------------

    def to_text(self) -> str:
        lines = [
            "# ids-ebgan encoding model",
            f"version\t{FORMAT_VERSION}",
            f"schema\t{self.schema_digest}",
            f"encoded_dim\t{self.encoded_dim}",
        ]
        for idx in sorted(self.vocabularies):
            lines.append("\t".join(["vocab", str(idx), SCHEMA[idx].name, *self.vocabularies[idx]]))
        for idx in sorted(self.ranges):
            lo, hi = self.ranges[idx]
            lines.append("\t".join(["range", str(idx), SCHEMA[idx].name, repr(lo), repr(hi)]))
        return "\n".join(lines) + "\n"

    @classmethod
    def from_text(cls, text: str) -> "EncodingModel":
        header, vocabs, ranges = {}, {}, {}
        for line in text.splitlines():
            if not line or line.startswith("#"):
                continue
            parts = line.split("\t")
            tag = parts[0]
            if tag == "vocab":
                vocabs[int(parts[1])] = tuple(parts[3:])
            elif tag == "range":
                ranges[int(parts[1])] = (float(parts[3]), float(parts[4]))
            elif len(parts) == 2:
                header[tag] = parts[1]
            else:
                raise EncodingError(f"unrecognised line {line!r}")
        if int(header.get("version", -1)) != FORMAT_VERSION:
            raise EncodingError(f"unsupported encoding artifact version {header.get('version')!r}")
        if header.get("schema") != SCHEMA.digest():
            raise EncodingError("encoding artifact was built for a different feature schema")
        model = cls(vocabs, ranges, header["schema"])
        if model.encoded_dim != int(header["encoded_dim"]):
            raise EncodingError("encoded_dim in header does not match vocabularies")
        return model

    def save(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(self.to_text())

    @classmethod
    def load(cls, path) -> "EncodingModel":
        with open(path, encoding="utf-8") as fh:
            return cls.from_text(fh.read())


def fit_encoding(train_records: Sequence[RawRecord]) -> EncodingModel:
    if not train_records:
        raise EncodingError("cannot fit an encoding on zero records")
    vocabs = {
        i: tuple(sorted({r.features[i - 1] for r in train_records})) for i in SCHEMA.symbolic_indices
    }
    numeric = _numeric_matrix(train_records)
    lo, hi = numeric.min(axis=0), numeric.max(axis=0)
    ranges = {i: (float(a), float(b)) for i, a, b in zip(SCHEMA.numeric_indices, lo, hi)}
    return EncodingModel(vocabs, ranges)


def _numeric_matrix(records) -> np.ndarray:
    cols = [i - 1 for i in SCHEMA.numeric_indices]
    return np.array([[r.features[c] for c in cols] for r in records], dtype=np.float64).reshape(
        len(records), len(cols)
    )


def encode_many(records: Sequence[RawRecord], model: EncodingModel) -> np.ndarray:
    """Encode records into an ``(n, d)`` float64 matrix with entries in [0, 1]."""
    n = len(records)
    out = np.zeros((n, model.encoded_dim))
    num = _numeric_matrix(records)
    for k, idx in enumerate(SCHEMA.numeric_indices):
        lo, hi = model.ranges[idx]
        col = model.columns(idx).start
        if hi > lo:
            out[:, col] = np.clip((num[:, k] - lo) / (hi - lo), 0.0, 1.0)
        # constant training column: stays 0
    for idx in SCHEMA.symbolic_indices:
        lookup = model._lookup[idx]
        start = model.columns(idx).start
        for row, r in enumerate(records):
            pos = lookup.get(r.features[idx - 1])
            if pos is not None:
                out[row, start + pos] = 1.0
    return out


def encode(record: RawRecord, model: EncodingModel) -> np.ndarray:
    return encode_many([record], model)[0]


def decode_numeric(vector, model: EncodingModel, round_binary: bool = False) -> tuple:
    """Invert the encoding as far as possible.

    Numeric columns are mapped back through the min-max range; one-hot blocks
    map to their argmax category, or ``UNKNOWN`` when the block is all zero.
    ``round_binary`` snaps binary features to 0/1, for exporting generated
    records as raw traffic lines.
    """
    v = np.asarray(vector, dtype=np.float64)
    if v.shape != (model.encoded_dim,):
        raise EncodingError(f"expected vector of length {model.encoded_dim}, got shape {v.shape}")
    out = []
    for spec in SCHEMA.features:
        cols = model.columns(spec.index)
        if spec.kind is Kind.SYMBOLIC:
            block = v[cols.start:cols.stop]
            if not np.any(block > 0):
                out.append(UNKNOWN)
            else:
                out.append(model.vocabularies[spec.index][int(np.argmax(block))])
        else:
            lo, hi = model.ranges[spec.index]
            value = float(lo + v[cols.start] * (hi - lo))
            if round_binary and spec.kind is Kind.BINARY:
                value = float(value >= 0.5)
            out.append(value)
    return tuple(out)


# functional masks -----------------------------------------------------------

# feature groups whose values must be kept to preserve the attack's function
FUNCTIONAL_GROUPS = {
    Category.DOS: (Group.INTRINSIC, Group.TIME_BASED),
    Category.PROBE: (Group.INTRINSIC, Group.TIME_BASED, Group.HOST_BASED),
    Category.U2R_R2L: (Group.INTRINSIC, Group.CONTENT),
}


@dataclass(frozen=True)
class FunctionalMask:
    """Which encoded columns a generator may rewrite for one attack category.

    ``replaced_raw`` uses 1-based raw feature indices. For datasets that do not
    follow the NSL-KDD schema the raw sets can be empty and only
    ``replaced_encoded`` is meaningful.
    """

    category: str
    preserved_raw: frozenset
    replaced_raw: tuple
    replaced_encoded: tuple

    @property
    def n_replaced(self) -> int:
        return len(self.replaced_encoded)

    def preserved_encoded(self, dim: int) -> np.ndarray:
        keep = np.ones(dim, dtype=bool)
        keep[list(self.replaced_encoded)] = False
        return np.flatnonzero(keep)

    @classmethod
    def from_columns(cls, replaced_encoded, name: str = "custom") -> "FunctionalMask":
        return cls(name, frozenset(), (), tuple(sorted(int(c) for c in replaced_encoded)))


def build_mask(category, model: EncodingModel, schema: FeatureSchema = SCHEMA) -> FunctionalMask:
    if isinstance(category, str) and not isinstance(category, Category):
        category = Category.parse(category)
    if category in (Category.U2R, Category.R2L):
        category = Category.U2R_R2L
    if category not in FUNCTIONAL_GROUPS:
        raise EncodingError(f"no functional mask is defined for {category.value}")
    keep = FUNCTIONAL_GROUPS[category]
    preserved = frozenset(f.index for f in schema.features if f.group in keep)
    replaced = tuple(f.index for f in schema.features if f.group not in keep)
    if any(schema[i].kind is Kind.SYMBOLIC for i in replaced):
        raise EncodingError("symbolic features cannot be replaced")
    encoded = tuple(c for i in replaced for c in model.columns(i))
    return FunctionalMask(category.value, preserved, replaced, encoded)
