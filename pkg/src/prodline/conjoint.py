"""Domain types for conjoint surveys: attribute schemas, product profiles,
pairwise questions, and per-customer response sets.

All level indexing is global and 0-based: the L levels of the A attributes
are laid out consecutively, and ``AttributeSchema`` is the single source of
truth for which contiguous block belongs to which attribute.  Every
downstream matrix (question rows Q, product encodings x, the gamma
linearization variables) shares this index space.

Metric responses are stored as equality rows (``equality_rows`` flag on
``ResponseSet``) and expanded into inequality pairs only when an
optimization model is built, so the nonnegative dual-weight convention of
the robust share-of-choice model holds verbatim.
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import Iterable, Literal, Sequence

import numpy as np
from numpy.typing import NDArray

__all__ = [
    "AttributeSchema",
    "PartworthBox",
    "ProductLine",
    "ProductProfile",
    "Question",
    "ResponseSet",
    "SchemaError",
    "encode_question",
    "flip_question",
    "product_utility",
    "question_from_row",
]

QuestionKind = Literal["metric", "choice"]


class SchemaError(ValueError):
    """A profile, question, or response violates its attribute schema."""


def _frozen_array(values: Iterable, dtype) -> NDArray:
    arr = np.asarray(values, dtype=dtype)
    arr.setflags(write=False)
    return arr


@dataclass(frozen=True)
class AttributeSchema:
    """Partition of the global level index space ``0..L-1`` into attributes.

    ``levels_per_attribute[a]`` is the number of candidate levels of
    attribute ``a``; attribute ``a`` owns the contiguous index block
    ``range(offsets[a], offsets[a] + levels_per_attribute[a])``.
    """

    levels_per_attribute: tuple[int, ...]

    def __post_init__(self) -> None:
        counts = tuple(int(c) for c in self.levels_per_attribute)
        if not counts or any(c < 1 for c in counts):
            raise SchemaError(f"levels_per_attribute must be positive, got {counts}")
        object.__setattr__(self, "levels_per_attribute", counts)

    @property
    def attribute_count(self) -> int:
        return len(self.levels_per_attribute)

    @property
    def total_levels(self) -> int:
        return sum(self.levels_per_attribute)

    @property
    def offsets(self) -> tuple[int, ...]:
        out, acc = [], 0
        for c in self.levels_per_attribute:
            out.append(acc)
            acc += c
        return tuple(out)

    @property
    def level_to_attribute(self) -> tuple[int, ...]:
        out: list[int] = []
        for a, c in enumerate(self.levels_per_attribute):
            out.extend([a] * c)
        return tuple(out)

    def levels_of(self, attribute: int) -> range:
        """Global level indices owned by ``attribute``."""
        off = self.offsets[attribute]
        return range(off, off + self.levels_per_attribute[attribute])

    def to_json(self) -> dict:
        return {
            "attribute_count": self.attribute_count,
            "levels_per_attribute": list(self.levels_per_attribute),
            "total_levels": self.total_levels,
            "level_to_attribute": list(self.level_to_attribute),
        }

    @classmethod
    def from_json(cls, data: dict) -> "AttributeSchema":
        schema = cls(tuple(data["levels_per_attribute"]))
        for key, expected in (
            ("attribute_count", schema.attribute_count),
            ("total_levels", schema.total_levels),
            ("level_to_attribute", list(schema.level_to_attribute)),
        ):
            if key in data and list(np.atleast_1d(data[key])) != list(np.atleast_1d(expected)):
                raise SchemaError(f"inconsistent schema JSON: field {key!r}")
        return schema


@dataclass(frozen=True)
class ProductProfile:
    """Binary encoding of one product: exactly one level per attribute."""

    x: NDArray[np.int8]

    def __post_init__(self) -> None:
        object.__setattr__(self, "x", _frozen_array(self.x, np.int8))

    @classmethod
    def from_levels(cls, schema: AttributeSchema, levels: Sequence[int]) -> "ProductProfile":
        """Build a profile choosing ``levels[a]`` (local, 0-based) for each attribute."""
        if len(levels) != schema.attribute_count:
            raise SchemaError("one level choice per attribute required")
        x = np.zeros(schema.total_levels, dtype=np.int8)
        for a, loc in enumerate(levels):
            if not 0 <= loc < schema.levels_per_attribute[a]:
                raise SchemaError(f"attribute {a} has no level {loc}")
            x[schema.offsets[a] + loc] = 1
        return cls(x)

    def validate(self, schema: AttributeSchema) -> None:
        if self.x.shape != (schema.total_levels,):
            raise SchemaError(
                f"profile length {self.x.shape} does not match schema L={schema.total_levels}"
            )
        if not np.isin(self.x, (0, 1)).all():
            raise SchemaError("profile entries must be 0/1")
        for a in range(schema.attribute_count):
            picked = int(self.x[list(schema.levels_of(a))].sum())
            if picked != 1:
                raise SchemaError(f"attribute {a} selects {picked} levels (exactly 1 required)")

    def selected_levels(self, schema: AttributeSchema) -> tuple[int, ...]:
        """Global index of the chosen level of each attribute."""
        return tuple(int(l) for l in np.flatnonzero(self.x == 1))

    def to_json(self) -> dict:
        return {"x": [int(v) for v in self.x]}

    @classmethod
    def from_json(cls, data: dict) -> "ProductProfile":
        return cls(np.asarray(data["x"], dtype=np.int8))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ProductProfile) and np.array_equal(self.x, other.x)

    def __hash__(self) -> int:
        return hash(self.x.tobytes())


@dataclass(frozen=True)
class ProductLine:
    """An offered assortment of M products."""

    products: tuple[ProductProfile, ...]

    def __post_init__(self) -> None:
        if len(self.products) < 1:
            raise SchemaError("a product line offers at least one product")
        object.__setattr__(self, "products", tuple(self.products))

    @property
    def M(self) -> int:
        return len(self.products)

    def validate(self, schema: AttributeSchema) -> None:
        for p in self.products:
            p.validate(schema)

    def as_matrix(self) -> NDArray[np.int8]:
        """M x L stacked product encodings."""
        return np.stack([p.x for p in self.products])

    def to_json(self) -> dict:
        return {"products": [p.to_json() for p in self.products]}

    @classmethod
    def from_json(cls, data: dict) -> "ProductLine":
        return cls(tuple(ProductProfile.from_json(p) for p in data["products"]))

    def __eq__(self, other: object) -> bool:
        return isinstance(other, ProductLine) and self.products == other.products

    def __hash__(self) -> int:
        return hash(tuple(self.products))


@dataclass(frozen=True)
class Question:
    """One pairwise comparison, encoded as the signed difference q = x1 - x2.

    ``intensity`` is the elicited utility gap for metric questions; for
    choice questions it is the price gap in the direction of the first
    profile.  Within every attribute the entries of q sum to zero.
    """

    q: NDArray[np.int8]
    kind: QuestionKind
    intensity: float
    profile_pair: tuple[ProductProfile, ProductProfile]
    prices: tuple[float, float] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "q", _frozen_array(self.q, np.int8))
        object.__setattr__(self, "intensity", float(self.intensity))
        object.__setattr__(self, "profile_pair", tuple(self.profile_pair))
        if self.prices is not None:
            object.__setattr__(self, "prices", (float(self.prices[0]), float(self.prices[1])))

    def validate(self, schema: AttributeSchema) -> None:
        first, second = self.profile_pair
        first.validate(schema)
        second.validate(schema)
        if not np.array_equal(self.q, first.x.astype(np.int16) - second.x.astype(np.int16)):
            raise SchemaError("q must equal first.x - second.x")
        for a in range(schema.attribute_count):
            if int(self.q[list(schema.levels_of(a))].sum()) != 0:
                raise SchemaError(f"question entries of attribute {a} do not sum to zero")

    def to_json(self) -> dict:
        return {
            "q": [int(v) for v in self.q],
            "kind": self.kind,
            "intensity": self.intensity,
            "profile_pair": [p.to_json() for p in self.profile_pair],
            "prices": list(self.prices) if self.prices is not None else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Question":
        prices = data.get("prices")
        return cls(
            q=np.asarray(data["q"], dtype=np.int8),
            kind=data["kind"],
            intensity=float(data["intensity"]),
            profile_pair=tuple(ProductProfile.from_json(p) for p in data["profile_pair"]),
            prices=tuple(prices) if prices is not None else None,
        )


@dataclass(frozen=True)
class ResponseSet:
    """All answered questions of one customer.

    The stacked matrix ``Q`` (K x L) and vector ``r`` are derived views of
    ``questions``; row k is questions[k].q with right-hand side
    questions[k].intensity.  Metric rows are equalities u . q = r, choice
    rows are halfspaces u . q >= r.
    """

    customer_id: int
    questions: tuple[Question, ...] = ()

    def __post_init__(self) -> None:
        object.__setattr__(self, "questions", tuple(self.questions))

    def __len__(self) -> int:
        return len(self.questions)

    @property
    def Q(self) -> NDArray[np.float64]:
        if not self.questions:
            return np.zeros((0, 0))
        return np.stack([np.asarray(q.q, dtype=np.float64) for q in self.questions])

    @property
    def r(self) -> NDArray[np.float64]:
        return np.array([q.intensity for q in self.questions], dtype=np.float64)

    @property
    def equality_rows(self) -> NDArray[np.bool_]:
        return np.array([q.kind == "metric" for q in self.questions], dtype=bool)

    def with_question(self, question: Question) -> "ResponseSet":
        return dataclasses.replace(self, questions=self.questions + (question,))

    def to_json(self) -> dict:
        return {
            "customer_id": self.customer_id,
            "questions": [q.to_json() for q in self.questions],
            "Q": [[int(v) for v in q.q] for q in self.questions],
            "r": [q.intensity for q in self.questions],
            "equality_rows": [bool(b) for b in self.equality_rows],
        }

    @classmethod
    def from_json(cls, data: dict) -> "ResponseSet":
        rs = cls(
            customer_id=int(data["customer_id"]),
            questions=tuple(Question.from_json(q) for q in data["questions"]),
        )
        if "Q" in data and len(data["Q"]) != len(rs.questions):
            raise SchemaError("response JSON: Q row count does not match questions")
        return rs


@dataclass(frozen=True)
class PartworthBox:
    """Finite coordinate bounds on partworth vectors.

    Keeps every uncertainty polyhedron bounded, so big-M constants,
    diameters, and hit-and-run line searches are finite.
    """

    lower: NDArray[np.float64]
    upper: NDArray[np.float64]

    def __post_init__(self) -> None:
        lo = _frozen_array(self.lower, np.float64)
        up = _frozen_array(self.upper, np.float64)
        if lo.shape != up.shape or lo.ndim != 1:
            raise ValueError("box bounds must be equal-length vectors")
        if not np.all(lo < up):
            raise ValueError("box requires lower < upper in every coordinate")
        if not (np.isfinite(lo).all() and np.isfinite(up).all()):
            raise ValueError("box bounds must be finite")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", up)

    @classmethod
    def symmetric(cls, length: int, half_width: float = 50.0) -> "PartworthBox":
        return cls(np.full(length, -half_width), np.full(length, half_width))

    @property
    def dimension(self) -> int:
        return self.lower.shape[0]

    def contains(self, u: NDArray, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=np.float64)
        return bool(np.all(u >= self.lower - tol) and np.all(u <= self.upper + tol))

    def to_json(self) -> dict:
        return {"lower": list(map(float, self.lower)), "upper": list(map(float, self.upper))}

    @classmethod
    def from_json(cls, data: dict) -> "PartworthBox":
        return cls(np.asarray(data["lower"], float), np.asarray(data["upper"], float))


def encode_question(
    first: ProductProfile,
    second: ProductProfile,
    kind: QuestionKind,
    intensity: float | None = None,
    prices: tuple[float, float] | None = None,
    schema: AttributeSchema | None = None,
) -> Question:
    """Encode the comparison of two profiles as a signed difference row.

    For choice questions with prices, the intensity is the price gap
    p_first - p_second (the elicited halfspace is u . q >= p1 - p2).
    Identical profiles are rejected: the all-zero row carries no
    information for either kind.
    """
    if first.x.shape != second.x.shape:
        raise SchemaError("profiles come from different schemas")
    if schema is not None:
        first.validate(schema)
        second.validate(schema)
    q = first.x.astype(np.int8) - second.x.astype(np.int8)
    if not q.any():
        raise SchemaError("identical profiles yield the all-zero row")
    if kind == "choice":
        if prices is not None:
            intensity = float(prices[0]) - float(prices[1])
        elif intensity is None:
            raise ValueError("choice question needs prices or an explicit intensity")
    elif kind == "metric":
        if intensity is None:
            raise ValueError("metric question needs an intensity")
    else:
        raise ValueError(f"unknown question kind {kind!r}")
    return Question(q=q, kind=kind, intensity=float(intensity), profile_pair=(first, second), prices=prices)


def question_from_row(
    schema: AttributeSchema,
    q: NDArray,
    kind: QuestionKind,
    intensity: float,
    prices: tuple[float, float] | None = None,
) -> Question:
    """Reconstruct a Question from a bare signed row.

    Any valid row decomposes per attribute into either all zeros (the two
    profiles share that level; level 0 is used for both) or a single +1/-1
    pair (the first profile takes the +1 level, the second the -1 level).
    Used when questions arrive as design-table rows rather than as
    profile pairs.
    """
    q = np.asarray(q)
    if q.shape != (schema.total_levels,):
        raise SchemaError(f"row length {q.shape} does not match schema ({schema.total_levels})")
    first_levels: list[int] = []
    second_levels: list[int] = []
    for a in range(schema.attribute_count):
        lv = list(schema.levels_of(a))
        seg = q[lv]
        plus = [i for i, v in enumerate(seg) if v == 1]
        minus = [i for i, v in enumerate(seg) if v == -1]
        if not np.isin(seg, (-1, 0, 1)).all() or len(plus) != len(minus) or len(plus) > 1:
            raise SchemaError(f"attribute {a} entries do not form a valid comparison")
        if plus:
            first_levels.append(plus[0])
            second_levels.append(minus[0])
        else:
            first_levels.append(0)
            second_levels.append(0)
    first = ProductProfile.from_levels(schema, first_levels)
    second = ProductProfile.from_levels(schema, second_levels)
    if first == second:
        raise SchemaError("all-zero row has no profile pair")
    return encode_question(first, second, kind, intensity=intensity, prices=prices, schema=schema)


def flip_question(question: Question) -> Question:
    """Reverse the orientation of a choice question (choice of the second product)."""
    if question.kind != "choice":
        raise ValueError("only choice questions flip")
    prices = question.prices
    return Question(
        q=-question.q.astype(np.int8),
        kind="choice",
        intensity=-question.intensity,
        profile_pair=(question.profile_pair[1], question.profile_pair[0]),
        prices=(prices[1], prices[0]) if prices is not None else None,
    )


def product_utility(u: NDArray, x: ProductProfile) -> float:
    """Utility of a product: the sum of its selected levels' partworths."""
    u = np.asarray(u, dtype=np.float64)
    if u.shape != x.x.shape:
        raise ValueError(f"partworth length {u.shape} does not match profile {x.x.shape}")
    return float(u @ x.x)
