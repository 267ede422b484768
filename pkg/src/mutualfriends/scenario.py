"""Task scenario sampling: two KBs over a random attribute subset with
exactly one shared item, plus the skewness grouping of attributes."""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .schema import Schema, Entity
from .util import make_rng

ALPHA_CHOICES = (0.3, 1.0, 3.0)
N_ITEMS_RANGE = (5, 12)  # inclusive
N_ATTRS_CHOICES = (3, 4)
REJECTION_CAP = 10_000


class ScenarioError(RuntimeError):
    pass


class AlphaGroup(str, Enum):
    least_uniform = "least_uniform"
    medium = "medium"
    most_uniform = "most_uniform"


@dataclass(frozen=True)
class Item:
    """One KB row: attribute name -> entity id."""

    values: tuple[tuple[str, str], ...]  # ((attr, entity_id), ...) in attribute order

    def entity_id(self, attr: str) -> str:
        return dict(self.values)[attr]

    def as_dict(self) -> dict[str, str]:
        return dict(self.values)


@dataclass
class KB:
    attrs: list[str]
    items: list[Item]

    def __len__(self) -> int:
        return len(self.items)

    def entity_count(self, entity_id: str) -> int:
        return sum(1 for item in self.items for _, v in item.values if v == entity_id)

    def entity_ids(self) -> set[str]:
        return {v for item in self.items for _, v in item.values}

    def unique_value_count(self, attr: str) -> int:
        return len({item.entity_id(attr) for item in self.items})


@dataclass
class Scenario:
    id: str
    attrs: list[tuple[str, float]]  # (attribute name, alpha)
    kb_a: KB
    kb_b: KB

    @property
    def n_items(self) -> int:
        return len(self.kb_a.items)

    @property
    def attr_names(self) -> list[str]:
        return [a for a, _ in self.attrs]

    def kb(self, side: str) -> KB:
        return self.kb_a if side == "A" else self.kb_b

    def shared_items(self) -> set[Item]:
        return set(self.kb_a.items) & set(self.kb_b.items)

    def to_dict(self) -> dict:
        return {
            "id": self.id,
            "attrs": [{"name": a, "alpha": alpha} for a, alpha in self.attrs],
            "kbs": [
                [item.as_dict() for item in kb.items] for kb in (self.kb_a, self.kb_b)
            ],
        }

    @classmethod
    def from_dict(cls, data: dict) -> "Scenario":
        attrs = [(a["name"], float(a["alpha"])) for a in data["attrs"]]
        names = [a for a, _ in attrs]
        kbs = [
            KB(attrs=names, items=[Item(tuple((a, row[a]) for a in names)) for row in rows])
            for rows in data["kbs"]
        ]
        return cls(id=str(data["id"]), attrs=attrs, kb_a=kbs[0], kb_b=kbs[1])


def polya_sample(values: list[str], alpha: float, n: int,
                 rng: int | np.random.Generator | None = None) -> list[str]:
    """Draw n values from a symmetric Dirichlet-multinomial via the urn scheme.

    The k-th draw picks value e with probability
    (alpha + count_so_far(e)) / (len(values) * alpha + k - 1).
    """
    if len(values) == 0:
        raise ValueError("empty value set")
    if n < 1:
        raise ValueError("n must be >= 1")
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    rng = make_rng(rng)
    weights = [alpha] * len(values)
    total = alpha * len(values)
    out: list[str] = []
    for _ in range(n):
        r = rng.random() * total
        acc = 0.0
        idx = len(values) - 1
        for i, w in enumerate(weights):
            acc += w
            if r < acc:
                idx = i
                break
        out.append(values[idx])
        weights[idx] += 1.0
        total += 1.0
    return out


def _urn_batch(n_values: int, alpha: float, n: int, batch: int,
               rng: np.random.Generator) -> np.ndarray:
    """The urn scheme vectorized over independent attempts.

    Uses the equivalent two-part form of the k-th draw: with probability
    V*alpha / (V*alpha + k) pick uniformly from the value set, otherwise
    copy a uniformly chosen earlier draw. Summing both paths gives back
    (alpha + count(e)) / (V*alpha + k), the draw rule of polya_sample.
    Returns a (batch, n) index array.
    """
    out = np.empty((batch, n), dtype=np.intp)
    base = alpha * n_values
    uniforms = rng.integers(0, n_values, size=(n, batch))
    rows = np.arange(batch)
    out[:, 0] = uniforms[0]
    if n > 1:
        steps = np.arange(1, n, dtype=np.float64)
        fresh = rng.random((n - 1, batch)) < (base / (base + steps))[:, None]
        copy_idx = (rng.random((n - 1, batch)) * steps[:, None]).astype(np.intp)
        for k in range(1, n):
            out[:, k] = np.where(fresh[k - 1], uniforms[k], out[rows, copy_idx[k - 1]])
    return out


def generate_scenario(schema: Schema, rng: int | np.random.Generator | None = None,
                      scenario_id: str | None = None) -> Scenario:
    """Sample one scenario: item count, attribute subset, per-attribute skew,
    and two KBs, rejection-sampled until exactly one item is shared.

    Raises ScenarioError if the rejection cap is exceeded.
    """
    rng = make_rng(rng)
    for attr in schema.attributes:
        if len(attr.value_set) < 2:
            raise ValueError(f"attribute {attr.name!r} needs >= 2 values")

    n_items = int(rng.integers(N_ITEMS_RANGE[0], N_ITEMS_RANGE[1] + 1))
    n_attrs = int(rng.choice(N_ATTRS_CHOICES))
    attr_idx = rng.choice(len(schema.attributes), size=n_attrs, replace=False)
    attr_names = [schema.attributes[int(i)].name for i in attr_idx]
    alphas = [float(rng.choice(ALPHA_CHOICES)) for _ in attr_names]

    value_ids = {
        a: [e.id for e in schema.attribute(a).value_set] for a in attr_names
    }

    def build_kb(columns: dict[str, np.ndarray], row: int) -> KB:
        items = [
            Item(tuple((a, value_ids[a][columns[a][row, i]]) for a in attr_names))
            for i in range(n_items)
        ]
        return KB(attrs=list(attr_names), items=items)

    sizes = [len(value_ids[a]) for a in attr_names]
    remaining = REJECTION_CAP
    batch = 32
    while remaining > 0:
        size = min(batch, remaining)
        remaining -= size
        # one urn call per attribute covers both KBs: rows are independent
        both = {a: _urn_batch(len(value_ids[a]), alpha, n_items, 2 * size, rng)
                for a, alpha in zip(attr_names, alphas)}
        cols_a = {a: draws[:size] for a, draws in both.items()}
        cols_b = {a: draws[size:] for a, draws in both.items()}
        # mixed-radix item codes make the shared-tuple check a set operation
        codes_a = np.zeros((size, n_items), dtype=np.int64)
        codes_b = np.zeros((size, n_items), dtype=np.int64)
        for a, v in zip(attr_names, sizes):
            codes_a = codes_a * v + cols_a[a]
            codes_b = codes_b * v + cols_b[a]
        # vectorized pre-filter: rows with any cross-KB tuple match
        any_match = (codes_a[:, :, None] == codes_b[:, None, :]).any(axis=(1, 2))
        for row in np.flatnonzero(any_match):
            # "one unique common item" counts distinct attribute-value tuples
            if len(set(codes_a[row]) & set(codes_b[row])) == 1:
                kb_a, kb_b = build_kb(cols_a, row), build_kb(cols_b, row)
                sid = (scenario_id if scenario_id is not None
                       else f"s{rng.integers(0, 2**53):013x}")
                return Scenario(id=sid, attrs=list(zip(attr_names, alphas)),
                                kb_a=kb_a, kb_b=kb_b)
        batch = min(batch * 2, 4096)
    raise ScenarioError(f"no unique-shared-item KB pair after {REJECTION_CAP} attempts")


def generate_scenarios(schema: Schema, n: int, seed: int = 0,
                       id_prefix: str = "s") -> list[Scenario]:
    """Generate n scenarios from one seed stream. Parameter draws whose KB
    pairing hits the rejection cap are discarded and redrawn."""
    rng = make_rng(seed)
    out: list[Scenario] = []
    while len(out) < n:
        try:
            out.append(generate_scenario(schema, rng, scenario_id=f"{id_prefix}{len(out):05d}"))
        except ScenarioError:
            continue
    return out


def alpha_groups(scenario: Scenario) -> dict[str, AlphaGroup]:
    """Group attributes by skewness rank: low alpha = skewed = least_uniform.

    Ties are broken by attribute name for a deterministic ranking. With four
    attributes the two middle ranks both map to medium.
    """
    n = len(scenario.attrs)
    if n not in (3, 4):
        raise ValueError(f"expected 3 or 4 attributes, got {n}")
    ranked = sorted(scenario.attrs, key=lambda pair: (pair[1], pair[0]))
    if n == 3:
        groups = [AlphaGroup.least_uniform, AlphaGroup.medium, AlphaGroup.most_uniform]
    else:
        groups = [
            AlphaGroup.least_uniform,
            AlphaGroup.medium,
            AlphaGroup.medium,
            AlphaGroup.most_uniform,
        ]
    return {name: group for (name, _), group in zip(ranked, groups)}


def save_scenarios(path: str, scenarios: list[Scenario]) -> None:
    with open(path, "w", encoding="utf-8") as f:
        for sc in scenarios:
            f.write(json.dumps(sc.to_dict()) + "\n")


def load_scenarios(path: str) -> list[Scenario]:
    out = []
    with open(path, "r", encoding="utf-8") as f:
        for line in f:
            line = line.strip()
            if line:
                out.append(Scenario.from_dict(json.loads(line)))
    return out
