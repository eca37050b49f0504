"""Preference taxonomies and synthetic labeled profile datasets.

A profile holds one selected class per category. Datasets are stored as an
integer label matrix of shape ``(n_profiles, n_categories)`` so the rest of
the pipeline can stay vectorized; :class:`Profile` is the per-user view.
"""
from __future__ import annotations

import io
import os
from dataclasses import dataclass, field
from typing import Iterable, Optional, Sequence, Union

import numpy as np

__all__ = [
    "Category",
    "Taxonomy",
    "Profile",
    "LabeledDataset",
    "builtin_taxonomy",
    "generate_dataset",
    "archetype_centers",
    "write_dataset",
    "read_dataset",
]

MOVIE_CLASSES = ("Action", "Comedy", "Drama", "Fantasy", "Horror", "Romance", "Thriller")
MUSIC_CLASSES = ("Classical", "Country", "Electro", "Jazz", "Pop", "Rap", "Rock", "Techno")

# Support columns of the reference classification reports, usable as
# class_weights to reproduce their class imbalance.
MOVIE_SUPPORT = (8550, 5693, 5691, 5751, 5721, 5690, 2904)
MUSIC_SUPPORT = (1460, 716, 1410, 1424, 1396, 717, 1432, 1445)


@dataclass(frozen=True)
class Category:
    name: str
    classes: tuple

    def __post_init__(self):
        object.__setattr__(self, "classes", tuple(self.classes))
        if len(self.classes) < 2:
            raise ValueError(f"category {self.name!r} needs at least 2 classes")
        if len(set(self.classes)) != len(self.classes):
            raise ValueError(f"duplicate class names in category {self.name!r}")


@dataclass(frozen=True)
class Taxonomy:
    """Ordered categories, each with an ordered list of class names."""

    name: str
    categories: tuple

    def __post_init__(self):
        object.__setattr__(self, "categories", tuple(self.categories))
        if not self.categories:
            raise ValueError("taxonomy needs at least one category")
        names = [c.name for c in self.categories]
        if len(set(names)) != len(names):
            raise ValueError("duplicate category names")

    @property
    def n_categories(self) -> int:
        return len(self.categories)

    @property
    def class_counts(self) -> tuple:
        return tuple(len(c.classes) for c in self.categories)

    @property
    def n_classes(self) -> int:
        """Total class count, the number of distinct encodable preferences."""
        return sum(self.class_counts)

    def category_index(self, name: str) -> int:
        for i, c in enumerate(self.categories):
            if c.name == name:
                return i
        raise KeyError(f"no category named {name!r} in taxonomy {self.name!r}")

    def universe(self) -> list:
        """All class names across categories, in taxonomy order."""
        return [v for c in self.categories for v in c.classes]

    def values_of(self, labels: Sequence[int]) -> list:
        """Class names selected by one row of labels."""
        return [c.classes[int(j)] for c, j in zip(self.categories, labels)]


@dataclass(frozen=True)
class Profile:
    selections: tuple

    def validate(self, taxonomy: Taxonomy) -> None:
        if len(self.selections) != taxonomy.n_categories:
            raise ValueError(
                f"profile has {len(self.selections)} selections, taxonomy has "
                f"{taxonomy.n_categories} categories"
            )
        for j, n in zip(self.selections, taxonomy.class_counts):
            if not 0 <= j < n:
                raise ValueError(f"class index {j} out of range [0, {n})")

    def values(self, taxonomy: Taxonomy) -> list:
        return taxonomy.values_of(self.selections)


@dataclass
class LabeledDataset:
    """Profiles as an ``(n, n_categories)`` label matrix.

    ``archetypes`` holds the latent group of each profile when the dataset was
    drawn from an archetype mixture, else ``None``.
    """

    taxonomy: Taxonomy
    labels: np.ndarray
    seed: int = 0
    archetypes: Optional[np.ndarray] = field(default=None, compare=False)

    def __post_init__(self):
        labels = np.asarray(self.labels, dtype=np.int64)
        if labels.ndim != 2 or labels.shape[1] != self.taxonomy.n_categories:
            raise ValueError(
                f"labels must have shape (n, {self.taxonomy.n_categories}), got {labels.shape}"
            )
        counts = np.asarray(self.taxonomy.class_counts)
        if labels.size and ((labels < 0).any() or (labels >= counts).any()):
            raise ValueError("label out of range for taxonomy")
        self.labels = labels

    def __len__(self) -> int:
        return self.labels.shape[0]

    def __eq__(self, other):
        if not isinstance(other, LabeledDataset):
            return NotImplemented
        return (
            self.taxonomy == other.taxonomy
            and self.seed == other.seed
            and np.array_equal(self.labels, other.labels)
        )

    @property
    def profiles(self) -> list:
        return [Profile(tuple(int(j) for j in row)) for row in self.labels]

    def values(self, i: int) -> list:
        return self.taxonomy.values_of(self.labels[i])


def _sport_names():
    return tuple(f"Sport{i:02d}" for i in range(1, 13))


def _destination_names():
    return tuple(f"Dest{i:02d}" for i in range(1, 12))


def builtin_taxonomy(name: str) -> Taxonomy:
    """Return the ``preference`` (7/8/12 classes) or ``flight`` (11/3) taxonomy."""
    if name == "preference":
        return Taxonomy(
            "preference",
            (
                Category("movies", MOVIE_CLASSES),
                Category("music", MUSIC_CLASSES),
                Category("sports", _sport_names()),
            ),
        )
    if name == "flight":
        return Taxonomy(
            "flight",
            (
                Category("destination", _destination_names()),
                Category("flight_class", ("Economy", "Business", "First")),
            ),
        )
    raise ValueError(f"unknown taxonomy {name!r}; expected 'preference' or 'flight'")


def _check_weights(taxonomy: Taxonomy, class_weights) -> list:
    if class_weights is None:
        return [np.full(n, 1.0 / n) for n in taxonomy.class_counts]
    if len(class_weights) != taxonomy.n_categories:
        raise ValueError("class_weights needs one vector per category")
    out = []
    for w, n in zip(class_weights, taxonomy.class_counts):
        if w is None:
            out.append(np.full(n, 1.0 / n))
            continue
        w = np.asarray(w, dtype=float)
        if w.shape != (n,):
            raise ValueError(f"weight vector has shape {w.shape}, expected ({n},)")
        if (w < 0).any() or not np.isclose(w.sum(), 1.0, atol=1e-9):
            raise ValueError("class weights must be nonnegative and sum to 1")
        out.append(w / w.sum())
    return out


def generate_dataset(
    taxonomy: Taxonomy,
    count: int,
    class_weights=None,
    seed: int = 0,
    *,
    n_archetypes: Optional[int] = None,
    adherence: float = 0.8,
    population_seed: Optional[int] = None,
) -> LabeledDataset:
    """Draw ``count`` synthetic profiles.

    Without archetypes every category is drawn independently from its weight
    vector (uniform by default). With ``n_archetypes`` each profile first picks
    a latent archetype uniformly; every category then copies the archetype's
    class with probability ``adherence`` and otherwise falls back to the
    weight vector. Archetype classes are spread so that two archetypes share a
    class in a category only when the category has fewer classes than
    archetypes.
    """
    count = int(count)
    if count <= 0:
        raise ValueError("count must be positive")
    weights = _check_weights(taxonomy, class_weights)
    rng = np.random.default_rng(seed)

    labels = np.empty((count, taxonomy.n_categories), dtype=np.int64)
    for c, w in enumerate(weights):
        labels[:, c] = rng.choice(len(w), size=count, p=w)

    archetypes = None
    if n_archetypes is not None:
        if n_archetypes < 1:
            raise ValueError("n_archetypes must be positive")
        if not 0.0 <= adherence <= 1.0:
            raise ValueError("adherence must lie in [0, 1]")
        centers = archetype_centers(
            taxonomy, n_archetypes, seed if population_seed is None else population_seed
        )
        archetypes = rng.integers(0, n_archetypes, size=count)
        keep = rng.random((count, taxonomy.n_categories)) < adherence
        labels = np.where(keep, centers[archetypes], labels)

    return LabeledDataset(taxonomy, labels, seed=seed, archetypes=archetypes)


def archetype_centers(taxonomy: Taxonomy, n_archetypes: int, seed: int) -> np.ndarray:
    """Class index per category for each archetype, shape ``(n_archetypes, n_categories)``."""
    rng = np.random.default_rng([0xA5C7, int(seed) & ((1 << 64) - 1)])
    centers = np.empty((n_archetypes, taxonomy.n_categories), dtype=np.int64)
    for c, n in enumerate(taxonomy.class_counts):
        reps = -(-n_archetypes // n)
        pool = np.concatenate([rng.permutation(n) for _ in range(reps)])
        centers[:, c] = pool[:n_archetypes]
    return centers


# -- newline-delimited export ----------------------------------------------

PathOrFile = Union[str, os.PathLike, io.TextIOBase]


def _dump_lines(dataset: LabeledDataset) -> Iterable[str]:
    yield f"taxonomy={dataset.taxonomy.name};seed={dataset.seed}\n"
    for row in dataset.labels:
        yield ",".join(str(int(j)) for j in row) + "\n"


def write_dataset(dataset: LabeledDataset, dest: PathOrFile) -> None:
    if hasattr(dest, "write"):
        dest.writelines(_dump_lines(dataset))
        return
    with open(dest, "w", encoding="utf-8", newline="\n") as fh:
        fh.writelines(_dump_lines(dataset))


def read_dataset(src: PathOrFile, taxonomy: Optional[Taxonomy] = None) -> LabeledDataset:
    """Parse a file written by :func:`write_dataset`.

    Builtin taxonomies are resolved from the header; custom ones must be
    passed in and must match the header name.
    """
    if hasattr(src, "read"):
        text = src.read()
    else:
        with open(src, encoding="utf-8") as fh:
            text = fh.read()
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty dataset file")
    header = dict(part.split("=", 1) for part in lines[0].split(";"))
    if "taxonomy" not in header:
        raise ValueError(f"malformed header line: {lines[0]!r}")
    name = header["taxonomy"]
    if taxonomy is None:
        taxonomy = builtin_taxonomy(name)
    elif taxonomy.name != name:
        raise ValueError(f"file is for taxonomy {name!r}, got {taxonomy.name!r}")
    rows = [[int(x) for x in line.split(",")] for line in lines[1:] if line]
    labels = np.array(rows, dtype=np.int64).reshape(len(rows), taxonomy.n_categories)
    return LabeledDataset(taxonomy, labels, seed=int(header.get("seed", 0)))
