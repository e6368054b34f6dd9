"""Synthetic long-tail CTR data with planted, non-factorizable pair effects.

Each example draws one ID per field from a per-field Zipf law over a finite
vocabulary.  The true logit is::

    base + sum_f unary[f][id_f] + sum_(i,j) table_ij[id_i % B, id_j % B]

where each planted table holds i.i.d. signs times ``interaction_strength``.
A random sign matrix has full rank, so a low-dimensional inner product of
two embeddings cannot reproduce it.
"""

from __future__ import annotations

import csv
import json
import os
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterator, Sequence

import numpy as np

from .feature_space import Example, encode_feature
from .hashing import fnv1a64


@dataclass
class GenConfig:
    n_fields: int = 12
    vocab: int | list[int] = 1000
    zipf_exponent: float | list[float] = 1.0
    planted_pairs: list[list[int]] = field(default_factory=lambda: [[0, 1], [2, 3], [4, 5]])
    interaction_table_buckets: int = 16
    interaction_strength: float = 2.0
    unary_strength: float = 0.3
    base_logit: float = -1.0
    n_train: int = 200_000
    n_test: int = 50_000
    user_field: int = 0
    users_per_session: int = 1
    seed: int = 0

    def __post_init__(self):
        n = self.n_fields
        if n < 1:
            raise ValueError("n_fields must be >= 1")
        self.vocab = _per_field(self.vocab, n, "vocab")
        self.zipf_exponent = _per_field(self.zipf_exponent, n, "zipf_exponent")
        if any(v < 1 for v in self.vocab):
            raise ValueError("vocab sizes must be >= 1")
        if any(a < 0 for a in self.zipf_exponent):
            raise ValueError("zipf exponents must be >= 0")
        for pair in self.planted_pairs:
            i, j = pair
            if not (0 <= i < n and 0 <= j < n) or i == j:
                raise ValueError(f"planted pair {pair} must name two distinct valid fields")
        if self.interaction_table_buckets < 1:
            raise ValueError("interaction_table_buckets must be >= 1")
        if not 0 <= self.user_field < n:
            raise ValueError("user_field out of range")
        if self.users_per_session < 1:
            raise ValueError("users_per_session must be >= 1")
        if self.n_train < 0 or self.n_test < 0:
            raise ValueError("example counts must be >= 0")


def _per_field(value, n: int, name: str) -> list:
    if isinstance(value, (list, tuple)):
        if len(value) != n:
            raise ValueError(f"{name} lists {len(value)} entries for {n} fields")
        return list(value)
    return [value] * n


def zipf_probabilities(vocab: int, exponent: float) -> np.ndarray:
    """P(rank r) proportional to (r + 1) ** -exponent over a finite vocabulary."""
    w = np.arange(1, vocab + 1, dtype=np.float64) ** -float(exponent)
    return w / w.sum()


def session_key(user_field: int, user_id: int, users_per_session: int) -> int:
    return fnv1a64(encode_feature(user_field, user_id // users_per_session))


class Dataset:
    """Columnar examples; indexing and iteration yield :class:`Example`."""

    def __init__(self, ids: np.ndarray, labels: np.ndarray, session_ids: np.ndarray,
                 names: Sequence[str] | None = None):
        ids = np.asarray(ids, dtype=np.uint64)
        if ids.ndim != 2:
            raise ValueError("ids must be (N, n_fields)")
        self.ids = ids
        self.labels = np.asarray(labels, dtype=np.int8)
        self.session_ids = np.asarray(session_ids, dtype=np.uint64)
        if not (len(self.labels) == len(self.session_ids) == len(ids)):
            raise ValueError("ids, labels and session_ids must have equal length")
        self.names = list(names) if names is not None else [f"f{i}" for i in range(ids.shape[1])]

    @property
    def n_fields(self) -> int:
        return self.ids.shape[1]

    def __len__(self) -> int:
        return len(self.labels)

    def __getitem__(self, i):
        if isinstance(i, slice) or isinstance(i, np.ndarray):
            return Dataset(self.ids[i], self.labels[i], self.session_ids[i], self.names)
        return Example(
            tuple(int(v) for v in self.ids[i]), int(self.labels[i]), int(self.session_ids[i])
        )

    def __iter__(self) -> Iterator[Example]:
        for i in range(len(self)):
            yield self[i]

    @classmethod
    def from_examples(cls, examples: Sequence[Example], n_fields: int | None = None) -> "Dataset":
        examples = list(examples)
        if not examples:
            return cls(np.zeros((0, n_fields or 0), np.uint64), [], [])
        return cls(
            [ex.feature_ids for ex in examples],
            [ex.label for ex in examples],
            [ex.session_id for ex in examples],
        )


@dataclass
class GroundTruth:
    unary: list[list[float]]
    tables: dict[str, list[list[float]]]
    train_prob: np.ndarray
    test_prob: np.ndarray


def generate(cfg: GenConfig, out_dir=None) -> tuple[Dataset, Dataset, GroundTruth]:
    """Draw train/test splits; if ``out_dir`` is set, also write the files."""
    rng = np.random.default_rng(cfg.seed)
    n = cfg.n_fields
    B = cfg.interaction_table_buckets
    unary = [rng.normal(0.0, cfg.unary_strength, size=v) if cfg.unary_strength > 0
             else np.zeros(v) for v in cfg.vocab]
    tables = {
        f"{i},{j}": cfg.interaction_strength * rng.choice([-1.0, 1.0], size=(B, B))
        for i, j in cfg.planted_pairs
    }
    total = cfg.n_train + cfg.n_test
    ids = np.empty((total, n), dtype=np.uint64)
    for f in range(n):
        p = zipf_probabilities(cfg.vocab[f], cfg.zipf_exponent[f])
        ids[:, f] = rng.choice(cfg.vocab[f], size=total, p=p)

    logit = np.full(total, float(cfg.base_logit))
    for f in range(n):
        logit += unary[f][ids[:, f].astype(np.intp)]
    for key, table in tables.items():
        i, j = (int(v) for v in key.split(","))
        logit += table[(ids[:, i] % B).astype(np.intp), (ids[:, j] % B).astype(np.intp)]
    prob = 1.0 / (1.0 + np.exp(-logit))
    labels = (rng.random(total) < prob).astype(np.int8)

    users = ids[:, cfg.user_field]
    keys = {int(u): session_key(cfg.user_field, int(u), cfg.users_per_session)
            for u in np.unique(users)}
    sessions = np.fromiter((keys[int(u)] for u in users), dtype=np.uint64, count=total)

    names = [f"f{i}" for i in range(n)]
    cut = cfg.n_train
    train = Dataset(ids[:cut], labels[:cut], sessions[:cut], names)
    test = Dataset(ids[cut:], labels[cut:], sessions[cut:], names)
    truth = GroundTruth(
        unary=[u.tolist() for u in unary],
        tables={k: t.tolist() for k, t in tables.items()},
        train_prob=prob[:cut],
        test_prob=prob[cut:],
    )
    if out_dir is not None:
        write_dataset(out_dir, cfg, train, test, truth)
    return train, test, truth


def write_csv(path, data: Dataset) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*data.names, "label", "session_id"])
        for row, y, s in zip(data.ids.tolist(), data.labels.tolist(), data.session_ids.tolist()):
            w.writerow([*row, y, s])


def write_dataset(out_dir, cfg: GenConfig, train: Dataset, test: Dataset,
                  truth: GroundTruth) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    write_csv(out / "train.csv", train)
    write_csv(out / "test.csv", test)
    sidecar = {
        "config": asdict(cfg),
        "planted_tables": truth.tables,
        "unary": truth.unary,
        "true_prob_file": "true_prob.csv",
    }
    with open(out / "truth.json", "w", encoding="utf-8") as fh:
        json.dump(sidecar, fh, indent=1, sort_keys=True)
        fh.write("\n")
    with open(out / "true_prob.csv", "w", encoding="utf-8", newline="") as fh:
        fh.write("split,index,prob\n")
        for split, probs in (("train", truth.train_prob), ("test", truth.test_prob)):
            for i, p in enumerate(probs.tolist()):
                fh.write(f"{split},{i},{p!r}\n")


def load_true_prob(out_dir) -> dict[str, np.ndarray]:
    out: dict[str, list[float]] = {"train": [], "test": []}
    with open(Path(out_dir) / "true_prob.csv", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for split, _, p in reader:
            out[split].append(float(p))
    return {k: np.asarray(v) for k, v in out.items()}


class DataFormatError(ValueError):
    pass


_U64_MAX = 2**64 - 1


def load_csv(path) -> Dataset:
    """Parse a ``f0,...,f{n-1},label,session_id`` file.

    Malformed rows raise :class:`DataFormatError` naming the line number.
    """
    path = os.fspath(path)
    with open(path, encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise DataFormatError(f"{path}: empty file (no header)") from None
        if len(header) < 3 or header[-2:] != ["label", "session_id"]:
            raise DataFormatError(f"{path}:1: header must end with label,session_id")
        names = header[:-2]
        expected = [f"f{i}" for i in range(len(names))]
        if names != expected:
            raise DataFormatError(f"{path}:1: feature columns must be {','.join(expected)}")
        width = len(header)
        ids: list[list[int]] = []
        labels: list[int] = []
        sessions: list[int] = []
        for lineno, row in enumerate(reader, start=2):
            if len(row) != width:
                raise DataFormatError(f"{path}:{lineno}: expected {width} columns, got {len(row)}")
            try:
                vals = [int(v) for v in row]
            except ValueError:
                raise DataFormatError(f"{path}:{lineno}: non-integer value") from None
            if any(v < 0 or v > _U64_MAX for v in vals) or any(
                not v.isdigit() for v in row
            ):
                raise DataFormatError(f"{path}:{lineno}: values must be unsigned 64-bit decimals")
            if vals[-2] not in (0, 1):
                raise DataFormatError(f"{path}:{lineno}: label must be 0 or 1, got {vals[-2]}")
            ids.append(vals[:-2])
            labels.append(vals[-2])
            sessions.append(vals[-1])
    arr = np.asarray(ids, dtype=np.uint64).reshape(len(ids), len(names))
    return Dataset(arr, labels, sessions, names)
