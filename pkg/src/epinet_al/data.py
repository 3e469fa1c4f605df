"""Classification datasets and their delimited-text file format.

File layout (comma separated)::

    width,<D>,classes,<C>
    split,index,f1,...,fD,label
    train,1,0.12,...,-1.3,2
    ...
    test,1,...

``index`` restarts at 1 in each split and labels are written 1..C.  In memory
labels are zero-based.  Floats are written with ``repr`` so a round trip is
exact.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np


class IngestionError(ValueError):
    pass


@dataclass(frozen=True)
class Dataset:
    x_train: np.ndarray
    y_train: np.ndarray
    x_test: np.ndarray
    y_test: np.ndarray
    num_classes: int

    @property
    def width(self) -> int:
        return self.x_train.shape[1]

    @property
    def num_train(self) -> int:
        return len(self.y_train)

    @property
    def num_test(self) -> int:
        return len(self.y_test)

    def subset(self, idx) -> "Dataset":
        idx = np.asarray(idx)
        return Dataset(self.x_train[idx], self.y_train[idx], self.x_test, self.y_test,
                       self.num_classes)


def write_dataset(data: Dataset, path) -> None:
    width = data.width
    lines = [f"width,{width},classes,{data.num_classes}",
             ",".join(["split", "index", *(f"f{j + 1}" for j in range(width)), "label"])]
    for split, xs, ys in (("train", data.x_train, data.y_train), ("test", data.x_test, data.y_test)):
        for i, (x, y) in enumerate(zip(xs, ys), start=1):
            lines.append(",".join([split, str(i), *(repr(float(v)) for v in x), str(int(y) + 1)]))
    Path(path).write_text("\n".join(lines) + "\n")


def read_dataset(path) -> Dataset:
    """Parse the delimited format; errors carry the offending line number."""
    path = Path(path)
    if not path.exists():
        raise IngestionError(f"{path}: no such file")
    rows = path.read_text().splitlines()
    if not rows:
        raise IngestionError(f"{path}: empty file")
    head = rows[0].split(",")
    try:
        if len(head) != 4 or head[0] != "width" or head[2] != "classes":
            raise ValueError
        width, classes = int(head[1]), int(head[3])
    except ValueError:
        raise IngestionError(f"{path}:1: expected 'width,<D>,classes,<C>'") from None
    if width < 1 or classes < 2:
        raise IngestionError(f"{path}:1: need width >= 1 and classes >= 2")
    if len(rows) < 2 or rows[1].split(",")[:2] != ["split", "index"]:
        raise IngestionError(f"{path}:2: missing column header")
    parts: dict[str, tuple[list, list]] = {"train": ([], []), "test": ([], [])}
    for lineno, row in enumerate(rows[2:], start=3):
        if not row.strip():
            continue
        cells = row.split(",")
        if len(cells) != width + 3:
            raise IngestionError(
                f"{path}:{lineno}: expected {width + 3} fields, found {len(cells)}")
        split = cells[0]
        if split not in parts:
            raise IngestionError(f"{path}:{lineno}: unknown split {split!r}")
        try:
            x = [float(v) for v in cells[2:-1]]
            label = int(cells[-1])
        except ValueError as exc:
            raise IngestionError(f"{path}:{lineno}: {exc}") from None
        if not 1 <= label <= classes:
            raise IngestionError(f"{path}:{lineno}: label {label} outside 1..{classes}")
        if not all(np.isfinite(x)):
            raise IngestionError(f"{path}:{lineno}: non-finite feature")
        parts[split][0].append(x)
        parts[split][1].append(label - 1)
    for split, (xs, _) in parts.items():
        if not xs:
            raise IngestionError(f"{path}: no {split} examples")
    return Dataset(np.array(parts["train"][0]), np.array(parts["train"][1], dtype=np.int64),
                   np.array(parts["test"][0]), np.array(parts["test"][1], dtype=np.int64),
                   classes)
