"""Dataset, pair-file, and config-file parsing plus atomic text output.

Two dataset formats are supported:

* csv: comma-separated feature columns with the class label in the last
  column; an optional single header line is detected and skipped.  Labels
  may be integers or arbitrary strings, which are mapped to 0..k-1 in
  sorted order.
* libsvm: one sample per line, "label index:value ..." with 1-based
  indices; omitted indices are zero.

Pair files are csv rows "idx_a,idx_b,matched" with 0-based row indices
into a companion feature file and matched in {0, 1}.
"""

import os
import re
import tempfile

import numpy as np

from .errors import DataFormatError
from .pairs import Dataset

_LIBSVM_TERM = re.compile(r"^(\d+):([^\s]+)$")


def atomic_write_text(path, text: str):
    """Write text to path via a temp file and rename."""
    path = os.fspath(path)
    directory = os.path.dirname(path) or "."
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".out-", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", encoding="utf-8") as handle:
            handle.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _label_codes(raw_labels, path):
    """Map labels to integers; non-numeric labels factorize in sorted order."""
    try:
        values = [float(lab) for lab in raw_labels]
    except ValueError:
        classes = sorted(set(raw_labels))
        lookup = {c: i for i, c in enumerate(classes)}
        return np.array([lookup[lab] for lab in raw_labels], dtype=np.int64)
    arr = np.array(values)
    if not np.array_equal(arr, np.rint(arr)):
        raise DataFormatError("class labels must be integers", path=path)
    return arr.astype(np.int64)


def read_csv_dataset(path) -> Dataset:
    """Parse a csv dataset; the last column is the class label."""
    rows = []
    labels = []
    width = None
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) < 2:
                raise DataFormatError(
                    "need at least one feature column and a label",
                    path=path, line=line_no,
                )
            try:
                feats = [float(c) for c in cells[:-1]]
            except ValueError:
                if line_no == 1:
                    continue  # header line
                raise DataFormatError(
                    f"bad feature value in {cells[:-1]!r}",
                    path=path, line=line_no,
                ) from None
            if width is None:
                width = len(feats)
            elif len(feats) != width:
                raise DataFormatError(
                    f"expected {width} feature columns, got {len(feats)}",
                    path=path, line=line_no,
                )
            rows.append(feats)
            labels.append(cells[-1])
    if not rows:
        raise DataFormatError("no data rows", path=path)
    try:
        return Dataset(np.array(rows), _label_codes(labels, path))
    except ValueError as exc:
        raise DataFormatError(str(exc), path=path) from exc


def write_csv_dataset(data: Dataset, path):
    lines = []
    for feats, label in zip(data.features, data.labels):
        lines.append(",".join(format(v, ".17g") for v in feats)
                     + f",{int(label)}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def read_libsvm_dataset(path, n_features: int = None) -> Dataset:
    """Parse a libsvm file; indices are 1-based and omitted values are 0."""
    parsed = []
    labels = []
    max_index = 0
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            tokens = line.split()
            labels.append(tokens[0])
            terms = []
            for token in tokens[1:]:
                match = _LIBSVM_TERM.match(token)
                if match is None:
                    raise DataFormatError(
                        f"bad term {token!r}", path=path, line=line_no
                    )
                index = int(match.group(1))
                if index < 1:
                    raise DataFormatError(
                        "indices are 1-based", path=path, line=line_no
                    )
                try:
                    value = float(match.group(2))
                except ValueError:
                    raise DataFormatError(
                        f"bad value in {token!r}", path=path, line=line_no
                    ) from None
                terms.append((index, value))
                max_index = max(max_index, index)
            parsed.append(terms)
    if not parsed:
        raise DataFormatError("no data rows", path=path)
    width = n_features if n_features is not None else max_index
    if max_index > width:
        raise DataFormatError(
            f"index {max_index} exceeds the declared width {width}", path=path
        )
    features = np.zeros((len(parsed), width))
    for row, terms in enumerate(parsed):
        for index, value in terms:
            features[row, index - 1] = value
    try:
        return Dataset(features, _label_codes(labels, path))
    except ValueError as exc:
        raise DataFormatError(str(exc), path=path) from exc


def read_dataset(path, fmt: str) -> Dataset:
    if fmt == "csv":
        return read_csv_dataset(path)
    if fmt == "libsvm":
        return read_libsvm_dataset(path)
    raise ValueError(f"unknown dataset format {fmt!r}")


def read_pair_file(path, n_rows: int):
    """Parse verification pairs; indices must fall in [0, n_rows)."""
    idx_a = []
    idx_b = []
    matched = []
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.strip()
            if not line:
                continue
            cells = [c.strip() for c in line.split(",")]
            if len(cells) != 3:
                raise DataFormatError(
                    "expected idx_a,idx_b,matched", path=path, line=line_no
                )
            if line_no == 1 and not cells[0].lstrip("-").isdigit():
                continue  # header line
            try:
                a, b, m = int(cells[0]), int(cells[1]), int(cells[2])
            except ValueError:
                raise DataFormatError(
                    f"bad integer in {cells!r}", path=path, line=line_no
                ) from None
            if m not in (0, 1):
                raise DataFormatError(
                    f"matched must be 0 or 1, got {m}", path=path, line=line_no
                )
            if not (0 <= a < n_rows and 0 <= b < n_rows):
                raise DataFormatError(
                    f"pair index out of range 0..{n_rows - 1}",
                    path=path, line=line_no,
                )
            idx_a.append(a)
            idx_b.append(b)
            matched.append(bool(m))
    if not idx_a:
        raise DataFormatError("no pair rows", path=path)
    return (np.array(idx_a, dtype=np.int64), np.array(idx_b, dtype=np.int64),
            np.array(matched, dtype=bool))


def read_config_file(path) -> dict:
    """Parse a key=value config file; '#' starts a comment."""
    out = {}
    with open(path, "r", encoding="utf-8") as handle:
        for line_no, line in enumerate(handle, start=1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise DataFormatError(
                    "expected key = value", path=path, line=line_no
                )
            key, value = line.split("=", 1)
            out[key.strip()] = value.strip().strip('"')
    return out
