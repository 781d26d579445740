"""Seeded synthetic benchmarks: adding, copy (RNN and transformer) and the
two-dimensional point cloud.

Every generator is a pure function of its arguments and seed. The single
sample functions take an integer seed; the batch functions take a
``numpy.random.Generator`` so that a training loop can draw a stream of
batches from one seeded generator.
"""
from __future__ import annotations

import io
from dataclasses import dataclass

import numpy as np

BLANK = 0


@dataclass
class SequenceSample:
    inputs: np.ndarray
    targets: np.ndarray
    mask: np.ndarray | None = None

    def __eq__(self, other):
        if not isinstance(other, SequenceSample):
            return NotImplemented
        same_mask = (self.mask is None and other.mask is None) or (
            self.mask is not None and other.mask is not None and np.array_equal(self.mask, other.mask))
        return (np.array_equal(self.inputs, other.inputs)
                and np.array_equal(self.targets, other.targets) and same_mask)


@dataclass
class PointCloud:
    points: np.ndarray
    labels: np.ndarray

    def __eq__(self, other):
        if not isinstance(other, PointCloud):
            return NotImplemented
        return np.array_equal(self.points, other.points) and np.array_equal(self.labels, other.labels)


def _rng(seed) -> np.random.Generator:
    if isinstance(seed, np.random.Generator):
        return seed
    return np.random.default_rng(seed)


# --------------------------------------------------------------------------
# adding task


def _adding(rng: np.random.Generator, T: int) -> SequenceSample:
    values = rng.random(T)
    half = T // 2
    p = rng.integers(0, half)
    q = rng.integers(half, T)
    markers = np.zeros(T)
    markers[[p, q]] = 1.0
    return SequenceSample(np.stack([values, markers], axis=1), np.array([values[p] + values[q]]))


def gen_adding_task(T: int, seed) -> SequenceSample:
    """(value, marker) pairs with one marker in each half; target is the
    sum of the two marked values."""
    if T < 2:
        raise ValueError(f"adding task needs T >= 2, got {T}")
    return _adding(_rng(seed), int(T))


def adding_batch(rng: np.random.Generator, batch: int, T: int) -> tuple[np.ndarray, np.ndarray]:
    """Inputs (batch, T, 2) and targets (batch, 1)."""
    if T < 2:
        raise ValueError(f"adding task needs T >= 2, got {T}")
    samples = [_adding(rng, T) for _ in range(batch)]
    return np.stack([s.inputs for s in samples]), np.stack([s.targets for s in samples])


# --------------------------------------------------------------------------
# RNN copy task


def copy_rnn_vocab(n_symbols: int) -> int:
    """Blank, the data symbols 1..n and the go marker n+1."""
    return n_symbols + 2


def _copy_rnn(rng, T_blank, n_symbols, copy_len, full_loss) -> SequenceSample:
    marker = n_symbols + 1
    symbols = rng.integers(1, n_symbols + 1, size=copy_len)
    tokens = np.concatenate([symbols, np.full(T_blank, BLANK), [marker], np.full(copy_len, BLANK)])
    targets = np.concatenate([np.full(copy_len + T_blank + 1, BLANK), symbols])
    mask = np.ones(tokens.size, dtype=bool) if full_loss else np.arange(tokens.size) >= tokens.size - copy_len
    onehot = np.eye(copy_rnn_vocab(n_symbols))[tokens]
    return SequenceSample(onehot, targets.astype(np.int64), mask)


def _check_copy_rnn(T_blank, n_symbols, copy_len):
    if n_symbols < 2:
        raise ValueError(f"n_symbols must be >= 2, got {n_symbols}")
    if copy_len < 1 or T_blank < 0:
        raise ValueError(f"need copy_len >= 1 and T_blank >= 0, got {copy_len}, {T_blank}")


def gen_copy_task_rnn(T_blank: int, n_symbols: int = 8, copy_len: int = 10, seed=0,
                      full_loss: bool = False) -> SequenceSample:
    """copy_len symbols, T_blank blanks, a go marker, copy_len blanks.

    Inputs are one-hot over ``n_symbols + 2`` tokens; targets are token ids.
    The mask selects the final ``copy_len`` positions unless ``full_loss``.
    """
    _check_copy_rnn(T_blank, n_symbols, copy_len)
    return _copy_rnn(_rng(seed), int(T_blank), int(n_symbols), int(copy_len), full_loss)


def copy_rnn_batch(rng, batch, T_blank, n_symbols=8, copy_len=10, full_loss=False):
    """One-hot inputs (B, T, V), integer targets (B, T), boolean mask (B, T)."""
    _check_copy_rnn(T_blank, n_symbols, copy_len)
    samples = [_copy_rnn(rng, T_blank, n_symbols, copy_len, full_loss) for _ in range(batch)]
    return (np.stack([s.inputs for s in samples]), np.stack([s.targets for s in samples]),
            np.stack([s.mask for s in samples]))


# --------------------------------------------------------------------------
# transformer copy task


def _check_copy_tf(max_len, n_symbols):
    if max_len < 4 or max_len % 2:
        raise ValueError(f"max_len must be an even number >= 4, got {max_len}")
    if n_symbols < 1:
        raise ValueError(f"n_symbols must be >= 1, got {n_symbols}")


def _copy_tf(rng, max_len, n_symbols, length=None) -> SequenceSample:
    L = int(rng.integers(1, (max_len - 2) // 2 + 1)) if length is None else length
    w = rng.integers(1, n_symbols + 1, size=L)
    seq = np.concatenate([[0], w, [0], w]).astype(np.int64)
    targets = np.concatenate([seq[1:], [0]])
    mask = np.zeros(seq.size, dtype=bool)
    mask[L + 1: 2 * L + 1] = True
    return SequenceSample(seq[:, None], targets, mask)


def gen_copy_task_transformer(max_len: int, n_symbols: int = 10, seed=0,
                              length: int | None = None) -> SequenceSample:
    """Token sequence 0·w·0·w with |w| ≤ (max_len − 2)/2.

    ``targets[t]`` is the token at t+1 and the mask covers the positions
    whose target lies in the second copy of w. ``length`` fixes |w|.
    """
    _check_copy_tf(max_len, n_symbols)
    if length is not None and not 1 <= length <= (max_len - 2) // 2:
        raise ValueError(f"length must lie in [1, {(max_len - 2) // 2}], got {length}")
    return _copy_tf(_rng(seed), int(max_len), int(n_symbols), length)


def copy_transformer_batch(rng, batch, max_len, n_symbols=10):
    """Tokens (B, max_len), targets (B, max_len), mask (B, max_len); padded
    with the separator token and masked out."""
    _check_copy_tf(max_len, n_symbols)
    tokens = np.zeros((batch, max_len), dtype=np.int64)
    targets = np.zeros_like(tokens)
    mask = np.zeros((batch, max_len), dtype=bool)
    for b in range(batch):
        s = _copy_tf(rng, max_len, n_symbols)
        n = s.inputs.shape[0]
        tokens[b, :n] = s.inputs[:, 0]
        targets[b, :n] = s.targets
        mask[b, :n] = s.mask
    return tokens, targets, mask


# --------------------------------------------------------------------------
# point cloud

N_DISK = 40
N_ANNULUS = 80
R_DISK = 0.5
R_INNER, R_OUTER = 0.85, 1.0


def _uniform_region(rng, n, r_lo, r_hi) -> np.ndarray:
    """Uniform-by-area points with r_lo < r < r_hi (r_lo may be 0, inclusive)."""
    out = np.empty((0, 2))
    while out.shape[0] < n:
        k = n - out.shape[0]
        u = rng.random(k)
        r = np.sqrt(r_lo ** 2 + u * (r_hi ** 2 - r_lo ** 2))
        theta = rng.uniform(0.0, 2.0 * np.pi, size=k)
        pts = np.stack([r * np.cos(theta), r * np.sin(theta)], axis=1)
        rad = np.hypot(pts[:, 0], pts[:, 1])
        keep = (rad < r_hi) & ((rad > r_lo) if r_lo > 0 else True)
        out = np.concatenate([out, pts[keep]])
    return out


def gen_point_cloud(seed) -> PointCloud:
    """40 points (label 0) in ‖r‖ < 0.5 and 80 (label 1) in 0.85 < ‖r‖ < 1."""
    rng = _rng(seed)
    disk = _uniform_region(rng, N_DISK, 0.0, R_DISK)
    ring = _uniform_region(rng, N_ANNULUS, R_INNER, R_OUTER)
    labels = np.concatenate([np.zeros(N_DISK, dtype=np.int64), np.ones(N_ANNULUS, dtype=np.int64)])
    return PointCloud(np.concatenate([disk, ring]), labels)


def point_cloud_valid(cloud: PointCloud) -> bool:
    r = np.hypot(cloud.points[:, 0], cloud.points[:, 1])
    inner = cloud.labels == 0
    return (int(inner.sum()) == N_DISK and int((~inner).sum()) == N_ANNULUS
            and bool(np.all(r[inner] < R_DISK))
            and bool(np.all((r[~inner] > R_INNER) & (r[~inner] < R_OUTER))))


# --------------------------------------------------------------------------
# columnar text


def to_columns(sample: SequenceSample | PointCloud) -> str:
    """One whitespace-separated row per timestep or point, with a header."""
    buf = io.StringIO()
    if isinstance(sample, PointCloud):
        buf.write("x y label\n")
        for (x, y), lab in zip(sample.points, sample.labels):
            buf.write(f"{float(x)!r} {float(y)!r} {int(lab)}\n")
        return buf.getvalue()
    X = np.asarray(sample.inputs)
    T = X.shape[0]
    tgt = np.asarray(sample.targets)
    per_step = tgt.shape[0] == T
    cols = [f"in{j}" for j in range(X.shape[1])] + ["target", "mask"]
    buf.write(" ".join(cols) + "\n")
    for t in range(T):
        vals = [repr(float(v)) if X.dtype.kind == "f" else str(int(v)) for v in X[t]]
        if per_step:
            target = tgt[t]
        else:
            target = tgt.reshape(-1)[0] if t == T - 1 else np.nan
        vals.append(repr(float(target)) if np.asarray(target).dtype.kind == "f" else str(int(target)))
        vals.append("1" if sample.mask is None or sample.mask[t] else "0")
        buf.write(" ".join(vals) + "\n")
    return buf.getvalue()


def from_columns(text: str) -> SequenceSample | PointCloud:
    lines = [ln.split() for ln in text.strip().splitlines()]
    header, rows = lines[0], lines[1:]
    if header == ["x", "y", "label"]:
        pts = np.array([[float(a), float(b)] for a, b, _ in rows])
        return PointCloud(pts, np.array([int(r[2]) for r in rows], dtype=np.int64))
    n_in = len(header) - 2
    ints = all("." not in v and "e" not in v and "n" not in v for r in rows for v in r[:n_in])
    X = np.array([[int(v) if ints else float(v) for v in r[:n_in]] for r in rows])
    raw_t = [r[n_in] for r in rows]
    if raw_t[0] == "nan":
        targets = np.array([float(raw_t[-1])])
    elif all("." not in v and "e" not in v for v in raw_t):
        targets = np.array([int(v) for v in raw_t], dtype=np.int64)
    else:
        targets = np.array([float(v) for v in raw_t])
    mask = np.array([r[n_in + 1] == "1" for r in rows])
    return SequenceSample(X, targets, mask)
