"""The symmetry group of the square, D4, acting on a four-transducer plate.

Transducers sit at the corners of a square centred on the plate origin and are
numbered 0..3 counterclockwise from the lower-left corner.  Every group element
is stored as a pair ``(k, m)`` meaning "reflect across the vertical axis ``m``
times, then rotate counterclockwise by ``k`` quarter turns".  The eight elements
are indexed in the fixed order ``e, r, r2, r3, s_v, s_h, s13, s24`` where ``s13``
and ``s24`` are the diagonal reflections through corners 1/3 and 2/4 (one-based
corner names).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

ORDER = 8
NAMES = ("e", "r", "r2", "r3", "s_v", "s_h", "s13", "s24")

# (quarter turns, reflected) for each index
_PAIRS = ((0, 0), (1, 0), (2, 0), (3, 0), (0, 1), (2, 1), (3, 1), (1, 1))
_INDEX = {p: i for i, p in enumerate(_PAIRS)}

# corner positions in units of half the transducer square side
CORNERS = np.array([[-1, -1], [1, -1], [1, 1], [-1, 1]], dtype=np.int64)


@dataclass(frozen=True)
class GroupElement:
    index: int

    def __post_init__(self):
        if not 0 <= self.index < ORDER:
            raise ValueError(f"group index must be in 0..7, got {self.index}")

    @property
    def name(self) -> str:
        return NAMES[self.index]

    @property
    def is_rotation(self) -> bool:
        return _PAIRS[self.index][1] == 0

    def __mul__(self, other: "GroupElement") -> "GroupElement":
        return compose(self, other)

    def inverse(self) -> "GroupElement":
        return inverse(self)

    def __repr__(self) -> str:
        return f"GroupElement({self.name})"


def element(name: str | int) -> GroupElement:
    if isinstance(name, (int, np.integer)):
        return GroupElement(int(name))
    return GroupElement(NAMES.index(name))


def elements() -> list[GroupElement]:
    return [GroupElement(i) for i in range(ORDER)]


IDENTITY = GroupElement(0)


def compose(a: GroupElement, b: GroupElement) -> GroupElement:
    """Return ``a * b`` (apply ``b`` first, then ``a``)."""
    k1, m1 = _PAIRS[a.index]
    k2, m2 = _PAIRS[b.index]
    k = (k1 + (-k2 if m1 else k2)) % 4
    return GroupElement(_INDEX[(k, m1 ^ m2)])


def inverse(a: GroupElement) -> GroupElement:
    k, m = _PAIRS[a.index]
    if m:
        return a
    return GroupElement(_INDEX[(-k % 4, 0)])


def _build_tables():
    mul = np.empty((ORDER, ORDER), dtype=np.int64)
    for i in range(ORDER):
        for j in range(ORDER):
            mul[i, j] = compose(GroupElement(i), GroupElement(j)).index
    inv = np.array([inverse(GroupElement(i)).index for i in range(ORDER)])
    return mul, inv


CAYLEY, INVERSE = _build_tables()
CAYLEY.setflags(write=False)
INVERSE.setflags(write=False)


def _vector_matrix(index: int) -> np.ndarray:
    k, m = _PAIRS[index]
    c, s = [(1, 0), (0, 1), (-1, 0), (0, -1)][k]
    rot = np.array([[c, -s], [s, c]], dtype=np.int64)
    flip = np.array([[-1, 0], [0, 1]], dtype=np.int64) if m else np.eye(2, dtype=np.int64)
    return rot @ flip


# 2x2 orthogonal matrices acting on plate coordinates (origin at the plate centre)
VECTOR_REP = np.stack([_vector_matrix(i) for i in range(ORDER)]).astype(np.float64)
VECTOR_REP.setflags(write=False)


def _corner_permutation(index: int) -> np.ndarray:
    moved = CORNERS @ _vector_matrix(index).T
    return np.array([int(np.flatnonzero((CORNERS == p).all(axis=1))[0]) for p in moved])


# CORNER_MAP[g, k] is the corner that corner k is sent to by g
CORNER_MAP = np.stack([_corner_permutation(i) for i in range(ORDER)])
CORNER_MAP.setflags(write=False)


def permutation_matrix(g: GroupElement) -> np.ndarray:
    """4x4 matrix with ``P @ e_k = e_{g(k)}``."""
    P = np.zeros((4, 4))
    P[CORNER_MAP[g.index], np.arange(4)] = 1.0
    return P


PERMUTATION_REP = np.stack([permutation_matrix(g) for g in elements()])
PERMUTATION_REP.setflags(write=False)


def vector_matrix(g: GroupElement) -> np.ndarray:
    return VECTOR_REP[g.index].copy()


def act_on_points(g: GroupElement, xy: np.ndarray) -> np.ndarray:
    """Apply ``g`` to plate coordinates; the last axis holds (x, y)."""
    return np.asarray(xy, dtype=np.float64) @ VECTOR_REP[g.index].T


def act_on_adjacency(g: GroupElement, V: np.ndarray, axes: tuple[int, int] = (0, 1)) -> np.ndarray:
    """Permute receiver and sender indices jointly: ``V'[r, s] = V[g^-1 r, g^-1 s]``.

    ``axes`` names the receiver and sender axes; every other axis is carried along.
    """
    src = CORNER_MAP[INVERSE[g.index]]
    out = np.take(V, src, axis=axes[0])
    return np.take(out, src, axis=axes[1])


def regular_source_index(g: GroupElement) -> np.ndarray:
    """Indices ``g^-1 sigma`` for every ``sigma``; gathering with them applies ``g``."""
    return CAYLEY[INVERSE[g.index]].copy()


def act_on_regular(g: GroupElement, F: np.ndarray, axis: int = 0) -> np.ndarray:
    """Regular action on a group-indexed array: ``F'[sigma] = F[g^-1 sigma]``."""
    if F.shape[axis] != ORDER:
        raise ValueError(f"group axis must have length 8, got {F.shape[axis]}")
    return np.take(F, regular_source_index(g), axis=axis)
