"""Candidate-function dictionaries for sparse regression of dynamics.

A dictionary is an ordered list of basis terms over the state variables
x_1..x_J and input variables u_1..u_S.  Evaluating it on sampled data
produces the N x P feature matrix whose sparse column combinations are
candidates for the right-hand side of each governing equation.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "BasisTerm",
    "Dictionary",
    "build_dictionary",
    "evaluate_dictionary",
    "dictionary_from_json_dict",
]

# term kinds; "sin"/"cos" are representable but not emitted by build_dictionary
KINDS = ("constant", "monomial", "delay", "sin", "cos")


@dataclass(frozen=True)
class BasisTerm:
    """One candidate function of (x, u).

    kind:
        "constant"  -- the all-ones term
        "monomial"  -- prod_i x_i^e_i * prod_s u_s^f_s with nonnegative
                       integer exponents, stored as a single tuple over
                       the J+S variables (states first, inputs after)
        "delay"     -- x_j(t - tau) - x_j(t) for one state index j
        "sin"/"cos" -- trig of a single variable (index over J+S vars)
    """

    kind: str
    exponents: tuple = ()
    var_index: int = -1
    label: str = ""

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown basis term kind {self.kind!r}")
        if self.kind == "monomial":
            if not self.exponents or any(e < 0 or e != int(e) for e in self.exponents):
                raise ValueError("monomial exponents must be non-negative integers")
            if sum(self.exponents) == 0:
                raise ValueError("degree-0 monomial must use kind='constant'")
        if self.kind in ("delay", "sin", "cos") and self.var_index < 0:
            raise ValueError(f"{self.kind} term requires a variable index")
        if self.kind == "delay" and self.exponents:
            raise ValueError("delay terms carry no exponents")

    @property
    def degree(self) -> int:
        return int(sum(self.exponents)) if self.kind == "monomial" else 0

    def to_json_dict(self) -> dict:
        d = {"kind": self.kind, "label": self.label}
        if self.kind == "monomial":
            d["exponents"] = list(self.exponents)
        if self.var_index >= 0:
            d["var_index"] = self.var_index
        return d


def _term_label(kind, exponents=(), var_index=-1, state_arity=0):
    if kind == "constant":
        return "1"
    if kind == "delay":
        v = f"x{var_index + 1}"
        return f"({v}(t-tau)-{v}(t))"
    if kind in ("sin", "cos"):
        v = _var_name(var_index, state_arity)
        return f"{kind}({v})"
    parts = []
    for i, e in enumerate(exponents):
        if e == 0:
            continue
        v = _var_name(i, state_arity)
        parts.append(v if e == 1 else f"{v}^{e}")
    return "*".join(parts)


def _var_name(i, state_arity):
    return f"x{i + 1}" if i < state_arity else f"u{i - state_arity + 1}"


@dataclass(frozen=True)
class Dictionary:
    """Ordered, immutable set of basis terms.

    Ordering is canonical graded-lexicographic: the constant first, then
    degree-1 terms in variable order x_1..x_J, u_1..u_S, then degree 2,
    and so on; delay-difference terms are appended last.
    """

    terms: tuple
    state_arity: int
    input_arity: int
    max_degree: int
    delay_state_indices: tuple = field(default=())

    def __post_init__(self):
        if len(self.terms) < 1:
            raise ValueError("dictionary must contain at least one term")
        if len(set(self.terms)) != len(self.terms):
            raise ValueError("dictionary terms must be distinct")

    def __len__(self) -> int:
        return len(self.terms)

    @property
    def size(self) -> int:
        return len(self.terms)

    @property
    def labels(self) -> list:
        return [t.label for t in self.terms]

    @property
    def n_delay_terms(self) -> int:
        return sum(1 for t in self.terms if t.kind == "delay")

    def term_index(self, label: str) -> int:
        for i, t in enumerate(self.terms):
            if t.label == label:
                return i
        raise KeyError(f"no term labelled {label!r}")

    def to_json_dict(self) -> dict:
        return {
            "state_arity": self.state_arity,
            "input_arity": self.input_arity,
            "max_degree": self.max_degree,
            "terms": [t.to_json_dict() for t in self.terms],
        }


def dictionary_from_json_dict(d: dict) -> Dictionary:
    """Rebuild a Dictionary from its JSON description."""
    terms = []
    delay_idx = []
    for td in d["terms"]:
        kind = td["kind"]
        t = BasisTerm(
            kind=kind,
            exponents=tuple(td.get("exponents", ())),
            var_index=td.get("var_index", -1),
            label=td["label"],
        )
        terms.append(t)
        if kind == "delay":
            delay_idx.append(t.var_index)
    return Dictionary(
        terms=tuple(terms),
        state_arity=d["state_arity"],
        input_arity=d["input_arity"],
        max_degree=d["max_degree"],
        delay_state_indices=tuple(delay_idx),
    )


def build_dictionary(state_arity, input_arity=0, max_degree=2, delay_indices=()):
    """All monomials of total degree <= max_degree over (x, u), canonical
    order, plus one delay-difference term per requested state index.

    Term count is C(J+S+max_degree, max_degree) + len(delay_indices).
    """
    if state_arity < 1:
        raise ValueError(f"state_arity must be >= 1, got {state_arity}")
    if input_arity < 0:
        raise ValueError(f"input_arity must be >= 0, got {input_arity}")
    if max_degree < 1:
        raise ValueError(f"max_degree must be >= 1, got {max_degree}")
    for j in delay_indices:
        if not (0 <= j < state_arity):
            raise ValueError(f"delay index {j} outside state range 0..{state_arity - 1}")

    n_vars = state_arity + input_arity
    terms = [BasisTerm("constant", label="1")]
    for deg in range(1, max_degree + 1):
        for combo in itertools.combinations_with_replacement(range(n_vars), deg):
            expo = [0] * n_vars
            for i in combo:
                expo[i] += 1
            expo = tuple(expo)
            terms.append(
                BasisTerm("monomial", exponents=expo,
                          label=_term_label("monomial", expo, state_arity=state_arity))
            )
    for j in delay_indices:
        terms.append(
            BasisTerm("delay", var_index=j,
                      label=_term_label("delay", var_index=j, state_arity=state_arity))
        )

    expected = math.comb(n_vars + max_degree, max_degree) + len(delay_indices)
    assert len(terms) == expected
    return Dictionary(
        terms=tuple(terms),
        state_arity=state_arity,
        input_arity=input_arity,
        max_degree=max_degree,
        delay_state_indices=tuple(delay_indices),
    )


def evaluate_dictionary(dictionary, X, U=None, delay_columns=None):
    """Evaluate every term row-wise: returns the N x P feature matrix.

    Parameters
    ----------
    X : (N, J) state samples.
    U : (N, S) input samples; may be omitted when the dictionary has no inputs.
    delay_columns : mapping {state_index: (N,) array} holding the precomputed
        delayed-difference series x_j(t - tau) - x_j(t) for every delay term.
    """
    X = np.atleast_2d(np.asarray(X, dtype=float))
    n = X.shape[0]
    if X.shape[1] != dictionary.state_arity:
        raise ValueError(
            f"X has {X.shape[1]} state columns, dictionary expects {dictionary.state_arity}")
    if dictionary.input_arity > 0:
        if U is None:
            raise ValueError("dictionary has input terms but U was not supplied")
        U = np.asarray(U, dtype=float)
        if U.ndim == 1:
            U = U[:, None]
        if U.shape != (n, dictionary.input_arity):
            raise ValueError(
                f"U shape {U.shape} does not match (N={n}, S={dictionary.input_arity})")
        V = np.hstack([X, U])
    else:
        V = X

    theta = np.empty((n, len(dictionary)))
    for p, term in enumerate(dictionary.terms):
        if term.kind == "constant":
            theta[:, p] = 1.0
        elif term.kind == "monomial":
            col = np.ones(n)
            for i, e in enumerate(term.exponents):
                if e == 1:
                    col = col * V[:, i]
                elif e > 1:
                    col = col * V[:, i] ** e
            theta[:, p] = col
        elif term.kind == "delay":
            if delay_columns is None or term.var_index not in delay_columns:
                raise ValueError(
                    f"missing delay column for state index {term.var_index}")
            dcol = np.asarray(delay_columns[term.var_index], dtype=float)
            if dcol.shape != (n,):
                raise ValueError(
                    f"delay column for state {term.var_index} has shape {dcol.shape}, expected ({n},)")
            theta[:, p] = dcol
        elif term.kind == "sin":
            theta[:, p] = np.sin(V[:, term.var_index])
        else:  # cos
            theta[:, p] = np.cos(V[:, term.var_index])
    return theta
