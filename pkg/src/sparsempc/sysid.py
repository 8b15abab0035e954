"""Exact cardinality-constrained sparse regression and model assembly.

Stage I selects the support of each governing equation by solving the
kappa-constrained least-squares subset problem to global optimality on
column-normalized data (exhaustive enumeration below a subset-count cap,
branch-and-bound above it).  Stage II re-estimates the coefficients of the
selected columns by ordinary least squares on the original-scale data.
A sequential threshold least-squares baseline is included for comparison.
"""

from __future__ import annotations

import itertools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .basis import Dictionary, build_dictionary, evaluate_dictionary

__all__ = [
    "DegenerateColumnError",
    "RegressionProblem",
    "SupportSelection",
    "SparseModel",
    "TurningModel",
    "normalize_columns",
    "solve_support",
    "fit_coefficients",
    "stlsq_baseline",
    "identify_model",
    "identify_turning_model",
    "LORENZ_TRUE_GAMMA",
    "lorenz_truth_supports",
    "turning_truth_supports",
]

DEFAULT_ENUMERATION_CAP = 200_000
DEFAULT_NODE_BUDGET = 2_000_000


class DegenerateColumnError(ValueError):
    """A feature column (or the target) has zero norm and cannot be normalized."""


def normalize_columns(theta, target, labels=None):
    """Scale each column of theta and the target to unit Euclidean norm.

    Returns (theta_norm, target_norm, column_scales, target_scale) with
    original = scale * normalized.  Raises DegenerateColumnError naming the
    offending term when a column is identically zero.
    """
    theta = np.asarray(theta, dtype=float)
    target = np.asarray(target, dtype=float)
    scales = np.linalg.norm(theta, axis=0)
    bad = np.flatnonzero(scales == 0.0)
    if bad.size:
        name = labels[bad[0]] if labels is not None else f"column {bad[0]}"
        raise DegenerateColumnError(f"feature {name} is identically zero")
    t_scale = float(np.linalg.norm(target))
    if t_scale == 0.0:
        raise DegenerateColumnError("target vector has zero norm")
    return theta / scales, target / t_scale, scales, t_scale


@dataclass(frozen=True)
class RegressionProblem:
    """One kappa-constrained regression instance (usually on normalized data)."""

    theta: np.ndarray
    target: np.ndarray
    kappa: int
    lambda2: float = 0.0
    big_m: float = 1000.0

    def __post_init__(self):
        n, p = self.theta.shape
        if not (1 <= self.kappa <= p):
            raise ValueError(f"kappa must lie in 1..{p}, got {self.kappa}")
        if self.lambda2 < 0:
            raise ValueError("lambda2 must be >= 0")
        if self.big_m <= 0:
            raise ValueError("big_m must be > 0")
        if n < self.kappa:
            raise ValueError(f"need at least kappa={self.kappa} rows, got {n}")
        if self.target.shape != (n,):
            raise ValueError("target length does not match theta rows")


@dataclass(frozen=True)
class SupportSelection:
    """Result of one support solve."""

    gamma: np.ndarray            # (P,) booleans, exactly kappa set
    objective: float             # residual^2 + lambda2*||xi||^2 at the optimum
    proven_optimal: bool
    nodes_explored: int
    xi: np.ndarray               # coefficients on the solve's data scale

    @property
    def support(self):
        return tuple(np.flatnonzero(self.gamma))


class _SubsetLS:
    """Shared exact evaluator: ridge least squares restricted to a subset.

    Works off the Gram matrix so enumeration and branch-and-bound leaves
    produce bit-identical objectives for identical subsets.
    """

    def __init__(self, theta, target, lambda2):
        self.gram = theta.T @ theta
        self.corr = theta.T @ target
        self.y_sq = float(target @ target)
        self.lambda2 = float(lambda2)
        self.p = theta.shape[1]

    def solve(self, subset):
        idx = list(subset)
        a = self.gram[np.ix_(idx, idx)]
        if self.lambda2 > 0.0:
            a = a + self.lambda2 * np.eye(len(idx))
        c = self.corr[idx]
        try:
            xi = np.linalg.solve(a, c)
        except np.linalg.LinAlgError:
            xi = np.linalg.lstsq(a, c, rcond=None)[0]
        obj = self.y_sq - float(c @ xi)
        # guard tiny negative round-off
        return (obj if obj > 0.0 else 0.0), xi


def _better(obj, support, best_obj, best_support):
    """Strictly better objective, or equal objective with lex-smaller support."""
    if obj < best_obj:
        return True
    return obj == best_obj and best_support is not None and support < best_support


def _solve_enumeration(ls, kappa):
    best_obj = np.inf
    best_support = None
    best_xi = None
    n_nodes = 0
    for subset in itertools.combinations(range(ls.p), kappa):
        n_nodes += 1
        obj, xi = ls.solve(subset)
        if best_support is None or _better(obj, subset, best_obj, best_support):
            best_obj, best_support, best_xi = obj, subset, xi
    return best_support, best_obj, best_xi, n_nodes, True


def _solve_branch_and_bound(ls, kappa, node_budget, incumbent, bound_hook=None):
    """Depth-first branch-and-bound over column inclusion/exclusion.

    The node lower bound is the ridge residual using every fixed-in plus
    undecided column (dropping the cardinality cap relaxes the problem);
    branching picks the undecided column with the largest-magnitude relaxed
    coefficient, exploring the inclusion child first.
    """
    p = ls.p
    best_support, best_obj, best_xi = None, np.inf, None
    if incumbent is not None:
        best_support = tuple(sorted(incumbent))
        best_obj, best_xi = ls.solve(best_support)

    n_nodes = 0
    budget_ok = True
    # node: (fixed tuple, excluded frozenset)
    stack = [((), frozenset())]
    while stack:
        fixed, excluded = stack.pop()
        n_nodes += 1
        if n_nodes > node_budget:
            budget_ok = False
            break
        undecided = [j for j in range(p) if j not in excluded and j not in fixed]
        n_free = kappa - len(fixed)
        if n_free < 0 or len(undecided) < n_free:
            continue
        if n_free == 0:
            subset = tuple(sorted(fixed))
            obj, xi = ls.solve(subset)
            if best_support is None or _better(obj, subset, best_obj, best_support):
                best_obj, best_support, best_xi = obj, subset, xi
            continue
        if len(undecided) == n_free:
            subset = tuple(sorted(fixed + tuple(undecided)))
            obj, xi = ls.solve(subset)
            if best_support is None or _better(obj, subset, best_obj, best_support):
                best_obj, best_support, best_xi = obj, subset, xi
            continue

        avail = tuple(sorted(fixed + tuple(undecided)))
        bound, xi_relaxed = ls.solve(avail)
        if bound_hook is not None:
            bound_hook(fixed=fixed, excluded=excluded, bound=bound)
        if bound > best_obj:
            continue
        # branch on the undecided column with the largest relaxed coefficient
        mag = {j: abs(xi_relaxed[avail.index(j)]) for j in undecided}
        branch = min(undecided, key=lambda j: (-mag[j], j))
        # LIFO stack: push exclusion child first so inclusion is explored first
        stack.append((fixed, excluded | {branch}))
        stack.append((fixed + (branch,), excluded))

    return best_support, best_obj, best_xi, n_nodes, budget_ok


def _stlsq_warm_support(theta, target, kappa, lambda2):
    """Incumbent for branch-and-bound: full ridge fit projected to the
    kappa largest-magnitude coefficients (threshold-0 sequential LS)."""
    p = theta.shape[1]
    a = theta.T @ theta + lambda2 * np.eye(p)
    c = theta.T @ target
    try:
        xi = np.linalg.solve(a, c)
    except np.linalg.LinAlgError:
        xi = np.linalg.lstsq(a, c, rcond=None)[0]
    order = sorted(range(p), key=lambda j: (-abs(xi[j]), j))
    return tuple(sorted(order[:kappa]))


def solve_support(problem, enumeration_cap=DEFAULT_ENUMERATION_CAP,
                  node_budget=DEFAULT_NODE_BUDGET, bound_hook=None):
    """Globally minimize the kappa-constrained (ridge) least squares problem.

    Enumerates all C(P, kappa) supports when that count is at or below
    enumeration_cap, otherwise runs branch-and-bound warm-started from the
    thresholded least-squares projection.  Objective ties are broken toward
    the lexicographically smallest support; the same subset evaluator backs
    both paths, so identical supports give bit-identical objectives.
    """
    theta = np.asarray(problem.theta, dtype=float)
    target = np.asarray(problem.target, dtype=float)
    p = theta.shape[1]
    ls = _SubsetLS(theta, target, problem.lambda2)

    if math.comb(p, problem.kappa) <= enumeration_cap:
        support, obj, xi_s, n_nodes, proven = _solve_enumeration(ls, problem.kappa)
    else:
        warm = _stlsq_warm_support(theta, target, problem.kappa, problem.lambda2)
        support, obj, xi_s, n_nodes, proven = _solve_branch_and_bound(
            ls, problem.kappa, node_budget, warm, bound_hook)

    gamma = np.zeros(p, dtype=bool)
    gamma[list(support)] = True
    xi = np.zeros(p)
    xi[list(support)] = xi_s
    return SupportSelection(gamma=gamma, objective=float(obj),
                            proven_optimal=proven, nodes_explored=n_nodes, xi=xi)


def fit_coefficients(theta_original, target_original, gamma, ridge_fallback=1e-10):
    """Ordinary least squares restricted to the selected columns.

    Entries at unselected columns are exactly zero.  A rank-deficient
    selection falls back to a minimally ridge-perturbed solve and emits a
    RuntimeWarning.
    """
    theta = np.asarray(theta_original, dtype=float)
    target = np.asarray(target_original, dtype=float)
    gamma = np.asarray(gamma, dtype=bool)
    if gamma.sum() < 1:
        raise ValueError("gamma selects no columns")
    idx = np.flatnonzero(gamma)
    sub = theta[:, idx]
    coef, _, rank, _ = np.linalg.lstsq(sub, target, rcond=None)
    if rank < idx.size:
        scale = np.trace(sub.T @ sub) / idx.size
        a = sub.T @ sub + ridge_fallback * scale * np.eye(idx.size)
        coef = np.linalg.solve(a, sub.T @ target)
        warnings.warn(
            "selected columns are rank deficient; coefficients solved with "
            f"ridge perturbation {ridge_fallback:g}", RuntimeWarning)
    xi = np.zeros(theta.shape[1])
    xi[idx] = coef
    return xi


def stlsq_baseline(theta, target, threshold, max_iters=20):
    """Sequential threshold least squares (SINDy-style heuristic).

    Alternates a least-squares fit on the active set with hard-thresholding
    of small coefficients until the active set stops changing.  Returns
    (gamma, xi); an empty active set yields an all-false gamma.
    """
    if threshold < 0:
        raise ValueError("threshold must be >= 0")
    theta = np.asarray(theta, dtype=float)
    target = np.asarray(target, dtype=float)
    p = theta.shape[1]
    xi = np.linalg.lstsq(theta, target, rcond=None)[0]
    for _ in range(max_iters):
        active = np.abs(xi) >= threshold
        if not active.any():
            warnings.warn("threshold removed every coefficient", RuntimeWarning)
            return np.zeros(p, dtype=bool), np.zeros(p)
        xi_new = np.zeros(p)
        xi_new[active] = np.linalg.lstsq(theta[:, active], target, rcond=None)[0]
        new_active = np.abs(xi_new) >= threshold
        if np.array_equal(new_active, active):
            xi_new[~new_active] = 0.0
            return new_active, xi_new
        xi = xi_new
    active = np.abs(xi) >= threshold
    xi[~active] = 0.0
    return active, xi


@dataclass(frozen=True)
class SparseModel:
    """Identified sparse model: support and coefficients per equation."""

    dictionary: Dictionary
    gamma_matrix: np.ndarray     # (P, J) booleans
    xi_matrix: np.ndarray        # (P, J) floats
    residual_rms: np.ndarray     # (J,)
    diagnostics: tuple = field(default=())   # per-equation dicts

    def __post_init__(self):
        if np.any((self.xi_matrix != 0) & ~self.gamma_matrix):
            raise ValueError("nonzero coefficient outside the support")

    @property
    def n_equations(self) -> int:
        return self.gamma_matrix.shape[1]

    def equation_text(self, j) -> str:
        parts = []
        for p in np.flatnonzero(self.gamma_matrix[:, j]):
            coef = self.xi_matrix[p, j]
            lab = self.dictionary.terms[p].label
            term = f"{abs(coef):.6g}" if lab == "1" else f"{abs(coef):.6g}*{lab}"
            parts.append(("- " if coef < 0 else "+ ") + term)
        body = " ".join(parts).lstrip("+ ") or "0"
        return f"dx{j + 1}/dt = {body}"

    def to_json_dict(self) -> dict:
        return {
            "dictionary": self.dictionary.to_json_dict(),
            "equations": [
                {
                    "support": [int(i) for i in np.flatnonzero(self.gamma_matrix[:, j])],
                    "coefficients": [float(v) for v in
                                     self.xi_matrix[self.gamma_matrix[:, j], j]],
                    "residual_rms": float(self.residual_rms[j]),
                    "rendered": self.equation_text(j),
                    "solver": dict(self.diagnostics[j]) if self.diagnostics else {},
                }
                for j in range(self.n_equations)
            ],
        }

    def _active_terms(self):
        """Per equation: list of (coefficient, variable-index tuple)."""
        dict_ = self.dictionary
        per_eq = []
        for j in range(self.n_equations):
            terms = []
            for p in np.flatnonzero(self.gamma_matrix[:, j]):
                term = dict_.terms[p]
                if term.kind == "constant":
                    terms.append((self.xi_matrix[p, j], ()))
                elif term.kind == "monomial":
                    idxs = []
                    for i, e in enumerate(term.exponents):
                        idxs.extend([i] * e)
                    terms.append((self.xi_matrix[p, j], tuple(idxs)))
                else:
                    raise ValueError(
                        f"term kind {term.kind!r} has no pointwise state-space form")
            per_eq.append(terms)
        return per_eq

    def make_rhs(self):
        """Continuous-time right-hand side f(x, u) -> dx/dt for monomial models.

        The returned callable accepts x of shape (J,) or a batch (B, J) with
        u scalar, (S,), or batched (B, S) respectively.
        """
        per_eq = self._active_terms()
        n_states = self.dictionary.state_arity
        n_inputs = self.dictionary.input_arity

        def rhs(x, u=None):
            x = np.asarray(x, dtype=float)
            batched = x.ndim == 2
            if n_inputs:
                u_arr = np.asarray(u, dtype=float)
                if batched:
                    u_arr = u_arr.reshape(x.shape[0], n_inputs)
                else:
                    u_arr = u_arr.reshape(n_inputs)
                v = np.concatenate([x, u_arr], axis=-1)
            else:
                v = x
            out = np.zeros(x.shape[:-1] + (len(per_eq),))
            for j, terms in enumerate(per_eq):
                acc = out[..., j]
                for coef, idxs in terms:
                    t = np.full(x.shape[:-1], coef)
                    for i in idxs:
                        t = t * v[..., i]
                    acc += t
            return out

        return rhs


def _default_lambda2_rule(target_normalized):
    """Selection-stage ridge strength; zero keeps subset ranking unbiased."""
    return 0.0


def paper_lambda2_rule(target_normalized):
    """Ridge rule sigma/sqrt(N) evaluated on the normalized target."""
    n = len(target_normalized)
    return float(np.std(target_normalized)) / math.sqrt(n)


def identify_model(dataset, dictionary, kappas, lambda2_rule=None, big_m=1000.0,
                   delay_columns=None, enumeration_cap=DEFAULT_ENUMERATION_CAP,
                   node_budget=DEFAULT_NODE_BUDGET):
    """Two-stage identification of every governing equation.

    For each state j: normalize the feature matrix and the measured
    derivative column, solve the kappa_j-constrained support problem, then
    refit the selected coefficients on the original-scale data.  Equation
    failures are recorded in the diagnostics and do not abort the others.

    Parameters
    ----------
    dataset : Trajectory with X, U and measured/derived Xdot.
    dictionary : Dictionary evaluated over the dataset.
    kappas : per-equation term counts (length J).
    lambda2_rule : callable(normalized_target) -> ridge strength for the
        selection stage; defaults to 0.
    big_m : coefficient bound on the normalized scale; if a solution
        approaches it, the bound is doubled and the solve repeated.
    """
    if dataset.Xdot is None:
        raise ValueError("dataset has no derivative matrix; compute or measure Xdot first")
    rule = lambda2_rule if lambda2_rule is not None else _default_lambda2_rule
    theta = evaluate_dictionary(dictionary, dataset.X, dataset.U, delay_columns)
    n, p = theta.shape
    n_eq = dataset.Xdot.shape[1]
    if len(kappas) != n_eq:
        raise ValueError(f"need {n_eq} kappa values, got {len(kappas)}")

    gamma_matrix = np.zeros((p, n_eq), dtype=bool)
    xi_matrix = np.zeros((p, n_eq))
    residual_rms = np.zeros(n_eq)
    diagnostics = []
    for j in range(n_eq):
        target = dataset.Xdot[:, j]
        diag = {"equation": j, "failed": False}
        try:
            th_n, y_n, _, _ = normalize_columns(theta, target, dictionary.labels)
            lam = float(rule(y_n))
            m_bound = float(big_m)
            while True:
                problem = RegressionProblem(theta=th_n, target=y_n, kappa=int(kappas[j]),
                                            lambda2=lam, big_m=m_bound)
                sel = solve_support(problem, enumeration_cap=enumeration_cap,
                                    node_budget=node_budget)
                if np.max(np.abs(sel.xi)) < 0.9 * m_bound:
                    break
                m_bound *= 2.0
            with warnings.catch_warnings(record=True) as caught:
                warnings.simplefilter("always")
                xi = fit_coefficients(theta, target, sel.gamma)
            gamma_matrix[:, j] = sel.gamma
            xi_matrix[:, j] = xi
            resid = target - theta @ xi
            residual_rms[j] = float(np.sqrt(np.mean(resid ** 2)))
            diag.update(objective=sel.objective, proven_optimal=sel.proven_optimal,
                        nodes_explored=sel.nodes_explored, lambda2=lam,
                        big_m_final=m_bound,
                        stage2_ridge_fallback=any(
                            issubclass(w.category, RuntimeWarning) for w in caught))
        except Exception as exc:  # keep the other equations alive
            diag.update(failed=True, error=str(exc))
            residual_rms[j] = np.nan
        diagnostics.append(diag)

    return SparseModel(dictionary=dictionary, gamma_matrix=gamma_matrix,
                       xi_matrix=xi_matrix, residual_rms=residual_rms,
                       diagnostics=tuple(diagnostics))


# ---------------------------------------------------------------------------
# Turning machine identification: structure and force fitted separately
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TurningModel:
    """Equation of motion assembled from the structural and force fits.

    Structural regression: F ~ k*y + c*ydot + m*yddot over a degree-2
    dictionary in (y, ydot, yddot).  Force regression: F ~ c0 + c1*dy over
    the same dictionary plus the delayed-difference column dy; the known
    chip width of the training cut converts (c0, c1) to the width-scaled
    force law F = ks_cosbeta * b * (hm + dy).  SI units throughout.
    """

    m: float
    c: float
    k: float
    ks_cosbeta: float
    hm: float
    b_train: float
    struct_model: SparseModel
    force_model: SparseModel
    well_formed: bool

    def equation_text(self) -> str:
        a1 = self.ks_cosbeta * self.hm
        return (f"{self.m:.6g}*yddot + {self.c:.6g}*ydot + {self.k:.6g}*y = "
                f"{a1:.6g}*b + {self.ks_cosbeta:.6g}*b*(y(t-tau)-y(t))   [SI]")

    def to_json_dict(self) -> dict:
        return {
            "m_kg": self.m, "c_Ns_per_m": self.c, "k_N_per_m": self.k,
            "ks_cosbeta_N_per_m2": self.ks_cosbeta, "hm_m": self.hm,
            "b_train_m": self.b_train, "well_formed": self.well_formed,
            "rendered": self.equation_text(),
            "structural": self.struct_model.to_json_dict(),
            "force": self.force_model.to_json_dict(),
        }

    def to_turning_params(self, steps_per_rev, n_rev, blowup_bound=1.0):
        """Simulator parameters realizing this model; the oriented force
        product is carried as ks with a zero force angle."""
        from .plants import TurningParams
        return TurningParams(m=self.m, c=self.c, k=self.k, ks=self.ks_cosbeta,
                             hm=self.hm, beta_force=0.0,
                             steps_per_rev=int(steps_per_rev), n_rev=int(n_rev),
                             blowup_bound=blowup_bound)


def turning_truth_supports(struct_dict, force_dict):
    """Ground-truth supports for the two turning regressions."""
    s_true = {struct_dict.term_index("x1"), struct_dict.term_index("x2"),
              struct_dict.term_index("x3")}
    f_true = {force_dict.term_index("1"),
              force_dict.term_index("(x1(t-tau)-x1(t))")}
    return s_true, f_true


def identify_turning_model(y, ydot, yddot, fn, delay_column, b,
                           kappa_struct=3, kappa_force=2, lambda2_rule=None,
                           big_m=1000.0):
    """Identify the turning equation of motion from (possibly noisy) series.

    Both regressions target the measured normal force.  The structural
    dictionary holds the 10 monomials of degree <= 2 over (y, ydot, yddot);
    the force dictionary appends the once-per-revolution delayed difference
    y(t - tau) - y(t).  b is the chip width of the training cut in meters.
    """
    X = np.column_stack([y, ydot, yddot])
    traj = _ArrayDataset(X=X, U=None, Xdot=np.asarray(fn, float)[:, None])

    struct_dict = build_dictionary(state_arity=3, input_arity=0, max_degree=2)
    struct = identify_model(traj, struct_dict, kappas=[kappa_struct],
                            lambda2_rule=lambda2_rule, big_m=big_m)

    force_dict = build_dictionary(state_arity=3, input_arity=0, max_degree=2,
                                  delay_indices=(0,))
    force = identify_model(traj, force_dict, kappas=[kappa_force],
                           lambda2_rule=lambda2_rule, big_m=big_m,
                           delay_columns={0: np.asarray(delay_column, float)})

    s_true, f_true = turning_truth_supports(struct_dict, force_dict)
    s_got = set(np.flatnonzero(struct.gamma_matrix[:, 0]))
    f_got = set(np.flatnonzero(force.gamma_matrix[:, 0]))
    well_formed = (s_got == s_true) and (f_got == f_true)

    k_hat = float(struct.xi_matrix[struct_dict.term_index("x1"), 0])
    c_hat = float(struct.xi_matrix[struct_dict.term_index("x2"), 0])
    m_hat = float(struct.xi_matrix[struct_dict.term_index("x3"), 0])
    c0 = float(force.xi_matrix[force_dict.term_index("1"), 0])
    c1 = float(force.xi_matrix[force_dict.term_index("(x1(t-tau)-x1(t))"), 0])
    ks_cosbeta = c1 / b if b > 0 else np.nan
    hm_hat = c0 / c1 if c1 != 0 else np.nan

    return TurningModel(m=m_hat, c=c_hat, k=k_hat, ks_cosbeta=ks_cosbeta,
                        hm=hm_hat, b_train=float(b), struct_model=struct,
                        force_model=force, well_formed=well_formed)


@dataclass
class _ArrayDataset:
    """Minimal dataset shim for identify_model."""
    X: np.ndarray
    U: np.ndarray
    Xdot: np.ndarray


# ---------------------------------------------------------------------------
# Ground-truth supports for the controlled Lorenz benchmark
# ---------------------------------------------------------------------------

def lorenz_truth_supports(dictionary):
    """Supports of the controlled Lorenz equations in the given dictionary."""
    ix = dictionary.term_index
    return [
        {ix("x1"), ix("x2"), ix("u1")},
        {ix("x1"), ix("x2"), ix("x1*x3")},
        {ix("x3"), ix("x1*x2")},
    ]


def LORENZ_TRUE_GAMMA(dictionary):
    """(P, 3) boolean truth matrix for the controlled Lorenz system."""
    gamma = np.zeros((len(dictionary), 3), dtype=bool)
    for j, sup in enumerate(lorenz_truth_supports(dictionary)):
        gamma[list(sup), j] = True
    return gamma
