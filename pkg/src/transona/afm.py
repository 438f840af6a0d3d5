"""Individualized additive factors model (iAFM) and the learning-rate median split.

The per-student random effects of the usual mixed-model formulation are
replaced by ridge penalties on the proficiency intercepts and learning-rate
deviations, which keeps the fit a smooth concave problem solved by damped
Newton iterations.
"""
from __future__ import annotations

import csv
import io
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Mapping

import numpy as np
from scipy.special import expit

from .errors import ConvergenceError, DataError
from .events import Code, Event, EventSource, sort_key, student_sort_key

LOW = "LOW"
HIGH = "HIGH"

# Fitted logits past this put p within 1.5e-8 of 0 or 1: treated as separation.
_SATURATED_ETA = 18.0


@dataclass(frozen=True)
class OpportunityRow:
    student: str
    kc: str
    opportunity: int
    correct: bool


@dataclass
class OpportunityTable:
    rows: list
    skipped_missing_kc: int = 0

    def __iter__(self):
        return iter(self.rows)

    def __len__(self):
        return len(self.rows)


@dataclass
class AfmFit:
    students: list
    kcs: list
    theta: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray
    delta: np.ndarray
    lambda_theta: float
    lambda_delta: float
    converged: bool
    loglik: float
    objective: float
    grad_norm: float
    iterations: int
    objective_history: list = field(default_factory=list)

    @property
    def delta_by_student(self):
        return {s: float(d) for s, d in zip(self.students, self.delta)}

    def predict(self, student, kc, opportunity):
        i = self.students.index(student)
        k = self.kcs.index(kc)
        eta = self.theta[i] + self.beta[k] + (self.gamma[k] + self.delta[i]) * opportunity
        return 1.0 / (1.0 + np.exp(-eta))


@dataclass
class GroupAssignment:
    groups: dict
    split: float
    tie_warning: bool = False

    def members(self, label):
        return sorted((s for s, g in self.groups.items() if g == label), key=student_sort_key)


def first_encounters(events: Iterable[Event]):
    """Yield ``(event, first_attempt_correct)`` for each student's first transaction on a step."""
    seen = set()
    tutor = sorted((ev for ev in events if ev.source is EventSource.TUTOR_LOG), key=sort_key)
    for ev in tutor:
        key = (ev.student, ev.payload.get("problem", ""), ev.payload.get("step", ""))
        if key in seen:
            continue
        seen.add(key)
        yield ev, Code.CORRECT_FIRST_ATTEMPT in ev.codes


def build_opportunity_table(events: Iterable[Event]) -> OpportunityTable:
    counters = defaultdict(int)
    rows, skipped = [], 0
    for ev, correct in first_encounters(events):
        kc = ev.payload.get("kc", "")
        if not kc:
            skipped += 1
            continue
        key = (ev.student, kc)
        rows.append(OpportunityRow(ev.student, kc, counters[key], bool(correct)))
        counters[key] += 1
    return OpportunityTable(rows, skipped)


def _design(rows, students, kcs):
    s_idx = {s: i for i, s in enumerate(students)}
    k_idx = {k: i for i, k in enumerate(kcs)}
    S, K, n = len(students), len(kcs), len(rows)
    X = np.zeros((n, 2 * S + 2 * K))
    y = np.empty(n)
    r = np.arange(n)
    si = np.array([s_idx[row.student] for row in rows])
    ki = np.array([k_idx[row.kc] for row in rows])
    T = np.array([row.opportunity for row in rows], dtype=float)
    X[r, si] = 1.0
    X[r, S + ki] = 1.0
    X[r, S + K + ki] = T
    X[r, S + 2 * K + si] = T
    y[:] = [1.0 if row.correct else 0.0 for row in rows]
    return X, y


def _log1pexp(eta):
    return np.logaddexp(0.0, eta)


def penalized_objective(w, X, y, penalty):
    eta = X @ w
    return float(np.sum(y * eta - _log1pexp(eta)) - np.sum(penalty * w * w))


def objective_change(w, dw, X, y, penalty):
    """``penalized_objective(w + dw) - penalized_objective(w)`` summed termwise.

    Differencing the two totals loses every digit once Newton steps get small;
    this form keeps the sign of tiny improvements reliable.
    """
    eta = X @ w
    d = X @ dw
    if np.max(np.abs(d)) > 30.0:
        return penalized_objective(w + dw, X, y, penalty) - penalized_objective(w, X, y, penalty)
    softplus_change = np.log1p(expit(eta) * np.expm1(d))
    return float(np.sum(y * d - softplus_change) - np.sum(penalty * dw * (2.0 * w + dw)))


def fit_iafm(rows, lambda_theta=1.0, lambda_delta=1.0, max_iter=500, tol=1e-8,
             raise_on_failure=True) -> AfmFit:
    """Fit the penalized iAFM by damped Newton ascent.

    Maximizes ``sum log Bernoulli(y | sigmoid(theta_i + beta_k + (gamma_k + delta_i) T))
    - lambda_theta * sum theta^2 - lambda_delta * sum delta^2``.
    """
    rows = list(rows)
    if not rows:
        raise DataError("iAFM needs at least one opportunity row")
    students = sorted({r.student for r in rows}, key=student_sort_key)
    kcs = sorted({r.kc for r in rows})
    if len(students) < 2:
        raise DataError("iAFM needs at least two students")
    outcomes = {r.correct for r in rows}
    if len(outcomes) < 2:
        raise DataError("iAFM needs both correct and incorrect outcomes")
    if lambda_theta < 0 or lambda_delta < 0:
        raise ValueError("penalties must be non-negative")

    X, y = _design(rows, students, kcs)
    S, K = len(students), len(kcs)
    penalty = np.zeros(X.shape[1])
    penalty[:S] = lambda_theta
    penalty[S + 2 * K:] = lambda_delta

    w = np.zeros(X.shape[1])
    f = penalized_objective(w, X, y, penalty)
    history = [f]
    for _ in range(max_iter):
        eta = X @ w
        p = 1.0 / (1.0 + np.exp(-eta))
        grad = X.T @ (y - p) - 2.0 * penalty * w
        grad_norm = float(np.linalg.norm(grad))
        if grad_norm < tol:
            break
        hess = (X.T * (p * (1.0 - p))) @ X + np.diag(2.0 * penalty)
        step = _solve_damped(hess, grad)
        t = 1.0
        for _ in range(60):
            change = objective_change(w, t * step, X, y, penalty)
            if change >= 0:
                break
            t *= 0.5
        else:
            break
        w = w + t * step
        f = f + change
        history.append(f)
    eta = X @ w
    p = 1.0 / (1.0 + np.exp(-eta))
    grad = X.T @ (y - p) - 2.0 * penalty * w
    grad_norm = float(np.linalg.norm(grad))
    saturated = bool(np.max(np.abs(eta)) > _SATURATED_ETA)
    converged = bool(grad_norm < tol and np.all(np.isfinite(w)) and not saturated)
    fit = AfmFit(
        students=students, kcs=kcs,
        theta=w[:S].copy(), beta=w[S:S + K].copy(), gamma=w[S + K:S + 2 * K].copy(),
        delta=w[S + 2 * K:].copy(),
        lambda_theta=float(lambda_theta), lambda_delta=float(lambda_delta),
        converged=converged, loglik=float(np.sum(y * eta - _log1pexp(eta))), objective=penalized_objective(w, X, y, penalty),
        grad_norm=grad_norm, iterations=len(history) - 1, objective_history=history,
    )
    if not converged and raise_on_failure:
        err = ConvergenceError(
            f"iAFM did not converge after {len(history) - 1} of {max_iter} iterations "
            f"(gradient norm {grad_norm:.3g}); "
            + ("fitted probabilities saturate, " if saturated else "")
            + "outcomes may be perfectly separated, try positive penalties")
        err.fit = fit
        raise err
    return fit


def _solve_damped(hess, grad):
    try:
        L = np.linalg.cholesky(hess)
    except np.linalg.LinAlgError:
        mu = 1e-8 * max(1.0, float(np.max(np.abs(np.diag(hess)))))
        eye = np.eye(len(grad))
        while True:
            try:
                L = np.linalg.cholesky(hess + mu * eye)
                break
            except np.linalg.LinAlgError:
                mu *= 10.0
    z = np.linalg.solve(L, grad)
    return np.linalg.solve(L.T, z)


def median_split(fit: AfmFit | Mapping[str, float], tie_fraction=0.2) -> GroupAssignment:
    """Students whose learning-rate deviation is strictly above the median are HIGH."""
    deltas = fit.delta_by_student if isinstance(fit, AfmFit) else dict(fit)
    if len(deltas) < 2:
        raise DataError("median split needs at least two students")
    values = np.array(list(deltas.values()), dtype=float)
    split = float(np.median(values))
    ties = int(np.sum(values == split))
    ties = ties if ties > 1 else 0  # a lone middle value is not a tie
    tie_warning = ties > tie_fraction * len(values)
    if tie_warning:
        warnings.warn(f"{ties} of {len(values)} learning rates tie at the median {split:g}",
                      stacklevel=2)
    groups = {s: HIGH if d > split else LOW for s, d in deltas.items()}
    return GroupAssignment(groups, split, tie_warning)


def learning_rates_to_csv(fit: AfmFit, assignment: GroupAssignment) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["student_id", "delta", "group"])
    for s, d in zip(fit.students, fit.delta):
        writer.writerow([s, repr(float(d)), assignment.groups[s]])
    return buf.getvalue()


def learning_rates_from_csv(text: str) -> tuple[dict, dict]:
    """Returns ``(deltas, groups)`` keyed by student id."""
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != ["student_id", "delta", "group"]:
        raise DataError("learning-rate CSV header must be student_id,delta,group")
    deltas, groups = {}, {}
    for lineno, row in enumerate(reader, start=2):
        try:
            deltas[row["student_id"]] = float(row["delta"])
        except ValueError:
            raise DataError(f"line {lineno}: bad delta {row['delta']!r}") from None
        groups[row["student_id"]] = row["group"]
    return deltas, groups
