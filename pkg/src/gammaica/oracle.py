"""Discrete-grid verification of the theory behind the gamma losses.

Everything here works on finite probability tables, where the population
functionals become exact finite sums and their minimizers can be found by
brute numerical search, independently of the closed forms they are checked
against:

* binary minimizer: per-cell golden-section search on log r versus the
  closed form r* = (1 - eps(u)) p*(x|u) / p(x);
* multiclass minimizer: per-x coordinate descent on the score vector
  versus p*(x|u), up to the per-x scale invariance of the objective;
* the outlier-leakage integral nu: exact table sums, zero on separated
  supports at r*, decreasing in gamma on tail overlap;
* influence function: the estimating equation of a one-parameter probe
  model is solved by root finding with and without point-mass
  contamination, and the finite-difference IF is extrapolated to eps -> 0.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import brentq

from .errors import InputError, NumericalError, ParameterError

GOLDEN = (math.sqrt(5.0) - 1.0) / 2.0


# ---------------------------------------------------------------------------
# discrete contaminated joint density

@dataclass
class DiscreteJointDensity:
    """Finite-grid contaminated model: target p*(x,u), outlier delta(x,u),
    per-u contamination ratio eps(u), plus the derived contaminated joint
    and marginals."""

    x_grid: np.ndarray
    u_grid: np.ndarray
    pstar_xu: np.ndarray        # (n_x, n_u) target joint, sums to 1
    delta_xu: np.ndarray        # (n_x, n_u) outlier joint, sums to 1
    eps_u: np.ndarray           # (n_u,)
    p_xu: np.ndarray = field(init=False)
    p_x: np.ndarray = field(init=False)
    p_u: np.ndarray = field(init=False)

    def __post_init__(self):
        for name, tbl in (("pstar_xu", self.pstar_xu), ("delta_xu", self.delta_xu)):
            if (tbl < 0).any():
                raise InputError(f"{name} has negative entries")
            if abs(tbl.sum() - 1.0) > 1e-9:
                raise InputError(f"{name} must sum to 1")
        if ((self.eps_u < 0) | (self.eps_u >= 1)).any():
            raise InputError("eps(u) must lie in [0, 1)")
        self.p_xu = (1.0 - self.eps_u) * self.pstar_xu + self.eps_u * self.delta_xu
        self.p_x = self.p_xu.sum(axis=1)
        self.p_u = self.p_xu.sum(axis=0)

    @classmethod
    def from_conditionals(cls, x_grid, u_grid, p_u, pstar_x_given_u, delta_x_given_u, eps_u):
        """Build from per-u conditional tables; columns are normalized."""
        x_grid = np.asarray(x_grid, dtype=np.float64)
        u_grid = np.asarray(u_grid, dtype=np.float64)
        p_u = np.asarray(p_u, dtype=np.float64)
        p_u = p_u / p_u.sum()
        pstar = np.asarray(pstar_x_given_u, dtype=np.float64)
        delta = np.asarray(delta_x_given_u, dtype=np.float64)
        pstar = pstar / pstar.sum(axis=0, keepdims=True)
        delta = delta / delta.sum(axis=0, keepdims=True)
        eps = np.broadcast_to(np.asarray(eps_u, dtype=np.float64), p_u.shape).copy()
        return cls(x_grid, u_grid, pstar * p_u, delta * p_u, eps)

    def pstar_x_given_u(self) -> np.ndarray:
        pu_star = self.pstar_xu.sum(axis=0)
        safe = np.where(pu_star == 0.0, 1.0, pu_star)
        return self.pstar_xu / safe

    def r_star(self) -> np.ndarray:
        """Closed-form minimizer (1 - eps(u)) p*(x|u) / p(x) on the grid."""
        cond = self.pstar_x_given_u()
        px = np.where(self.p_x == 0.0, np.nan, self.p_x)
        return (1.0 - self.eps_u) * cond / px[:, None]


def golden_section_max(f, lo: float, hi: float, tol: float = 1e-10) -> float:
    """Argmax of a unimodal scalar function on [lo, hi]."""
    a, b = lo, hi
    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fc, fd = f(c), f(d)
    while (b - a) > tol:
        if fc >= fd:
            b, d, fd = d, c, fc
            c = b - GOLDEN * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + GOLDEN * (b - a)
            fd = f(d)
    return 0.5 * (a + b)


def _log_sigmoid(t: float | np.ndarray):
    return -np.logaddexp(0.0, -t)


def _pow_sigmoid(t, w):
    """sigmoid(t) ** w computed in the log domain; exact 0 at t = -inf."""
    with np.errstate(invalid="ignore"):
        out = np.exp(w * _log_sigmoid(t))
    return np.where(np.isneginf(np.asarray(t, dtype=np.float64)), 0.0, out)


@dataclass
class BinaryMinimizerResult:
    r_hat: np.ndarray
    r_star: np.ndarray
    max_rel_deviation: float
    skipped_cells: list


def discrete_binary_entropy(density: DiscreteJointDensity, log_r: np.ndarray, gamma: float) -> float:
    """The population binary gamma objective J on the grid, evaluated at the
    score table log_r (use -inf for r = 0)."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    w = gamma / (gamma + 1.0)
    m1 = (1.0 - density.eps_u) * density.pstar_xu
    m0 = np.outer(density.p_x, density.p_u)
    t = (gamma + 1.0) * log_r
    total = 0.5 * (_pow_sigmoid(t, w) * m1).sum() + 0.5 * (_pow_sigmoid(-t, w) * m0).sum()
    return -math.log(total) / gamma


def brute_force_minimizer(density: DiscreteJointDensity, gamma: float,
                          bracket: float = 60.0, tol: float = 1e-10) -> BinaryMinimizerResult:
    """Minimize the discrete binary gamma objective cell by cell and compare
    the result to the closed-form minimizer.

    Cells where either mixture weight vanishes have no interior optimum and
    are skipped (and reported)."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    w = gamma / (gamma + 1.0)
    m1 = (1.0 - density.eps_u) * density.pstar_xu
    m0 = np.outer(density.p_x, density.p_u)
    n_x, n_u = m1.shape
    r_hat = np.full((n_x, n_u), np.nan)
    r_star = density.r_star()
    skipped = []
    max_dev = 0.0
    for i in range(n_x):
        for j in range(n_u):
            a, b = m1[i, j], m0[i, j]
            if a == 0.0 or b == 0.0:
                skipped.append((i, j, "zero marginal cell"))
                continue

            def cell(t, a=a, b=b):
                s = (gamma + 1.0) * t
                return a * math.exp(w * _log_sigmoid(s)) + b * math.exp(w * _log_sigmoid(-s))

            t_hat = golden_section_max(cell, -bracket, bracket, tol)
            r_hat[i, j] = math.exp(t_hat)
            dev = abs(r_hat[i, j] - r_star[i, j]) / r_star[i, j]
            max_dev = max(max_dev, dev)
    return BinaryMinimizerResult(r_hat, r_star, max_dev, skipped)


@dataclass
class MulticlassMinimizerResult:
    scores: np.ndarray              # (n_x, K) normalized r_hat per x
    target: np.ndarray              # (n_x, K) normalized p*(x|u)
    max_abs_deviation: float
    skipped_x: list


def brute_force_minimizer_multiclass(
    density: DiscreteJointDensity,
    gamma: float,
    target: str = "leading-term",
    bracket: float = 40.0,
    sweeps: int = 300,
    tol: float = 1e-9,
) -> MulticlassMinimizerResult:
    """Minimize the multiclass gamma objective over per-x score vectors by
    coordinate descent and compare (after per-x normalization, which the
    objective cannot see) to the target conditional p*(x|u).

    target='leading-term' optimizes the outlier-free part of the entropy
    decomposition; target='contaminated' optimizes the full contaminated
    entropy, which deviates from p*(x|u) when supports overlap."""
    if gamma <= 0:
        raise ParameterError("gamma must be positive")
    if target == "leading-term":
        c = (1.0 - density.eps_u) * density.pstar_xu
    elif target == "contaminated":
        c = density.p_xu
    else:
        raise ParameterError(f"unknown target {target!r}")
    w = gamma / (gamma + 1.0)
    n_x, k = c.shape
    cond = density.pstar_x_given_u()

    valid = (c.sum(axis=1) > 0.0) & (cond.sum(axis=1) > 0.0)
    skipped = [(int(i), "zero marginal cell") for i in np.nonzero(~valid)[0]]
    scores = np.full((n_x, k), np.nan)
    targets = np.full((n_x, k), np.nan)
    if not valid.any():
        return MulticlassMinimizerResult(scores, targets, 0.0, skipped)

    with np.errstate(divide="ignore"):
        lc = np.log(c[valid])
    m = lc.shape[0]

    def objective(rho_mat):
        num = lc + gamma * rho_mat
        nmax = num.max(axis=1, keepdims=True)
        den = (gamma + 1.0) * rho_mat
        dmax = den.max(axis=1, keepdims=True)
        return (nmax[:, 0] + np.log(np.exp(num - nmax).sum(axis=1))
                - w * (dmax[:, 0] + np.log(np.exp(den - dmax).sum(axis=1))))

    # one golden-section pass per coordinate, all grid rows in parallel
    n_iter = int(math.ceil(math.log(1e-11 / (2.0 * bracket)) / math.log(GOLDEN)))
    rho = np.zeros((m, k))
    for _ in range(sweeps):
        moved = 0.0
        for v in range(k):
            def coord(t):
                trial = rho.copy()
                trial[:, v] = t
                return objective(trial)

            a = np.full(m, -bracket)
            b = np.full(m, bracket)
            cc = b - GOLDEN * (b - a)
            dd = a + GOLDEN * (b - a)
            fc, fd = coord(cc), coord(dd)
            for _ in range(n_iter):
                left = fc >= fd
                b = np.where(left, dd, b)
                a = np.where(left, a, cc)
                cc = b - GOLDEN * (b - a)
                dd = a + GOLDEN * (b - a)
                fc, fd = coord(cc), coord(dd)
            new = 0.5 * (a + b)
            moved = max(moved, float(np.abs(new - rho[:, v]).max()))
            rho[:, v] = new
        if moved < tol:
            break

    r = np.exp(rho - rho.max(axis=1, keepdims=True))
    scores[valid] = r / r.sum(axis=1, keepdims=True)
    targets[valid] = cond[valid] / cond[valid].sum(axis=1, keepdims=True)
    max_dev = float(np.abs(scores[valid] - targets[valid]).max())
    return MulticlassMinimizerResult(scores, targets, max_dev, skipped)


def nu_sweep(
    density: DiscreteJointDensity,
    gammas,
    r_choice: str = "r-star",
    perturb_factor: float = 1.1,
) -> list[float]:
    """Exact discrete evaluation of the outlier-leakage integral nu for each
    gamma, at r = r* or at a multiplicative perturbation of it."""
    out = []
    weight = density.eps_u * density.delta_xu
    r_star = density.r_star()
    if r_choice == "r-star":
        r = r_star
    elif r_choice == "perturbed":
        r = r_star * perturb_factor
    else:
        raise ParameterError(f"unknown r_choice {r_choice!r}")
    with np.errstate(divide="ignore"):
        log_r = np.where(np.nan_to_num(r, nan=0.0) > 0.0, np.log(np.where(r > 0, r, 1.0)), -np.inf)
    for gamma in gammas:
        if gamma <= 0:
            raise ParameterError("gamma entries must be positive")
        w = gamma / (gamma + 1.0)
        terms = _pow_sigmoid((gamma + 1.0) * log_r, w)
        out.append(float((terms * weight).sum()))
    return out


# ---------------------------------------------------------------------------
# influence function probe

@dataclass
class IfProbeModel:
    """One-parameter ratio model r_theta(x,u) = exp(theta * phi(x,u)) on a
    grid, with a point-mass contamination location and an eps grid."""

    x_grid: np.ndarray
    u_grid: np.ndarray
    pstar_xu: np.ndarray
    phi: np.ndarray
    gamma: float
    outlier_ix: int
    outlier_iu: int
    eps_grid: tuple = (0.01, 0.005, 0.0025)

    def __post_init__(self):
        if max(self.eps_grid) > 0.05 or min(self.eps_grid) <= 0.0:
            raise ParameterError("eps grid must lie in (0, 0.05]")


def make_if_probe(
    gamma: float,
    outlier_magnitude: float,
    n_x: int = 64,
    n_u: int = 8,
    coupling: float = 0.8,
    eps_grid: tuple = (0.01, 0.005, 0.0025),
) -> IfProbeModel:
    """Laplace-conditional joint p*(x|u) ~ Laplace(coupling*u, 1) with the
    growing feature phi(x, u) = x*u; the outlier sits at
    (outlier_magnitude, max u)."""
    base = np.linspace(-6.0, 6.0, n_x - 1)
    x_grid = np.append(base, outlier_magnitude)
    u_grid = np.linspace(-2.0, 2.0, n_u)
    cond = np.exp(-np.abs(x_grid[:, None] - coupling * u_grid[None, :]))
    cond = cond / cond.sum(axis=0, keepdims=True)
    pstar = cond / n_u
    phi = np.outer(x_grid, u_grid)
    return IfProbeModel(x_grid, u_grid, pstar, phi, gamma,
                        n_x - 1, n_u - 1, eps_grid)


def _estimating_function(theta: float, model: IfProbeModel, pxu, px, pu) -> float:
    g = model.gamma
    w = g / (g + 1.0)
    s = (g + 1.0) * theta * model.phi
    log_l = _log_sigmoid(-s)
    log_1ml = _log_sigmoid(s)
    common = w * (log_l + log_1ml)
    a = np.exp(log_l / (1.0 + g) + common) * (g + 1.0) * model.phi
    b = np.exp(log_1ml / (1.0 + g) + common) * (g + 1.0) * model.phi
    return float((a * pxu).sum() - (b * np.outer(px, pu)).sum())


def _solve_estimating_equation(model: IfProbeModel, pxu, px, pu,
                               span: float = 12.0, points: int = 241) -> float:
    grid = np.linspace(-span, span, points)
    vals = [_estimating_function(t, model, pxu, px, pu) for t in grid]
    for i in range(len(grid) - 1):
        if vals[i] == 0.0:
            return float(grid[i])
        if vals[i] * vals[i + 1] < 0.0:
            return float(brentq(_estimating_function, grid[i], grid[i + 1],
                                args=(model, pxu, px, pu), xtol=1e-12))
    raise NumericalError(
        f"estimating equation not bracketed on [{-span}, {span}]: "
        f"G({-span})={vals[0]:.3e}, G({span})={vals[-1]:.3e}"
    )


@dataclass
class IfEstimate:
    theta_hat: float
    theta_eps: dict
    if_by_eps: dict
    if_value: float             # linear extrapolation of IF(eps) to eps -> 0


def numeric_influence_function(model: IfProbeModel) -> IfEstimate:
    """Finite-difference influence function of the probe estimator under
    point-mass contamination at the model's outlier location."""
    pstar = model.pstar_xu
    px = pstar.sum(axis=1)
    pu = pstar.sum(axis=0)
    theta_hat = _solve_estimating_equation(model, pstar, px, pu)
    theta_eps = {}
    if_by_eps = {}
    for eps in model.eps_grid:
        pxu = (1.0 - eps) * pstar.copy()
        pxu[model.outlier_ix, model.outlier_iu] += eps
        px_eps = (1.0 - eps) * px.copy()
        px_eps[model.outlier_ix] += eps
        pu_eps = (1.0 - eps) * pu.copy()
        pu_eps[model.outlier_iu] += eps
        t_eps = _solve_estimating_equation(model, pxu, px_eps, pu_eps)
        theta_eps[eps] = t_eps
        if_by_eps[eps] = (theta_hat - t_eps) / eps
    eps_arr = np.array(sorted(if_by_eps))
    if_arr = np.array([if_by_eps[e] for e in eps_arr])
    if eps_arr.size >= 2:
        design = np.stack([np.ones_like(eps_arr), eps_arr], axis=1)
        coef, _, _, _ = np.linalg.lstsq(design, if_arr, rcond=None)
        if_value = float(coef[0])
    else:
        if_value = float(if_arr[0])
    return IfEstimate(theta_hat, theta_eps, if_by_eps, if_value)


def influence_magnitude_sweep(gamma: float, magnitudes, **probe_kwargs) -> list[float]:
    """|IF| along a sequence of diverging outlier locations."""
    out = []
    for mag in magnitudes:
        model = make_if_probe(gamma, float(mag), **probe_kwargs)
        out.append(abs(numeric_influence_function(model).if_value))
    return out


# ---------------------------------------------------------------------------
# canonical instances and the verification suite

def separated_support_instance(eps: float, n_x: int = 64, n_u: int = 8) -> DiscreteJointDensity:
    """Target mass on x < 1.5, outlier mass on x > 2: disjoint supports."""
    x = np.linspace(0.0, 4.0, n_x)
    u = np.linspace(0.0, 1.0, n_u)
    mu_t = 0.3 + 0.7 * u
    mu_o = 2.2 + 0.6 * u
    pstar = np.exp(-((x[:, None] - mu_t[None, :]) ** 2) / 0.18) * (x[:, None] <= 1.5)
    delta = np.exp(-((x[:, None] - mu_o[None, :]) ** 2) / 0.08) * (x[:, None] >= 2.0)
    return DiscreteJointDensity.from_conditionals(x, u, np.full(n_u, 1.0 / n_u),
                                                  pstar, delta, eps)


def tail_overlap_instance(eps: float = 0.1, n_x: int = 64, n_u: int = 8) -> DiscreteJointDensity:
    """Outlier density sitting on the tails of an everywhere-positive target."""
    x = np.linspace(-6.0, 6.0, n_x)
    u = np.linspace(-1.0, 1.0, n_u)
    pstar = np.exp(-np.abs(x[:, None] - 0.5 * u[None, :]) / 0.5)
    delta = np.exp(-((x[:, None] - 3.5) ** 2) / 0.5) + np.exp(-((x[:, None] + 3.5) ** 2) / 0.5)
    delta = np.broadcast_to(delta, (n_x, n_u)).copy()
    return DiscreteJointDensity.from_conditionals(x, u, np.full(n_u, 1.0 / n_u),
                                                  pstar, delta, eps)


def multiclass_separated_instance(eps: float, n_x: int = 48, k: int = 3) -> DiscreteJointDensity:
    x = np.linspace(0.0, 4.0, n_x)
    u = np.arange(k, dtype=np.float64)
    mu_t = 0.3 + 0.45 * u
    pstar = np.exp(-((x[:, None] - mu_t[None, :]) ** 2) / 0.1) * (x[:, None] <= 1.6)
    delta = np.exp(-((x[:, None] - (2.4 + 0.3 * u[None, :])) ** 2) / 0.08) * (x[:, None] >= 2.0)
    return DiscreteJointDensity.from_conditionals(x, u, np.full(k, 1.0 / k),
                                                  pstar, delta, eps)


@dataclass
class CheckRow:
    instance: str
    quantity: str
    expected: str
    got: float
    tolerance: float
    passed: bool


def run_verification(gammas_nu=(0.1, 0.5, 1.0, 2.0), if_magnitudes=(2, 5, 10, 50, 100)) -> list[CheckRow]:
    """The oracle suite behind the `verify` subcommand: Theorem-2 minimizers,
    nu behavior, and influence-function boundedness."""
    rows = []

    for eps in (0.1, 0.3, 0.5):
        inst = separated_support_instance(eps)
        res = brute_force_minimizer(inst, gamma=1.0)
        rows.append(CheckRow(f"separated(eps={eps})", "binary minimizer max rel dev",
                             "< 1e-3", res.max_rel_deviation, 1e-3,
                             res.max_rel_deviation < 1e-3))
        inst_mc = multiclass_separated_instance(eps)
        res_mc = brute_force_minimizer_multiclass(inst_mc, gamma=1.0)
        rows.append(CheckRow(f"multiclass-separated(eps={eps})", "normalized score max dev",
                             "< 1e-3", res_mc.max_abs_deviation, 1e-3,
                             res_mc.max_abs_deviation < 1e-3))

    inst = separated_support_instance(0.3)
    nu_sep = nu_sweep(inst, [1.0], "r-star")[0]
    rows.append(CheckRow("separated(eps=0.3)", "nu at r*", "= 0", nu_sep, 0.0, nu_sep == 0.0))

    overlap = tail_overlap_instance(0.1)
    nus = nu_sweep(overlap, gammas_nu, "r-star")
    decreasing = all(a > b for a, b in zip(nus, nus[1:]))
    rows.append(CheckRow("tail-overlap(eps=0.1)", "nu strictly decreasing in gamma",
                         "monotone", float(nus[0] - nus[-1]), 0.0, decreasing))

    j_star = discrete_binary_entropy(overlap, _safe_log(overlap.r_star()), 1.0)
    for factor in (0.9, 1.1):
        j_pert = discrete_binary_entropy(overlap, _safe_log(overlap.r_star() * factor), 1.0)
        rows.append(CheckRow("tail-overlap(eps=0.1)", f"J(r*) <= J({factor} r*)",
                             "<= 0", j_star - j_pert, 1e-12, j_star <= j_pert + 1e-12))

    robust = influence_magnitude_sweep(1.0, if_magnitudes)
    anchor = robust[if_magnitudes.index(10)]
    tail = max(robust[if_magnitudes.index(10):])
    rows.append(CheckRow("if-probe(gamma=1)", "tail max <= 1.05 x |IF(10)|",
                         f"<= {1.05 * anchor:.4g}", tail, 1.05 * anchor,
                         tail <= 1.05 * anchor))
    fragile = influence_magnitude_sweep(0.0, if_magnitudes)
    tail_vals = fragile[if_magnitudes.index(10):]
    increasing = all(a < b for a, b in zip(tail_vals, tail_vals[1:]))
    rows.append(CheckRow("if-probe(gamma=0)", "|IF| strictly increasing on tail",
                         "monotone", tail_vals[-1] - tail_vals[0], 0.0, increasing))
    return rows


def _safe_log(r: np.ndarray) -> np.ndarray:
    r = np.nan_to_num(r, nan=0.0)
    with np.errstate(divide="ignore"):
        return np.where(r > 0.0, np.log(np.where(r > 0.0, r, 1.0)), -np.inf)


def write_verification_csv(path, rows: list[CheckRow]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("instance,quantity,expected,got,tolerance,pass\n")
        for r in rows:
            fh.write(f"{r.instance},{r.quantity},{r.expected},{r.got!r},{r.tolerance!r},{r.passed}\n")
