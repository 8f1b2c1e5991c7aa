"""One convexified subproblem of the outer approximation loop, in conic form.

The epigraph reformulation of the max-min effective-rate problem keeps,
besides powers and the CPU frequency, a handful of schedule variables:
floors r_* and ceilings r~_* on step rates, per-step data ratios a_i, a
latency proxy t_q, a data floor t, and the objective z. All couplings
are either linear, hyperbolic (aux * rate >= payload), inverse terms
from the concave rate bounds, quadratic-over-linear terms from the
convex rate bounds, or tangent quadratic relaxations of products. Every
nonlinear piece maps to a rotated second-order cone, so the whole
subproblem is an SOCP solved here with Clarabel.

Internally rates are scaled to Mbps, frequencies to GHz, payloads to
Mbit, and compute load to Gcycles so all variables sit near unity;
public inputs and outputs stay in SI units.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

import clarabel

from .link_model import Allocation, EstimationVariances, Mode
from .sca_bounds import (
    AffineForm,
    BoundExpr,
    ExpansionPoint,
    VarId,
    build_rate_lb,
    build_rate_ub,
)
from .scenario import LargeScaleFading, SystemParams

RATE_SCALE = 1e6   # bps per internal rate unit
FREQ_SCALE = 1e9   # Hz per internal frequency unit
DATA_SCALE = 1e6   # bits per internal data unit
LOAD_SCALE = 1e9   # cycles per internal load unit


@dataclass
class ScaIterate:
    """One full assignment of decision and schedule variables, SI units."""

    alloc: Allocation
    r_d: float          # floor on FL download rates, bps
    r_u: float          # floor on FL upload rates, bps
    r_td: float         # ceiling on FL download rates, bps
    r_tu: float         # ceiling on FL upload rates, bps
    a1: float           # download-step data ratio, dimensionless
    a2: float           # compute-step data ratio, bits per cycle
    a3: float           # upload-step data ratio, dimensionless
    r1: np.ndarray      # (K,) floors on download-step non-FL rates, bps
    r2: np.ndarray      # (K,) floors on compute-step non-FL rates, bps
    r3: np.ndarray      # (K,) floors on upload-step non-FL rates, bps
    t: float            # floor on per-UE data per iteration, bits
    t_q: float          # ceiling on iteration latency, s
    z: float            # objective proxy, bps
    s: float = 0.0      # latency slack (<= 0 when the budget is violated), s


@dataclass
class RotatedCone:
    """u(x) * v(x) >= sum_i w_i(x)^2 with u, v >= 0."""

    label: str
    u: AffineForm
    v: AffineForm
    ws: list[AffineForm]


@dataclass
class ConicProgram:
    """Maximize objective(x) subject to linear rows <= 0 and rotated cones."""

    var_ids: list[VarId]
    lb: np.ndarray
    ub: np.ndarray
    objective: AffineForm
    lin_rows: list[tuple[str, AffineForm]]
    cones: list[RotatedCone]
    meta: dict = field(default_factory=dict)

    def index(self, var: VarId) -> int:
        return self.meta["index"][var]

    def validate(self) -> None:
        """Every referenced variable must be declared."""
        declared = set(self.var_ids)
        forms: list[AffineForm] = [self.objective]
        forms += [form for _, form in self.lin_rows]
        for cone in self.cones:
            forms += [cone.u, cone.v, *cone.ws]
        for form in forms:
            for var in form.coeffs:
                if var not in declared:
                    raise ValueError(f"undeclared variable {var} referenced")


@dataclass
class Solution:
    """Solver outcome for one subproblem (values in internal scaling)."""

    status: str                 # "optimal" | "infeasible" | "numerical_failure"
    x: dict[VarId, float]
    objective: float
    kkt_residual: float
    solve_time: float
    iterations: int
    solver_status: str


class _Builder:
    def __init__(self) -> None:
        self.var_ids: list[VarId] = []
        self.lb: list[float] = []
        self.ub: list[float] = []
        self.lin_rows: list[tuple[str, AffineForm]] = []
        self.cones: list[RotatedCone] = []

    def add_var(self, group: str, idx: int = 0, lb: float = 0.0,
                ub: float = math.inf) -> AffineForm:
        self.var_ids.append((group, idx))
        self.lb.append(lb)
        self.ub.append(ub)
        return AffineForm.variable(group, idx)

    def row(self, label: str, form: AffineForm) -> None:
        self.lin_rows.append((label, form))

    def cone(self, label: str, u: AffineForm, v: AffineForm,
             ws: list[AffineForm]) -> None:
        self.cones.append(RotatedCone(label, u, v, ws))


# --- canonicalization ops -----------------------------------------------------


def canon_inverse(builder: _Builder, payload: float, rate_form: AffineForm,
                  aux_form: AffineForm, label: str,
                  denom_hint: float = 1.0) -> None:
    """aux >= payload / rate as the cone aux * (rate/h) >= payload/h.

    denom_hint h > 0 is the expected magnitude of rate; dividing it out
    keeps the cone entries near unity without changing the constraint.
    """
    if payload < 0:
        raise ValueError("inverse payload must be nonnegative")
    if denom_hint <= 0:
        raise ValueError("denom_hint must be positive")
    if payload > 0:
        # scale aux by its tangency value payload/h so u, v, w are all ~1
        builder.cone(label, aux_form.scaled(denom_hint / payload),
                     rate_form.scaled(1.0 / denom_hint),
                     [AffineForm(constant=1.0)])
    else:
        builder.cone(label, aux_form, rate_form.scaled(1.0 / denom_hint),
                     [AffineForm(constant=0.0)])


def canon_bilinear_ub(builder: _Builder, x_form: AffineForm, y_form: AffineForm,
                      rhs_form: AffineForm, x_n: float, y_n: float,
                      label: str) -> None:
    """Tangent quadratic relaxation of x * y <= rhs around (x_n, y_n).

    The product is first balanced as (g*x)(y/g) with g = sqrt(y_n/x_n),
    which leaves its value unchanged but makes both factors comparable;
    the relaxation ((x'+y')^2 - 2(x'_n-y'_n)(x'-y') + (x'_n-y'_n)^2)/4
    <= rhs then rearranges to (x'+y')^2 <= q(x) with q affine, i.e. the
    cone q * 1 >= (x'+y')^2. Balancing keeps tangency and validity.
    """
    g = math.sqrt(max(y_n, 1e-12) / max(x_n, 1e-12))
    xs = x_form.scaled(g)
    ys = y_form.scaled(1.0 / g)
    d = x_n * g - y_n / g
    q = (rhs_form.scaled(4.0)
         .plus(xs.scaled(2.0 * d))
         .plus(ys.scaled(-2.0 * d))
         .plus(AffineForm(constant=-d * d)))
    # divide the whole cone by its magnitude at the expansion point
    norm = max(1.0, 4.0 * x_n * y_n)
    builder.cone(label, q.scaled(1.0 / norm), AffineForm(constant=1.0),
                 [xs.plus(ys).scaled(1.0 / math.sqrt(norm))])


def canon_bound_expr(builder: _Builder, bound: BoundExpr, rate_form: AffineForm,
                     aux_form: AffineForm, scale: float, label: str) -> None:
    """Attach one rate bound to the program.

    concave_lb: rate_form <= bound  ->  linear row plus an inverse cone.
    convex_ub:  bound <= rate_form  ->  linear row plus a quad-over-lin cone.
    scale converts the bound's bps terms into internal rate units; cone
    denominators are normalized by their expansion values.
    """
    if bound.kind == "concave_lb":
        # rate - c0 - linear(x) + aux <= 0,  aux * psi >= inv_coeff
        canon_inverse(builder, scale * bound.inv_coeff, bound.inv_arg,
                      aux_form, f"{label}/inv", denom_hint=bound.psi_n)
        row = (rate_form
               .plus(AffineForm(constant=-scale * bound.constant))
               .plus(bound.linear.scaled(-scale))
               .plus(aux_form))
        builder.row(label, row)
    elif bound.kind == "convex_ub":
        # c0 + aux - rate <= 0,  aux * (theta/th_n) >= (st/th_n)(psi^2 + c^2)
        quad = bound.quad
        st = scale * quad.scale / bound.theta_n
        norm = max(1.0, st * (bound.psi_n ** 2 + quad.num_const_sq))
        root = math.sqrt(st / norm)
        builder.cone(
            f"{label}/qol",
            aux_form.scaled(1.0 / norm),
            quad.denominator.scaled(1.0 / bound.theta_n),
            [quad.numerator.scaled(root),
             AffineForm(constant=root * math.sqrt(quad.num_const_sq))],
        )
        row = (AffineForm(constant=scale * bound.constant)
               .plus(bound.linear.scaled(scale))
               .plus(aux_form)
               .plus(rate_form.scaled(-1.0)))
        builder.row(label, row)
    else:
        raise ValueError(f"unknown bound kind {bound.kind!r}")


# --- subproblem assembly ------------------------------------------------------


def _lb_families(mode: Mode) -> list[tuple[str, str]]:
    """(rate family, rate variable group) pairs used by the mode's floors."""
    s3 = {"hd": ("3_hd", "u_hd"), "fd": ("3_fd", "u_fd"),
          "fdma": ("3_fdma", "u_fdma")}[mode.value]
    return [
        ("d", "r_d"),
        (s3[1], "r_u"),
        ("1", "r1"),
        ("2", "r2"),
        (s3[0], "r3"),
    ]


def build_subproblem(
    mode: Mode,
    point: ScaIterate,
    fading: LargeScaleFading,
    est: EstimationVariances,
    params: SystemParams,
    relaxed: bool = False,
    alpha: float | None = None,
) -> ConicProgram:
    """Convex restriction of the scheduling problem around point.

    Mode.FDMA builds the subband baseline's variant; est must then carry
    the single-pilot upload-step variances. relaxed adds the latency
    slack s <= 0 with objective weight alpha (bps per second of
    violation, default 10 * B).
    """
    L, K = params.L, params.K
    if alpha is None:
        alpha = 10.0 * params.B
    alpha_scaled = alpha / RATE_SCALE

    s_d = params.S_d / DATA_SCALE
    s_u = params.S_u / DATA_SCALE
    load = params.Nc * params.D_max * params.c_max / LOAD_SCALE

    b = _Builder()
    eta_d = [b.add_var("eta_d", i, 0.0, 1.0) for i in range(L)]
    zeta_1 = [b.add_var("zeta_1", i) for i in range(K)]
    zeta_2 = [b.add_var("zeta_2", i) for i in range(K)]
    zeta_3 = [b.add_var("zeta_3", i) for i in range(K)]
    eta_u = [b.add_var("eta_u", i, 0.0, 1.0) for i in range(L)]
    f = b.add_var("f", 0, params.f_min / FREQ_SCALE, params.f_max / FREQ_SCALE)
    r_d = b.add_var("r_d")
    r_u = b.add_var("r_u")
    r_td = b.add_var("r_td")
    r_tu = b.add_var("r_tu")
    a1 = b.add_var("a1")
    a2 = b.add_var("a2")
    a3 = b.add_var("a3")
    r1 = [b.add_var("r1", k) for k in range(K)]
    r2 = [b.add_var("r2", k) for k in range(K)]
    r3 = [b.add_var("r3", k) for k in range(K)]
    t = b.add_var("t")
    t_q = b.add_var("t_q")
    z = b.add_var("z")
    s_slack = b.add_var("s", 0, -math.inf, 0.0) if relaxed else None
    h_d = b.add_var("h_d")
    h_c = b.add_var("h_c")
    h_u = b.add_var("h_u")

    def sum_of(forms: list[AffineForm]) -> AffineForm:
        out = AffineForm()
        for form in forms:
            out = out.plus(form)
        return out

    # power budgets
    b.row("power_download", sum_of(eta_d).plus(sum_of(zeta_1))
          .plus(AffineForm(constant=-1.0)))
    b.row("power_compute", sum_of(zeta_2).plus(AffineForm(constant=-1.0)))
    b.row("power_upload", sum_of(zeta_3).plus(AffineForm(constant=-1.0)))

    # latency budget and its composition
    deadline = t_q.plus(AffineForm(constant=-params.t_qos))
    if relaxed:
        deadline = deadline.plus(s_slack)
    b.row("deadline", deadline)
    b.row("latency_parts", h_d.plus(h_c).plus(h_u).plus(t_q.scaled(-1.0)))
    canon_inverse(b, s_d, r_d, h_d, "time_download",
                  denom_hint=max(point.r_d / RATE_SCALE, 1e-6))
    canon_inverse(b, load, f, h_c, "time_compute",
                  denom_hint=max(point.alloc.f / FREQ_SCALE, 1e-6))
    canon_inverse(b, s_u, r_u, h_u, "time_upload",
                  denom_hint=max(point.r_u / RATE_SCALE, 1e-6))

    # data floor and its composition
    b.row("data_parts", t.plus(a1.scaled(-s_d)).plus(a2.scaled(-load))
          .plus(a3.scaled(-s_u)))

    # products tying ratios to rates, all expanded at the current point
    exp = ExpansionPoint.from_allocation(point.alloc)
    a2_n = point.a2 * FREQ_SCALE / RATE_SCALE
    canon_bilinear_ub(b, z, t_q, t, point.z / RATE_SCALE, point.t_q, "objective_product")
    for k in range(K):
        canon_bilinear_ub(b, a1, r_td, r1[k], point.a1,
                          point.r_td / RATE_SCALE, f"ratio_download_{k}")
        canon_bilinear_ub(b, a2, f, r2[k], a2_n,
                          point.alloc.f / FREQ_SCALE, f"ratio_compute_{k}")
        canon_bilinear_ub(b, a3, r_tu, r3[k], point.a3,
                          point.r_tu / RATE_SCALE, f"ratio_upload_{k}")

    # rate floors (lower bounds) and ceilings (upper bounds)
    rate_scale = 1.0 / RATE_SCALE
    rate_vars = {"r_d": [r_d], "r_u": [r_u], "r1": r1, "r2": r2, "r3": r3}
    for family, group in _lb_families(mode):
        shared = group in ("r_d", "r_u")
        count = L if shared else K
        for i in range(count):
            bound = build_rate_lb(family, i, exp, fading, est, params)
            aux = b.add_var(f"w_{group}", i)
            target = rate_vars[group][0] if shared else rate_vars[group][i]
            canon_bound_expr(b, bound, target, aux, rate_scale,
                             f"floor_{group}_{i}")
    ub_s3 = {"hd": "u_hd", "fd": "u_fd", "fdma": "u_fdma"}[mode.value]
    for family, ceil_form, tag in (("d", r_td, "r_td"), (ub_s3, r_tu, "r_tu")):
        for i in range(L):
            bound = build_rate_ub(family, i, exp, fading, est, params)
            aux = b.add_var(f"w_{tag}", i)
            canon_bound_expr(b, bound, ceil_form, aux, rate_scale,
                             f"ceiling_{tag}_{i}")

    objective = z
    if relaxed:
        objective = objective.plus(s_slack.scaled(alpha_scaled))

    prog = ConicProgram(
        var_ids=b.var_ids,
        lb=np.asarray(b.lb),
        ub=np.asarray(b.ub),
        objective=objective,
        lin_rows=b.lin_rows,
        cones=b.cones,
        meta={
            "index": {v: i for i, v in enumerate(b.var_ids)},
            "mode": mode,
            "relaxed": relaxed,
            "alpha": alpha,
            "L": L,
            "K": K,
        },
    )
    prog.validate()
    return prog


# --- solve ---------------------------------------------------------------------


def _assemble(prog: ConicProgram):
    n = len(prog.var_ids)
    index = prog.meta["index"]
    rows: list[tuple[dict[VarId, float], float]] = []
    cones_spec = []

    nonneg = 0
    for i, var in enumerate(prog.var_ids):
        if np.isfinite(prog.lb[i]):
            rows.append(({var: -1.0}, -prog.lb[i]))
            nonneg += 1
        if np.isfinite(prog.ub[i]):
            rows.append(({var: 1.0}, prog.ub[i]))
            nonneg += 1
    for _, form in prog.lin_rows:
        rows.append((form.coeffs, -form.constant))
        nonneg += 1
    cones_spec.append(clarabel.NonnegativeConeT(nonneg))

    for cone in prog.cones:
        block = [cone.u.plus(cone.v), cone.u.plus(cone.v.scaled(-1.0))]
        block += [w.scaled(2.0) for w in cone.ws]
        for form in block:
            rows.append(({v: -c for v, c in form.coeffs.items()}, form.constant))
        cones_spec.append(clarabel.SecondOrderConeT(len(block)))

    data, r_idx, c_idx = [], [], []
    bvec = np.empty(len(rows))
    for r, (coeffs, rhs) in enumerate(rows):
        bvec[r] = rhs
        for var, coeff in coeffs.items():
            r_idx.append(r)
            c_idx.append(index[var])
            data.append(coeff)
    a_mat = sparse.csc_matrix((data, (r_idx, c_idx)), shape=(len(rows), n))

    q = np.zeros(n)
    for var, coeff in prog.objective.coeffs.items():
        q[index[var]] -= coeff  # maximize -> minimize negation
    return a_mat, bvec, q, cones_spec


def kkt_residual(prog: ConicProgram, x: dict[VarId, float]) -> float:
    """Worst primal violation of x over bounds, rows, and cones."""
    worst = 0.0
    for i, var in enumerate(prog.var_ids):
        val = x[var]
        if np.isfinite(prog.lb[i]):
            worst = max(worst, prog.lb[i] - val)
        if np.isfinite(prog.ub[i]):
            worst = max(worst, val - prog.ub[i])
    for _, form in prog.lin_rows:
        worst = max(worst, form.value(x))
    for cone in prog.cones:
        u = cone.u.value(x)
        v = cone.v.value(x)
        wsq = sum(w.value(x) ** 2 for w in cone.ws)
        scale = max(1.0, abs(u * v))
        worst = max(worst, -u, -v, (wsq - u * v) / scale)
    return worst


_STATUS_MAP = {
    "Solved": "optimal",
    "AlmostSolved": "optimal",
    "PrimalInfeasible": "infeasible",
    "AlmostPrimalInfeasible": "infeasible",
}


_RESIDUAL_GATE = 3e-7


def _clarabel_attempt(prog: ConicProgram, fallback: bool) -> Solution:
    a_mat, bvec, q, cones_spec = _assemble(prog)
    n = len(prog.var_ids)
    settings = clarabel.DefaultSettings()
    settings.verbose = False
    settings.tol_feas = 1e-9
    settings.tol_gap_abs = 1e-9
    settings.tol_gap_rel = 1e-9
    settings.static_regularization_constant = 1e-10
    settings.max_iter = 200
    if fallback:
        # alternate numerics for subproblems the first pass solves sloppily
        settings.equilibrate_enable = False
        settings.static_regularization_constant = 1e-12
        settings.iterative_refinement_reltol = 1e-14
        settings.iterative_refinement_abstol = 1e-14
        settings.iterative_refinement_max_iter = 50
    solver = clarabel.DefaultSolver(
        sparse.csc_matrix((n, n)), q, a_mat, bvec, cones_spec, settings
    )
    raw = solver.solve()
    solver_status = str(raw.status)
    status = _STATUS_MAP.get(solver_status, "numerical_failure")

    x = {var: float(val) for var, val in zip(prog.var_ids, np.asarray(raw.x))}
    residual = kkt_residual(prog, x) if status == "optimal" else math.inf
    if status == "optimal" and residual > _RESIDUAL_GATE:
        status = "numerical_failure"
    return Solution(
        status=status,
        x=x,
        objective=prog.objective.value(x),
        kkt_residual=residual,
        solve_time=float(raw.solve_time),
        iterations=int(raw.iterations),
        solver_status=solver_status,
    )


def solve(prog: ConicProgram, backend: str = "clarabel") -> Solution:
    """Solve the subproblem; deterministic for fixed inputs.

    A status of "optimal" additionally guarantees the recomputed primal
    residual is below 3e-7 (well under the 1e-6 budget the iteration
    audit allows). A first pass whose residual misses that gate is
    retried once with alternate solver numerics before giving up.
    """
    if backend != "clarabel":
        raise ValueError(f"unknown backend {backend!r}")
    sol = _clarabel_attempt(prog, fallback=False)
    if sol.status == "numerical_failure":
        retry = _clarabel_attempt(prog, fallback=True)
        if retry.status != "numerical_failure" or (
                retry.kkt_residual < sol.kkt_residual):
            return retry
    return sol


def extract_iterate(prog: ConicProgram, sol: Solution,
                    params: SystemParams) -> ScaIterate:
    """Solution values back in SI units, with tiny negatives clipped."""
    L, K = prog.meta["L"], prog.meta["K"]
    x = sol.x

    def vec(group: str, n: int) -> np.ndarray:
        return np.array([max(0.0, x[(group, i)]) for i in range(n)])

    alloc = Allocation(
        eta_d=vec("eta_d", L),
        zeta_1=vec("zeta_1", K),
        zeta_2=vec("zeta_2", K),
        zeta_3=vec("zeta_3", K),
        eta_u=vec("eta_u", L),
        f=float(np.clip(x[("f", 0)] * FREQ_SCALE, params.f_min, params.f_max)),
    )
    return ScaIterate(
        alloc=alloc,
        r_d=x[("r_d", 0)] * RATE_SCALE,
        r_u=x[("r_u", 0)] * RATE_SCALE,
        r_td=x[("r_td", 0)] * RATE_SCALE,
        r_tu=x[("r_tu", 0)] * RATE_SCALE,
        a1=x[("a1", 0)],
        a2=x[("a2", 0)] * RATE_SCALE / FREQ_SCALE,
        a3=x[("a3", 0)],
        r1=vec("r1", K) * RATE_SCALE,
        r2=vec("r2", K) * RATE_SCALE,
        r3=vec("r3", K) * RATE_SCALE,
        t=x[("t", 0)] * DATA_SCALE,
        t_q=x[("t_q", 0)],
        z=x[("z", 0)] * RATE_SCALE,
        s=x.get(("s", 0), 0.0),
    )


def dump_program(prog: ConicProgram) -> str:
    """One line per variable, row, and cone, for debugging."""
    lines = [f"# mode={prog.meta['mode'].value} relaxed={prog.meta['relaxed']} "
             f"vars={len(prog.var_ids)} rows={len(prog.lin_rows)} "
             f"cones={len(prog.cones)}"]
    for i, (group, idx) in enumerate(prog.var_ids):
        lines.append(f"var {group}[{idx}] in [{prog.lb[i]:g}, {prog.ub[i]:g}]")

    def fmt(form: AffineForm) -> str:
        parts = [f"{form.constant:+.6g}"] if form.constant else []
        parts += [f"{c:+.6g}*{g}[{i}]" for (g, i), c in sorted(form.coeffs.items())]
        return " ".join(parts) if parts else "0"

    lines.append(f"maximize {fmt(prog.objective)}")
    for label, form in prog.lin_rows:
        lines.append(f"row {label}: {fmt(form)} <= 0")
    for cone in prog.cones:
        ws = "; ".join(fmt(w) for w in cone.ws)
        lines.append(f"cone {cone.label}: ({fmt(cone.u)}) * ({fmt(cone.v)}) "
                     f">= sum sq[{ws}]")
    return "\n".join(lines)
