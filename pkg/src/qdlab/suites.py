"""Verification suites: each expands a run configuration into independent cells."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache
from importlib.metadata import PackageNotFoundError, version
from pathlib import Path
from typing import Callable

import numpy as np

from .config import RunConfig
from .groups import GroupSpec
from .lattice import Rectangle, TorusGeometry, all_rectangles
from .operators import OperatorFactory, ResourceError
from .reports import FAIL, PASS, VerificationReport, skipped, write_csv

try:
    VERSION = version("artifact")
except PackageNotFoundError:  # pragma: no cover
    VERSION = "0.0.0"


@dataclass
class Cell:
    suite: str
    name: str
    run: Callable[[], list[VerificationReport]]


@dataclass
class Context:
    cfg: RunConfig
    out_dir: Path | None = None
    artifacts: list[Path] = field(default_factory=list)

    @property
    def figures(self) -> bool:
        return bool(self.cfg["output"].get("figures", True)) and self.out_dir is not None


# ---------------------------------------------------------------------------
# shared heavy objects
# ---------------------------------------------------------------------------

def _group_key(g) -> tuple[int, ...]:
    return (g,) if isinstance(g, int) else tuple(g)


@lru_cache(maxsize=None)
def factory_for(N: int, group: tuple[int, ...], dim_cap: int) -> OperatorFactory:
    return OperatorFactory(TorusGeometry(N), GroupSpec.from_config(list(group)), dim_cap=dim_cap)


def _factory(cfg: RunConfig, N: int | None = None) -> OperatorFactory:
    return factory_for(N or cfg["N"], _group_key(cfg["group"]), cfg["caps"]["dim"])


def _model(cfg: RunConfig, **over):
    from .davies import JumpModel

    m = dict(cfg["model"])
    m.update(over)
    return JumpModel(m["jump_family"], m["rate_family"])


@lru_cache(maxsize=8)
def torus_generator(N: int, group: tuple[int, ...], dim_cap: int, beta: float,
                    jump_family: str, rate_family: str):
    """(Lindbladian on the full torus, its Gibbs state)."""
    from .davies import GibbsState, JumpModel, lindbladian

    F = factory_for(N, group, dim_cap)
    V = F.torus.full()
    L = lindbladian(F, V, beta, JumpModel(jump_family, rate_family))
    rho = GibbsState.of(F.hamiltonian(V), beta)
    return L, rho


def _generator(cfg: RunConfig, beta: float, **over):
    m = _model(cfg, **over)
    return torus_generator(cfg["N"], _group_key(cfg["group"]), cfg["caps"]["dim"], float(beta),
                           m.jump_family, m.rate_family)


@lru_cache(maxsize=8)
def _gap(N, group, dim_cap, beta, jump_family, rate_family, seed, residual_tol):
    from .davies import spectral_gap

    L, rho = torus_generator(N, group, dim_cap, beta, jump_family, rate_family)
    return spectral_gap(L, rho, s=1.0, seed=seed, residual_tol=residual_tol)


def _gap_for(cfg: RunConfig, beta: float):
    m = _model(cfg)
    return _gap(cfg["N"], _group_key(cfg["group"]), cfg["caps"]["dim"], float(beta),
                m.jump_family, m.rate_family, cfg["seed"], cfg.params("gap")["residual_tol"])


def _tag(x: float) -> str:
    return f"{x:g}".replace(".", "p")


# ---------------------------------------------------------------------------
# suites
# ---------------------------------------------------------------------------

def marginal_cells(ctx: Context) -> list[Cell]:
    from .gibbs import closed_form_error, marginal_bounds_check

    p = ctx.cfg.params("marginal")
    cells = []
    for g in p["groups"]:
        G = GroupSpec.from_config(g)
        for N in p["N_values"]:
            torus = TorusGeometry(N)
            rects = all_rectangles(torus, p["max_edges"])

            def run(G=G, torus=torus, rects=rects):
                out = []
                for beta in p["betas"]:
                    errs, coef, slacks, ok_bounds = [], [], [], True
                    for rc in rects:
                        rel, mc = closed_form_error(torus, G, rc.region, beta)
                        errs.append(rel)
                        coef.append(mc)
                        b = marginal_bounds_check(torus, G, rc.region, beta)
                        slacks.append(b.metrics["min_slack"])
                        ok_bounds &= b.passed
                    geo = dict(N=torus.N, group=G.name, n_rectangles=len(rects), max_edges=p["max_edges"])
                    worst = max(errs)
                    out.append(VerificationReport.from_bool(
                        "marginal_closed_form", worst <= p["tol"], beta=beta, geometry=geo,
                        metrics=dict(max_error=worst, max_coefficient_gap=max(coef), tol=p["tol"])))
                    out.append(VerificationReport.from_bool(
                        "marginal_bounds", ok_bounds, beta=beta, geometry=geo,
                        metrics=dict(min_slack=min(slacks), max_slack=max(slacks)),
                        notes="" if beta > 0 else "epsilon vanishes at beta=0: zero slack expected"))
                return out

            cells.append(Cell("marginal", f"{G.name}_N{N}", run))
    return cells


def ds_cells(ctx: Context) -> list[Cell]:
    from .gibbs import DSConstants, PreconditionError, ds_check, fit_empirical_constants, strip_geometry

    cfg = ctx.cfg
    p = cfg.params("ds")
    G = GroupSpec.from_config(cfg["group"])
    cells = []
    for N in p["N_values"]:
        torus = TorusGeometry(N)

        def run(torus=torus):
            out = []
            for beta in p["betas"]:
                dists, deltas, bounds = [], [], []
                for d in p["dists"]:
                    try:
                        geo = strip_geometry(torus, d)
                    except PreconditionError as exc:
                        out.append(VerificationReport(
                            "ds_condition", skipped("geometry"), beta=beta,
                            geometry=dict(N=torus.N, group=G.name, requested_dist=d), notes=str(exc)))
                        continue
                    r = ds_check(torus, G, geo, beta, p["d0"], n_samples=p["n_samples"], seed=cfg["seed"])
                    if r.metrics["max_error"] > p["identity_tol"]:
                        r.status = FAIL
                    out.append(r)
                    dists.append(r.geometry["dist"])
                    deltas.append(r.metrics["empirical_constant"])
                    bounds.append(r.metrics["bound"])
                if len(dists) >= 2:
                    fit = fit_empirical_constants(dists, deltas)
                    mono = all(b < a for a, b in zip(deltas, deltas[1:]))
                    dc = DSConstants(beta, G.order, p["d0"])
                    out.append(VerificationReport.from_bool(
                        "ds_decay", mono, beta=beta, geometry=dict(N=torus.N, group=G.name, dists=dists),
                        metrics=dict(value=fit["K_emp"], xi_fit=fit["xi_emp"], xi_analytic=dc.xi,
                                     K_analytic=dc.K, deltas=deltas)))
                    if ctx.out_dir is not None:
                        stem = ctx.out_dir / f"ds_N{torus.N}_beta{_tag(beta)}"
                        write_csv(stem.with_suffix(".csv"), ["dist", "empirical_constant", "bound"],
                                  zip(dists, deltas, bounds))
                        ctx.artifacts.append(stem.with_suffix(".csv"))
                        if ctx.figures:
                            from .plotting import plot_ds_decay

                            ctx.artifacts.append(plot_ds_decay(
                                dists, deltas, bounds, stem.with_suffix(".png"),
                                f"{G.name}, N={torus.N}, beta={beta:g}"))
            return out

        cells.append(Cell("ds", f"N{N}", run))
    return cells


def _rectangle(cfg: RunConfig, suite: str):
    F = _factory(cfg)
    return F, Rectangle.from_config(F.torus, cfg.params(suite)["rectangle"]).region


def kernel_cells(ctx: Context) -> list[Cell]:
    from .condexp import kernel_verify

    cfg = ctx.cfg
    p = cfg.params("kernel")

    def one(beta):
        def run():
            F, R = _rectangle(cfg, "kernel")
            return [kernel_verify(F, R, beta, _model(cfg), tol=p["tol"], seed=cfg["seed"])]
        return run

    return [Cell("kernel", f"beta{_tag(b)}", one(b)) for b in p["betas"]]


def condexp_cells(ctx: Context) -> list[Cell]:
    from .condexp import condexp_properties

    cfg = ctx.cfg
    p = cfg.params("condexp")

    def one(beta):
        def run():
            F, R = _rectangle(cfg, "condexp")
            return condexp_properties(F, R, beta, n_probes=p["n_probes"], seed=cfg["seed"],
                                      semigroup_time=p["semigroup_time"], model=_model(cfg))
        return run

    return [Cell("condexp", f"beta{_tag(b)}", one(b)) for b in p["betas"]]


def factorization_cells(ctx: Context) -> list[Cell]:
    from .condexp import factorization_check, overlapping_rectangle_pairs

    cfg = ctx.cfg
    p = cfg.params("factorization")
    F = _factory(cfg)
    pairs = overlapping_rectangle_pairs(F.torus, p["max_edges"])

    def one(a, b):
        def run():
            r = factorization_check(F, a.region, b.region, tol=p["tol"])
            r.geometry.update(R_rect=dict(anchor=list(a.anchor), lengths=list(a.lengths)),
                              Rp_rect=dict(anchor=list(b.anchor), lengths=list(b.lengths)))
            return [r]
        return run

    return [Cell("factorization", f"pair{i}", one(a, b)) for i, (a, b) in enumerate(pairs)]


def martingale_cells(ctx: Context) -> list[Cell]:
    from .condexp import martingale_check, overlapping_rectangle_pairs
    from .gibbs import strip_geometry

    cfg = ctx.cfg
    p = cfg.params("martingale")
    caps = cfg["caps"]

    def admissible(beta):
        def run():
            F = _factory(cfg, p["N"])
            geo = strip_geometry(F.torus, p["dist"])
            return [martingale_check(F, geo.U, geo.V, geo.W, beta, d0=p["d0"], n_probes=p["n_probes"],
                                     seed=cfg["seed"], dense_cap=caps["dense"], choi_cap=caps["choi"])]
        return run

    def relaxed(beta):
        def run():
            rp = p["relaxed"]
            F = _factory(cfg, rp["N"])
            a, b = overlapping_rectangle_pairs(F.torus)[rp["pair"]]
            R, Rp = a.region, b.region
            r = martingale_check(F, R - Rp, R & Rp, Rp - R, beta, d0=p["d0"], enforce_admissible=False,
                                 n_probes=p["n_probes"], seed=cfg["seed"], dense_cap=caps["dense"],
                                 choi_cap=caps["choi"])
            r.check = "martingale_relaxed"
            r.notes = "geometry below the admissibility threshold; reduced identities only"
            return [r]
        return run

    cells = [Cell("martingale", f"admissible_beta{_tag(b)}", admissible(b)) for b in p["betas"]]
    if p.get("relaxed"):
        cells += [Cell("martingale", f"relaxed_beta{_tag(b)}", relaxed(b)) for b in p["betas"]]
    return cells


def gap_cells(ctx: Context) -> list[Cell]:
    from .davies import ConvergenceError, self_adjointness_defect, top_spectrum

    cfg = ctx.cfg
    p = cfg.params("gap")

    def detailed_balance(beta):
        def run():
            L, rho = _generator(cfg, beta)
            fp = float(np.abs(L.apply_dual(rho.matrix)).max())
            gns = self_adjointness_defect(L, rho, 1.0, seed=cfg["seed"])
            kms = self_adjointness_defect(L, rho, 0.5, seed=cfg["seed"])
            try:
                g = _gap_for(cfg, beta)
                gap, kdim, res, solver = g.gap, g.kernel_dim, g.residual, g.solver
            except ConvergenceError as exc:
                gap, kdim, res, solver = math.nan, None, exc.residual, "failed"
            ok = (gns <= p["gns_tol"] and fp <= p["fixed_point_tol"] and kdim == 1
                  and gap > 0 and res <= p["residual_tol"])
            geo = dict(N=cfg["N"], group=GroupSpec.from_config(cfg["group"]).name, **cfg["model"])
            return [VerificationReport.from_bool(
                "detailed_balance_gap", ok, beta=beta, geometry=geo,
                metrics=dict(gap=gap, kernel_dim=kdim, residual=res, solver=solver,
                             fixed_point_residual=fp, gns_defect=gns, kms_defect=kms))]
        return run

    def negative_rates(beta):
        def run():
            L, rho = _generator(cfg, beta, rate_family="skewed")
            gns = self_adjointness_defect(L, rho, 1.0, seed=cfg["seed"])
            return [VerificationReport.from_bool(
                "negative_control_detailed_balance", gns > p["gns_tol"], beta=beta,
                geometry=dict(N=cfg["N"], rate_family="skewed"),
                metrics=dict(gns_defect=gns, tol=p["gns_tol"]),
                notes="passes when the broken rate family is rejected by the GNS check")]
        return run

    def negative_jumps(beta):
        def run():
            out = []
            for fam in ("shift_only", "modulation_only"):
                L, rho = _generator(cfg, beta, jump_family=fam)
                # a full block of zero eigenvalues already shows the defect; do not grow k
                top = top_spectrum(L, rho, 1.0, k=8, max_k=8, seed=cfg["seed"])
                kdim = top.kernel_dim if top.kernel_dim is not None else top.eigenvalues.size
                out.append(VerificationReport.from_bool(
                    "negative_control_ergodicity", kdim > 1, beta=beta,
                    geometry=dict(N=cfg["N"], jump_family=fam),
                    metrics=dict(kernel_dim=kdim, residual=top.residual,
                                 kernel_dim_is_lower_bound=top.kernel_dim is None or kdim >= top.eigenvalues.size),
                    notes="passes when the enlarged kernel is detected"))
            return out
        return run

    cells = [Cell("gap", f"beta{_tag(b)}", detailed_balance(b)) for b in p["betas"]]
    if p.get("negative_controls", True):
        positive = [b for b in p["betas"] if b > 0] or [1.0]
        cells.append(Cell("gap", "negative_rates", negative_rates(positive[0])))
        cells.append(Cell("gap", "negative_jumps", negative_jumps(positive[0])))
    return cells


def mixing_cells(ctx: Context) -> list[Cell]:
    from .gibbs import torus_gibbs_summary
    from .mlsi import mixing_bounds, mlsi_estimate

    cfg = ctx.cfg
    p = cfg.params("mixing")

    def one(beta):
        def run():
            out = []
            L, rho = _generator(cfg, beta)
            gap = _gap_for(cfg, beta).gap
            F = _factory(cfg)
            summ = torus_gibbs_summary(F.torus, F.G, beta)
            alpha = None
            if p["mlsi_restarts"] > 0:
                est = mlsi_estimate(L, rho, restarts=p["mlsi_restarts"], seed=cfg["seed"],
                                    maxiter=p["mlsi_maxiter"])
                alpha = est.alpha_upper
                consistency = abs(est.entropy_production - 2 * alpha * est.relative_entropy)
                ok = alpha >= 0 and alpha <= 2 * gap + 1e-6 and consistency <= 1e-8 * max(1.0, est.entropy_production)
                out.append(VerificationReport.from_bool(
                    "mlsi_estimate", ok, beta=beta, geometry=dict(N=cfg["N"]),
                    metrics=dict(value=alpha, gap=gap, ratio_to_gap=alpha / gap,
                                 ep_minus_2alphaD=consistency, restarts=p["mlsi_restarts"],
                                 diverged=est.n_diverged, label=est.label),
                    notes="upper estimate of the MLSI constant, not a certificate"))
            rep, curves = mixing_bounds(L, rho, gap, rho_min=summ.rho_min, alpha=alpha,
                                        n_states=p["n_states"], n_times=p["n_times"], seed=cfg["seed"])
            rep.metrics["rho_min_dense"] = rho.min_eigenvalue
            rep.metrics["rho_min_method"] = summ.method
            rep.geometry = dict(N=cfg["N"])
            out.append(rep)
            if ctx.out_dir is not None:
                stem = ctx.out_dir / f"mixing_N{cfg['N']}_beta{_tag(beta)}"
                write_csv(stem.with_suffix(".csv"), ["t", "trace_distance", "gap_envelope", "mlsi_envelope"],
                          curves.rows())
                ctx.artifacts.append(stem.with_suffix(".csv"))
                if ctx.figures:
                    from .plotting import plot_decay

                    ctx.artifacts.append(plot_decay(curves, stem.with_suffix(".png"),
                                                    f"N={cfg['N']}, beta={beta:g}"))
            return out
        return run

    return [Cell("mixing", f"beta{_tag(b)}", one(b)) for b in p["betas"]]


def recursion_cells(ctx: Context) -> list[Cell]:
    from .gibbs import DSConstants
    from .mlsi import closed_form_factor, recursion_calculator, recursion_check

    cfg = ctx.cfg
    p = cfg.params("recursion")
    G = GroupSpec.from_config(cfg["group"])

    def one(beta):
        def run():
            dc = DSConstants(beta, G.order, cfg.params("ds")["d0"])
            r = recursion_check(dc.K, dc.xi, p["L0_values"], p["horizon"], beta=beta)
            spot = closed_form_factor(1000)
            rel = abs(spot - math.exp(-12.0)) / math.exp(-12.0)
            r.metrics["spot_value_L0_1000"] = spot
            r.metrics["spot_relative_error"] = rel
            if rel > 1e-12:
                r.status = FAIL
            r.geometry = dict(group=G.name)
            if ctx.out_dir is not None:
                path = ctx.out_dir / f"recursion_beta{_tag(beta)}.csv"
                rows = []
                for L0 in p["L0_values"]:
                    led = recursion_calculator(L0, p["horizon"])
                    rows += [(L0, k, s, f, a, led.closed_form)
                             for k, (s, f, a) in enumerate(zip(led.scales, led.factors, led.accumulated))]
                write_csv(path, ["L0", "doubling", "scale", "factor", "accumulated", "closed_form"], rows)
                ctx.artifacts.append(path)
            return [r]
        return run

    betas = [b for b in p["betas"] if b > 0]
    return [Cell("recursion", f"beta{_tag(b)}", one(b)) for b in betas]


SUITE_BUILDERS = {
    "marginal": marginal_cells,
    "ds": ds_cells,
    "kernel": kernel_cells,
    "condexp": condexp_cells,
    "factorization": factorization_cells,
    "martingale": martingale_cells,
    "gap": gap_cells,
    "mixing": mixing_cells,
    "recursion": recursion_cells,
}


# ---------------------------------------------------------------------------
# execution
# ---------------------------------------------------------------------------

def _execute(cell: Cell, seed: int) -> list[VerificationReport]:
    t0 = time.perf_counter()
    try:
        reports = cell.run()
    except ResourceError as exc:
        reports = [VerificationReport(f"{cell.suite}:{cell.name}", skipped("dimension"), notes=str(exc))]
    wall = time.perf_counter() - t0
    for r in reports:
        r.suite = cell.suite
        r.seed = seed
        r.version = VERSION
        r.wall_time = wall
    return reports


def run_suites(cfg: RunConfig, suites: list[str] | None = None, out_dir: str | Path | None = None,
               workers: int | None = None) -> tuple[list[VerificationReport], list[Path]]:
    """Run the selected suites; results come back in cell order whatever the worker count."""
    from .mlsi import worker_count

    suites = cfg.suites if suites is None else suites
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
    ctx = Context(cfg, out)
    cells = [c for s in suites for c in SUITE_BUILDERS[s](ctx)]
    n = workers or worker_count()
    if n == 1:
        results = [_execute(c, cfg["seed"]) for c in cells]
    else:
        with ThreadPoolExecutor(max_workers=n) as pool:
            results = list(pool.map(lambda c: _execute(c, cfg["seed"]), cells))
    reports = [r for batch in results for r in batch]
    return reports, ctx.artifacts


def exit_code(reports: list[VerificationReport]) -> int:
    return 1 if any(r.failed for r in reports) else 0
