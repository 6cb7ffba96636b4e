"""Acceptance gate: every criterion below prints one PASS/FAIL line and is
enforced at its stated tolerance.  Desk scale throughout (1D meshes, a few
hundred time steps)."""

import json
from pathlib import Path

import numpy as np
import pytest

import horizonopt as ho
from horizonopt.admissible import check_projection_formulas
from horizonopt.cli import main
from horizonopt.config import build_optimizer_config, build_problem, load_config
from horizonopt.horizon import check_state_error_bounds, run_horizon_study
from horizonopt.objective import SecondOrderModel
from horizonopt.spaces import weighted_inner, weighted_l2_norm

from conftest import make_spec, random_control, random_instance
from oracles import dense_lq_solution

CONFIG_DIR = Path(__file__).resolve().parent.parent / "configs"

NONLINEARITIES = ("zero", "cubic", "cubic_minus_linear", "exponential")


def announce(num, label, passed, detail):
    tag = "PASS" if passed else "FAIL"
    print(f"ACCEPTANCE {num} [{tag}] {label}: {detail}")
    assert passed, f"criterion {num}: {label} ({detail})"


def solved_config(name, tolerance=None):
    cfg = load_config(CONFIG_DIR / name)
    spec = build_problem(cfg)
    ocfg = build_optimizer_config(cfg)
    if tolerance is not None:
        import dataclasses
        ocfg = dataclasses.replace(ocfg, tolerance=tolerance)
    u, report = ho.optimize(spec, ocfg)
    return spec, u, report


@pytest.fixture(scope="module")
def ball_solution():
    return solved_config("ball_cubic.json", tolerance=1e-9)


@pytest.fixture(scope="module")
def box_solution():
    return solved_config("box_cubic.json", tolerance=1e-9)


@pytest.fixture(scope="module")
def lq_solution():
    return solved_config("lq_small.json", tolerance=1e-10)


@pytest.fixture(scope="module")
def horizon_report():
    cfg = load_config(CONFIG_DIR / "horizon_compact.json")
    spec = build_problem(cfg)
    from horizonopt.config import build_horizon_config
    return spec, run_horizon_study(spec, build_horizon_config(cfg))


def test_criterion_1_gradient_and_duality():
    """Adjoint gradient vs central differences on 20 seeded instances."""
    tight = ho.NewtonConfig(tolerance=1e-13)
    worst_grad = 0.0
    worst_dual = 0.0
    for seed in range(20):
        kind = "ball" if seed % 2 == 0 else "box"
        spec, u = random_instance(1000 + seed, kind, NONLINEARITIES[seed % 4])
        v = random_control(spec, seed=2000 + seed)
        grad = ho.gradient(spec, u, tight)
        adj_val = weighted_inner(grad, v, spec.discounts.control_rate,
                                 spec.operators.control_weights)
        best = np.inf
        for eps in (1e-3, 1e-4, 1e-5, 1e-6):
            up = ho.Trajectory(spec.grid, u.values + eps * v.values, "control")
            dn = ho.Trajectory(spec.grid, u.values - eps * v.values, "control")
            fd = (ho.cost(spec, up, tight).total
                  - ho.cost(spec, dn, tight).total) / (2 * eps)
            best = min(best, abs(adj_val - fd) / max(abs(adj_val), 1e-300))
        worst_grad = max(worst_grad, best)

        # duality pairing of the linearized map and its transpose
        rng = np.random.default_rng(3000 + seed)
        state = ho.solve_forward(spec, u, tight)
        w = rng.standard_normal(state.values.shape)
        z = ho.solve_linearized(spec, state, v)
        from horizonopt.solvers import solve_adjoint_from_residual
        rate = spec.discounts.state_rate
        phi = solve_adjoint_from_residual(spec, state, w, rate)
        dt, t = spec.grid.step, spec.grid.times
        lhs = sum(dt * np.exp(-rate * t[i]) * w[i] @ (spec.operators.mass
                                                      @ z.values[i])
                  for i in range(1, spec.grid.n_steps + 1))
        wts = spec.operators.control_weights
        widx = spec.operators.control_index
        rhs = sum(dt * (phi.values[i, widx] * wts) @ v.values[i]
                  for i in range(1, spec.grid.n_steps + 1))
        worst_dual = max(worst_dual, abs(lhs - rhs) / max(1.0, abs(lhs)))
    announce(1, "adjoint gradient and duality exactness",
             worst_grad <= 1e-7 and worst_dual <= 1e-10,
             f"worst FD rel error {worst_grad:.2e} (<=1e-7), "
             f"worst duality gap {worst_dual:.2e} (<=1e-10)")


def test_criterion_2_lq_matches_dense_kkt(lq_solution):
    spec, u, report = lq_solution
    oracle = dense_lq_solution(
        spec.operators, spec.grid, spec.discounts.state_rate,
        spec.discounts.control_rate, spec.control_weight,
        spec.initial_values, spec.source_samples, spec.target_samples)
    gap = ho.Trajectory(spec.grid, u.values - oracle, "control")
    err = weighted_l2_norm(gap, spec.discounts.control_rate,
                           spec.operators.control_weights)
    announce(2, "projected gradient matches dense saddle-point solve",
             report.converged and err <= 1e-6,
             f"weighted control gap {err:.2e} (<=1e-6)")


def test_criterion_3_first_order_system(ball_solution, box_solution):
    worst_res = 0.0
    worst_formula = 0.0
    for spec, u, report in (ball_solution, box_solution):
        assert report.converged
        state = ho.solve_forward(spec, u)
        adjoint = ho.solve_adjoint(spec, state)
        from horizonopt.objective import riesz_gradient
        from horizonopt.admissible import stationarity_residual
        grad = riesz_gradient(spec, u, adjoint)
        worst_res = max(worst_res, stationarity_residual(spec, u, grad))
        worst_formula = max(worst_formula,
                            check_projection_formulas(spec, u, adjoint).max_residual)
    announce(3, "first-order system residuals at optimizer outputs",
             worst_res <= 1e-9 and worst_formula <= 1e-8,
             f"stationarity {worst_res:.2e} (<=1e-9), "
             f"formulas {worst_formula:.2e} (<=1e-8)")


def test_criterion_4_energy_estimates():
    rng = np.random.default_rng(4)
    worst = 0.0
    count = 0
    for k in range(10):
        name = ("zero", "cubic", "exponential")[k % 3]
        spec = make_spec(nonlinearity=name, n_nodes=31, horizon=1.0, step=0.01,
                         state_rate=1.0, aux_rate=0.12,
                         initial=rng.uniform(-0.5, 0.5, 31),
                         source=0.4 * rng.standard_normal((101, 31)))
        u = random_control(spec, seed=500 + k, scale=0.3)
        h = rng.standard_normal((spec.grid.n_steps + 1, 31))
        d = spec.discounts
        for rate in (d.state_rate, d.aux_rate, 0.5 * (d.state_rate + d.aux_rate)):
            fw = ho.check_energy_estimate(spec, u, rate, slack=0.05)
            ln = ho.check_linearized_estimate(spec, u, h, rate, slack=0.05)
            assert fw.satisfied and ln.satisfied, (name, rate, fw.to_dict(),
                                                   ln.to_dict())
            worst = max(worst, fw.lhs / max(fw.rhs, 1e-300),
                        ln.lhs / max(ln.rhs, 1e-300))
            count += 2
    announce(4, "discrete stability estimates with 5% slack",
             worst <= 1.05, f"{count} checks, worst lhs/rhs ratio {worst:.3f}")


def test_criterion_5_second_order(ball_solution, box_solution, lq_solution):
    worst_form = np.inf
    # ball case: multiplier-augmented form over sampled critical directions
    spec, u, _ = ball_solution
    state = ho.solve_forward(spec, u)
    adjoint = ho.solve_adjoint(spec, state)
    mult = ho.multiplier_and_cone(spec, u, adjoint)
    model = SecondOrderModel(spec, u, state=state, adjoint=adjoint)
    dirs = ho.sample_critical_directions(spec, u, adjoint, mult, count=50, seed=5)
    assert len(dirs) >= 50
    w = spec.operators.control_weights
    for v in dirs:
        nrm2 = weighted_l2_norm(v, spec.discounts.control_rate, w) ** 2
        worst_form = min(worst_form, model.lagrangian_form(v, mult) / nrm2)
    # box case: plain quadratic form
    spec_b, u_b, _ = box_solution
    state_b = ho.solve_forward(spec_b, u_b)
    adjoint_b = ho.solve_adjoint(spec_b, state_b)
    model_b = SecondOrderModel(spec_b, u_b, state=state_b, adjoint=adjoint_b)
    dirs_b = ho.sample_critical_directions(spec_b, u_b, adjoint_b, count=50, seed=6)
    assert len(dirs_b) >= 50
    w_b = spec_b.operators.control_weights
    for v in dirs_b:
        nrm2 = weighted_l2_norm(v, spec_b.discounts.control_rate, w_b) ** 2
        worst_form = min(worst_form, model_b.quadratic_form(v, v) / nrm2)

    growth_ok = True
    kappas = {}
    for label, (spec_g, u_g, _) in (("ball", ball_solution), ("box", box_solution)):
        rep = ho.verify_growth(spec_g, u_g, radius=0.05, samples=30, seed=7)
        kappas[label] = rep.kappa
        growth_ok = growth_ok and rep.kappa > 0
    spec_lq, u_lq, _ = lq_solution
    rep_lq = ho.verify_growth(spec_lq, u_lq, radius=0.1, samples=50, seed=8)
    kappas["lq"] = rep_lq.kappa
    growth_ok = growth_ok and rep_lq.kappa >= 0.8 * spec_lq.control_weight
    announce(5, "second-order forms and quadratic growth",
             worst_form >= -1e-6 and growth_ok,
             f"min normalized form {worst_form:.3e} (>=-1e-6), growth "
             + ", ".join(f"{k}={v:.3g}" for k, v in kappas.items()))


def test_criterion_6_horizon_rate(horizon_report):
    spec, report = horizon_report
    d = spec.discounts
    slope_ok = report.slope <= -0.5 * d.state_rate * (1.0 - 0.3)
    announce(6, "finite-horizon decay rate, monotonicity, cost comparison",
             slope_ok and report.rate_status == "pass" and report.monotone_ok
             and report.cost_check_ok and d.control_rate <= d.aux_rate,
             f"slope {report.slope:.3f} (<= {-0.35 * d.state_rate:.3f}), "
             f"monotone {report.monotone_ok}, cost gaps <=1e-10 "
             f"{report.cost_check_ok}")


def test_criterion_7_state_error_laws(horizon_report):
    spec, report = horizon_report
    bounds = check_state_error_bounds(report, spec)
    e_exp = bounds.energy_fit.exponent
    s_exp = bounds.sup_fit.exponent
    predicted = 2.0 / spec.discounts.integrability_exponent
    announce(7, "state-error scaling laws across the sweep",
             0.8 <= e_exp <= 1.2 and s_exp >= predicted - 0.2,
             f"energy exponent {e_exp:.3f} (in [0.8, 1.2]), "
             f"sup exponent {s_exp:.3f} (>= {predicted - 0.2:.2f})")


def test_criterion_8_assumption_gate():
    expected = {
        "invalid_state_discount.json": "state_discount_lower_bound",
        "invalid_aux_rate_boundary.json": "aux_rate_window",
        "invalid_control_discount.json": "control_discount_positive",
        "invalid_second_order.json": "second_order_margin",
    }
    failures = []
    for name, key in expected.items():
        spec = build_problem(load_config(CONFIG_DIR / name))
        report = ho.validate_assumptions(spec)
        keys = [i.key for i in report.failures()]
        if report.passed or key not in keys:
            failures.append((name, keys))
    announce(8, "invalid configurations rejected with cited inequality",
             not failures, f"checked {len(expected)} configs"
             + (f", unexpected: {failures}" if failures else ""))


def test_criterion_9_determinism(tmp_path, monkeypatch):
    cfg = load_config(CONFIG_DIR / "horizon_compact.json")
    cfg["mesh"]["nodes"] = 21
    cfg["time"]["horizon"] = 2.0
    cfg["data"]["source"]["support_end"] = 1.6
    cfg["data"]["target"]["support_end"] = 1.6
    cfg["horizon_study"] = {"horizons": [2.0, 3.0, 4.0], "reference_horizon": 8.0}
    cfg["optimizer"] = {"tolerance": 1e-10, "max_iterations": 400}
    cfg_path = tmp_path / "study.json"
    cfg_path.write_text(json.dumps(cfg))

    sweeps = {}
    for threads in ("1", "4"):
        monkeypatch.setenv("HORIZONOPT_THREADS", threads)
        for rep in ("a", "b"):
            out = tmp_path / f"t{threads}{rep}"
            assert main(["horizon-study", "--config", str(cfg_path),
                         "--out", str(out)]) == 0
            sweeps[(threads, rep)] = ((out / "sweep.csv").read_bytes(),
                                      (out / "fit.json").read_bytes())
    same_thread = sweeps[("1", "a")] == sweeps[("1", "b")]
    cross_thread = sweeps[("1", "a")] == sweeps[("4", "a")]

    opt_blobs = []
    for rep in ("a", "b"):
        out = tmp_path / f"opt{rep}"
        assert main(["optimize", "--config", str(CONFIG_DIR / "lq_small.json"),
                     "--out", str(out)]) == 0
        opt_blobs.append((out / "u_star.csv").read_bytes())
    announce(9, "byte-identical outputs across repeats and thread counts",
             same_thread and cross_thread and opt_blobs[0] == opt_blobs[1],
             f"repeat {same_thread}, threads {cross_thread}, "
             f"optimize {opt_blobs[0] == opt_blobs[1]}")
