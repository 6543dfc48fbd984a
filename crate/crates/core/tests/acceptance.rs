//! Acceptance criteria. Each criterion prints one `PASS` / `FAIL` line.

use std::panic::catch_unwind;
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use refuge_core::discretize::{divergence_form_apply, laplacian_neumann};
use refuge_core::dynamics::{Simulation, State, Stepper, StepperConfig};
use refuge_core::harvest::{compute_harvest, eta_l, eta_l_constant, phi_r, r_opt_const, HarvestOptions};
use refuge_core::homogenize::{homogenization_sweep, InitialData};
use refuge_core::optimize::{cosine_perturbation_gain, grad_eta_l, projected_ascent, OptConfig};
use refuge_core::rearrange::{
    arrangement_check_exhaustive, decreasing_slice, dirichlet_energy, hardy_littlewood_check, schwarz_decreasing,
};
use refuge_core::verify::{critical_growth_check, decay_integral_check};
use refuge_core::{derive_coeffs, Field, Grid, ModelParams, Refuge};

static FAILURES: AtomicUsize = AtomicUsize::new(0);

fn report(id: u32, name: &str, ok: bool, detail: String) {
    println!("acceptance {id:>2} {name}: {} ({detail})", if ok { "PASS" } else { "FAIL" });
    if !ok {
        FAILURES.fetch_add(1, Ordering::SeqCst);
    }
}

/// Generic rates with `m > 0` and a positive vector potential everywhere.
fn generic() -> ModelParams {
    ModelParams {
        beta_vh: 0.5,
        beta_hv: 0.2,
        sigma_v: 0.1,
        sigma_p: 0.1,
        alpha: 0.1,
        s_v: 1.0,
        s_p: 1.0,
        h: 1.0,
        gamma: 0.2,
        h0: 3.0,
        rp_r: 2.0,
        rp_f: 1.0,
        bv_r: 1.0,
        bv_f: 1.0,
        dv_r: 0.5,
        dv_f: 0.5,
        host_loss: 1.0,
    }
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.3e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn random_fields(rng: &mut ChaCha8Rng, grid: Grid, lo: f64, hi: f64) -> Field {
    Field::new(grid, (0..grid.n_cells).map(|_| rng.gen_range(lo..hi)).collect()).unwrap()
}

fn c01_elliptic_exactness() {
    let p = ModelParams::biological();
    assert!((p.xi() - 1.58).abs() < 1e-12 && (p.m() - 0.468).abs() < 1e-12);
    let g = Grid::default();
    let r = Refuge::constant(g, 0.5).unwrap();
    // warm the code path once so the timing reflects the solve
    let _ = phi_r(&r, &p).unwrap();
    let t = Instant::now();
    let phi = phi_r(&r, &p).unwrap();
    let elapsed = t.elapsed();
    let err = phi.values().iter().map(|v| (v - 1.0 / 1.814).abs()).fold(0.0, f64::max);
    report(
        1,
        "elliptic exactness",
        err <= 1e-10 && elapsed < Duration::from_millis(10),
        format!("max |phi - 1/1.814| = {err:.2e}, {elapsed:?}"),
    );
}

fn c02_closed_form_linearized_harvest() {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let g = Grid::new(1.0, 64).unwrap();
    let mut worst = 0.0f64;
    for k in 0..100 {
        let mut p = if k % 2 == 0 { generic() } else { ModelParams::biological() };
        p.host_loss = rng.gen_range(0.1..=1.0);
        let r: f64 = rng.gen_range(0.0..=1.0);
        let v: f64 = rng.gen_range(0.0..5.0);
        let field = eta_l(&Refuge::constant(g, r).unwrap(), &Field::constant(g, v), &p).unwrap();
        let closed = eta_l_constant(r, v, &p, g.measure());
        worst = worst.max((field - closed).abs() / closed.abs().max(1e-300));
    }

    // printed expression with the host-loss parameterization
    let p = ModelParams::biological();
    let vi0 = Field::constant(g, 1.0);
    let mut digits_ok = true;
    let mut max_rel = 0.0f64;
    for &r in &[0.0, 0.25, 0.5, 0.75, 1.0] {
        let printed = 1058823.0 * (1.0 - 0.2 * r) * (1.0 - 0.0448 / (1.58 + 0.468 * r));
        let ours = eta_l(&Refuge::constant(g, r).unwrap(), &vi0, &p).unwrap();
        let rel = (ours - printed).abs() / printed;
        max_rel = max_rel.max(rel);
        digits_ok &= format!("{ours:.5e}") == format!("{printed:.5e}");
    }
    report(
        2,
        "closed-form linearized harvest",
        worst <= 1e-12 && digits_ok,
        format!("max rel gap over 100 pairs {worst:.2e}; host-loss expression rel gap {max_rel:.2e}"),
    );
}

fn c03_ode_oracle() {
    let start = Instant::now();
    // r_V = r_P = s_V = s_P = 1, gamma = 1/2, h = 4, so (gamma - 1) h = -2
    let p = ModelParams {
        gamma: 0.5,
        h: 4.0,
        bv_r: 1.5,
        bv_f: 1.5,
        dv_r: 0.5,
        dv_f: 0.5,
        rp_r: 1.0,
        rp_f: 1.0,
        s_v: 1.0,
        s_p: 1.0,
        ..generic()
    };
    let g = Grid::new(1.0, 4).unwrap();
    let c = derive_coeffs(&p, &Refuge::zeros(g)).unwrap();
    let s0 = State::new(Field::constant(g, 0.25), Field::constant(g, 0.25), Field::constant(g, 0.25)).unwrap();
    let logistic = |t: f64| 1.0 / (1.0 + (1.0 / 0.75 - 1.0) * (-t).exp());
    let errors = |dt: f64| -> Vec<f64> {
        let st = Stepper::full(&c, &p, StepperConfig::with_dt(dt)).unwrap();
        let mut sim = Simulation::new(&st, s0.clone()).unwrap();
        [1.0, 5.0, 10.0]
            .iter()
            .map(|&t| {
                sim.run_until(t).unwrap();
                let s = sim.state();
                let u = s.total_vectors().add(&s.predators).unwrap();
                u.values().iter().map(|v| (v - logistic(t)).abs() / logistic(t)).fold(0.0, f64::max)
            })
            .collect()
    };
    let coarse = errors(1e-3);
    let fine = errors(1e-4);
    let ratios: Vec<f64> = coarse.iter().zip(&fine).map(|(a, b)| a / b).collect();
    let elapsed = start.elapsed();
    let ok = coarse.iter().all(|&e| e <= 1e-3) && ratios.iter().all(|&r| r >= 5.0) && elapsed < Duration::from_secs(30);
    report(
        3,
        "ODE oracle",
        ok,
        format!("rel errors dt=1e-3 {}, ratios {ratios:.2?}, {elapsed:.2?}", sci(&coarse)),
    );
}

fn c04_integral_oracle() {
    let start = Instant::now();
    // gamma = 0, m_hat = h r_P / s_P - r_V = 2 - 1 = 1, s_V = 1, V0 = 1
    let p = ModelParams {
        gamma: 0.0,
        h: 1.0,
        rp_r: 2.0,
        rp_f: 2.0,
        s_p: 1.0,
        s_v: 1.0,
        bv_r: 1.5,
        bv_f: 1.5,
        dv_r: 0.5,
        dv_f: 0.5,
        alpha: 0.0,
        beta_hv: 1e-12,
        ..generic()
    };
    let g = Grid::new(1.0, 8).unwrap();
    let c = derive_coeffs(&p, &Refuge::zeros(g)).unwrap();
    let s0 = State::new(Field::constant(g, 1.0), Field::zeros(g), Field::constant(g, 2.0)).unwrap();
    let rep = compute_harvest(s0, &c, &p, StepperConfig::default(), &HarvestOptions::default()).unwrap();
    let int_v = rep.jv_total.mean();
    let rel = (int_v - 2f64.ln()).abs() / 2f64.ln();
    let elapsed = start.elapsed();
    report(
        4,
        "integral oracle",
        rel <= 1e-2 && elapsed < Duration::from_secs(30),
        format!("int V = {int_v:.6} vs ln 2, rel {rel:.2e}, T = {}, {elapsed:.2?}", rep.t_used),
    );
}

fn c05_gradient_check() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let g = Grid::new(1.0, 100).unwrap();
    let h = 1e-4;
    let mut worst = 0.0f64;
    for k in 0..20 {
        let mut p = if k % 2 == 0 { generic() } else { ModelParams::biological() };
        p.host_loss = rng.gen_range(0.1..=1.0);
        let (a, b, w) = (rng.gen_range(0.3..0.7), rng.gen_range(-0.2..0.2), rng.gen_range(0.5..3.0));
        let refuge = Refuge::new(Field::from_fn(g, |x| a + b * (w * x).sin())).unwrap();
        let (amp, x0, s) = (rng.gen_range(0.5..3.0), rng.gen_range(-0.5..0.5), rng.gen_range(1.0..10.0));
        let vi0 = Field::from_fn(g, |x| amp * (0.2 + (-s * (x - x0).powi(2)).exp()));
        let (kk, ph) = (rng.gen_range(1.0..4.0), rng.gen_range(0.0..6.0));
        let zeta = Field::from_fn(g, |x| (kk * x + ph).cos());
        let analytic = grad_eta_l(&refuge, &vi0, &p).unwrap().dot(&zeta).unwrap();
        let plus = Refuge::new(refuge.field().axpy(h, &zeta).unwrap()).unwrap();
        let minus = Refuge::new(refuge.field().axpy(-h, &zeta).unwrap()).unwrap();
        let fd = (eta_l(&plus, &vi0, &p).unwrap() - eta_l(&minus, &vi0, &p).unwrap()) / (2.0 * h);
        worst = worst.max((analytic - fd).abs() / fd.abs());
    }
    report(5, "gradient check", worst <= 1e-5, format!("max relative error {worst:.2e} over 20 triples"));
}

fn c06_constant_optimum() {
    // xi = 0.5 < m = 0.8, so R* = xi / m = 0.625 when beta (xi + m) E = 4 xi^2
    let p = ModelParams {
        alpha: 0.1,
        dv_f: 0.1,
        dv_r: 0.2,
        rp_f: 0.3,
        rp_r: 1.0,
        h: 1.0,
        s_p: 1.0,
        ..generic()
    };
    let (xi, m) = (0.5, 0.8);
    assert!((p.xi() - xi).abs() < 1e-12 && (p.m() - m).abs() < 1e-12);
    let e = 4.0 * xi * xi / (p.beta_vh * (xi + m));
    let r_star = xi / m;
    let g = Grid::new(1.0, 64).unwrap();
    let vi0 = Field::constant(g, e);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut spread = 0.0f64;
    for _ in 0..10 {
        let (a, b, w) = (rng.gen_range(0.1..0.9), rng.gen_range(-0.1..0.1), rng.gen_range(0.5..4.0));
        let start = Refuge::from_fn_clipped(g, |x| a + b * (w * x).cos());
        let res = projected_ascent(&start, &vi0, &p, &OptConfig::default()).unwrap();
        spread = spread.max(res.refuge.values().iter().map(|v| (v - r_star).abs()).fold(0.0, f64::max));
    }
    let rs = Refuge::constant(g, r_star).unwrap();
    let base = eta_l(&rs, &vi0, &p).unwrap();
    let scale = p.h0 * g.measure();
    let mut max_gain = f64::NEG_INFINITY;
    for _ in 0..50 {
        let (c0, c1, k) = (rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0), rng.gen_range(1.0..5.0));
        let zeta = Field::from_fn(g, |x| c0 + c1 * (k * x).sin());
        let eps = 0.3 * r_star.min(1.0 - r_star) / zeta.sup_norm();
        let r = Refuge::new(rs.field().axpy(eps, &zeta).unwrap()).unwrap();
        max_gain = max_gain.max(eta_l(&r, &vi0, &p).unwrap() - base);
    }

    // printed coefficients clamp the closed form to 0; confirm by a scan
    let printed = |r: f64| 1058823.0 * (1.0 - 0.2 * r) * (1.0 - 0.0448 / (1.58 + 0.468 * r));
    let scan_arg = (0..2000)
        .map(|i| i as f64 / 1999.0)
        .map(|r| (r, printed(r)))
        .fold((f64::NAN, f64::NEG_INFINITY), |best, cur| if cur.1 > best.1 { cur } else { best })
        .0;
    let bio = ModelParams::biological();
    let clamped = r_opt_const(1.0, &bio).unwrap();
    let ok = spread <= 1e-4 && max_gain <= 1e-10 * scale && clamped == 0.0 && scan_arg == 0.0;
    report(
        6,
        "constant optimum",
        ok,
        format!(
            "sup |R - R*| over 10 starts {spread:.2e}, max perturbation gain {:.2e} scale, printed case R* = {clamped}, scan argmax {scan_arg}",
            max_gain / scale
        ),
    );
}

fn c07_nonconstant_optimum() {
    let p = generic();
    let g = Grid::new(1.0, 200).unwrap();
    let vi0 = Field::from_fn(g, |x| 2.0 * (-5.0 * x * x).exp());
    let r_bar = 0.3;
    let eps = 1e-2;
    let gain = cosine_perturbation_gain(r_bar, Some(eps), &vi0, &p).unwrap();
    // finite-difference variation of phi as an independent estimate
    let r0 = Refuge::constant(g, r_bar).unwrap();
    let cosine = Field::from_fn(g, |x| (std::f64::consts::PI * x).cos());
    let r1 = Refuge::new(r0.field().axpy(1e-6, &cosine).unwrap()).unwrap();
    let du = phi_r(&r1, &p).unwrap().sub(&phi_r(&r0, &p).unwrap()).unwrap().scale(1e6);
    let fd_int = du.dot(&vi0).unwrap();
    let direct = eta_l(&Refuge::new(r0.field().axpy(eps, &cosine).unwrap()).unwrap(), &vi0, &p).unwrap()
        - eta_l(&r0, &vi0, &p).unwrap();

    let mass = r_bar * g.measure();
    let cfg = OptConfig {
        mass: Some(mass),
        ..OptConfig::default()
    };
    let res = projected_ascent(&r0, &vi0, &p, &cfg).unwrap();
    let spread = res.refuge.field().max() - res.refuge.field().min();
    let improvement = res.eta_l - eta_l(&r0, &vi0, &p).unwrap();
    let ok = gain.int_u_v < 0.0
        && fd_int < 0.0
        && direct > 0.0
        && gain.gain > 0.0
        && spread > 1e-3
        && improvement > 0.0
        && (res.refuge.field().integrate() - mass).abs() <= 1e-12;
    report(
        7,
        "non-constant optimum",
        ok,
        format!(
            "int uV = {:.3e} (fd {fd_int:.3e}), gain {direct:.3e}, optimizer range {spread:.3}, improvement {improvement:.3e}",
            gain.int_u_v
        ),
    );
}

fn c08_homogenization() {
    let start = Instant::now();
    let p = generic();
    let g = Grid::new(1.0, 256).unwrap();
    let refuge = Refuge::half_indicator(g);
    let init = InitialData {
        vi0: Field::from_fn(g, |x| 0.5 * (-4.0 * x * x).exp()),
        vs0: Field::constant(g, 0.5),
        p0: Field::constant(g, 1.5),
    };
    let freqs = [1, 2, 4, 8, 16];
    let rep = homogenization_sweep(&refuge, &init, &p, StepperConfig::default(), &HarvestOptions::default(), &freqs)
        .unwrap();
    let gaps = rep.gaps();
    let decreasing = gaps.windows(2).all(|w| w[1] < w[0]);
    let converged = rep.rows.iter().all(|r| r.converged);
    let elapsed = start.elapsed();
    report(
        8,
        "homogenization",
        decreasing && converged && elapsed < Duration::from_secs(600),
        format!("|eta_n - eta_inf| = {}, {elapsed:.2?}", sci(&gaps)),
    );
}

fn c09_critical_growth() {
    // d_V + h r_P / s_P - b_V = 0 with constant coefficients: lambda1 = 0
    let p = ModelParams {
        beta_vh: 1.0,
        beta_hv: 1.0,
        h0: 1.0,
        alpha: 0.1,
        dv_r: 0.5,
        dv_f: 0.5,
        bv_r: 1.5,
        bv_f: 1.5,
        h: 1.0,
        rp_r: 1.0,
        rp_f: 1.0,
        s_p: 1.0,
        s_v: 1.0,
        ..generic()
    };
    let g = Grid::new(1.0, 8).unwrap();
    let c = derive_coeffs(&p, &Refuge::zeros(g)).unwrap();
    let st = Stepper::reduced(&c, &p, StepperConfig::with_dt(1e-2)).unwrap();
    let s0 = State::new(
        Field::from_fn(g, |x| 0.5 + 0.2 * x),
        Field::constant(g, 0.5),
        Field::constant(g, 1.0),
    )
    .unwrap();
    let times = [1e2, 2e2, 5e2, 1e3, 2e3, 5e3, 1e4];
    let rep = critical_growth_check(&st, s0, &times).unwrap();
    // independent least-squares slope of int J against ln T
    let xs: Vec<f64> = times.iter().map(|t| t.ln()).collect();
    let (mx, my) = (xs.iter().sum::<f64>() / 7.0, rep.int_j.iter().sum::<f64>() / 7.0);
    let slope = xs.iter().zip(&rep.int_j).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>()
        / xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>();
    let floor = 1e-3 * rep.host_integral;
    let falling = rep.eta.windows(2).all(|w| w[1] < w[0] && (w[0] <= floor || w[1] < w[0] * (1.0 - 1e-6)));
    let ok = rep.lambda1.abs() < 1e-12 && rep.int_j[6] > rep.int_j[0] && slope > 0.0 && falling;
    report(
        9,
        "critical growth",
        ok,
        format!(
            "lambda1 = {:.1e}, int J(1e2) = {:.4}, int J(1e4) = {:.4}, slope {slope:.4}, eta(1e4) / int H = {:.3e}",
            rep.lambda1,
            rep.int_j[0],
            rep.int_j[6],
            rep.eta[6] / rep.host_integral
        ),
    );
}

fn c10_decay_integral_bound() {
    let p = ModelParams {
        h: 1.0,
        rp_f: 1.0,
        rp_r: 1.0,
        s_p: 1.0,
        dv_f: 0.5,
        dv_r: 0.5,
        s_v: 1.0,
        ..generic()
    };
    let g = Grid::new(1.0, 16).unwrap();
    let init = InitialData {
        vi0: Field::from_fn(g, |x| 0.3 * (-3.0 * x * x).exp()),
        vs0: Field::from_fn(g, |x| 0.5 + 0.2 * x),
        p0: Field::constant(g, 1.0),
    };
    let m_bars = [0.1, 0.05, 0.025, 0.0125];
    let rep = decay_integral_check(&p, &init, &m_bars, 2000.0, StepperConfig::with_dt(1e-2)).unwrap();
    let mut ok = true;
    let mut detail = Vec::new();
    for (k, row) in rep.rows.iter().enumerate() {
        let a = row.m_bar / (p.s_v * row.v1);
        let bound = ((a + 1.0) / (a + 1.0 - (-row.m_bar).exp())).ln() / p.s_v;
        ok &= row.integral > bound;
        if k > 0 {
            ok &= row.integral > rep.rows[k - 1].integral;
        }
        detail.push(format!("m={}: {:.3} > {:.3}", row.m_bar, row.integral, bound));
    }
    report(10, "decay integral bound", ok, detail.join(", "));
}

fn c11_rearrangement_suite() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let g = Grid::new(1.0, 64).unwrap();
    let (mut multiset, mut hl, mut ps) = (true, true, true);
    for _ in 0..1000 {
        let f = random_fields(&mut rng, g, -1.0, 1.0);
        let h = random_fields(&mut rng, g, -1.0, 1.0);
        let fs = schwarz_decreasing(&f);
        let mut a = f.values().to_vec();
        let mut b = fs.values().to_vec();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        multiset &= a == b;
        let (lhs, rhs) = hardy_littlewood_check(&f, &h).unwrap();
        hl &= lhs <= rhs + 1e-12 * rhs.abs();
        let dx = g.dx();
        ps &= dirichlet_energy(&decreasing_slice(f.values()), dx) <= dirichlet_energy(f.values(), dx);
    }
    // exhaustive arrangement check on six cells
    let p = generic();
    let g6 = Grid::new(1.0, 6).unwrap();
    let refuge = Refuge::new(Field::new(g6, vec![0.1, 0.5, 0.9, 0.9, 0.5, 0.1]).unwrap()).unwrap();
    let pool = Field::new(g6, vec![0.3, 1.2, 0.05, 0.8, 2.0, 0.6]).unwrap();
    let cor = arrangement_check_exhaustive(&refuge, &pool, &p).unwrap();
    let elapsed = start.elapsed();
    let ok = multiset && hl && ps && cor.passed() && cor.trials == 720 && elapsed < Duration::from_secs(60);
    report(
        11,
        "rearrangement suite",
        ok,
        format!(
            "multiset {multiset}, Hardy-Littlewood {hl}, Polya-Szego {ps}, {} arrangements with {} violations, {elapsed:.2?}",
            cor.trials, cor.violations
        ),
    );
}

fn c12_operator_conservation() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = rng.gen_range(4..300);
        let g = Grid::new(rng.gen_range(0.5..5.0), n).unwrap();
        let f = random_fields(&mut rng, g, -1.0, 1.0);
        let r = random_fields(&mut rng, g, 0.05, 3.0);
        let sigma = rng.gen_range(0.01..2.0);
        for a in [laplacian_neumann(&f, sigma), divergence_form_apply(&r, &f, sigma).unwrap()] {
            let abs: f64 = a.values().iter().map(|v| v.abs()).sum::<f64>() * g.dx();
            worst = worst.max(a.integrate().abs() / abs);
        }
    }
    report(12, "operator conservation", worst <= 1e-12, format!("max |int A f| / int |A f| = {worst:.2e}"));
}

fn main() -> ExitCode {
    let criteria: [(u32, fn()); 12] = [
        (1, c01_elliptic_exactness),
        (2, c02_closed_form_linearized_harvest),
        (3, c03_ode_oracle),
        (4, c04_integral_oracle),
        (5, c05_gradient_check),
        (6, c06_constant_optimum),
        (7, c07_nonconstant_optimum),
        (8, c08_homogenization),
        (9, c09_critical_growth),
        (10, c10_decay_integral_bound),
        (11, c11_rearrangement_suite),
        (12, c12_operator_conservation),
    ];
    for (id, run) in criteria {
        if catch_unwind(run).is_err() {
            println!("acceptance {id:>2}: FAIL (panicked)");
            FAILURES.fetch_add(1, Ordering::SeqCst);
        }
    }
    let failures = FAILURES.load(Ordering::SeqCst);
    println!("acceptance: {} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
