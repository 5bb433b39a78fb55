//! Final verification: acceptance 7 + 8 with frozen defaults.
use qopf_core::caseio::builtin_case;
use qopf_core::ipm::*;
use qopf_core::noise::NoiseSpec;
use qopf_core::optimize::OptimizerConfig;
use qopf_core::powermodel::{build_opf, Formulation};
use qopf_core::vqsolver::SolverConfig;
use std::time::Instant;

fn main() {
    let case = builtin_case("case3").unwrap();
    let p = build_opf(&case, Formulation::Dc).unwrap();
    let clean = ipm_solve(&p, &LinearBackend::classical(), &IpmConfig::default()).unwrap();
    let f_ref = clean.state.objective;
    println!("clean classical: {:?} k={} f={:.6}", clean.status, clean.state.k, clean.state.objective);

    // acceptance 7 with frozen defaults
    let ctrl = IpmConfig { controller: Some(MuControllerConfig::default()), ..IpmConfig::default() };
    let c_ref = ipm_solve(&p, &LinearBackend::classical(), &ctrl).unwrap();
    let solver = SolverConfig { depth: 3, eps: 1e-6, max_iters: 4000, optimizer: OptimizerConfig::quasi_newton(), ..SolverConfig::default() };
    let t0 = Instant::now();
    let q = ipm_solve(&p, &LinearBackend::cvqls(solver), &ctrl).unwrap();
    let dt = t0.elapsed().as_secs_f64();
    let rel = (q.state.objective - clean.state.objective).abs() / clean.state.objective;
    let df = |r: &IpmResult| -> Vec<f64> { r.report.iterations.windows(2).map(|w| w[1].objective - w[0].objective).collect() };
    let a = df(&c_ref); let b = df(&q);
    let n = a.len().min(b.len());
    let (mut agree, mut total) = (0, 0);
    for i in 0..n {
        if a[i].abs().max(b[i].abs()) >= 1e-7 * f_ref { total += 1; if a[i].signum() == b[i].signum() { agree += 1; } }
    }
    println!("QIPM: {:?} k={} f={:.4} rel={:.3e} sign {agree}/{total} t={dt:.2}s",
        q.status, q.state.k, q.state.objective, rel);

    // acceptance 8 with frozen defaults
    let sigma = 1e-3;
    let (mut on_ok, mut off_fail) = (0, 0);
    for seed in 0..20u64 {
        let noise = NoiseSpec { seed, matrix_rel_sigma: sigma, rhs_rel_sigma: sigma, expectation_sigma: 0.0, shots: None };
        let b = LinearBackend::classical_noisy(noise);
        let ok = |r: &Result<IpmResult, qopf_core::Error>| match r {
            Ok(res) => ((res.state.objective - f_ref).abs() / f_ref) <= 0.02,
            Err(_) => false,
        };
        if ok(&ipm_solve(&p, &b, &ctrl)) { on_ok += 1; }
        if !ok(&ipm_solve(&p, &b, &IpmConfig::default())) { off_fail += 1; }
    }
    println!("noise sigma=1e-3: ON {on_ok}/20 (>=16), OFF-fail {off_fail}/20 (>=8)");
}
