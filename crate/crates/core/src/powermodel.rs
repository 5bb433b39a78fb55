//! OPF problem construction and Newton-system assembly.
//!
//! Builds the compact optimization problem (quadratic generation cost, linear
//! network balance, bounds converted to equalities with slack variables),
//! folds the logarithmic barrier into the Hessian and residuals, and
//! assembles the reduced symmetric KKT system solved at every outer
//! iteration.
//!
//! Powers are handled in per-unit (MW / baseMVA); costs stay in $/h. The DC
//! formulation uses generator injections and bus angles with the reference
//! angle eliminated; the compact AC formulation adds reactive injections and
//! a bounded bus-state vector coupled through a second admittance matrix.

use nalgebra::{DMatrix, DVector};

use crate::caseio::CaseData;
use crate::error::{Error, Result};

/// Problem flavor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Formulation {
    Dc,
    Ac,
}

impl Formulation {
    pub fn as_str(&self) -> &'static str {
        match self {
            Formulation::Dc => "dc",
            Formulation::Ac => "ac",
        }
    }
}

impl std::str::FromStr for Formulation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dc" => Ok(Formulation::Dc),
            "ac" | "ac-compact" => Ok(Formulation::Ac),
            other => Err(Error::Domain(format!(
                "unknown formulation `{other}` (expected dc or ac)"
            ))),
        }
    }
}

/// One scalar bound turned into an equality row `var + orientation*slack = limit`
/// (orientation -1 for lower bounds, +1 for upper bounds).
#[derive(Debug, Clone, Copy)]
pub struct BoundRow {
    /// Index of the bounded variable.
    pub var: usize,
    /// Index of the slack variable for this row.
    pub slack: usize,
    /// Coefficient of the slack in the equality row.
    pub orientation: f64,
    /// The bound value (per-unit).
    pub limit: f64,
}

/// Index layout of the variable vector: generator injections first, then bus
/// states, then slacks.
#[derive(Debug, Clone)]
pub struct VariableLayout {
    pub n_gen: usize,
    pub n_bus: usize,
    /// Number of bus-state variables (angles for dc, bounded states for ac).
    pub n_state: usize,
    pub gen_p: std::ops::Range<usize>,
    pub gen_q: Option<std::ops::Range<usize>>,
    pub state: std::ops::Range<usize>,
    pub slack: std::ops::Range<usize>,
}

/// The transformed OPF problem: minimize a diagonal quadratic objective
/// subject to linear equality constraints, with designated slack variables
/// kept positive by the barrier.
///
/// The objective is normalized by `cost_scale` so its curvature sits at the
/// same magnitude as the per-unit network rows; otherwise dollar-scale cost
/// coefficients inflate the KKT condition number by orders of magnitude
/// before the interior iteration even starts. `objective` works in the
/// normalized scale; `objective_dollars` undoes it for reporting.
#[derive(Debug, Clone)]
pub struct OpfProblem {
    pub formulation: Formulation,
    /// f(x) = sum_i quad[i] x_i^2 + lin[i] x_i + constant (normalized scale)
    pub quad: DVector<f64>,
    pub lin: DVector<f64>,
    pub constant: f64,
    /// Dollars per normalized objective unit.
    pub cost_scale: f64,
    /// Equality constraints A x = b: balance rows first, then bound rows.
    pub eq: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub n_balance: usize,
    pub bounds: Vec<BoundRow>,
    pub layout: VariableLayout,
    pub base_mva: f64,
}

/// Assembled reduced KKT system at one iterate.
#[derive(Debug, Clone)]
pub struct KktSystem {
    /// Lagrangian Hessian block (objective plus barrier curvature).
    pub h: DMatrix<f64>,
    /// Equality Jacobian.
    pub j: DMatrix<f64>,
    /// Stationarity residual: grad f + J' lambda + barrier gradient.
    pub r: DVector<f64>,
    /// Primal residual: A x - b.
    pub c: DVector<f64>,
    /// M = [[H, J'], [J, 0]].
    pub m: DMatrix<f64>,
    /// -[r; c].
    pub rhs: DVector<f64>,
}

impl KktSystem {
    pub fn dim(&self) -> usize {
        self.m.nrows()
    }
}

impl OpfProblem {
    pub fn n_vars(&self) -> usize {
        self.quad.len()
    }

    pub fn n_eq(&self) -> usize {
        self.eq.nrows()
    }

    pub fn n_slacks(&self) -> usize {
        self.bounds.len()
    }

    /// Dimension of the assembled KKT matrix.
    pub fn kkt_dim(&self) -> usize {
        self.n_vars() + self.n_eq()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        let mut f = self.constant;
        for i in 0..self.n_vars() {
            f += self.quad[i] * x[i] * x[i] + self.lin[i] * x[i];
        }
        f
    }

    /// Objective in the case's original cost units ($/h).
    pub fn objective_dollars(&self, x: &DVector<f64>) -> f64 {
        self.cost_scale * self.objective(x)
    }

    pub fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_fn(self.n_vars(), |i, _| 2.0 * self.quad[i] * x[i] + self.lin[i])
    }

    /// Slack components of a variable vector.
    pub fn slacks<'a>(&self, x: &'a DVector<f64>) -> nalgebra::DVectorView<'a, f64> {
        x.rows(self.layout.slack.start, self.bounds.len())
    }

    /// Build a bare problem from parts; used for synthetic test problems.
    /// `bounds[j]` must correspond to equality row `n_balance + j`.
    pub fn from_parts(
        quad: DVector<f64>,
        lin: DVector<f64>,
        constant: f64,
        eq: DMatrix<f64>,
        eq_rhs: DVector<f64>,
        n_balance: usize,
        bounds: Vec<BoundRow>,
        layout: VariableLayout,
    ) -> Result<Self> {
        let n = quad.len();
        if lin.len() != n || eq.ncols() != n || eq.nrows() != eq_rhs.len() {
            return Err(Error::Dimension("inconsistent problem blocks".into()));
        }
        if eq.nrows() != n_balance + bounds.len() {
            return Err(Error::Dimension(
                "equality rows must be balance rows followed by one row per bound".into(),
            ));
        }
        Ok(Self {
            formulation: Formulation::Dc,
            quad,
            lin,
            constant,
            cost_scale: 1.0,
            eq,
            eq_rhs,
            n_balance,
            bounds,
            layout,
            base_mva: 1.0,
        })
    }
}

/// Full (unreduced) DC susceptance matrix: Laplacian of 1/x over in-service
/// branches. Row sums are zero by construction.
pub fn dc_susceptance_matrix(case: &CaseData) -> DMatrix<f64> {
    laplacian(case, |br| 1.0 / br.reactance)
}

/// Coupling matrix for the compact reactive equation: Laplacian of the branch
/// susceptance parameter.
pub fn reactive_coupling_matrix(case: &CaseData) -> DMatrix<f64> {
    laplacian(case, |br| br.susceptance)
}

fn laplacian(case: &CaseData, weight: impl Fn(&crate::caseio::Branch) -> f64) -> DMatrix<f64> {
    let idx = case.bus_index();
    let n = case.buses.len();
    let mut m = DMatrix::zeros(n, n);
    for br in &case.branches {
        let (i, j) = (idx[&br.from], idx[&br.to]);
        let w = weight(br);
        m[(i, i)] += w;
        m[(j, j)] += w;
        m[(i, j)] -= w;
        m[(j, i)] -= w;
    }
    m
}

/// DC susceptance matrix with the reference row and column eliminated; the
/// square power-flow matrix whose conditioning is reported.
pub fn dc_power_flow_matrix(case: &CaseData) -> DMatrix<f64> {
    let full = dc_susceptance_matrix(case);
    let r = case.reference_index();
    full.remove_row(r).remove_column(r)
}

/// Build the transformed OPF problem for a case.
pub fn build_opf(case: &CaseData, formulation: Formulation) -> Result<OpfProblem> {
    case.validate().map_err(|e| match e {
        Error::Semantic(m) => Error::InvalidProblem(m),
        other => other,
    })?;
    if case.generators.is_empty() {
        return Err(Error::InvalidProblem("case has no generators".into()));
    }
    for (i, g) in case.generators.iter().enumerate() {
        if g.p_min > g.p_max || (formulation == Formulation::Ac && g.q_min > g.q_max) {
            return Err(Error::InvalidProblem(format!(
                "generator {i} has inverted bounds"
            )));
        }
    }

    let n_bus = case.buses.len();
    let n_gen = case.generators.len();
    let base = case.base_mva;
    let bus_idx = case.bus_index();
    let ref_idx = case.reference_index();

    let b_full = dc_susceptance_matrix(case);
    if n_bus > 1 {
        let b_red = b_full.clone().remove_row(ref_idx).remove_column(ref_idx);
        let svd = b_red.svd(false, false);
        let smax = svd.singular_values.max();
        let smin = svd.singular_values.min();
        if smin <= 1e-10 * smax.max(1.0) {
            return Err(Error::Singular(
                "susceptance matrix after reference-bus reduction".into(),
            ));
        }
    }

    match formulation {
        Formulation::Dc => {
            // variables: [P_G | theta (ref eliminated) | slacks]
            let n_state = n_bus - 1;
            let n_slack = 2 * n_gen;
            let n = n_gen + n_state + n_slack;
            let layout = VariableLayout {
                n_gen,
                n_bus,
                n_state,
                gen_p: 0..n_gen,
                gen_q: None,
                state: n_gen..n_gen + n_state,
                slack: n_gen + n_state..n,
            };

            let mut quad = DVector::zeros(n);
            let mut lin = DVector::zeros(n);
            let mut constant = 0.0;
            for (g, gen) in case.generators.iter().enumerate() {
                quad[g] = gen.cost.c2 * base * base;
                lin[g] = gen.cost.c1 * base;
                constant += gen.cost.c0;
            }
            let cost_scale = normalize_cost(&mut quad, &mut lin, &mut constant);

            let n_balance = n_bus;
            let mut eq = DMatrix::zeros(n_balance + n_slack, n);
            let mut rhs = DVector::zeros(n_balance + n_slack);

            // balance: sum_g P_g  - B theta = P_D (per-unit), all buses
            for (g, gen) in case.generators.iter().enumerate() {
                eq[(bus_idx[&gen.bus], g)] = 1.0;
            }
            let mut col = 0usize;
            for j in 0..n_bus {
                if j == ref_idx {
                    continue;
                }
                for i in 0..n_bus {
                    eq[(i, layout.state.start + col)] = -b_full[(i, j)];
                }
                col += 1;
            }
            for i in 0..n_bus {
                rhs[i] = case.buses[i].p_demand / base;
            }

            // bounds: p_min <= P_g <= p_max
            let mut bounds = Vec::with_capacity(n_slack);
            for (g, gen) in case.generators.iter().enumerate() {
                let lo_row = n_balance + 2 * g;
                let hi_row = lo_row + 1;
                let s_lo = layout.slack.start + 2 * g;
                let s_hi = s_lo + 1;
                eq[(lo_row, g)] = 1.0;
                eq[(lo_row, s_lo)] = -1.0;
                rhs[lo_row] = gen.p_min / base;
                bounds.push(BoundRow {
                    var: g,
                    slack: s_lo,
                    orientation: -1.0,
                    limit: gen.p_min / base,
                });
                eq[(hi_row, g)] = 1.0;
                eq[(hi_row, s_hi)] = 1.0;
                rhs[hi_row] = gen.p_max / base;
                bounds.push(BoundRow {
                    var: g,
                    slack: s_hi,
                    orientation: 1.0,
                    limit: gen.p_max / base,
                });
            }

            Ok(OpfProblem {
                formulation,
                quad,
                lin,
                constant,
                cost_scale,
                eq,
                eq_rhs: rhs,
                n_balance,
                bounds,
                layout,
                base_mva: base,
            })
        }
        Formulation::Ac => {
            // variables: [P_G | Q_G | V | slacks], V bounded per bus
            let n_state = n_bus;
            let n_slack = 2 * (2 * n_gen + n_bus);
            let n = 2 * n_gen + n_state + n_slack;
            let layout = VariableLayout {
                n_gen,
                n_bus,
                n_state,
                gen_p: 0..n_gen,
                gen_q: Some(n_gen..2 * n_gen),
                state: 2 * n_gen..2 * n_gen + n_state,
                slack: 2 * n_gen + n_state..n,
            };

            let mut quad = DVector::zeros(n);
            let mut lin = DVector::zeros(n);
            let mut constant = 0.0;
            for (g, gen) in case.generators.iter().enumerate() {
                quad[g] = gen.cost.c2 * base * base;
                lin[g] = gen.cost.c1 * base;
                constant += gen.cost.c0;
            }
            let cost_scale = normalize_cost(&mut quad, &mut lin, &mut constant);

            let g_full = reactive_coupling_matrix(case);
            let n_balance = 2 * n_bus;
            let mut eq = DMatrix::zeros(n_balance + n_slack, n);
            let mut rhs = DVector::zeros(n_balance + n_slack);

            for (g, gen) in case.generators.iter().enumerate() {
                let i = bus_idx[&gen.bus];
                eq[(i, g)] = 1.0; // P balance
                eq[(n_bus + i, n_gen + g)] = 1.0; // Q balance
            }
            for j in 0..n_bus {
                for i in 0..n_bus {
                    eq[(i, layout.state.start + j)] = -b_full[(i, j)];
                    eq[(n_bus + i, layout.state.start + j)] = -g_full[(i, j)];
                }
            }
            for i in 0..n_bus {
                rhs[i] = case.buses[i].p_demand / base;
                rhs[n_bus + i] = case.buses[i].q_demand / base;
            }

            let mut bounds = Vec::with_capacity(n_slack);
            let mut row = n_balance;
            let mut slack = layout.slack.start;
            let mut push_pair =
                |eq: &mut DMatrix<f64>,
                 rhs: &mut DVector<f64>,
                 bounds: &mut Vec<BoundRow>,
                 var: usize,
                 lo: f64,
                 hi: f64| {
                    eq[(row, var)] = 1.0;
                    eq[(row, slack)] = -1.0;
                    rhs[row] = lo;
                    bounds.push(BoundRow {
                        var,
                        slack,
                        orientation: -1.0,
                        limit: lo,
                    });
                    row += 1;
                    slack += 1;
                    eq[(row, var)] = 1.0;
                    eq[(row, slack)] = 1.0;
                    rhs[row] = hi;
                    bounds.push(BoundRow {
                        var,
                        slack,
                        orientation: 1.0,
                        limit: hi,
                    });
                    row += 1;
                    slack += 1;
                };
            for (g, gen) in case.generators.iter().enumerate() {
                push_pair(
                    &mut eq,
                    &mut rhs,
                    &mut bounds,
                    g,
                    gen.p_min / base,
                    gen.p_max / base,
                );
            }
            for (g, gen) in case.generators.iter().enumerate() {
                push_pair(
                    &mut eq,
                    &mut rhs,
                    &mut bounds,
                    n_gen + g,
                    gen.q_min / base,
                    gen.q_max / base,
                );
            }
            for (i, bus) in case.buses.iter().enumerate() {
                push_pair(
                    &mut eq,
                    &mut rhs,
                    &mut bounds,
                    layout.state.start + i,
                    bus.v_min,
                    bus.v_max,
                );
            }

            Ok(OpfProblem {
                formulation,
                quad,
                lin,
                constant,
                cost_scale,
                eq,
                eq_rhs: rhs,
                n_balance,
                bounds,
                layout,
                base_mva: base,
            })
        }
    }
}

/// Divide the cost polynomial by its leading magnitude so the objective
/// curvature and gradient are O(1). Returns the dollars-per-unit factor.
fn normalize_cost(quad: &mut DVector<f64>, lin: &mut DVector<f64>, constant: &mut f64) -> f64 {
    let scale = quad
        .iter()
        .map(|q| 2.0 * q.abs())
        .chain(lin.iter().map(|l| l.abs()))
        .fold(1.0f64, f64::max);
    *quad /= scale;
    *lin /= scale;
    *constant /= scale;
    scale
}

/// Barrier objective Phi(x, mu) = f(x) - mu * sum_i ln(s_i).
pub fn barrier_value(problem: &OpfProblem, x: &DVector<f64>, mu: f64) -> Result<f64> {
    if mu <= 0.0 {
        return Err(Error::Domain(format!("barrier weight must be positive, got {mu}")));
    }
    if x.len() != problem.n_vars() {
        return Err(Error::Dimension(format!(
            "variable vector length {} != {}",
            x.len(),
            problem.n_vars()
        )));
    }
    let mut barrier = 0.0;
    for b in &problem.bounds {
        let s = x[b.slack];
        if s <= 0.0 {
            return Err(Error::Domain(format!(
                "slack {} is nonpositive ({s})",
                b.slack
            )));
        }
        barrier += s.ln();
    }
    Ok(problem.objective(x) - mu * barrier)
}

/// Assemble the reduced KKT system at an iterate (x, lambda) with barrier
/// weight mu. The barrier contribution is folded into the Hessian diagonal
/// (mu / s_i^2) and the stationarity residual (-mu / s_i).
pub fn kkt_assemble(
    problem: &OpfProblem,
    x: &DVector<f64>,
    lambda: &DVector<f64>,
    mu: f64,
) -> Result<KktSystem> {
    let n = problem.n_vars();
    let m_eq = problem.n_eq();
    if x.len() != n {
        return Err(Error::Dimension(format!(
            "variable vector length {} != {n}",
            x.len()
        )));
    }
    if lambda.len() != m_eq {
        return Err(Error::Dimension(format!(
            "multiplier vector length {} != {m_eq}",
            lambda.len()
        )));
    }

    let mut h = DMatrix::zeros(n, n);
    for i in 0..n {
        h[(i, i)] = 2.0 * problem.quad[i];
    }
    let mut r = problem.gradient(x);
    for b in &problem.bounds {
        let s = x[b.slack];
        if s <= 0.0 {
            return Err(Error::Domain(format!(
                "slack {} is nonpositive ({s})",
                b.slack
            )));
        }
        h[(b.slack, b.slack)] += mu / (s * s);
        r[b.slack] -= mu / s;
    }
    r += problem.eq.transpose() * lambda;
    let c = &problem.eq * x - &problem.eq_rhs;

    let dim = n + m_eq;
    let mut m = DMatrix::zeros(dim, dim);
    m.view_mut((0, 0), (n, n)).copy_from(&h);
    m.view_mut((0, n), (n, m_eq))
        .copy_from(&problem.eq.transpose());
    m.view_mut((n, 0), (m_eq, n)).copy_from(&problem.eq);

    let mut rhs = DVector::zeros(dim);
    rhs.rows_mut(0, n).copy_from(&(-&r));
    rhs.rows_mut(n, m_eq).copy_from(&(-&c));

    Ok(KktSystem {
        h,
        j: problem.eq.clone(),
        r,
        c,
        m,
        rhs,
    })
}

/// Condition number kappa = sigma_max / sigma_min by full SVD; returns
/// +infinity when the smallest singular value vanishes.
pub fn condition_number(matrix: &DMatrix<f64>) -> Result<f64> {
    if matrix.is_empty() {
        return Err(Error::Dimension("empty matrix".into()));
    }
    if matrix.nrows() != matrix.ncols() {
        return Err(Error::Dimension(format!(
            "matrix is {}x{}, need square",
            matrix.nrows(),
            matrix.ncols()
        )));
    }
    let svd = matrix.clone().svd(false, false);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    if smin < 1e-300 {
        return Ok(f64::INFINITY);
    }
    Ok(smax / smin)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::caseio::builtin_case;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Tiny QP `min x^2 s.t. x >= 1`: variables [x, s], one bound row.
    pub(crate) fn tiny_qp() -> OpfProblem {
        let layout = VariableLayout {
            n_gen: 1,
            n_bus: 0,
            n_state: 0,
            gen_p: 0..1,
            gen_q: None,
            state: 1..1,
            slack: 1..2,
        };
        OpfProblem::from_parts(
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::zeros(2),
            0.0,
            DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            DVector::from_vec(vec![1.0]),
            0,
            vec![BoundRow {
                var: 0,
                slack: 1,
                orientation: -1.0,
                limit: 1.0,
            }],
            layout,
        )
        .unwrap()
    }

    #[test]
    fn dc_susceptance_rows_sum_to_zero() {
        for name in ["case3", "case5", "case118"] {
            let case = builtin_case(name).unwrap();
            let b = dc_susceptance_matrix(&case);
            for i in 0..b.nrows() {
                let s: f64 = b.row(i).iter().sum();
                assert!(s.abs() < 1e-9, "{name} row {i} sums to {s}");
            }
        }
    }

    #[test]
    fn dc_layout_and_dimensions_for_case3() {
        let case = builtin_case("case3").unwrap();
        let p = build_opf(&case, Formulation::Dc).unwrap();
        // 2 gens + 2 angles + 4 slacks; 3 balance + 4 bound rows
        assert_eq!(p.n_vars(), 8);
        assert_eq!(p.n_eq(), 7);
        assert_eq!(p.kkt_dim(), 15);
        assert_eq!(p.n_slacks(), 4);
        // cost mapping c2*base^2, c1*base, normalized by the leading scale
        // (for this case max(2 c2 b^2, c1 b) = 3000)
        assert!((p.cost_scale - 3000.0).abs() < 1e-9);
        assert!((p.quad[0] * p.cost_scale - 0.02 * 1e4).abs() < 1e-9);
        assert!((p.lin[0] * p.cost_scale - 20.0 * 100.0).abs() < 1e-9);
        assert!((p.constant * p.cost_scale - 150.0).abs() < 1e-9);
    }

    #[test]
    fn ac_layout_for_case3() {
        let case = builtin_case("case3").unwrap();
        let p = build_opf(&case, Formulation::Ac).unwrap();
        // 2 P + 2 Q + 3 V + 2*(4+3) slacks = 21 vars; 6 balance + 14 bound rows
        assert_eq!(p.n_vars(), 21);
        assert_eq!(p.n_eq(), 20);
        assert_eq!(p.n_slacks(), 14);
    }

    #[test]
    fn single_bus_case_has_unique_feasible_injection() {
        // 1 generator, 1 bus, 50 MW demand: the only balance solution is
        // P_G = 50 MW = 0.5 pu.
        let case = crate::caseio::parse_matpower(
            "mpc.baseMVA = 100;\n\
             mpc.bus = [1 3 50 0 0 0 1 1 0 230 1 1.1 0.9;];\n\
             mpc.gen = [1 0 0 30 -30 1 100 1 100 0;];\n\
             mpc.branch = [];\n\
             mpc.gencost = [2 0 0 3 0.01 10 0;];\n",
        );
        // empty branch matrix: bus count 1 means no angles and no network
        let case = case.unwrap();
        let p = build_opf(&case, Formulation::Dc).unwrap();
        assert_eq!(p.layout.n_state, 0);
        // balance row: P_g = 0.5
        let x = DVector::from_vec(vec![0.5, 1.0, 1.0]);
        let c = &p.eq * &x - &p.eq_rhs;
        assert!(c[0].abs() < 1e-15);
    }

    #[test]
    fn disconnected_network_is_singular() {
        let text = "mpc.baseMVA = 100;\n\
             mpc.bus = [1 3 0 0 0 0 1 1 0 230 1 1.1 0.9; 2 1 50 0 0 0 1 1 0 230 1 1.1 0.9;];\n\
             mpc.gen = [1 0 0 30 -30 1 100 1 100 0;];\n\
             mpc.branch = [];\n\
             mpc.gencost = [2 0 0 3 0.01 10 0;];\n";
        let case = crate::caseio::parse_matpower(text).unwrap();
        assert!(matches!(
            build_opf(&case, Formulation::Dc),
            Err(Error::Singular(_))
        ));
    }

    #[test]
    fn barrier_value_examples() {
        let p = tiny_qp();
        // all slacks 1 -> Phi = f
        let x = DVector::from_vec(vec![2.0, 1.0]);
        assert!((barrier_value(&p, &x, 3.0).unwrap() - 4.0).abs() < 1e-15);
        // single slack e, mu = 2, f = 0 -> Phi = -2
        let x = DVector::from_vec(vec![0.0, std::f64::consts::E]);
        assert!((barrier_value(&p, &x, 2.0).unwrap() + 2.0).abs() < 1e-12);
        // nonpositive slack is a domain error
        let x = DVector::from_vec(vec![0.0, 0.0]);
        assert!(matches!(
            barrier_value(&p, &x, 1.0),
            Err(Error::Domain(_))
        ));
    }

    #[test]
    fn barrier_matches_term_by_term_recomputation() {
        let case = builtin_case("case3").unwrap();
        let p = build_opf(&case, Formulation::Dc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..10 {
            let mut x = DVector::from_fn(p.n_vars(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
            for b in &p.bounds {
                x[b.slack] = 0.1 + rng.random::<f64>();
            }
            let mu = 0.5 + rng.random::<f64>();
            let direct = {
                let mut f = p.constant;
                for i in 0..p.n_vars() {
                    f += p.quad[i] * x[i] * x[i] + p.lin[i] * x[i];
                }
                let logs: f64 = p.bounds.iter().map(|b| x[b.slack].ln()).sum();
                f - mu * logs
            };
            assert!((barrier_value(&p, &x, mu).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn barrier_gradient_matches_finite_differences() {
        let case = builtin_case("case3").unwrap();
        let p = build_opf(&case, Formulation::Dc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mu = 0.7;
        for _ in 0..20 {
            let mut x = DVector::from_fn(p.n_vars(), |_, _| rng.random::<f64>() * 2.0 - 1.0);
            for b in &p.bounds {
                x[b.slack] = 0.3 + rng.random::<f64>();
            }
            // analytic grad of Phi: grad f with -mu/s on slack components
            let mut grad = p.gradient(&x);
            for b in &p.bounds {
                grad[b.slack] -= mu / x[b.slack];
            }
            for i in 0..p.n_vars() {
                let h = 1e-6 * x[i].abs().max(1.0);
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let fd = (barrier_value(&p, &xp, mu).unwrap()
                    - barrier_value(&p, &xm, mu).unwrap())
                    / (2.0 * h);
                let denom = grad[i].abs().max(1.0);
                assert!(
                    ((fd - grad[i]) / denom).abs() <= 1e-5,
                    "component {i}: fd {fd} vs {}",
                    grad[i]
                );
            }
        }
    }

    #[test]
    fn hessian_block_is_exactly_the_objective_curvature() {
        // With mu folded out (tiny mu, huge slacks) the H block is diag(2 quad).
        let p = tiny_qp();
        let x = DVector::from_vec(vec![5.0, 1e9]);
        let lambda = DVector::zeros(1);
        let k = kkt_assemble(&p, &x, &lambda, 1e-12).unwrap();
        assert!((k.h[(0, 0)] - 2.0).abs() < 1e-15);
        assert!(k.h[(1, 1)].abs() < 1e-20);
    }

    #[test]
    fn kkt_residuals_vanish_at_hand_derived_central_point() {
        // min x^2 s.t. x >= 1: central point at mu has
        // s = (sqrt(1 + 2 mu) - 1) / 2 = mu / (sqrt(1 + 2 mu) + 1),
        // x = 1 + s, lambda = -2x. The rationalized form avoids cancellation.
        let p = tiny_qp();
        for mu in [1e-8f64, 1e-9] {
            let s = mu / ((1.0 + 2.0 * mu).sqrt() + 1.0);
            let x = DVector::from_vec(vec![1.0 + s, s]);
            let lambda = DVector::from_vec(vec![-2.0 * (1.0 + s)]);
            let k = kkt_assemble(&p, &x, &lambda, mu).unwrap();
            assert!(k.r.amax() <= 1e-8, "r = {:?}", k.r);
            assert!(k.c.amax() <= 1e-8, "c = {:?}", k.c);
        }
    }

    #[test]
    fn kkt_matrix_is_symmetric_and_matches_finite_differences() {
        let case = builtin_case("case3").unwrap();
        let p = build_opf(&case, Formulation::Dc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut x = DVector::from_fn(p.n_vars(), |_, _| rng.random::<f64>() * 0.5 + 0.2);
        for b in &p.bounds {
            x[b.slack] = 0.4 + rng.random::<f64>();
        }
        let lambda = DVector::from_fn(p.n_eq(), |_, _| rng.random::<f64>() - 0.5);
        let mu = 0.3;
        let k = kkt_assemble(&p, &x, &lambda, mu).unwrap();

        // exact symmetry
        for i in 0..k.dim() {
            for j in 0..k.dim() {
                assert_eq!(k.m[(i, j)], k.m[(j, i)]);
            }
        }

        // finite differences of F(z) = [grad_x L; A x - b] wrt z = (x, lambda)
        let n = p.n_vars();
        let eval = |x: &DVector<f64>, lambda: &DVector<f64>| -> DVector<f64> {
            let mut r = p.gradient(x);
            for b in &p.bounds {
                r[b.slack] -= mu / x[b.slack];
            }
            r += p.eq.transpose() * lambda;
            let c = &p.eq * x - &p.eq_rhs;
            let mut out = DVector::zeros(k.dim());
            out.rows_mut(0, n).copy_from(&r);
            out.rows_mut(n, p.n_eq()).copy_from(&c);
            out
        };
        let mut max_rel = 0.0f64;
        for col in 0..k.dim() {
            let h = 1e-6;
            let (mut xp, mut lp) = (x.clone(), lambda.clone());
            let (mut xm, mut lm) = (x.clone(), lambda.clone());
            if col < n {
                xp[col] += h;
                xm[col] -= h;
            } else {
                lp[col - n] += h;
                lm[col - n] -= h;
            }
            let d = (eval(&xp, &lp) - eval(&xm, &lm)) / (2.0 * h);
            for row in 0..k.dim() {
                let denom = k.m[(row, col)].abs().max(1.0);
                max_rel = max_rel.max((d[row] - k.m[(row, col)]).abs() / denom);
            }
        }
        assert!(max_rel <= 1e-5, "max relative deviation {max_rel}");
    }

    #[test]
    fn condition_number_basics() {
        let id = DMatrix::<f64>::identity(7, 7);
        assert!((condition_number(&id).unwrap() - 1.0).abs() < 1e-12);
        let d = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 1000.0]));
        assert!((condition_number(&d).unwrap() - 1000.0).abs() < 1e-9);
        let empty = DMatrix::<f64>::zeros(0, 0);
        assert!(condition_number(&empty).is_err());
        let zero = DMatrix::<f64>::zeros(3, 3);
        assert_eq!(condition_number(&zero).unwrap(), f64::INFINITY);
    }

    #[test]
    fn condition_number_is_permutation_invariant() {
        let case = builtin_case("case3").unwrap();
        let p = build_opf(&case, Formulation::Dc).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let mut x = DVector::from_fn(p.n_vars(), |_, _| rng.random::<f64>() + 0.1);
        for b in &p.bounds {
            x[b.slack] = 0.2 + rng.random::<f64>();
        }
        let lambda = DVector::from_fn(p.n_eq(), |_, _| rng.random::<f64>());
        let k = kkt_assemble(&p, &x, &lambda, 0.5).unwrap();
        let kappa = condition_number(&k.m).unwrap();

        let dim = k.dim();
        let mut perm: Vec<usize> = (0..dim).collect();
        perm.shuffle(&mut rng);
        let mut pm = DMatrix::zeros(dim, dim);
        for (i, &pi) in perm.iter().enumerate() {
            for (j, &pj) in perm.iter().enumerate() {
                pm[(i, j)] = k.m[(pi, pj)];
            }
        }
        let kappa_p = condition_number(&pm).unwrap();
        assert!(
            ((kappa - kappa_p) / kappa).abs() < 1e-9,
            "{kappa} vs {kappa_p}"
        );
    }

    #[test]
    fn case118_power_flow_conditioning_magnitude() {
        let case = builtin_case("case118").unwrap();
        let b = dc_power_flow_matrix(&case);
        assert_eq!(b.nrows(), 117);
        let kappa = condition_number(&b).unwrap();
        assert!(
            kappa >= 1.7e3 && kappa <= 1.7e5,
            "kappa(B_red) = {kappa:.3e} outside one order of magnitude of 1.7e4"
        );
    }
}
