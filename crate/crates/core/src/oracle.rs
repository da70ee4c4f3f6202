//! Exact verification of the dual-discriminator GAN objective on finite
//! outcome spaces.
//!
//! A [`DiscreteJoint`] holds a data joint `P_dd(x, y)` and generator
//! conditionals `P_g(x | y)`. From these the module evaluates the optimal
//! discriminators in closed form, the four-term objective, Jensen-Shannon
//! divergences and a brute-force best-response generator. Everything is
//! plain `f64` arithmetic with `0 * log 0 = 0`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OracleError {
    #[error("invalid distribution: {0}")]
    Invalid(String),
    #[error("instance too large for brute force: m*n = {0} > 9")]
    TooLarge(usize),
}

const SUM_TOL: f64 = 1e-9;

/// `-4 log 2`, the objective at the matched-distribution equilibrium.
pub fn equilibrium_value() -> f64 {
    -4.0 * std::f64::consts::LN_2
}

/// `a * log(b)` with `0 * log(anything) = 0`.
fn xlogy(a: f64, b: f64) -> f64 {
    if a == 0.0 {
        0.0
    } else {
        a * b.ln()
    }
}

fn check_distribution(what: &str, p: &[f64]) -> Result<(), OracleError> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(OracleError::Invalid(format!(
            "{what} has negative or non-finite entries"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOL {
        return Err(OracleError::Invalid(format!("{what} sums to {s}")));
    }
    Ok(())
}

/// Data joint plus generator conditionals over `m` outcomes of x and `n` of y.
///
/// Tables are row-major `m x n`, indexed `[x * n + y]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscreteJoint {
    m: usize,
    n: usize,
    p_dd: Vec<f64>,
    p_g_cond: Vec<f64>,
    p_d_y: Vec<f64>,
}

impl DiscreteJoint {
    /// Validates both tables; `P_d(y)` is derived from `P_dd`.
    pub fn new(
        m: usize,
        n: usize,
        p_dd: Vec<f64>,
        p_g_cond: Vec<f64>,
    ) -> Result<Self, OracleError> {
        if m == 0 || n == 0 || p_dd.len() != m * n || p_g_cond.len() != m * n {
            return Err(OracleError::Invalid(format!(
                "tables must be {m}x{n} and non-empty"
            )));
        }
        check_distribution("P_dd", &p_dd)?;
        for y in 0..n {
            let col: Vec<f64> = (0..m).map(|x| p_g_cond[x * n + y]).collect();
            check_distribution(&format!("P_g(. | y={y})"), &col)?;
        }
        let p_d_y = (0..n)
            .map(|y| (0..m).map(|x| p_dd[x * n + y]).sum())
            .collect();
        Ok(Self {
            m,
            n,
            p_dd,
            p_g_cond,
            p_d_y,
        })
    }

    /// Seeded random instance. Some cells are zeroed to exercise exclusions.
    pub fn random(rng: &mut impl Rng, max_m: usize, max_n: usize) -> Self {
        let m = rng.random_range(1..=max_m);
        let n = rng.random_range(1..=max_n);
        let mut draw = |len: usize| -> Vec<f64> {
            loop {
                let v: Vec<f64> = (0..len)
                    .map(|_| {
                        if rng.random_bool(0.2) {
                            0.0
                        } else {
                            rng.random::<f64>()
                        }
                    })
                    .collect();
                let s: f64 = v.iter().sum();
                if s > 0.0 {
                    return v.into_iter().map(|x| x / s).collect();
                }
            }
        };
        let p_dd = draw(m * n);
        let mut p_g_cond = vec![0.0; m * n];
        for y in 0..n {
            for (x, v) in draw(m).into_iter().enumerate() {
                p_g_cond[x * n + y] = v;
            }
        }
        Self::new(m, n, p_dd, p_g_cond).expect("normalized by construction")
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m, self.n)
    }

    pub fn p_dd(&self) -> &[f64] {
        &self.p_dd
    }

    pub fn p_g_cond(&self) -> &[f64] {
        &self.p_g_cond
    }

    pub fn p_d_y(&self) -> &[f64] {
        &self.p_d_y
    }

    /// `P_gd(x, y) = P_g(x | y) * P_d(y)`.
    pub fn p_gd(&self) -> Vec<f64> {
        (0..self.m * self.n)
            .map(|i| self.p_g_cond[i] * self.p_d_y[i % self.n])
            .collect()
    }

    fn marginal_x(&self, joint: &[f64]) -> Vec<f64> {
        (0..self.m)
            .map(|x| joint[x * self.n..(x + 1) * self.n].iter().sum())
            .collect()
    }

    pub fn p_d_x(&self) -> Vec<f64> {
        self.marginal_x(&self.p_dd)
    }

    pub fn p_g_x(&self) -> Vec<f64> {
        self.marginal_x(&self.p_gd())
    }

    /// `P_d(x | y)`, or `None` for columns with `P_d(y) = 0`.
    pub fn p_d_cond(&self) -> Vec<Option<f64>> {
        (0..self.m * self.n)
            .map(|i| {
                let py = self.p_d_y[i % self.n];
                (py > 0.0).then(|| self.p_dd[i] / py)
            })
            .collect()
    }

    fn with_generator(&self, p_g_cond: Vec<f64>) -> Self {
        Self {
            p_g_cond,
            ..self.clone()
        }
    }
}

/// Discriminator values per outcome; `None` marks excluded points where
/// both the data and generator mass vanish.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorTable {
    pub values: Vec<Option<f64>>,
}

impl DiscriminatorTable {
    pub fn constant(len: usize, v: f64) -> Self {
        Self {
            values: vec![Some(v); len],
        }
    }

    pub fn excluded(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }
}

fn ratio_table(real: &[f64], fake: &[f64]) -> DiscriminatorTable {
    let values = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| (r + f > 0.0).then(|| r / (r + f)))
        .collect();
    DiscriminatorTable { values }
}

/// `D*_xy = P_dd / (P_dd + P_gd)`.
pub fn optimal_d_xy(j: &DiscreteJoint) -> DiscriminatorTable {
    ratio_table(&j.p_dd, &j.p_gd())
}

/// `D*_x = P_d(x) / (P_d(x) + P_g(x))` with the generator marginal over y.
pub fn optimal_d_x(j: &DiscreteJoint) -> DiscriminatorTable {
    ratio_table(&j.p_d_x(), &j.p_g_x())
}

fn payoff(real: &[f64], fake: &[f64], d: &DiscriminatorTable) -> f64 {
    real.iter()
        .zip(fake)
        .zip(&d.values)
        .map(|((&r, &f), v)| match v {
            Some(d) => xlogy(r, *d) + xlogy(f, 1.0 - d),
            None => 0.0,
        })
        .sum()
}

/// Exact four-term expectation
/// `E_dd log D_xy + E_gd log(1 - D_xy) + E_d(x) log D_x + E_g(x) log(1 - D_x)`.
pub fn dual_objective(
    j: &DiscreteJoint,
    d_xy: &DiscriminatorTable,
    d_x: &DiscriminatorTable,
) -> f64 {
    payoff(&j.p_dd, &j.p_gd(), d_xy) + payoff(&j.p_d_x(), &j.p_g_x(), d_x)
}

/// Jensen-Shannon divergence in nats.
pub fn jsd(p: &[f64], q: &[f64]) -> f64 {
    assert_eq!(p.len(), q.len(), "jsd needs equal support sizes");
    p.iter()
        .zip(q)
        .map(|(&a, &b)| {
            let m = 0.5 * (a + b);
            // Summed in a fixed order so that jsd(p, q) == jsd(q, p) bitwise.
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            0.5 * (xlogy(lo, lo / m) + xlogy(hi, hi / m))
        })
        .sum()
}

/// Maximizes `a log d + b log(1 - d)` over `d in (0, 1)` by golden-section
/// search. Comparisons use the difference of the two payoffs written with
/// `ln_1p`, which keeps the sign reliable near the flat maximum.
pub fn golden_section_max(a: f64, b: f64) -> f64 {
    let better = |d1: f64, d2: f64| -> bool {
        let diff = a * ((d1 - d2) / d2).ln_1p() + b * ((d2 - d1) / (1.0 - d2)).ln_1p();
        diff > 0.0
    };
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut c = hi - inv_phi * (hi - lo);
    let mut d = lo + inv_phi * (hi - lo);
    while hi - lo > 1e-14 {
        if better(c, d) {
            hi = d;
            d = c;
            c = hi - inv_phi * (hi - lo);
        } else {
            lo = c;
            c = d;
            d = lo + inv_phi * (hi - lo);
        }
    }
    0.5 * (lo + hi)
}

fn numeric_table(real: &[f64], fake: &[f64]) -> DiscriminatorTable {
    let values = real
        .iter()
        .zip(fake)
        .map(|(&r, &f)| (r + f > 0.0).then(|| golden_section_max(r, f)))
        .collect();
    DiscriminatorTable { values }
}

/// Per-point numeric maximizers of the discriminator payoffs, `(D_xy, D_x)`.
pub fn numeric_optimal_ds(j: &DiscreteJoint) -> (DiscriminatorTable, DiscriminatorTable) {
    (
        numeric_table(&j.p_dd, &j.p_gd()),
        numeric_table(&j.p_d_x(), &j.p_g_x()),
    )
}

/// Largest absolute difference over points present in both tables, or
/// infinity if the exclusion patterns differ.
pub fn max_table_diff(a: &DiscriminatorTable, b: &DiscriminatorTable) -> f64 {
    a.values
        .iter()
        .zip(&b.values)
        .map(|(x, y)| match (x, y) {
            (Some(x), Some(y)) => (x - y).abs(),
            (None, None) => 0.0,
            _ => f64::INFINITY,
        })
        .fold(0.0, f64::max)
}

/// `-4 log 2 + 2 JSD(P_dd || P_gd) + 2 JSD(P_d(x) || P_g(x))`.
pub fn decomposition(j: &DiscreteJoint) -> f64 {
    equilibrium_value() + 2.0 * jsd(&j.p_dd, &j.p_gd()) + 2.0 * jsd(&j.p_d_x(), &j.p_g_x())
}

/// Value of the objective once both discriminators play their best response.
pub fn value_at_optimum(j: &DiscreteJoint) -> f64 {
    dual_objective(j, &optimal_d_xy(j), &optimal_d_x(j))
}

#[derive(Debug, Clone)]
pub struct BestResponse {
    pub p_g_cond: Vec<f64>,
    pub value: f64,
    pub jsd_joint: f64,
    pub jsd_marginal: f64,
    /// `max |P_g(x|y) - P_d(x|y)|` over columns with `P_d(y) > 0`.
    pub dev_from_conditional: f64,
    /// `max |P_g(x|y) - P_d(x)|` over columns with `P_d(y) > 0`.
    pub dev_from_marginal: f64,
}

fn simplex_grid(m: usize, resolution: usize) -> Vec<Vec<f64>> {
    fn rec(left: usize, parts: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if parts == 1 {
            cur.push(left);
            out.push(cur.clone());
            cur.pop();
            return;
        }
        for k in 0..=left {
            cur.push(k);
            rec(left - k, parts - 1, cur, out);
            cur.pop();
        }
    }
    let mut raw = Vec::new();
    rec(resolution, m, &mut Vec::new(), &mut raw);
    raw.into_iter()
        .map(|c| {
            c.into_iter()
                .map(|k| k as f64 / resolution as f64)
                .collect()
        })
        .collect()
}

/// Brute-force minimizer of the objective over generator conditionals on a
/// simplex grid with step `1 / resolution`, each candidate evaluated at the
/// optimal discriminators. The generator tables in `j` are ignored.
pub fn best_response_generator(
    j: &DiscreteJoint,
    resolution: usize,
) -> Result<BestResponse, OracleError> {
    let (m, n) = j.dims();
    if m * n > 9 {
        return Err(OracleError::TooLarge(m * n));
    }
    if resolution == 0 {
        return Err(OracleError::Invalid("resolution must be positive".into()));
    }
    let grid = simplex_grid(m, resolution);
    let mut choice = vec![0usize; n];
    let mut table = vec![0.0; m * n];
    let mut best: Option<(f64, Vec<f64>)> = None;
    loop {
        for (y, &c) in choice.iter().enumerate() {
            for x in 0..m {
                table[x * n + y] = grid[c][x];
            }
        }
        let value = value_at_optimum(&j.with_generator(table.clone()));
        if best.as_ref().is_none_or(|(v, _)| value < *v) {
            best = Some((value, table.clone()));
        }
        // Odometer over one grid point per column.
        let mut k = 0;
        while k < n {
            choice[k] += 1;
            if choice[k] < grid.len() {
                break;
            }
            choice[k] = 0;
            k += 1;
        }
        if k == n {
            break;
        }
    }
    let (value, p_g_cond) = best.expect("grid is non-empty");
    let g = j.with_generator(p_g_cond.clone());
    let cond = j.p_d_cond();
    let p_d_x = j.p_d_x();
    let mut dev_c: f64 = 0.0;
    let mut dev_m: f64 = 0.0;
    for (i, c) in cond.iter().enumerate() {
        if let Some(c) = c {
            dev_c = dev_c.max((p_g_cond[i] - c).abs());
            dev_m = dev_m.max((p_g_cond[i] - p_d_x[i / n]).abs());
        }
    }
    Ok(BestResponse {
        jsd_joint: jsd(&g.p_dd, &g.p_gd()),
        jsd_marginal: jsd(&g.p_d_x(), &g.p_g_x()),
        p_g_cond,
        value,
        dev_from_conditional: dev_c,
        dev_from_marginal: dev_m,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: &'static str,
    pub worst: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Debug, Clone)]
pub struct MathReport {
    pub instances: usize,
    pub excluded_points: usize,
    pub checks: Vec<CheckResult>,
}

impl MathReport {
    pub fn all_passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }
}

impl std::fmt::Display for MathReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "{} instances, {} excluded zero-mass points",
            self.instances, self.excluded_points
        )?;
        for c in &self.checks {
            let tag = if c.passed { "PASS" } else { "FAIL" };
            writeln!(
                f,
                "{tag} {:<28} worst {:.3e} (tol {:.0e})",
                c.name, c.worst, c.tolerance
            )?;
        }
        Ok(())
    }
}

/// Runs every identity on `instances` seeded random joints with `m, n <= 4`.
pub fn verify_math(instances: usize, seed: u64) -> MathReport {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = [0.0f64; 6];
    let mut excluded = 0;
    for _ in 0..instances {
        let j = DiscreteJoint::random(&mut rng, 4, 4);
        let (dxy, dx) = (optimal_d_xy(&j), optimal_d_x(&j));
        excluded += dxy.excluded() + dx.excluded();
        let (nxy, nx) = numeric_optimal_ds(&j);
        worst[0] = worst[0].max(max_table_diff(&dxy, &nxy));
        worst[1] = worst[1].max(max_table_diff(&dx, &nx));
        let value = dual_objective(&j, &dxy, &dx);
        worst[2] = worst[2].max((value - decomposition(&j)).abs());
        worst[3] = worst[3].max(perturbation_gain(&j, &dxy, &dx, 1e-3));
        let matched = j.with_generator(matched_generator(&j));
        worst[4] = worst[4].max((value_at_optimum(&matched) - equilibrium_value()).abs());
        let (p, q) = (j.p_dd(), j.p_gd());
        let (a, b) = (jsd(p, &q), jsd(&q, p));
        let out_of_range = if (0.0..=std::f64::consts::LN_2 + 1e-15).contains(&a) {
            0.0
        } else {
            1.0
        };
        worst[5] = worst[5].max((a - b).abs() + out_of_range);
    }
    let mk = |name, worst: f64, tolerance: f64| CheckResult {
        name,
        worst,
        tolerance,
        passed: worst <= tolerance,
    };
    MathReport {
        instances,
        excluded_points: excluded,
        checks: vec![
            mk("optimal D_xy vs numeric", worst[0], 1e-8),
            mk("optimal D_x vs numeric", worst[1], 1e-8),
            mk("JSD decomposition", worst[2], 1e-10),
            mk("D* is a local maximum", worst[3], 0.0),
            mk("matched value -4 log 2", worst[4], 1e-12),
            mk("JSD symmetric and bounded", worst[5], 0.0),
        ],
    }
}

/// Generator conditionals equal to `P_d(x | y)` (uniform on empty columns).
pub fn matched_generator(j: &DiscreteJoint) -> Vec<f64> {
    let (m, _) = j.dims();
    j.p_d_cond()
        .into_iter()
        .map(|c| c.unwrap_or(1.0 / m as f64))
        .collect()
}

/// Largest objective increase from moving any single optimal discriminator
/// entry by `+-step` (clamped inside the open interval). Non-positive means
/// the closed forms are local maxima.
pub fn perturbation_gain(
    j: &DiscreteJoint,
    dxy: &DiscriminatorTable,
    dx: &DiscriminatorTable,
    step: f64,
) -> f64 {
    let base = dual_objective(j, dxy, dx);
    let mut gain: f64 = f64::NEG_INFINITY;
    let nudge = |v: f64, s: f64| (v + s).clamp(1e-12, 1.0 - 1e-12);
    for which in 0..2 {
        let table = if which == 0 { dxy } else { dx };
        for i in 0..table.values.len() {
            let Some(v) = table.values[i] else { continue };
            for s in [-step, step] {
                let mut t = table.clone();
                t.values[i] = Some(nudge(v, s));
                let value = if which == 0 {
                    dual_objective(j, &t, dx)
                } else {
                    dual_objective(j, dxy, &t)
                };
                gain = gain.max(value - base);
            }
        }
    }
    gain.max(0.0)
}
