//! Exact empirical Wasserstein-1 distance and numeric evaluation of the
//! domain-adaptation and noisy-label generalization bounds.

use std::fmt::Write as _;

use crate::error::{contract, Result};
use crate::parallel::Execution;
use crate::tensor::Tensor;

/// Largest sample count accepted by [`wasserstein1_exact`].
pub const MAX_W1_SAMPLES: usize = 512;

/// Minimum-cost perfect matching on a square cost matrix (row-major).
///
/// Shortest augmenting paths with vertex potentials, `O(n^3)`. Returns the
/// column assigned to each row.
pub fn min_cost_assignment(n: usize, cost: &[f64]) -> Result<Vec<usize>> {
    if cost.len() != n * n {
        return Err(crate::Error::Shape {
            op: "min_cost_assignment",
            lhs: vec![n, n],
            rhs: vec![cost.len()],
        });
    }
    if cost.iter().any(|c| !c.is_finite()) {
        return Err(crate::Error::Domain {
            op: "min_cost_assignment",
            detail: "non-finite cost".into(),
        });
    }
    // 1-based arrays; index 0 is the virtual unmatched column.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; n + 1];
    let mut row_of = vec![0usize; n + 1];
    let mut way = vec![0usize; n + 1];
    for i in 1..=n {
        row_of[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; n + 1];
        let mut used = vec![false; n + 1];
        loop {
            used[j0] = true;
            let i0 = row_of[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=n {
                if used[j] {
                    continue;
                }
                let cur = cost[(i0 - 1) * n + (j - 1)] - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=n {
                if used[j] {
                    u[row_of[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if row_of[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            row_of[j0] = row_of[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    let mut assignment = vec![0; n];
    for j in 1..=n {
        assignment[row_of[j] - 1] = j - 1;
    }
    Ok(assignment)
}

/// Euclidean cost matrix between the rows of `x` and `y`.
pub fn cost_matrix(x: &Tensor, y: &Tensor, exec: Execution) -> Result<Vec<f64>> {
    x.require_rank2("cost_matrix")?;
    y.require_rank2("cost_matrix")?;
    if x.cols() != y.cols() {
        return Err(crate::Error::Shape {
            op: "cost_matrix",
            lhs: x.shape().to_vec(),
            rhs: y.shape().to_vec(),
        });
    }
    let m = y.rows();
    let rows = exec.map(x.rows(), |i| {
        let xi = x.row_slice(i);
        (0..m)
            .map(|j| {
                xi.iter()
                    .zip(y.row_slice(j))
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
            })
            .collect::<Vec<f64>>()
    });
    Ok(rows.concat())
}

/// `(1/n) min_pi sum_i ||x_i - y_pi(i)||_2` over equal-size samples.
pub fn wasserstein1_exact(x: &Tensor, y: &Tensor) -> Result<f64> {
    wasserstein1_with(x, y, Execution::default())
}

pub fn wasserstein1_with(x: &Tensor, y: &Tensor, exec: Execution) -> Result<f64> {
    x.require_rank2("wasserstein1")?;
    y.require_rank2("wasserstein1")?;
    let n = x.rows();
    if n != y.rows() {
        return contract(format!(
            "wasserstein1 needs equal sample counts, got {n} and {}; subsample first",
            y.rows()
        ));
    }
    if n == 0 || n > MAX_W1_SAMPLES {
        return contract(format!("wasserstein1 needs 1..={MAX_W1_SAMPLES} samples, got {n}"));
    }
    let cost = cost_matrix(x, y, exec)?;
    let assignment = min_cost_assignment(n, &cost)?;
    let total: f64 = assignment.iter().enumerate().map(|(i, &j)| cost[i * n + j]).sum();
    Ok(total / n as f64)
}

/// Inputs of the target-risk bound for adaptation with few labeled target
/// samples.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundInputs {
    pub source_risk: f64,
    pub target_risk: f64,
    pub n_source: usize,
    pub n_target: usize,
    pub pdim: usize,
    pub delta: f64,
    pub lipschitz_product: f64,
    pub w1: f64,
    /// Joint optimal risk; needs the true labeling functions, so it is
    /// never observable and must be supplied.
    pub omega: f64,
    /// Joint risk term of the looser single-domain line.
    pub omega_prime: f64,
}

impl Default for BoundInputs {
    fn default() -> Self {
        Self {
            source_risk: 0.0,
            target_risk: 0.0,
            n_source: 1000,
            n_target: 50,
            pdim: 10,
            delta: 0.05,
            lipschitz_product: 1.0,
            w1: 0.0,
            omega: 0.0,
            omega_prime: 0.0,
        }
    }
}

/// Additive terms of the bound, in summation order.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundTerms {
    pub target: f64,
    pub source: f64,
    pub complexity: f64,
    pub transfer: f64,
    pub omega: f64,
}

impl BoundTerms {
    pub fn sum(&self) -> f64 {
        self.target + self.source + self.complexity + self.transfer + self.omega
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BoundReport {
    pub inputs: BoundInputs,
    /// `sqrt((4d/N_S) log(e N_S / d) + (1/N_S) log(1/delta))`.
    pub complexity: f64,
    pub terms: BoundTerms,
    pub total: f64,
    /// `eps_S + complexity + 2 C W1 + omega'`.
    pub loose_total: f64,
    /// Set when `N_T' > N_S`, which the bound assumes away.
    pub target_exceeds_source: bool,
}

/// `sqrt((4d/N) log(e N / d) + (1/N) log(1/delta))`.
pub fn complexity_term(n: usize, pdim: usize, delta: f64) -> f64 {
    let n = n as f64;
    let d = pdim as f64;
    ((4.0 * d / n) * (std::f64::consts::E * n / d).ln() + (1.0 / n) * (1.0 / delta).ln()).sqrt()
}

fn nonneg(name: &str, v: f64) -> Result<()> {
    if !(v >= 0.0) || !v.is_finite() {
        return contract(format!("{name} must be finite and >= 0, got {v}"));
    }
    Ok(())
}

pub fn theorem1_bound(inputs: &BoundInputs) -> Result<BoundReport> {
    let i = inputs;
    if !(i.delta > 0.0 && i.delta < 1.0) {
        return contract(format!("confidence delta must lie in (0, 1), got {}", i.delta));
    }
    if i.n_source == 0 || i.n_target == 0 || i.pdim == 0 {
        return contract("sample counts and pseudo-dimension must be >= 1");
    }
    for (name, v) in [
        ("source_risk", i.source_risk),
        ("target_risk", i.target_risk),
        ("lipschitz_product", i.lipschitz_product),
        ("w1", i.w1),
        ("omega", i.omega),
        ("omega_prime", i.omega_prime),
    ] {
        nonneg(name, v)?;
    }
    let ns = i.n_source as f64;
    let nt = i.n_target as f64;
    let wt = nt / (ns + nt);
    let ws = ns / (ns + nt);
    let complexity = complexity_term(i.n_source, i.pdim, i.delta);
    let transfer = 2.0 * i.lipschitz_product * i.w1;
    let terms = BoundTerms {
        target: wt * i.target_risk,
        source: ws * i.source_risk,
        complexity: ws * complexity,
        transfer: ws * transfer,
        omega: ws * i.omega,
    };
    Ok(BoundReport {
        inputs: i.clone(),
        complexity,
        total: terms.sum(),
        terms,
        loose_total: i.source_risk + complexity + transfer + i.omega_prime,
        target_exceeds_source: i.n_target > i.n_source,
    })
}

impl BoundReport {
    pub fn to_key_value(&self) -> String {
        let i = &self.inputs;
        let mut s = String::new();
        let rows: [(&str, String); 19] = [
            ("empirical_source_risk", i.source_risk.to_string()),
            ("empirical_target_risk", i.target_risk.to_string()),
            ("n_source", i.n_source.to_string()),
            ("n_target", i.n_target.to_string()),
            ("pdim", i.pdim.to_string()),
            ("delta", i.delta.to_string()),
            ("lipschitz_product", i.lipschitz_product.to_string()),
            ("w1", i.w1.to_string()),
            ("omega", i.omega.to_string()),
            ("omega_prime", i.omega_prime.to_string()),
            ("complexity", self.complexity.to_string()),
            ("term_target", self.terms.target.to_string()),
            ("term_source", self.terms.source.to_string()),
            ("term_complexity", self.terms.complexity.to_string()),
            ("term_transfer", self.terms.transfer.to_string()),
            ("term_omega", self.terms.omega.to_string()),
            ("total", self.total.to_string()),
            ("loose_total", self.loose_total.to_string()),
            ("target_exceeds_source", self.target_exceeds_source.to_string()),
        ];
        for (k, v) in rows {
            let _ = writeln!(s, "{k}={v}");
        }
        s
    }

    /// Header line and one data line with the same keys as
    /// [`BoundReport::to_key_value`].
    pub fn to_csv(&self) -> String {
        let kv = self.to_key_value();
        let (keys, values): (Vec<&str>, Vec<&str>) = kv
            .lines()
            .filter_map(|l| l.split_once('='))
            .unzip();
        format!("{}\n{}\n", keys.join(","), values.join(","))
    }
}

/// Generalization bound under label noise, with the unspecified big-O
/// constant fixed at 1 and reported as its own term.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NoiseBound {
    /// `2 R_n / sqrt(lambda)`.
    pub rademacher: f64,
    /// `sqrt(log(1/delta) / (2n))`.
    pub confidence: f64,
    /// `(eta + eps) / margin`, scale this to change the constant.
    pub noise: f64,
    pub total: f64,
}

pub fn theorem3_bound(
    rademacher: f64,
    lambda: f64,
    n: usize,
    delta: f64,
    eta: f64,
    eps: f64,
    margin: f64,
) -> Result<NoiseBound> {
    if !(lambda > 0.0) || !(margin > 0.0) {
        return contract(format!("lambda and margin must be > 0, got {lambda} and {margin}"));
    }
    if !(delta > 0.0 && delta < 1.0) {
        return contract(format!("confidence delta must lie in (0, 1), got {delta}"));
    }
    if n == 0 {
        return contract("sample count must be >= 1");
    }
    let r = 2.0 * rademacher / lambda.sqrt();
    let c = ((1.0 / delta).ln() / (2.0 * n as f64)).sqrt();
    let o = (eta + eps) / margin;
    Ok(NoiseBound {
        rademacher: r,
        confidence: c,
        noise: o,
        total: r + c + o,
    })
}
