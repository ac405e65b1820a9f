//! Sequential line-outage detection and identification.
//!
//! For every non-islanding line ℓ the detector holds a hypothesis pair over
//! the observed angle increments: under the null the increments are
//! 𝒩(0, Σ₀) with Σ₀ = σ²Δt(JᵀJ)⁻¹ of the intact network, under scenario ℓ
//! they are 𝒩(0, Σ_ℓ) built from the line-removed network's Jacobian — both
//! marginalized to the observed non-reference buses. Each scenario keeps a
//! CUSUM-form statistic
//!
//! ```text
//! W_{ℓ,k} = max(0, W_{ℓ,k−1} + log f_ℓ(Δθ_k) − log f_0(Δθ_k))
//! ```
//!
//! and the detector stops at D = inf{k ≥ 1 : max_ℓ W_{ℓ,k} ≥ c} with
//! c = ln(ARL₀ · p), where p is the installed sensor count. At stopping time
//! the top three scenarios by W (ties broken by ascending line index) are the
//! identification candidates.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::jacobian::{angle_covariance, jacobian_full, JacobianError, OperatingPoint};
use crate::netmodel::{bridge_lines, build_ybus, remove_line, Network};
use crate::placement::Placement;

/// Diagonal ridge added to every covariance before factorization.
pub const RIDGE: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum DetectionError {
    #[error("placement observes no non-reference bus; the detector needs at least one observed angle")]
    NoObservedBuses,
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
    #[error("covariance factorization failed for the no-outage hypothesis")]
    NullFactorization,
}

/// One zero-mean Gaussian hypothesis: the (unridged) marginal covariance plus
/// the precomputed inverse and log-determinant of its ridged version.
#[derive(Debug, Clone)]
struct Gaussian {
    cov: DMatrix<f64>,
    inv: DMatrix<f64>,
    logdet: f64,
}

impl Gaussian {
    fn new(cov: DMatrix<f64>) -> Option<Gaussian> {
        let n = cov.nrows();
        let mut ridged = cov.clone();
        for i in 0..n {
            ridged[(i, i)] += RIDGE;
        }
        let chol = Cholesky::new(ridged)?;
        let logdet = 2.0 * chol.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let inv = chol.inverse();
        Some(Gaussian { cov, inv, logdet })
    }

    /// xᵀ Σ⁻¹ x with a fixed accumulation order.
    fn quad(&self, x: &DVector<f64>) -> f64 {
        let n = x.nrows();
        let mut acc = 0.0;
        for i in 0..n {
            let mut row = 0.0;
            for j in 0..n {
                row += self.inv[(i, j)] * x[j];
            }
            acc += x[i] * row;
        }
        acc
    }
}

/// Precomputed hypothesis bank for one (network, placement) pair. Immutable
/// and shareable across monitoring runs.
#[derive(Debug, Clone)]
pub struct ScenarioBank {
    lines: Vec<usize>,
    scenarios: Vec<Gaussian>,
    null: Gaussian,
    dropped: Vec<usize>,
    observed: Vec<usize>,
}

impl ScenarioBank {
    /// Number of outage scenarios (may be zero when every line is a bridge).
    pub fn len(&self) -> usize {
        self.scenarios.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scenarios.is_empty()
    }

    /// Branch indices monitored, in ascending order.
    pub fn lines(&self) -> &[usize] {
        &self.lines
    }

    /// Branch indices dropped because their post-outage covariance could not
    /// be built (singular Jacobian or failed factorization).
    pub fn dropped(&self) -> &[usize] {
        &self.dropped
    }

    /// Observed non-reference bus indices (into the network bus list),
    /// ascending.
    pub fn observed(&self) -> &[usize] {
        &self.observed
    }

    /// Dimension of the observed increment vectors.
    pub fn dimension(&self) -> usize {
        self.observed.len()
    }

    /// Marginal no-outage covariance (without the ridge).
    pub fn null_covariance(&self) -> &DMatrix<f64> {
        &self.null.cov
    }

    /// Marginal covariance of scenario `i` (without the ridge).
    pub fn scenario_covariance(&self, i: usize) -> &DMatrix<f64> {
        &self.scenarios[i].cov
    }

    /// Branch index behind scenario `i`.
    pub fn scenario_line(&self, i: usize) -> usize {
        self.lines[i]
    }

    /// Assemble a bank directly from marginal covariances (test support).
    #[cfg(test)]
    pub(crate) fn from_marginals(
        lines: Vec<usize>,
        scenario_covs: Vec<DMatrix<f64>>,
        null_cov: DMatrix<f64>,
        observed: Vec<usize>,
    ) -> Option<ScenarioBank> {
        assert_eq!(lines.len(), scenario_covs.len());
        let null = Gaussian::new(null_cov)?;
        let mut scenarios = Vec::with_capacity(scenario_covs.len());
        for cov in scenario_covs {
            scenarios.push(Gaussian::new(cov)?);
        }
        Some(ScenarioBank {
            lines,
            scenarios,
            null,
            dropped: Vec::new(),
            observed,
        })
    }
}

/// Per-scenario CUSUM statistics at sample `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct GlrState {
    pub w: Vec<f64>,
    pub k: usize,
    pub threshold: f64,
}

impl GlrState {
    pub fn new(bank: &ScenarioBank, threshold: f64) -> Self {
        GlrState {
            w: vec![0.0; bank.len()],
            k: 0,
            threshold,
        }
    }

    /// True when max_ℓ W ≥ c (triggering at equality). Always false for an
    /// empty bank.
    pub fn triggered(&self) -> bool {
        self.w.iter().any(|&w| w >= self.threshold)
    }
}

/// Outcome of one monitored run.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionResult {
    pub detected: bool,
    /// 1-based sample index of the alarm, `None` on a miss.
    pub d: Option<usize>,
    /// Up to three branch indices ordered by descending W, ties by ascending
    /// branch index.
    pub top3: Vec<usize>,
    /// Per-scenario statistics (bank order) at stopping or horizon time.
    pub final_w: Vec<f64>,
}

/// Build the hypothesis bank for `placement`: the null covariance from the
/// intact network plus one scenario per non-bridge in-service line, each
/// marginalized to the observed non-reference buses. Bridge lines are
/// excluded outright (their outage disconnects the network); lines whose
/// post-outage covariance cannot be built are dropped and recorded.
pub fn build_scenarios(
    net: &Network,
    base: &OperatingPoint,
    placement: &Placement,
    sigma: f64,
    dt: f64,
) -> Result<ScenarioBank, DetectionError> {
    assert_eq!(placement.len(), net.n_buses(), "placement length must match network");
    let ref_idx = net.reference_index();
    let observed: Vec<usize> = placement
        .observed_indices()
        .into_iter()
        .filter(|&i| i != ref_idx)
        .collect();
    if observed.is_empty() {
        return Err(DetectionError::NoObservedBuses);
    }
    // Row positions of the observed buses inside the reference-deleted
    // covariance (whose rows follow ascending bus index with the reference
    // skipped).
    let rows: Vec<usize> = observed
        .iter()
        .map(|&i| if i > ref_idx { i - 1 } else { i })
        .collect();
    let marginal = |full: &DMatrix<f64>| -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), rows.len(), |r, c| full[(rows[r], rows[c])])
    };

    let ybus = build_ybus(net);
    let j0 = jacobian_full(&ybus, base, net.reference);
    let c0 = angle_covariance(&j0, sigma, dt)?;
    let null = Gaussian::new(marginal(&c0.matrix)).ok_or(DetectionError::NullFactorization)?;

    let bridges = bridge_lines(net);
    let mut lines = Vec::new();
    let mut scenarios = Vec::new();
    let mut dropped = Vec::new();
    for line in net.in_service_indices() {
        if bridges.binary_search(&line).is_ok() {
            continue;
        }
        let reduced = remove_line(net, line).expect("line is in service");
        let yb = build_ybus(&reduced);
        let j = jacobian_full(&yb, base, net.reference);
        match angle_covariance(&j, sigma, dt) {
            Err(JacobianError::Singular { .. }) => dropped.push(line),
            Ok(cov) => match Gaussian::new(marginal(&cov.matrix)) {
                Some(g) => {
                    lines.push(line);
                    scenarios.push(g);
                }
                None => dropped.push(line),
            },
        }
    }
    Ok(ScenarioBank {
        lines,
        scenarios,
        null,
        dropped,
        observed,
    })
}

fn llr_given_null_quad(bank: &ScenarioBank, scenario: usize, x: &DVector<f64>, q0: f64) -> f64 {
    let g = &bank.scenarios[scenario];
    -0.5 * ((g.logdet - bank.null.logdet) + (g.quad(x) - q0))
}

/// log f_ℓ(Δθ) − log f_0(Δθ) for the ridged hypothesis densities.
pub fn llr_increment(bank: &ScenarioBank, scenario: usize, dtheta_obs: &DVector<f64>) -> f64 {
    assert_eq!(dtheta_obs.nrows(), bank.dimension(), "increment dimension mismatch");
    let q0 = bank.null.quad(dtheta_obs);
    llr_given_null_quad(bank, scenario, dtheta_obs, q0)
}

/// One CUSUM step: W_ℓ ← max(0, W_ℓ + llr_ℓ(Δθ)) for every scenario, k + 1.
pub fn update(state: &GlrState, bank: &ScenarioBank, dtheta_obs: &DVector<f64>) -> GlrState {
    assert_eq!(state.w.len(), bank.len(), "state and bank sizes must agree");
    assert_eq!(dtheta_obs.nrows(), bank.dimension(), "increment dimension mismatch");
    let q0 = bank.null.quad(dtheta_obs);
    let w = state
        .w
        .iter()
        .enumerate()
        .map(|(i, &w)| (w + llr_given_null_quad(bank, i, dtheta_obs, q0)).max(0.0))
        .collect();
    GlrState {
        w,
        k: state.k + 1,
        threshold: state.threshold,
    }
}

/// Alarm threshold c = ln(ARL₀ · p) for `p` installed sensors.
pub fn threshold(arl0: f64, p: usize) -> f64 {
    assert!(arl0 > 0.0, "ARL0 must be positive");
    assert!(p >= 1, "at least one sensor required");
    (arl0 * p as f64).ln()
}

/// Scenario lines ranked by (W descending, line ascending), truncated to 3.
fn top3_lines(w: &[f64], lines: &[usize]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..w.len()).collect();
    order.sort_by(|&a, &b| {
        w[b].partial_cmp(&w[a])
            .expect("statistics are never NaN")
            .then(lines[a].cmp(&lines[b]))
    });
    order.into_iter().take(3).map(|i| lines[i]).collect()
}

/// Feed observed increments into a fresh detector until max_ℓ W ≥ c
/// (detected, D = current 1-based sample index) or `horizon` increments are
/// exhausted (missed). An empty bank can never trigger.
pub fn run_detector<I>(bank: &ScenarioBank, c: f64, increments: I, horizon: usize) -> DetectionResult
where
    I: IntoIterator<Item = DVector<f64>>,
{
    assert!(horizon >= 1, "horizon must be at least 1");
    let mut state = GlrState::new(bank, c);
    for x in increments.into_iter().take(horizon) {
        state = update(&state, bank, &x);
        if state.triggered() {
            return DetectionResult {
                detected: true,
                d: Some(state.k),
                top3: top3_lines(&state.w, &bank.lines),
                final_w: state.w,
            };
        }
    }
    DetectionResult {
        detected: false,
        d: None,
        top3: Vec::new(),
        final_w: state.w,
    }
}
