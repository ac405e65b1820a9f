//! Monte Carlo evaluation of placements: per-line outage replications,
//! heatmap assembly, missed-detection and top-3 accuracy summaries, strategy
//! comparison, and the objective-vs-sensor-count sweep.
//!
//! Every replication is an independent job keyed by a `(line, replication)`
//! stream id, so any parallel schedule produces the identical report.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::detection::{build_scenarios, run_detector, threshold, DetectionError};
use crate::jacobian::{JacobianError, OperatingPoint};
use crate::netmodel::{branch_label, Network};
use crate::placement::{ga_optimize, GaConfig, Placement, PlacementError};
use crate::sampling::{
    sample_angle_prior, GaussianSampler, RandomStream, SamplingError, DEFAULT_ANGLE_SPREAD,
    DEFAULT_SAMPLE_COUNT,
};

/// Monte Carlo evaluation parameters. Defaults: 100 replications per line, 60
/// pre-outage samples (2 s at 30 Hz), 300 post-outage samples (10 s), σ =
/// 0.01, Δt = 1/30 s, ARL₀ = 10⁴, objective-prior spread 1 rad, seed 0.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalConfig {
    pub replications: usize,
    pub pre_outage_samples: usize,
    pub post_outage_horizon: usize,
    pub sigma: f64,
    pub dt: f64,
    pub arl0: f64,
    /// Angular spread (radians) of the wide isotropic prior behind the
    /// placement objective; used by the sensor-count sweep only.
    pub spread: f64,
    pub seed: u64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            replications: 100,
            pre_outage_samples: 60,
            post_outage_horizon: 300,
            sigma: 0.01,
            dt: 1.0 / 30.0,
            arl0: 10_000.0,
            spread: DEFAULT_ANGLE_SPREAD,
            seed: 0,
        }
    }
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Detection(#[from] DetectionError),
    #[error(transparent)]
    Sampling(#[from] SamplingError),
    #[error(transparent)]
    Placement(#[from] PlacementError),
    #[error(transparent)]
    Jacobian(#[from] JacobianError),
}

/// Empirical detection & identification performance of one placement.
///
/// Both matrices have one row per true outage line and `|𝓛|+1` columns:
/// column 0 is the missed-detection fraction, column `i+1` the fraction of
/// replications in which line `lines[i]` was identified (within the top 3,
/// respectively as the single top candidate). Top-3 rows need not sum to 1 —
/// each detected replication credits up to three lines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HeatmapReport {
    pub lines: Vec<usize>,
    pub line_labels: Vec<String>,
    pub dropped: Vec<usize>,
    pub replications: usize,
    pub threshold: f64,
    pub matrix_top3: Vec<Vec<f64>>,
    pub matrix_top1: Vec<Vec<f64>>,
    pub detection_rate: Vec<f64>,
    pub top3_accuracy: Vec<f64>,
}

/// One strategy's evaluation in a comparison run.
#[derive(Debug, Clone, PartialEq)]
pub struct StrategyOutcome {
    pub name: String,
    pub placement: Placement,
    pub report: HeatmapReport,
    pub mean_detection_rate: f64,
    pub mean_top3_accuracy: f64,
}

/// Objective-vs-sensor-count sweep: for each count, the ascending objective
/// values of the up-to-30 best final-generation individuals (duplicates
/// retained), plus the best-ever objective and placement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub counts: Vec<usize>,
    pub objectives: Vec<Vec<f64>>,
    pub best_delta: Vec<f64>,
    pub best_bus_ids: Vec<Vec<u32>>,
}

/// Evaluate one placement: for every monitored line, `replications` runs of
/// pre-outage (null) followed by post-outage (scenario) increments through
/// the sequential detector, aggregated into a [`HeatmapReport`]. Fully
/// deterministic per `cfg.seed`, independent of parallel scheduling.
pub fn evaluate_placement(
    net: &Network,
    base: &OperatingPoint,
    placement: &Placement,
    cfg: &EvalConfig,
) -> Result<HeatmapReport, EvalError> {
    assert!(cfg.replications >= 1, "at least one replication required");
    assert!(
        cfg.pre_outage_samples >= 1 && cfg.post_outage_horizon >= 1,
        "horizons must be at least 1"
    );
    let bank = build_scenarios(net, base, placement, cfg.sigma, cfg.dt)?;
    let c = threshold(cfg.arl0, placement.n_p());
    let n_l = bank.len();
    let labels: Vec<String> = bank.lines().iter().map(|&l| branch_label(net, l)).collect();
    let null_sampler = GaussianSampler::new(bank.null_covariance())?;
    let alt_samplers: Vec<GaussianSampler> = (0..n_l)
        .map(|i| GaussianSampler::new(bank.scenario_covariance(i)))
        .collect::<Result<_, _>>()?;
    let eval_root = RandomStream::new(cfg.seed).substream(10);
    let horizon = cfg.pre_outage_samples + cfg.post_outage_horizon;

    struct Outcome {
        slot: usize,
        missed: bool,
        top3: Vec<usize>,
    }
    let jobs: Vec<(usize, usize)> = (0..n_l)
        .flat_map(|slot| (0..cfg.replications).map(move |rep| (slot, rep)))
        .collect();
    let outcomes: Vec<Outcome> = jobs
        .par_iter()
        .map(|&(slot, rep)| {
            let line = bank.scenario_line(slot);
            let stream = eval_root.substream(((line as u64) << 32) | rep as u64);
            let mut rng = stream.rng();
            let pre = cfg.pre_outage_samples;
            let null_s = &null_sampler;
            let alt_s = &alt_samplers[slot];
            let increments = (0..horizon).map(move |k| {
                if k < pre {
                    null_s.sample(&mut rng)
                } else {
                    alt_s.sample(&mut rng)
                }
            });
            let result = run_detector(&bank, c, increments, horizon);
            Outcome {
                slot,
                missed: !result.detected,
                top3: result.top3,
            }
        })
        .collect();

    let slot_of: HashMap<usize, usize> = bank
        .lines()
        .iter()
        .enumerate()
        .map(|(s, &l)| (l, s))
        .collect();
    let mut missed_counts = vec![0usize; n_l];
    let mut top3_counts = vec![vec![0usize; n_l]; n_l];
    let mut top1_counts = vec![vec![0usize; n_l]; n_l];
    let mut hit3_counts = vec![0usize; n_l];
    for o in &outcomes {
        if o.missed {
            missed_counts[o.slot] += 1;
            continue;
        }
        for (rank, line) in o.top3.iter().enumerate() {
            let ident = slot_of[line];
            top3_counts[o.slot][ident] += 1;
            if rank == 0 {
                top1_counts[o.slot][ident] += 1;
            }
        }
        if o.top3.contains(&bank.scenario_line(o.slot)) {
            hit3_counts[o.slot] += 1;
        }
    }

    let r = cfg.replications as f64;
    let missed_frac: Vec<f64> = missed_counts.iter().map(|&m| m as f64 / r).collect();
    let matrix_of = |counts: &[Vec<usize>]| -> Vec<Vec<f64>> {
        (0..n_l)
            .map(|s| {
                let mut row = Vec::with_capacity(n_l + 1);
                row.push(missed_frac[s]);
                for i in 0..n_l {
                    row.push(counts[s][i] as f64 / r);
                }
                row
            })
            .collect()
    };
    Ok(HeatmapReport {
        lines: bank.lines().to_vec(),
        line_labels: labels,
        dropped: bank.dropped().to_vec(),
        replications: cfg.replications,
        threshold: c,
        matrix_top3: matrix_of(&top3_counts),
        matrix_top1: matrix_of(&top1_counts),
        detection_rate: missed_frac.iter().map(|&m| 1.0 - m).collect(),
        top3_accuracy: hit3_counts.iter().map(|&h| h as f64 / r).collect(),
    })
}

/// Evaluate several named placements under common random numbers (the same
/// evaluation seed), ranked by descending mean top-3 accuracy. Identical
/// placements therefore produce identical reports regardless of their names.
pub fn compare_strategies(
    net: &Network,
    base: &OperatingPoint,
    strategies: &[(String, Placement)],
    cfg: &EvalConfig,
) -> Result<Vec<StrategyOutcome>, EvalError> {
    let mut out = Vec::with_capacity(strategies.len());
    for (name, placement) in strategies {
        let report = evaluate_placement(net, base, placement, cfg)?;
        let n_l = report.lines.len();
        let (mdr, mta) = if n_l == 0 {
            (0.0, 0.0)
        } else {
            (
                report.detection_rate.iter().sum::<f64>() / n_l as f64,
                report.top3_accuracy.iter().sum::<f64>() / n_l as f64,
            )
        };
        out.push(StrategyOutcome {
            name: name.clone(),
            placement: placement.clone(),
            report,
            mean_detection_rate: mdr,
            mean_top3_accuracy: mta,
        });
    }
    out.sort_by(|a, b| {
        b.mean_top3_accuracy
            .partial_cmp(&a.mean_top3_accuracy)
            .expect("accuracies are never NaN")
    });
    Ok(out)
}

/// For each sensor count, run the genetic optimizer on a shared sample set
/// (matched seeds across counts) and report the ascending objective values of
/// the up-to-30 best final-generation individuals. The shared samples come
/// from the wide isotropic angle prior (`cfg.spread`), which is what lets the
/// objective separate sensor counts; see [`sample_angle_prior`].
pub fn sweep_pmu_count(
    net: &Network,
    base: &OperatingPoint,
    counts: &[usize],
    cfg: &EvalConfig,
    ga_cfg: &GaConfig,
) -> Result<SweepReport, EvalError> {
    assert!(!counts.is_empty(), "at least one sensor count required");
    let samples = sample_angle_prior(
        net,
        base,
        cfg.spread,
        DEFAULT_SAMPLE_COUNT,
        RandomStream::new(cfg.seed).substream(30),
    );
    let mut objectives = Vec::with_capacity(counts.len());
    let mut best_delta = Vec::with_capacity(counts.len());
    let mut best_bus_ids = Vec::with_capacity(counts.len());
    for &n_p in counts {
        let run = ga_optimize(net, base, &samples, n_p, ga_cfg);
        let mut vals = run.final_deltas.clone();
        vals.sort_by(|a, b| a.partial_cmp(b).expect("objectives are never NaN"));
        vals.truncate(30);
        objectives.push(vals);
        best_delta.push(run.delta);
        best_bus_ids.push(run.best.to_bus_ids(net));
    }
    Ok(SweepReport {
        counts: counts.to_vec(),
        objectives,
        best_delta,
        best_bus_ids,
    })
}

/// Round to 6 significant digits (the emission precision).
pub fn sig6(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.5e}").parse().expect("scientific notation round-trips")
}

/// Render with 6 significant digits: plain decimal for magnitudes in
/// [1e−4, 1e6), scientific notation otherwise.
pub fn sig6_string(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let a = x.abs();
    if (1e-4..1e6).contains(&a) {
        let sci = format!("{a:e}");
        let exp: i32 = sci
            .split('e')
            .nth(1)
            .expect("scientific notation has an exponent")
            .parse()
            .expect("exponent is an integer");
        let prec = (5 - exp).max(0) as usize;
        format!("{x:.prec$}")
    } else {
        format!("{x:.5e}")
    }
}

fn round_heatmap(r: &HeatmapReport) -> HeatmapReport {
    let round_matrix = |m: &Vec<Vec<f64>>| -> Vec<Vec<f64>> {
        m.iter()
            .map(|row| row.iter().map(|&v| sig6(v)).collect())
            .collect()
    };
    HeatmapReport {
        lines: r.lines.clone(),
        line_labels: r.line_labels.clone(),
        dropped: r.dropped.clone(),
        replications: r.replications,
        threshold: sig6(r.threshold),
        matrix_top3: round_matrix(&r.matrix_top3),
        matrix_top1: round_matrix(&r.matrix_top1),
        detection_rate: r.detection_rate.iter().map(|&v| sig6(v)).collect(),
        top3_accuracy: r.top3_accuracy.iter().map(|&v| sig6(v)).collect(),
    }
}

/// Full JSON serialization of a heatmap report, 6 significant digits.
pub fn heatmap_json(r: &HeatmapReport) -> String {
    let mut s = serde_json::to_string_pretty(&round_heatmap(r)).expect("report serializes");
    s.push('\n');
    s
}

/// CSV of the top-3 heatmap matrix: header `missed,<line labels>`, one row
/// per true line, 6 significant digits.
pub fn heatmap_csv(r: &HeatmapReport) -> String {
    let mut out = String::from("missed");
    for label in &r.line_labels {
        out.push(',');
        out.push_str(label);
    }
    out.push('\n');
    for row in &r.matrix_top3 {
        let mut first = true;
        for &v in row {
            if !first {
                out.push(',');
            }
            out.push_str(&sig6_string(v));
            first = false;
        }
        out.push('\n');
    }
    out
}

/// JSON serialization of a sweep report, 6 significant digits.
pub fn sweep_json(r: &SweepReport) -> String {
    let rounded = SweepReport {
        counts: r.counts.clone(),
        objectives: r
            .objectives
            .iter()
            .map(|vals| vals.iter().map(|&v| sig6(v)).collect())
            .collect(),
        best_delta: r.best_delta.iter().map(|&v| sig6(v)).collect(),
        best_bus_ids: r.best_bus_ids.clone(),
    };
    let mut s = serde_json::to_string_pretty(&rounded).expect("report serializes");
    s.push('\n');
    s
}
