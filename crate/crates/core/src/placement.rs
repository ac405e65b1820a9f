//! Sensor placement: the Frobenius-norm discrepancy objective, a
//! popcount-preserving mutation-only genetic algorithm with an elitist
//! best-ever record, an exhaustive-search oracle, and three reference
//! strategies (scattered, induced tree, highest degree).

use std::collections::HashMap;

use itertools::Itertools;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::jacobian::{NormPlan, OperatingPoint};
use crate::netmodel::{build_ybus, bus_degrees, Network};
use crate::sampling::{AngleSampleSet, RandomStream};

/// A length-N bit vector marking which buses carry a sensor.
///
/// Ordering is lexicographic on the bits (used for deterministic
/// tie-breaking), equality and hashing are structural.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Placement {
    bits: Vec<bool>,
}

impl Placement {
    pub fn from_bits(bits: Vec<bool>) -> Result<Self, PlacementError> {
        if bits.is_empty() {
            return Err(PlacementError::Empty);
        }
        Ok(Placement { bits })
    }

    pub fn all_ones(n: usize) -> Self {
        Placement {
            bits: vec![true; n],
        }
    }

    pub fn all_zeros(n: usize) -> Self {
        Placement {
            bits: vec![false; n],
        }
    }

    /// Placement observing exactly the given bus ids.
    pub fn from_bus_ids(net: &Network, ids: &[u32]) -> Result<Self, PlacementError> {
        let mut bits = vec![false; net.n_buses()];
        for &id in ids {
            let idx = net
                .index_of(id)
                .ok_or(PlacementError::UnknownBus(id))?;
            if bits[idx] {
                return Err(PlacementError::DuplicateBus(id));
            }
            bits[idx] = true;
        }
        Placement::from_bits(bits)
    }

    /// Observed bus ids in ascending network order.
    pub fn to_bus_ids(&self, net: &Network) -> Vec<u32> {
        assert_eq!(self.bits.len(), net.n_buses());
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| net.buses[i].id)
            .collect()
    }

    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    /// Number of sensors (popcount).
    pub fn n_p(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    /// Indices of observed buses in ascending order.
    pub fn observed_indices(&self) -> Vec<usize> {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(i, _)| i)
            .collect()
    }
}

/// Genetic-algorithm configuration. Defaults: 50 generations, population 100,
/// initial count 100, mutation probability 0.2, per-position shuffle
/// probability 0.05, tournament size 3, crossover disabled.
#[derive(Debug, Clone, PartialEq)]
pub struct GaConfig {
    pub generations: usize,
    pub population: usize,
    pub initial_count: usize,
    pub mutate_prob: f64,
    pub shuffle_prob: f64,
    pub tournament_size: usize,
    /// Probability that a consecutive pair of selected parents is replaced by
    /// popcount-preserving recombination offspring. Off (0.0) by default: the
    /// algorithm is mutation-only.
    pub crossover_prob: f64,
    pub seed: u64,
}

impl Default for GaConfig {
    fn default() -> Self {
        GaConfig {
            generations: 50,
            population: 100,
            initial_count: 100,
            mutate_prob: 0.2,
            shuffle_prob: 0.05,
            tournament_size: 3,
            crossover_prob: 0.0,
            seed: 0,
        }
    }
}

/// Objective evaluation of one placement: the mean absolute Frobenius-norm
/// discrepancy and its per-sample breakdown (`delta` is exactly the mean of
/// `per_sample`).
#[derive(Debug, Clone, PartialEq)]
pub struct FitnessReport {
    pub placement: Placement,
    pub delta: f64,
    pub per_sample: Vec<f64>,
}

/// Result of a GA run: the best-ever individual, its objective value, the
/// non-increasing best-ever history (one entry for the initial population
/// plus one per generation), and the final generation with its objective
/// values.
#[derive(Debug, Clone, PartialEq)]
pub struct GaRun {
    pub best: Placement,
    pub delta: f64,
    pub history: Vec<f64>,
    pub final_population: Vec<Placement>,
    pub final_deltas: Vec<f64>,
}

#[derive(Debug, Error)]
pub enum PlacementError {
    #[error("placement must cover at least one bus")]
    Empty,
    #[error("unknown bus id {0}")]
    UnknownBus(u32),
    #[error("duplicate bus id {0}")]
    DuplicateBus(u32),
    #[error("requested {n_p} sensors but the network has only {n} buses")]
    TooMany { n_p: usize, n: usize },
    #[error("search space C({n},{n_p}) exceeds the exhaustive-search guard of 10^6 candidates")]
    SearchSpaceTooLarge { n: usize, n_p: usize },
    #[error("no induced tree with {n_p} nodes found after {attempts} random growth attempts")]
    TreeConstruction { n_p: usize, attempts: usize },
}

/// Shared evaluation state for one (network, base point, sample set) triple:
/// the sparse norm plan and the precomputed fully observed norm of every
/// sample. All objective values produced from one context are exactly
/// comparable.
pub(crate) struct ObjectiveCtx<'a> {
    plan: NormPlan,
    base: &'a OperatingPoint,
    samples: &'a [OperatingPoint],
    full_norms: Vec<f64>,
}

impl<'a> ObjectiveCtx<'a> {
    pub(crate) fn new(
        net: &Network,
        base: &'a OperatingPoint,
        samples: &'a [OperatingPoint],
    ) -> Self {
        assert!(!samples.is_empty(), "objective needs at least one sample");
        let ybus = build_ybus(net);
        let plan = NormPlan::new(&ybus, net.reference);
        let full_norms = samples.iter().map(|s| plan.norm(base, s, None)).collect();
        ObjectiveCtx {
            plan,
            base,
            samples,
            full_norms,
        }
    }

    /// Mean absolute norm discrepancy for the given mask bits.
    pub(crate) fn delta(&self, bits: &[bool]) -> f64 {
        let mut acc = 0.0;
        for (i, s) in self.samples.iter().enumerate() {
            let masked = self.plan.norm(self.base, s, Some(bits));
            acc += (self.full_norms[i] - masked).abs();
        }
        acc / self.samples.len() as f64
    }

    fn delta_with_breakdown(&self, bits: &[bool]) -> (f64, Vec<f64>) {
        let mut acc = 0.0;
        let mut per = Vec::with_capacity(self.samples.len());
        for (i, s) in self.samples.iter().enumerate() {
            let masked = self.plan.norm(self.base, s, Some(bits));
            let v = (self.full_norms[i] - masked).abs();
            per.push(v);
            acc += v;
        }
        (acc / self.samples.len() as f64, per)
    }
}

/// δ = (1/M) Σᵢ | ‖J(θ⁽ⁱ⁾)‖_F − ‖J_S(θ⁽ⁱ⁾)‖_F | over the sample set, with the
/// masked Jacobian frozen at `base` on unobserved buses. Always ≥ 0; exactly
/// 0 for the all-ones placement and whenever every sample equals `base`.
pub fn objective_delta(
    net: &Network,
    base: &OperatingPoint,
    samples: &AngleSampleSet,
    placement: &Placement,
) -> FitnessReport {
    assert_eq!(placement.len(), net.n_buses(), "placement length must match network");
    let ctx = ObjectiveCtx::new(net, base, &samples.samples);
    let (delta, per_sample) = ctx.delta_with_breakdown(placement.bits());
    FitnessReport {
        placement: placement.clone(),
        delta,
        per_sample,
    }
}

/// `(a_delta, a_bits)` strictly better than `(b_delta, b_bits)`: lower δ, or
/// equal δ and lexicographically smaller bit vector.
fn better(a_delta: f64, a_bits: &[bool], b_delta: f64, b_bits: &[bool]) -> bool {
    a_delta < b_delta || (a_delta == b_delta && a_bits < b_bits)
}

/// Fold a population into the running best-ever record.
fn scan_best(
    pop: &[Vec<bool>],
    cache: &HashMap<Vec<bool>, f64>,
    best_bits: &mut Vec<bool>,
    best_delta: &mut f64,
) {
    for bits in pop {
        let d = cache[bits];
        if better(d, bits, *best_delta, best_bits) {
            *best_delta = d;
            *best_bits = bits.clone();
        }
    }
}

fn random_bits(rng: &mut ChaCha8Rng, n: usize, n_p: usize) -> Vec<bool> {
    let mut bits = vec![false; n];
    for idx in rand::seq::index::sample(rng, n, n_p) {
        bits[idx] = true;
    }
    bits
}

/// Compute (in parallel) and cache objective values for every not-yet-seen
/// individual. Values are pure functions of the bits, so the cache never
/// changes a result — it only avoids re-evaluating duplicates.
fn fill_cache(ctx: &ObjectiveCtx<'_>, cache: &mut HashMap<Vec<bool>, f64>, pop: &[Vec<bool>]) {
    let mut fresh: Vec<&Vec<bool>> = pop.iter().filter(|b| !cache.contains_key(*b)).collect();
    fresh.sort();
    fresh.dedup();
    let computed: Vec<(Vec<bool>, f64)> = fresh
        .par_iter()
        .map(|b| ((*b).clone(), ctx.delta(b)))
        .collect();
    for (b, d) in computed {
        cache.insert(b, d);
    }
}

/// Popcount-preserving recombination: offspring share the parents' common
/// 1-bits and split the differing 1-positions randomly.
fn crossover_pair(rng: &mut ChaCha8Rng, a: &mut Vec<bool>, b: &mut Vec<bool>) {
    let n = a.len();
    let common: Vec<usize> = (0..n).filter(|&i| a[i] && b[i]).collect();
    let mut pool: Vec<usize> = (0..n).filter(|&i| a[i] != b[i] && (a[i] || b[i])).collect();
    let need = a.iter().filter(|&&x| x).count() - common.len();
    // Fisher–Yates driven by the run's generator.
    for i in (1..pool.len()).rev() {
        let j = rng.random_range(0..=i);
        pool.swap(i, j);
    }
    let mut child_a = vec![false; n];
    let mut child_b = vec![false; n];
    for &i in &common {
        child_a[i] = true;
        child_b[i] = true;
    }
    for (slot, &i) in pool.iter().enumerate() {
        if slot < need {
            child_a[i] = true;
        } else {
            child_b[i] = true;
        }
    }
    *a = child_a;
    *b = child_b;
}

/// Mutation-only genetic search for the placement minimizing the norm
/// discrepancy objective, with `n_p` sensors.
///
/// Each generation: size-`tournament_size` tournaments (with replacement,
/// lowest δ wins, first drawn wins ties) select `population` parents; each
/// parent mutates with probability `mutate_prob`, a mutation considering
/// every position pair with probability `shuffle_prob` and swapping the pairs
/// whose bits differ — so the sensor count is invariant throughout. The returned
/// best is the best-ever individual (ties broken toward the lexicographically
/// smaller bit vector); the history has `generations + 1` non-increasing
/// entries, one per evaluated population.
pub fn ga_optimize(
    net: &Network,
    base: &OperatingPoint,
    samples: &AngleSampleSet,
    n_p: usize,
    cfg: &GaConfig,
) -> GaRun {
    let n = net.n_buses();
    assert!(n_p >= 1 && n_p <= n, "need 1 ≤ n_p ≤ N");
    assert!(cfg.generations >= 1, "need at least one generation");
    assert!(cfg.population >= 1 && cfg.initial_count >= 1 && cfg.tournament_size >= 1);
    for p in [cfg.mutate_prob, cfg.shuffle_prob, cfg.crossover_prob] {
        assert!((0.0..=1.0).contains(&p), "probabilities must lie in [0,1]");
    }
    assert!(!samples.is_empty());

    let ctx = ObjectiveCtx::new(net, base, &samples.samples);
    let mut rng = RandomStream::new(cfg.seed).rng();
    let mut cache: HashMap<Vec<bool>, f64> = HashMap::new();

    let mut population: Vec<Vec<bool>> = (0..cfg.initial_count)
        .map(|_| random_bits(&mut rng, n, n_p))
        .collect();
    fill_cache(&ctx, &mut cache, &population);

    let mut best_bits = population[0].clone();
    let mut best_delta = cache[&best_bits];
    scan_best(&population, &cache, &mut best_bits, &mut best_delta);
    let mut history = Vec::with_capacity(cfg.generations + 1);
    history.push(best_delta);

    for _gen in 0..cfg.generations {
        // Tournament selection with replacement.
        let mut next: Vec<Vec<bool>> = Vec::with_capacity(cfg.population);
        for _ in 0..cfg.population {
            let mut winner = rng.random_range(0..population.len());
            for _ in 1..cfg.tournament_size {
                let challenger = rng.random_range(0..population.len());
                if cache[&population[challenger]] < cache[&population[winner]] {
                    winner = challenger;
                }
            }
            next.push(population[winner].clone());
        }
        // Optional recombination (off by default).
        if cfg.crossover_prob > 0.0 {
            for pair in 0..next.len() / 2 {
                if rng.random::<f64>() < cfg.crossover_prob {
                    let (left, right) = next.split_at_mut(2 * pair + 1);
                    crossover_pair(&mut rng, &mut left[2 * pair], &mut right[0]);
                }
            }
        }
        // Popcount-preserving mutation: sweep every position pair; a
        // considered pair with equal bits is a no-op, an unequal pair swaps,
        // so the sensor count never changes.
        for indiv in next.iter_mut() {
            if rng.random::<f64>() < cfg.mutate_prob {
                for i in 0..n {
                    for j in i + 1..n {
                        if rng.random::<f64>() < cfg.shuffle_prob && indiv[i] != indiv[j] {
                            indiv.swap(i, j);
                        }
                    }
                }
            }
        }
        population = next;
        fill_cache(&ctx, &mut cache, &population);
        scan_best(&population, &cache, &mut best_bits, &mut best_delta);
        history.push(best_delta);
    }

    let final_deltas: Vec<f64> = population.iter().map(|b| cache[b]).collect();
    let final_population: Vec<Placement> = population
        .into_iter()
        .map(|bits| Placement::from_bits(bits).expect("population individuals are non-empty"))
        .collect();
    GaRun {
        best: Placement::from_bits(best_bits).expect("best individual is non-empty"),
        delta: best_delta,
        history,
        final_population,
        final_deltas,
    }
}

/// C(n, k), stopping early once the guard is exceeded.
fn binomial_capped(n: usize, k: usize, cap: u128) -> Option<u128> {
    let k = k.min(n - k);
    let mut acc: u128 = 1;
    for i in 0..k {
        acc = acc * (n - i) as u128 / (i + 1) as u128;
        if acc > cap {
            return None;
        }
    }
    Some(acc)
}

/// Global minimum of the objective over all C(N, n_p) placements; ties broken
/// by the lexicographically smallest bit vector. Guarded against search
/// spaces beyond 10⁶ candidates.
pub fn exhaustive_search(
    net: &Network,
    base: &OperatingPoint,
    samples: &AngleSampleSet,
    n_p: usize,
) -> Result<(Placement, f64), PlacementError> {
    let n = net.n_buses();
    if n_p > n {
        return Err(PlacementError::TooMany { n_p, n });
    }
    if binomial_capped(n, n_p, 1_000_000).is_none() {
        return Err(PlacementError::SearchSpaceTooLarge { n, n_p });
    }
    assert!(!samples.is_empty());
    let ctx = ObjectiveCtx::new(net, base, &samples.samples);
    let mut best: Option<(Vec<bool>, f64)> = None;
    for combo in (0..n).combinations(n_p) {
        let mut bits = vec![false; n];
        for i in combo {
            bits[i] = true;
        }
        let d = ctx.delta(&bits);
        let improves = match &best {
            None => true,
            Some((bb, bd)) => better(d, &bits, *bd, bb),
        };
        if improves {
            best = Some((bits, d));
        }
    }
    let (bits, delta) = best.expect("at least one candidate placement");
    Ok((Placement::from_bits(bits).expect("candidate is non-empty"), delta))
}

/// Uniformly random `n_p`-subset of buses, deterministic per stream.
pub fn strategy_scattered(net: &Network, n_p: usize, stream: RandomStream) -> Placement {
    let n = net.n_buses();
    assert!(n_p <= n, "n_p must not exceed the bus count");
    let mut rng = stream.rng();
    Placement {
        bits: random_bits(&mut rng, n, n_p),
    }
}

const TREE_RESTARTS: usize = 1000;

/// Random placement whose selected buses induce a tree: grown from a random
/// root by repeatedly adding a random unselected bus adjacent to exactly one
/// selected bus (adjacency through at least two selected buses would close a
/// cycle). Dead ends restart the growth; bounded restarts turn into an error
/// on graphs that admit no induced tree of the requested size.
pub fn strategy_tree(
    net: &Network,
    n_p: usize,
    stream: RandomStream,
) -> Result<Placement, PlacementError> {
    let n = net.n_buses();
    if n_p > n {
        return Err(PlacementError::TooMany { n_p, n });
    }
    if n_p == 0 {
        return Ok(Placement::all_zeros(n));
    }
    // Simple-graph adjacency over in-service branches.
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for br in net.branches.iter().filter(|b| b.in_service) {
        let f = net.index_of(br.from).expect("branch endpoints exist");
        let t = net.index_of(br.to).expect("branch endpoints exist");
        if !adj[f].contains(&t) {
            adj[f].push(t);
            adj[t].push(f);
        }
    }
    let mut rng = stream.rng();
    for _attempt in 0..TREE_RESTARTS {
        let root = rng.random_range(0..n);
        let mut selected = vec![false; n];
        selected[root] = true;
        let mut count = 1;
        while count < n_p {
            let candidates: Vec<usize> = (0..n)
                .filter(|&v| {
                    !selected[v] && adj[v].iter().filter(|&&u| selected[u]).count() == 1
                })
                .collect();
            if candidates.is_empty() {
                break;
            }
            let v = candidates[rng.random_range(0..candidates.len())];
            selected[v] = true;
            count += 1;
        }
        if count == n_p {
            debug_assert_eq!(induced_edge_count(&adj, &selected), n_p - 1);
            return Ok(Placement { bits: selected });
        }
    }
    Err(PlacementError::TreeConstruction {
        n_p,
        attempts: TREE_RESTARTS,
    })
}

/// Number of simple-graph edges with both endpoints selected.
fn induced_edge_count(adj: &[Vec<usize>], selected: &[bool]) -> usize {
    let mut count = 0;
    for (u, nbrs) in adj.iter().enumerate() {
        for &v in nbrs {
            if u < v && selected[u] && selected[v] {
                count += 1;
            }
        }
    }
    count
}

/// The `n_p` buses of highest degree, ties broken by ascending bus id.
pub fn strategy_degree(net: &Network, n_p: usize) -> Placement {
    let n = net.n_buses();
    assert!(n_p <= n, "n_p must not exceed the bus count");
    let mut deg = bus_degrees(net);
    deg.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
    let ids: Vec<u32> = deg.iter().take(n_p).map(|&(id, _)| id).collect();
    let mut bits = vec![false; n];
    for id in ids {
        bits[net.index_of(id).expect("degree table ids exist")] = true;
    }
    Placement { bits }
}
