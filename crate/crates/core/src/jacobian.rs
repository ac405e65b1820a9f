//! Real-power/angle Jacobian of the AC power-flow equations, its
//! placement-masked variant, Frobenius norms, and the angle-increment
//! covariance.
//!
//! With bus voltage magnitudes `V`, angles `θ`, and the admittance matrix in
//! polar form (`Y_mn`, `α_mn`), the active-power sensitivities are
//!
//! ```text
//! ∂P_m/∂θ_n = V_m V_n Y_mn sin(θ_m − θ_n − α_mn)        (m ≠ n)
//! ∂P_m/∂θ_m = −Σ_{n≠m} ∂P_m/∂θ_n                        (sum over all other buses)
//! ```
//!
//! The slack bus's row and column are deleted after assembly, leaving the
//! (N−1)×(N−1) matrix `J(θ)` that maps angle increments to active-power
//! increments. Under small Gaussian power fluctuations with scale `σ` and
//! sampling interval `Δt`, the angle increments are zero-mean Gaussian with
//! covariance `σ²Δt (JᵀJ)⁻¹`.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::netmodel::AdmittanceMatrix;
use crate::placement::Placement;

/// Voltage angles (radians) and magnitudes (per-unit) for every bus, in
/// network bus order.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatingPoint {
    pub theta: Vec<f64>,
    pub vmag: Vec<f64>,
}

impl OperatingPoint {
    pub fn len(&self) -> usize {
        self.theta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.theta.is_empty()
    }
}

/// The (N−1)×(N−1) real power/angle Jacobian with the slack row and column
/// removed. `bus_order[i]` is the bus id behind row/column `i`.
#[derive(Debug, Clone, PartialEq)]
pub struct JacobianMatrix {
    pub matrix: DMatrix<f64>,
    pub bus_order: Vec<u32>,
}

impl JacobianMatrix {
    pub fn dimension(&self) -> usize {
        self.bus_order.len()
    }
}

/// Symmetric positive-semidefinite covariance `σ²Δt (JᵀJ)⁻¹` of the per-sample
/// angle increments, over the non-reference buses of the generating Jacobian.
#[derive(Debug, Clone, PartialEq)]
pub struct AngleCovariance {
    pub matrix: DMatrix<f64>,
    pub sigma: f64,
    pub dt: f64,
}

impl AngleCovariance {
    pub fn dimension(&self) -> usize {
        self.matrix.nrows()
    }
}

#[derive(Debug, Error)]
pub enum JacobianError {
    #[error(
        "Jacobian is numerically singular (condition number {cond:.3e} > {limit:.0e}); \
         the operating point is islanded or degenerate"
    )]
    Singular { cond: f64, limit: f64 },
}

/// Condition-number limit above which a Jacobian is declared singular.
pub const SINGULAR_COND_LIMIT: f64 = 1e12;

/// Select per-bus values from the live point where the placement observes a
/// bus and from the static base point where it does not.
#[inline]
fn select(bits: Option<&[bool]>, i: usize, base: &[f64], live: &[f64]) -> f64 {
    match bits {
        Some(b) if !b[i] => base[i],
        _ => live[i],
    }
}

/// Full N×N angle-derivative matrix (reference row/column still present).
///
/// `bits = None` evaluates everything at `live`; with a mask, unobserved
/// buses' angles and magnitudes are frozen at `base`. Shared by the full and
/// masked Jacobians so that a full mask reproduces the unmasked matrix
/// bit-for-bit.
fn assemble_pre_deletion(
    ybus: &AdmittanceMatrix,
    base: &OperatingPoint,
    live: &OperatingPoint,
    bits: Option<&[bool]>,
) -> DMatrix<f64> {
    let n = ybus.dimension();
    assert_eq!(base.len(), n, "base operating point length must match network");
    assert_eq!(live.len(), n, "live operating point length must match network");
    if let Some(b) = bits {
        assert_eq!(b.len(), n, "placement length must match network");
    }
    let mut full = DMatrix::<f64>::zeros(n, n);
    for m in 0..n {
        let th_m = select(bits, m, &base.theta, &live.theta);
        let v_m = select(bits, m, &base.vmag, &live.vmag);
        let mut diag = 0.0;
        for k in 0..n {
            if k == m {
                continue;
            }
            let th_k = select(bits, k, &base.theta, &live.theta);
            let v_k = select(bits, k, &base.vmag, &live.vmag);
            let e = v_m * v_k * ybus.magnitude(m, k) * (th_m - th_k - ybus.angle(m, k)).sin();
            full[(m, k)] = e;
            diag -= e;
        }
        full[(m, m)] = diag;
    }
    full
}

fn delete_reference(
    full: DMatrix<f64>,
    ybus: &AdmittanceMatrix,
    reference: u32,
) -> JacobianMatrix {
    let ref_idx = ybus
        .bus_ids
        .iter()
        .position(|&id| id == reference)
        .expect("reference bus id present in admittance matrix");
    let keep: Vec<usize> = (0..ybus.dimension()).filter(|&i| i != ref_idx).collect();
    let matrix = DMatrix::from_fn(keep.len(), keep.len(), |i, j| full[(keep[i], keep[j])]);
    JacobianMatrix {
        matrix,
        bus_order: keep.iter().map(|&i| ybus.bus_ids[i]).collect(),
    }
}

/// Jacobian of the fully observed network at operating point `op`.
pub fn jacobian_full(
    ybus: &AdmittanceMatrix,
    op: &OperatingPoint,
    reference: u32,
) -> JacobianMatrix {
    delete_reference(assemble_pre_deletion(ybus, op, op, None), ybus, reference)
}

/// Jacobian as reconstructable under a partial sensor placement: buses the
/// placement observes take their angle and magnitude from `live`, all others
/// stay frozen at the static `base` point. A full placement reproduces
/// [`jacobian_full`] at `live` exactly, and `live == base` reproduces it at
/// `base` for every placement.
pub fn jacobian_masked(
    ybus: &AdmittanceMatrix,
    base: &OperatingPoint,
    live: &OperatingPoint,
    placement: &Placement,
    reference: u32,
) -> JacobianMatrix {
    delete_reference(
        assemble_pre_deletion(ybus, base, live, Some(placement.bits())),
        ybus,
        reference,
    )
}

/// √(Σ a_ij²) over all entries.
pub fn frobenius_norm(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|&x| x * x).sum::<f64>().sqrt()
}

/// Covariance `σ²Δt (JᵀJ)⁻¹`, inverted through a rank-revealing singular value
/// decomposition of `J` and symmetrized as `(C + Cᵀ)/2`.
///
/// Fails when `J`'s condition number exceeds [`SINGULAR_COND_LIMIT`] — the
/// signature of an islanded or otherwise degenerate operating point.
pub fn angle_covariance(
    j: &JacobianMatrix,
    sigma: f64,
    dt: f64,
) -> Result<AngleCovariance, JacobianError> {
    assert!(sigma > 0.0, "sigma must be positive");
    assert!(dt > 0.0, "dt must be positive");
    let n = j.dimension();
    let svd = j.matrix.clone().svd(false, true);
    let smax = svd.singular_values.iter().cloned().fold(0.0_f64, f64::max);
    let smin = svd
        .singular_values
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= SINGULAR_COND_LIMIT) {
        return Err(JacobianError::Singular {
            cond,
            limit: SINGULAR_COND_LIMIT,
        });
    }
    // (JᵀJ)⁻¹ = V S⁻² Vᵀ from J = U S Vᵀ.
    let v_t = svd.v_t.expect("v requested");
    let scale = sigma * sigma * dt;
    let mut c = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for k in 0..n {
            let mut sum = 0.0;
            for r in 0..n {
                let s = svd.singular_values[r];
                sum += v_t[(r, i)] * v_t[(r, k)] / (s * s);
            }
            c[(i, k)] = scale * sum;
        }
    }
    let sym = DMatrix::from_fn(n, n, |i, k| 0.5 * (c[(i, k)] + c[(k, i)]));
    Ok(AngleCovariance {
        matrix: sym,
        sigma,
        dt,
    })
}

/// Precomputed sparse evaluation plan for Frobenius norms of (masked)
/// Jacobians: only adjacent bus pairs contribute off-diagonal entries, so a
/// norm costs O(L) trigonometric evaluations instead of O(N²).
///
/// The same accumulation loop serves the fully observed and the masked norm,
/// which makes the two agree bit-for-bit whenever their inputs coincide (in
/// particular under an all-ones placement).
#[derive(Debug, Clone)]
pub(crate) struct NormPlan {
    n: usize,
    ref_idx: usize,
    /// (m, k, Y_mk, α_mk, Y_km, α_km) for each adjacent unordered pair m < k.
    pairs: Vec<(usize, usize, f64, f64, f64, f64)>,
}

impl NormPlan {
    pub(crate) fn new(ybus: &AdmittanceMatrix, reference: u32) -> Self {
        let n = ybus.dimension();
        let ref_idx = ybus
            .bus_ids
            .iter()
            .position(|&id| id == reference)
            .expect("reference bus id present in admittance matrix");
        let mut pairs = Vec::new();
        for m in 0..n {
            for k in (m + 1)..n {
                let fwd = ybus.matrix[(m, k)];
                let rev = ybus.matrix[(k, m)];
                if fwd.norm_sqr() != 0.0 || rev.norm_sqr() != 0.0 {
                    pairs.push((
                        m,
                        k,
                        ybus.magnitude(m, k),
                        ybus.angle(m, k),
                        ybus.magnitude(k, m),
                        ybus.angle(k, m),
                    ));
                }
            }
        }
        NormPlan { n, ref_idx, pairs }
    }

    /// Frobenius norm of the (masked) Jacobian with the reference row/column
    /// removed. `bits = None` evaluates fully at `live`.
    pub(crate) fn norm(
        &self,
        base: &OperatingPoint,
        live: &OperatingPoint,
        bits: Option<&[bool]>,
    ) -> f64 {
        let mut diag = vec![0.0_f64; self.n];
        let mut acc = 0.0_f64;
        for &(m, k, y_mk, a_mk, y_km, a_km) in &self.pairs {
            let th_m = select(bits, m, &base.theta, &live.theta);
            let th_k = select(bits, k, &base.theta, &live.theta);
            let v_m = select(bits, m, &base.vmag, &live.vmag);
            let v_k = select(bits, k, &base.vmag, &live.vmag);
            let e_mk = v_m * v_k * y_mk * (th_m - th_k - a_mk).sin();
            let e_km = v_k * v_m * y_km * (th_k - th_m - a_km).sin();
            diag[m] -= e_mk;
            diag[k] -= e_km;
            if m != self.ref_idx && k != self.ref_idx {
                acc += e_mk * e_mk;
                acc += e_km * e_km;
            }
        }
        for (m, d) in diag.iter().enumerate() {
            if m != self.ref_idx {
                acc += d * d;
            }
        }
        acc.sqrt()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netmodel::{build_ybus, parse_case, Network};
    use crate::placement::Placement;
    use crate::testutil::random_network;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn two_bus() -> Network {
        parse_case("bus\n1 3 0 0 1.0 0\n2 1 0 0 1.0 0\n;\nbranch\n1 2 0 0.1 0 0 0 1\n;\n")
            .unwrap()
    }

    fn case39() -> Network {
        parse_case(include_str!("../../../cases/case39.case")).unwrap()
    }

    #[test]
    fn two_bus_jacobian_is_ten() {
        let net = two_bus();
        let y = build_ybus(&net);
        let j = jacobian_full(&y, &net.base_point(), net.reference);
        assert_eq!(j.dimension(), 1);
        assert_eq!(j.bus_order, vec![2]);
        // ∂P₂/∂θ₂ = −V₂V₁Y₂₁ sin(0 − 0 − π/2) = 10.
        assert_relative_eq!(j.matrix[(0, 0)], 10.0, max_relative = 1e-12);
    }

    #[test]
    fn symmetric_triangle_has_equal_off_diagonals() {
        let net = parse_case(
            "bus\n1 3 0 0 1.0 0\n2 1 0 0 1.0 0\n3 1 0 0 1.0 0\n;\n\
             branch\n1 2 0 0.1 0 0 0 1\n2 3 0 0.1 0 0 0 1\n1 3 0 0.1 0 0 0 1\n;\n",
        )
        .unwrap();
        let y = build_ybus(&net);
        let j = jacobian_full(&y, &net.base_point(), net.reference);
        assert_eq!(j.dimension(), 2);
        assert_eq!(j.matrix[(0, 1)], j.matrix[(1, 0)]);
        assert_eq!(j.matrix[(0, 0)], j.matrix[(1, 1)]);
    }

    /// Straight-line evaluation of the active-power balance P_m(θ, V) used as
    /// the finite-difference oracle. Sums over every bus, reference included.
    fn power_injection(net: &Network, ybus: &AdmittanceMatrix, theta: &[f64], vmag: &[f64], m: usize) -> f64 {
        let n = net.n_buses();
        let mut p = 0.0;
        for k in 0..n {
            p += vmag[m]
                * vmag[k]
                * ybus.magnitude(m, k)
                * (theta[m] - theta[k] - ybus.angle(m, k)).cos();
        }
        p
    }

    fn fd_check(net: &Network, op: &OperatingPoint, tol: f64) {
        let ybus = build_ybus(net);
        let j = jacobian_full(&ybus, op, net.reference);
        let ref_idx = net.reference_index();
        let keep: Vec<usize> = (0..net.n_buses()).filter(|&i| i != ref_idx).collect();
        let h = 1e-5;
        for (row, &m) in keep.iter().enumerate() {
            for (col, &k) in keep.iter().enumerate() {
                let mut up = op.theta.clone();
                let mut dn = op.theta.clone();
                up[k] += h;
                dn[k] -= h;
                let fd = (power_injection(net, &ybus, &up, &op.vmag, m)
                    - power_injection(net, &ybus, &dn, &op.vmag, m))
                    / (2.0 * h);
                let jv = j.matrix[(row, col)];
                let denom = jv.abs().max(1.0);
                assert!(
                    ((jv - fd) / denom).abs() < tol,
                    "entry ({m},{k}): jacobian {jv} vs finite difference {fd}"
                );
            }
        }
    }

    #[test]
    fn finite_difference_oracle_on_random_networks() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xFD0);
        for _ in 0..5 {
            let net = random_network(&mut rng, 12);
            let base = net.base_point();
            let mut op = base.clone();
            for t in op.theta.iter_mut() {
                *t += rng.random_range(-0.3..0.3);
            }
            fd_check(&net, &op, 1e-5);
        }
    }

    #[test]
    fn row_sums_vanish_before_reference_deletion() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xA11);
        for _ in 0..5 {
            let net = random_network(&mut rng, 15);
            let ybus = build_ybus(&net);
            let op = net.base_point();
            let full = assemble_pre_deletion(&ybus, &op, &op, None);
            let n = net.n_buses();
            for m in 0..n {
                let sum: f64 = (0..n).map(|k| full[(m, k)]).sum();
                assert!(sum.abs() < 1e-10, "row {m} sums to {sum:e}");
            }
        }
    }

    #[test]
    fn full_mask_reproduces_unmasked_bitwise() {
        let net = case39();
        let ybus = build_ybus(&net);
        let base = net.base_point();
        let mut live = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for t in live.theta.iter_mut() {
            *t += rng.random_range(-0.05..0.05);
        }
        let ones = Placement::all_ones(net.n_buses());
        let masked = jacobian_masked(&ybus, &base, &live, &ones, net.reference);
        let full = jacobian_full(&ybus, &live, net.reference);
        assert_eq!(masked, full);
    }

    #[test]
    fn live_equals_base_masks_to_base_for_any_placement() {
        let net = case39();
        let ybus = build_ybus(&net);
        let base = net.base_point();
        let full_at_base = jacobian_full(&ybus, &base, net.reference);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..5 {
            let bits: Vec<bool> = (0..net.n_buses()).map(|_| rng.random_bool(0.5)).collect();
            let placement = Placement::from_bits(bits).unwrap();
            let masked = jacobian_masked(&ybus, &base, &base, &placement, net.reference);
            assert_eq!(masked, full_at_base);
        }
    }

    #[test]
    fn masking_touches_only_unobserved_rows_and_columns() {
        let net = case39();
        let ybus = build_ybus(&net);
        let base = net.base_point();
        let mut live = base.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(0x5CA7);
        for t in live.theta.iter_mut() {
            *t += rng.random_range(-0.05..0.05);
        }
        // A scattered 20-bus placement.
        let ids = [1, 2, 5, 7, 9, 11, 13, 14, 16, 17, 19, 21, 23, 24, 26, 27, 30, 32, 34, 37];
        let placement = Placement::from_bus_ids(&net, &ids).unwrap();
        let masked = jacobian_masked(&ybus, &base, &live, &placement, net.reference);
        let full = jacobian_full(&ybus, &live, net.reference);

        let observed = |id: u32| ids.contains(&id);
        let neighbors_observed = |id: u32| {
            net.branches
                .iter()
                .filter(|br| br.in_service && (br.from == id || br.to == id))
                .all(|br| observed(br.from) && observed(br.to))
        };
        for (i, &bi) in masked.bus_order.iter().enumerate() {
            for (j, &bj) in masked.bus_order.iter().enumerate() {
                let (a, b) = (masked.matrix[(i, j)], full.matrix[(i, j)]);
                if i != j && observed(bi) && observed(bj) {
                    assert_eq!(a, b, "off-diagonal ({bi},{bj}) should be untouched");
                }
                if i == j && observed(bi) && neighbors_observed(bi) {
                    assert_eq!(a, b, "diagonal ({bi}) should be untouched");
                }
            }
        }
        assert_ne!(masked, full, "a partial placement must change something");
    }

    #[test]
    fn scalar_angle_covariance() {
        let j = JacobianMatrix {
            matrix: DMatrix::from_element(1, 1, 10.0),
            bus_order: vec![2],
        };
        let c = angle_covariance(&j, 0.01, 1.0 / 30.0).unwrap();
        assert_relative_eq!(c.matrix[(0, 0)], 1e-4 / 30.0 / 100.0, max_relative = 1e-12);
    }

    #[test]
    fn covariance_eigenvalues_nonnegative() {
        let net = case39();
        let ybus = build_ybus(&net);
        let j = jacobian_full(&ybus, &net.base_point(), net.reference);
        let c = angle_covariance(&j, 0.01, 1.0 / 30.0).unwrap();
        let eig = c.matrix.clone().symmetric_eigen();
        for ev in eig.eigenvalues.iter() {
            assert!(*ev >= -1e-18, "eigenvalue {ev:e} below zero");
        }
    }

    #[test]
    fn covariance_multiplies_back_to_identity() {
        let net = case39();
        let ybus = build_ybus(&net);
        let j = jacobian_full(&ybus, &net.base_point(), net.reference);
        let sigma = 0.01;
        let dt = 1.0 / 30.0;
        let c = angle_covariance(&j, sigma, dt).unwrap();
        let gram = j.matrix.transpose() * &j.matrix;
        let product = &c.matrix * gram / (sigma * sigma * dt);
        let n = product.nrows();
        for i in 0..n {
            for k in 0..n {
                let expect = if i == k { 1.0 } else { 0.0 };
                assert!(
                    (product[(i, k)] - expect).abs() < 1e-8,
                    "({i},{k}) = {}",
                    product[(i, k)]
                );
            }
        }
    }

    #[test]
    fn singular_jacobian_is_rejected() {
        let j = JacobianMatrix {
            matrix: DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]),
            bus_order: vec![2, 3],
        };
        assert!(matches!(
            angle_covariance(&j, 0.01, 1.0 / 30.0),
            Err(JacobianError::Singular { .. })
        ));
    }

    #[test]
    fn norm_plan_agrees_with_dense_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(0xF0F0);
        for _ in 0..5 {
            let net = random_network(&mut rng, 15);
            let ybus = build_ybus(&net);
            let base = net.base_point();
            let mut live = base.clone();
            for t in live.theta.iter_mut() {
                *t += rng.random_range(-0.2..0.2);
            }
            let plan = NormPlan::new(&ybus, net.reference);
            let dense_full = frobenius_norm(&jacobian_full(&ybus, &live, net.reference).matrix);
            let fast_full = plan.norm(&base, &live, None);
            assert_relative_eq!(dense_full, fast_full, max_relative = 1e-12);

            let bits: Vec<bool> = (0..net.n_buses()).map(|_| rng.random_bool(0.5)).collect();
            let placement = Placement::from_bits(bits.clone()).unwrap();
            let dense_masked = frobenius_norm(
                &jacobian_masked(&ybus, &base, &live, &placement, net.reference).matrix,
            );
            let fast_masked = plan.norm(&base, &live, Some(&bits));
            assert_relative_eq!(dense_masked, fast_masked, max_relative = 1e-12);
        }
    }

    #[test]
    fn frobenius_examples() {
        assert_relative_eq!(
            frobenius_norm(&DMatrix::identity(3, 3)),
            3.0_f64.sqrt(),
            max_relative = 1e-15
        );
        assert_eq!(
            frobenius_norm(&DMatrix::from_row_slice(2, 2, &[3.0, 4.0, 0.0, 0.0])),
            5.0
        );
        assert_eq!(frobenius_norm(&DMatrix::zeros(4, 4)), 0.0);
    }
}
