//! The inversion, product and addition interferometers.
//!
//! Mode layout (0-based): qubit 1 on modes 0,1 with `z1` on mode 0, qubit 2
//! on modes 2,3 with `z2` on mode 2. The output qubit is read from modes 0
//! (rail `|0⟩`) and 3 (rail `|1⟩`); modes 1 and 2 are heralds.

use std::f64::consts::FRAC_1_SQRT_2;

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fock::{evolve, postselect, FockVector, PostSelected, UnitaryMatrix};
use crate::qubit::{field_add, field_harmonic, field_inv, field_mul, field_neg, FieldResult, RiemannPoint};

/// Reflectivity `(5+√5)/10` of the addition block's splitters.
pub const R_GOLDEN: f64 = 0.723_606_797_749_978_9;

pub const OUTPUT_RAIL_0: usize = 0;
pub const OUTPUT_RAIL_1: usize = 3;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockKind {
    Product,
    Addition,
}

/// Post-selection branch of a block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum BranchLabel {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
    #[serde(rename = "S")]
    Sum,
    #[serde(rename = "I")]
    Harmonic,
}

impl BranchLabel {
    /// Target field operation of this branch.
    pub fn apply(self, z1: &RiemannPoint, z2: &RiemannPoint) -> FieldResult {
        match self {
            BranchLabel::Plus => field_mul(z1, z2),
            BranchLabel::Minus => field_mul(z1, z2).and_then(|p| field_neg(&p)),
            BranchLabel::Sum => field_add(z1, z2),
            BranchLabel::Harmonic => field_harmonic(z1, z2),
        }
    }

    pub fn symbol(self) -> &'static str {
        match self {
            BranchLabel::Plus => "+",
            BranchLabel::Minus => "-",
            BranchLabel::Sum => "S",
            BranchLabel::Harmonic => "I",
        }
    }
}

impl std::fmt::Display for BranchLabel {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.symbol())
    }
}

/// A branch fires when the single herald photon lands on `herald_mode`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchRule {
    pub herald_mode: usize,
    pub label: BranchLabel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockUnitary {
    pub matrix: UnitaryMatrix,
    pub kind: BlockKind,
    pub phases: Vec<f64>,
    pub branch_rules: Vec<BranchRule>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BranchOutcome {
    pub branch: BranchLabel,
    pub output: FieldResult,
    pub probability: f64,
}

/// `z -> 1/z` by exchanging the two rails.
pub fn inversion(z: &RiemannPoint) -> RiemannPoint {
    field_inv(z).point().expect("inversion is total on the sphere")
}

fn cis(x: f64) -> C64 {
    C64::from_polar(1.0, x)
}

fn product_rules() -> Vec<BranchRule> {
    vec![
        BranchRule {
            herald_mode: 2,
            label: BranchLabel::Plus,
        },
        BranchRule {
            herald_mode: 1,
            label: BranchLabel::Minus,
        },
    ]
}

/// Balanced mixer between the `|1⟩` rail of qubit 1 and the `|0⟩` rail of
/// qubit 2, with free phases `[φ1, φ2, φ3, φ4]`.
pub fn product_unitary(phases: [f64; 4]) -> BlockUnitary {
    let [p1, p2, p3, p4] = phases;
    let s = FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        cis(p1 + p2 - p3), z, z, z,
        z, -cis(p2) * s, cis(p3) * s, z,
        z, cis(-(p3 + p4)) * s, cis(-(p2 + p4)) * s, z,
        z, z, z, cis(p1),
    ]);
    BlockUnitary {
        matrix: UnitaryMatrix::new(m).expect("product matrix is unitary"),
        kind: BlockKind::Product,
        phases: phases.to_vec(),
        branch_rules: product_rules(),
    }
}

/// The product solution with the roles of the two input qubits exchanged.
pub fn product_unitary_swapped(phases: [f64; 4]) -> BlockUnitary {
    let [p1, p2, p3, p4] = phases;
    let s = FRAC_1_SQRT_2;
    let z = C64::new(0.0, 0.0);
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        z, z, cis(p1 + p2 - p3), z,
        cis(p3) * s, z, z, -cis(p2) * s,
        cis(-(p2 + p4)) * s, z, z, cis(-(p3 + p4)) * s,
        z, cis(p1), z, z,
    ]);
    BlockUnitary {
        matrix: UnitaryMatrix::new(m).expect("product matrix is unitary"),
        kind: BlockKind::Product,
        phases: phases.to_vec(),
        branch_rules: product_rules(),
    }
}

/// Two unbalanced splitters (reflectivity [`R_GOLDEN`]) mixing the `|0⟩`
/// rails and the `|1⟩` rails, with free phases `[φ1, φ2, φ5, φ6]`.
pub fn addition_unitary(phases: [f64; 4]) -> BlockUnitary {
    let a = (5.0 + 5f64.sqrt()).sqrt() / 10f64.sqrt();
    let b = (5.0 - 5f64.sqrt()).sqrt() / 10f64.sqrt();
    addition_matrix(a, b, phases)
}

/// The addition geometry with an arbitrary splitter reflectivity `r`. Away
/// from [`R_GOLDEN`] the S branch outputs `√(RT)/(R−T)·(z1+z2)`.
pub fn addition_unitary_with_reflectivity(r: f64, phases: [f64; 4]) -> Result<BlockUnitary> {
    if !(r > 0.0 && r < 1.0) {
        return Err(Error::Parameter(format!("reflectivity {r} outside (0, 1)")));
    }
    Ok(addition_matrix(r.sqrt(), (1.0 - r).sqrt(), phases))
}

fn addition_matrix(a: f64, b: f64, phases: [f64; 4]) -> BlockUnitary {
    let [p1, p2, p5, p6] = phases;
    let z = C64::new(0.0, 0.0);
    #[rustfmt::skip]
    let m = DMatrix::from_row_slice(4, 4, &[
        -cis(p1) * a, z, cis(p2) * b, z,
        cis(-(p2 + p5)) * b, z, cis(-(p1 + p5)) * a, z,
        z, -cis(-(p2 + p6)) * a, z, cis(-(p1 + p6)) * b,
        z, cis(p1) * b, z, cis(p2) * a,
    ]);
    BlockUnitary {
        matrix: UnitaryMatrix::new(m).expect("addition matrix is unitary"),
        kind: BlockKind::Addition,
        phases: phases.to_vec(),
        branch_rules: vec![
            BranchRule {
                herald_mode: 2,
                label: BranchLabel::Sum,
            },
            BranchRule {
                herald_mode: 1,
                label: BranchLabel::Harmonic,
            },
        ],
    }
}

/// Two-photon dual-rail input `|z1⟩ ⊗ |z2⟩` on four modes.
pub fn block_input(z1: &RiemannPoint, z2: &RiemannPoint) -> FockVector {
    FockVector::from_creation_product(
        4,
        &[
            vec![(0, z1.alpha()), (1, z1.beta())],
            vec![(2, z2.alpha()), (3, z2.beta())],
        ],
    )
    .expect("four-mode input is well formed")
}

/// Kept modes and herald pattern for a single-herald branch.
fn herald_pattern(herald_mode: usize) -> Vec<u8> {
    // complement of {0, 3} is {1, 2}
    match herald_mode {
        1 => vec![1, 0],
        2 => vec![0, 1],
        _ => unreachable!("heralds live on modes 1 and 2"),
    }
}

/// Brute-force Fock simulation of every branch, without short-circuiting.
pub fn simulate_block(
    block: &BlockUnitary,
    z1: &RiemannPoint,
    z2: &RiemannPoint,
) -> Result<Vec<(BranchLabel, PostSelected)>> {
    let out = evolve(&block.matrix, &block_input(z1, z2))?;
    block
        .branch_rules
        .iter()
        .map(|r| {
            if r.herald_mode != 1 && r.herald_mode != 2 {
                return Err(Error::PostSelection(format!(
                    "herald mode {} is not 1 or 2",
                    r.herald_mode
                )));
            }
            let ps = postselect(&out, &[OUTPUT_RAIL_0, OUTPUT_RAIL_1], &herald_pattern(r.herald_mode))?;
            Ok((r.label, ps))
        })
        .collect()
}

/// Output qubit carried by a post-selected one-photon state on the rails.
pub fn rail_qubit(state: &FockVector) -> FieldResult {
    use crate::fock::FockState;
    let a = state.amplitude(&FockState::new(vec![1, 0]));
    let b = state.amplitude(&FockState::new(vec![0, 1]));
    RiemannPoint::from_pair(a, b).map_or(FieldResult::Indeterminate, FieldResult::Point)
}

/// Branch table of `block` for inputs `(z1, z2)`. Branches whose target is
/// indeterminate are reported with probability 0 without simulation.
pub fn run_block(block: &BlockUnitary, z1: &RiemannPoint, z2: &RiemannPoint) -> Result<Vec<BranchOutcome>> {
    let targets: Vec<FieldResult> = block.branch_rules.iter().map(|r| r.label.apply(z1, z2)).collect();
    if targets.iter().all(FieldResult::is_indeterminate) {
        return Ok(block
            .branch_rules
            .iter()
            .map(|r| BranchOutcome {
                branch: r.label,
                output: FieldResult::Indeterminate,
                probability: 0.0,
            })
            .collect());
    }
    let sim = simulate_block(block, z1, z2)?;
    Ok(sim
        .into_iter()
        .zip(targets)
        .map(|((label, ps), target)| match (target, ps.state) {
            (FieldResult::Indeterminate, _) | (_, None) => BranchOutcome {
                branch: label,
                output: FieldResult::Indeterminate,
                probability: 0.0,
            },
            (FieldResult::Point(_), Some(state)) => BranchOutcome {
                branch: label,
                output: rail_qubit(&state),
                probability: ps.probability,
            },
        })
        .collect())
}

/// Per-branch success probability `P+ = P−` of the product block.
pub fn p_product(z1: &RiemannPoint, z2: &RiemannPoint) -> f64 {
    let num = (z1.alpha() * z2.alpha()).norm_sqr() + (z1.beta() * z2.beta()).norm_sqr();
    num / 2.0
}

/// `(P_S, P_I)` of the addition block.
pub fn p_addition(z1: &RiemannPoint, z2: &RiemannPoint) -> (f64, f64) {
    let sum = (z1.alpha() * z2.beta() + z2.alpha() * z1.beta()).norm_sqr();
    let prod = (z1.alpha() * z2.alpha()).norm_sqr();
    let den = (z1.beta() * z2.beta()).norm_sqr();
    ((sum + den) / 5.0, (sum + prod) / 5.0)
}

/// Residuals of a set of algebraic conditions on a 4×4 unitary.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionReport {
    pub residuals: Vec<f64>,
    /// The quantity required to be nonzero by the last condition.
    pub common_value: C64,
}

impl ConditionReport {
    pub fn max_residual(&self) -> f64 {
        self.residuals.iter().copied().fold(0.0, f64::max)
    }

    pub fn common_nonzero(&self, tol: f64) -> bool {
        self.common_value.norm() > tol
    }

    pub fn passes(&self, tol: f64) -> bool {
        self.max_residual() < tol && self.common_nonzero(tol)
    }
}

fn entries(u: &DMatrix<C64>) -> Result<impl Fn(usize, usize) -> C64 + '_> {
    if u.nrows() != 4 || u.ncols() != 4 {
        return Err(Error::Dimension {
            expected: 4,
            got: u.nrows().max(u.ncols()),
        });
    }
    Ok(move |i: usize, j: usize| u[(i - 1, j - 1)])
}

/// The seven conditions for the output to be `z1·z2` on the first/last
/// modes with the herald on the third mode.
pub fn check_product_conditions(u: &DMatrix<C64>) -> Result<ConditionReport> {
    let e = entries(u)?;
    let lhs7 = e(4, 2) * e(3, 4) + e(4, 4) * e(3, 2);
    let rhs7 = e(1, 1) * e(3, 3) + e(3, 1) * e(1, 3);
    Ok(ConditionReport {
        residuals: vec![
            (e(1, 2) * e(3, 4) + e(3, 2) * e(1, 4)).norm(),
            (e(1, 1) * e(3, 4) + e(3, 1) * e(1, 4)).norm(),
            (e(4, 1) * e(3, 4) + e(4, 4) * e(3, 1)).norm(),
            (e(1, 3) * e(3, 2) + e(1, 2) * e(3, 3)).norm(),
            (e(4, 3) * e(3, 2) + e(4, 2) * e(3, 3)).norm(),
            (e(4, 1) * e(3, 3) + e(4, 3) * e(3, 1)).norm(),
            (lhs7 - rhs7).norm(),
        ],
        common_value: rhs7,
    })
}

/// The six conditions for the output to be `z1 + z2`.
pub fn check_sum_conditions(u: &DMatrix<C64>) -> Result<ConditionReport> {
    let e = entries(u)?;
    let a = e(4, 2) * e(3, 4) + e(4, 4) * e(3, 2);
    let b = e(1, 1) * e(3, 4) + e(3, 1) * e(1, 4);
    let c = e(1, 3) * e(3, 2) + e(1, 2) * e(3, 3);
    Ok(ConditionReport {
        residuals: vec![
            (e(1, 2) * e(3, 4) + e(3, 2) * e(1, 4)).norm(),
            (e(4, 1) * e(3, 4) + e(4, 4) * e(3, 1)).norm(),
            (e(4, 3) * e(3, 2) + e(4, 2) * e(3, 3)).norm(),
            (e(1, 1) * e(3, 3) + e(3, 1) * e(1, 3)).norm(),
            (e(4, 1) * e(3, 3) + e(4, 3) * e(3, 1)).norm(),
            (a - b).norm().max((b - c).norm()),
        ],
        common_value: b,
    })
}

#[derive(Serialize)]
struct BlockJson<'a> {
    kind: BlockKind,
    phases: &'a [f64],
    matrix: Vec<Vec<[f64; 2]>>,
    branch_rules: &'a [BranchRule],
}

impl Serialize for BlockUnitary {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let m = self.matrix.matrix();
        BlockJson {
            kind: self.kind,
            phases: &self.phases,
            matrix: (0..m.nrows())
                .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                .collect(),
            branch_rules: &self.branch_rules,
        }
        .serialize(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fock::unitarity_deviation;
    use crate::qubit::fidelity_pure;
    use approx::assert_abs_diff_eq;

    fn real(x: f64) -> RiemannPoint {
        RiemannPoint::real(x)
    }

    fn outcome(v: &[BranchOutcome], l: BranchLabel) -> BranchOutcome {
        *v.iter().find(|o| o.branch == l).unwrap()
    }

    #[test]
    fn golden_constant() {
        assert_abs_diff_eq!(R_GOLDEN, (5.0 + 5f64.sqrt()) / 10.0, epsilon = 1e-16);
    }

    #[test]
    fn inversion_examples() {
        assert!(inversion(&RiemannPoint::zero()).is_infinite());
        assert_abs_diff_eq!(inversion(&real(2.0)).value().unwrap().re, 0.5, epsilon = 1e-15);
    }

    #[test]
    fn product_matrix_at_zero_phase() {
        let u = product_unitary([0.0; 4]);
        let m = u.matrix.matrix();
        let s = FRAC_1_SQRT_2;
        assert_eq!(m[(0, 0)], C64::new(1.0, 0.0));
        assert_eq!(m[(3, 3)], C64::new(1.0, 0.0));
        assert_abs_diff_eq!(m[(1, 1)].re, -s);
        assert_abs_diff_eq!(m[(1, 2)].re, s);
        assert_abs_diff_eq!(m[(2, 1)].re, s);
        assert_abs_diff_eq!(m[(2, 2)].re, s);
        assert!(unitarity_deviation(m) < 1e-15);
    }

    #[test]
    fn swapped_product_is_column_exchange() {
        let ph = [0.3, -1.1, 2.0, 0.7];
        let a = product_unitary(ph).matrix.into_inner();
        let b = product_unitary_swapped(ph).matrix.into_inner();
        for i in 0..4 {
            for (j, k) in [(0, 2), (1, 3), (2, 0), (3, 1)] {
                assert_abs_diff_eq!((a[(i, j)] - b[(i, k)]).norm(), 0.0, epsilon = 1e-15);
            }
        }
    }

    #[test]
    fn addition_matrix_moduli() {
        let u = addition_unitary([0.0; 4]);
        let m = u.matrix.matrix();
        assert!(unitarity_deviation(m) < 1e-15);
        for x in m.iter() {
            let p = x.norm_sqr();
            assert!(p < 1e-30 || (p - R_GOLDEN).abs() < 1e-15 || (p - (1.0 - R_GOLDEN)).abs() < 1e-15);
        }
    }

    #[test]
    fn golden_identity() {
        let (r, t) = (R_GOLDEN, 1.0 - R_GOLDEN);
        assert_abs_diff_eq!(r * t / (r - t).powi(2), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn run_block_examples() {
        let v = run_block(&product_unitary([0.0; 4]), &real(1.0), &real(1.0)).unwrap();
        let p = outcome(&v, BranchLabel::Plus);
        let m = outcome(&v, BranchLabel::Minus);
        assert_abs_diff_eq!(p.probability, 0.25, epsilon = 1e-12);
        assert_abs_diff_eq!(m.probability, 0.25, epsilon = 1e-12);
        assert!(fidelity_pure(&p.output.point().unwrap(), &real(1.0)) > 1.0 - 1e-12);
        assert!(fidelity_pure(&m.output.point().unwrap(), &real(-1.0)) > 1.0 - 1e-12);

        let v = run_block(&addition_unitary([0.0; 4]), &real(0.0), &real(0.0)).unwrap();
        let s = outcome(&v, BranchLabel::Sum);
        assert_abs_diff_eq!(s.probability, 0.2, epsilon = 1e-12);
        assert!(fidelity_pure(&s.output.point().unwrap(), &real(0.0)) > 1.0 - 1e-12);
        assert!(outcome(&v, BranchLabel::Harmonic).output.is_indeterminate());

        let v = run_block(&product_unitary([0.0; 4]), &real(0.0), &RiemannPoint::infinity()).unwrap();
        assert!(v.iter().all(|o| o.probability == 0.0 && o.output.is_indeterminate()));
    }

    #[test]
    fn fock_oracle_confirms_zero_probability_at_critical_pair() {
        let sim = simulate_block(&product_unitary([0.0; 4]), &real(0.0), &RiemannPoint::infinity()).unwrap();
        assert!(sim.iter().all(|(_, ps)| ps.probability < 1e-30));
    }

    #[test]
    fn probability_examples() {
        assert_abs_diff_eq!(p_product(&real(0.0), &real(0.0)), 0.5, epsilon = 1e-15);
        assert_abs_diff_eq!(p_product(&real(1.0), &real(1.0)), 0.25, epsilon = 1e-15);
        assert_eq!(p_product(&real(0.0), &RiemannPoint::infinity()), 0.0);
        assert_eq!(p_addition(&real(0.0), &real(0.0)), (0.2, 0.0));
        let inf = RiemannPoint::infinity();
        let (s, i) = p_addition(&inf, &inf);
        assert_eq!(s, 0.0);
        assert_abs_diff_eq!(i, 0.2, epsilon = 1e-15);
        let (s, i) = p_addition(&real(1.0), &real(1.0));
        assert_abs_diff_eq!(s, 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(i, 0.25, epsilon = 1e-15);
    }

    #[test]
    fn condition_checkers() {
        let prod = product_unitary([0.0; 4]).matrix.into_inner();
        let sum = addition_unitary([0.0; 4]).matrix.into_inner();
        let id = DMatrix::<C64>::identity(4, 4);

        let r = check_product_conditions(&prod).unwrap();
        assert!(r.passes(1e-12));
        assert_abs_diff_eq!(r.common_value.norm(), FRAC_1_SQRT_2, epsilon = 1e-15);

        let r = check_product_conditions(&id).unwrap();
        assert_abs_diff_eq!(r.residuals[6], 1.0);
        assert!(!r.passes(1e-12));

        assert!(check_sum_conditions(&sum).unwrap().passes(1e-12));
        let r = check_sum_conditions(&prod).unwrap();
        assert!(r.residuals[5] > 0.1);
        let r = check_sum_conditions(&id).unwrap();
        assert_eq!(r.common_value, C64::new(0.0, 0.0));
        assert!(!r.common_nonzero(1e-12));
    }

    #[test]
    fn checkers_reject_wrong_shape() {
        assert!(check_product_conditions(&DMatrix::<C64>::identity(3, 3)).is_err());
    }

    #[test]
    fn block_json_layout() {
        let v = serde_json::to_value(product_unitary([0.0; 4])).unwrap();
        assert_eq!(v["kind"], "product");
        assert_eq!(v["matrix"][0][0][0], 1.0);
        assert_eq!(v["branch_rules"][0]["label"], "+");
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use crate::fock::basis;
    use crate::qubit::fidelity_pure;
    use crate::testutil::point;
    use proptest::prelude::*;
    use std::f64::consts::TAU;

    fn same_output(a: &FieldResult, b: &FieldResult) -> bool {
        match (a.point(), b.point()) {
            (Some(x), Some(y)) => fidelity_pure(&x, &y) > 1.0 - 1e-12,
            (None, None) => true,
            _ => false,
        }
    }

    fn phases() -> impl Strategy<Value = [f64; 4]> {
        [0.0..TAU, 0.0..TAU, 0.0..TAU, 0.0..TAU]
    }

    fn is_pole(z: &RiemannPoint, zero: bool) -> bool {
        if zero {
            z.alpha().norm() == 0.0
        } else {
            z.beta().norm() == 0.0
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn formulas_and_outputs_agree_with_fock(z1 in point(), z2 in point()) {
            let pp = p_product(&z1, &z2);
            for o in run_block(&product_unitary([0.0; 4]), &z1, &z2).unwrap() {
                prop_assert!((o.probability - pp).abs() < 1e-12);
                prop_assert!(same_output(&o.output, &o.branch.apply(&z1, &z2)) || o.probability == 0.0);
            }
            let (ps, pi) = p_addition(&z1, &z2);
            for o in run_block(&addition_unitary([0.0; 4]), &z1, &z2).unwrap() {
                let want = if o.branch == BranchLabel::Sum { ps } else { pi };
                prop_assert!((o.probability - want).abs() < 1e-12);
                prop_assert!(same_output(&o.output, &o.branch.apply(&z1, &z2)) || o.probability == 0.0);
            }
        }

        #[test]
        fn detection_patterns_are_exhaustive(z1 in point(), z2 in point()) {
            for block in [product_unitary([0.0; 4]), addition_unitary([0.0; 4])] {
                let out = evolve(&block.matrix, &block_input(&z1, &z2)).unwrap();
                let mut total = 0.0;
                let mut branches = 0.0;
                for k in 0..=2 {
                    for pattern in basis(2, k).iter() {
                        let p = postselect(&out, &[OUTPUT_RAIL_0, OUTPUT_RAIL_1], pattern.occupations()).unwrap().probability;
                        total += p;
                        if k == 1 {
                            branches += p;
                        }
                    }
                }
                let from_rules: f64 = simulate_block(&block, &z1, &z2).unwrap().iter().map(|(_, s)| s.probability).sum();
                prop_assert!((total - 1.0).abs() < 1e-12);
                prop_assert!((branches - from_rules).abs() < 1e-12);
            }
        }

        #[test]
        fn free_phases_only_change_global_phase(z1 in point(), z2 in point(), ph in phases()) {
            for (a, b) in [
                (product_unitary([0.0; 4]), product_unitary(ph)),
                (addition_unitary([0.0; 4]), addition_unitary(ph)),
            ] {
                for (x, y) in run_block(&a, &z1, &z2).unwrap().iter().zip(run_block(&b, &z1, &z2).unwrap()) {
                    prop_assert!(same_output(&x.output, &y.output));
                    prop_assert!((x.probability - y.probability).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn zero_sets_and_bounds(z1 in point(), z2 in point()) {
            let pp = p_product(&z1, &z2);
            let (ps, pi) = p_addition(&z1, &z2);
            let critical_product = (is_pole(&z1, true) && is_pole(&z2, false)) || (is_pole(&z1, false) && is_pole(&z2, true));
            prop_assert_eq!(pp == 0.0, critical_product);
            prop_assert_eq!(ps == 0.0, is_pole(&z1, false) && is_pole(&z2, false));
            prop_assert_eq!(pi == 0.0, is_pole(&z1, true) && is_pole(&z2, true));
            prop_assert!(pp <= 0.5 + 1e-15);
            // Both addition branches peak at 4/15.
            prop_assert!(ps <= 4.0 / 15.0 + 1e-15 && pi <= 4.0 / 15.0 + 1e-15);
        }
    }

    #[test]
    fn probability_suprema_are_attained() {
        let one = RiemannPoint::real(1.0);
        let zero = RiemannPoint::zero();
        assert_eq!(p_product(&zero, &zero), 0.5);
        assert!((p_product(&one, &one) - 0.25).abs() < 1e-15);
        let x = RiemannPoint::real(0.5f64.sqrt());
        let y = RiemannPoint::real(2f64.sqrt());
        let (ps, _) = p_addition(&x, &x);
        let (_, pi) = p_addition(&y, &y);
        assert!((ps - 4.0 / 15.0).abs() < 1e-15 && (pi - 4.0 / 15.0).abs() < 1e-15);
        let mut best = 0.0f64;
        for i in 0..200 {
            for j in 0..200 {
                let a = RiemannPoint::from_bloch(std::f64::consts::PI * i as f64 / 199.0, 0.0);
                let b = RiemannPoint::from_bloch(std::f64::consts::PI * j as f64 / 199.0, 0.0);
                best = best.max(p_addition(&a, &b).0);
            }
        }
        assert!(best <= 4.0 / 15.0 + 1e-15 && best > 0.26);
    }
}
