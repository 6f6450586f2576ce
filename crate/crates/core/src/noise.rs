//! Partial photon distinguishability.
//!
//! Two models live here. The closed forms describe a single two-photon block
//! as a function of the overlap `C_I` (the HOM visibility `|⟨ψ1|ψ2⟩|²`).
//! [`simulate_partial`] is a general Gram-matrix simulator: every photon
//! carries an internal state, pairwise inner products are the Gram entries,
//! and internal labels are traced out at detection.
//!
//! All closed forms are written in homogeneous coordinates so that `z = ∞`
//! needs no special casing: with normalized pairs `(a_k, b_k)` the products
//! `p = a1a2`, `u = a1b2`, `v = a2b1`, `w = b1b2` replace `z1z2`, `z1`, `z2`
//! and `1` after multiplying through by `|b1b2|²`.

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize, Serializer};

use crate::blocks::{BlockUnitary, BranchLabel, OUTPUT_RAIL_0, OUTPUT_RAIL_1};
use crate::error::{Error, Result};
use crate::fock::{ComplexEntry, UnitaryMatrix};
use crate::mesh::Preset;
use crate::qubit::{fidelity_mixed, FieldResult, QubitDensity, RiemannPoint};

/// Tolerance on Gram-matrix negativity.
pub const TOL_PSD: f64 = 1e-10;
/// Largest photon number accepted by [`simulate_partial`].
pub const MAX_PARTIAL_PHOTONS: usize = 3;

/// Below this trace an output is treated as never heralded.
const TRACE_FLOOR: f64 = 1e-28;

/// Pairwise wave-function overlaps of the input photons.
///
/// `gram`, when present, wins. Otherwise the matrix is built from the two
/// scalars: photons 1 and 2 share a source pair (`c_same_pair`), every other
/// pair of photons has overlap `c_cross_pair`. Both scalars are Gram entries,
/// i.e. amplitude overlaps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OverlapSpec {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gram: Option<Vec<Vec<ComplexEntry>>>,
    #[serde(default = "one")]
    pub c_same_pair: f64,
    #[serde(default = "one")]
    pub c_cross_pair: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for OverlapSpec {
    fn default() -> Self {
        Self::identical()
    }
}

impl OverlapSpec {
    /// Perfectly indistinguishable photons.
    pub fn identical() -> Self {
        Self::pairs(1.0, 1.0)
    }

    pub fn pairs(c_same_pair: f64, c_cross_pair: f64) -> Self {
        OverlapSpec {
            gram: None,
            c_same_pair,
            c_cross_pair,
        }
    }

    /// Two photons with HOM visibility `c_i`.
    pub fn two_photon(c_i: f64) -> Result<Self> {
        check_unit("C_I", c_i)?;
        Ok(Self::pairs(c_i.sqrt(), 1.0))
    }

    pub fn from_gram(g: &DMatrix<C64>) -> Self {
        let rows = (0..g.nrows())
            .map(|i| (0..g.ncols()).map(|j| ComplexEntry::from(g[(i, j)])).collect())
            .collect();
        OverlapSpec {
            gram: Some(rows),
            c_same_pair: 1.0,
            c_cross_pair: 1.0,
        }
    }

    /// The validated Gram matrix for `n` photons.
    pub fn gram_matrix(&self, n: usize) -> Result<DMatrix<C64>> {
        let g = match &self.gram {
            Some(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(Error::Dimension {
                        expected: n,
                        got: rows.len(),
                    });
                }
                DMatrix::from_fn(n, n, |i, j| rows[i][j].value())
            }
            None => {
                check_unit("c_same_pair", self.c_same_pair.abs())?;
                check_unit("c_cross_pair", self.c_cross_pair.abs())?;
                DMatrix::from_fn(n, n, |i, j| {
                    let x = if i == j {
                        1.0
                    } else if i.max(j) == 1 {
                        self.c_same_pair
                    } else {
                        self.c_cross_pair
                    };
                    C64::new(x, 0.0)
                })
            }
        };
        validate_gram(&g)?;
        Ok(g)
    }
}

fn check_unit(name: &str, x: f64) -> Result<()> {
    if (0.0..=1.0).contains(&x) {
        Ok(())
    } else {
        Err(Error::Parameter(format!("{name} = {x} outside [0, 1]")))
    }
}

/// Checks unit diagonal, Hermiticity, `|g_ij| ≤ 1` and positivity.
pub fn validate_gram(g: &DMatrix<C64>) -> Result<()> {
    if g.nrows() != g.ncols() {
        return Err(Error::NotSquare {
            rows: g.nrows(),
            cols: g.ncols(),
        });
    }
    let n = g.nrows();
    for i in 0..n {
        if (g[(i, i)] - C64::new(1.0, 0.0)).norm() > TOL_PSD {
            return Err(Error::Parameter(format!("gram diagonal {i} is {}", g[(i, i)])));
        }
        for j in 0..n {
            if (g[(i, j)] - g[(j, i)].conj()).norm() > TOL_PSD {
                return Err(Error::Parameter("gram matrix is not Hermitian".into()));
            }
            if g[(i, j)].norm() > 1.0 + TOL_PSD {
                return Err(Error::Parameter(format!("|gram[{i}][{j}]| > 1")));
            }
        }
    }
    let lo = g
        .clone()
        .symmetric_eigenvalues()
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    if lo < -TOL_PSD {
        return Err(Error::NotPsd(lo));
    }
    Ok(())
}

/// Internal-state vectors as the columns of `B` with `B†B = G`.
fn internal_vectors(g: &DMatrix<C64>) -> Result<DMatrix<C64>> {
    validate_gram(g)?;
    let eig = g.clone().symmetric_eigen();
    let kept: Vec<usize> = (0..g.nrows()).filter(|&k| eig.eigenvalues[k] > 1e-12).collect();
    Ok(DMatrix::from_fn(kept.len(), g.nrows(), |row, j| {
        let k = kept[row];
        eig.eigenvectors[(j, k)].conj() * eig.eigenvalues[k].sqrt()
    }))
}

/// A heralded output state.
#[derive(Debug, Clone, PartialEq)]
pub struct NoisyOutcome {
    pub branch: Vec<BranchLabel>,
    /// `None` when the branch is never heralded.
    pub rho: Option<QubitDensity>,
    pub probability: f64,
}

impl Serialize for NoisyOutcome {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        use serde::ser::SerializeStruct;
        let mut st = s.serialize_struct("NoisyOutcome", 3)?;
        let label: String = self.branch.iter().map(|l| l.symbol()).collect();
        st.serialize_field("branch", &label)?;
        st.serialize_field("rho", &self.rho)?;
        st.serialize_field("probability", &self.probability)?;
        st.end()
    }
}

impl NoisyOutcome {
    fn from_matrix(branch: Vec<BranchLabel>, m: Matrix2<C64>, probability: f64) -> Result<Self> {
        let tr = m[(0, 0)].re + m[(1, 1)].re;
        let rho = if tr > TRACE_FLOOR {
            Some(QubitDensity::from_unnormalized(m)?)
        } else {
            None
        };
        Ok(NoisyOutcome {
            branch,
            rho,
            probability: probability.clamp(0.0, 1.0),
        })
    }

    /// Fidelity of the output with `target`, `None` if never heralded.
    pub fn fidelity(&self, target: &RiemannPoint) -> Option<f64> {
        self.rho.as_ref().map(|r| fidelity_mixed(r, target))
    }
}

struct Hom {
    a1: C64,
    b1: C64,
    a2: C64,
    b2: C64,
    p: C64,
    u: C64,
    v: C64,
    w: C64,
}

impl Hom {
    fn new(z1: &RiemannPoint, z2: &RiemannPoint) -> Self {
        let (a1, b1, a2, b2) = (z1.alpha(), z1.beta(), z2.alpha(), z2.beta());
        Hom {
            a1,
            b1,
            a2,
            b2,
            p: a1 * a2,
            u: a1 * b2,
            v: a2 * b1,
            w: b1 * b2,
        }
    }
}

fn check_reflectivity(r: f64) -> Result<()> {
    if r > 0.0 && r < 1.0 {
        Ok(())
    } else {
        Err(Error::Parameter(format!("reflectivity {r} outside (0, 1)")))
    }
}

fn re(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Unnormalized `M±`: diagonal `|z1z2|², 1`, off-diagonal `±z1z2·C_I`.
fn product_matrix(h: &Hom, c: f64, sign: f64) -> Matrix2<C64> {
    let off = h.p * h.w.conj() * (sign * c);
    Matrix2::new(re(h.p.norm_sqr()), off, off.conj(), re(h.w.norm_sqr()))
}

pub fn product_density(z1: &RiemannPoint, z2: &RiemannPoint, c_i: f64, branch: BranchLabel) -> Result<NoisyOutcome> {
    check_unit("C_I", c_i)?;
    let sign = match branch {
        BranchLabel::Plus => 1.0,
        BranchLabel::Minus => -1.0,
        other => {
            return Err(Error::Parameter(format!(
                "branch {} is not a product branch",
                other.symbol()
            )))
        }
    };
    let m = product_matrix(&Hom::new(z1, z2), c_i, sign);
    let tr = m[(0, 0)].re + m[(1, 1)].re;
    NoisyOutcome::from_matrix(vec![branch], m, tr / 2.0)
}

/// `F± = 1 − 2|z1z2|²/(1+|z1z2|²)²·(1−C_I)`.
pub fn product_fidelity(z1: &RiemannPoint, z2: &RiemannPoint, c_i: f64) -> Result<f64> {
    check_unit("C_I", c_i)?;
    let h = Hom::new(z1, z2);
    let (pp, ww) = (h.p.norm_sqr(), h.w.norm_sqr());
    let den = (pp + ww) * (pp + ww);
    if den <= TRACE_FLOOR {
        return Err(Error::PostSelection("product is indeterminate".into()));
    }
    Ok(1.0 - 2.0 * pp * ww / den * (1.0 - c_i))
}

/// Unnormalized `M_S`. Qubit 1 is the photon weighted by `R` in the
/// distinguishable cross terms.
fn sum_matrix(h: &Hom, r: f64, c: f64) -> Matrix2<C64> {
    let t = 1.0 - r;
    let rt = r * t;
    let srt = rt.sqrt();
    let d = 1.0 - c;
    let m11 = rt * (h.u + h.v).norm_sqr() - 2.0 * rt * (h.u * h.v.conj()).re * d;
    let m12 = (h.u + h.v) * h.w.conj() * (srt * (r - t)) + (h.v * t - h.u * r) * h.w.conj() * (srt * d);
    let m22 = ((r - t) * (r - t) + 2.0 * rt * d) * h.w.norm_sqr();
    Matrix2::new(re(m11), m12, m12.conj(), re(m22))
}

/// Unnormalized `M_I`.
fn harmonic_matrix(h: &Hom, r: f64, c: f64) -> Matrix2<C64> {
    let t = 1.0 - r;
    let rt = r * t;
    let srt = rt.sqrt();
    let d = 1.0 - c;
    let x = h.a1.norm_sqr() * h.a2 * h.b2.conj();
    let y = h.a1 * h.b1.conj() * h.a2.norm_sqr();
    let m11 = h.p.norm_sqr() * ((r - t) * (r - t) + 2.0 * rt * d);
    let m12 = (x + y) * (srt * (t - r)) + (x * r - y * t) * (srt * d);
    let m22 = rt * (h.u + h.v).norm_sqr() - 2.0 * rt * (h.u * h.v.conj()).re * d;
    Matrix2::new(re(m11), m12, m12.conj(), re(m22))
}

pub fn addition_density(z1: &RiemannPoint, z2: &RiemannPoint, r: f64, c_i: f64) -> Result<NoisyOutcome> {
    check_reflectivity(r)?;
    check_unit("C_I", c_i)?;
    let m = sum_matrix(&Hom::new(z1, z2), r, c_i);
    let tr = m[(0, 0)].re + m[(1, 1)].re;
    NoisyOutcome::from_matrix(vec![BranchLabel::Sum], m, tr)
}

pub fn harmonic_density(z1: &RiemannPoint, z2: &RiemannPoint, r: f64, c_i: f64) -> Result<NoisyOutcome> {
    check_reflectivity(r)?;
    check_unit("C_I", c_i)?;
    let m = harmonic_matrix(&Hom::new(z1, z2), r, c_i);
    let tr = m[(0, 0)].re + m[(1, 1)].re;
    NoisyOutcome::from_matrix(vec![BranchLabel::Harmonic], m, tr)
}

/// `F_S = 1 − 2RT|Rz1+Tz2|²/(D_n D_i)·(1−C_I)` against `z1+z2`.
pub fn addition_fidelity(z1: &RiemannPoint, z2: &RiemannPoint, r: f64, c_i: f64) -> Result<f64> {
    check_reflectivity(r)?;
    check_unit("C_I", c_i)?;
    let h = Hom::new(z1, z2);
    let t = 1.0 - r;
    let rt = r * t;
    let ww = h.w.norm_sqr();
    let ideal = rt * (h.u + h.v).norm_sqr() + (r - t) * (r - t) * ww;
    let noisy = ideal + rt * (2.0 * ww - 2.0 * (h.u * h.v.conj()).re) * (1.0 - c_i);
    if ideal * noisy <= TRACE_FLOOR {
        return Err(Error::PostSelection("sum is indeterminate".into()));
    }
    Ok(1.0 - 2.0 * rt * (h.u * r + h.v * t).norm_sqr() * ww / (noisy * ideal) * (1.0 - c_i))
}

/// `F_I = 1 − 2RT|Rz1+Tz2|²|z1z2|²/(B_n B_i)·(1−C_I)` against
/// `−z1z2/(z1+z2)`.
pub fn harmonic_fidelity(z1: &RiemannPoint, z2: &RiemannPoint, r: f64, c_i: f64) -> Result<f64> {
    check_reflectivity(r)?;
    check_unit("C_I", c_i)?;
    let h = Hom::new(z1, z2);
    let t = 1.0 - r;
    let rt = r * t;
    let pp = h.p.norm_sqr();
    let ideal = pp * (r - t) * (r - t) + rt * (h.u + h.v).norm_sqr();
    let noisy = ideal + rt * (2.0 * pp - 2.0 * (h.u * h.v.conj()).re) * (1.0 - c_i);
    if ideal * noisy <= TRACE_FLOOR {
        return Err(Error::PostSelection("harmonic mean is indeterminate".into()));
    }
    Ok(1.0 - 2.0 * rt * (h.u * r + h.v * t).norm_sqr() * pp / (noisy * ideal) * (1.0 - c_i))
}

/// Two-block concatenations: `PP` product then product, `SS` sum then sum,
/// `SP` sum then product, `PS` product then sum.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ConcatKind {
    PP,
    SS,
    SP,
    PS,
}

/// Output diagonal of a concatenation with fully distinguishable photons.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConcatDiagonals {
    pub d11: f64,
    pub d22: f64,
    /// Whether the off-diagonal entries vanish identically.
    pub off_diagonal_zero: bool,
}

/// Unnormalized diagonals, scaled by `|b1b2b3|²`. With `f = RT/(R²+T²)`:
///
/// - PP: `|z1z2z3|²` vs 1
/// - SP: `f(|z1|²+|z2|²)|z3|²` vs 1
/// - PS: `f(|z1z2|²+|z3|²)` vs 1
/// - SS: `f²(|z1|²+|z2|² + |z3|²/f)` vs 1
pub fn distinguishable_concat_diagonals(
    kind: ConcatKind,
    z1: &RiemannPoint,
    z2: &RiemannPoint,
    z3: &RiemannPoint,
    r: f64,
) -> Result<ConcatDiagonals> {
    check_reflectivity(r)?;
    let t = 1.0 - r;
    let f = r * t / (r * r + t * t);
    let (a1, a2, a3) = (z1.alpha().norm_sqr(), z2.alpha().norm_sqr(), z3.alpha().norm_sqr());
    let (b1, b2, b3) = (z1.beta().norm_sqr(), z2.beta().norm_sqr(), z3.beta().norm_sqr());
    let d22 = b1 * b2 * b3;
    let (d11, off_diagonal_zero) = match kind {
        ConcatKind::PP => (a1 * a2 * a3, true),
        ConcatKind::SP => (f * (a1 * b2 + b1 * a2) * a3, true),
        ConcatKind::PS => (f * (a1 * a2 * b3 + b1 * b2 * a3), false),
        ConcatKind::SS => (f * f * (a1 * b2 * b3 + b1 * a2 * b3) + f * b1 * b2 * a3, false),
    };
    Ok(ConcatDiagonals {
        d11,
        d22,
        off_diagonal_zero,
    })
}

/// A photon prepared in `state` across `modes = (|0⟩ rail, |1⟩ rail)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DualRail {
    pub modes: (usize, usize),
    pub state: RiemannPoint,
}

/// One heralded event: a single photon in each herald mode and one photon in
/// the output pair.
#[derive(Debug, Clone, PartialEq)]
pub struct PostSelection {
    pub branch: Vec<BranchLabel>,
    pub heralds: Vec<usize>,
    pub output: (usize, usize),
}

/// Output density and probability of each post-selection under the Gram
/// model. `gram[i][j]` is the internal-state overlap of photons `i` and `j`.
pub fn simulate_partial(
    u: &UnitaryMatrix,
    photons: &[DualRail],
    gram: &DMatrix<C64>,
    post: &[PostSelection],
) -> Result<Vec<NoisyOutcome>> {
    let n = photons.len();
    let dim = u.dim();
    if n == 0 || n > MAX_PARTIAL_PHOTONS {
        return Err(Error::PhotonBound {
            photons: n,
            max: MAX_PARTIAL_PHOTONS,
        });
    }
    if gram.nrows() != n {
        return Err(Error::Dimension {
            expected: n,
            got: gram.nrows(),
        });
    }
    let mut inputs: Vec<usize> = photons.iter().flat_map(|p| [p.modes.0, p.modes.1]).collect();
    inputs.sort_unstable();
    inputs.dedup();
    if inputs.len() != 2 * n || inputs.iter().any(|&m| m >= dim) {
        return Err(Error::Parameter(
            "input rails must be distinct modes of the circuit".into(),
        ));
    }
    let b = internal_vectors(gram)?;
    let rank = b.nrows();
    let m = u.matrix();
    // phi[k][mode]: amplitude of photon k in an output mode.
    let phi: Vec<Vec<C64>> = photons
        .iter()
        .map(|p| {
            (0..dim)
                .map(|o| m[(o, p.modes.0)] * p.state.alpha() + m[(o, p.modes.1)] * p.state.beta())
                .collect()
        })
        .collect();
    let perms = permutations(n);
    let labels = rank.pow(n as u32);

    post.iter()
        .map(|ps| {
            if ps.heralds.len() + 1 != n {
                return Err(Error::Dimension {
                    expected: n - 1,
                    got: ps.heralds.len(),
                });
            }
            let rails = [ps.output.0, ps.output.1];
            let mut slots_all = ps.heralds.clone();
            slots_all.extend(rails);
            let mut check = slots_all.clone();
            check.sort_unstable();
            check.dedup();
            if check.len() != n + 1 || check.iter().any(|&x| x >= dim) {
                return Err(Error::Parameter("herald and output modes must be distinct".into()));
            }
            // amp[rail][label assignment]
            let amps: Vec<Vec<C64>> = rails
                .iter()
                .map(|&rail| {
                    let mut slots = ps.heralds.clone();
                    slots.push(rail);
                    (0..labels)
                        .map(|code| {
                            let lab = digits(code, rank, n);
                            perms
                                .iter()
                                .map(|sigma| {
                                    (0..n).fold(C64::new(1.0, 0.0), |acc, k| {
                                        acc * phi[k][slots[sigma[k]]] * b[(lab[sigma[k]], k)]
                                    })
                                })
                                .sum()
                        })
                        .collect()
                })
                .collect();
            let entry = |r: usize, s: usize| -> C64 { amps[r].iter().zip(&amps[s]).map(|(x, y)| x * y.conj()).sum() };
            let rho = Matrix2::new(entry(0, 0), entry(0, 1), entry(1, 0), entry(1, 1));
            let probability = rho[(0, 0)].re + rho[(1, 1)].re;
            NoisyOutcome::from_matrix(ps.branch.clone(), rho, probability)
        })
        .collect()
}

fn digits(mut code: usize, base: usize, n: usize) -> Vec<usize> {
    (0..n)
        .map(|_| {
            let d = code % base;
            code /= base;
            d
        })
        .collect()
}

fn permutations(n: usize) -> Vec<Vec<usize>> {
    if n == 0 {
        return vec![vec![]];
    }
    permutations(n - 1)
        .into_iter()
        .flat_map(|p| {
            (0..n).map(move |pos| {
                let mut q = p.clone();
                q.insert(pos, n - 1);
                q
            })
        })
        .collect()
}

/// [`simulate_partial`] on a two-photon block, one outcome per branch rule.
pub fn simulate_block_partial(
    block: &BlockUnitary,
    z1: &RiemannPoint,
    z2: &RiemannPoint,
    gram: &DMatrix<C64>,
) -> Result<Vec<NoisyOutcome>> {
    let photons = [
        DualRail {
            modes: (0, 1),
            state: *z1,
        },
        DualRail {
            modes: (2, 3),
            state: *z2,
        },
    ];
    let post: Vec<PostSelection> = block
        .branch_rules
        .iter()
        .map(|r| PostSelection {
            branch: vec![r.label],
            heralds: vec![r.herald_mode],
            output: (OUTPUT_RAIL_0, OUTPUT_RAIL_1),
        })
        .collect();
    simulate_partial(&block.matrix, &photons, gram, &post)
}

/// [`simulate_partial`] on a mesh preset, one outcome per branch.
pub fn simulate_preset_partial(preset: &Preset, zs: &[RiemannPoint], gram: &DMatrix<C64>) -> Result<Vec<NoisyOutcome>> {
    if zs.len() != preset.photons() {
        return Err(Error::Dimension {
            expected: preset.photons(),
            got: zs.len(),
        });
    }
    let photons: Vec<DualRail> = preset
        .inputs
        .iter()
        .zip(zs)
        .map(|(&modes, &state)| DualRail { modes, state })
        .collect();
    let post: Vec<PostSelection> = preset
        .branches()
        .into_iter()
        .map(|b| PostSelection {
            branch: b.labels,
            heralds: b.heralds,
            output: preset.output,
        })
        .collect();
    simulate_partial(&preset.unitary(), &photons, gram, &post)
}

/// Fidelity of one preset branch with its field-algebra target.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BranchFidelity {
    pub inputs: Vec<RiemannPoint>,
    pub target: FieldResult,
    /// `None` when the target or the output is indeterminate.
    pub fidelity: Option<f64>,
    pub probability: f64,
}

pub fn preset_branch_fidelity(
    preset: &Preset,
    labels: &[BranchLabel],
    zs: &[RiemannPoint],
    spec: &OverlapSpec,
) -> Result<BranchFidelity> {
    let gram = spec.gram_matrix(preset.photons())?;
    let target = preset.expected(labels, zs)?;
    let outcome = simulate_preset_partial(preset, zs, &gram)?
        .into_iter()
        .find(|o| o.branch == labels)
        .ok_or_else(|| Error::Parameter("no such branch".into()))?;
    let fidelity = target.point().and_then(|t| outcome.fidelity(&t));
    Ok(BranchFidelity {
        inputs: zs.to_vec(),
        target,
        fidelity,
        probability: outcome.probability,
    })
}
