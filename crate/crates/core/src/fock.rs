//! Few-photon Fock space: basis enumeration, matrix permanents, evolution
//! through linear-optical unitaries and post-selection.
//!
//! Convention: the interferometer maps `a†_j -> Σ_i u_ij a†_i`, so column `j`
//! of `U` is the image of input mode `j`.

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, OnceLock, RwLock};

use nalgebra::DMatrix;
use num_complex::Complex64 as C64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const TOL_UNITARY: f64 = 1e-10;
pub const TOL_AMP: f64 = 1e-12;
/// Largest permanent order the kernel accepts.
pub const MAX_PERMANENT: usize = 6;
/// Largest photon number `evolve` accepts.
pub const MAX_PHOTONS: usize = 4;

/// Occupation numbers of a fixed set of modes.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct FockState(Vec<u8>);

impl FockState {
    pub fn new(occupations: Vec<u8>) -> Self {
        FockState(occupations)
    }

    pub fn vacuum(modes: usize) -> Self {
        FockState(vec![0; modes])
    }

    pub fn occupations(&self) -> &[u8] {
        &self.0
    }

    pub fn modes(&self) -> usize {
        self.0.len()
    }

    pub fn photons(&self) -> usize {
        self.0.iter().map(|&k| k as usize).sum()
    }

    /// Mode index of every photon, repeated by occupation.
    pub fn mode_list(&self) -> Vec<usize> {
        let mut out = Vec::with_capacity(self.photons());
        for (i, &k) in self.0.iter().enumerate() {
            out.extend(std::iter::repeat_n(i, k as usize));
        }
        out
    }

    fn factorial_product(&self) -> f64 {
        self.0.iter().map(|&k| factorial(k as usize)).product()
    }
}

fn factorial(k: usize) -> f64 {
    (1..=k).map(|v| v as f64).product()
}

type BasisCache = RwLock<HashMap<(usize, usize), Arc<[FockState]>>>;

/// All occupation vectors of `n` photons in `m` modes, in ascending
/// lexicographic order. Results are cached per `(m, n)`.
pub fn basis(m: usize, n: usize) -> Arc<[FockState]> {
    static CACHE: OnceLock<BasisCache> = OnceLock::new();
    let cache = CACHE.get_or_init(Default::default);
    if let Some(b) = cache.read().expect("basis cache poisoned").get(&(m, n)) {
        return b.clone();
    }
    let mut out = Vec::new();
    let mut cur = vec![0u8; m];
    fill_basis(&mut cur, 0, n, &mut out);
    out.sort();
    let arc: Arc<[FockState]> = out.into();
    cache.write().expect("basis cache poisoned").insert((m, n), arc.clone());
    arc
}

fn fill_basis(cur: &mut Vec<u8>, idx: usize, left: usize, out: &mut Vec<FockState>) {
    if idx + 1 == cur.len() {
        cur[idx] = left as u8;
        out.push(FockState(cur.clone()));
        return;
    }
    if cur.is_empty() {
        if left == 0 {
            out.push(FockState(Vec::new()));
        }
        return;
    }
    for k in 0..=left {
        cur[idx] = k as u8;
        fill_basis(cur, idx + 1, left - k, out);
    }
    cur[idx] = 0;
}

/// JSON matrix entry: a real number or an `[re, im]` pair.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ComplexEntry {
    Real(f64),
    Complex([f64; 2]),
}

impl ComplexEntry {
    pub fn value(self) -> C64 {
        match self {
            ComplexEntry::Real(x) => C64::new(x, 0.0),
            ComplexEntry::Complex([re, im]) => C64::new(re, im),
        }
    }
}

impl From<C64> for ComplexEntry {
    fn from(x: C64) -> Self {
        if x.im == 0.0 {
            ComplexEntry::Real(x.re)
        } else {
            ComplexEntry::Complex([x.re, x.im])
        }
    }
}

/// Square matrix from JSON rows.
pub fn matrix_from_rows(rows: &[Vec<ComplexEntry>]) -> Result<DMatrix<C64>> {
    let n = rows.len();
    if let Some(r) = rows.iter().find(|r| r.len() != n) {
        return Err(Error::NotSquare { rows: n, cols: r.len() });
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j].value()))
}

/// A square complex matrix checked to be unitary.
#[derive(Debug, Clone, PartialEq)]
pub struct UnitaryMatrix(DMatrix<C64>);

impl UnitaryMatrix {
    pub fn new(m: DMatrix<C64>) -> Result<Self> {
        Self::with_tolerance(m, TOL_UNITARY)
    }

    pub fn with_tolerance(m: DMatrix<C64>, tol: f64) -> Result<Self> {
        if !m.is_square() {
            return Err(Error::NotSquare {
                rows: m.nrows(),
                cols: m.ncols(),
            });
        }
        let dev = unitarity_deviation(&m);
        if dev > tol {
            return Err(Error::NotUnitary(dev));
        }
        Ok(UnitaryMatrix(m))
    }

    pub fn identity(dim: usize) -> Self {
        UnitaryMatrix(DMatrix::identity(dim, dim))
    }

    pub fn dim(&self) -> usize {
        self.0.nrows()
    }

    pub fn matrix(&self) -> &DMatrix<C64> {
        &self.0
    }

    pub fn into_inner(self) -> DMatrix<C64> {
        self.0
    }

    /// Matrix product `self · other`; unitarity is closed under products.
    pub fn compose(&self, other: &UnitaryMatrix) -> Result<UnitaryMatrix> {
        if self.dim() != other.dim() {
            return Err(Error::Dimension {
                expected: self.dim(),
                got: other.dim(),
            });
        }
        Ok(UnitaryMatrix(&self.0 * &other.0))
    }

    pub fn adjoint(&self) -> UnitaryMatrix {
        UnitaryMatrix(self.0.adjoint())
    }
}

/// Max-abs entry of `U·U† − I`.
pub fn unitarity_deviation(m: &DMatrix<C64>) -> f64 {
    let p = m * m.adjoint();
    let mut dev = 0.0f64;
    for i in 0..p.nrows() {
        for j in 0..p.ncols() {
            let target = if i == j { C64::new(1.0, 0.0) } else { C64::new(0.0, 0.0) };
            dev = dev.max((p[(i, j)] - target).norm());
        }
    }
    dev
}

/// Matrix permanent. Direct expansion up to 3×3, Ryser with Gray-code
/// ordering for 4×4 through 6×6.
pub fn permanent(m: &DMatrix<C64>) -> Result<C64> {
    if !m.is_square() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    let n = m.nrows();
    if n > MAX_PERMANENT {
        return Err(Error::PhotonBound {
            photons: n,
            max: MAX_PERMANENT,
        });
    }
    Ok(match n {
        0 => C64::new(1.0, 0.0),
        1 => m[(0, 0)],
        2 => m[(0, 0)] * m[(1, 1)] + m[(0, 1)] * m[(1, 0)],
        3 => {
            m[(0, 0)] * (m[(1, 1)] * m[(2, 2)] + m[(1, 2)] * m[(2, 1)])
                + m[(0, 1)] * (m[(1, 0)] * m[(2, 2)] + m[(1, 2)] * m[(2, 0)])
                + m[(0, 2)] * (m[(1, 0)] * m[(2, 1)] + m[(1, 1)] * m[(2, 0)])
        }
        _ => ryser(m),
    })
}

fn ryser(m: &DMatrix<C64>) -> C64 {
    let n = m.nrows();
    let mut row_sums = vec![C64::new(0.0, 0.0); n];
    let mut total = C64::new(0.0, 0.0);
    let mut gray: u32 = 0;
    for k in 1u32..(1 << n) {
        let next = k ^ (k >> 1);
        let col = (gray ^ next).trailing_zeros() as usize;
        let added = next & (1 << col) != 0;
        for (i, s) in row_sums.iter_mut().enumerate() {
            if added {
                *s += m[(i, col)];
            } else {
                *s -= m[(i, col)];
            }
        }
        gray = next;
        let prod: C64 = row_sums.iter().product();
        if gray.count_ones().is_multiple_of(2) {
            total += prod;
        } else {
            total -= prod;
        }
    }
    if n % 2 == 1 {
        -total
    } else {
        total
    }
}

/// A superposition of Fock states with a common mode count and photon number.
#[derive(Debug, Clone, PartialEq)]
pub struct FockVector {
    modes: usize,
    photons: usize,
    amplitudes: BTreeMap<FockState, C64>,
    normalized: bool,
}

impl FockVector {
    /// Builds a vector from explicit amplitudes. The result is flagged as
    /// normalized when its norm is 1 within `TOL_AMP`.
    pub fn from_amplitudes<I>(modes: usize, amplitudes: I) -> Result<Self>
    where
        I: IntoIterator<Item = (FockState, C64)>,
    {
        let mut map = BTreeMap::new();
        let mut photons = None;
        for (state, amp) in amplitudes {
            if state.modes() != modes {
                return Err(Error::Dimension {
                    expected: modes,
                    got: state.modes(),
                });
            }
            match photons {
                None => photons = Some(state.photons()),
                Some(n) if n != state.photons() => {
                    return Err(Error::Parameter(format!(
                        "mixed photon numbers {n} and {}",
                        state.photons()
                    )))
                }
                _ => {}
            }
            *map.entry(state).or_insert(C64::new(0.0, 0.0)) += amp;
        }
        let photons = photons.ok_or_else(|| Error::Parameter("empty Fock vector".into()))?;
        let mut v = FockVector {
            modes,
            photons,
            amplitudes: map,
            normalized: false,
        };
        v.normalized = (v.norm() - 1.0).abs() <= TOL_AMP;
        Ok(v)
    }

    pub fn basis_state(state: FockState) -> Self {
        let modes = state.modes();
        let photons = state.photons();
        let mut amplitudes = BTreeMap::new();
        amplitudes.insert(state, C64::new(1.0, 0.0));
        FockVector {
            modes,
            photons,
            amplitudes,
            normalized: true,
        }
    }

    /// State `Π_k (Σ_i c_ki a†_i) |0⟩` for a list of single-photon creation
    /// operators, each given as `(mode, coefficient)` pairs.
    pub fn from_creation_product(modes: usize, photons: &[Vec<(usize, C64)>]) -> Result<Self> {
        let mut terms: BTreeMap<Vec<u8>, C64> = BTreeMap::new();
        terms.insert(vec![0; modes], C64::new(1.0, 0.0));
        for op in photons {
            let mut next = BTreeMap::new();
            for (occ, amp) in &terms {
                for &(mode, c) in op {
                    if mode >= modes {
                        return Err(Error::Dimension {
                            expected: modes,
                            got: mode + 1,
                        });
                    }
                    let mut o = occ.clone();
                    o[mode] += 1;
                    *next.entry(o).or_insert(C64::new(0.0, 0.0)) += amp * c;
                }
            }
            terms = next;
        }
        // (a†)^k |0⟩ = √k! |k⟩
        let amps = terms.into_iter().map(|(occ, a)| {
            let s = FockState(occ);
            let f = s.factorial_product().sqrt();
            (s, a * f)
        });
        Self::from_amplitudes(modes, amps)
    }

    pub fn modes(&self) -> usize {
        self.modes
    }

    pub fn photons(&self) -> usize {
        self.photons
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn amplitude(&self, state: &FockState) -> C64 {
        self.amplitudes.get(state).copied().unwrap_or(C64::new(0.0, 0.0))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&FockState, &C64)> {
        self.amplitudes.iter()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.values().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Rescaled copy with unit norm. Fails on the zero vector.
    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Parameter("cannot normalize the zero vector".into()));
        }
        Ok(FockVector {
            modes: self.modes,
            photons: self.photons,
            amplitudes: self.amplitudes.iter().map(|(s, a)| (s.clone(), a / n)).collect(),
            normalized: true,
        })
    }

    /// ⟨self|other⟩.
    pub fn inner(&self, other: &FockVector) -> C64 {
        self.amplitudes.iter().map(|(s, a)| a.conj() * other.amplitude(s)).sum()
    }
}

/// Evolves `psi` through `u`. Output amplitudes come from permanents of the
/// row/column-repeated submatrices with the `√(Π s_i! Π t_j!)` normalization.
pub fn evolve(u: &UnitaryMatrix, psi: &FockVector) -> Result<FockVector> {
    let m = u.dim();
    if m != psi.modes {
        return Err(Error::Dimension {
            expected: m,
            got: psi.modes,
        });
    }
    let n = psi.photons;
    if n > MAX_PHOTONS {
        return Err(Error::PhotonBound {
            photons: n,
            max: MAX_PHOTONS,
        });
    }
    let inputs: Vec<(Vec<usize>, f64, C64)> = psi
        .amplitudes
        .iter()
        .map(|(s, a)| (s.mode_list(), s.factorial_product(), *a))
        .collect();
    let mat = u.matrix();
    let mut out = BTreeMap::new();
    for t in basis(m, n).iter() {
        let rows = t.mode_list();
        let tf = t.factorial_product();
        let mut amp = C64::new(0.0, 0.0);
        for (cols, sf, a) in &inputs {
            let sub = DMatrix::from_fn(n, n, |i, j| mat[(rows[i], cols[j])]);
            amp += a * permanent(&sub)? / (sf * tf).sqrt();
        }
        if amp != C64::new(0.0, 0.0) {
            out.insert(t.clone(), amp);
        }
    }
    if out.is_empty() {
        return Err(Error::Parameter("evolution produced the zero vector".into()));
    }
    Ok(FockVector {
        modes: m,
        photons: n,
        amplitudes: out,
        normalized: psi.normalized,
    })
}

/// Result of conditioning on a detection pattern.
#[derive(Debug, Clone, PartialEq)]
pub struct PostSelected {
    /// Renormalized state of the kept modes; `None` flags an impossible branch.
    pub state: Option<FockVector>,
    pub probability: f64,
}

impl PostSelected {
    pub fn is_impossible(&self) -> bool {
        self.state.is_none()
    }
}

/// Conditions `psi` on observing `required` (occupations of the complement of
/// `kept_modes`, in ascending mode order). The conditional state lives on
/// `kept_modes` in the order given.
pub fn postselect(psi: &FockVector, kept_modes: &[usize], required: &[u8]) -> Result<PostSelected> {
    let m = psi.modes;
    let mut is_kept = vec![false; m];
    for &k in kept_modes {
        if k >= m || is_kept[k] {
            return Err(Error::PostSelection(format!(
                "kept mode {k} is out of range or repeated"
            )));
        }
        is_kept[k] = true;
    }
    let complement: Vec<usize> = (0..m).filter(|&i| !is_kept[i]).collect();
    if complement.len() != required.len() {
        return Err(Error::PostSelection(format!(
            "pattern covers {} modes but the complement has {}",
            required.len(),
            complement.len()
        )));
    }
    let heralded: usize = required.iter().map(|&k| k as usize).sum();
    if heralded > psi.photons {
        return Err(Error::PostSelection(format!(
            "pattern requires {heralded} photons but the state has {}",
            psi.photons
        )));
    }
    if !psi.normalized {
        return Err(Error::PostSelection("input state is not normalized".into()));
    }
    let mut cond = BTreeMap::new();
    let mut prob = 0.0;
    for (s, a) in &psi.amplitudes {
        let occ = s.occupations();
        if complement.iter().zip(required).all(|(&i, &r)| occ[i] == r) {
            prob += a.norm_sqr();
            let kept = FockState(kept_modes.iter().map(|&i| occ[i]).collect());
            cond.insert(kept, *a);
        }
    }
    if prob == 0.0 {
        return Ok(PostSelected {
            state: None,
            probability: 0.0,
        });
    }
    let scale = prob.sqrt();
    let state = FockVector {
        modes: kept_modes.len(),
        photons: psi.photons - heralded,
        amplitudes: cond.into_iter().map(|(s, a)| (s, a / scale)).collect(),
        normalized: true,
    };
    Ok(PostSelected {
        state: Some(state),
        probability: prob,
    })
}

/// Bilinear coefficients of the two-photon output, heralded by one photon in
/// the third mode and one photon on the first or last mode.
///
/// Rows are the input monomials `[1, z1, z2, z1·z2]`; columns are the output
/// creation operators `[a†_1, a†_4]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OutputTable {
    pub coefficients: [[C64; 2]; 4],
}

impl OutputTable {
    /// Unnormalized output amplitudes `(a†_1, a†_4)` for inputs `(z1, z2)`.
    pub fn evaluate(&self, z1: C64, z2: C64) -> [C64; 2] {
        let mono = [C64::new(1.0, 0.0), z1, z2, z1 * z2];
        let mut out = [C64::new(0.0, 0.0); 2];
        for (c, w) in self.coefficients.iter().zip(mono) {
            out[0] += c[0] * w;
            out[1] += c[1] * w;
        }
        out
    }
}

pub fn two_photon_output_table(u: &UnitaryMatrix) -> Result<OutputTable> {
    if u.dim() != 4 {
        return Err(Error::Dimension {
            expected: 4,
            got: u.dim(),
        });
    }
    let m = u.matrix();
    let e = |i: usize, j: usize| m[(i - 1, j - 1)];
    Ok(OutputTable {
        coefficients: [
            [
                e(1, 2) * e(3, 4) + e(3, 2) * e(1, 4),
                e(4, 2) * e(3, 4) + e(4, 4) * e(3, 2),
            ],
            [
                e(1, 1) * e(3, 4) + e(3, 1) * e(1, 4),
                e(4, 1) * e(3, 4) + e(4, 4) * e(3, 1),
            ],
            [
                e(1, 3) * e(3, 2) + e(1, 2) * e(3, 3),
                e(4, 3) * e(3, 2) + e(4, 2) * e(3, 3),
            ],
            [
                e(1, 1) * e(3, 3) + e(3, 1) * e(1, 3),
                e(4, 1) * e(3, 3) + e(4, 3) * e(3, 1),
            ],
        ],
    })
}
