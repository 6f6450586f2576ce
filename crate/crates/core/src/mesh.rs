//! Six-mode rectangular MZI mesh: composition, Clements decomposition,
//! single-qubit preparation settings and the chip presets.
//!
//! Mesh nodes use the input-phase form [`projector_matrix`], which places the
//! external phase shifter on the node's upper input. The node at `θ = π,
//! φ = π` is exactly the identity ("bar"); `θ = 0` is a full cross.

use std::f64::consts::{FRAC_PI_2, PI, TAU};
use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, Matrix2};
use num_complex::Complex64 as C64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::blocks::{BranchLabel, R_GOLDEN};
use crate::error::{Error, Result};
use crate::fock::{evolve, postselect, FockState, FockVector, UnitaryMatrix};
use crate::qubit::{field_add, field_harmonic, field_inv, field_mul, field_neg, FieldResult, RiemannPoint};

pub const MESH_MODES: usize = 6;

/// `(layer, top_mode)` of every node, in composition order. Node `k` of the
/// list is beam splitter `BS(k+1)` in the chip numbering.
pub const LAYOUT: [(usize, usize); 15] = [
    (0, 0),
    (0, 2),
    (0, 4),
    (1, 1),
    (1, 3),
    (2, 0),
    (2, 2),
    (2, 4),
    (3, 1),
    (3, 3),
    (4, 0),
    (4, 2),
    (4, 4),
    (5, 1),
    (5, 3),
];

pub const BAR: (f64, f64) = (PI, PI);
pub const CROSS: (f64, f64) = (0.0, 0.0);

/// `sin²(θ/2)`.
pub fn reflectivity(theta: f64) -> f64 {
    (theta / 2.0).sin().powi(2)
}

/// `θ ∈ [0, π]` with `sin²(θ/2) = r`.
pub fn theta_for_reflectivity(r: f64) -> f64 {
    2.0 * r.clamp(0.0, 1.0).sqrt().asin()
}

fn cis(x: f64) -> C64 {
    C64::from_polar(1.0, x)
}

/// MZI with the external phase on the upper output:
/// `i e^{iθ/2} [[s e^{iφ}, c e^{iφ}], [c, −s]]`, `s = sin(θ/2)`, `c = cos(θ/2)`.
pub fn mzi_matrix(theta: f64, phi: f64) -> Matrix2<C64> {
    let (s, c) = (theta / 2.0).sin_cos();
    let g = C64::i() * cis(theta / 2.0);
    Matrix2::new(g * s * cis(phi), g * c * cis(phi), g * c, -g * s)
}

/// MZI with the external phase on the upper input:
/// `i e^{iθ/2} [[s e^{iφ}, c], [c e^{iφ}, −s]]`. Detecting a photon on the
/// upper output projects the input onto `|θ, −φ⟩`.
pub fn projector_matrix(theta: f64, phi: f64) -> Matrix2<C64> {
    let (s, c) = (theta / 2.0).sin_cos();
    let g = C64::i() * cis(theta / 2.0);
    Matrix2::new(g * s * cis(phi), g * c, g * c * cis(phi), -g * s)
}

/// `(θ, φ)` such that [`mzi_matrix`] fed with one photon in its upper input
/// emits `|z⟩` on its two outputs.
pub fn prepare_settings(z: &RiemannPoint) -> (f64, f64) {
    z.to_bloch()
}

/// `(θ, φ)` such that [`projector_matrix`] detects `|z⟩` on its upper output
/// with certainty.
pub fn projection_settings(z: &RiemannPoint) -> (f64, f64) {
    let (theta, phi) = z.to_bloch();
    (theta, (-phi).rem_euclid(TAU))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MziSetting {
    pub layer: usize,
    pub top_mode: usize,
    pub theta: f64,
    pub phi: f64,
}

impl MziSetting {
    pub fn reflectivity(&self) -> f64 {
        reflectivity(self.theta)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshProgram {
    pub modes: usize,
    pub nodes: Vec<MziSetting>,
    #[serde(default)]
    pub output_phases: Vec<f64>,
}

impl MeshProgram {
    /// Every node at the identity setting.
    pub fn all_bar() -> Self {
        MeshProgram {
            modes: MESH_MODES,
            nodes: LAYOUT
                .iter()
                .map(|&(layer, top_mode)| MziSetting {
                    layer,
                    top_mode,
                    theta: BAR.0,
                    phi: BAR.1,
                })
                .collect(),
            output_phases: vec![0.0; MESH_MODES],
        }
    }

    /// Sets beam splitter `BS(bs)` (1-based chip numbering).
    pub fn set(mut self, bs: usize, theta: f64, phi: f64) -> Self {
        let node = &mut self.nodes[bs - 1];
        node.theta = theta;
        node.phi = phi;
        self
    }

    pub fn with_output_phase(mut self, mode: usize, phase: f64) -> Self {
        self.output_phases[mode] = phase;
        self
    }

    /// Checks the node list against the rectangular layout.
    pub fn validate(&self) -> Result<()> {
        if self.modes != MESH_MODES {
            return Err(Error::Dimension {
                expected: MESH_MODES,
                got: self.modes,
            });
        }
        if self.nodes.len() != LAYOUT.len() {
            return Err(Error::Parameter(format!(
                "expected {} nodes, got {}",
                LAYOUT.len(),
                self.nodes.len()
            )));
        }
        for (n, &(layer, top)) in self.nodes.iter().zip(LAYOUT.iter()) {
            if n.layer != layer || n.top_mode != top {
                return Err(Error::Parameter(format!(
                    "node at (layer {}, mode {}) where (layer {layer}, mode {top}) was expected",
                    n.layer, n.top_mode
                )));
            }
            if !n.theta.is_finite() || !n.phi.is_finite() {
                return Err(Error::Parameter("non-finite node setting".into()));
            }
        }
        if !self.output_phases.is_empty() && self.output_phases.len() != MESH_MODES {
            return Err(Error::Dimension {
                expected: MESH_MODES,
                got: self.output_phases.len(),
            });
        }
        Ok(())
    }
}

/// Unitary of `program`: nodes applied in layout order, then the output
/// phase layer.
pub fn compose(program: &MeshProgram) -> Result<UnitaryMatrix> {
    program.validate()?;
    let m = program.modes;
    let mut u = DMatrix::<C64>::identity(m, m);
    for n in &program.nodes {
        apply_left(&mut u, n.top_mode, &projector_matrix(n.theta, n.phi));
    }
    for (i, &p) in program.output_phases.iter().enumerate() {
        let ph = cis(p);
        for j in 0..m {
            u[(i, j)] *= ph;
        }
    }
    UnitaryMatrix::with_tolerance(u, 1e-12)
}

/// `u <- T_k · u` for a 2×2 block on rows `(k, k+1)`.
fn apply_left(u: &mut DMatrix<C64>, k: usize, t: &Matrix2<C64>) {
    for j in 0..u.ncols() {
        let (a, b) = (u[(k, j)], u[(k + 1, j)]);
        u[(k, j)] = t[(0, 0)] * a + t[(0, 1)] * b;
        u[(k + 1, j)] = t[(1, 0)] * a + t[(1, 1)] * b;
    }
}

/// `u <- u · T_k^{-1}` for a 2×2 unitary block on columns `(k, k+1)`.
fn apply_right_inverse(u: &mut DMatrix<C64>, k: usize, t: &Matrix2<C64>) {
    let ti = t.adjoint();
    for i in 0..u.nrows() {
        let (a, b) = (u[(i, k)], u[(i, k + 1)]);
        u[(i, k)] = a * ti[(0, 0)] + b * ti[(1, 0)];
        u[(i, k + 1)] = a * ti[(0, 1)] + b * ti[(1, 1)];
    }
}

/// Program found by [`decompose`] and its reconstruction error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Decomposition {
    pub program: MeshProgram,
    /// Frobenius norm of `compose(program) − U`.
    pub residual: f64,
}

/// Elements below this magnitude count as already nulled.
const NULL_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy)]
struct Node {
    top: usize,
    theta: f64,
    phi: f64,
}

/// Rectangular (Clements) decomposition of a 6×6 unitary. External phases are
/// returned in `output_phases`, so `compose` reproduces `U` itself.
pub fn decompose(u: &UnitaryMatrix) -> Result<Decomposition> {
    let n = u.dim();
    if n != MESH_MODES {
        return Err(Error::Dimension {
            expected: MESH_MODES,
            got: n,
        });
    }
    let mut w = u.matrix().clone();
    let mut right: Vec<Node> = Vec::new();
    let mut left: Vec<Node> = Vec::new();
    for i in 1..n {
        if i % 2 == 1 {
            for j in 0..i {
                let r = n - 1 - j;
                let a = i - 1 - j;
                let (x, y) = (w[(r, a)], w[(r, a + 1)]);
                let (theta, phi) = if x.norm() < NULL_TOL {
                    (PI, PI)
                } else {
                    (2.0 * y.norm().atan2(x.norm()), x.arg() - y.arg() - PI)
                };
                apply_right_inverse(&mut w, a, &projector_matrix(theta, phi));
                w[(r, a)] = C64::new(0.0, 0.0);
                right.push(Node { top: a, theta, phi });
            }
        } else {
            for j in 1..=i {
                let r = n + j - i - 1;
                let col = j - 1;
                let (x, y) = (w[(r - 1, col)], w[(r, col)]);
                let (theta, phi) = if y.norm() < NULL_TOL {
                    (PI, PI)
                } else {
                    (2.0 * x.norm().atan2(y.norm()), y.arg() - x.arg())
                };
                apply_left(&mut w, r - 1, &projector_matrix(theta, phi));
                w[(r, col)] = C64::new(0.0, 0.0);
                left.push(Node { top: r - 1, theta, phi });
            }
        }
    }
    // w is now diagonal: U = L1⁻¹ ⋯ Lm⁻¹ · D · Rp ⋯ R1. Push D through the
    // inverse left nodes using T⁻¹(θ,φ)·diag(d1,d2) = diag(p1,p2)·T(θ,φ').
    let mut d: Vec<C64> = (0..n).map(|k| w[(k, k)]).collect();
    let mut moved: Vec<Node> = Vec::with_capacity(left.len());
    for node in left.iter().rev() {
        let (d1, d2) = (d[node.top], d[node.top + 1]);
        if node.theta == PI && node.phi == PI {
            // identity node: nothing to move
            moved.push(*node);
            continue;
        }
        let phi_new = d1.arg() - d2.arg();
        d[node.top] = -cis(-(node.theta + node.phi)) * d2;
        d[node.top + 1] = -cis(-node.theta) * d2;
        moved.push(Node {
            top: node.top,
            theta: node.theta,
            phi: phi_new,
        });
    }
    // Application order: R1..Rp, then the moved nodes from the innermost out.
    let sequence: Vec<Node> = right.into_iter().chain(moved).collect();
    let program = layer_nodes(&sequence, &d)?;
    let rebuilt = compose(&program)?;
    let residual = (rebuilt.matrix() - u.matrix()).norm();
    Ok(Decomposition { program, residual })
}

/// Angle in `[0, 2π)`, snapping values within rounding of `2π` to 0.
fn wrap(x: f64) -> f64 {
    let y = x.rem_euclid(TAU);
    if TAU - y < 1e-12 {
        0.0
    } else {
        y
    }
}

/// Places an ordered node sequence onto the rectangular layout.
fn layer_nodes(sequence: &[Node], d: &[C64]) -> Result<MeshProgram> {
    let mut next_layer = [0usize; MESH_MODES];
    let mut program = MeshProgram::all_bar();
    let mut used = [false; 15];
    for node in sequence {
        let mut layer = next_layer[node.top].max(next_layer[node.top + 1]);
        if layer % 2 != node.top % 2 {
            layer += 1;
        }
        let idx = LAYOUT
            .iter()
            .position(|&p| p == (layer, node.top))
            .filter(|&k| !used[k])
            .ok_or_else(|| Error::Parameter(format!("node on mode {} does not fit the layout", node.top)))?;
        used[idx] = true;
        program.nodes[idx].theta = wrap(node.theta);
        program.nodes[idx].phi = wrap(node.phi);
        next_layer[node.top] = layer + 1;
        next_layer[node.top + 1] = layer + 1;
    }
    program.output_phases = d.iter().map(|x| wrap(x.arg())).collect();
    Ok(program)
}

/// Haar-random `n × n` unitary (QR of a complex Gaussian matrix with the
/// phases of `R`'s diagonal removed).
pub fn haar_unitary<R: Rng + ?Sized>(n: usize, rng: &mut R) -> UnitaryMatrix {
    let g = DMatrix::<C64>::from_fn(n, n, |_, _| {
        let re: f64 = rng.sample(StandardNormal);
        let im: f64 = rng.sample(StandardNormal);
        C64::new(re, im) / 2f64.sqrt()
    });
    let qr = g.qr();
    let (mut q, r) = (qr.q(), qr.r());
    for j in 0..n {
        let d = r[(j, j)];
        let ph = if d.norm() == 0.0 {
            C64::new(1.0, 0.0)
        } else {
            d / d.norm()
        };
        for i in 0..n {
            q[(i, j)] *= ph;
        }
    }
    UnitaryMatrix::with_tolerance(q, 1e-10).expect("QR factor is unitary")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Inversion,
    Product,
    Addition,
    ProductThenAddition,
    AdditionThenProduct,
    ProductProduct,
    AdditionAddition,
}

impl PresetName {
    pub const ALL: [PresetName; 7] = [
        PresetName::Inversion,
        PresetName::Product,
        PresetName::Addition,
        PresetName::ProductThenAddition,
        PresetName::AdditionThenProduct,
        PresetName::ProductProduct,
        PresetName::AdditionAddition,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            PresetName::Inversion => "inversion",
            PresetName::Product => "product",
            PresetName::Addition => "addition",
            PresetName::ProductThenAddition => "product-then-addition",
            PresetName::AdditionThenProduct => "addition-then-product",
            PresetName::ProductProduct => "product-product",
            PresetName::AdditionAddition => "addition-addition",
        }
    }
}

impl fmt::Display for PresetName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for PresetName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_lowercase();
        PresetName::ALL
            .into_iter()
            .find(|p| p.as_str().replace('-', "") == key)
            .ok_or_else(|| Error::UnknownPreset(s.to_string()))
    }
}

/// One field operation of a preset and the herald mode of each branch.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stage {
    pub heralds: Vec<(usize, BranchLabel)>,
}

/// A mesh configuration realizing a field operation or a two-operation
/// concatenation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Preset {
    pub name: PresetName,
    pub program: MeshProgram,
    /// Input mode pairs, `z` on the first mode of each pair.
    pub inputs: Vec<(usize, usize)>,
    /// Output rails `(|0⟩, |1⟩)`.
    pub output: (usize, usize),
    pub stages: Vec<Stage>,
}

/// A post-selection branch of a preset: one herald per stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PresetBranch {
    pub labels: Vec<BranchLabel>,
    pub heralds: Vec<usize>,
}

impl PresetBranch {
    pub fn name(&self) -> String {
        if self.labels.is_empty() {
            return "deterministic".into();
        }
        self.labels.iter().map(|l| l.symbol()).collect::<Vec<_>>().join(",")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PresetOutcome {
    pub branch: PresetBranch,
    pub output: FieldResult,
    pub probability: f64,
}

const OUT: (usize, usize) = (3, 4);

fn theta_r() -> f64 {
    theta_for_reflectivity(R_GOLDEN)
}

fn theta_t() -> f64 {
    theta_for_reflectivity(1.0 - R_GOLDEN)
}

/// Stored configuration of each preset. Unlisted nodes are bar.
pub fn preset(name: PresetName) -> Preset {
    use BranchLabel::*;
    let half = FRAC_PI_2;
    let (c, p0) = (CROSS.0, 0.0);
    let base = MeshProgram::all_bar();
    let two = vec![(0, 1), (2, 3)];
    let three = vec![(0, 1), (2, 3), (4, 5)];
    let (program, inputs, stages) = match name {
        PresetName::Inversion => (base.set(5, c, p0).set(7, c, p0).set(10, c, p0), vec![(2, 3)], vec![]),
        PresetName::Product => (
            base.set(4, half, p0)
                .set(5, c, p0)
                .set(6, c, p0)
                .set(9, c, p0)
                .set(12, c, p0)
                .with_output_phase(OUT.0, PI),
            two,
            vec![Stage {
                heralds: vec![(0, Plus), (1, Minus)],
            }],
        ),
        PresetName::Addition => (
            base.set(4, c, p0)
                .set(6, theta_t(), p0)
                .set(7, theta_r(), p0)
                .set(9, c, p0)
                .set(10, c, p0)
                .set(12, c, p0)
                .with_output_phase(OUT.0, wrap(theta_r() - 1.5 * PI)),
            two,
            vec![Stage {
                heralds: vec![(1, Sum), (0, Harmonic)],
            }],
        ),
        PresetName::AdditionThenProduct => (
            base.set(4, c, p0)
                .set(6, theta_t(), p0)
                .set(7, theta_r(), p0)
                .set(9, c, p0)
                .set(10, half, p0)
                .set(12, c, p0)
                .set(13, c, p0)
                .with_output_phase(OUT.0, wrap(theta_r() - 1.5 * PI)),
            three,
            vec![
                Stage {
                    heralds: vec![(1, Sum), (0, Harmonic)],
                },
                Stage {
                    heralds: vec![(2, Plus), (5, Minus)],
                },
            ],
        ),
        PresetName::ProductThenAddition => (
            base.set(4, half, p0)
                .set(5, c, p0)
                .set(6, c, p0)
                .set(7, c, p0)
                .set(8, theta_r(), p0)
                .set(9, theta_r(), p0)
                .set(12, c, p0)
                .with_output_phase(OUT.0, FRAC_PI_2),
            three,
            vec![
                Stage {
                    heralds: vec![(2, Plus), (0, Minus)],
                },
                Stage {
                    heralds: vec![(5, Sum), (1, Harmonic)],
                },
            ],
        ),
        PresetName::ProductProduct => (
            base.set(4, half, p0)
                .set(5, half, p0)
                .set(6, c, p0)
                .set(8, c, p0)
                .set(9, c, p0)
                .set(12, c, p0)
                .with_output_phase(OUT.0, PI),
            three,
            vec![
                Stage {
                    heralds: vec![(0, Plus), (1, Minus)],
                },
                Stage {
                    heralds: vec![(2, Plus), (5, Minus)],
                },
            ],
        ),
        PresetName::AdditionAddition => (
            base.set(4, c, p0)
                .set(6, theta_t(), p0)
                .set(7, TAU - theta_r(), PI)
                .set(9, c, p0)
                .set(10, c, p0)
                .set(12, theta_r(), p0)
                .set(13, theta_r(), 1.5 * PI)
                .with_output_phase(OUT.0, 1.5 * PI),
            three,
            vec![
                Stage {
                    heralds: vec![(1, Sum), (0, Harmonic)],
                },
                Stage {
                    heralds: vec![(5, Sum), (2, Harmonic)],
                },
            ],
        ),
    };
    Preset {
        name,
        program,
        inputs,
        output: OUT,
        stages,
    }
}

impl Preset {
    pub fn photons(&self) -> usize {
        self.inputs.len()
    }

    pub fn unitary(&self) -> UnitaryMatrix {
        compose(&self.program).expect("stored presets are valid programs")
    }

    /// All branches, first stage varying slowest.
    pub fn branches(&self) -> Vec<PresetBranch> {
        let mut out = vec![PresetBranch {
            labels: vec![],
            heralds: vec![],
        }];
        for stage in &self.stages {
            out = out
                .into_iter()
                .flat_map(|b| {
                    stage.heralds.iter().map(move |&(mode, label)| {
                        let mut nb = b.clone();
                        nb.labels.push(label);
                        nb.heralds.push(mode);
                        nb
                    })
                })
                .collect();
        }
        out
    }

    /// The field-algebra value a branch should produce.
    pub fn expected(&self, labels: &[BranchLabel], zs: &[RiemannPoint]) -> Result<FieldResult> {
        if zs.len() != self.photons() {
            return Err(Error::Dimension {
                expected: self.photons(),
                got: zs.len(),
            });
        }
        if self.stages.is_empty() {
            return Ok(field_inv(&zs[0]));
        }
        if labels.len() != self.stages.len() {
            return Err(Error::Dimension {
                expected: self.stages.len(),
                got: labels.len(),
            });
        }
        let mut acc = FieldResult::Point(zs[0]);
        for (label, z) in labels.iter().zip(&zs[1..]) {
            acc = acc.and_then(|a| apply_label(*label, &a, z));
        }
        Ok(acc)
    }

    /// Occupation pattern on the non-output modes for a branch.
    pub fn herald_pattern(&self, branch: &PresetBranch) -> (Vec<usize>, Vec<u8>) {
        let kept = vec![self.output.0, self.output.1];
        let pattern = (0..MESH_MODES)
            .filter(|m| !kept.contains(m))
            .map(|m| u8::from(branch.heralds.contains(&m)))
            .collect();
        (kept, pattern)
    }

    /// Dual-rail input state for `zs`.
    pub fn input_state(&self, zs: &[RiemannPoint]) -> Result<FockVector> {
        if zs.len() != self.photons() {
            return Err(Error::Dimension {
                expected: self.photons(),
                got: zs.len(),
            });
        }
        let ops: Vec<Vec<(usize, C64)>> = self
            .inputs
            .iter()
            .zip(zs)
            .map(|(&(m0, m1), z)| vec![(m0, z.alpha()), (m1, z.beta())])
            .collect();
        FockVector::from_creation_product(MESH_MODES, &ops)
    }
}

fn apply_label(label: BranchLabel, a: &RiemannPoint, b: &RiemannPoint) -> FieldResult {
    match label {
        BranchLabel::Plus => field_mul(a, b),
        BranchLabel::Minus => field_mul(a, b).and_then(|p| field_neg(&p)),
        BranchLabel::Sum => field_add(a, b),
        BranchLabel::Harmonic => field_harmonic(a, b),
    }
}

/// Ideal (indistinguishable-photon) simulation of a preset on the full
/// six-mode Fock space.
pub fn run_preset(preset: &Preset, zs: &[RiemannPoint]) -> Result<Vec<PresetOutcome>> {
    let out = evolve(&preset.unitary(), &preset.input_state(zs)?)?;
    preset
        .branches()
        .into_iter()
        .map(|branch| {
            let (kept, pattern) = preset.herald_pattern(&branch);
            let ps = postselect(&out, &kept, &pattern)?;
            let output = match &ps.state {
                None => FieldResult::Indeterminate,
                Some(s) => {
                    let a = s.amplitude(&FockState::new(vec![1, 0]));
                    let b = s.amplitude(&FockState::new(vec![0, 1]));
                    RiemannPoint::from_pair(a, b).map_or(FieldResult::Indeterminate, FieldResult::Point)
                }
            };
            Ok(PresetOutcome {
                branch,
                output,
                probability: ps.probability,
            })
        })
        .collect()
}
