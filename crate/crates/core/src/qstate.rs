//! Pure three-qubit states, density matrices and the pure-state tangle formulas.
//!
//! Basis label `α = 4·j_A + 2·j_B + j_C`: qubit A is the most significant bit,
//! so `|011⟩` is index 3 and `|100⟩` is index 4.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::SMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Result, TangleError};

pub type C64 = Complex64;

/// Dimension of the three-qubit Hilbert space.
pub const DIM: usize = 8;

/// Hermiticity and trace tolerance for density matrices.
pub const DENSITY_TOL: f64 = 1e-12;
/// Smallest eigenvalue still accepted as positive semidefinite.
pub const PSD_TOL: f64 = -1e-10;
/// Eigenvalues above this count towards the rank.
pub const RANK_TOL: f64 = 1e-10;
/// Largest norm deviation `make_pure` renormalizes silently.
pub const FAMILY_NORM_TOL: f64 = 1e-6;

const ZERO: C64 = C64::new(0.0, 0.0);

fn real(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// A three-qubit wavefunction on the computational basis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PureState {
    coeffs: [C64; DIM],
}

impl PureState {
    /// Normalizes `coeffs`; fails on zero norm or non-finite input.
    pub fn new(coeffs: [C64; DIM]) -> Result<Self> {
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(TangleError::InvalidParameter(
                "non-finite amplitude".into(),
            ));
        }
        let norm = norm_sqr(&coeffs).sqrt();
        if norm == 0.0 {
            return Err(TangleError::Degenerate("zero-norm state"));
        }
        Ok(Self::from_normalized(scale(coeffs, norm)))
    }

    /// Wraps coefficients the caller has already normalized.
    pub fn from_normalized(coeffs: [C64; DIM]) -> Self {
        Self { coeffs }
    }

    pub fn basis(label: usize) -> Self {
        let mut coeffs = [ZERO; DIM];
        coeffs[label] = real(1.0);
        Self { coeffs }
    }

    pub fn coeffs(&self) -> &[C64; DIM] {
        &self.coeffs
    }

    pub fn norm_sqr(&self) -> f64 {
        norm_sqr(&self.coeffs)
    }

    /// `⟨self|other⟩`
    pub fn inner(&self, other: &PureState) -> C64 {
        self.coeffs
            .iter()
            .zip(other.coeffs.iter())
            .map(|(a, b)| a.conj() * b)
            .sum()
    }

    /// `|a⟩_A ⊗ |bc⟩_BC`.
    pub fn product(a: [C64; 2], bc: &TwoQubitState) -> Result<Self> {
        let mut coeffs = [ZERO; DIM];
        for (ja, amp_a) in a.iter().enumerate() {
            for (jbc, amp_bc) in bc.coeffs.iter().enumerate() {
                coeffs[4 * ja + jbc] = amp_a * amp_bc;
            }
        }
        Self::new(coeffs)
    }

    /// Applies a 2×2 matrix to one qubit (0 = A, 1 = B, 2 = C).
    pub fn apply_local(&self, qubit: usize, u: [[C64; 2]; 2]) -> Self {
        assert!(qubit < 3, "qubit index out of range");
        let bit = 1 << (2 - qubit);
        let mut out = [ZERO; DIM];
        for (alpha, slot) in out.iter_mut().enumerate() {
            let j = usize::from(alpha & bit != 0);
            let lo = alpha & !bit;
            *slot = u[j][0] * self.coeffs[lo] + u[j][1] * self.coeffs[lo | bit];
        }
        Self { coeffs: out }
    }

    /// Relabels qubits: qubit `k` of the result is qubit `perm[k]` of `self`.
    pub fn permute_qubits(&self, perm: [usize; 3]) -> Self {
        let mut out = [ZERO; DIM];
        for (alpha, slot) in out.iter_mut().enumerate() {
            let mut src = 0;
            for (k, &from) in perm.iter().enumerate() {
                if alpha & (1 << (2 - k)) != 0 {
                    src |= 1 << (2 - from);
                }
            }
            *slot = self.coeffs[src];
        }
        Self { coeffs: out }
    }

    /// `|ψ⟩⟨ψ|` as a density matrix.
    pub fn projector(&self) -> DensityMatrix {
        let mut entries = [ZERO; DIM * DIM];
        for a in 0..DIM {
            for b in 0..DIM {
                entries[a * DIM + b] = self.coeffs[a] * self.coeffs[b].conj();
            }
        }
        DensityMatrix { entries }
    }
}

fn norm_sqr<const N: usize>(coeffs: &[C64; N]) -> f64 {
    coeffs.iter().map(|c| c.norm_sqr()).sum()
}

fn scale<const N: usize>(mut coeffs: [C64; N], norm: f64) -> [C64; N] {
    for c in coeffs.iter_mut() {
        *c /= norm;
    }
    coeffs
}

/// A two-qubit pure state indexed `00, 01, 10, 11`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoQubitState {
    coeffs: [C64; 4],
}

impl TwoQubitState {
    pub fn new(coeffs: [C64; 4]) -> Result<Self> {
        if coeffs.iter().any(|c| !c.re.is_finite() || !c.im.is_finite()) {
            return Err(TangleError::InvalidParameter(
                "non-finite amplitude".into(),
            ));
        }
        let norm = norm_sqr(&coeffs).sqrt();
        if norm == 0.0 {
            return Err(TangleError::Degenerate("zero-norm state"));
        }
        Ok(Self {
            coeffs: scale(coeffs, norm),
        })
    }

    pub fn coeffs(&self) -> &[C64; 4] {
        &self.coeffs
    }

    /// Applies a 2×2 matrix to qubit 0 (first) or 1 (second).
    pub fn apply_local(&self, qubit: usize, u: [[C64; 2]; 2]) -> Self {
        assert!(qubit < 2, "qubit index out of range");
        let bit = 1 << (1 - qubit);
        let mut out = [ZERO; 4];
        for (alpha, slot) in out.iter_mut().enumerate() {
            let j = usize::from(alpha & bit != 0);
            let lo = alpha & !bit;
            *slot = u[j][0] * self.coeffs[lo] + u[j][1] * self.coeffs[lo | bit];
        }
        Self { coeffs: out }
    }
}

/// The named pure-state families, plus arbitrary coefficients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum StateFamily {
    Ghz,
    W,
    FlippedW,
    /// `a|000⟩ + b|111⟩`
    GeneralizedGhz { a: f64, b: f64 },
    /// `c|001⟩ + d|010⟩ + f|100⟩`
    GeneralizedW { c: f64, d: f64, f: f64 },
    Raw([C64; DIM]),
}

fn check_param_norm(name: &str, params: &[f64]) -> Result<f64> {
    if params.iter().any(|x| !x.is_finite()) {
        return Err(TangleError::InvalidParameter(format!(
            "{name}: non-finite parameter"
        )));
    }
    let norm = params.iter().map(|x| x * x).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > FAMILY_NORM_TOL {
        return Err(TangleError::InvalidParameter(format!(
            "{name}: parameter norm {norm} deviates from 1"
        )));
    }
    Ok(norm)
}

/// Builds the normalized pure state of a family.
pub fn make_pure(family: &StateFamily) -> Result<PureState> {
    let mut coeffs = [ZERO; DIM];
    match *family {
        StateFamily::Ghz => {
            let h = std::f64::consts::FRAC_1_SQRT_2;
            coeffs[0b000] = real(h);
            coeffs[0b111] = real(h);
        }
        StateFamily::W => {
            let t = 1.0 / 3f64.sqrt();
            coeffs[0b001] = real(t);
            coeffs[0b010] = real(t);
            coeffs[0b100] = real(t);
        }
        StateFamily::FlippedW => {
            let t = 1.0 / 3f64.sqrt();
            coeffs[0b110] = real(t);
            coeffs[0b101] = real(t);
            coeffs[0b011] = real(t);
        }
        StateFamily::GeneralizedGhz { a, b } => {
            check_param_norm("generalized GHZ", &[a, b])?;
            coeffs[0b000] = real(a);
            coeffs[0b111] = real(b);
        }
        StateFamily::GeneralizedW { c, d, f } => {
            check_param_norm("generalized W", &[c, d, f])?;
            coeffs[0b001] = real(c);
            coeffs[0b010] = real(d);
            coeffs[0b100] = real(f);
        }
        StateFamily::Raw(raw) => {
            check_param_norm(
                "raw state",
                &[norm_sqr(&raw).sqrt()],
            )?;
            coeffs = raw;
        }
    }
    PureState::new(coeffs)
}

/// Three-tangle `4|d1 − 2·d2 + 4·d3|` of normalized coefficients.
#[inline]
pub fn tangle_of(c: &[C64; DIM]) -> f64 {
    // Products of complementary basis pairs.
    let p07 = c[0b000] * c[0b111];
    let p16 = c[0b001] * c[0b110];
    let p25 = c[0b010] * c[0b101];
    let p43 = c[0b100] * c[0b011];
    let d1 = p07 * p07 + p16 * p16 + p25 * p25 + p43 * p43;
    let d2 = p07 * p43 + p07 * p25 + p07 * p16 + p43 * p25 + p43 * p16 + p25 * p16;
    let d3 = c[0b000] * c[0b110] * c[0b101] * c[0b011]
        + c[0b111] * c[0b001] * c[0b010] * c[0b100];
    4.0 * (d1 - d2 * 2.0 + d3 * 4.0).norm_sqr().sqrt()
}

pub fn three_tangle_pure(psi: &PureState) -> f64 {
    tangle_of(&psi.coeffs)
}

/// Concurrence `2|φ00·φ11 − φ01·φ10|`.
pub fn concurrence_pure(psi: &TwoQubitState) -> f64 {
    let c = &psi.coeffs;
    2.0 * (c[0] * c[3] - c[1] * c[2]).norm()
}

/// An 8×8 complex matrix, row-major. Values built through the checked
/// constructors satisfy Hermiticity, unit trace and positivity.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "Vec<[C64; DIM]>", try_from = "Vec<[C64; DIM]>")]
pub struct DensityMatrix {
    entries: [C64; DIM * DIM],
}

impl From<DensityMatrix> for Vec<[C64; DIM]> {
    fn from(rho: DensityMatrix) -> Self {
        rho.entries
            .chunks_exact(DIM)
            .map(|row| row.try_into().expect("row of length DIM"))
            .collect()
    }
}

impl TryFrom<Vec<[C64; DIM]>> for DensityMatrix {
    type Error = String;

    fn try_from(rows: Vec<[C64; DIM]>) -> std::result::Result<Self, Self::Error> {
        if rows.len() != DIM {
            return Err(format!("expected {DIM} rows, got {}", rows.len()));
        }
        let mut entries = [ZERO; DIM * DIM];
        for (k, row) in rows.iter().enumerate() {
            entries[k * DIM..(k + 1) * DIM].copy_from_slice(row);
        }
        Ok(Self { entries })
    }
}

/// Invariant diagnostics of a candidate density matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `max |ρ_ab − conj(ρ_ba)|`
    pub hermiticity_deviation: f64,
    /// `|Re tr ρ − 1| + |Im tr ρ|`
    pub trace_deviation: f64,
    pub min_eigenvalue: f64,
    /// Ascending eigenvalues of the Hermitian part.
    pub eigenvalues: Vec<f64>,
    pub rank: usize,
}

impl Diagnostics {
    pub fn is_valid(&self) -> bool {
        self.first_violation().is_none()
    }

    fn first_violation(&self) -> Option<TangleError> {
        if self.hermiticity_deviation > DENSITY_TOL || self.hermiticity_deviation.is_nan() {
            return Some(TangleError::InvalidDensity {
                invariant: "hermiticity",
                deviation: self.hermiticity_deviation,
            });
        }
        if self.trace_deviation > DENSITY_TOL || self.trace_deviation.is_nan() {
            return Some(TangleError::InvalidDensity {
                invariant: "unit trace",
                deviation: self.trace_deviation,
            });
        }
        if self.min_eigenvalue < PSD_TOL || self.min_eigenvalue.is_nan() {
            return Some(TangleError::InvalidDensity {
                invariant: "positive semidefiniteness",
                deviation: -self.min_eigenvalue,
            });
        }
        None
    }
}

impl DensityMatrix {
    /// Checked constructor.
    pub fn new(entries: [C64; DIM * DIM]) -> Result<Self> {
        let rho = Self { entries };
        match validate_density(&rho).first_violation() {
            Some(err) => Err(err),
            None => Ok(rho),
        }
    }

    /// No invariant checks; used for intermediate matrices such as
    /// realized decompositions.
    pub fn from_entries_unchecked(entries: [C64; DIM * DIM]) -> Self {
        Self { entries }
    }

    pub fn zeros() -> Self {
        Self {
            entries: [ZERO; DIM * DIM],
        }
    }

    pub fn maximally_mixed() -> Self {
        let mut rho = Self::zeros();
        for a in 0..DIM {
            rho.entries[a * DIM + a] = real(1.0 / DIM as f64);
        }
        rho
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> C64 {
        self.entries[row * DIM + col]
    }

    pub fn entries(&self) -> &[C64; DIM * DIM] {
        &self.entries
    }

    pub fn trace(&self) -> C64 {
        (0..DIM).map(|a| self.get(a, a)).sum()
    }

    /// `Σ_k w_k · m_k`, unchecked.
    pub fn weighted_sum<'a>(terms: impl IntoIterator<Item = (f64, &'a DensityMatrix)>) -> Self {
        let mut out = Self::zeros();
        for (w, m) in terms {
            for (o, e) in out.entries.iter_mut().zip(m.entries.iter()) {
                *o += e * w;
            }
        }
        out
    }

    /// Parses the line-oriented text format: a dimension line (`8`) then 64
    /// lines `row col re im`, 0-based. `#` starts a comment.
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| TangleError::FileFormat {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut dim_seen = false;
        let mut slots: [Option<C64>; DIM * DIM] = [None; DIM * DIM];
        for (idx, raw) in text.lines().enumerate() {
            let lineno = idx + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            if !dim_seen {
                let dim: usize = match fields.as_slice() {
                    [d] => d
                        .parse()
                        .map_err(|_| err(lineno, format!("bad dimension `{d}`")))?,
                    _ => return Err(err(lineno, "expected a single dimension value".into())),
                };
                if dim != DIM {
                    return Err(err(lineno, format!("dimension must be {DIM}, got {dim}")));
                }
                dim_seen = true;
                continue;
            }
            let [r, c, re, im] = fields.as_slice() else {
                return Err(err(lineno, "expected `row col re im`".into()));
            };
            let parse_idx = |s: &str| -> Result<usize> {
                let v: usize = s
                    .parse()
                    .map_err(|_| err(lineno, format!("bad index `{s}`")))?;
                if v >= DIM {
                    return Err(err(lineno, format!("index {v} out of range")));
                }
                Ok(v)
            };
            let parse_val = |s: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| err(lineno, format!("bad number `{s}`")))?;
                if !v.is_finite() {
                    return Err(err(lineno, format!("non-finite number `{s}`")));
                }
                Ok(v)
            };
            let (row, col) = (parse_idx(r)?, parse_idx(c)?);
            let value = C64::new(parse_val(re)?, parse_val(im)?);
            let slot = &mut slots[row * DIM + col];
            if slot.is_some() {
                return Err(err(lineno, format!("duplicate entry ({row}, {col})")));
            }
            *slot = Some(value);
        }
        if !dim_seen {
            return Err(err(0, "missing dimension line".into()));
        }
        let mut entries = [ZERO; DIM * DIM];
        for (k, slot) in slots.iter().enumerate() {
            match slot {
                Some(v) => entries[k] = *v,
                None => {
                    return Err(err(
                        0,
                        format!("missing entry ({}, {})", k / DIM, k % DIM),
                    ))
                }
            }
        }
        Self::new(entries)
    }

    pub fn read_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|source| TangleError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Renders the text format with 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut out = format!("{DIM}\n");
        for a in 0..DIM {
            for b in 0..DIM {
                let v = self.get(a, b);
                let _ = writeln!(out, "{a} {b} {:.16e} {:.16e}", v.re, v.im);
            }
        }
        out
    }
}

/// Reports every density-matrix invariant; never fails.
pub fn validate_density(rho: &DensityMatrix) -> Diagnostics {
    let mut herm = 0.0f64;
    for a in 0..DIM {
        for b in 0..DIM {
            herm = herm.max((rho.get(a, b) - rho.get(b, a).conj()).norm());
        }
    }
    let tr = rho.trace();
    let trace_deviation = (tr.re - 1.0).abs() + tr.im.abs();

    // Eigenvalues of the Hermitian part (exact for Hermitian input).
    let m = SMatrix::<C64, DIM, DIM>::from_fn(|a, b| {
        (rho.get(a, b) + rho.get(b, a).conj()) * 0.5
    });
    let mut eigenvalues: Vec<f64> = if m.iter().all(|z| z.re.is_finite() && z.im.is_finite()) {
        m.symmetric_eigenvalues().iter().copied().collect()
    } else {
        vec![f64::NAN; DIM]
    };
    eigenvalues.sort_by(|x, y| x.total_cmp(y));
    let min_eigenvalue = eigenvalues[0];
    let rank = eigenvalues.iter().filter(|&&l| l > RANK_TOL).count();
    Diagnostics {
        hermiticity_deviation: herm,
        trace_deviation,
        min_eigenvalue,
        eigenvalues,
        rank,
    }
}

/// The mixed-state families plus file input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "lowercase")]
pub enum ScenarioSpec {
    /// `p·GHZ + (1−p)·W`
    GhzW { p: f64 },
    /// `p·gGHZ(a, b) + (1−p)·gW(c, d, f)` with `b`, `f` the nonnegative
    /// completions of the normalization.
    GGhzGW { p: f64, a: f64, c: f64, d: f64 },
    /// `p·GHZ + q·W + (1−p−q)·W̃` with `q = (1−p)/n`.
    GhzWFlipW { p: f64, n: f64 },
    /// `p·GHZ + (1−p)/8 · 1`
    GhzNoise { p: f64 },
    FromFile { path: PathBuf },
}

impl ScenarioSpec {
    pub fn family_name(&self) -> &'static str {
        match self {
            ScenarioSpec::GhzW { .. } => "ghzw",
            ScenarioSpec::GGhzGW { .. } => "gghzgw",
            ScenarioSpec::GhzWFlipW { .. } => "ghzwflipw",
            ScenarioSpec::GhzNoise { .. } => "ghznoise",
            ScenarioSpec::FromFile { .. } => "file",
        }
    }

    pub fn p(&self) -> Option<f64> {
        match *self {
            ScenarioSpec::GhzW { p }
            | ScenarioSpec::GGhzGW { p, .. }
            | ScenarioSpec::GhzWFlipW { p, .. }
            | ScenarioSpec::GhzNoise { p } => Some(p),
            ScenarioSpec::FromFile { .. } => None,
        }
    }

    /// Same family and parameters with a different mixing weight.
    pub fn with_p(&self, p: f64) -> Self {
        let mut out = self.clone();
        match &mut out {
            ScenarioSpec::GhzW { p: q }
            | ScenarioSpec::GGhzGW { p: q, .. }
            | ScenarioSpec::GhzWFlipW { p: q, .. }
            | ScenarioSpec::GhzNoise { p: q } => *q = p,
            ScenarioSpec::FromFile { .. } => {}
        }
        out
    }

    /// The pure-state ensemble that defines the mixture, when the family has
    /// one. White noise uses the computational basis for the identity.
    pub fn defining_ensemble(&self) -> Result<Option<Vec<(f64, PureState)>>> {
        let ensemble = match *self {
            ScenarioSpec::GhzW { p } => {
                check_p(p)?;
                vec![
                    (p, make_pure(&StateFamily::Ghz)?),
                    (1.0 - p, make_pure(&StateFamily::W)?),
                ]
            }
            ScenarioSpec::GGhzGW { p, a, c, d } => {
                check_p(p)?;
                let (ghz, w) = generalized_pair(a, c, d)?;
                vec![(p, ghz), (1.0 - p, w)]
            }
            ScenarioSpec::GhzWFlipW { p, n } => {
                check_p(p)?;
                if !(n.is_finite() && n > 0.0) {
                    return Err(TangleError::InvalidParameter(format!(
                        "n must be positive, got {n}"
                    )));
                }
                let q = (1.0 - p) / n;
                let rest = 1.0 - p - q;
                if rest < 0.0 {
                    return Err(TangleError::NegativeWeight {
                        component: "flipped W",
                        weight: rest,
                    });
                }
                vec![
                    (p, make_pure(&StateFamily::Ghz)?),
                    (q, make_pure(&StateFamily::W)?),
                    (rest, make_pure(&StateFamily::FlippedW)?),
                ]
            }
            ScenarioSpec::GhzNoise { p } => {
                check_p(p)?;
                let mut ens = vec![(p, make_pure(&StateFamily::Ghz)?)];
                ens.extend((0..DIM).map(|k| ((1.0 - p) / DIM as f64, PureState::basis(k))));
                ens
            }
            ScenarioSpec::FromFile { .. } => return Ok(None),
        };
        Ok(Some(ensemble))
    }
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(TangleError::InvalidParameter(format!(
            "mixing weight p must lie in [0, 1], got {p}"
        )));
    }
    Ok(())
}

/// `(gGHZ(a, √(1−a²)), gW(c, d, √(1−c²−d²)))`.
pub fn generalized_pair(a: f64, c: f64, d: f64) -> Result<(PureState, PureState)> {
    let b2 = 1.0 - a * a;
    let f2 = 1.0 - c * c - d * d;
    if b2 < 0.0 || f2 < 0.0 || !b2.is_finite() || !f2.is_finite() {
        return Err(TangleError::InvalidParameter(format!(
            "generalized amplitudes out of range: a={a}, c={c}, d={d}"
        )));
    }
    Ok((
        make_pure(&StateFamily::GeneralizedGhz { a, b: b2.sqrt() })?,
        make_pure(&StateFamily::GeneralizedW { c, d, f: f2.sqrt() })?,
    ))
}

/// Builds and validates the target density matrix of a scenario.
pub fn make_density(spec: &ScenarioSpec) -> Result<DensityMatrix> {
    if let ScenarioSpec::FromFile { path } = spec {
        return DensityMatrix::read_file(path);
    }
    let ensemble = spec
        .defining_ensemble()?
        .expect("mixture families always have an ensemble");
    let projectors: Vec<(f64, DensityMatrix)> =
        ensemble.iter().map(|(w, s)| (*w, s.projector())).collect();
    let rho = DensityMatrix::weighted_sum(projectors.iter().map(|(w, m)| (*w, m)));
    DensityMatrix::new(rho.entries)
}
