//! The convex-roof objective: pure-state decompositions of a target density
//! matrix, the constraint residual, and the penalty energy.

use rand::Rng;
use rand_distr::{Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, TangleError};
use nalgebra::{DMatrix, SMatrix};

use crate::qstate::{three_tangle_pure, DensityMatrix, PureState, C64, DIM, RANK_TOL};

/// Tolerance of the weight-sum and state-norm invariants.
pub const DECOMPOSITION_TOL: f64 = 1e-12;

/// Deviations below this are left untouched by [`normalize`], which makes it
/// bitwise idempotent.
const RENORM_SKIP: f64 = 1e-14;

/// Weights `p_i` and member states `|Ψ_i⟩`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    weights: Vec<f64>,
    states: Vec<PureState>,
}

impl Decomposition {
    /// Checked constructor: weights nonnegative summing to 1, unit states.
    pub fn new(weights: Vec<f64>, states: Vec<PureState>) -> Result<Self> {
        let dec = Self::from_parts_unchecked(weights, states)?;
        let sum: f64 = dec.weights.iter().sum();
        if (sum - 1.0).abs() > DECOMPOSITION_TOL {
            return Err(TangleError::InvalidParameter(format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        if let Some(s) = dec
            .states
            .iter()
            .find(|s| (s.norm_sqr() - 1.0).abs() > DECOMPOSITION_TOL)
        {
            return Err(TangleError::InvalidParameter(format!(
                "member state has squared norm {}",
                s.norm_sqr()
            )));
        }
        Ok(dec)
    }

    /// Shape and sign checks only; normalization is left to the caller.
    pub fn from_parts_unchecked(weights: Vec<f64>, states: Vec<PureState>) -> Result<Self> {
        if weights.is_empty() || weights.len() != states.len() {
            return Err(TangleError::InvalidParameter(format!(
                "{} weights for {} states",
                weights.len(),
                states.len()
            )));
        }
        if let Some(w) = weights.iter().find(|w| !(**w >= 0.0) || !w.is_finite()) {
            return Err(TangleError::NegativeWeight {
                component: "decomposition",
                weight: *w,
            });
        }
        Ok(Self { weights, states })
    }

    pub fn from_ensemble(ensemble: &[(f64, PureState)]) -> Result<Self> {
        let (w, s) = ensemble.iter().copied().unzip();
        Self::new(w, s)
    }

    /// Partition count `N_p`.
    pub fn np(&self) -> usize {
        self.weights.len()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn states(&self) -> &[PureState] {
        &self.states
    }

    pub(crate) fn weights_mut(&mut self) -> &mut Vec<f64> {
        &mut self.weights
    }

    pub(crate) fn states_mut(&mut self) -> &mut Vec<PureState> {
        &mut self.states
    }

    /// Appends zero-weight copies of the first state up to `np` members.
    pub fn padded(&self, np: usize) -> Self {
        let mut out = self.clone();
        while out.np() < np {
            out.weights.push(0.0);
            out.states.push(self.states[0]);
        }
        out
    }
}

/// Penalty weight and target of the energy function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnergyParams {
    pub kappa: f64,
    pub target: DensityMatrix,
}

impl EnergyParams {
    pub fn new(kappa: f64, target: DensityMatrix) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(TangleError::InvalidParameter(format!(
                "kappa must be positive, got {kappa}"
            )));
        }
        Ok(Self { kappa, target })
    }
}

/// `Σ_i p_i |Ψ_i⟩⟨Ψ_i|`.
pub fn realized_density(dec: &Decomposition) -> DensityMatrix {
    let mut entries = [C64::new(0.0, 0.0); DIM * DIM];
    for (p, s) in dec.weights.iter().zip(&dec.states) {
        let c = s.coeffs();
        for a in 0..DIM {
            let ca = c[a] * *p;
            for b in 0..DIM {
                entries[a * DIM + b] += ca * c[b].conj();
            }
        }
    }
    DensityMatrix::from_entries_unchecked(entries)
}

/// `Σ_{α,β} |ρ_dec(α,β) − ρ(α,β)|²` over all 64 entries.
pub fn residual_r2(dec: &Decomposition, target: &DensityMatrix) -> f64 {
    realized_density(dec)
        .entries()
        .iter()
        .zip(target.entries())
        .map(|(x, y)| (x - y).norm_sqr())
        .sum()
}

/// `Σ_i p_i τ3(Ψ_i)`.
pub fn average_tangle(dec: &Decomposition) -> f64 {
    dec.weights
        .iter()
        .zip(&dec.states)
        .map(|(p, s)| p * three_tangle_pure(s))
        .sum()
}

/// `average_tangle + κ·R²`.
pub fn energy(dec: &Decomposition, params: &EnergyParams) -> f64 {
    average_tangle(dec) + params.kappa * residual_r2(dec, &params.target)
}

/// Rescales every state to unit norm and the weights to unit sum.
pub fn normalize(dec: &Decomposition) -> Result<Decomposition> {
    let mut out = dec.clone();
    normalize_in_place(&mut out)?;
    Ok(out)
}

pub(crate) fn normalize_in_place(dec: &mut Decomposition) -> Result<()> {
    let total: f64 = dec.weights.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(TangleError::Degenerate("all weights are zero"));
    }
    for s in dec.states.iter_mut() {
        let n2 = s.norm_sqr();
        if !(n2 > 0.0) || !n2.is_finite() {
            return Err(TangleError::Degenerate("zero-norm member state"));
        }
        if (n2 - 1.0).abs() > RENORM_SKIP {
            *s = PureState::new(*s.coeffs())?;
        }
    }
    if (total - 1.0).abs() > RENORM_SKIP {
        for w in dec.weights.iter_mut() {
            *w /= total;
        }
    }
    Ok(())
}

/// A uniformly random unit vector in C^8.
pub fn random_state<R: Rng + ?Sized>(rng: &mut R) -> PureState {
    loop {
        let mut c = [C64::new(0.0, 0.0); DIM];
        for z in c.iter_mut() {
            *z = C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal));
        }
        if let Ok(s) = PureState::new(c) {
            return s;
        }
    }
}

/// Weights uniform on the simplex, states Haar-random.
pub fn random_decomposition<R: Rng + ?Sized>(np: usize, rng: &mut R) -> Result<Decomposition> {
    if np == 0 {
        return Err(TangleError::InvalidParameter("np must be at least 1".into()));
    }
    let raw: Vec<f64> = (0..np).map(|_| rng.sample::<f64, _>(Exp1)).collect();
    let total: f64 = raw.iter().sum();
    let weights = raw.iter().map(|w| w / total).collect();
    let states = (0..np).map(|_| random_state(rng)).collect();
    Decomposition::new(weights, states)
}

/// Random decomposition that reproduces `target` exactly: the spectral
/// decomposition mixed by a Haar-random `np × rank` isometry. When `np` is
/// below the rank, only the `np` largest eigencomponents are used.
pub fn random_feasible_decomposition<R: Rng + ?Sized>(
    target: &DensityMatrix,
    np: usize,
    rng: &mut R,
) -> Result<Decomposition> {
    if np == 0 {
        return Err(TangleError::InvalidParameter("np must be at least 1".into()));
    }
    let (mut lambda, mut vecs) = support(target)?;
    lambda.truncate(np);
    vecs.truncate(np);
    if lambda.is_empty() {
        return Err(TangleError::Degenerate("target has no positive eigenvalue"));
    }

    // Orthonormal columns w_k in C^np by Gram-Schmidt on Gaussian vectors.
    let mut cols: Vec<Vec<C64>> = Vec::with_capacity(lambda.len());
    while cols.len() < lambda.len() {
        let mut v: Vec<C64> = (0..np)
            .map(|_| C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)))
            .collect();
        for w in &cols {
            let overlap: C64 = w.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
            v.iter_mut().zip(w).for_each(|(x, a)| *x -= a * overlap);
        }
        let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
    }

    let mut weights = Vec::with_capacity(np);
    let mut states = Vec::with_capacity(np);
    for i in 0..np {
        let mut c = [C64::new(0.0, 0.0); DIM];
        for ((w, l), v) in cols.iter().zip(&lambda).zip(&vecs) {
            let f = w[i] * l.sqrt();
            c.iter_mut().zip(v).for_each(|(z, x)| *z += f * x);
        }
        let p: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        match PureState::new(c) {
            Ok(s) => {
                weights.push(p);
                states.push(s);
            }
            Err(_) => {
                weights.push(0.0);
                states.push(random_state(rng));
            }
        }
    }
    let mut dec = Decomposition::from_parts_unchecked(weights, states)?;
    normalize_in_place(&mut dec)?;
    Ok(dec)
}

/// Hermitian part of `target` diagonalized, keeping eigenpairs above
/// [`RANK_TOL`] in descending order.
fn support(target: &DensityMatrix) -> Result<(Vec<f64>, Vec<[C64; DIM]>)> {
    let m = SMatrix::<C64, DIM, DIM>::from_fn(|a, b| (target.get(a, b) + target.get(b, a).conj()) * 0.5);
    if m.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(TangleError::Degenerate("non-finite target"));
    }
    let eig = m.symmetric_eigen();
    let mut order: Vec<usize> = (0..DIM).filter(|&k| eig.eigenvalues[k] > RANK_TOL).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[y].total_cmp(&eig.eigenvalues[x]));
    let values = order.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vectors = order
        .iter()
        .map(|&k| std::array::from_fn(|a| eig.eigenvectors[(a, k)]))
        .collect();
    Ok((values, vectors))
}

/// `M^{-1/2}` of a Hermitian positive definite matrix.
fn inverse_sqrt(m: DMatrix<C64>) -> Option<DMatrix<C64>> {
    let n = m.nrows();
    let eig = m.symmetric_eigen();
    let scale = eig.eigenvalues.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
    if eig.eigenvalues.iter().any(|&g| !(g > 1e-12 * scale.max(f64::MIN_POSITIVE))) {
        return None;
    }
    let u = &eig.eigenvectors;
    Some(DMatrix::from_fn(n, n, |a, b| {
        (0..n)
            .map(|k| u[(a, k)] * u[(b, k)].conj() / eig.eigenvalues[k].sqrt())
            .sum()
    }))
}

/// Maps a nearly feasible decomposition onto one that reproduces `target`
/// up to round-off, moving the amplitude vectors `√p_i Ψ_i` as little as
/// possible.
///
/// The vectors are expressed in the eigenbasis of `target` (components off
/// its support are dropped) and multiplied by the positive matrix `T` with
/// `T G T = Λ`, where `G` is their Gram matrix and `Λ` the eigenvalues:
/// `T = Λ^{1/2} (Λ^{1/2} G Λ^{1/2})^{-1/2} Λ^{1/2}`. Fails when the
/// members do not span the support.
pub fn project_feasible(dec: &Decomposition, target: &DensityMatrix) -> Result<Decomposition> {
    let (lambda, vecs) = support(target)?;
    let r = lambda.len();
    if r == 0 {
        return Err(TangleError::Degenerate("target has no positive eigenvalue"));
    }
    let np = dec.np();
    // A[k, i] = <v_k | √p_i Ψ_i>
    let a = DMatrix::from_fn(r, np, |k, i| {
        let f = dec.weights()[i].max(0.0).sqrt();
        let c = dec.states()[i].coeffs();
        vecs[k].iter().zip(c).map(|(v, x)| v.conj() * x).sum::<C64>() * f
    });
    let sq: Vec<f64> = lambda.iter().map(|l| l.sqrt()).collect();
    let g = &a * a.adjoint();
    let s = DMatrix::from_fn(r, r, |x, y| g[(x, y)] * (sq[x] * sq[y]));
    let s_inv = inverse_sqrt(s).ok_or(TangleError::Degenerate("members do not span the target support"))?;
    let t = DMatrix::from_fn(r, r, |x, y| s_inv[(x, y)] * (sq[x] * sq[y]));
    let b = t * a;

    let mut weights = Vec::with_capacity(np);
    let mut states = Vec::with_capacity(np);
    for i in 0..np {
        let mut c = [C64::new(0.0, 0.0); DIM];
        for (k, v) in vecs.iter().enumerate() {
            let f = b[(k, i)];
            c.iter_mut().zip(v).for_each(|(z, x)| *z += f * x);
        }
        let p: f64 = c.iter().map(|z| z.norm_sqr()).sum();
        match PureState::new(c) {
            Ok(st) => {
                weights.push(p);
                states.push(st);
            }
            Err(_) => {
                weights.push(0.0);
                states.push(dec.states()[i]);
            }
        }
    }
    let mut out = Decomposition::from_parts_unchecked(weights, states)?;
    normalize_in_place(&mut out)?;
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{make_density, make_pure, ScenarioSpec, StateFamily};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn ghz() -> PureState {
        make_pure(&StateFamily::Ghz).unwrap()
    }
    fn w() -> PureState {
        make_pure(&StateFamily::W).unwrap()
    }

    #[test]
    fn realized_density_examples() {
        let single = Decomposition::new(vec![1.0], vec![ghz()]).unwrap();
        assert_eq!(realized_density(&single), ghz().projector());

        let half = Decomposition::new(vec![0.5, 0.5], vec![ghz(), w()]).unwrap();
        let target = make_density(&ScenarioSpec::GhzW { p: 0.5 }).unwrap();
        assert!(residual_r2(&half, &target) < 1e-30);
    }

    #[test]
    fn residual_examples() {
        let single = Decomposition::new(vec![1.0], vec![ghz()]).unwrap();
        // Disjoint supports: 4·(1/2)² + 9·(1/3)² = 2.
        assert!((residual_r2(&single, &w().projector()) - 2.0).abs() < 1e-14);
        assert_eq!(residual_r2(&single, &ghz().projector()), 0.0);

        let ens = ScenarioSpec::GhzW { p: 0.3 }.defining_ensemble().unwrap().unwrap();
        let dec = Decomposition::from_ensemble(&ens).unwrap();
        let target = make_density(&ScenarioSpec::GhzW { p: 0.3 }).unwrap();
        assert!(residual_r2(&dec, &target) < 1e-28);
    }

    #[test]
    fn tangle_and_energy_examples() {
        let g = Decomposition::new(vec![1.0], vec![ghz()]).unwrap();
        let h = Decomposition::new(vec![0.5, 0.5], vec![ghz(), w()]).unwrap();
        let ww = Decomposition::new(vec![1.0], vec![w()]).unwrap();
        assert!((average_tangle(&g) - 1.0).abs() < 1e-15);
        assert!((average_tangle(&h) - 0.5).abs() < 1e-15);
        assert!(average_tangle(&ww).abs() < 1e-15);

        let at_ghz = EnergyParams::new(1e6, ghz().projector()).unwrap();
        assert!((energy(&g, &at_ghz) - 1.0).abs() < 1e-15);
        let at_w = EnergyParams::new(1e4, w().projector()).unwrap();
        assert!((energy(&g, &at_w) - 20001.0).abs() < 1e-9);
        assert!(energy(&ww, &EnergyParams::new(123.0, w().projector()).unwrap()).abs() < 1e-15);
    }

    #[test]
    fn normalize_examples() {
        let d = Decomposition::from_parts_unchecked(vec![2.0, 2.0], vec![ghz(), w()]).unwrap();
        assert_eq!(normalize(&d).unwrap().weights(), &[0.5, 0.5]);

        let unit = Decomposition::new(vec![0.25, 0.75], vec![ghz(), w()]).unwrap();
        assert_eq!(normalize(&unit).unwrap(), unit);

        let mut doubled = *ghz().coeffs();
        doubled.iter_mut().for_each(|c| *c *= 2.0);
        let big = Decomposition::from_parts_unchecked(
            vec![1.0],
            vec![PureState::from_normalized(doubled)],
        )
        .unwrap();
        let n = normalize(&big).unwrap();
        assert!((n.states()[0].norm_sqr() - 1.0).abs() < 1e-15);
        assert!((n.states()[0].inner(&ghz()).norm() - 1.0).abs() < 1e-15);
        assert!((average_tangle(&n) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalize_rejects_degenerate() {
        let zero_w = Decomposition::from_parts_unchecked(vec![0.0, 0.0], vec![ghz(), w()]).unwrap();
        assert!(matches!(normalize(&zero_w), Err(TangleError::Degenerate(_))));
        let zero_s = Decomposition::from_parts_unchecked(
            vec![1.0],
            vec![PureState::from_normalized([C64::new(0.0, 0.0); DIM])],
        )
        .unwrap();
        assert!(matches!(normalize(&zero_s), Err(TangleError::Degenerate(_))));
    }

    #[test]
    fn random_decomposition_contract() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = random_decomposition(4, &mut rng).unwrap();
        assert_eq!(d.np(), 4);
        assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(d.states().iter().all(|s| (s.norm_sqr() - 1.0).abs() < 1e-12));

        let one = random_decomposition(1, &mut rng).unwrap();
        assert_eq!(one.weights(), &[1.0]);

        let a = random_decomposition(5, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        let b = random_decomposition(5, &mut ChaCha8Rng::seed_from_u64(11)).unwrap();
        assert_eq!(a, b);
        assert!(random_decomposition(0, &mut rng).is_err());
    }

    #[test]
    fn feasible_start_reproduces_target() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for (spec, np) in [
            (ScenarioSpec::GhzWFlipW { p: 0.8, n: 2.0 }, 4),
            (ScenarioSpec::GhzW { p: 0.4 }, 2),
            (ScenarioSpec::GhzNoise { p: 0.9 }, 15),
        ] {
            let target = make_density(&spec).unwrap();
            let d = random_feasible_decomposition(&target, np, &mut rng).unwrap();
            assert_eq!(d.np(), np);
            assert!((d.weights().iter().sum::<f64>() - 1.0).abs() < 1e-12);
            assert!(residual_r2(&d, &target) < 1e-26, "{spec:?}");
        }
        let target = make_density(&ScenarioSpec::GhzNoise { p: 0.5 }).unwrap();
        let short = random_feasible_decomposition(&target, 3, &mut rng).unwrap();
        assert!(residual_r2(&short, &target) > 1e-3);
    }

    #[test]
    fn projection_restores_exact_feasibility() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let target = make_density(&ScenarioSpec::GhzWFlipW { p: 0.8, n: 2.0 }).unwrap();
        let exact = random_feasible_decomposition(&target, 4, &mut rng).unwrap();

        // Already feasible: essentially unchanged.
        let same = project_feasible(&exact, &target).unwrap();
        assert!((average_tangle(&same) - average_tangle(&exact)).abs() < 1e-12);

        let states: Vec<PureState> = exact
            .states()
            .iter()
            .map(|s| {
                let mut c = *s.coeffs();
                for z in c.iter_mut() {
                    *z += C64::new(rng.sample(StandardNormal), rng.sample(StandardNormal)) * 1e-4;
                }
                PureState::new(c).unwrap()
            })
            .collect();
        let bent = Decomposition::new(exact.weights().to_vec(), states).unwrap();
        assert!(residual_r2(&bent, &target) > 1e-10);
        let fixed = project_feasible(&bent, &target).unwrap();
        assert!(residual_r2(&fixed, &target) < 1e-26);
        let moved: f64 = fixed
            .weights()
            .iter()
            .zip(bent.weights())
            .map(|(a, b)| (a - b).abs())
            .sum();
        assert!(moved < 1e-2, "{moved}");
    }

    #[test]
    fn projection_needs_spanning_members() {
        let target = make_density(&ScenarioSpec::GhzW { p: 0.5 }).unwrap();
        let one = Decomposition::new(vec![1.0], vec![ghz()]).unwrap();
        assert!(project_feasible(&one, &target).is_err());
    }
}
