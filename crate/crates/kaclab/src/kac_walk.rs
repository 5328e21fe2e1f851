//! The Kac walk chain engine.
//!
//! A walk is driven by an update sequence {(i_t, θ_t)}: at step t the state
//! is left-multiplied by the rotation R(i_t, θ_t), so
//! X_{t+1} = R(i_t, θ_t) X_t. Under the random sequence (i_t uniform on the
//! planes, θ_t uniform on [0, 2π)) the chain's stationary law is the Haar
//! measure, and the first column performs Kac's walk on the sphere S^{n−1}.

use crate::error::{Error, Result};
use crate::rng::{self, Stream};
use crate::son_core::{self, PlaneIndex, SoMatrix};
use std::io::{BufRead, Write};

/// Chain position: a group element plus the number of applied updates.
#[derive(Clone, Debug)]
pub struct WalkState {
    pub x: SoMatrix,
    pub t: u64,
}

impl WalkState {
    /// Walk started at the identity.
    pub fn identity(n: usize) -> Self {
        Self {
            x: SoMatrix::identity(n),
            t: 0,
        }
    }

    /// Walk started at an arbitrary group element.
    pub fn from_matrix(x: SoMatrix) -> Self {
        Self { x, t: 0 }
    }

    pub fn dim(&self) -> usize {
        self.x.dim()
    }
}

/// One walk update: a 1-based plane ordinal and an angle in [0, 2π).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Update {
    pub plane: usize,
    pub angle: f64,
}

/// An ordered list of updates for a declared dimension.
#[derive(Clone, Debug)]
pub struct UpdateSequence {
    n: usize,
    items: Vec<Update>,
}

impl UpdateSequence {
    /// Validate plane ordinals and angle range.
    pub fn new(n: usize, items: Vec<Update>) -> Result<Self> {
        let count = son_core::plane_count(n);
        for (t, u) in items.iter().enumerate() {
            if u.plane < 1 || u.plane > count {
                return Err(Error::Domain(format!(
                    "update {t}: plane {} out of range 1..={count}",
                    u.plane
                )));
            }
            if !(0.0..2.0 * std::f64::consts::PI).contains(&u.angle) {
                return Err(Error::Domain(format!(
                    "update {t}: angle {} outside [0, 2π)",
                    u.angle
                )));
            }
        }
        Ok(Self { n, items })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> &[Update] {
        &self.items
    }

    /// Concatenation (same dimension).
    pub fn concat(&self, rhs: &Self) -> Result<Self> {
        if self.n != rhs.n {
            return Err(Error::Domain("concat: dimension mismatch".into()));
        }
        let mut items = self.items.clone();
        items.extend_from_slice(&rhs.items);
        Ok(Self { n: self.n, items })
    }

    /// Audit/replay CSV with columns (t, i, theta). Angles are printed with
    /// 17 significant digits, enough for a bit-exact round-trip.
    pub fn write_csv(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "t,i,theta")?;
        for (t, u) in self.items.iter().enumerate() {
            writeln!(w, "{t},{},{:.16e}", u.plane, u.angle)?;
        }
        Ok(())
    }

    /// Parse the CSV written by [`Self::write_csv`].
    pub fn read_csv(n: usize, r: impl BufRead) -> Result<Self> {
        let mut items = Vec::new();
        for (lineno, line) in r.lines().enumerate() {
            let line = line.map_err(|e| Error::Domain(format!("csv read: {e}")))?;
            let line = line.trim();
            if line.is_empty() || (lineno == 0 && line.starts_with("t,")) {
                continue;
            }
            let mut fields = line.split(',');
            let _t = fields
                .next()
                .ok_or_else(|| Error::Domain(format!("csv line {lineno}: missing t")))?;
            let plane: usize = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Domain(format!("csv line {lineno}: bad plane")))?;
            let angle: f64 = fields
                .next()
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| Error::Domain(format!("csv line {lineno}: bad angle")))?;
            items.push(Update { plane, angle });
        }
        Self::new(n, items)
    }
}

/// T i.i.d. updates: plane uniform on {1..N}, angle uniform on [0, 2π).
pub fn random_update_sequence(n: usize, t: usize, rng: &mut Stream) -> UpdateSequence {
    let count = son_core::plane_count(n);
    let items = (0..t)
        .map(|_| Update {
            plane: 1 + rng::uniform_index(rng, count),
            angle: rng::uniform_angle(rng),
        })
        .collect();
    UpdateSequence { n, items }
}

/// Apply the updates left to right; the step counter advances by the
/// sequence length and the state is re-orthonormalized on cadence.
pub fn run_walk(state: WalkState, seq: &UpdateSequence) -> Result<WalkState> {
    if state.dim() != seq.n {
        return Err(Error::Domain(format!(
            "run_walk: state dimension {} vs sequence dimension {}",
            state.dim(),
            seq.n
        )));
    }
    let n = state.dim();
    let mut x = state.x;
    for u in &seq.items {
        let plane = PlaneIndex::from_ordinal(n, u.plane)?;
        x.rotate_left_in_place(&plane, u.angle);
        x.maybe_reorthonormalize()?;
    }
    Ok(WalkState {
        x,
        t: state.t + seq.items.len() as u64,
    })
}

/// First column of the state: the sphere-walk projection, a unit vector.
pub fn sphere_projection(state: &WalkState) -> Vec<f64> {
    (0..state.dim()).map(|i| state.x.view()[[i, 0]]).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use crate::son_core::{haar_sample, hs_distance, plane_count, rotation_matrix};

    #[test]
    fn empty_sequence_is_a_no_op() {
        let seq = random_update_sequence(3, 0, &mut rng::stream(1, "walk", 0));
        assert!(seq.is_empty());
        let s = run_walk(WalkState::identity(3), &seq).unwrap();
        assert_eq!(s.t, 0);
        assert!(hs_distance(&s.x, &SoMatrix::identity(3)) == 0.0);
    }

    #[test]
    fn plane_frequencies_are_uniform() {
        let n = 3;
        let seq = random_update_sequence(n, 100_000, &mut rng::stream(2, "walk", 0));
        let mut counts = vec![0usize; plane_count(n)];
        for u in seq.items() {
            counts[u.plane - 1] += 1;
        }
        for &c in &counts {
            let p = c as f64 / seq.len() as f64;
            assert!((p - 1.0 / 3.0).abs() < 0.01, "plane frequency {p}");
        }
    }

    #[test]
    fn same_seed_reproduces_sequence() {
        let a = random_update_sequence(4, 1000, &mut rng::stream(7, "walk", 3));
        let b = random_update_sequence(4, 1000, &mut rng::stream(7, "walk", 3));
        assert_eq!(a.items(), b.items());
    }

    #[test]
    fn two_quarter_turns_make_a_half_turn() {
        let quarter = Update {
            plane: 1,
            angle: std::f64::consts::FRAC_PI_2,
        };
        let seq = UpdateSequence::new(2, vec![quarter, quarter]).unwrap();
        let s = run_walk(WalkState::identity(2), &seq).unwrap();
        let half = rotation_matrix(
            2,
            &PlaneIndex::from_ordinal(2, 1).unwrap(),
            std::f64::consts::PI,
        );
        assert!(hs_distance(&s.x, &half) < 1e-15);
        assert_eq!(s.t, 2);
    }

    #[test]
    fn orthogonality_drift_stays_small_over_long_runs() {
        let n = 6;
        let seq = random_update_sequence(n, 10_000, &mut rng::stream(3, "walk", 0));
        let s = run_walk(WalkState::identity(n), &seq).unwrap();
        assert!(
            s.x.orthogonality_error() < 1e-8,
            "drift {}",
            s.x.orthogonality_error()
        );
    }

    #[test]
    fn composition_matches_concatenation() {
        let mut r = rng::stream(4, "walk", 0);
        let x0 = WalkState::from_matrix(haar_sample(5, &mut r));
        let s1 = random_update_sequence(5, 137, &mut r);
        let s2 = random_update_sequence(5, 89, &mut r);
        let joined = s1.concat(&s2).unwrap();
        let step_wise = run_walk(run_walk(x0.clone(), &s1).unwrap(), &s2).unwrap();
        let at_once = run_walk(x0, &joined).unwrap();
        assert!(hs_distance(&step_wise.x, &at_once.x) < 1e-12);
        assert_eq!(step_wise.t, at_once.t);
    }

    #[test]
    fn zero_angle_updates_are_no_ops() {
        let mut r = rng::stream(5, "walk", 0);
        let x0 = haar_sample(4, &mut r);
        let seq = UpdateSequence::new(
            4,
            (1..=plane_count(4))
                .map(|plane| Update { plane, angle: 0.0 })
                .collect(),
        )
        .unwrap();
        let s = run_walk(WalkState::from_matrix(x0.clone()), &seq).unwrap();
        assert!(hs_distance(&s.x, &x0) == 0.0);
    }

    #[test]
    fn dimension_mismatch_is_a_domain_error() {
        let seq = random_update_sequence(4, 10, &mut rng::stream(6, "walk", 0));
        assert!(run_walk(WalkState::identity(3), &seq).is_err());
    }

    #[test]
    fn sphere_projection_examples() {
        let s = WalkState::identity(4);
        assert_eq!(sphere_projection(&s), vec![1.0, 0.0, 0.0, 0.0]);
        let r = rotation_matrix(
            3,
            &PlaneIndex::from_ordinal(3, 1).unwrap(),
            std::f64::consts::FRAC_PI_2,
        );
        let v = sphere_projection(&WalkState::from_matrix(r));
        assert!((v[0] - 0.0).abs() < 1e-15 && (v[1] + 1.0).abs() < 1e-15);
    }

    #[test]
    fn sphere_projection_of_haar_start_matches_marginal() {
        let n = 5;
        let draws = 10_000;
        let mut r = rng::stream(8, "walk-sphere", 0);
        let mut xs: Vec<f64> = (0..draws)
            .map(|_| sphere_projection(&WalkState::from_matrix(haar_sample(n, &mut r)))[0])
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = xs.len() as f64;
        let mut ks: f64 = 0.0;
        for (idx, &x) in xs.iter().enumerate() {
            let f = son_core::haar_marginal_cdf(n, x).unwrap();
            ks = ks
                .max(((idx + 1) as f64 / m - f).abs())
                .max((f - idx as f64 / m).abs());
        }
        assert!(ks < 0.02, "KS {ks}");
        // Unit norm of the projection.
        let v = sphere_projection(&WalkState::from_matrix(haar_sample(n, &mut r)));
        let norm: f64 = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-9);
    }

    #[test]
    fn haar_invariance_of_one_step() {
        // X Haar, one fixed update applied: the entry marginal stays Haar.
        let n = 5;
        let draws = 10_000;
        let mut r = rng::stream(9, "walk-invariance", 0);
        let plane = PlaneIndex::from_ordinal(n, 3).unwrap();
        let mut xs: Vec<f64> = (0..draws)
            .map(|_| {
                let x = haar_sample(n, &mut r);
                son_core::apply_rotation_left(&x, &plane, 1.234).view()[[0, 0]]
            })
            .collect();
        xs.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let m = xs.len() as f64;
        let mut ks: f64 = 0.0;
        for (idx, &x) in xs.iter().enumerate() {
            let f = son_core::haar_marginal_cdf(n, x).unwrap();
            ks = ks
                .max(((idx + 1) as f64 / m - f).abs())
                .max((f - idx as f64 / m).abs());
        }
        assert!(ks < 0.02, "KS {ks}");
    }

    #[test]
    fn csv_round_trip_is_bit_exact() {
        let seq = random_update_sequence(4, 500, &mut rng::stream(10, "walk-csv", 0));
        let mut buf = Vec::new();
        seq.write_csv(&mut buf).unwrap();
        let back = UpdateSequence::read_csv(4, std::io::Cursor::new(&buf)).unwrap();
        assert_eq!(back.len(), seq.len());
        for (a, b) in back.items().iter().zip(seq.items()) {
            assert_eq!(a.plane, b.plane);
            assert_eq!(a.angle.to_bits(), b.angle.to_bits(), "angle not bit-exact");
        }
    }
}
