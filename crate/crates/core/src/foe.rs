//! Focus of Expansion as the least-squares intersection of flow lines.
//!
//! Every flow vector defines the line through its base point `r` along its
//! direction `d̂`. With `v = r + perp(d̂)` the line is `{h : αᵀh = β}` where
//! `α = v − r` and `β = vᵀr − ‖r‖²` (`= αᵀr`). Stacking all lines and solving
//! the normal equations
//!
//! ```text
//! C = Σ αᵢαᵢᵀ,  γ = Σ αᵢβᵢ,  h = C⁻¹γ
//! ```
//!
//! gives the point minimising `Σ (αᵢᵀh − βᵢ)²`. Because `α` has unit length
//! the residual is the pixel distance from `h` to each line.
//!
//! Outliers are scored by leave-one-out: vector `j` is removed, the FOE is
//! re-solved from the remaining `n − 1` lines, and the distance between that
//! estimate and vector `j` is recorded. Vectors beyond the chosen percentile
//! of those distances are rejected and the final FOE uses the rest.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::camera::PixelPoint;
use crate::flow::FlowVector;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FoeError {
    #[error("flow vector has zero magnitude")]
    ZeroMagnitude,
    #[error("line system is singular (all flow directions parallel)")]
    SingularSystem,
    #[error("need at least {required} usable flow vectors, got {usable}")]
    TooFewVectors { usable: usize, required: usize },
    #[error("percentile must lie in (0, 1], got {0}")]
    InvalidPercentile(f64),
}

/// The line `{h : alphaᵀh = beta}` carrying one flow vector.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineConstraint {
    pub alpha: [f64; 2],
    pub beta: f64,
}

impl LineConstraint {
    /// Signed distance from `p` to the line (alpha is unit length).
    pub fn residual(&self, p: &PixelPoint) -> f64 {
        self.alpha[0] * p.u + self.alpha[1] * p.v - self.beta
    }
}

/// How a left-out vector is compared against the FOE solved without it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DistanceMetric {
    /// Perpendicular distance from the estimate to the vector's line.
    #[default]
    PointToLine,
    /// Euclidean distance from the estimate to the vector's base point.
    PointToPoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FoeParams {
    pub percentile: f64,
    pub metric: DistanceMetric,
}

impl Default for FoeParams {
    fn default() -> Self {
        Self {
            percentile: 0.90,
            metric: DistanceMetric::PointToLine,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoeEstimate {
    pub point: PixelPoint,
    /// One entry per input vector; unusable vectors are never inliers.
    pub inlier_mask: Vec<bool>,
    /// Leave-one-out distances; `f64::INFINITY` for unusable vectors.
    pub loo_distances: Vec<f64>,
    /// Realised percentile cutoff in pixels.
    pub threshold: f64,
}

impl FoeEstimate {
    pub fn inlier_count(&self) -> usize {
        self.inlier_mask.iter().filter(|&&m| m).count()
    }
}

pub fn line_constraint(fv: &FlowVector) -> Result<LineConstraint, FoeError> {
    if !(fv.magnitude > 0.0) {
        return Err(FoeError::ZeroMagnitude);
    }
    let (du, dv) = (fv.displacement[0], fv.displacement[1]);
    let norm = du.hypot(dv);
    if !(norm > 0.0) {
        return Err(FoeError::ZeroMagnitude);
    }
    // Counter-clockwise quarter turn of the unit flow direction.
    let alpha = [-dv / norm, du / norm];
    let r = fv.base;
    let v = PixelPoint::new(r.u + alpha[0], r.v + alpha[1]);
    let beta = v.u * r.u + v.v * r.v - (r.u * r.u + r.v * r.v);
    Ok(LineConstraint { alpha, beta })
}

/// Accumulated normal equations `C h = γ`; C is stored as (c11, c12, c22).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct NormalEquations {
    c: [f64; 3],
    gamma: [f64; 2],
}

impl NormalEquations {
    fn add(&mut self, l: &LineConstraint) {
        let [a0, a1] = l.alpha;
        self.c[0] += a0 * a0;
        self.c[1] += a0 * a1;
        self.c[2] += a1 * a1;
        self.gamma[0] += a0 * l.beta;
        self.gamma[1] += a1 * l.beta;
    }

    /// Rank-one downdate: the system with `l` removed.
    fn without(&self, l: &LineConstraint) -> Self {
        let [a0, a1] = l.alpha;
        Self {
            c: [
                self.c[0] - a0 * a0,
                self.c[1] - a0 * a1,
                self.c[2] - a1 * a1,
            ],
            gamma: [self.gamma[0] - a0 * l.beta, self.gamma[1] - a1 * l.beta],
        }
    }

    fn solve(&self) -> Result<PixelPoint, FoeError> {
        let [c11, c12, c22] = self.c;
        let det = c11 * c22 - c12 * c12;
        let trace = c11 + c22;
        if !(det.abs() >= 1e-12 * trace * trace) || !(trace > 0.0) {
            return Err(FoeError::SingularSystem);
        }
        let [g1, g2] = self.gamma;
        Ok(PixelPoint::new(
            (c22 * g1 - c12 * g2) / det,
            (c11 * g2 - c12 * g1) / det,
        ))
    }
}

/// Least-squares intersection `h = C⁻¹γ` of the given lines.
pub fn solve_convergence(constraints: &[LineConstraint]) -> Result<PixelPoint, FoeError> {
    if constraints.len() < 2 {
        return Err(FoeError::SingularSystem);
    }
    let mut eq = NormalEquations::default();
    for l in constraints {
        eq.add(l);
    }
    eq.solve()
}

/// Point-to-line leave-one-out distances for every vector.
pub fn leave_one_out_distances(vectors: &[FlowVector]) -> Result<Vec<f64>, FoeError> {
    leave_one_out_distances_with(vectors, DistanceMetric::PointToLine)
}

pub fn leave_one_out_distances_with(
    vectors: &[FlowVector],
    metric: DistanceMetric,
) -> Result<Vec<f64>, FoeError> {
    if vectors.len() < 3 {
        return Err(FoeError::TooFewVectors {
            usable: vectors.len(),
            required: 3,
        });
    }
    let lines = vectors
        .iter()
        .map(line_constraint)
        .collect::<Result<Vec<_>, _>>()?;
    loo_from_lines(vectors, &lines, metric)
}

// O(n): every subset system is the full system minus one rank-one term.
fn loo_from_lines(
    vectors: &[FlowVector],
    lines: &[LineConstraint],
    metric: DistanceMetric,
) -> Result<Vec<f64>, FoeError> {
    let mut full = NormalEquations::default();
    for l in lines {
        full.add(l);
    }
    lines
        .iter()
        .zip(vectors)
        .map(|(l, fv)| {
            let p = full.without(l).solve()?;
            Ok(match metric {
                DistanceMetric::PointToLine => l.residual(&p).abs(),
                DistanceMetric::PointToPoint => p.distance(&fv.base),
            })
        })
        .collect()
}

/// Nearest-rank percentile of an ascending slice.
fn nearest_rank(sorted: &[f64], percentile: f64) -> f64 {
    let n = sorted.len();
    let rank = ((percentile * n as f64) - 1e-9).ceil().clamp(1.0, n as f64) as usize;
    sorted[rank - 1]
}

/// Leave-one-out FOE estimate with percentile outlier rejection, using the
/// point-to-line metric.
pub fn estimate_foe(vectors: &[FlowVector], percentile: f64) -> Result<FoeEstimate, FoeError> {
    estimate_foe_with(
        vectors,
        &FoeParams {
            percentile,
            ..FoeParams::default()
        },
    )
}

/// Vectors that failed tracking or have zero length take no part and are
/// reported as rejected with an infinite distance.
pub fn estimate_foe_with(vectors: &[FlowVector], params: &FoeParams) -> Result<FoeEstimate, FoeError> {
    let p = params.percentile;
    if !(p > 0.0 && p <= 1.0) {
        return Err(FoeError::InvalidPercentile(p));
    }
    let usable: Vec<usize> = (0..vectors.len()).filter(|&i| vectors[i].is_usable()).collect();
    if usable.len() < 3 {
        return Err(FoeError::TooFewVectors {
            usable: usable.len(),
            required: 3,
        });
    }
    let sub: Vec<FlowVector> = usable.iter().map(|&i| vectors[i]).collect();
    let lines = sub
        .iter()
        .map(line_constraint)
        .collect::<Result<Vec<_>, _>>()?;
    let dists = loo_from_lines(&sub, &lines, params.metric)?;

    let mut sorted = dists.clone();
    sorted.sort_by(f64::total_cmp);
    let threshold = nearest_rank(&sorted, p);

    let mut inlier_mask = vec![false; vectors.len()];
    let mut loo_distances = vec![f64::INFINITY; vectors.len()];
    let mut eq = NormalEquations::default();
    for ((&idx, &d), l) in usable.iter().zip(&dists).zip(&lines) {
        loo_distances[idx] = d;
        if d <= threshold {
            inlier_mask[idx] = true;
            eq.add(l);
        }
    }
    let point = eq.solve()?;
    Ok(FoeEstimate {
        point,
        inlier_mask,
        loo_distances,
        threshold,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn radial(foe: PixelPoint, n: usize, seed: u64) -> Vec<FlowVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base = PixelPoint::new(rng.random_range(0.0..1280.0), rng.random_range(0.0..1024.0));
                let k = rng.random_range(0.05..0.2);
                FlowVector::new(base, (base.u - foe.u) * k, (base.v - foe.v) * k)
            })
            .collect()
    }

    /// Oracle: re-solve every n−1 subset from scratch.
    fn naive_loo(vectors: &[FlowVector]) -> Vec<f64> {
        (0..vectors.len())
            .map(|j| {
                let rest: Vec<_> = vectors
                    .iter()
                    .enumerate()
                    .filter(|&(i, _)| i != j)
                    .map(|(_, v)| line_constraint(v).unwrap())
                    .collect();
                let p = solve_convergence(&rest).unwrap();
                line_constraint(&vectors[j]).unwrap().residual(&p).abs()
            })
            .collect()
    }

    #[test]
    fn horizontal_flow_through_origin_is_the_x_axis() {
        let l = line_constraint(&FlowVector::new(PixelPoint::new(0.0, 0.0), 1.0, 0.0)).unwrap();
        assert_relative_eq!(l.alpha[0], 0.0);
        assert_relative_eq!(l.alpha[1], 1.0);
        assert_relative_eq!(l.beta, 0.0);
    }

    #[test]
    fn vertical_flow_is_a_vertical_line() {
        let l = line_constraint(&FlowVector::new(PixelPoint::new(2.0, 3.0), 0.0, 5.0)).unwrap();
        assert_relative_eq!(l.alpha[0], -1.0);
        assert_relative_eq!(l.alpha[1], 0.0);
        assert_relative_eq!(l.beta.abs(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_flow_has_no_line() {
        assert_eq!(
            line_constraint(&FlowVector::new(PixelPoint::new(2.0, 3.0), 0.0, 0.0)),
            Err(FoeError::ZeroMagnitude)
        );
    }

    #[test]
    fn perpendicular_lines_meet_at_their_crossing() {
        let a = line_constraint(&FlowVector::new(PixelPoint::new(100.0, 216.0), 3.0, 0.0)).unwrap();
        let b = line_constraint(&FlowVector::new(PixelPoint::new(368.0, 500.0), 0.0, -2.0)).unwrap();
        let p = solve_convergence(&[a, b]).unwrap();
        assert_relative_eq!(p.u, 368.0, epsilon = 1e-9);
        assert_relative_eq!(p.v, 216.0, epsilon = 1e-9);
    }

    #[test]
    fn noiseless_radial_field_is_exact() {
        let foe = PixelPoint::new(640.0, 512.0);
        let lines: Vec<_> = radial(foe, 100, 1).iter().map(|v| line_constraint(v).unwrap()).collect();
        let p = solve_convergence(&lines).unwrap();
        assert!(p.distance(&foe) < 1e-6);
    }

    #[test]
    fn parallel_flow_is_singular() {
        let a = line_constraint(&FlowVector::new(PixelPoint::new(0.0, 0.0), 1.0, 0.0)).unwrap();
        let b = line_constraint(&FlowVector::new(PixelPoint::new(0.0, 9.0), -4.0, 0.0)).unwrap();
        assert_eq!(solve_convergence(&[a, b]), Err(FoeError::SingularSystem));
        assert_eq!(solve_convergence(&[a]), Err(FoeError::SingularSystem));
    }

    #[test]
    fn consensus_field_has_zero_loo_distances() {
        let d = leave_one_out_distances(&radial(PixelPoint::new(368.0, 216.0), 40, 2)).unwrap();
        assert!(d.iter().all(|&x| x < 1e-6));
    }

    #[test]
    fn rotated_vector_stands_out() {
        let foe = PixelPoint::new(368.0, 216.0);
        let mut v = radial(foe, 50, 3);
        let b = PixelPoint::new(900.0, 700.0);
        let (ru, rv) = (b.u - foe.u, b.v - foe.v);
        v.push(FlowVector::new(b, -rv * 0.1, ru * 0.1));
        let d = leave_one_out_distances(&v).unwrap();
        let oracle = naive_loo(&v);
        for (a, o) in d.iter().zip(&oracle) {
            assert!((a - o).abs() < 1e-6);
        }
        let (imax, _) = d.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
        assert_eq!(imax, 50);
        assert!(d[..50].iter().all(|&x| x < d[50]));
    }

    #[test]
    fn degenerate_subset_is_singular() {
        // Leaving out the vertical vector leaves two parallel horizontals.
        let v = vec![
            FlowVector::new(PixelPoint::new(0.0, 0.0), 1.0, 0.0),
            FlowVector::new(PixelPoint::new(0.0, 5.0), 2.0, 0.0),
            FlowVector::new(PixelPoint::new(3.0, 3.0), 0.0, 1.0),
        ];
        assert_eq!(leave_one_out_distances(&v), Err(FoeError::SingularSystem));
    }

    #[test]
    fn downdate_matches_naive_loo_on_noisy_field() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut v = radial(PixelPoint::new(500.0, 400.0), 80, 4);
        for f in &mut v {
            *f = FlowVector::new(f.base, f.displacement[0] + rng.random_range(-1.0..1.0), f.displacement[1]);
        }
        let fast = leave_one_out_distances(&v).unwrap();
        for (a, o) in fast.iter().zip(naive_loo(&v)) {
            assert!((a - o).abs() < 1e-8, "{a} vs {o}");
        }
    }

    #[test]
    fn rejects_corrupted_vectors() {
        let foe = PixelPoint::new(368.0, 216.0);
        let mut v = radial(foe, 100, 5);
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for f in v.iter_mut().take(10) {
            let ang: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            // Keep the corrupted directions clearly off-radial.
            let (ru, rv) = (f.base.u - foe.u, f.base.v - foe.v);
            let radial_ang = rv.atan2(ru);
            let ang = radial_ang + std::f64::consts::FRAC_PI_4 + (ang % std::f64::consts::FRAC_PI_2);
            *f = FlowVector::new(f.base, 20.0 * ang.cos(), 20.0 * ang.sin());
        }
        let est = estimate_foe(&v, 0.9).unwrap();
        assert!(est.point.distance(&foe) < 2.0, "{:?}", est.point);
        assert!(est.inlier_mask[..10].iter().all(|&m| !m));
        assert_eq!(est.inlier_count(), 90);
        for (m, d) in est.inlier_mask.iter().zip(&est.loo_distances) {
            if *m {
                assert!(*d <= est.threshold);
            }
        }
    }

    #[test]
    fn full_percentile_keeps_everything() {
        let mut v = radial(PixelPoint::new(300.0, 300.0), 30, 7);
        v[3] = FlowVector::new(v[3].base, 5.0, -9.0);
        let est = estimate_foe(&v, 1.0).unwrap();
        assert!(est.inlier_mask.iter().all(|&m| m));
        let lines: Vec<_> = v.iter().map(|f| line_constraint(f).unwrap()).collect();
        assert_eq!(est.point, solve_convergence(&lines).unwrap());
    }

    #[test]
    fn consistent_field_keeps_all_at_zero_threshold() {
        let foe = PixelPoint::new(368.0, 216.0);
        let est = estimate_foe(&radial(foe, 60, 8), 0.9).unwrap();
        assert!(est.point.distance(&foe) < 1e-6);
        assert!(est.threshold < 1e-6);
        for (m, d) in est.inlier_mask.iter().zip(&est.loo_distances) {
            assert_eq!(*m, *d <= est.threshold);
        }
    }

    #[test]
    fn unusable_vectors_are_excluded() {
        let mut v = radial(PixelPoint::new(368.0, 216.0), 10, 9);
        v.push(FlowVector::failed(PixelPoint::new(1.0, 1.0)));
        v.push(FlowVector::new(PixelPoint::new(4.0, 4.0), 0.0, 0.0));
        let est = estimate_foe(&v, 0.9).unwrap();
        assert_eq!(est.inlier_mask.len(), 12);
        assert!(!est.inlier_mask[10] && !est.inlier_mask[11]);
        assert!(est.loo_distances[10].is_infinite());
        let few = vec![v[0], v[1], v[10]];
        assert_eq!(
            estimate_foe(&few, 0.9),
            Err(FoeError::TooFewVectors { usable: 2, required: 3 })
        );
        assert!(matches!(estimate_foe(&v, 0.0), Err(FoeError::InvalidPercentile(_))));
    }

    #[test]
    fn point_metric_is_distance_to_base() {
        let foe = PixelPoint::new(368.0, 216.0);
        let v = radial(foe, 20, 10);
        let d = leave_one_out_distances_with(&v, DistanceMetric::PointToPoint).unwrap();
        for (f, d) in v.iter().zip(d) {
            assert!((d - f.base.distance(&foe)).abs() < 1e-6);
        }
    }

    #[test]
    fn nearest_rank_percentile() {
        let s: Vec<f64> = (1..=10).map(f64::from).collect();
        assert_eq!(nearest_rank(&s, 0.9), 9.0);
        assert_eq!(nearest_rank(&s, 0.91), 10.0);
        assert_eq!(nearest_rank(&s, 1.0), 10.0);
        assert_eq!(nearest_rank(&s, 0.01), 1.0);
        let s: Vec<f64> = (1..=200).map(f64::from).collect();
        assert_eq!(nearest_rank(&s, 0.9), 180.0);
    }

    fn noisy_field(seed: u64) -> Vec<FlowVector> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let foe = PixelPoint::new(368.0, 216.0);
        radial(foe, 60, seed)
            .into_iter()
            .map(|f| {
                FlowVector::new(
                    f.base,
                    f.displacement[0] + rng.random_range(-0.5..0.5),
                    f.displacement[1] + rng.random_range(-0.5..0.5),
                )
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]

        #[test]
        fn estimate_is_least_squares_optimal(seed in 0u64..1000, theta in 0.0..std::f64::consts::TAU) {
            let v = noisy_field(seed);
            let est = estimate_foe(&v, 0.9).unwrap();
            let lines: Vec<_> = v.iter().zip(&est.inlier_mask).filter(|(_, m)| **m)
                .map(|(f, _)| line_constraint(f).unwrap()).collect();
            let cost = |p: &PixelPoint| lines.iter().map(|l| l.residual(p).powi(2)).sum::<f64>();
            let eps = 1e-3;
            let moved = PixelPoint::new(est.point.u + eps * theta.cos(), est.point.v + eps * theta.sin());
            prop_assert!(cost(&moved) >= cost(&est.point) - 1e-9);
        }

        #[test]
        fn translation_equivariance(seed in 0u64..1000, du in -300.0..300.0f64, dv in -300.0..300.0f64) {
            let v = noisy_field(seed);
            let moved: Vec<_> = v.iter()
                .map(|f| FlowVector::new(PixelPoint::new(f.base.u + du, f.base.v + dv), f.displacement[0], f.displacement[1]))
                .collect();
            let a = estimate_foe(&v, 0.9).unwrap();
            let b = estimate_foe(&moved, 0.9).unwrap();
            prop_assert!((b.point.u - a.point.u - du).abs() < 1e-6);
            prop_assert!((b.point.v - a.point.v - dv).abs() < 1e-6);
            prop_assert_eq!(a.inlier_mask, b.inlier_mask);
        }

        #[test]
        fn rotation_equivariance(seed in 0u64..1000, theta in 0.0..std::f64::consts::TAU) {
            let v = noisy_field(seed);
            let (c, s) = (theta.cos(), theta.sin());
            let rot = |u: f64, v: f64| (c * u - s * v, s * u + c * v);
            let turned: Vec<_> = v.iter().map(|f| {
                let (bu, bv) = rot(f.base.u, f.base.v);
                let (du, dv) = rot(f.displacement[0], f.displacement[1]);
                FlowVector::new(PixelPoint::new(bu, bv), du, dv)
            }).collect();
            let a = estimate_foe(&v, 1.0).unwrap();
            let b = estimate_foe(&turned, 1.0).unwrap();
            let (eu, ev) = rot(a.point.u, a.point.v);
            let tol = 1e-9 * a.point.u.hypot(a.point.v).max(1.0);
            prop_assert!((b.point.u - eu).abs() < tol && (b.point.v - ev).abs() < tol);
        }

        #[test]
        fn order_does_not_matter(seed in 0u64..1000, shift in 1usize..59) {
            let v = noisy_field(seed);
            let mut w = v.clone();
            w.rotate_left(shift);
            let a = estimate_foe(&v, 0.9).unwrap();
            let b = estimate_foe(&w, 0.9).unwrap();
            prop_assert!(a.point.distance(&b.point) < 1e-9);
            prop_assert_eq!(a, estimate_foe(&v, 0.9).unwrap());
        }
    }
}
