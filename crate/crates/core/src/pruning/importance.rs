//! Data-independent importance scores of quaternion filters.

use crate::error::{Error, Result};
use crate::nn::QConvLayer;
use crate::scalar::Scalar;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    /// Sum of the component ℓ1 norms.
    L1,
    /// ℓ1 distance to the component-wise geometric medians of the layer.
    Gm,
    /// Sum of the component operator norms.
    Op,
}

impl Method {
    pub const ALL: [Method; 3] = [Method::L1, Method::Gm, Method::Op];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::L1 => "l1",
            Method::Gm => "gm",
            Method::Op => "op",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "l1" => Ok(Method::L1),
            "gm" => Ok(Method::Gm),
            "op" => Ok(Method::Op),
            other => Err(Error::invalid(format!("unknown importance method `{other}` (expected l1, gm or op)"))),
        }
    }
}

pub fn importance<T: Scalar>(layer: &QConvLayer<T>, method: Method) -> Result<Vec<f64>> {
    match method {
        Method::L1 => Ok(l1_importance(layer)),
        Method::Gm => gm_importance(layer),
        Method::Op => Ok(op_importance(layer)),
    }
}

fn component(layer: &QConvLayer<impl Scalar>, m: usize, o: usize) -> Vec<f64> {
    layer.filter_component(m, o).iter().map(|v| v.to_f64_lossy()).collect()
}

/// `‖F_R‖₁ + ‖F_I‖₁ + ‖F_J‖₁ + ‖F_K‖₁` per filter.
pub fn l1_importance<T: Scalar>(layer: &QConvLayer<T>) -> Vec<f64> {
    (0..layer.q_out)
        .map(|m| (0..4).map(|o| layer.filter_component(m, o).iter().map(|v| v.to_f64_lossy().abs()).sum::<f64>()).sum())
        .collect()
}

pub const GM_TOL: f64 = 1e-8;
pub const GM_MAX_ITER: usize = 1000;
const COINCIDE: f64 = 1e-12;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

/// Point minimizing the sum of Euclidean distances to `points`.
///
/// Weiszfeld iteration from the centroid. When an iterate lands on a data
/// point the plain update is undefined; the Vardi–Zhang step is used there,
/// which either certifies the point as the median or moves off it.
pub fn geometric_median(points: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = points.first().ok_or_else(|| Error::invalid("geometric median of no points"))?;
    let d = first.len();
    if points.iter().any(|p| p.len() != d) {
        return Err(Error::shape("points differ in dimension"));
    }
    let n = points.len() as f64;
    let mut y: Vec<f64> = (0..d).map(|k| points.iter().map(|p| p[k]).sum::<f64>() / n).collect();
    for _ in 0..GM_MAX_ITER {
        let mut num = vec![0.0; d];
        let mut den = 0.0;
        let mut coincident = 0usize;
        for p in points {
            let dj = dist(p, &y);
            if dj < COINCIDE {
                coincident += 1;
                continue;
            }
            for k in 0..d {
                num[k] += p[k] / dj;
            }
            den += 1.0 / dj;
        }
        if den == 0.0 {
            // Every point coincides with the iterate.
            return Ok(y);
        }
        let t: Vec<f64> = num.iter().map(|v| v / den).collect();
        let next = if coincident == 0 {
            t
        } else {
            // r = ‖Σ_{j not at y} (x_j − y)/d_j‖ = den·‖T(y) − y‖.
            let r = den * dist(&t, &y);
            let eta = coincident as f64;
            if r <= eta {
                return Ok(y);
            }
            let w = eta / r;
            t.iter().zip(&y).map(|(tk, yk)| (1.0 - w) * tk + w * yk).collect()
        };
        let step = dist(&next, &y);
        y = next;
        if step < GM_TOL {
            break;
        }
    }
    Ok(y)
}

/// Sum of distances from `y` to `points` (the geometric median objective).
pub fn gm_objective(points: &[Vec<f64>], y: &[f64]) -> f64 {
    points.iter().map(|p| dist(p, y)).sum()
}

/// For each component, the geometric median of all filters' flattened
/// component kernels; a filter's score is the summed ℓ1 distance of its
/// components to those medians.
pub fn gm_importance<T: Scalar>(layer: &QConvLayer<T>) -> Result<Vec<f64>> {
    if layer.q_out < 2 {
        return Err(Error::Degenerate(format!(
            "geometric-median importance needs at least 2 filters, layer has {}",
            layer.q_out
        )));
    }
    let mut scores = vec![0.0; layer.q_out];
    for o in 0..4 {
        let pts: Vec<Vec<f64>> = (0..layer.q_out).map(|m| component(layer, m, o)).collect();
        let gm = geometric_median(&pts)?;
        for (s, p) in scores.iter_mut().zip(&pts) {
            *s += p.iter().zip(&gm).map(|(a, b)| (a - b).abs()).sum::<f64>();
        }
    }
    Ok(scores)
}

pub const POWER_TOL: f64 = 1e-10;
pub const POWER_MAX_ITER: usize = 500;

/// Largest singular value of the row-major `rows × cols` matrix `a`.
///
/// Power iteration on the Gram matrix (`aᵀa`, or `aaᵀ` when that is
/// smaller) with a Rayleigh-quotient estimate. A start vector is taken from
/// a repeatedly squared Gram matrix, so nearly equal leading singular values
/// do not stall convergence. Iteration stops once the eigen-residual falls
/// below `POWER_TOL` relative, or after `POWER_MAX_ITER` steps.
pub fn largest_singular_value(a: &[f64], rows: usize, cols: usize) -> f64 {
    assert_eq!(a.len(), rows * cols);
    if rows == 0 || cols == 0 || a.iter().all(|&v| v == 0.0) {
        return 0.0;
    }
    let d = rows.min(cols);
    let at = |i: usize, k: usize| if rows <= cols { a[i * cols + k] } else { a[k * cols + i] };
    let inner = rows.max(cols);
    let mut g = vec![0.0; d * d];
    for i in 0..d {
        for j in 0..d {
            g[i * d + j] = (0..inner).map(|k| at(i, k) * at(j, k)).sum();
        }
    }
    let apply = |m: &[f64], v: &[f64]| -> Vec<f64> { (0..d).map(|i| (0..d).map(|j| m[i * d + j] * v[j]).sum()).collect() };
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();

    let mut p = g.clone();
    for _ in 0..SQUARINGS {
        let mut q = vec![0.0; d * d];
        for i in 0..d {
            for k in 0..d {
                let pik = p[i * d + k];
                for j in 0..d {
                    q[i * d + j] += pik * p[k * d + j];
                }
            }
        }
        let scale = q.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        if scale == 0.0 {
            break;
        }
        q.iter_mut().for_each(|x| *x /= scale);
        p = q;
    }
    // Largest column of the squared matrix: parallel to the leading
    // eigenvector up to a vanishing remainder.
    let col = |j: usize| -> Vec<f64> { (0..d).map(|i| p[i * d + j]).collect() };
    let mut v = (0..d).map(col).max_by(|x, y| norm(x).total_cmp(&norm(y))).unwrap();
    let nv = norm(&v);
    if nv == 0.0 {
        v = vec![1.0; d];
    }
    let nv = norm(&v);
    v.iter_mut().for_each(|x| *x /= nv);

    let mut sigma2 = 0.0f64;
    for _ in 0..POWER_MAX_ITER {
        let mut w = apply(&g, &v);
        let rq: f64 = w.iter().zip(&v).map(|(x, y)| x * y).sum();
        let residual = w.iter().zip(&v).map(|(wi, vi)| (wi - rq * vi).powi(2)).sum::<f64>().sqrt();
        sigma2 = sigma2.max(rq);
        if residual <= POWER_TOL * rq {
            break;
        }
        let nw = norm(&w);
        w.iter_mut().for_each(|x| *x /= nw);
        v = w;
    }
    sigma2.sqrt()
}

const SQUARINGS: usize = 24;

/// Each component reshaped to `q_in × (kh·kw)`; score = Σ_o σ₁(F_o).
pub fn op_importance<T: Scalar>(layer: &QConvLayer<T>) -> Vec<f64> {
    let (rows, cols) = (layer.q_in, layer.geom.taps());
    (0..layer.q_out)
        .map(|m| (0..4).map(|o| largest_singular_value(&component(layer, m, o), rows, cols)).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::ConvGeometry;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_layer(r: &mut ChaCha8Rng, q_in: usize, q_out: usize, k: usize) -> QConvLayer<f64> {
        let mut l = QConvLayer::zeros(q_in, q_out, ConvGeometry::square(k, 1, k / 2), false);
        l.weight.iter_mut().for_each(|w| *w = r.random_range(-1.0..1.0));
        l
    }

    /// Singular values of a small dense matrix by one-sided Jacobi rotations.
    fn jacobi_sigma_max(a: &[f64], rows: usize, cols: usize) -> f64 {
        let mut u: Vec<Vec<f64>> = (0..cols).map(|c| (0..rows).map(|r| a[r * cols + c]).collect()).collect();
        for _ in 0..100 {
            let mut off = 0.0f64;
            for p in 0..cols {
                for q in p + 1..cols {
                    let alpha: f64 = u[p].iter().map(|x| x * x).sum();
                    let beta: f64 = u[q].iter().map(|x| x * x).sum();
                    let gamma: f64 = u[p].iter().zip(&u[q]).map(|(x, y)| x * y).sum();
                    if gamma.abs() <= 1e-300 {
                        continue;
                    }
                    off = off.max(gamma.abs() / (alpha * beta).sqrt());
                    let zeta = (beta - alpha) / (2.0 * gamma);
                    let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                    let t = if zeta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (1.0 + t * t).sqrt();
                    let s = c * t;
                    for r in 0..rows {
                        let (x, y) = (u[p][r], u[q][r]);
                        u[p][r] = c * x - s * y;
                        u[q][r] = s * x + c * y;
                    }
                }
            }
            if off < 1e-15 {
                break;
            }
        }
        u.iter().map(|col| col.iter().map(|x| x * x).sum::<f64>().sqrt()).fold(0.0, f64::max)
    }

    #[test]
    fn l1_examples() {
        let mut l = QConvLayer::<f64>::zeros(1, 2, ConvGeometry::square(1, 1, 0), false);
        assert_eq!(l1_importance(&l), vec![0.0, 0.0]);
        for o in 0..4 {
            l.bank_mut(o)[1] = 1.0;
        }
        assert_eq!(l1_importance(&l), vec![0.0, 4.0]);
    }

    #[test]
    fn l1_matches_abs_sum_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let l = random_layer(&mut r, 3, 5, 3);
        let s = l1_importance(&l);
        for m in 0..5 {
            let mut expect = 0.0;
            for o in 0..4 {
                let mut part = 0.0;
                for i in 0..3 {
                    for t in 0..9 {
                        part += l.weight[o * l.bank_len() + (m * 3 + i) * 9 + t].abs();
                    }
                }
                expect += part;
            }
            assert_eq!(s[m], expect);
        }
    }

    #[test]
    fn gm_of_identical_points_and_1d_median() {
        let p = vec![vec![1.5, -2.0]; 4];
        assert_eq!(geometric_median(&p).unwrap(), vec![1.5, -2.0]);
        let gm = geometric_median(&[vec![0.0], vec![1.0], vec![10.0]]).unwrap();
        assert!((gm[0] - 1.0).abs() < 1e-6, "{gm:?}");
        assert_eq!(geometric_median(&[vec![3.0, 4.0]]).unwrap(), vec![3.0, 4.0]);
        assert!(geometric_median(&[]).is_err());
    }

    #[test]
    fn gm_beats_grid_search() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let pts: Vec<Vec<f64>> = (0..10).map(|_| (0..3).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let gm = geometric_median(&pts).unwrap();
        let best = grid_min(&pts, 3);
        assert!(gm_objective(&pts, &gm) <= best + 1e-4);
    }

    /// Coarse-to-fine grid search of the GM objective.
    fn grid_min(pts: &[Vec<f64>], d: usize) -> f64 {
        let mut center = vec![0.0; d];
        let mut half = 1.0;
        let steps = 20i32;
        let mut best = f64::INFINITY;
        for _ in 0..12 {
            let mut best_pt = center.clone();
            let total = (2 * steps + 1).pow(d as u32);
            for idx in 0..total {
                let mut k = idx;
                let y: Vec<f64> = (0..d)
                    .map(|a| {
                        let off = (k % (2 * steps + 1)) as i32 - steps;
                        k /= 2 * steps + 1;
                        center[a] + half * f64::from(off) / f64::from(steps)
                    })
                    .collect();
                let v = gm_objective(pts, &y);
                if v < best {
                    best = v;
                    best_pt = y;
                }
            }
            center = best_pt;
            half /= 4.0;
        }
        best
    }

    #[test]
    fn gm_scores() {
        let mut l = QConvLayer::<f64>::zeros(1, 5, ConvGeometry::square(1, 1, 0), false);
        l.weight.iter_mut().for_each(|w| *w = 0.25);
        assert!(gm_importance(&l).unwrap().iter().all(|&s| s.abs() < 1e-12));
        for o in 0..4 {
            l.bank_mut(o)[3] = 9.0;
        }
        let s = gm_importance(&l).unwrap();
        let top = (0..5).max_by(|&a, &b| s[a].total_cmp(&s[b])).unwrap();
        assert_eq!(top, 3);
        assert!((0..5).filter(|&i| i != 3).all(|i| s[i] < s[3]));
        let single = QConvLayer::<f64>::zeros(1, 1, ConvGeometry::square(1, 1, 0), false);
        assert!(matches!(gm_importance(&single), Err(Error::Degenerate(_))));
    }

    #[test]
    fn gm_scores_match_refined_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        // q_in = 1 and a 1×3 kernel: each component filter is a 3-D point.
        let mut l = QConvLayer::<f64>::zeros(1, 6, ConvGeometry { kh: 1, kw: 3, stride: 1, pad: 0 }, false);
        l.weight.iter_mut().for_each(|w| *w = r.random_range(-1.0..1.0));
        let s = gm_importance(&l).unwrap();
        let mut expect = vec![0.0; 6];
        for o in 0..4 {
            let pts: Vec<Vec<f64>> = (0..6).map(|m| component(&l, m, o)).collect();
            let gm = refine_by_grid(&pts);
            for m in 0..6 {
                expect[m] += pts[m].iter().zip(&gm).map(|(a, b)| (a - b).abs()).sum::<f64>();
            }
        }
        for m in 0..6 {
            assert!((s[m] - expect[m]).abs() <= 1e-4, "{} vs {}", s[m], expect[m]);
        }
    }

    /// Grid search over a shrinking box, returning the minimizer.
    fn refine_by_grid(pts: &[Vec<f64>]) -> Vec<f64> {
        let d = pts[0].len();
        let mut center = vec![0.0; d];
        let mut half = 1.0;
        let steps = 10i32;
        for _ in 0..20 {
            let mut best = (f64::INFINITY, center.clone());
            let side = 2 * steps + 1;
            for idx in 0..side.pow(d as u32) {
                let mut k = idx;
                let y: Vec<f64> = (0..d)
                    .map(|a| {
                        let off = k % side - steps;
                        k /= side;
                        center[a] + half * f64::from(off) / f64::from(steps)
                    })
                    .collect();
                let v = gm_objective(pts, &y);
                if v < best.0 {
                    best = (v, y);
                }
            }
            center = best.1;
            half /= 3.0;
        }
        center
    }

    #[test]
    fn op_examples() {
        let l = QConvLayer::<f64>::zeros(2, 1, ConvGeometry { kh: 1, kw: 2, stride: 1, pad: 0 }, false);
        assert_eq!(op_importance(&l), vec![0.0]);
        let mut l = l;
        for o in 0..4 {
            // q_in × taps = 2×2 identity.
            l.bank_mut(o).copy_from_slice(&[1.0, 0.0, 0.0, 1.0]);
        }
        assert!((op_importance(&l)[0] - 4.0).abs() < 1e-12);
    }

    #[test]
    fn op_matches_jacobi_svd() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for (rows, cols) in [(3, 9), (8, 16), (1, 9), (5, 1), (16, 8)] {
            for _ in 0..10 {
                let a: Vec<f64> = (0..rows * cols).map(|_| r.random_range(-1.0..1.0)).collect();
                let got = largest_singular_value(&a, rows, cols);
                let want = jacobi_sigma_max(&a, rows, cols);
                assert!((got - want).abs() <= 1e-8 * want, "{rows}x{cols}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn method_parsing() {
        for m in Method::ALL {
            assert_eq!(m.as_str().parse::<Method>().unwrap(), m);
        }
        assert!("l2".parse::<Method>().is_err());
    }

    fn argsort(s: &[f64]) -> Vec<usize> {
        let mut i: Vec<usize> = (0..s.len()).collect();
        i.sort_by(|&a, &b| s[a].total_cmp(&s[b]).then(a.cmp(&b)));
        i
    }

    proptest! {
        #[test]
        fn scaling_keeps_rankings(seed in 0u64..1000, c in 0.1f64..10.0) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let l = random_layer(&mut r, 2, 6, 3);
            let mut scaled = l.clone();
            scaled.weight.iter_mut().for_each(|w| *w *= c);
            for m in Method::ALL {
                prop_assert_eq!(argsort(&importance(&l, m).unwrap()), argsort(&importance(&scaled, m).unwrap()));
            }
            let a = l1_importance(&l);
            let b = l1_importance(&scaled);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((y - c * x).abs() <= 1e-12 * y.abs().max(1.0));
            }
        }

        #[test]
        fn op_invariant_to_column_permutation(seed in 0u64..1000) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let l = random_layer(&mut r, 3, 4, 3);
            let perm = [4usize, 0, 8, 2, 6, 1, 3, 7, 5];
            let mut p = l.clone();
            for o in 0..4 {
                for m in 0..4 {
                    for i in 0..3 {
                        for (dst, &src) in perm.iter().enumerate() {
                            let base = o * l.bank_len() + (m * 3 + i) * 9;
                            p.weight[base + dst] = l.weight[base + src];
                        }
                    }
                }
            }
            for (a, b) in op_importance(&l).iter().zip(op_importance(&p)) {
                prop_assert!((a - b).abs() <= 1e-9 * a, "{} vs {}", a, b);
            }
        }
    }
}
