//! Structural removal of quaternion filters and of the input slices that
//! consumed them.

use super::plan::{LayerPlan, PrunePlan};
use crate::error::{Error, Result};
use crate::nn::{ActShape, Layer, ModelGraph};
use crate::scalar::Scalar;

/// Where the pruned channels end up being consumed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Route {
    /// Spatial map, channel `p·q + m`.
    Spatial,
    /// After global average pooling: feature `p·q + m`.
    Pooled,
    /// After flattening a `h·w` map: feature `(p·q + m)·hw + s`.
    Flattened { hw: usize },
}

/// Index of the layer consuming layer `i`'s output channels, checking
/// everything in between can be narrowed.
pub fn check_consumer<T: Scalar>(model: &ModelGraph<T>, i: usize) -> Result<usize> {
    if !matches!(model.layers.get(i), Some(Layer::QConv(_))) {
        return Err(Error::Surgery(format!("layer {i} is not a top-level quaternion conv layer")));
    }
    let mut route = Route::Spatial;
    for (j, l) in model.layers.iter().enumerate().skip(i + 1) {
        match (l, route) {
            (Layer::BatchNorm(_), Route::Spatial) | (Layer::Relu, _) | (Layer::Pool { .. }, Route::Spatial) => {}
            (Layer::GlobalAvgPool, Route::Spatial) => route = Route::Pooled,
            (Layer::Flatten, Route::Spatial) => route = Route::Flattened { hw: 0 },
            (Layer::Flatten, _) => {}
            (Layer::QConv(_) | Layer::Conv(_), Route::Spatial) => return Ok(j),
            (Layer::Linear(_) | Layer::QLinear(_), Route::Pooled | Route::Flattened { .. }) => return Ok(j),
            (Layer::Residual(_), _) => {
                return Err(Error::Surgery(format!(
                    "layer {i} feeds residual block {j}; residual interiors are not pruned"
                )))
            }
            (other, _) => {
                return Err(Error::Surgery(format!("layer {j} ({}) cannot be narrowed after layer {i}", other.name())))
            }
        }
    }
    Err(Error::Surgery(format!("layer {i} has no downstream consumer; pruning it would change the output width")))
}

/// Removes the planned filters. The input model is untouched; on error no
/// model is produced.
pub fn apply_prune<T: Scalar>(model: &ModelGraph<T>, plan: &PrunePlan) -> Result<ModelGraph<T>> {
    plan.check_consistent().map_err(|e| Error::Surgery(e.to_string()))?;
    let shapes = model.shapes().map_err(|e| Error::Surgery(e.to_string()))?;
    let mut out = model.clone();
    for lp in &plan.layers {
        narrow(&mut out, model, &shapes, lp)?;
    }
    out.validate().map_err(|e| Error::Surgery(format!("pruned model does not shape-check: {e}")))?;
    Ok(out)
}

fn narrow<T: Scalar>(out: &mut ModelGraph<T>, orig: &ModelGraph<T>, shapes: &[ActShape], lp: &LayerPlan) -> Result<()> {
    let i = lp.layer;
    let consumer = check_consumer(orig, i)?;
    let q = match &out.layers[i] {
        Layer::QConv(l) => l.q_out,
        _ => unreachable!("checked by check_consumer"),
    };
    if q != lp.filters {
        return Err(Error::Surgery(format!("plan expects {} filters in layer {i}, model has {q}", lp.filters)));
    }
    let keep = lp.keep();
    if keep.is_empty() {
        return Err(Error::Surgery(format!("plan removes every filter of layer {i}")));
    }
    // Real channel indices p·q + m of the kept filters.
    let channels: Vec<usize> = (0..4).flat_map(|p| keep.iter().map(move |&m| p * q + m)).collect();

    if let Layer::QConv(l) = &mut out.layers[i] {
        let f = l.filter_len();
        let bank = l.bank_len();
        let mut w = Vec::with_capacity(4 * keep.len() * f);
        for o in 0..4 {
            for &m in &keep {
                w.extend_from_slice(&l.weight[o * bank + m * f..o * bank + (m + 1) * f]);
            }
        }
        l.weight = w;
        if let Some(b) = &mut l.bias {
            *b = channels.iter().map(|&c| b[c]).collect();
        }
        l.q_out = keep.len();
    }

    let mut route = Route::Spatial;
    for j in i + 1..=consumer {
        match &mut out.layers[j] {
            Layer::BatchNorm(bn) => {
                for v in [&mut bn.gamma, &mut bn.beta, &mut bn.running_mean, &mut bn.running_var] {
                    *v = channels.iter().map(|&c| v[c]).collect();
                }
                bn.channels = channels.len();
            }
            Layer::GlobalAvgPool => route = Route::Pooled,
            Layer::Flatten if route == Route::Spatial => {
                let hw = match shapes[j - 1] {
                    ActShape::Spatial { h, w, .. } => h * w,
                    ActShape::Flat { .. } => unreachable!("route is spatial"),
                };
                route = Route::Flattened { hw };
            }
            Layer::QConv(c) => {
                let taps = c.geom.taps();
                let per_out = c.q_in * taps;
                let mut w = Vec::with_capacity(4 * c.q_out * keep.len() * taps);
                for o in 0..4 {
                    for r in 0..c.q_out {
                        let base = o * c.q_out * per_out + r * per_out;
                        for &m in &keep {
                            w.extend_from_slice(&c.weight[base + m * taps..base + (m + 1) * taps]);
                        }
                    }
                }
                c.weight = w;
                c.q_in = keep.len();
            }
            Layer::Conv(c) => {
                let taps = c.geom.taps();
                let mut w = Vec::with_capacity(c.c_out * channels.len() * taps);
                for r in 0..c.c_out {
                    let base = r * c.c_in * taps;
                    for &ch in &channels {
                        w.extend_from_slice(&c.weight[base + ch * taps..base + (ch + 1) * taps]);
                    }
                }
                c.weight = w;
                c.c_in = channels.len();
            }
            Layer::Linear(l) => {
                let cols: Vec<usize> = match route {
                    Route::Flattened { hw } => channels.iter().flat_map(|&c| (0..hw).map(move |s| c * hw + s)).collect(),
                    _ => channels.clone(),
                };
                let mut w = Vec::with_capacity(l.out_features * cols.len());
                for r in 0..l.out_features {
                    let row = &l.weight[r * l.in_features..(r + 1) * l.in_features];
                    w.extend(cols.iter().map(|&c| row[c]));
                }
                l.weight = w;
                l.in_features = cols.len();
            }
            Layer::QLinear(l) => {
                let inputs: Vec<usize> = match route {
                    Route::Flattened { hw } => keep.iter().flat_map(|&m| (0..hw).map(move |s| m * hw + s)).collect(),
                    _ => keep.clone(),
                };
                let mut w = Vec::with_capacity(4 * l.q_out * inputs.len());
                for o in 0..4 {
                    let bank = l.bank(o);
                    for r in 0..l.q_out {
                        w.extend(inputs.iter().map(|&m| bank[r * l.q_in + m]));
                    }
                }
                l.weight = w;
                l.q_in = inputs.len();
            }
            _ => {}
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::predict;
    use crate::nn::zoo::{qcnn_mini, qresnet_mini};
    use crate::nn::{ConvGeometry, InputSpec, LinearLayer, QConvLayer, QLinearLayer, RealConvLayer, Task};
    use crate::nn::{BatchNormLayer, PoolKind};
    use crate::pruning::{build_prune_plan, LayerSelector, Method};
    use crate::tensor::Tensor4;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const INPUT: InputSpec = InputSpec { channels: 4, height: 8, width: 8 };

    fn batch(r: &mut ChaCha8Rng, n: usize, input: InputSpec) -> Tensor4<f64> {
        let len = n * input.channels * input.height * input.width;
        Tensor4::from_vec(n, input.channels, input.height, input.width, (0..len).map(|_| r.random_range(-1.0..1.0)).collect())
            .unwrap()
    }

    /// Non-trivial BN statistics so channel bookkeeping errors show up.
    fn randomize_bn(m: &mut ModelGraph<f64>, r: &mut ChaCha8Rng) {
        fn walk(layers: &mut [Layer<f64>], r: &mut ChaCha8Rng) {
            for l in layers {
                match l {
                    Layer::BatchNorm(bn) => {
                        bn.gamma.iter_mut().for_each(|v| *v = r.random_range(0.5..1.5));
                        bn.beta.iter_mut().for_each(|v| *v = r.random_range(-0.5..0.5));
                        bn.running_mean.iter_mut().for_each(|v| *v = r.random_range(-0.2..0.2));
                        bn.running_var.iter_mut().for_each(|v| *v = r.random_range(0.5..2.0));
                    }
                    Layer::QConv(c) => {
                        if let Some(b) = &mut c.bias {
                            b.iter_mut().for_each(|v| *v = r.random_range(-0.3..0.3));
                        }
                    }
                    Layer::Residual(body) => walk(body, r),
                    _ => {}
                }
            }
        }
        walk(&mut m.layers, r);
    }

    /// The unpruned model with the removed filters' weights and bias zeroed
    /// and every downstream weight reading their channels zeroed.
    fn zero_masked(model: &ModelGraph<f64>, plan: &PrunePlan) -> ModelGraph<f64> {
        let shapes = model.shapes().unwrap();
        let mut m = model.clone();
        for lp in &plan.layers {
            let i = lp.layer;
            let consumer = check_consumer(model, i).unwrap();
            let Layer::QConv(l) = &mut m.layers[i] else { panic!() };
            let q = l.q_out;
            let f = l.filter_len();
            let bank = l.bank_len();
            for o in 0..4 {
                for &r in &lp.remove {
                    l.weight[o * bank + r * f..o * bank + (r + 1) * f].iter_mut().for_each(|v| *v = 0.0);
                    if let Some(b) = &mut l.bias {
                        b[o * q + r] = 0.0;
                    }
                }
            }
            let dead = |ch: usize| lp.remove.contains(&(ch % q));
            let mut hw = None;
            for j in i + 1..=consumer {
                if matches!(m.layers[j], Layer::Flatten) {
                    if let ActShape::Spatial { h, w, .. } = shapes[j - 1] {
                        hw = Some(h * w);
                    }
                }
                match &mut m.layers[j] {
                    Layer::QConv(c) => {
                        let taps = c.geom.taps();
                        for o in 0..4 {
                            for r in 0..c.q_out {
                                for &x in &lp.remove {
                                    let base = o * c.q_out * c.q_in * taps + (r * c.q_in + x) * taps;
                                    c.weight[base..base + taps].iter_mut().for_each(|v| *v = 0.0);
                                }
                            }
                        }
                    }
                    Layer::Conv(c) => {
                        let taps = c.geom.taps();
                        for r in 0..c.c_out {
                            for ch in (0..c.c_in).filter(|&ch| dead(ch)) {
                                let base = (r * c.c_in + ch) * taps;
                                c.weight[base..base + taps].iter_mut().for_each(|v| *v = 0.0);
                            }
                        }
                    }
                    Layer::Linear(l) => {
                        let hw = hw.unwrap_or(1);
                        for r in 0..l.out_features {
                            for c in (0..l.in_features).filter(|&c| dead(c / hw)) {
                                l.weight[r * l.in_features + c] = 0.0;
                            }
                        }
                    }
                    Layer::QLinear(l) => {
                        let hw = hw.unwrap_or(1);
                        for o in 0..4 {
                            let (qo, qi) = (l.q_out, l.q_in);
                            let b = l.bank_mut(o);
                            for r in 0..qo {
                                for j in (0..qi).filter(|&j| lp.remove.contains(&(j / hw))) {
                                    b[r * qi + j] = 0.0;
                                }
                            }
                        }
                    }
                    _ => {}
                }
            }
        }
        m
    }

    fn assert_close(a: &[f64], b: &[f64], rel: f64) {
        assert_eq!(a.len(), b.len());
        let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= rel * scale, "{x} vs {y}");
        }
    }

    #[test]
    fn empty_plan_is_identity() {
        let mut r = ChaCha8Rng::seed_from_u64(0);
        let m: ModelGraph<f64> = qcnn_mini(INPUT, 3, Task::Single, &mut r).unwrap();
        let plan = build_prune_plan(&m, Method::L1, 0.0, &LayerSelector::Default).unwrap();
        let p = apply_prune(&m, &plan).unwrap();
        assert_eq!(p, m);
        let x = batch(&mut r, 2, INPUT);
        assert_eq!(predict(&p, &x).unwrap().data, predict(&m, &x).unwrap().data);
        assert_eq!(apply_prune(&m, &PrunePlan::empty(Method::Op)).unwrap(), m);
    }

    #[test]
    fn shapes_after_removing_two_of_eight() {
        let mut r = ChaCha8Rng::seed_from_u64(1);
        let m: ModelGraph<f64> = ModelGraph::new(
            "toy",
            INPUT,
            3,
            Task::Single,
            vec![
                Layer::QConv(QConvLayer::init(1, 8, ConvGeometry::square(3, 1, 1), true, &mut r)),
                Layer::BatchNorm(BatchNormLayer::new(32)),
                Layer::Relu,
                Layer::QConv(QConvLayer::init(8, 4, ConvGeometry::square(3, 1, 1), true, &mut r)),
                Layer::GlobalAvgPool,
                Layer::Linear(LinearLayer::init(16, 3, true, &mut r)),
            ],
        );
        let plan = build_prune_plan(&m, Method::L1, 0.25, &LayerSelector::Indices(vec![0])).unwrap();
        assert_eq!(plan.layers[0].remove.len(), 2);
        let p = apply_prune(&m, &plan).unwrap();
        let (Layer::QConv(a), Layer::BatchNorm(bn), Layer::QConv(b)) = (&p.layers[0], &p.layers[1], &p.layers[3]) else {
            panic!()
        };
        assert_eq!((a.q_out, bn.channels, b.q_in), (6, 24, 6));
        assert_eq!(a.weight.len(), 4 * 6 * 9);
        assert_eq!(b.weight.len(), 4 * 4 * 6 * 9);
        let x = batch(&mut r, 2, INPUT);
        assert_eq!(predict(&p, &x).unwrap().cols, 3);
        // The input model is never mutated.
        assert!(matches!(&m.layers[0], Layer::QConv(l) if l.q_out == 8));
    }

    #[test]
    fn qcnn_mini_matches_zero_masking_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(2);
        let mut m: ModelGraph<f64> = qcnn_mini(INPUT, 5, Task::Single, &mut r).unwrap();
        randomize_bn(&mut m, &mut r);
        let x = batch(&mut r, 3, INPUT);
        for method in Method::ALL {
            for sel in [LayerSelector::Default, LayerSelector::Ordinals(vec![1, 2, 6])] {
                let plan = build_prune_plan(&m, method, 0.5, &sel).unwrap();
                let p = apply_prune(&m, &plan).unwrap();
                assert!(crate::metrics::count_params(&p) < crate::metrics::count_params(&m));
                let want = predict(&zero_masked(&m, &plan), &x).unwrap();
                let got = predict(&p, &x).unwrap();
                assert_eq!(got.cols, 5);
                assert_close(&got.data, &want.data, 1e-5);
            }
        }
    }

    #[test]
    fn qresnet_tail_matches_zero_masking_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(3);
        let mut m: ModelGraph<f64> = qresnet_mini(INPUT, 4, Task::Multi, &mut r).unwrap();
        randomize_bn(&mut m, &mut r);
        let x = batch(&mut r, 2, INPUT);
        let plan = build_prune_plan(&m, Method::Gm, 0.75, &LayerSelector::Default).unwrap();
        let p = apply_prune(&m, &plan).unwrap();
        assert_close(&predict(&p, &x).unwrap().data, &predict(&zero_masked(&m, &plan), &x).unwrap().data, 1e-5);
    }

    fn flatten_model(r: &mut ChaCha8Rng, quaternion_head: bool) -> ModelGraph<f64> {
        let input = InputSpec { channels: 4, height: 4, width: 4 };
        let head = if quaternion_head {
            vec![Layer::QLinear(QLinearLayer::init(6 * 4, 2, true, r)), Layer::Relu, Layer::Linear(LinearLayer::init(8, 3, true, r))]
        } else {
            vec![Layer::Linear(LinearLayer::init(24 * 4, 3, true, r))]
        };
        let mut layers = vec![
            Layer::QConv(QConvLayer::init(1, 6, ConvGeometry::square(3, 1, 1), true, r)),
            Layer::Relu,
            Layer::Pool { kind: PoolKind::Max, window: 2, stride: 2 },
            Layer::Flatten,
        ];
        layers.extend(head);
        ModelGraph::new("toy", input, 3, Task::Single, layers)
    }

    #[test]
    fn flatten_consumers_match_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(4);
        for qh in [false, true] {
            let m = flatten_model(&mut r, qh);
            let x = batch(&mut r, 2, m.input);
            let plan = build_prune_plan(&m, Method::Op, 0.5, &LayerSelector::Indices(vec![0])).unwrap();
            let p = apply_prune(&m, &plan).unwrap();
            assert_close(&predict(&p, &x).unwrap().data, &predict(&zero_masked(&m, &plan), &x).unwrap().data, 1e-5);
        }
    }

    #[test]
    fn real_conv_consumer_matches_oracle() {
        let mut r = ChaCha8Rng::seed_from_u64(5);
        let m: ModelGraph<f64> = ModelGraph::new(
            "toy",
            INPUT,
            2,
            Task::Single,
            vec![
                Layer::QConv(QConvLayer::init(1, 4, ConvGeometry::square(3, 1, 1), false, &mut r)),
                Layer::Relu,
                Layer::Conv(RealConvLayer::init(16, 5, ConvGeometry::square(3, 1, 1), true, &mut r)),
                Layer::GlobalAvgPool,
                Layer::Linear(LinearLayer::init(5, 2, true, &mut r)),
            ],
        );
        let x = batch(&mut r, 2, INPUT);
        let plan = build_prune_plan(&m, Method::L1, 0.5, &LayerSelector::Indices(vec![0])).unwrap();
        let p = apply_prune(&m, &plan).unwrap();
        assert!(matches!(&p.layers[2], Layer::Conv(c) if c.c_in == 8));
        assert_close(&predict(&p, &x).unwrap().data, &predict(&zero_masked(&m, &plan), &x).unwrap().data, 1e-5);
    }

    #[test]
    fn inconsistent_plans_are_rejected() {
        let mut r = ChaCha8Rng::seed_from_u64(6);
        let m: ModelGraph<f64> = qcnn_mini(INPUT, 3, Task::Single, &mut r).unwrap();
        let mut plan = build_prune_plan(&m, Method::L1, 0.5, &LayerSelector::Default).unwrap();
        plan.layers[0].filters += 4;
        plan.layers[0].scores.clear();
        plan.layers[0].remove = (0..plan.layers[0].filters / 2).collect();
        assert!(matches!(apply_prune(&m, &plan), Err(Error::Surgery(_))));
        let mut plan = build_prune_plan(&m, Method::L1, 0.5, &LayerSelector::Default).unwrap();
        plan.layers[0].layer = 1;
        assert!(matches!(apply_prune(&m, &plan), Err(Error::Surgery(_))));
        let mut plan = build_prune_plan(&m, Method::L1, 0.5, &LayerSelector::Default).unwrap();
        plan.layers[0].remove.pop();
        assert!(matches!(apply_prune(&m, &plan), Err(Error::Surgery(_))));
        // Last conv of a model whose head is a conv feeding nothing.
        let lone: ModelGraph<f64> = ModelGraph::new(
            "toy",
            InputSpec { channels: 4, height: 1, width: 1 },
            4,
            Task::Single,
            vec![Layer::QConv(QConvLayer::init(1, 1, ConvGeometry::square(1, 1, 0), false, &mut r)), Layer::Flatten],
        );
        assert!(check_consumer(&lone, 0).is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(12))]
        #[test]
        fn output_width_preserved(seed in 0u64..500, p in 0.0f64..0.9, mi in 0usize..3) {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            let m: ModelGraph<f64> = qcnn_mini(INPUT, 7, Task::Single, &mut r).unwrap();
            let plan = build_prune_plan(&m, Method::ALL[mi], p, &LayerSelector::From(2)).unwrap();
            for l in &plan.layers {
                prop_assert_eq!(l.remove.len(), (p * l.filters as f64).floor() as usize);
            }
            let pruned = apply_prune(&m, &plan).unwrap();
            let x = batch(&mut r, 1, INPUT);
            prop_assert_eq!(predict(&pruned, &x).unwrap().cols, 7);
        }
    }
}
