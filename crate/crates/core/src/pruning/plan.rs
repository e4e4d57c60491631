//! Layer selection, removal plans and their text document.

use super::importance::{importance, Method};
use super::surgery::check_consumer;
use crate::error::{Error, Result};
use crate::nn::zoo::default_prunable_tail;
use crate::nn::{Layer, ModelGraph};
use crate::scalar::Scalar;
use std::fmt::Write as _;

/// Which quaternion conv layers to prune.
///
/// Ordinals count quaternion conv layers depth-first from 1, including the
/// ones inside residual blocks (which cannot be targeted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LayerSelector {
    /// The architecture's default prunable tail.
    Default,
    /// Quaternion conv ordinals `n` and later.
    From(usize),
    /// The last `n` top-level quaternion conv layers.
    Last(usize),
    Ordinals(Vec<usize>),
    /// Top-level layer indices.
    Indices(Vec<usize>),
}

impl std::str::FromStr for LayerSelector {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let num = |t: &str| -> Result<usize> {
            t.trim()
                .parse()
                .map_err(|_| Error::Plan(format!("bad layer number `{t}` in selector `{s}`")))
        };
        let list = |t: &str| -> Result<Vec<usize>> { t.split(',').map(num).collect() };
        if s.is_empty() || s == "default" {
            Ok(LayerSelector::Default)
        } else if let Some(r) = s.strip_prefix("from:") {
            Ok(LayerSelector::From(num(r)?))
        } else if let Some(r) = s.strip_prefix("last:") {
            Ok(LayerSelector::Last(num(r)?))
        } else if let Some(r) = s.strip_prefix("idx:") {
            Ok(LayerSelector::Indices(list(r)?))
        } else {
            Ok(LayerSelector::Ordinals(list(s)?))
        }
    }
}

struct QConvSite {
    ordinal: usize,
    /// Top-level index, or `None` inside a residual block.
    top: Option<usize>,
}

fn qconv_sites<T: Scalar>(model: &ModelGraph<T>) -> Vec<QConvSite> {
    fn walk<T: Scalar>(layers: &[Layer<T>], top: Option<usize>, out: &mut Vec<QConvSite>) {
        for (i, l) in layers.iter().enumerate() {
            match l {
                Layer::QConv(_) => out.push(QConvSite { ordinal: out.len() + 1, top: if top.is_none() { Some(i) } else { None } }),
                Layer::Residual(body) => walk(body, Some(i), out),
                _ => {}
            }
        }
    }
    let mut out = Vec::new();
    walk(&model.layers, None, &mut out);
    out
}

impl LayerSelector {
    /// Resolves to sorted, distinct top-level layer indices.
    pub fn resolve<T: Scalar>(&self, model: &ModelGraph<T>) -> Result<Vec<usize>> {
        let sites = qconv_sites(model);
        let top_level: Vec<usize> = sites.iter().filter_map(|s| s.top).collect();
        let by_ordinal = |o: usize| -> Result<usize> {
            let site = sites
                .iter()
                .find(|s| s.ordinal == o)
                .ok_or_else(|| Error::Plan(format!("model has no quaternion conv layer #{o} ({} in total)", sites.len())))?;
            site.top
                .ok_or_else(|| Error::Plan(format!("quaternion conv layer #{o} is inside a residual block")))
        };
        let mut out = match self {
            LayerSelector::Default => {
                let n = default_prunable_tail(&model.arch).ok_or_else(|| {
                    Error::Plan(format!("no default prunable layers for architecture `{}`", model.arch))
                })?;
                top_level[top_level.len().saturating_sub(n)..].to_vec()
            }
            LayerSelector::Last(n) => {
                if *n > top_level.len() {
                    return Err(Error::Plan(format!(
                        "asked for the last {n} quaternion conv layers, model has {} outside residual blocks",
                        top_level.len()
                    )));
                }
                top_level[top_level.len() - n..].to_vec()
            }
            LayerSelector::From(n) => {
                let picked: Vec<&QConvSite> = sites.iter().filter(|s| s.ordinal >= *n).collect();
                if picked.is_empty() {
                    return Err(Error::Plan(format!("model has no quaternion conv layer #{n} or later")));
                }
                picked.iter().map(|s| by_ordinal(s.ordinal)).collect::<Result<_>>()?
            }
            LayerSelector::Ordinals(v) => v.iter().map(|&o| by_ordinal(o)).collect::<Result<_>>()?,
            LayerSelector::Indices(v) => {
                for &i in v {
                    match model.layers.get(i) {
                        Some(Layer::QConv(_)) => {}
                        Some(Layer::Residual(_)) => {
                            return Err(Error::Plan(format!("layer {i} is a residual block; its interior is not prunable")))
                        }
                        Some(other) => {
                            return Err(Error::Plan(format!("layer {i} is a {}, not a quaternion conv layer", other.name())))
                        }
                        None => return Err(Error::Plan(format!("layer index {i} out of range"))),
                    }
                }
                v.clone()
            }
        };
        out.sort_unstable();
        out.dedup();
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerPlan {
    /// Top-level layer index.
    pub layer: usize,
    /// Quaternion filter count M of the layer.
    pub filters: usize,
    pub scores: Vec<f64>,
    /// Sorted filter indices to remove.
    pub remove: Vec<usize>,
}

impl LayerPlan {
    pub fn keep(&self) -> Vec<usize> {
        (0..self.filters).filter(|m| self.remove.binary_search(m).is_err()).collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PrunePlan {
    pub method: Method,
    pub ratio: f64,
    pub layers: Vec<LayerPlan>,
}

pub fn removal_count(ratio: f64, filters: usize) -> usize {
    (ratio * filters as f64).floor() as usize
}

fn check_ratio(p: f64) -> Result<()> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::Plan(format!("pruning ratio {p} is outside [0, 1)")));
    }
    Ok(())
}

/// The `⌊p·M⌋` lowest-scoring indices, lower index first on ties, sorted.
pub fn lowest_scores(scores: &[f64], ratio: f64) -> Result<Vec<usize>> {
    check_ratio(ratio)?;
    if let Some(i) = scores.iter().position(|s| !s.is_finite()) {
        return Err(Error::Plan(format!("importance score of filter {i} is not finite")));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]).then(a.cmp(&b)));
    let mut remove = order[..removal_count(ratio, scores.len())].to_vec();
    remove.sort_unstable();
    Ok(remove)
}

/// Scores every targeted layer and picks its removal set.
pub fn build_prune_plan<T: Scalar>(model: &ModelGraph<T>, method: Method, ratio: f64, targets: &LayerSelector) -> Result<PrunePlan> {
    check_ratio(ratio)?;
    let layers = targets.resolve(model)?;
    let mut out = Vec::with_capacity(layers.len());
    for i in layers {
        let Layer::QConv(l) = &model.layers[i] else {
            return Err(Error::Plan(format!("layer {i} is not a quaternion conv layer")));
        };
        check_consumer(model, i).map_err(|e| Error::Plan(e.to_string()))?;
        let scores = importance(l, method)?;
        let remove = lowest_scores(&scores, ratio)?;
        if remove.len() == l.q_out {
            return Err(Error::Plan(format!("plan would remove every filter of layer {i}")));
        }
        out.push(LayerPlan { layer: i, filters: l.q_out, scores, remove });
    }
    Ok(PrunePlan { method, ratio, layers: out })
}

const HEADER: &str = "# quaternion filter prune plan";

impl PrunePlan {
    pub fn empty(method: Method) -> Self {
        Self { method, ratio: 0.0, layers: Vec::new() }
    }

    /// Total number of quaternion filters removed.
    pub fn removed(&self) -> usize {
        self.layers.iter().map(|l| l.remove.len()).sum()
    }

    /// Text document: scores to 9 significant digits; the removal sets are
    /// what a replay uses.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{HEADER}");
        let _ = writeln!(s, "method={}", self.method);
        let _ = writeln!(s, "ratio={}", self.ratio);
        for l in &self.layers {
            let _ = writeln!(s, "layer {} filters {}", l.layer, l.filters);
            let scores: Vec<String> = l.scores.iter().map(|v| format!("{v:.8e}")).collect();
            let _ = writeln!(s, "scores {}", scores.join(" "));
            let remove: Vec<String> = l.remove.iter().map(usize::to_string).collect();
            let _ = writeln!(s, "remove {}", remove.join(" "));
        }
        s.lines().map(str::trim_end).collect::<Vec<_>>().join("\n") + "\n"
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let bad = |line: usize, msg: &str| Error::Format(format!("plan line {line}: {msg}"));
        let mut method = None;
        let mut ratio = None;
        let mut layers: Vec<LayerPlan> = Vec::new();
        for (n, raw) in text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())) {
            if raw.is_empty() || raw.starts_with('#') {
                continue;
            }
            if let Some(v) = raw.strip_prefix("method=") {
                method = Some(v.parse::<Method>().map_err(|e| bad(n, &e.to_string()))?);
                continue;
            }
            if let Some(v) = raw.strip_prefix("ratio=") {
                ratio = Some(v.parse::<f64>().map_err(|_| bad(n, "ratio is not a number"))?);
                continue;
            }
            let mut words = raw.split_whitespace();
            let key = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            match key {
                "layer" => match rest.as_slice() {
                    [l, "filters", m] => layers.push(LayerPlan {
                        layer: l.parse().map_err(|_| bad(n, "bad layer index"))?,
                        filters: m.parse().map_err(|_| bad(n, "bad filter count"))?,
                        scores: Vec::new(),
                        remove: Vec::new(),
                    }),
                    _ => return Err(bad(n, "expected `layer L filters M`")),
                },
                "scores" | "remove" => {
                    let cur = layers.last_mut().ok_or_else(|| bad(n, "entry before any `layer` line"))?;
                    if key == "scores" {
                        cur.scores =
                            rest.iter().map(|v| v.parse().map_err(|_| bad(n, "bad score"))).collect::<Result<_>>()?;
                    } else {
                        cur.remove =
                            rest.iter().map(|v| v.parse().map_err(|_| bad(n, "bad filter index"))).collect::<Result<_>>()?;
                    }
                }
                other => return Err(bad(n, &format!("unknown entry `{other}`"))),
            }
        }
        let plan = PrunePlan {
            method: method.ok_or_else(|| Error::Format("plan has no method".into()))?,
            ratio: ratio.ok_or_else(|| Error::Format("plan has no ratio".into()))?,
            layers,
        };
        plan.check_consistent()?;
        Ok(plan)
    }

    /// Internal invariants: ratio range, removal set sizes, index validity.
    pub fn check_consistent(&self) -> Result<()> {
        check_ratio(self.ratio)?;
        let mut seen = Vec::new();
        for l in &self.layers {
            if seen.contains(&l.layer) {
                return Err(Error::Plan(format!("layer {} appears twice", l.layer)));
            }
            seen.push(l.layer);
            if !l.scores.is_empty() && l.scores.len() != l.filters {
                return Err(Error::Plan(format!(
                    "layer {}: {} scores for {} filters",
                    l.layer,
                    l.scores.len(),
                    l.filters
                )));
            }
            if l.remove.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Plan(format!("layer {}: removal set is not sorted and distinct", l.layer)));
            }
            if l.remove.iter().any(|&m| m >= l.filters) {
                return Err(Error::Plan(format!("layer {}: removal index out of range", l.layer)));
            }
            if l.remove.len() != removal_count(self.ratio, l.filters) {
                return Err(Error::Plan(format!(
                    "layer {}: removes {} filters, ratio {} of {} gives {}",
                    l.layer,
                    l.remove.len(),
                    self.ratio,
                    l.filters,
                    removal_count(self.ratio, l.filters)
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        Ok(std::fs::write(path, self.to_text())?)
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}
