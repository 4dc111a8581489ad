//! Session metrics: effort/effect information gain and session DCG.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::QrelSet;
use crate::sim::{Action, LogError, SessionLog};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Log(#[from] LogError),
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("nothing to aggregate")]
    Empty,
    #[error("full-SERP sDCG needs qrels")]
    MissingQrels,
}

/// Cumulative effort (seconds) against cumulative effect, one point per
/// interaction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainCurve {
    pub points: Vec<(f64, f64)>,
    pub unjudged_relevant_count: usize,
}

impl GainCurve {
    pub fn final_effect(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }

    pub fn final_effort(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GainOptions {
    /// Count every positive grade as 1.
    pub binarize: bool,
}

/// Effect grows by the recorded grade at each judgment the user called
/// relevant, provided the grade is present and positive. Relevant calls on
/// unjudged documents add nothing and are counted separately.
pub fn information_gain_curve(log: &SessionLog, options: GainOptions) -> Result<GainCurve, EvalError> {
    log.validate()?;
    let mut effort = 0.0;
    let mut effect = 0.0;
    let mut unjudged = 0;
    let mut points = Vec::with_capacity(log.interactions.len());
    for i in &log.interactions {
        effort += i.cost;
        if let Action::JudgmentMade { relevant: true, grade, .. } = &i.action {
            match grade {
                Some(g) if *g > 0 => effect += if options.binarize { 1.0 } else { f64::from(*g) },
                Some(_) => {}
                None => unjudged += 1,
            }
        }
        points.push((effort, effect));
    }
    Ok(GainCurve { points, unjudged_relevant_count: unjudged })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SdcgScope {
    /// Documents the user opened and judged, with the grade recorded in the
    /// log.
    #[default]
    Viewed,
    /// Every inspected snippet, graded from the qrels.
    Examined,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SdcgParams {
    pub b: f64,
    pub bq: f64,
    pub scope: SdcgScope,
}

impl Default for SdcgParams {
    fn default() -> Self {
        Self { b: 2.0, bq: 4.0, scope: SdcgScope::Viewed }
    }
}

impl SdcgParams {
    pub fn validate(&self) -> Result<(), EvalError> {
        if self.b >= 2.0 && self.bq >= 2.0 && self.b.is_finite() && self.bq.is_finite() {
            Ok(())
        } else {
            Err(EvalError::Param(format!("b and bq must be >= 2 (got b={}, bq={})", self.b, self.bq)))
        }
    }
}

/// Cumulative sDCG after each query position 1..=Q.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SdcgCurve {
    pub points: Vec<(usize, f64)>,
    pub b: f64,
    pub bq: f64,
}

impl SdcgCurve {
    pub fn final_value(&self) -> f64 {
        self.points.last().map_or(0.0, |p| p.1)
    }
}

/// Rank discount: 1 below rank `b`, `log_b(rank)` from there on.
pub fn rank_discount(rank: usize, b: f64) -> f64 {
    let r = rank as f64;
    if r < b {
        1.0
    } else {
        r.ln() / b.ln()
    }
}

/// Query discount `1 / (1 + log_bq(q))`.
pub fn query_discount(q: usize, bq: f64) -> f64 {
    1.0 / (1.0 + (q as f64).ln() / bq.ln())
}

pub fn sdcg_curve(log: &SessionLog, params: SdcgParams, qrels: Option<&QrelSet>) -> Result<SdcgCurve, EvalError> {
    params.validate()?;
    log.validate()?;
    if params.scope == SdcgScope::Examined && qrels.is_none() {
        return Err(EvalError::MissingQrels);
    }
    let mut per_query: Vec<f64> = Vec::new();
    let mut ranks: HashMap<&str, usize> = HashMap::new();
    for i in &log.interactions {
        match &i.action {
            Action::QueryIssued { .. } => {
                per_query.push(0.0);
                ranks.clear();
            }
            Action::SnippetViewed { doc_id, rank } => {
                ranks.insert(doc_id, *rank);
                if params.scope == SdcgScope::Examined {
                    let grade = qrels.and_then(|q| q.grade(&log.topic_id, doc_id)).unwrap_or(0);
                    *per_query.last_mut().expect("validated") += f64::from(grade) / rank_discount(*rank, params.b);
                }
            }
            Action::JudgmentMade { doc_id, grade, .. } if params.scope == SdcgScope::Viewed => {
                let rank = ranks[doc_id.as_str()];
                let grade = grade.unwrap_or(0);
                *per_query.last_mut().expect("validated") += f64::from(grade) / rank_discount(rank, params.b);
            }
            _ => {}
        }
    }
    let mut total = 0.0;
    let points = per_query
        .into_iter()
        .enumerate()
        .map(|(i, dcg)| {
            total += query_discount(i + 1, params.bq) * dcg;
            (i + 1, total)
        })
        .collect();
    Ok(SdcgCurve { points, b: params.b, bq: params.bq })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanPoint {
    pub x: f64,
    pub mean_y: f64,
    /// Curves that have a point at or before `x`.
    pub n: usize,
}

/// Step value of a curve at `x`: the last point at or before `x`, 0 before
/// the first point.
pub fn step_value(curve: &[(f64, f64)], x: f64) -> f64 {
    let idx = curve.partition_point(|p| p.0 <= x);
    if idx == 0 {
        0.0
    } else {
        curve[idx - 1].1
    }
}

/// Pointwise mean of step-interpolated curves over `grid`.
pub fn aggregate_curves(curves: &[Vec<(f64, f64)>], grid: &[f64]) -> Result<Vec<MeanPoint>, EvalError> {
    if curves.is_empty() {
        return Err(EvalError::Empty);
    }
    let k = curves.len() as f64;
    Ok(grid
        .iter()
        .map(|&x| {
            let sum: f64 = curves.iter().map(|c| step_value(c, x)).sum();
            let n = curves.iter().filter(|c| c.first().is_some_and(|p| p.0 <= x)).count();
            MeanPoint { x, mean_y: sum / k, n }
        })
        .collect())
}

/// Sorted distinct x values of all curves.
pub fn union_grid(curves: &[Vec<(f64, f64)>]) -> Vec<f64> {
    let mut xs: Vec<f64> = curves.iter().flatten().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    xs
}

pub fn sdcg_points(curve: &SdcgCurve) -> Vec<(f64, f64)> {
    curve.points.iter().map(|&(q, v)| (q as f64, v)).collect()
}
