//! Reliability statistics over per-run results.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("no runs")]
    Empty,
    #[error("total trial count is zero")]
    ZeroTotal,
    #[error("need at least 2 runs, have {0}")]
    TooFewRuns(usize),
    #[error("run {0}: correct exceeds total")]
    Inconsistent(u32),
    #[error("unsupported confidence level {0} (only 0.95 is tabulated)")]
    Level(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunAccuracy {
    pub run_id: u32,
    pub correct: u64,
    pub total: u64,
    pub total_wall_time: f64,
    pub total_output_tokens: u64,
}

impl RunAccuracy {
    pub fn new(run_id: u32, correct: u64, total: u64) -> RunAccuracy {
        RunAccuracy { run_id, correct, total, total_wall_time: 0.0, total_output_tokens: 0 }
    }

    pub fn accuracy(&self) -> f64 {
        if self.total == 0 {
            0.0
        } else {
            self.correct as f64 / self.total as f64
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteStatistics {
    pub runs: usize,
    pub pooled_accuracy: f64,
    pub mean_accuracy: f64,
    /// `None` when fewer than two runs are available.
    pub std_dev: Option<f64>,
    pub rse: Option<f64>,
    pub t_ci_low: Option<f64>,
    pub t_ci_high: Option<f64>,
    pub range: f64,
    pub avg_time_per_conversation: f64,
    pub avg_tokens_per_conversation: f64,
}

fn check(runs: &[RunAccuracy]) -> Result<(), StatsError> {
    if runs.is_empty() {
        return Err(StatsError::Empty);
    }
    if let Some(r) = runs.iter().find(|r| r.correct > r.total) {
        return Err(StatsError::Inconsistent(r.run_id));
    }
    Ok(())
}

/// ΣC / ΣT over all runs.
pub fn pooled_accuracy(runs: &[RunAccuracy]) -> Result<f64, StatsError> {
    check(runs)?;
    let c: u64 = runs.iter().map(|r| r.correct).sum();
    let t: u64 = runs.iter().map(|r| r.total).sum();
    if t == 0 {
        return Err(StatsError::ZeroTotal);
    }
    Ok(c as f64 / t as f64)
}

pub fn mean_accuracy(runs: &[RunAccuracy]) -> Result<f64, StatsError> {
    check(runs)?;
    Ok(runs.iter().map(RunAccuracy::accuracy).sum::<f64>() / runs.len() as f64)
}

/// Sample standard deviation (R − 1 denominator), two-pass.
pub fn sample_std_dev(xs: &[f64]) -> Result<f64, StatsError> {
    if xs.len() < 2 {
        return Err(StatsError::TooFewRuns(xs.len()));
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let ss: f64 = xs.iter().map(|x| (x - mean) * (x - mean)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

pub fn run_std_dev(runs: &[RunAccuracy]) -> Result<f64, StatsError> {
    check(runs)?;
    let xs: Vec<f64> = runs.iter().map(RunAccuracy::accuracy).collect();
    sample_std_dev(&xs)
}

/// Relative standard error of the standard-deviation estimate, 1/√(2(R−1)).
pub fn rse(runs: usize) -> Result<f64, StatsError> {
    if runs < 2 {
        return Err(StatsError::TooFewRuns(runs));
    }
    Ok(1.0 / (2.0 * (runs as f64 - 1.0)).sqrt())
}

/// Two-sided 95% critical values t(0.975, df) for df = 1..=200.
#[rustfmt::skip]
const T975: [f64; 200] = [
    12.7062047364, 4.3026527297, 3.1824463053, 2.7764451052, 2.5705818356,
    2.4469118511, 2.3646242516, 2.3060041352, 2.2621571629, 2.2281388520,
    2.2009851601, 2.1788128297, 2.1603686565, 2.1447866879, 2.1314495456,
    2.1199052992, 2.1098155778, 2.1009220402, 2.0930240544, 2.0859634473,
    2.0796138447, 2.0738730679, 2.0686576104, 2.0638985616, 2.0595385528,
    2.0555294386, 2.0518305165, 2.0484071418, 2.0452296421, 2.0422724563,
    2.0395134464, 2.0369333435, 2.0345152974, 2.0322445093, 2.0301079283,
    2.0280940010, 2.0261924630, 2.0243941639, 2.0226909200, 2.0210753903,
    2.0195409704, 2.0180817028, 2.0166921992, 2.0153675744, 2.0141033889,
    2.0128955989, 2.0117405137, 2.0106347576, 2.0095752371, 2.0085591121,
    2.0075837703, 2.0066468051, 2.0057459953, 2.0048792882, 2.0040447833,
    2.0032407188, 2.0024654593, 2.0017174841, 2.0009953781, 2.0002978220,
    1.9996235850, 1.9989715170, 1.9983405425, 1.9977296543, 1.9971379084,
    1.9965644190, 1.9960083540, 1.9954689314, 1.9949454151, 1.9944371118,
    1.9939433678, 1.9934635667, 1.9929971259, 1.9925434952, 1.9921021540,
    1.9916726096, 1.9912543954, 1.9908470688, 1.9904502102, 1.9900634213,
    1.9896863235, 1.9893185571, 1.9889597802, 1.9886096670, 1.9882679075,
    1.9879342062, 1.9876082816, 1.9872898648, 1.9869786995, 1.9866745407,
    1.9863771544, 1.9860863170, 1.9858018143, 1.9855234419, 1.9852510035,
    1.9849843115, 1.9847231860, 1.9844674544, 1.9842169515, 1.9839715184,
    1.9837310029, 1.9834952585, 1.9832641447, 1.9830375264, 1.9828152737,
    1.9825972617, 1.9823833701, 1.9821734833, 1.9819674897, 1.9817652821,
    1.9815667570, 1.9813718148, 1.9811803594, 1.9809922979, 1.9808075411,
    1.9806260024, 1.9804475986, 1.9802722492, 1.9800998764, 1.9799304051,
    1.9797637625, 1.9795998785, 1.9794386851, 1.9792801166, 1.9791241094,
    1.9789706020, 1.9788195347, 1.9786708498, 1.9785244915, 1.9783804054,
    1.9782385392, 1.9780988419, 1.9779612642, 1.9778257581, 1.9776922772,
    1.9775607765, 1.9774312123, 1.9773035420, 1.9771777245, 1.9770537196,
    1.9769314886, 1.9768109936, 1.9766921979, 1.9765750658, 1.9764595626,
    1.9763456546, 1.9762333089, 1.9761224936, 1.9760131777, 1.9759053309,
    1.9757989238, 1.9756939278, 1.9755903150, 1.9754880582, 1.9753871310,
    1.9752875077, 1.9751891631, 1.9750920727, 1.9749962128, 1.9749015600,
    1.9748080917, 1.9747157859, 1.9746246210, 1.9745345759, 1.9744456301,
    1.9743577637, 1.9742709570, 1.9741851911, 1.9741004474, 1.9740167076,
    1.9739339541, 1.9738521695, 1.9737713369, 1.9736914398, 1.9736124619,
    1.9735343877, 1.9734572016, 1.9733808885, 1.9733054338, 1.9732308231,
    1.9731570422, 1.9730840773, 1.9730119151, 1.9729405424, 1.9728699462,
    1.9728001140, 1.9727310334, 1.9726626924, 1.9725950791, 1.9725281820,
    1.9724619898, 1.9723964913, 1.9723316758, 1.9722675326, 1.9722040513,
    1.9721412217, 1.9720790338, 1.9720174778, 1.9719565442, 1.9718962236,];

const Z975: f64 = 1.959_963_984_540_054;

/// t(0.975, df). Tabulated for df ≤ 200; beyond that a Cornish–Fisher
/// expansion around the normal quantile (error < 1e-9 there).
pub fn t_critical_975(df: u32) -> f64 {
    assert!(df >= 1, "degrees of freedom must be positive");
    if df as usize <= T975.len() {
        return T975[df as usize - 1];
    }
    let z = Z975;
    let v = f64::from(df);
    let z2 = z * z;
    let g1 = (z2 + 1.0) * z / 4.0;
    let g2 = ((5.0 * z2 + 16.0) * z2 + 3.0) * z / 96.0;
    let g3 = (((3.0 * z2 + 19.0) * z2 + 17.0) * z2 - 15.0) * z / 384.0;
    let g4 = ((((79.0 * z2 + 776.0) * z2 + 1482.0) * z2 - 1920.0) * z2 - 945.0) * z / 92160.0;
    z + g1 / v + g2 / (v * v) + g3 / (v * v * v) + g4 / (v * v * v * v)
}

/// ā ± t(0.975, R−1)·s/√R.
pub fn t_interval(mean: f64, std_dev: f64, runs: usize) -> Result<(f64, f64), StatsError> {
    if runs < 2 {
        return Err(StatsError::TooFewRuns(runs));
    }
    let half = t_critical_975(runs as u32 - 1) * std_dev / (runs as f64).sqrt();
    Ok((mean - half, mean + half))
}

pub fn t_confidence_interval(runs: &[RunAccuracy], level: f64) -> Result<(f64, f64), StatsError> {
    if (level - 0.95).abs() > 1e-12 {
        return Err(StatsError::Level(level.to_string()));
    }
    let s = run_std_dev(runs)?;
    t_interval(mean_accuracy(runs)?, s, runs.len())
}

/// Full summary. Spread statistics are `None` for a single run.
pub fn summarize(runs: &[RunAccuracy]) -> Result<SuiteStatistics, StatsError> {
    let pooled = pooled_accuracy(runs)?;
    let mean = mean_accuracy(runs)?;
    let accs: Vec<f64> = runs.iter().map(RunAccuracy::accuracy).collect();
    let max = accs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = accs.iter().cloned().fold(f64::INFINITY, f64::min);
    let conversations: u64 = runs.iter().map(|r| r.total).sum();
    let time: f64 = runs.iter().map(|r| r.total_wall_time).sum();
    let tokens: u64 = runs.iter().map(|r| r.total_output_tokens).sum();
    let (std_dev, rse_v, ci) = if runs.len() >= 2 {
        let s = run_std_dev(runs)?;
        (Some(s), Some(rse(runs.len())?), Some(t_interval(mean, s, runs.len())?))
    } else {
        (None, None, None)
    };
    Ok(SuiteStatistics {
        runs: runs.len(),
        pooled_accuracy: pooled,
        mean_accuracy: mean,
        std_dev,
        rse: rse_v,
        t_ci_low: ci.map(|c| c.0),
        t_ci_high: ci.map(|c| c.1),
        range: max - min,
        avg_time_per_conversation: time / conversations as f64,
        avg_tokens_per_conversation: tokens as f64 / conversations as f64,
    })
}

/// Ratio as a one-decimal percentage: 0.26726 → "26.7%".
pub fn percent(x: f64) -> String {
    format!("{:.1}%", x * 100.0)
}

/// Correct counts by (run, question).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionMatrix {
    pub questions: Vec<u32>,
    /// (run id, correct count per question in `questions` order).
    pub rows: Vec<(u32, Vec<u32>)>,
    /// Cells with fewer scored samples than expected: (run, question, have, want).
    pub incomplete: Vec<(u32, u32, u32, u32)>,
}

/// Build the matrix from `(run_id, question_id, correct)` outcomes.
/// `samples` gives the expected sample count per question; `runs` the run
/// ids that should be present.
pub fn per_question_matrix(
    outcomes: impl IntoIterator<Item = (u32, u32, bool)>,
    samples: &BTreeMap<u32, u32>,
    runs: &[u32],
) -> QuestionMatrix {
    let mut seen: BTreeMap<(u32, u32), (u32, u32)> = BTreeMap::new();
    for (run, q, ok) in outcomes {
        let e = seen.entry((run, q)).or_insert((0, 0));
        e.0 += 1;
        e.1 += u32::from(ok);
    }
    let questions: Vec<u32> = samples.keys().copied().collect();
    let mut rows = Vec::new();
    let mut incomplete = Vec::new();
    for &run in runs {
        let mut cells = Vec::with_capacity(questions.len());
        for &q in &questions {
            let (have, correct) = seen.get(&(run, q)).copied().unwrap_or((0, 0));
            if have < samples[&q] {
                incomplete.push((run, q, have, samples[&q]));
            }
            cells.push(correct);
        }
        rows.push((run, cells));
    }
    QuestionMatrix { questions, rows, incomplete }
}
