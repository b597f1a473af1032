use serde::Serialize;

use super::scenario::HoldPhase;
use super::trace::ScenarioTrace;

/// Ticks before this time are excluded from the slack fraction, s.
pub const SLACK_TRANSIENT: f64 = 0.5;
/// Slack threshold as a fraction of T_bias.
pub const SLACK_FRACTION_OF_BIAS: f64 = 0.1;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HoldMetrics {
    pub start: f64,
    pub end: f64,
    pub target_deg: Vec<f64>,
    /// Mean |θ − θ_target| over the settled window, deg.
    pub settle_error_deg: f64,
    /// kgf.
    pub co_contraction: f64,
    /// Largest realized tension of a muscle flagged antagonist in the settled window, kgf.
    pub max_antagonist_tension: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// kgf.
    pub max_tension: f64,
    /// One per hold phase, deg.
    pub settle_errors_deg: Vec<f64>,
    pub slack_fraction: f64,
    /// Mean over settled ticks of the largest pair co-contraction, kgf.
    pub co_contraction_index: f64,
    /// °C.
    pub peak_temperature: f64,
    pub max_settled_antagonist_tension: Option<f64>,
    pub holds: Vec<HoldMetrics>,
}

/// Co-contraction of one pair: the smaller excess above bias, floored at 0.
fn pair_excess(tensions: &[f64], pair: (usize, usize), t_bias: f64) -> f64 {
    (tensions[pair.0] - t_bias).min(tensions[pair.1] - t_bias).max(0.0)
}

fn tick_co_contraction(trace: &ScenarioTrace, row: usize, t_bias: f64) -> f64 {
    let t = trace.rows[row].tensions.as_slice();
    trace
        .pairs
        .iter()
        .map(|&p| pair_excess(t, p, t_bias))
        .fold(0.0, f64::max)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

pub fn compute_metrics(trace: &ScenarioTrace, holds: &[HoldPhase], t_bias: f64) -> Metrics {
    let rows = &trace.rows;
    let max_tension = rows
        .iter()
        .flat_map(|r| r.tensions.iter().copied())
        .fold(0.0, f64::max);
    let peak_temperature = rows
        .iter()
        .flat_map(|r| r.temperatures.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max);

    let after: Vec<_> = rows.iter().filter(|r| r.time >= SLACK_TRANSIENT).collect();
    let slack = after
        .iter()
        .filter(|r| r.tensions.iter().any(|t| *t < SLACK_FRACTION_OF_BIAS * t_bias))
        .count();
    let slack_fraction = if after.is_empty() {
        0.0
    } else {
        slack as f64 / after.len() as f64
    };

    let mut settled_all = Vec::new();
    let mut hold_metrics = Vec::new();
    for h in holds {
        let (from, to) = h.settled_window();
        let idx: Vec<usize> = (0..rows.len())
            .filter(|&i| rows[i].time >= from && rows[i].time < to)
            .collect();
        let settle = mean(idx.iter().map(|&i| (&rows[i].theta - &h.target.0).norm().to_degrees()));
        let cc = mean(idx.iter().map(|&i| tick_co_contraction(trace, i, t_bias)));
        let antagonist = idx
            .iter()
            .flat_map(|&i| {
                let r = &rows[i];
                (0..r.tensions.len()).filter(move |&m| !r.agonist[m]).map(move |m| r.tensions[m])
            })
            .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));
        hold_metrics.push(HoldMetrics {
            start: h.start,
            end: h.end,
            target_deg: h.target.iter().map(|t| t.to_degrees()).collect(),
            settle_error_deg: settle,
            co_contraction: cc,
            max_antagonist_tension: antagonist,
        });
        settled_all.extend(idx);
    }
    let co_contraction_index = mean(settled_all.iter().map(|&i| tick_co_contraction(trace, i, t_bias)));
    let max_settled_antagonist_tension = hold_metrics
        .iter()
        .filter_map(|h| h.max_antagonist_tension)
        .fold(None, |acc: Option<f64>, t| Some(acc.map_or(t, |a| a.max(t))));

    Metrics {
        max_tension,
        settle_errors_deg: hold_metrics.iter().map(|h| h.settle_error_deg).collect(),
        slack_fraction,
        co_contraction_index,
        peak_temperature,
        max_settled_antagonist_tension,
        holds: hold_metrics,
    }
}
