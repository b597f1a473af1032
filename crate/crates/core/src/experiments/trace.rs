//! Per-tick trace rows and their CSV form.
//!
//! Column order: `time_s`, then per joint `theta_deg.<joint>`,
//! `theta_hat_deg.<joint>`, `target_deg.<joint>`, then per muscle
//! `command_kgf.<m>`, `tension_kgf.<m>`, `length_mm.<m>`, `target_length_mm.<m>`,
//! `stiffness_kgf_per_mm.<m>`, `agonist.<m>` (0/1), `s.<m>` (m/rad for JAIC,
//! m for MAIC), `temperature_c.<m>`, then `pair_state.<a>/<b>` per registered
//! pair. Floats are written with 9 significant digits.

use std::io::Write;
use std::path::Path;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::model::MusculoskeletalModel;

#[derive(Clone, Debug, PartialEq)]
pub struct TraceRow {
    /// s.
    pub time: f64,
    /// rad.
    pub theta: DVector<f64>,
    /// rad/s.
    pub theta_dot: DVector<f64>,
    /// rad.
    pub theta_hat: DVector<f64>,
    /// rad.
    pub theta_target: DVector<f64>,
    /// kgf.
    pub commands: DVector<f64>,
    /// Realized, kgf.
    pub tensions: DVector<f64>,
    /// Measured, m.
    pub lengths: DVector<f64>,
    /// m.
    pub target_lengths: DVector<f64>,
    /// kgf/mm.
    pub stiffness: DVector<f64>,
    pub agonist: Vec<bool>,
    pub s: DVector<f64>,
    /// °C.
    pub temperatures: DVector<f64>,
    pub pair_states: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScenarioTrace {
    pub joints: Vec<String>,
    pub muscles: Vec<String>,
    pub pairs: Vec<(usize, usize)>,
    pub rows: Vec<TraceRow>,
}

impl ScenarioTrace {
    pub fn new(model: &MusculoskeletalModel) -> Self {
        Self {
            joints: model.tree().joints().iter().map(|j| j.name.clone()).collect(),
            muscles: model.muscles().iter().map(|m| m.name.clone()).collect(),
            pairs: model.pairs().to_vec(),
            rows: Vec::new(),
        }
    }

    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["time_s".to_string()];
        for prefix in ["theta_deg", "theta_hat_deg", "target_deg"] {
            h.extend(self.joints.iter().map(|j| format!("{prefix}.{j}")));
        }
        for prefix in [
            "command_kgf",
            "tension_kgf",
            "length_mm",
            "target_length_mm",
            "stiffness_kgf_per_mm",
            "agonist",
            "s",
            "temperature_c",
        ] {
            h.extend(self.muscles.iter().map(|m| format!("{prefix}.{m}")));
        }
        h.extend(
            self.pairs
                .iter()
                .map(|&(a, b)| format!("pair_state.{}/{}", self.muscles[a], self.muscles[b])),
        );
        h
    }

    fn record(row: &TraceRow) -> Vec<String> {
        let f = |v: f64| format!("{v:.8e}");
        let mut r = vec![f(row.time)];
        for v in [&row.theta, &row.theta_hat, &row.theta_target] {
            r.extend(v.iter().map(|x| f(x.to_degrees())));
        }
        r.extend(row.commands.iter().map(|x| f(*x)));
        r.extend(row.tensions.iter().map(|x| f(*x)));
        r.extend(row.lengths.iter().map(|x| f(x * 1e3)));
        r.extend(row.target_lengths.iter().map(|x| f(x * 1e3)));
        r.extend(row.stiffness.iter().map(|x| f(*x)));
        r.extend(row.agonist.iter().map(|a| if *a { "1" } else { "0" }.to_string()));
        r.extend(row.s.iter().map(|x| f(*x)));
        r.extend(row.temperatures.iter().map(|x| f(*x)));
        r.extend(row.pair_states.iter().map(|p| p.to_string()));
        r
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        self.write_rows(out, &self.rows)
    }

    fn write_rows<W: Write>(&self, out: W, rows: &[TraceRow]) -> Result<()> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
        w.write_record(self.header())?;
        for row in rows {
            w.write_record(Self::record(row))?;
        }
        w.flush().map_err(|e| Error::io("<trace>", e))?;
        Ok(())
    }

    /// The last `n` rows as CSV text, for divergence reports.
    pub fn tail_csv(&self, n: usize) -> String {
        let start = self.rows.len().saturating_sub(n);
        let mut buf = Vec::new();
        match self.write_rows(&mut buf, &self.rows[start..]) {
            Ok(()) => String::from_utf8_lossy(&buf).into_owned(),
            Err(e) => format!("<trace dump failed: {e}>"),
        }
    }
}

/// Writes the trace as CSV to `path`.
pub fn export_trace(trace: &ScenarioTrace, path: &Path) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut out = std::io::BufWriter::new(file);
    trace.write_csv(&mut out)?;
    out.flush().map_err(|e| Error::io(path, e))
}
