//! Per-step run log, CSV export/import and the run summary.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};

use super::SimError;
use crate::controllers::ControllerKind;
use crate::pcc::{energy, TrajectorySample};

pub const LOG_HEADER: [&str; 14] = [
    "t", "s", "v", "h_r", "v1_r", "h_c", "v1_c", "u_acc", "u_ccc", "u_pcc", "u", "active", "u_dr", "w",
];

/// One logged control step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepRecord {
    pub t: f64,
    pub s: f64,
    pub v: f64,
    pub h_r: Option<f64>,
    pub v1_r: Option<f64>,
    pub h_c: Option<f64>,
    pub v1_c: Option<f64>,
    pub u_acc: Option<f64>,
    pub u_ccc: Option<f64>,
    pub u_pcc: Option<f64>,
    /// Safety-filter output before actuator saturation.
    pub u: f64,
    pub active: ControllerKind,
    pub u_dr: f64,
    /// Cumulative drive work [J/kg].
    pub w: f64,
    /// Realized acceleration; not part of the CSV.
    pub v_dot: Option<f64>,
    /// Road grade at `s`; not part of the CSV.
    pub phi: Option<f64>,
}

impl StepRecord {
    fn fields(&self) -> [String; 14] {
        let opt = |x: Option<f64>| x.map(|v| v.to_string()).unwrap_or_default();
        [
            self.t.to_string(),
            self.s.to_string(),
            self.v.to_string(),
            opt(self.h_r),
            opt(self.v1_r),
            opt(self.h_c),
            opt(self.v1_c),
            opt(self.u_acc),
            opt(self.u_ccc),
            opt(self.u_pcc),
            self.u.to_string(),
            self.active.to_string(),
            self.u_dr.to_string(),
            self.w.to_string(),
        ]
    }

    /// Filtered command for each enabled controller, in filter order.
    pub fn candidates(&self) -> impl Iterator<Item = (ControllerKind, f64)> {
        [
            (ControllerKind::Acc, self.u_acc),
            (ControllerKind::Ccc, self.u_ccc),
            (ControllerKind::Pcc, self.u_pcc),
        ]
        .into_iter()
        .filter_map(|(k, u)| u.map(|u| (k, u)))
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    pub records: Vec<StepRecord>,
    /// Smallest true gap to any leader [m].
    pub min_gap: Option<f64>,
    pub collision: bool,
    /// Whether the ego reached the end of the road.
    pub finished: bool,
}

impl RunLog {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SimError> {
        let mut wtr = csv::Writer::from_writer(writer);
        wtr.write_record(LOG_HEADER)?;
        for rec in &self.records {
            wtr.write_record(rec.fields())?;
        }
        wtr.flush()?;
        Ok(())
    }

    /// Reads a log written by [`RunLog::write_csv`]. Only the measured
    /// headways are available, so the minimum gap is taken from them.
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SimError> {
        let mut rdr = csv::Reader::from_reader(reader);
        let header = rdr.headers()?.clone();
        if header.iter().ne(LOG_HEADER.iter().copied()) {
            return Err(SimError::Config(format!(
                "unexpected log header {:?}",
                header.iter().collect::<Vec<_>>()
            )));
        }
        let mut records = Vec::new();
        for (idx, row) in rdr.records().enumerate() {
            let row = row?;
            let line = idx + 2;
            let num = |i: usize| -> Result<f64, SimError> {
                row[i]
                    .trim()
                    .parse()
                    .map_err(|_| SimError::Config(format!("line {line}: bad {} value {:?}", LOG_HEADER[i], &row[i])))
            };
            let opt = |i: usize| -> Result<Option<f64>, SimError> {
                if row[i].trim().is_empty() {
                    Ok(None)
                } else {
                    num(i).map(Some)
                }
            };
            let active = row[11]
                .parse()
                .map_err(|e: String| SimError::Config(format!("line {line}: {e}")))?;
            records.push(StepRecord {
                t: num(0)?,
                s: num(1)?,
                v: num(2)?,
                h_r: opt(3)?,
                v1_r: opt(4)?,
                h_c: opt(5)?,
                v1_c: opt(6)?,
                u_acc: opt(7)?,
                u_ccc: opt(8)?,
                u_pcc: opt(9)?,
                u: num(10)?,
                active,
                u_dr: num(12)?,
                w: num(13)?,
                v_dot: None,
                phi: None,
            });
        }
        let min_gap = records
            .iter()
            .flat_map(|r| [r.h_r, r.h_c])
            .flatten()
            .min_by(f64::total_cmp);
        Ok(Self {
            collision: min_gap.is_some_and(|h| h <= 0.0),
            min_gap,
            finished: true,
            records,
        })
    }

    pub fn final_energy(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.w)
    }

    pub fn finish_time(&self) -> f64 {
        self.records.last().map_or(0.0, |r| r.t)
    }

    /// Number of changes of the active controller.
    pub fn switch_count(&self) -> usize {
        self.records.windows(2).filter(|w| w[0].active != w[1].active).count()
    }

    pub fn trajectory(&self) -> Vec<TrajectorySample> {
        self.records
            .iter()
            .map(|r| TrajectorySample { t: r.t, v: r.v, u_dr: r.u_dr })
            .collect()
    }

    /// Drive work recomputed from the logged `(t, v, u_dr)` columns.
    pub fn recomputed_energy(&self) -> Result<f64, SimError> {
        Ok(energy(&self.trajectory())?.last().copied().unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(rename = "final_energy_J_per_kg")]
    pub final_energy: f64,
    /// `None` when the run had no leader.
    #[serde(rename = "min_headway_m")]
    pub min_headway: Option<f64>,
    #[serde(rename = "finish_time_s")]
    pub finish_time: f64,
    pub switch_count: usize,
    pub collision: bool,
    #[serde(rename = "saving_vs_baseline_pct", skip_serializing_if = "Option::is_none", default)]
    pub saving_pct: Option<f64>,
}

/// Relative saving of `w` against `w_base` in percent.
pub fn saving_pct(w: f64, w_base: f64) -> Option<f64> {
    (w_base > 0.0).then(|| 100.0 * (w_base - w) / w_base)
}

pub fn summarize(log: &RunLog, baseline: Option<&RunLog>) -> RunSummary {
    let final_energy = log.final_energy();
    RunSummary {
        final_energy,
        min_headway: log.min_gap,
        finish_time: log.finish_time(),
        switch_count: log.switch_count(),
        collision: log.collision,
        saving_pct: baseline.and_then(|b| saving_pct(final_energy, b.final_energy())),
    }
}
