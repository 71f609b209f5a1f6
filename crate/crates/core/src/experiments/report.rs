use std::io::Write;

use serde::{Deserialize, Serialize};

use super::{mean_std, CvResult, Grouping, Result};

pub const REPORT_HEADER: [&str; 9] = [
    "model",
    "variable",
    "value",
    "fold",
    "accuracy",
    "f1",
    "n_samples",
    "grouping",
    "seed",
];

/// One (model, sweep cell) cross-validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub model: String,
    /// `T_s` or `n`.
    pub variable: String,
    pub value: usize,
    pub grouping: Grouping,
    pub seed: u64,
    pub cv: CvResult,
}

impl ReportRow {
    pub fn column(&self) -> String {
        format!("{}={}", self.variable, self.value)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct SweepReport {
    pub rows: Vec<ReportRow>,
}

impl SweepReport {
    /// One line per fold.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(REPORT_HEADER)?;
        for row in &self.rows {
            for f in &row.cv.folds {
                w.write_record([
                    row.model.clone(),
                    row.variable.clone(),
                    row.value.to_string(),
                    f.fold.to_string(),
                    f.accuracy.to_string(),
                    f.f1.to_string(),
                    row.cv.n_samples.to_string(),
                    row.grouping.to_string(),
                    row.seed.to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    /// Models as rows, sweep cells as columns, `mean±std` cells to three
    /// decimals.
    pub fn write_aggregate_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut columns: Vec<String> = Vec::new();
        let mut models: Vec<&str> = Vec::new();
        for row in &self.rows {
            let c = row.column();
            if !columns.contains(&c) {
                columns.push(c);
            }
            if !models.contains(&row.model.as_str()) {
                models.push(&row.model);
            }
        }
        let mut w = csv::Writer::from_writer(out);
        w.write_record(std::iter::once("model".to_string()).chain(columns.iter().cloned()))?;
        for model in models {
            let mut record = vec![model.to_string()];
            for c in &columns {
                let cell = self
                    .rows
                    .iter()
                    .find(|r| r.model == model && &r.column() == c)
                    .map(|r| {
                        let acc: Vec<f64> = r.cv.folds.iter().map(|f| f.accuracy).collect();
                        let (m, s) = mean_std(&acc);
                        format!("{m:.3}±{s:.3}")
                    })
                    .unwrap_or_default();
                record.push(cell);
            }
            w.write_record(&record)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }

    pub fn to_aggregate_string(&self) -> Result<String> {
        let mut buf = Vec::new();
        self.write_aggregate_csv(&mut buf)?;
        Ok(String::from_utf8(buf).expect("csv output is utf-8"))
    }
}
