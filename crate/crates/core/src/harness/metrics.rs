//! Per-round metrics rows and their CSV encoding.
//!
//! Per-client columns hold one value per client joined by `;`. Floats use
//! the shortest representation that parses back to the same bits, so two
//! runs agree byte-for-byte exactly when their values agree bit-for-bit.

use std::fmt::Write as _;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coordinator::RoundRecord;
use crate::error::{Error, Result};

/// Column names, in order.
pub const METRICS_HEADER: &str = "round,cut,k,p,s,t_stage1,t_stage2,t_stage3,t_total,e_total,\
g_obj_verbatim,g_obj_consistent,queues,participation,bcd_iters,train_loss,train_accuracy";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub round: usize,
    pub cut: usize,
    pub k: Vec<usize>,
    pub p: Vec<f64>,
    pub s: Vec<f64>,
    pub t_stage1: f64,
    pub t_stage2: f64,
    pub t_stage3: f64,
    pub t_total: f64,
    pub e_total: Vec<f64>,
    pub g_obj_verbatim: f64,
    pub g_obj_consistent: f64,
    /// `Q_0..Q_N` after the round.
    pub queues: Vec<f64>,
    pub participation: Vec<bool>,
    pub bcd_iters: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
}

impl From<&RoundRecord> for MetricsRow {
    fn from(r: &RoundRecord) -> Self {
        MetricsRow {
            round: r.round,
            cut: r.decisions.cut,
            k: r.decisions.rb_counts.clone(),
            p: r.decisions.tx_powers.clone(),
            s: r.costs.s.clone(),
            t_stage1: r.costs.t_stage1_s,
            t_stage2: r.costs.t_stage2_s,
            t_stage3: r.costs.t_stage3_expected_s,
            t_total: r.costs.t_total_expected_s,
            e_total: r.costs.e_total_expected_j.clone(),
            g_obj_verbatim: r.g_obj_verbatim,
            g_obj_consistent: r.g_obj_consistent,
            queues: r.queues.clone(),
            participation: r.participation.clone(),
            bcd_iters: r.bcd_iters,
            train_loss: r.train_loss,
            train_accuracy: r.train_accuracy,
        }
    }
}

fn join<T: std::fmt::Display>(out: &mut String, items: &[T]) {
    for (i, x) in items.iter().enumerate() {
        if i > 0 {
            out.push(';');
        }
        let _ = write!(out, "{x}");
    }
}

impl MetricsRow {
    pub fn all_finite(&self) -> bool {
        let scalars = [
            self.t_stage1,
            self.t_stage2,
            self.t_stage3,
            self.t_total,
            self.g_obj_verbatim,
            self.g_obj_consistent,
            self.train_loss,
            self.train_accuracy,
        ];
        scalars
            .iter()
            .chain(&self.p)
            .chain(&self.s)
            .chain(&self.e_total)
            .chain(&self.queues)
            .all(|v| v.is_finite())
    }

    /// The row as one CSV line without the trailing newline.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "{},{},", self.round, self.cut);
        join(&mut out, &self.k);
        out.push(',');
        join(&mut out, &self.p);
        out.push(',');
        join(&mut out, &self.s);
        let _ = write!(
            out,
            ",{},{},{},{},",
            self.t_stage1, self.t_stage2, self.t_stage3, self.t_total
        );
        join(&mut out, &self.e_total);
        let _ = write!(out, ",{},{},", self.g_obj_verbatim, self.g_obj_consistent);
        join(&mut out, &self.queues);
        out.push(',');
        let bits: Vec<u8> = self.participation.iter().map(|&b| b as u8).collect();
        join(&mut out, &bits);
        let _ = write!(out, ",{},{},{}", self.bcd_iters, self.train_loss, self.train_accuracy);
        out
    }

    /// Parses a line written by [`MetricsRow::to_csv`].
    pub fn from_csv(line: &str) -> Result<Self> {
        let bad = |what: &str| Error::ConfigParse(format!("metrics row: bad {what} in `{line}`"));
        let cols: Vec<&str> = line.trim_end().split(',').collect();
        if cols.len() != METRICS_HEADER.split(',').count() {
            return Err(bad("column count"));
        }
        fn list<T: std::str::FromStr>(s: &str) -> Option<Vec<T>> {
            if s.is_empty() {
                return Some(Vec::new());
            }
            s.split(';').map(|x| x.parse().ok()).collect()
        }
        let f = |i: usize, name: &str| cols[i].parse::<f64>().map_err(|_| bad(name));
        Ok(MetricsRow {
            round: cols[0].parse().map_err(|_| bad("round"))?,
            cut: cols[1].parse().map_err(|_| bad("cut"))?,
            k: list(cols[2]).ok_or_else(|| bad("k"))?,
            p: list(cols[3]).ok_or_else(|| bad("p"))?,
            s: list(cols[4]).ok_or_else(|| bad("s"))?,
            t_stage1: f(5, "t_stage1")?,
            t_stage2: f(6, "t_stage2")?,
            t_stage3: f(7, "t_stage3")?,
            t_total: f(8, "t_total")?,
            e_total: list(cols[9]).ok_or_else(|| bad("e_total"))?,
            g_obj_verbatim: f(10, "g_obj_verbatim")?,
            g_obj_consistent: f(11, "g_obj_consistent")?,
            queues: list(cols[12]).ok_or_else(|| bad("queues"))?,
            participation: list::<u8>(cols[13])
                .ok_or_else(|| bad("participation"))?
                .into_iter()
                .map(|b| b == 1)
                .collect(),
            bcd_iters: cols[14].parse().map_err(|_| bad("bcd_iters"))?,
            train_loss: f(15, "train_loss")?,
            train_accuracy: f(16, "train_accuracy")?,
        })
    }
}

/// Streams rows to a CSV file, header first.
pub struct MetricsWriter {
    out: BufWriter<File>,
    path: String,
}

impl MetricsWriter {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = MetricsWriter {
            out: BufWriter::new(file),
            path: path.display().to_string(),
        };
        w.line(METRICS_HEADER)?;
        Ok(w)
    }

    fn line(&mut self, text: &str) -> Result<()> {
        writeln!(self.out, "{text}").map_err(|e| Error::io(&self.path, e))
    }

    pub fn write(&mut self, row: &MetricsRow) -> Result<()> {
        self.line(&row.to_csv())
    }

    pub fn finish(mut self) -> Result<()> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))
    }
}

/// Reads every row of a metrics file, checking the header.
pub fn read_metrics(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    if lines.next() != Some(METRICS_HEADER) {
        return Err(Error::ConfigParse(format!("{}: unexpected metrics header", path.display())));
    }
    lines.map(MetricsRow::from_csv).collect()
}
