//! CSV and aligned-text renderings of a grid report.
//!
//! | file | rows | columns |
//! |------|------|---------|
//! | `table3_cosine` | transfer framework × train languages × test language | initial/final mean cosine |
//! | `table4_accuracy` | framework × train languages × test language (full data) | accuracy % |
//! | `table5_fractions` | framework × train languages × fraction | combined accuracy % |
//! | `table6_combined` | framework, trained on every language × test language | accuracy % |
//!
//! Values are means over replicate seeds; `sd` is the sample standard
//! deviation (0 for a single seed).

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};

use super::grid::{CellResult, GridReport};

pub const COMBINED: &str = "combined";

#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct MeanSd {
    pub mean: f64,
    pub sd: f64,
    pub n: usize,
}

impl MeanSd {
    pub fn of(values: &[f64]) -> Option<MeanSd> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let sd = if n > 1 {
            (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Some(MeanSd { mean, sd, n })
    }

    fn text(&self, digits: usize) -> String {
        if self.n > 1 {
            format!("{:.*} ± {:.*}", digits, self.mean, digits, self.sd)
        } else {
            format!("{:.*}", digits, self.mean)
        }
    }
}

fn accuracy_on(cell: &CellResult, test: &str) -> Option<f64> {
    if test == COMBINED {
        Some(cell.accuracy.combined)
    } else {
        cell.accuracy.per_language.get(test).copied()
    }
}

fn cosine_on(stats: &Option<super::evaluate::CosineStats>, test: &str) -> Option<f64> {
    let s = stats.as_ref()?;
    if test == COMBINED {
        Some(s.combined)
    } else {
        s.per_language.get(test).copied()
    }
}

impl GridReport {
    /// Test columns: every test language, then `combined`.
    pub fn test_columns(&self) -> Vec<String> {
        let mut cols = self.test_languages.clone();
        cols.push(COMBINED.into());
        cols
    }

    fn rows(&self) -> Vec<(String, String)> {
        let mut rows = Vec::new();
        for fw in &self.spec.frameworks {
            for tl in &self.spec.train_languages {
                rows.push((fw.clone(), tl.clone()));
            }
        }
        rows
    }

    fn select(&self, fw: &str, tl: &str, fraction: f64) -> Vec<&CellResult> {
        self.cells
            .iter()
            .filter(|c| {
                c.cell.framework == fw && c.cell.train_languages.label == tl && c.cell.fraction == fraction
            })
            .collect()
    }

    /// Mean accuracy over replicates for one cell group and test column.
    pub fn accuracy(&self, fw: &str, tl: &str, fraction: f64, test: &str) -> Option<MeanSd> {
        let v: Vec<f64> = self
            .select(fw, tl, fraction)
            .iter()
            .filter_map(|c| accuracy_on(c, test))
            .collect();
        MeanSd::of(&v)
    }

    /// Mean (initial, final) cosine over replicates.
    pub fn cosine(&self, fw: &str, tl: &str, test: &str) -> Option<(MeanSd, MeanSd)> {
        let cells = self.select(fw, tl, 1.0);
        let init: Vec<f64> = cells.iter().filter_map(|c| cosine_on(&c.cosine_initial, test)).collect();
        let fin: Vec<f64> = cells.iter().filter_map(|c| cosine_on(&c.cosine_final, test)).collect();
        Some((MeanSd::of(&init)?, MeanSd::of(&fin)?))
    }

    /// The train-language label covering every corpus language, if run.
    fn all_language_label(&self) -> Option<&str> {
        self.cells
            .iter()
            .find(|c| {
                let mut tags = c.cell.train_languages.tags.clone();
                tags.sort();
                let mut all = self.test_languages.clone();
                all.sort();
                tags == all
            })
            .map(|c| c.cell.train_languages.label.as_str())
    }

    pub fn table3_cosine(&self) -> (String, String) {
        let cols = self.test_columns();
        let mut csv = String::from("framework,train_languages,test_language,initial_mean,initial_sd,final_mean,final_sd,n\n");
        let mut head = vec!["framework".to_string(), "train".to_string()];
        head.extend(cols.iter().map(|c| format!("{c} (initial → final)")));
        let mut body = Vec::new();
        for (fw, tl) in self.rows() {
            let mut row = vec![fw.clone(), tl.clone()];
            let mut any = false;
            for col in &cols {
                match self.cosine(&fw, &tl, col) {
                    Some((i, f)) => {
                        any = true;
                        let _ = writeln!(csv, "{fw},{tl},{col},{},{},{},{},{}", i.mean, i.sd, f.mean, f.sd, f.n);
                        row.push(format!("{} → {}", i.text(4), f.text(4)));
                    }
                    None => row.push("-".into()),
                }
            }
            if any {
                body.push(row);
            }
        }
        (csv, render("Mean cosine(E_TE, E_lang) on the test set", &head, &body))
    }

    fn accuracy_table(&self, title: &str, rows: &[(String, String)]) -> (String, String) {
        let cols = self.test_columns();
        let mut csv = String::from("framework,train_languages,test_language,mean,sd,n\n");
        let mut head = vec!["framework".to_string(), "train".to_string()];
        head.extend(cols.iter().cloned());
        let mut body = Vec::new();
        for (fw, tl) in rows {
            let mut row = vec![fw.clone(), tl.clone()];
            for col in &cols {
                match self.accuracy(fw, tl, 1.0, col) {
                    Some(m) => {
                        let _ = writeln!(csv, "{fw},{tl},{col},{},{},{}", m.mean, m.sd, m.n);
                        row.push(m.text(2));
                    }
                    None => row.push("-".into()),
                }
            }
            body.push(row);
        }
        (csv, render(title, &head, &body))
    }

    pub fn table4_accuracy(&self) -> (String, String) {
        self.accuracy_table("Intent accuracy (%) by train and test language", &self.rows())
    }

    pub fn table6_combined(&self) -> (String, String) {
        let rows: Vec<(String, String)> = match self.all_language_label() {
            Some(label) => self
                .spec
                .frameworks
                .iter()
                .map(|fw| (fw.clone(), label.to_string()))
                .collect(),
            None => Vec::new(),
        };
        self.accuracy_table("Intent accuracy (%) trained on all languages", &rows)
    }

    pub fn table5_fractions(&self) -> (String, String) {
        let fractions = self.spec.fractions_with_full();
        let mut csv = String::from("framework,train_languages,fraction,mean,sd,n\n");
        let mut head = vec!["framework".to_string(), "train".to_string()];
        head.extend(fractions.iter().map(|f| format!("{}%", f * 100.0)));
        let mut body = Vec::new();
        for (fw, tl) in self.rows() {
            let mut row = vec![fw.clone(), tl.clone()];
            for &f in &fractions {
                match self.accuracy(&fw, &tl, f, COMBINED) {
                    Some(m) => {
                        let _ = writeln!(csv, "{fw},{tl},{f},{},{},{}", m.mean, m.sd, m.n);
                        row.push(m.text(2));
                    }
                    None => row.push("-".into()),
                }
            }
            body.push(row);
        }
        (csv, render("Combined accuracy (%) by training fraction", &head, &body))
    }

    pub fn cells_csv(&self) -> String {
        let mut out = String::from("cell,framework,train_languages,fraction,replicate,seed,train_examples");
        for c in self.test_columns() {
            let _ = write!(out, ",acc_{c}");
        }
        out.push('\n');
        for c in &self.cells {
            let s = &c.cell;
            let _ = write!(
                out,
                "{},{},{},{},{},{},{}",
                s.id, s.framework, s.train_languages.label, s.fraction, s.replicate, s.seed, c.train_examples
            );
            for col in self.test_columns() {
                match accuracy_on(c, &col) {
                    Some(v) => {
                        let _ = write!(out, ",{v}");
                    }
                    None => out.push(','),
                }
            }
            out.push('\n');
        }
        out
    }

    pub fn loss_history_csv(&self) -> String {
        let mut out = String::from("cell,epoch,total,distillation,intent\n");
        for c in &self.cells {
            for h in &c.history {
                let _ = writeln!(out, "{},{},{},{},{}", c.cell.id, h.epoch, h.total, h.distillation, h.intent);
            }
        }
        out
    }

    /// Writes every report file into `dir`. Timing goes to its own file so
    /// the rest is reproducible byte-for-byte.
    pub fn write(&self, dir: &Path, runtime_secs: Option<f64>) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, text: &str| -> Result<()> {
            let path = dir.join(name);
            fs::write(&path, text).map_err(|e| Error::io(&path, e))
        };
        for (name, (csv, txt)) in [
            ("table3_cosine", self.table3_cosine()),
            ("table4_accuracy", self.table4_accuracy()),
            ("table5_fractions", self.table5_fractions()),
            ("table6_combined", self.table6_combined()),
        ] {
            put(&format!("{name}.csv"), &csv)?;
            put(&format!("{name}.txt"), &txt)?;
        }
        put("cells.csv", &self.cells_csv())?;
        put("loss_history.csv", &self.loss_history_csv())?;
        put("report.json", &(serde_json::to_string_pretty(self)? + "\n"))?;
        if let Some(secs) = runtime_secs {
            put("timing.json", &format!("{{\"runtime_secs\": {secs}}}\n"))?;
        }
        Ok(())
    }
}

/// Left-aligned text table with a title line.
pub fn render(title: &str, head: &[String], body: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = head.iter().map(|h| h.chars().count()).collect();
    for row in body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, &w)| format!("{c:<w$}"))
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut out = format!("{title}\n");
    out += &line(head);
    out += &(widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("  ") + "\n");
    for row in body {
        out += &line(row);
    }
    out
}
