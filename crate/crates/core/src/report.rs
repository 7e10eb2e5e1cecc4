//! Cohort aggregation of sweep rows and the text/CSV/JSON report formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::SweepRow;
use crate::volume::{PatientMeta, Plane};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Summary {
    pub fn of(values: &[f64]) -> Option<Summary> {
        let ms = crate::metrics::mean_std(values)?;
        let min = values.iter().copied().fold(f64::INFINITY, f64::min);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        Some(Summary {
            n: values.len(),
            mean: ms.mean,
            std: ms.std,
            min,
            max,
        })
    }

    /// `mean ± std (min - max)` with two decimals.
    pub fn table_cell(&self) -> String {
        format!("{:.2} ± {:.2} ({:.2} - {:.2})", self.mean, self.std, self.min, self.max)
    }
}

/// Cohort subset a statistic is computed over: `overall`, a T stage label
/// such as `T2`, or an N stage label such as `N2b`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(tag = "kind", content = "label", rename_all = "lowercase")]
pub enum Group {
    Overall,
    T(String),
    N(String),
}

impl Group {
    pub fn name(&self) -> String {
        match self {
            Group::Overall => "overall".into(),
            Group::T(l) | Group::N(l) => l.clone(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Group::Overall => "overall",
            Group::T(_) => "t_stage",
            Group::N(_) => "n_stage",
        }
    }

    fn of(meta: &PatientMeta) -> [Group; 3] {
        [
            Group::Overall,
            Group::T(meta.t_stage.label().into()),
            Group::N(meta.n_stage.label().into()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortEntry {
    pub group: Group,
    pub plane: Plane,
    pub th: f64,
    pub patients: Vec<String>,
    pub dsc: Summary,
    pub precision: Summary,
    pub recall: Summary,
    pub tumor_mm3: Summary,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub group: Group,
    pub plane: Plane,
    pub th: f64,
    pub n: usize,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub mean: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScatterPoint {
    pub patient: String,
    pub plane: Plane,
    pub th: f64,
    pub precision: f64,
    pub recall: f64,
    pub tumor_mm3: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub entries: Vec<CohortEntry>,
    pub boxplot: Vec<BoxStats>,
    pub scatter: Vec<ScatterPoint>,
}

/// Linearly interpolated sample quantile (the common "type 7" definition).
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty());
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

fn box_stats(group: Group, plane: Plane, th: f64, values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inliers: Vec<f64> = v.iter().copied().filter(|x| (lo_fence..=hi_fence).contains(x)).collect();
    BoxStats {
        group,
        plane,
        th,
        n: v.len(),
        q1,
        median,
        q3,
        whisker_low: inliers.first().copied().unwrap_or(q1),
        whisker_high: inliers.last().copied().unwrap_or(q3),
        outliers: v.iter().copied().filter(|x| !(lo_fence..=hi_fence).contains(x)).collect(),
        mean: v.iter().sum::<f64>() / v.len() as f64,
    }
}

/// Thresholds are grouped by their value printed to 6 decimals so rows
/// read back from CSV land in the same bucket.
fn th_key(th: f64) -> i64 {
    (th * 1e6).round() as i64
}

pub fn cohort_report(rows: &[SweepRow], meta: &BTreeMap<String, PatientMeta>) -> Result<CohortReport> {
    if rows.is_empty() {
        return Err(Error::Empty("no sweep rows to aggregate".into()));
    }
    let mut buckets: BTreeMap<(Group, Plane, i64), Vec<&SweepRow>> = BTreeMap::new();
    for row in rows {
        let m = meta
            .get(&row.patient)
            .ok_or_else(|| Error::UnknownPatient(row.patient.clone()))?;
        for g in Group::of(m) {
            buckets.entry((g, row.plane, th_key(row.th))).or_default().push(row);
        }
    }

    let mut entries = Vec::new();
    let mut boxplot = Vec::new();
    for ((group, plane, _), members) in buckets {
        let th = members[0].th;
        let pick = |f: fn(&SweepRow) -> f64| members.iter().map(|r| f(r)).collect::<Vec<f64>>();
        let dsc = pick(|r| r.mean_dsc);
        boxplot.push(box_stats(group.clone(), plane, th, &dsc));
        entries.push(CohortEntry {
            group,
            plane,
            th,
            patients: members.iter().map(|r| r.patient.clone()).collect(),
            dsc: Summary::of(&dsc).unwrap(),
            precision: Summary::of(&pick(|r| r.precision)).unwrap(),
            recall: Summary::of(&pick(|r| r.recall)).unwrap(),
            tumor_mm3: Summary::of(&pick(|r| r.tumor_mm3)).unwrap(),
        });
    }

    let mut scatter: Vec<ScatterPoint> = rows
        .iter()
        .map(|r| ScatterPoint {
            patient: r.patient.clone(),
            plane: r.plane,
            th: r.th,
            precision: r.precision,
            recall: r.recall,
            tumor_mm3: r.tumor_mm3,
        })
        .collect();
    scatter.sort_by(|a, b| {
        (a.plane, th_key(a.th), &a.patient).cmp(&(b.plane, th_key(b.th), &b.patient))
    });
    Ok(CohortReport {
        entries,
        boxplot,
        scatter,
    })
}

impl CohortReport {
    pub fn entry(&self, group: &Group, plane: Plane, th: f64) -> Option<&CohortEntry> {
        self.entries
            .iter()
            .find(|e| &e.group == group && e.plane == plane && th_key(e.th) == th_key(th))
    }

    /// Per-plane summary at one threshold, one row per model, laid out as
    /// `Model  Plane  Test mean DSC`.
    pub fn table(&self, th: f64) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "Mean DSC at threshold {th:.1}");
        let _ = writeln!(out, "{:<6} {:<9} {:<4} Test", "Model", "Plane", "n");
        for plane in Plane::ALL {
            if let Some(e) = self.entry(&Group::Overall, plane, th) {
                let _ = writeln!(
                    out,
                    "{:<6} {:<9} {:<4} {}",
                    plane.model_label(),
                    plane.name(),
                    e.dsc.n,
                    e.dsc.table_cell()
                );
            }
        }
        out
    }

    pub fn cohort_csv(&self) -> String {
        let mut out = String::from(
            "group_kind,group,plane,th,n,dsc_mean,dsc_std,dsc_min,dsc_max,precision_mean,precision_std,recall_mean,recall_std,tumor_mm3_mean,tumor_mm3_std\n",
        );
        for e in &self.entries {
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{:.3},{:.3}",
                e.group.kind(),
                e.group.name(),
                e.plane,
                e.th,
                e.dsc.n,
                e.dsc.mean,
                e.dsc.std,
                e.dsc.min,
                e.dsc.max,
                e.precision.mean,
                e.precision.std,
                e.recall.mean,
                e.recall.std,
                e.tumor_mm3.mean,
                e.tumor_mm3.std,
            );
        }
        out
    }

    /// Quartiles, Tukey whiskers and outliers of per-patient mean DSC.
    /// Outliers are `;`-separated.
    pub fn boxplot_csv(&self) -> String {
        let mut out = String::from("group_kind,group,plane,th,n,q1,median,q3,whisker_low,whisker_high,mean,outliers\n");
        for b in &self.boxplot {
            let outliers: Vec<String> = b.outliers.iter().map(|v| format!("{v:.6}")).collect();
            let _ = writeln!(
                out,
                "{},{},{},{:.2},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:.6},{}",
                b.group.kind(),
                b.group.name(),
                b.plane,
                b.th,
                b.n,
                b.q1,
                b.median,
                b.q3,
                b.whisker_low,
                b.whisker_high,
                b.mean,
                outliers.join(";"),
            );
        }
        out
    }

    pub fn scatter_csv(&self) -> String {
        let mut out = String::from("patient,plane,th,precision,recall,tumor_mm3\n");
        for p in &self.scatter {
            let _ = writeln!(
                out,
                "{},{},{:.2},{:.6},{:.6},{:.3}",
                p.patient, p.plane, p.th, p.precision, p.recall, p.tumor_mm3
            );
        }
        out
    }
}

pub const SWEEP_CSV_HEADER: &str = "patient,plane,th,mean_dsc,std_dsc,precision,recall,pos_pixels,tumor_mm3,precision_slice_mean,recall_slice_mean,precision_undefined,recall_undefined";

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from(SWEEP_CSV_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{:.2},{:.6},{:.6},{:.6},{:.6},{},{:.3},{:.6},{:.6},{},{}",
            r.patient,
            r.plane,
            r.th,
            r.mean_dsc,
            r.std_dsc,
            r.precision,
            r.recall,
            r.pos_pixels,
            r.tumor_mm3,
            r.precision_slice_mean,
            r.recall_slice_mean,
            r.precision_undefined,
            r.recall_undefined,
        );
    }
    out
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == SWEEP_CSV_HEADER => {}
        _ => return Err(Error::Validation("sweep CSV header mismatch".into())),
    }
    let bad = |line: &str| Error::Validation(format!("malformed sweep CSV row: {line}"));
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(bad(line));
            }
            let num = |i: usize| f[i].parse::<f64>().map_err(|_| bad(line));
            let flag = |i: usize| f[i].parse::<bool>().map_err(|_| bad(line));
            Ok(SweepRow {
                patient: f[0].to_string(),
                plane: f[1].parse().map_err(|_| bad(line))?,
                th: num(2)?,
                mean_dsc: num(3)?,
                std_dsc: num(4)?,
                precision: num(5)?,
                recall: num(6)?,
                pos_pixels: f[7].parse().map_err(|_| bad(line))?,
                tumor_mm3: num(8)?,
                precision_slice_mean: num(9)?,
                recall_slice_mean: num(10)?,
                precision_undefined: flag(11)?,
                recall_undefined: flag(12)?,
            })
        })
        .collect()
}
