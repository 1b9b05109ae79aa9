use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::{File, OpenOptions};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::Parameter;
use crate::scalar::quantile_sorted;

use super::{Replication, ResultRecord, RunConfig, SummaryRow};

pub const RESULTS_FILE: &str = "results.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";

const RESULT_HEADER: [&str; 17] = [
    "scenario",
    "cluster_scenario",
    "mechanism",
    "model",
    "method",
    "replication",
    "rep_seed",
    "method_seed",
    "parameter",
    "estimate",
    "se",
    "lower",
    "upper",
    "df",
    "converged",
    "retry_of",
    "error",
];

const DIAGNOSTIC_HEADER: [&str; 5] = ["scenario", "replication", "method", "key", "value"];

fn num(x: f64) -> String {
    if x.is_finite() {
        format!("{x:?}")
    } else {
        String::new()
    }
}

fn parse_num(s: &str) -> Result<f64> {
    if s.is_empty() {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| Error::Config(format!("bad number `{s}`")))
}

fn appender(path: &Path, header: &[&str]) -> Result<csv::Writer<File>> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let file = OpenOptions::new().create(true).append(true).open(path)?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(header)?;
    }
    Ok(w)
}

/// Append-only writer for the results and diagnostics files.
pub struct ResultsWriter {
    results: csv::Writer<File>,
    diagnostics: csv::Writer<File>,
}

impl ResultsWriter {
    pub fn open(dir: &Path) -> Result<Self> {
        Ok(Self {
            results: appender(&dir.join(RESULTS_FILE), &RESULT_HEADER)?,
            diagnostics: appender(&dir.join(DIAGNOSTICS_FILE), &DIAGNOSTIC_HEADER)?,
        })
    }

    pub fn append(&mut self, rep: &Replication) -> Result<()> {
        for r in &rep.results {
            self.results.write_record([
                r.scenario.clone(),
                r.cluster_scenario.clone(),
                r.mechanism.clone(),
                r.model.clone(),
                r.method.clone(),
                r.replication.to_string(),
                r.rep_seed.to_string(),
                r.method_seed.to_string(),
                r.parameter.to_string(),
                num(r.estimate),
                num(r.se),
                num(r.lower),
                num(r.upper),
                num(r.df),
                r.converged.to_string(),
                r.retry_of.map(|s| s.to_string()).unwrap_or_default(),
                r.error.clone().unwrap_or_default(),
            ])?;
        }
        for d in &rep.diagnostics {
            self.diagnostics.write_record([
                d.scenario.clone(),
                d.replication.to_string(),
                d.method.clone(),
                d.key.clone(),
                d.value.clone(),
            ])?;
        }
        self.results.flush()?;
        self.diagnostics.flush()?;
        Ok(())
    }
}

pub fn read_results(path: &Path) -> Result<Vec<ResultRecord>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers = rdr.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != RESULT_HEADER {
        return Err(Error::Parse { path: path.to_path_buf(), message: "unexpected results header".into() });
    }
    let bad = |m: String| Error::Parse { path: path.to_path_buf(), message: m };
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| rec.get(i).unwrap_or("");
        let int = |i: usize| f(i).parse::<u64>().map_err(|_| bad(format!("bad integer `{}`", f(i))));
        out.push(ResultRecord {
            scenario: f(0).to_string(),
            cluster_scenario: f(1).to_string(),
            mechanism: f(2).to_string(),
            model: f(3).to_string(),
            method: f(4).to_string(),
            replication: int(5)? as usize,
            rep_seed: int(6)?,
            method_seed: int(7)?,
            parameter: f(8).parse()?,
            estimate: parse_num(f(9))?,
            se: parse_num(f(10))?,
            lower: parse_num(f(11))?,
            upper: parse_num(f(12))?,
            df: parse_num(f(13))?,
            converged: f(14) == "true",
            retry_of: if f(15).is_empty() { None } else { Some(int(15)?) },
            error: if f(16).is_empty() { None } else { Some(f(16).to_string()) },
        });
    }
    Ok(out)
}

pub fn write_manifest(run: &RunConfig) -> Result<()> {
    let s = &run.scenario;
    let mut text = String::new();
    let _ = writeln!(text, "crate_version={}", env!("CARGO_PKG_VERSION"));
    let _ = writeln!(text, "scenario={}", s.name);
    let _ = writeln!(text, "model={}", s.model);
    let _ = writeln!(text, "mechanism={}", s.mechanism);
    let _ = writeln!(text, "n_schools={}", s.n_schools);
    let _ = writeln!(text, "school_size={}", s.school_size);
    let targets: Vec<String> = s.target_missing.iter().map(|(w, p)| format!("{w}:{p}")).collect();
    let _ = writeln!(text, "target_missing={}", targets.join(","));
    let _ = writeln!(text, "ses_mcar_rate={}", s.ses_mcar_rate);
    let _ = writeln!(text, "master_seed={}", s.seed);
    let _ = writeln!(text, "preset={}", run.preset);
    let _ = writeln!(text, "m={}", run.preset.m());
    let _ = writeln!(text, "replications={}", run.replications);
    let _ = writeln!(text, "workers={}", run.workers);
    for m in &run.methods {
        let (burn, between) = run.preset.iterations(m.family);
        let _ = writeln!(text, "method.{}=burn_in:{burn},between:{between}", m.label());
    }
    std::fs::write(run.out_dir.join(MANIFEST_FILE), text)?;
    Ok(())
}

fn file_stem(row: &SummaryRow) -> String {
    format!("{}_{}_{}", row.model, row.mechanism, row.parameter)
}

/// Write one table per (model, mechanism, parameter) under `dir/tables`.
pub fn emit_tables(rows: &[SummaryRow], dir: &Path) -> Result<Vec<PathBuf>> {
    let tables = dir.join("tables");
    std::fs::create_dir_all(&tables)?;
    let mut grouped: BTreeMap<String, Vec<&SummaryRow>> = BTreeMap::new();
    for r in rows {
        grouped.entry(file_stem(r)).or_default().push(r);
    }
    let mut written = Vec::new();
    for (stem, rows) in grouped {
        let path = tables.join(format!("{stem}.csv"));
        let mut w = csv::Writer::from_path(&path)?;
        let vc = rows[0].parameter.is_variance_component();
        let mut header = vec!["cluster_scenario", "method", "Average Estimate", "Bias", "Relative Bias (%)", "Emp SE"];
        if !vc {
            header.extend(["Model SE", "Coverage"]);
        }
        w.write_record(&header)?;
        for r in rows {
            let m = &r.metrics;
            let mut rec = vec![
                r.cluster_scenario.clone(),
                r.method.clone(),
                format!("{:.6}", m.average),
                format!("{:.6}", m.bias),
                format!("{:.2}", m.relative_bias),
                format!("{:.6}", m.emp_se),
            ];
            if !vc {
                rec.push(m.model_se.map(|v| format!("{v:.6}")).unwrap_or_default());
                rec.push(m.coverage.map(|v| format!("{v:.2}")).unwrap_or_default());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// One row of an emitted table: identifying columns and named values.
#[derive(Debug, Clone, PartialEq)]
pub struct TableRow {
    pub cluster_scenario: String,
    pub method: String,
    pub values: Vec<(String, f64)>,
}

impl TableRow {
    pub fn get(&self, column: &str) -> Option<f64> {
        self.values.iter().find(|(c, _)| c == column).map(|(_, v)| *v)
    }
}

pub fn parse_table(path: &Path) -> Result<Vec<TableRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if headers.len() < 3 || headers[0] != "cluster_scenario" || headers[1] != "method" {
        return Err(Error::Parse { path: path.to_path_buf(), message: "not a metrics table".into() });
    }
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let values = headers[2..]
            .iter()
            .zip(rec.iter().skip(2))
            .map(|(h, v)| Ok((h.clone(), parse_num(v)?)))
            .collect::<Result<_>>()?;
        out.push(TableRow { cluster_scenario: rec[0].to_string(), method: rec[1].to_string(), values });
    }
    Ok(out)
}

struct BoxStats {
    q1: f64,
    median: f64,
    q3: f64,
    lo: f64,
    hi: f64,
    outliers: Vec<f64>,
}

/// Tukey box: whiskers reach the most extreme values inside
/// `[Q1 - 1.5 IQR, Q3 + 1.5 IQR]`; points beyond are outliers.
fn box_stats(values: &[f64]) -> BoxStats {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let q1 = quantile_sorted(&v, 0.25);
    let median = quantile_sorted(&v, 0.5);
    let q3 = quantile_sorted(&v, 0.75);
    let iqr = q3 - q1;
    let (lf, hf) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = v.iter().copied().filter(|x| *x >= lf && *x <= hf).collect();
    BoxStats {
        q1,
        median,
        q3,
        lo: inside.first().copied().unwrap_or(q1),
        hi: inside.last().copied().unwrap_or(q3),
        outliers: v.into_iter().filter(|x| *x < lf || *x > hf).collect(),
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn boxplot_svg(title: &str, groups: &[(String, Vec<f64>)], truth: f64) -> String {
    let (w_per, left, top, height, bottom) = (90.0, 70.0, 40.0, 320.0, 150.0);
    let width = left + w_per * groups.len() as f64 + 20.0;
    let all = groups.iter().flat_map(|(_, v)| v.iter().copied()).chain([truth]);
    let (mut lo, mut hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if hi <= lo {
        lo -= 1.0;
        hi += 1.0;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let y = |v: f64| top + height * (hi - v) / (hi - lo);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{:.0}" font-family="sans-serif" font-size="11">"#,
        top + height + bottom
    );
    let _ = writeln!(s, r#"<text x="{left}" y="20" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(s, r#"<line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}" stroke="black"/>"#, top + height);
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#,
            left - 5.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="red" stroke-dasharray="4,3"/>"#,
        y(truth),
        width - 10.0,
        y(truth)
    );
    for (i, (label, values)) in groups.iter().enumerate() {
        if values.is_empty() {
            continue;
        }
        let b = box_stats(values);
        let cx = left + w_per * (i as f64 + 0.5);
        let half = w_per * 0.3;
        let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#, y(b.hi), y(b.q3));
        let _ = writeln!(s, r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/>"#, y(b.q1), y(b.lo));
        for v in [b.lo, b.hi] {
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/>"#,
                cx - half / 2.0,
                y(v),
                cx + half / 2.0,
                y(v)
            );
        }
        let _ = writeln!(
            s,
            r##"<rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="#cfe0f3" stroke="black"/>"##,
            cx - half,
            y(b.q3),
            2.0 * half,
            (y(b.q1) - y(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            y(b.median),
            cx + half,
            y(b.median)
        );
        for o in &b.outliers {
            let _ = writeln!(s, r#"<circle cx="{cx:.1}" cy="{:.1}" r="2" fill="none" stroke="black"/>"#, y(*o));
        }
        let ly = top + height + 12.0;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.1}" y="{ly:.1}" transform="rotate(45 {cx:.1} {ly:.1})">{}</text>"#,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Box plots of the estimates per method, one SVG per (model, mechanism,
/// cluster scenario, parameter), under `dir/plots`.
pub fn emit_plots(records: &[ResultRecord], truth: impl Fn(&ResultRecord) -> Option<f64>, dir: &Path) -> Result<Vec<PathBuf>> {
    let plots = dir.join("plots");
    std::fs::create_dir_all(&plots)?;
    type Key = (String, String, String, Parameter);
    let mut groups: BTreeMap<Key, (f64, Vec<String>, BTreeMap<String, Vec<f64>>)> = BTreeMap::new();
    for r in records.iter().filter(|r| r.error.is_none() && r.estimate.is_finite()) {
        let Some(t) = truth(r) else { continue };
        let key = (r.model.clone(), r.mechanism.clone(), r.cluster_scenario.clone(), r.parameter);
        let g = groups.entry(key).or_insert_with(|| (t, Vec::new(), BTreeMap::new()));
        if !g.1.contains(&r.method) {
            g.1.push(r.method.clone());
        }
        g.2.entry(r.method.clone()).or_default().push(r.estimate);
    }
    let mut written = Vec::new();
    for ((model, mech, cluster, param), (t, order, by_method)) in groups {
        let series: Vec<(String, Vec<f64>)> = order.iter().map(|m| (m.clone(), by_method[m].clone())).collect();
        let title = format!("{model} {mech} {cluster}: {param}");
        let name = format!("{model}_{mech}_{}_{param}.svg", cluster.replace(' ', "_"));
        let path = plots.join(name);
        std::fs::write(&path, boxplot_svg(&title, &series, t))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tukey_box_on_hand_data() {
        let b = box_stats(&[1.0, 2.0, 3.0, 4.0, 5.0, 100.0]);
        assert_eq!(b.median, 3.5);
        assert_eq!(b.q1, 2.25);
        assert_eq!(b.q3, 4.75);
        assert_eq!(b.lo, 1.0);
        assert_eq!(b.hi, 5.0);
        assert_eq!(b.outliers, vec![100.0]);
    }

    #[test]
    fn svg_is_well_formed() {
        let svg = boxplot_svg("a <b>", &[("M&1".into(), vec![0.1, 0.2, 0.3]), ("M2".into(), vec![0.0])], 0.15);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert!(svg.contains("a &lt;b&gt;") && svg.contains("M&amp;1"));
        assert_eq!(svg.matches("<rect").count(), 2);
    }
}
