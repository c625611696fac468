//! Grouping of runs by mismatch classification and table emission.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::str::FromStr;

use num_rational::Ratio;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::classify::{check_count_identities, IdentityViolation, SetCounts};
use crate::model::{PClass, RunClassification};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ReportError {
    #[error("unsupported report format {0:?} (expected md, csv or json)")]
    UnsupportedFormat(String),
    #[error("cannot parse report: {0}")]
    Parse(String),
}

/// Averaged columns, in table order.
pub const AVERAGED_COLUMNS: [&str; 8] = ["pre", "backup", "post", "e", "n_over", "n_new", "n_both", "v_eq"];

/// The per-run numbers the report needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub run_id: u32,
    /// Values of [`AVERAGED_COLUMNS`], in order.
    pub columns: [u64; 8],
    pub v_ch: u64,
    /// (|P_mis|, |P_mback|, |P_mpre|, |P_nom|)
    pub p_vector: [u64; 4],
    /// P-class name sets, when known, for overlap rows.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_names: Option<[BTreeSet<String>; 4]>,
    pub r_w_mean: f64,
    pub r_w_std: f64,
}

impl RunSummary {
    pub fn from_classification(rc: &RunClassification) -> Self {
        let s = &rc.sets;
        RunSummary {
            run_id: rc.run_id,
            columns: [
                rc.pre_count as u64,
                rc.backup_count as u64,
                rc.post_count as u64,
                s.e.len() as u64,
                s.n_over.len() as u64,
                s.n_new.len() as u64,
                s.n_both.len() as u64,
                s.v_eq.len() as u64,
            ],
            v_ch: s.v_ch.len() as u64,
            p_vector: PClass::ALL.map(|c| s.p_set(c).len() as u64),
            p_names: Some(PClass::ALL.map(|c| s.p_set(c).clone())),
            r_w_mean: rc.r_w_mean,
            r_w_std: rc.r_w_std,
        }
    }

    pub fn set_counts(&self) -> SetCounts {
        let c = &self.columns;
        SetCounts {
            e: c[3],
            n_over: c[4],
            n_new: c[5],
            n_both: c[6],
            v_eq: c[7],
            v_ch: self.v_ch,
            p_mis: self.p_vector[0],
            p_mback: self.p_vector[1],
            p_mpre: self.p_vector[2],
            p_nom: self.p_vector[3],
        }
    }
}

/// An exact non-negative rational, serialized as `"n"` or `"n/d"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Exact(pub Ratio<u64>);

impl Exact {
    /// Nearest integer, ties to even.
    pub fn round_half_even(&self) -> u64 {
        let (n, d) = (*self.0.numer(), *self.0.denom());
        let (q, r) = (n / d, n % d);
        match (2 * r).cmp(&d) {
            std::cmp::Ordering::Less => q,
            std::cmp::Ordering::Greater => q + 1,
            std::cmp::Ordering::Equal => q + (q & 1),
        }
    }
}

impl fmt::Display for Exact {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if *self.0.denom() == 1 {
            write!(f, "{}", self.0.numer())
        } else {
            write!(f, "{}/{}", self.0.numer(), self.0.denom())
        }
    }
}

impl FromStr for Exact {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let bad = || format!("not a rational: {s:?}");
        match s.split_once('/') {
            None => Ok(Exact(Ratio::from_integer(s.parse().map_err(|_| bad())?))),
            Some((n, d)) => {
                let (n, d): (u64, u64) = (n.parse().map_err(|_| bad())?, d.parse().map_err(|_| bad())?);
                if d == 0 {
                    return Err(bad());
                }
                Ok(Exact(Ratio::new(n, d)))
            }
        }
    }
}

impl Serialize for Exact {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Exact {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Similarity {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct PCounts {
    pub p_mis: u64,
    pub p_mback: u64,
    pub p_mpre: u64,
    pub p_nom: u64,
}

impl From<[u64; 4]> for PCounts {
    fn from(v: [u64; 4]) -> Self {
        PCounts {
            p_mis: v[0],
            p_mback: v[1],
            p_mpre: v[2],
            p_nom: v[3],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportGroup {
    pub count: usize,
    pub run_ids: Vec<u32>,
    pub p_vector: [u64; 4],
    pub v_ch: u64,
    pub averages: BTreeMap<String, Exact>,
    pub similarity: Similarity,
    /// Names in the P-class sets of every member run.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlaps: Option<PCounts>,
    #[serde(default)]
    pub identity_violations: Vec<IdentityViolation>,
}

impl ReportGroup {
    pub fn average(&self, column: &str) -> Exact {
        self.averages[column]
    }
}

/// Partitions runs by (p_vector, |V_ch|), largest group first; ties go to
/// the lexicographically smaller p_vector, then the lowest run id.
pub fn group_runs(runs: &[RunSummary]) -> Vec<ReportGroup> {
    let mut by_key: BTreeMap<([u64; 4], u64), Vec<&RunSummary>> = BTreeMap::new();
    for run in runs {
        by_key.entry((run.p_vector, run.v_ch)).or_default().push(run);
    }
    let mut groups: Vec<ReportGroup> = by_key
        .into_values()
        .map(|mut members| {
            members.sort_by_key(|r| r.run_id);
            average_columns(&members)
        })
        .collect();
    groups.sort_by(|a, b| {
        b.count
            .cmp(&a.count)
            .then(a.p_vector.cmp(&b.p_vector))
            .then(a.run_ids.first().cmp(&b.run_ids.first()))
    });
    groups
}

/// Exact per-column means plus the plain mean of the per-run similarity
/// aggregates.
pub fn average_columns(members: &[&RunSummary]) -> ReportGroup {
    assert!(!members.is_empty(), "a group has at least one run");
    let n = members.len() as u64;
    let averages = AVERAGED_COLUMNS
        .iter()
        .enumerate()
        .map(|(i, col)| {
            let sum: u64 = members.iter().map(|r| r.columns[i]).sum();
            (col.to_string(), Exact(Ratio::new(sum, n)))
        })
        .collect();
    let mean = |f: fn(&RunSummary) -> f64| members.iter().map(|r| f(r)).sum::<f64>() / n as f64;
    ReportGroup {
        count: members.len(),
        run_ids: members.iter().map(|r| r.run_id).collect(),
        p_vector: members[0].p_vector,
        v_ch: members[0].v_ch,
        averages,
        similarity: Similarity {
            mean: mean(|r| r.r_w_mean),
            std: mean(|r| r.r_w_std),
        },
        overlaps: overlapping_names(members).map(|sets| PCounts::from(sets.map(|s| s.len() as u64))),
        identity_violations: Vec::new(),
    }
}

/// Per P-class, the names present in that class in every run. `None` when
/// some run carries no name sets.
pub fn overlapping_names(runs: &[&RunSummary]) -> Option<[BTreeSet<String>; 4]> {
    let mut iter = runs.iter();
    let mut acc = iter.next()?.p_names.clone()?;
    for run in iter {
        let names = run.p_names.as_ref()?;
        for (a, b) in acc.iter_mut().zip(names) {
            a.retain(|n| b.contains(n));
        }
    }
    Some(acc)
}

/// Intersection over all runs of one category's name set.
pub fn overlapping_files(runs: &[RunSummary], category: PClass) -> BTreeSet<String> {
    let idx = PClass::ALL.iter().position(|c| *c == category).unwrap();
    let refs: Vec<&RunSummary> = runs.iter().collect();
    overlapping_names(&refs).map(|mut s| std::mem::take(&mut s[idx])).unwrap_or_default()
}

/// How strictly group identities are checked.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum IdentityPolicy {
    /// Averages are exact means of exact counts.
    #[default]
    Exact,
    /// Averages were rounded to integers before publication: each averaged
    /// term may be off by up to 0.5 in groups of more than one run.
    RoundedAverages,
}

pub fn check_group_identities(group: &ReportGroup, policy: IdentityPolicy) -> Vec<IdentityViolation> {
    let avg = |c: &str| group.averages[c];
    let p = group.p_vector;
    match policy {
        IdentityPolicy::Exact => {
            // sums over member runs are integers
            let n = group.count as u64;
            let sum = |c: &str| (avg(c).0 * n).to_integer();
            let counts = SetCounts {
                e: sum("e"),
                n_over: sum("n_over"),
                n_new: sum("n_new"),
                n_both: sum("n_both"),
                v_eq: sum("v_eq"),
                v_ch: group.v_ch * n,
                p_mis: p[0] * n,
                p_mback: p[1] * n,
                p_mpre: p[2] * n,
                p_nom: p[3] * n,
            };
            check_count_identities(&counts, [0; 3])
        }
        IdentityPolicy::RoundedAverages => {
            let r = |c: &str| avg(c).round_half_even();
            let counts = SetCounts {
                e: r("e"),
                n_over: r("n_over"),
                n_new: r("n_new"),
                n_both: r("n_both"),
                v_eq: r("v_eq"),
                v_ch: group.v_ch,
                p_mis: p[0],
                p_mback: p[1],
                p_mpre: p[2],
                p_nom: p[3],
            };
            // averaged terms per identity: E (4), N_both (2), V_ch (0)
            let slack = if group.count > 1 { [2, 1, 0] } else { [0; 3] };
            check_count_identities(&counts, slack)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Layout {
    /// Filecount, classification, mismatch and similarity columns.
    #[default]
    File,
    /// Element counts and name/value classification only.
    Content,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FailedRun {
    pub run_id: u32,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapRow {
    pub counts: PCounts,
    pub p_mis: Vec<String>,
    pub p_mback: Vec<String>,
    pub p_mpre: Vec<String>,
    pub p_nom: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub dataset: String,
    /// Heading shared by consecutive datasets ("App Downgrading").
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    #[serde(default)]
    pub layout: Layout,
    pub groups: Vec<ReportGroup>,
    /// Intersection over all runs of the dataset, rendered as its own row.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_row: Option<OverlapRow>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub failed_runs: Vec<FailedRun>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct DatasetOptions {
    pub layout: Layout,
    pub overlap_row: bool,
    pub policy: IdentityPolicy,
}

impl DatasetReport {
    pub fn build(
        dataset: impl Into<String>,
        section: Option<String>,
        runs: &[RunSummary],
        failed_runs: Vec<FailedRun>,
        options: DatasetOptions,
    ) -> Self {
        let mut groups = group_runs(runs);
        for g in &mut groups {
            g.identity_violations = check_group_identities(g, options.policy);
        }
        let overlap_row = if options.overlap_row {
            let refs: Vec<&RunSummary> = runs.iter().collect();
            overlapping_names(&refs).map(|sets| OverlapRow {
                counts: PCounts::from(sets.clone().map(|s| s.len() as u64)),
                p_mis: sets[0].iter().cloned().collect(),
                p_mback: sets[1].iter().cloned().collect(),
                p_mpre: sets[2].iter().cloned().collect(),
                p_nom: sets[3].iter().cloned().collect(),
            })
        } else {
            None
        };
        DatasetReport {
            dataset: dataset.into(),
            section,
            layout: options.layout,
            groups,
            overlap_row,
            failed_runs,
        }
    }

    pub fn identity_violations(&self) -> usize {
        self.groups.iter().map(|g| g.identity_violations.len()).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub datasets: Vec<DatasetReport>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Markdown,
    Csv,
    Json,
}

impl ReportFormat {
    pub fn extension(self) -> &'static str {
        match self {
            ReportFormat::Markdown => "md",
            ReportFormat::Csv => "csv",
            ReportFormat::Json => "json",
        }
    }
}

impl FromStr for ReportFormat {
    type Err = ReportError;
    fn from_str(s: &str) -> Result<Self, ReportError> {
        match s.to_ascii_lowercase().as_str() {
            "md" | "markdown" => Ok(ReportFormat::Markdown),
            "csv" => Ok(ReportFormat::Csv),
            "json" => Ok(ReportFormat::Json),
            _ => Err(ReportError::UnsupportedFormat(s.to_string())),
        }
    }
}

const FILE_HEADER: [&str; 16] = [
    "#", "Pre", "Backup", "Post", "E", "N_over", "N_new", "N_both", "V_eq", "V_ch", "P_mis", "P_mback", "P_mpre",
    "P_nom", "r_w", "sigma_w",
];
const CONTENT_HEADER: [&str; 8] = ["Pre", "Backup", "Post", "E", "N_over", "N_new", "N_both", "V_eq"];

/// Display cells of one group row.
pub fn group_cells(group: &ReportGroup, layout: Layout) -> Vec<String> {
    let averaged = AVERAGED_COLUMNS.iter().map(|c| group.average(c).round_half_even().to_string());
    match layout {
        Layout::Content => averaged.collect(),
        Layout::File => std::iter::once(group.count.to_string())
            .chain(averaged)
            .chain(std::iter::once(group.v_ch.to_string()))
            .chain(group.p_vector.iter().map(u64::to_string))
            .chain([format!("{:.4}", group.similarity.mean), format!("{:.4}", group.similarity.std)])
            .collect(),
    }
}

fn overlap_cells(row: &OverlapRow) -> [String; 4] {
    let c = row.counts;
    [c.p_mis, c.p_mback, c.p_mpre, c.p_nom].map(|v| v.to_string())
}

fn markdown(report: &Report) -> String {
    let mut out = String::new();
    let mut section: Option<&str> = None;
    for ds in &report.datasets {
        if ds.section.as_deref() != section {
            section = ds.section.as_deref();
            if let Some(s) = section {
                let _ = writeln!(out, "## {s}\n");
            }
        }
        let level = if section.is_some() { "###" } else { "##" };
        let _ = writeln!(out, "{level} {}\n", ds.dataset);
        let header: Vec<&str> = match ds.layout {
            Layout::File => FILE_HEADER.to_vec(),
            Layout::Content => CONTENT_HEADER.to_vec(),
        };
        let _ = writeln!(out, "| {} |", header.join(" | "));
        let _ = writeln!(out, "|{}", "---:|".repeat(header.len()));
        for g in &ds.groups {
            let _ = writeln!(out, "| {} |", group_cells(g, ds.layout).join(" | "));
        }
        if let (Some(row), Layout::File) = (&ds.overlap_row, ds.layout) {
            let mut cells = vec![String::new(); 16];
            cells[0] = "V_ch overlapping files".into();
            cells[10..14].clone_from_slice(&overlap_cells(row));
            let _ = writeln!(out, "| {} |", cells.join(" | "));
        }
        out.push('\n');
        for (i, g) in ds.groups.iter().enumerate() {
            for v in &g.identity_violations {
                let _ = writeln!(out, "- identity check failed in row {}: {} ({})", i + 1, v.identity, v.detail);
            }
        }
        for f in &ds.failed_runs {
            let _ = writeln!(out, "- run {} failed: {}", f.run_id, f.reason);
        }
        if ds.groups.iter().any(|g| !g.identity_violations.is_empty()) || !ds.failed_runs.is_empty() {
            out.push('\n');
        }
    }
    out
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn csv(report: &Report) -> String {
    let mut out = String::from(
        "section,dataset,row,count,pre,backup,post,e,n_over,n_new,n_both,v_eq,v_ch,p_mis,p_mback,p_mpre,p_nom,r_w_mean,r_w_std,identity_violations\n",
    );
    for ds in &report.datasets {
        let prefix = format!(
            "{},{}",
            csv_field(ds.section.as_deref().unwrap_or("")),
            csv_field(&ds.dataset)
        );
        for (i, g) in ds.groups.iter().enumerate() {
            let cells = group_cells(g, Layout::File);
            let _ = writeln!(out, "{prefix},{},{},{}", i + 1, cells.join(","), g.identity_violations.len());
        }
        if let Some(row) = &ds.overlap_row {
            let _ = writeln!(out, "{prefix},overlap,,,,,,,,,,,{},,,", overlap_cells(row).join(","));
        }
    }
    out
}

/// Renders the report. Identical inputs give identical bytes.
pub fn emit_table(report: &Report, format: ReportFormat) -> String {
    match format {
        ReportFormat::Markdown => markdown(report),
        ReportFormat::Csv => csv(report),
        ReportFormat::Json => {
            let mut s = serde_json::to_string_pretty(report).expect("report serializes");
            s.push('\n');
            s
        }
    }
}

pub fn parse_json_report(text: &str) -> Result<Report, ReportError> {
    serde_json::from_str(text).map_err(|e| ReportError::Parse(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(id: u32, pre: u64, p: [u64; 4]) -> RunSummary {
        RunSummary {
            run_id: id,
            columns: [pre, 0, pre, pre, pre, 0, 0, 0],
            v_ch: p.iter().sum(),
            p_vector: p,
            p_names: None,
            r_w_mean: 0.0,
            r_w_std: 0.0,
        }
    }

    #[test]
    fn half_even() {
        let r = |n, d| Exact(Ratio::new(n, d)).round_half_even();
        assert_eq!(r(21, 2), 10);
        assert_eq!(r(23, 2), 12);
        assert_eq!(r(31, 3), 10);
        assert_eq!(r(32, 3), 11);
        assert_eq!(r(7, 1), 7);
    }

    #[test]
    fn grouping_and_order() {
        let mut runs: Vec<RunSummary> = (1..=20).map(|i| run(i, 10, [0; 4])).collect();
        let g = group_runs(&runs);
        assert_eq!(g.len(), 1);
        assert_eq!(g[0].count, 20);
        runs.truncate(2);
        runs[0].p_vector = [0, 1, 0, 0];
        runs[0].v_ch = 1;
        let g = group_runs(&runs);
        assert_eq!(g.iter().map(|g| g.run_ids[0]).collect::<Vec<_>>(), [2, 1]);
    }

    #[test]
    fn averages_are_exact() {
        let runs = [run(1, 10, [0; 4]), run(2, 11, [0; 4])];
        let g = group_runs(&runs);
        assert_eq!(g[0].average("pre").to_string(), "21/2");
        assert_eq!(g[0].average("pre").round_half_even(), 10);
    }

    #[test]
    fn formats_and_round_trip() {
        let report = Report {
            datasets: vec![DatasetReport::build("Full Backup", None, &[run(1, 3, [0; 4])], vec![], DatasetOptions::default())],
        };
        let json = emit_table(&report, ReportFormat::Json);
        assert_eq!(parse_json_report(&json).unwrap(), report);
        assert_eq!(emit_table(&report, ReportFormat::Markdown), emit_table(&report, ReportFormat::Markdown));
        assert!(matches!("xlsx".parse::<ReportFormat>(), Err(ReportError::UnsupportedFormat(_))));
        let empty = Report {
            datasets: vec![DatasetReport::build("Empty", None, &[], vec![], DatasetOptions::default())],
        };
        let md = emit_table(&empty, ReportFormat::Markdown);
        assert!(md.contains("## Empty"));
        assert_eq!(md.lines().filter(|l| l.starts_with('|')).count(), 2);
    }
}
