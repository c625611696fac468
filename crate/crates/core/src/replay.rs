//! Re-rendering published per-group numbers through the report pipeline.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::PClass;
use crate::report::{
    group_cells, DatasetOptions, DatasetReport, IdentityPolicy, Layout, Report, RunSummary,
};

/// Published numbers bundled with the crate.
pub mod published {
    pub const ANDROID_FILE_BASED: &str = include_str!("../data/published/android_file_based.json");
    pub const ANDROID_CONTENT_BASED: &str = include_str!("../data/published/android_content_based.json");
    pub const IOS_FILE_BASED: &str = include_str!("../data/published/ios_file_based.json");

    pub const ALL: [(&str, &str); 3] = [
        ("android_file_based", ANDROID_FILE_BASED),
        ("android_content_based", ANDROID_CONTENT_BASED),
        ("ios_file_based", IOS_FILE_BASED),
    ];
}

#[derive(Debug, Error)]
pub enum ReplayError {
    #[error("cannot read {path}: {message}")]
    Read { path: String, message: String },
    #[error("malformed numbers file: {0}")]
    Parse(String),
    #[error("dataset {dataset:?}: {message}")]
    Inconsistent { dataset: String, message: String },
}

/// One published row: a group of `count` runs sharing these values, or a
/// single run when `count` is 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedRow {
    #[serde(default = "one")]
    pub count: usize,
    pub pre: u64,
    pub backup: u64,
    pub post: u64,
    pub e: u64,
    pub n_over: u64,
    pub n_new: u64,
    pub n_both: u64,
    pub v_eq: u64,
    /// Absent from content tables; taken as `n_both - v_eq` then.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_ch: Option<u64>,
    #[serde(default)]
    pub p: [u64; 4],
    #[serde(default)]
    pub r_w_mean: f64,
    #[serde(default)]
    pub r_w_std: f64,
}

fn one() -> usize {
    1
}

impl PublishedRow {
    pub fn v_ch(&self) -> u64 {
        self.v_ch.unwrap_or(self.n_both.saturating_sub(self.v_eq))
    }

    fn columns(&self) -> [u64; 8] {
        [self.pre, self.backup, self.post, self.e, self.n_over, self.n_new, self.n_both, self.v_eq]
    }

    /// Cells as the paper prints them.
    pub fn expected_cells(&self, layout: Layout) -> Vec<String> {
        let averaged = self.columns().map(|v| v.to_string());
        match layout {
            Layout::Content => averaged.to_vec(),
            Layout::File => std::iter::once(self.count.to_string())
                .chain(averaged)
                .chain(std::iter::once(self.v_ch().to_string()))
                .chain(self.p.iter().map(u64::to_string))
                .chain([format!("{:.4}", self.r_w_mean), format!("{:.4}", self.r_w_std)])
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedDataset {
    pub dataset: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub section: Option<String>,
    #[serde(default)]
    pub layout: Layout,
    /// P-class counts of names changed in every run of the dataset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlap_row: Option<[u64; 4]>,
    pub rows: Vec<PublishedRow>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PublishedTable {
    #[serde(default)]
    pub title: String,
    pub datasets: Vec<PublishedDataset>,
}

pub fn parse_numbers(text: &str) -> Result<PublishedTable, ReplayError> {
    serde_json::from_str(text).map_err(|e| ReplayError::Parse(e.to_string()))
}

pub fn load_numbers(path: &Path) -> Result<PublishedTable, ReplayError> {
    let text = std::fs::read_to_string(path).map_err(|e| ReplayError::Read {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    parse_numbers(&text)
}

/// Expands rows into per-run summaries with run ids 1.. in row order.
///
/// When the dataset publishes an overlap row, every run gets synthetic
/// P-class names: `overlap[c]` names shared by all runs plus names unique
/// to the run, so the cross-run intersection has the published size.
pub fn expand_runs(ds: &PublishedDataset) -> Result<Vec<RunSummary>, ReplayError> {
    let total: usize = ds.rows.iter().map(|r| r.count).sum();
    if let Some(overlap) = ds.overlap_row {
        for row in &ds.rows {
            for (i, class) in PClass::ALL.iter().enumerate() {
                let fits = if total == 1 { overlap[i] == row.p[i] } else { overlap[i] <= row.p[i] };
                if !fits {
                    return Err(ReplayError::Inconsistent {
                        dataset: ds.dataset.clone(),
                        message: format!(
                            "overlap of {} ({}) cannot arise from a row with {}",
                            class.column(),
                            overlap[i],
                            row.p[i]
                        ),
                    });
                }
            }
        }
    }
    let mut runs = Vec::with_capacity(total);
    for row in &ds.rows {
        if row.count == 0 {
            return Err(ReplayError::Inconsistent {
                dataset: ds.dataset.clone(),
                message: "row with a count of 0".into(),
            });
        }
        for _ in 0..row.count {
            let run_id = runs.len() as u32 + 1;
            let p_names = ds.overlap_row.map(|overlap| {
                let mut sets: [BTreeSet<String>; 4] = Default::default();
                for (i, class) in PClass::ALL.iter().enumerate() {
                    let col = class.column();
                    for k in 0..row.p[i] {
                        let name = if k < overlap[i] {
                            format!("shared/{col}/{k}")
                        } else {
                            format!("run{run_id}/{col}/{k}")
                        };
                        sets[i].insert(name);
                    }
                }
                sets
            });
            runs.push(RunSummary {
                run_id,
                columns: row.columns(),
                v_ch: row.v_ch(),
                p_vector: row.p,
                p_names,
                r_w_mean: row.r_w_mean,
                r_w_std: row.r_w_std,
            });
        }
    }
    Ok(runs)
}

/// Groups, averages and checks the published numbers. Identities are
/// checked with the slack that integer-rounded averages allow.
pub fn replay_published(table: &PublishedTable) -> Result<Report, ReplayError> {
    let mut datasets = Vec::with_capacity(table.datasets.len());
    for ds in &table.datasets {
        let runs = expand_runs(ds)?;
        let options = DatasetOptions {
            layout: ds.layout,
            overlap_row: ds.overlap_row.is_some(),
            policy: IdentityPolicy::RoundedAverages,
        };
        datasets.push(DatasetReport::build(&ds.dataset, ds.section.clone(), &runs, Vec::new(), options));
    }
    Ok(Report { datasets })
}

/// Cell-level differences between a replayed report and the published
/// numbers it came from. Empty when every cell and row position matches.
pub fn compare_with_published(report: &Report, table: &PublishedTable) -> Vec<String> {
    let mut diffs = Vec::new();
    if report.datasets.len() != table.datasets.len() {
        diffs.push(format!(
            "{} datasets rendered, {} published",
            report.datasets.len(),
            table.datasets.len()
        ));
    }
    for (got, want) in report.datasets.iter().zip(&table.datasets) {
        if got.groups.len() != want.rows.len() {
            diffs.push(format!(
                "{}: {} rows rendered, {} published",
                want.dataset,
                got.groups.len(),
                want.rows.len()
            ));
        }
        for (i, (g, row)) in got.groups.iter().zip(&want.rows).enumerate() {
            let (a, b) = (group_cells(g, want.layout), row.expected_cells(want.layout));
            for (j, (x, y)) in a.iter().zip(&b).enumerate() {
                if x != y {
                    diffs.push(format!("{} row {} column {}: rendered {x}, published {y}", want.dataset, i + 1, j + 1));
                }
            }
        }
        let rendered = got.overlap_row.as_ref().map(|o| [o.counts.p_mis, o.counts.p_mback, o.counts.p_mpre, o.counts.p_nom]);
        if rendered != want.overlap_row {
            diffs.push(format!("{} overlap row: rendered {rendered:?}, published {:?}", want.dataset, want.overlap_row));
        }
    }
    diffs
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(count: usize, e: u64, n_over: u64, n_both: u64) -> PublishedRow {
        PublishedRow {
            count,
            pre: n_over + n_both,
            backup: n_both,
            post: e,
            e,
            n_over,
            n_new: 0,
            n_both,
            v_eq: n_both,
            v_ch: Some(0),
            p: [0; 4],
            r_w_mean: 0.0,
            r_w_std: 0.0,
        }
    }

    fn table(rows: Vec<PublishedRow>, overlap: Option<[u64; 4]>) -> PublishedTable {
        PublishedTable {
            title: String::new(),
            datasets: vec![PublishedDataset {
                dataset: "d".into(),
                section: None,
                layout: Layout::File,
                overlap_row: overlap,
                rows,
            }],
        }
    }

    #[test]
    fn consistent_row_replays_clean() {
        let t = table(vec![row(3, 10, 6, 4)], None);
        let r = replay_published(&t).unwrap();
        assert_eq!(r.datasets[0].groups[0].count, 3);
        assert_eq!(r.datasets[0].identity_violations(), 0);
        assert!(compare_with_published(&r, &t).is_empty());
    }

    #[test]
    fn broken_union_is_flagged() {
        let t = table(vec![row(1, 11, 6, 4)], None);
        let r = replay_published(&t).unwrap();
        assert_eq!(r.datasets[0].identity_violations(), 1);
    }

    #[test]
    fn synthetic_names_meet_overlap() {
        let mut a = row(2, 10, 6, 4);
        a.v_eq = 1;
        a.v_ch = Some(3);
        a.p = [0, 1, 2, 0];
        let mut b = a.clone();
        b.count = 1;
        b.p = [0, 2, 1, 0];
        let t = table(vec![a, b], Some([0, 1, 1, 0]));
        let r = replay_published(&t).unwrap();
        assert!(compare_with_published(&r, &t).is_empty(), "{:?}", compare_with_published(&r, &t));
        let bad = table(t.datasets[0].rows.clone(), Some([0, 1, 2, 0]));
        assert!(matches!(replay_published(&bad), Err(ReplayError::Inconsistent { .. })));
    }

    #[test]
    fn bundled_files_parse() {
        for (name, text) in published::ALL {
            let t = parse_numbers(text).unwrap_or_else(|e| panic!("{name}: {e}"));
            let r = replay_published(&t).unwrap();
            assert_eq!(compare_with_published(&r, &t), Vec::<String>::new(), "{name}");
        }
    }
}
