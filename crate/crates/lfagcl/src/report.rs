//! Structured reports (TOML) and plot-ready tab-separated tables.

use std::fmt::Write as _;

use lfagcl_core::eval::{KMetrics, MetricReport};
use lfagcl_core::trainer::EpochRecord;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::io::sig6;

pub const LOG_COLUMNS: [&str; 9] = [
    "epoch",
    "bpr",
    "cl_u",
    "cl_i",
    "l2",
    "total",
    "val_recall",
    "val_ndcg",
    "elapsed_ms",
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KRow {
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: usize,
    pub min_degree: u32,
    pub max_degree: u32,
    pub n_users: usize,
    pub metrics: Vec<KRow>,
}

/// Evaluation report as written to disk.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReportFile {
    pub split: String,
    pub checkpoint_sha256: String,
    pub n_users_evaluated: usize,
    pub n_cold_users: usize,
    pub metrics: Vec<KRow>,
    pub groups: Vec<GroupRow>,
    pub config: RunConfig,
}

fn rows(metrics: &[KMetrics]) -> Vec<KRow> {
    metrics
        .iter()
        .map(|m| KRow {
            k: m.k,
            recall: m.recall,
            ndcg: m.ndcg,
        })
        .collect()
}

impl ReportFile {
    pub fn new(split: &str, checkpoint_sha256: String, report: &MetricReport, config: &RunConfig) -> Self {
        Self {
            split: split.to_string(),
            checkpoint_sha256,
            n_users_evaluated: report.n_users_evaluated,
            n_cold_users: report.n_cold_users,
            metrics: rows(&report.metrics),
            groups: report
                .groups
                .iter()
                .map(|g| GroupRow {
                    group: g.group,
                    min_degree: g.min_degree,
                    max_degree: g.max_degree,
                    n_users: g.n_users,
                    metrics: rows(&g.metrics),
                })
                .collect(),
            config: config.clone(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("report serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    /// One row per degree group plus an `all` row.
    pub fn flat_table(&self) -> String {
        let mut out = config_echo(&self.config);
        out.push_str("group\tmin_degree\tmax_degree\tn_users");
        for m in &self.metrics {
            write!(out, "\trecall@{k}\tndcg@{k}", k = m.k).unwrap();
        }
        out.push('\n');
        let mut push_row = |label: &str, lo: u32, hi: u32, n: usize, metrics: &[KRow]| {
            write!(out, "{label}\t{lo}\t{hi}\t{n}").unwrap();
            for m in metrics {
                write!(out, "\t{}\t{}", sig6(m.recall), sig6(m.ndcg)).unwrap();
            }
            out.push('\n');
        };
        for g in &self.groups {
            push_row(&g.group.to_string(), g.min_degree, g.max_degree, g.n_users, &g.metrics);
        }
        let lo = self.groups.first().map_or(0, |g| g.min_degree);
        let hi = self.groups.last().map_or(0, |g| g.max_degree);
        push_row("all", lo, hi, self.n_users_evaluated, &self.metrics);
        out
    }
}

/// The effective configuration as `#`-prefixed TOML lines.
pub fn config_echo(config: &RunConfig) -> String {
    config
        .to_toml()
        .lines()
        .map(|l| format!("# {l}\n"))
        .collect()
}

/// Recovers a configuration echoed by [`config_echo`].
pub fn parse_config_echo(text: &str) -> Option<RunConfig> {
    let body: String = text
        .lines()
        .take_while(|l| l.starts_with('#'))
        .map(|l| format!("{}\n", l.strip_prefix("# ").unwrap_or(&l[1..])))
        .collect();
    RunConfig::from_toml(&body).ok()
}

pub fn log_header(config: &RunConfig) -> String {
    let mut out = config_echo(config);
    out.push_str(&LOG_COLUMNS.join("\t"));
    out.push('\n');
    out
}

/// One training-log line; validation columns read `NA` on other epochs.
pub fn log_line(record: &EpochRecord, elapsed_ms: u128) -> String {
    let l = &record.losses;
    let (recall, ndcg) = match record.validation {
        Some((r, n)) => (sig6(r), sig6(n)),
        None => ("NA".into(), "NA".into()),
    };
    format!(
        "{}\t{}\t{}\t{}\t{}\t{}\t{recall}\t{ndcg}\t{elapsed_ms}\n",
        record.epoch,
        sig6(l.bpr),
        sig6(l.cl_user),
        sig6(l.cl_item),
        sig6(l.l2),
        sig6(l.total),
    )
}

/// `interactions / (users · items)`
pub fn density(interactions: usize, users: usize, items: usize) -> f64 {
    interactions as f64 / (users as f64 * items as f64)
}

/// Dataset summary written by `prepare`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StatsFile {
    pub dataset: String,
    pub users: usize,
    pub items: usize,
    pub interactions: usize,
    pub density: f64,
    pub train: usize,
    pub validation: usize,
    pub test: usize,
    pub lines_read: usize,
    pub duplicates: usize,
    pub malformed: usize,
    pub bundle_sha256: String,
    pub config: RunConfig,
}

impl StatsFile {
    /// `Dataset  #Users  #Items  #Interactions  Density`
    pub fn table(&self) -> String {
        format!(
            "{:<16}{:>10}{:>10}{:>15}{:>11}\n{:<16}{:>10}{:>10}{:>15}{:>11}\n",
            "Dataset",
            "#Users",
            "#Items",
            "#Interactions",
            "Density",
            self.dataset,
            self.users,
            self.items,
            self.interactions,
            sig6(self.density),
        )
    }
}

/// Side-by-side per-group recall of two models.
pub fn group_comparison_table(k: usize, a: &MetricReport, b: &MetricReport, labels: (&str, &str)) -> String {
    let pick = |metrics: &[KMetrics]| metrics.iter().find(|m| m.k == k).map_or(0.0, |m| m.recall);
    let mut out = format!(
        "group\tmin_degree\tmax_degree\tn_users\trecall@{k}_{}\trecall@{k}_{}\timprovement\n",
        labels.0, labels.1
    );
    for (ga, gb) in a.groups.iter().zip(&b.groups) {
        let (ra, rb) = (pick(&ga.metrics), pick(&gb.metrics));
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            ga.group,
            ga.min_degree,
            ga.max_degree,
            ga.n_users,
            sig6(ra),
            sig6(rb),
            sig6(ra - rb)
        )
        .unwrap();
    }
    let (ra, rb) = (pick(&a.metrics), pick(&b.metrics));
    let lo = a.groups.first().map_or(0, |g| g.min_degree);
    let hi = a.groups.last().map_or(0, |g| g.max_degree);
    writeln!(
        out,
        "all\t{lo}\t{hi}\t{}\t{}\t{}\t{}",
        a.n_users_evaluated,
        sig6(ra),
        sig6(rb),
        sig6(ra - rb)
    )
    .unwrap();
    out
}

pub fn sweep_header(axis: &str, ks: &[usize]) -> String {
    let mut out = axis.to_string();
    for k in ks {
        write!(out, "\trecall@{k}\tndcg@{k}").unwrap();
    }
    out.push('\n');
    out
}

pub fn sweep_row(value: f64, report: &MetricReport) -> String {
    let mut out = sig6(value);
    for m in &report.metrics {
        write!(out, "\t{}\t{}", sig6(m.recall), sig6(m.ndcg)).unwrap();
    }
    out.push('\n');
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use lfagcl_core::eval::GroupReport;
    use lfagcl_core::LossBreakdown;

    fn report() -> MetricReport {
        let km = |k, r, n| KMetrics { k, recall: r, ndcg: n };
        MetricReport {
            metrics: vec![km(20, 0.1 + 0.2, 1.0 / 3.0), km(40, 0.5, 0.25)],
            groups: vec![
                GroupReport {
                    group: 0,
                    min_degree: 1,
                    max_degree: 3,
                    n_users: 4,
                    metrics: vec![km(20, 0.2, 0.1), km(40, 0.4, 0.2)],
                },
                GroupReport {
                    group: 1,
                    min_degree: 3,
                    max_degree: 9,
                    n_users: 3,
                    metrics: vec![km(20, 0.4, 0.3), km(40, 0.6, 0.3)],
                },
            ],
            n_users_evaluated: 7,
            n_cold_users: 1,
        }
    }

    #[test]
    fn report_parses_back_losslessly() {
        let file = ReportFile::new("test", "ab".into(), &report(), &RunConfig::default());
        assert_eq!(ReportFile::from_toml(&file.to_toml()).unwrap(), file);
    }

    #[test]
    fn flat_table_shape() {
        let file = ReportFile::new("test", String::new(), &report(), &RunConfig::default());
        let table = file.flat_table();
        assert_eq!(parse_config_echo(&table), Some(RunConfig::default()));
        let body: Vec<&str> = table.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(body.len(), 4);
        assert_eq!(body[0].split('\t').count(), 8);
        assert_eq!(body[3], "all\t1\t9\t7\t0.300000\t0.333333\t0.500000\t0.250000");
    }

    #[test]
    fn log_lines_have_fixed_columns() {
        let mut record = EpochRecord {
            epoch: 3,
            losses: LossBreakdown::default(),
            validation: None,
            skipped_triplets: 0,
        };
        assert_eq!(log_line(&record, 5).trim_end().split('\t').count(), LOG_COLUMNS.len());
        assert!(log_line(&record, 5).contains("\tNA\tNA\t"));
        record.validation = Some((0.5, 0.25));
        assert_eq!(log_line(&record, 5).trim_end().split('\t').count(), LOG_COLUMNS.len());
    }

    #[test]
    fn identical_models_show_zero_improvement() {
        let r = report();
        let table = group_comparison_table(20, &r, &r, ("a", "b"));
        for line in table.lines().skip(1) {
            assert_eq!(line.rsplit('\t').next(), Some("0"));
        }
    }
}
