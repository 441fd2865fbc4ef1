//! Retrieval metrics: mAP, topK precision, and a two-sample t-test over
//! per-query average precision.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::dataset::Labels;
use crate::error::{Error, Result};
use crate::hamming::{CodeMatrix, RetrievalIndex};
use crate::objective::Task;

/// `ks` used when none are given: 100, 200, ..., 1000.
pub fn default_ks() -> Vec<usize> {
    (1..=10).map(|i| i * 100).collect()
}

/// 1 iff the two label vectors share a positive entry.
pub fn relevance(query: &[u8], db: &[u8]) -> Result<bool> {
    if query.len() != db.len() {
        return Err(Error::contract(format!(
            "label vectors of length {} and {}",
            query.len(),
            db.len()
        )));
    }
    Ok(query.iter().zip(db).any(|(&a, &b)| a == 1 && b == 1))
}

/// Average precision of a ranked relevance list; 0 when nothing is relevant.
pub fn average_precision(ranked: &[bool]) -> f64 {
    let mut hits = 0usize;
    let mut acc = 0.0;
    for (p, &rel) in ranked.iter().enumerate() {
        if rel {
            hits += 1;
            acc += hits as f64 / (p + 1) as f64;
        }
    }
    if hits == 0 {
        0.0
    } else {
        acc / hits as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub task: Task,
    pub r: usize,
    pub map: f64,
    pub topk_curve: Vec<(usize, f64)>,
    pub per_query_ap: Vec<f64>,
    pub n_query: usize,
    pub n_db: usize,
}

/// Ranks every query against the whole index and scores it.
///
/// `cutoff` truncates the ranking used for AP (mAP@K); `None` scores the
/// full ranking.
pub fn evaluate(
    task: Task,
    index: &RetrievalIndex,
    query_codes: &CodeMatrix,
    query_labels: &Labels,
    ks: &[usize],
    cutoff: Option<usize>,
) -> Result<EvalReport> {
    let n_db = index.len();
    if query_codes.len() != query_labels.num_instances() {
        return Err(Error::contract(format!(
            "{} query codes but {} query label columns",
            query_codes.len(),
            query_labels.num_instances()
        )));
    }
    if query_codes.bits() != index.codes.bits() {
        return Err(Error::contract(format!(
            "query codes have r = {}, index has r = {}",
            query_codes.bits(),
            index.codes.bits()
        )));
    }
    if query_labels.num_classes() != index.labels.num_classes() {
        return Err(Error::contract("query and database label spaces differ"));
    }
    if let Some(&k) = ks.iter().find(|&&k| k < 1 || k > n_db) {
        return Err(Error::contract(format!("k = {k} outside [1, {n_db}]")));
    }
    if ks.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::contract("ks must be strictly increasing"));
    }
    if cutoff == Some(0) {
        return Err(Error::contract("mAP cutoff must be >= 1"));
    }

    let per_query: Vec<(f64, Vec<f64>)> = (0..query_codes.len())
        .into_par_iter()
        .map(|q| {
            let ranking = index.rank(query_codes.code(q))?;
            let rel: Vec<bool> = ranking
                .iter()
                .map(|&p| query_labels.shares_label_with(q, &index.labels, p))
                .collect();
            let depth = cutoff.map_or(rel.len(), |c| c.min(rel.len()));
            let ap = average_precision(&rel[..depth]);
            let mut hits = 0usize;
            let mut precs = Vec::with_capacity(ks.len());
            let mut next = 0;
            for (p, &r) in rel.iter().enumerate() {
                if next == ks.len() {
                    break;
                }
                hits += usize::from(r);
                if p + 1 == ks[next] {
                    precs.push(hits as f64 / ks[next] as f64);
                    next += 1;
                }
            }
            Ok((ap, precs))
        })
        .collect::<Result<_>>()?;

    let n_query = per_query.len();
    let per_query_ap: Vec<f64> = per_query.iter().map(|(ap, _)| *ap).collect();
    let map = if n_query == 0 {
        0.0
    } else {
        per_query_ap.iter().sum::<f64>() / n_query as f64
    };
    let topk_curve = ks
        .iter()
        .enumerate()
        .map(|(i, &k)| {
            let p = if n_query == 0 {
                0.0
            } else {
                per_query.iter().map(|(_, v)| v[i]).sum::<f64>() / n_query as f64
            };
            (k, p)
        })
        .collect();
    Ok(EvalReport {
        task,
        r: index.codes.bits(),
        map,
        topk_curve,
        per_query_ap,
        n_query,
        n_db,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TTest {
    pub t: f64,
    pub p: f64,
    /// Rejects equal means at the 5% level.
    pub reject: bool,
}

pub const T_TEST_ALPHA: f64 = 0.05;

fn mean_var(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Welch's unequal-variance two-sample t-test, two-sided.
pub fn welch_t_test(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::contract("t-test needs at least two samples per group"));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("t-test sample".into()));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (sa, sb) = (va / na, vb / nb);
    let se2 = sa + sb;
    if se2 == 0.0 {
        if ma == mb {
            return Ok(TTest { t: 0.0, p: 1.0, reject: false });
        }
        return Err(Error::contract("t-test is undefined for two constant, different samples"));
    }
    let t = (ma - mb) / se2.sqrt();
    let dof = se2 * se2 / (sa * sa / (na - 1.0) + sb * sb / (nb - 1.0));
    let dist = StudentsT::new(0.0, 1.0, dof).map_err(|e| Error::contract(format!("t distribution: {e}")))?;
    let p = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p, reject: p < T_TEST_ALPHA })
}

/// `k,precision` rows preceded by a single `#` header line describing the
/// report.
pub fn report_csv(report: &EvalReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "# task={},r={},map={:.10},n_query={},n_db={},significance=welch",
        report.task, report.r, report.map, report.n_query, report.n_db
    )
    .expect("string write");
    for (k, p) in &report.topk_curve {
        writeln!(out, "{k},{p:.10}").expect("string write");
    }
    out
}

pub fn emit_csv(report: &EvalReport, path: &Path) -> Result<()> {
    fs::write(path, report_csv(report)).map_err(|e| Error::io(path, e))
}

/// One row of a `method,task,r,map` comparison grid.
#[derive(Debug, Clone, PartialEq)]
pub struct MapRow {
    pub method: String,
    pub task: Task,
    pub r: usize,
    pub map: f64,
}

pub fn map_grid_csv(rows: &[MapRow]) -> String {
    let mut out = String::from("method,task,r,map\n");
    for row in rows {
        writeln!(out, "{},{},{},{:.10}", row.method, row.task, row.r, row.map).expect("string write");
    }
    out
}

pub fn emit_map_grid(rows: &[MapRow], path: &Path) -> Result<()> {
    fs::write(path, map_grid_csv(rows)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn relevance_cases() {
        assert!(relevance(&[1, 0, 1], &[0, 0, 1]).unwrap());
        assert!(!relevance(&[1, 0, 0], &[0, 1, 0]).unwrap());
        assert!(relevance(&[0, 1, 0], &[0, 1, 0]).unwrap());
        assert!(relevance(&[1], &[1, 0]).is_err());
    }

    #[test]
    fn ap_cases() {
        assert_eq!(average_precision(&[true, true, false]), 1.0);
        assert_eq!(average_precision(&[false, true]), 0.5);
        assert!((average_precision(&[true, false, true]) - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision(&[false, false]), 0.0);
    }

    #[test]
    fn ap_ignores_irrelevant_suffix_order() {
        let a = [true, false, true, false, false];
        assert_eq!(average_precision(&a), average_precision(&a[..3]));
    }

    #[test]
    fn t_test_identical() {
        let a = [0.2, 0.4, 0.6];
        let t = welch_t_test(&a, &a).unwrap();
        assert_eq!(t.t, 0.0);
        assert!((t.p - 1.0).abs() < 1e-12);
        assert!(!t.reject);
    }

    #[test]
    fn t_test_separated() {
        let a: Vec<f64> = (0..100).map(|i| 0.9 + 1e-3 * ((i % 7) as f64 - 3.0)).collect();
        let b: Vec<f64> = (0..100).map(|i| 0.1 + 1e-3 * ((i % 5) as f64 - 2.0)).collect();
        let t = welch_t_test(&a, &b).unwrap();
        assert!(t.reject && t.t > 0.0 && t.p < 1e-10);
    }

    #[test]
    fn t_test_degenerate() {
        assert!(welch_t_test(&[1.0], &[1.0, 2.0]).is_err());
        assert!(welch_t_test(&[1.0, 1.0], &[2.0, 2.0]).is_err());
    }

    fn report(ks: &[usize]) -> EvalReport {
        EvalReport {
            task: Task::I2T,
            r: 16,
            map: 0.5,
            topk_curve: ks.iter().map(|&k| (k, 0.25)).collect(),
            per_query_ap: vec![0.5],
            n_query: 1,
            n_db: 10,
        }
    }

    #[test]
    fn csv_rows() {
        let text = report_csv(&report(&[1, 2]));
        let data: Vec<&str> = text.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(data, ["1,0.2500000000", "2,0.2500000000"]);
        assert_eq!(report_csv(&report(&[1, 2])), text);
        let empty = report_csv(&report(&[]));
        assert_eq!(empty.lines().count(), 1);
    }

    #[test]
    fn csv_file_is_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
        emit_csv(&report(&[3, 5]), &a).unwrap();
        emit_csv(&report(&[3, 5]), &b).unwrap();
        assert_eq!(fs::read(a).unwrap(), fs::read(b).unwrap());
    }
}
