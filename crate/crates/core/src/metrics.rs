//! Edge-set accuracy: confusion counts over ordered pairs, FPR, FDR,
//! F-score, MCC, and structural Hamming distance.

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{GampiError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub fpr: Option<f64>,
    pub fdr: Option<f64>,
    pub fscore: Option<f64>,
    pub mcc: Option<f64>,
    pub shd: usize,
    /// Squared Frobenius distance between effect matrices, when both are known.
    pub frobenius: Option<f64>,
}

impl EvalReport {
    pub const CSV_HEADER: &'static str = "tp,fp,tn,fn,fpr,fdr,fscore,mcc,shd,frobenius";

    pub fn csv_row(&self) -> String {
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x}"));
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.tp,
            self.fp,
            self.tn,
            self.fn_,
            f(self.fpr),
            f(self.fdr),
            f(self.fscore),
            f(self.mcc),
            self.shd,
            f(self.frobenius)
        )
    }
}

fn adjacency(edges: &[(usize, usize)], p: usize) -> Result<Vec<Vec<bool>>> {
    let mut adj = vec![vec![false; p]; p];
    for &(k, j) in edges {
        if k >= p || j >= p {
            return Err(GampiError::invalid(format!("edge ({k}, {j}) outside {p} nodes")));
        }
        if k == j {
            return Err(GampiError::invalid(format!("self-loop on node {k}")));
        }
        adj[k][j] = true;
    }
    Ok(adj)
}

fn ratio(num: f64, den: f64) -> Option<f64> {
    (den > 0.0).then(|| num / den)
}

/// Compares an estimated edge set against the truth on `p` nodes.
pub fn evaluate(estimated: &[(usize, usize)], truth: &[(usize, usize)], p: usize) -> Result<EvalReport> {
    let est = adjacency(estimated, p)?;
    let tru = adjacency(truth, p)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for k in 0..p {
        for j in (0..p).filter(|&j| j != k) {
            match (est[k][j], tru[k][j]) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, false) => tn += 1,
                (false, true) => fn_ += 1,
            }
        }
    }
    let (tpf, fpf, tnf, fnf) = (tp as f64, fp as f64, tn as f64, fn_ as f64);
    let fscore = if tp + fp == 0 || tp + fn_ == 0 {
        None
    } else {
        Some(2.0 * tpf / (2.0 * tpf + fpf + fnf))
    };
    let mcc_den = (tpf + fpf) * (tpf + fnf) * (tnf + fpf) * (tnf + fnf);
    Ok(EvalReport {
        tp,
        fp,
        tn,
        fn_,
        fpr: ratio(fpf, fpf + tnf),
        fdr: ratio(fpf, tpf + fpf),
        fscore,
        mcc: ratio(tpf * tnf - fpf * fnf, mcc_den.sqrt()),
        shd: shd_adj(&est, &tru),
        frobenius: None,
    })
}

fn shd_adj(a: &[Vec<bool>], b: &[Vec<bool>]) -> usize {
    let p = a.len();
    let mut total = 0;
    for k in 0..p {
        for j in k + 1..p {
            if (a[k][j], a[j][k]) != (b[k][j], b[j][k]) {
                total += 1;
            }
        }
    }
    total
}

/// Structural Hamming distance: one per unordered pair whose status
/// differs, so a reversed edge costs 1.
pub fn shd(g1: &[(usize, usize)], g2: &[(usize, usize)], p: usize) -> Result<usize> {
    Ok(shd_adj(&adjacency(g1, p)?, &adjacency(g2, p)?))
}

/// `‖a − b‖²_F`.
pub fn frobenius_sq(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(GampiError::invalid("matrices differ in shape"));
    }
    Ok((a - b).norm_squared())
}

/// Mean and standard error of the defined values, with the count used.
pub fn mean_se(values: &[Option<f64>]) -> (Option<f64>, Option<f64>, usize) {
    let v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return (None, None, 0);
    }
    let m = v.len() as f64;
    let mean = v.iter().sum::<f64>() / m;
    let se = if v.len() > 1 {
        (v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (m - 1.0) / m).sqrt()
    } else {
        0.0
    };
    (Some(mean), Some(se), v.len())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_estimate() {
        let t = [(0, 1), (1, 2)];
        let r = evaluate(&t, &t, 3).unwrap();
        assert_eq!((r.fpr, r.fdr, r.fscore, r.mcc, r.shd), (Some(0.0), Some(0.0), Some(1.0), Some(1.0), 0));
    }

    #[test]
    fn empty_estimate_against_chain() {
        let truth: Vec<(usize, usize)> = (0..25)
            .flat_map(|c| (0..3).map(move |s| (4 * c + s, 4 * c + s + 1)))
            .collect();
        let r = evaluate(&[], &truth, 100).unwrap();
        assert_eq!(r.fscore, None);
        assert_eq!(r.fdr, None);
        assert_eq!(r.fpr, Some(0.0));
        assert_eq!(r.shd, 75);
    }

    #[test]
    fn shd_examples() {
        assert_eq!(shd(&[(0, 1)], &[(1, 0)], 2).unwrap(), 1);
        assert_eq!(shd(&[(0, 1), (1, 2)], &[(1, 0)], 3).unwrap(), 2);
    }

    #[test]
    fn rejects_self_loops() {
        assert!(evaluate(&[(1, 1)], &[], 3).is_err());
    }

    #[test]
    fn csv_renders_na() {
        let r = evaluate(&[], &[(0, 1)], 2).unwrap();
        assert!(r.csv_row().contains("NA"));
        assert_eq!(mean_se(&[Some(1.0)]), (Some(1.0), Some(0.0), 1));
    }
}
