use nalgebra::{DMatrix, DVector};

use crate::error::{GampiError, Result};
use crate::glm::Family;

/// Observations of `p` primary variables (`y`, n×p) and `q` instruments
/// (`x`, n×q), with one GLM family per primary column.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub y: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub families: Vec<Family>,
}

impl Dataset {
    pub fn new(y: DMatrix<f64>, x: DMatrix<f64>, families: Vec<Family>) -> Result<Self> {
        if y.nrows() != x.nrows() {
            return Err(GampiError::invalid(format!(
                "primary block has {} rows but instrument block has {}",
                y.nrows(),
                x.nrows()
            )));
        }
        if y.nrows() < 2 {
            return Err(GampiError::invalid("at least two observations are required"));
        }
        if y.ncols() == 0 || x.ncols() == 0 {
            return Err(GampiError::invalid("need at least one primary and one instrument"));
        }
        if families.len() != y.ncols() {
            return Err(GampiError::invalid(format!(
                "{} families given for {} primary columns",
                families.len(),
                y.ncols()
            )));
        }
        for (j, family) in families.iter().enumerate() {
            if let Some(bad) = y.column(j).iter().find(|v| !family.in_support(**v)) {
                return Err(GampiError::invalid(format!(
                    "column y{} holds {bad}, outside the {family} support",
                    j + 1
                )));
            }
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(GampiError::invalid("instrument block contains non-finite values"));
        }
        Ok(Self { y, x, families })
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }

    pub fn p(&self) -> usize {
        self.y.ncols()
    }

    pub fn q(&self) -> usize {
        self.x.ncols()
    }

    pub fn response(&self, j: usize) -> DVector<f64> {
        self.y.column(j).into_owned()
    }
}

/// Sample standard deviation of a column, or `None` when it is constant.
pub(crate) fn column_sd(values: &[f64]) -> Option<f64> {
    let count = values.len();
    if count < 2 {
        return None;
    }
    let mean = values.iter().sum::<f64>() / count as f64;
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    let sd = (ss / (count - 1) as f64).sqrt();
    (sd > 1e-12 * (1.0 + mean.abs())).then_some(sd)
}

/// `z` with a constant column appended. Pipeline regressions carry this
/// unpenalized intercept; it is dropped from reported coefficients.
pub(crate) fn with_intercept(z: DMatrix<f64>) -> DMatrix<f64> {
    let d = z.ncols();
    z.insert_column(d, 1.0)
}

/// Divides each column by its standard deviation (no centering, so the
/// interceptless model is unchanged) and returns the scales used. Constant
/// columns keep scale 1.
pub(crate) fn scale_columns(m: &mut DMatrix<f64>) -> Vec<f64> {
    let mut scales = Vec::with_capacity(m.ncols());
    for mut col in m.column_iter_mut() {
        let s = column_sd(col.as_slice()).unwrap_or(1.0);
        col /= s;
        scales.push(s);
    }
    scales
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dataset_validation() {
        let y = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 2.0]);
        let x = DMatrix::from_row_slice(3, 1, &[0.1, 0.2, 0.3]);
        assert!(Dataset::new(y.clone(), x.clone(), vec![Family::Bernoulli]).is_err());
        assert!(Dataset::new(y.clone(), x.clone(), vec![Family::Poisson]).is_ok());
        assert!(Dataset::new(y, x, vec![]).is_err());
    }

    #[test]
    fn sd_of_constant_is_none() {
        assert_eq!(column_sd(&[2.0, 2.0, 2.0]), None);
        let sd = column_sd(&[1.0, 2.0, 3.0]).unwrap();
        assert!((sd - 1.0).abs() < 1e-15);
    }
}
