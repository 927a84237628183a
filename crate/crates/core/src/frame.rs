use crate::error::{Result, SbllError};

/// The finite population: `N` rows of `d` auxiliary covariates, stored
/// column-major, with an optional study variable.
#[derive(Debug, Clone, PartialEq)]
pub struct PopulationFrame {
    columns: Vec<Vec<f64>>,
    responses: Option<Vec<f64>>,
    names: Vec<String>,
}

impl PopulationFrame {
    pub fn new(columns: Vec<Vec<f64>>, responses: Option<Vec<f64>>, names: Vec<String>) -> Result<Self> {
        if columns.len() != names.len() {
            return Err(SbllError::InvalidInput(format!(
                "{} covariate columns but {} names",
                columns.len(),
                names.len()
            )));
        }
        let len = match (columns.first(), responses.as_ref()) {
            (Some(c), _) => c.len(),
            (None, Some(y)) => y.len(),
            (None, None) => 0,
        };
        if len == 0 {
            return Err(SbllError::InvalidInput("population frame is empty".into()));
        }
        if columns.iter().any(|c| c.len() != len) || responses.as_ref().is_some_and(|y| y.len() != len) {
            return Err(SbllError::InvalidInput("ragged population frame".into()));
        }
        if columns.iter().flatten().chain(responses.iter().flatten()).any(|v| !v.is_finite()) {
            return Err(SbllError::InvalidInput("population frame contains non-finite values".into()));
        }
        Ok(Self { columns, responses, names })
    }

    /// Number of population units `N`.
    pub fn len(&self) -> usize {
        self.columns
            .first()
            .map(Vec::len)
            .or_else(|| self.responses.as_ref().map(Vec::len))
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Number of covariates `d`.
    pub fn dim(&self) -> usize {
        self.columns.len()
    }

    pub fn column(&self, alpha: usize) -> &[f64] {
        &self.columns[alpha]
    }

    pub fn columns(&self) -> &[Vec<f64>] {
        &self.columns
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn responses(&self) -> Option<&[f64]> {
        self.responses.as_deref()
    }

    pub fn response_total(&self) -> Option<f64> {
        self.responses.as_ref().map(|y| y.iter().sum())
    }

    pub fn column_total(&self, alpha: usize) -> f64 {
        self.columns[alpha].iter().sum()
    }

    /// Frame restricted to the given covariates, in the given order.
    pub fn select(&self, covariates: &[usize]) -> Result<Self> {
        if let Some(&bad) = covariates.iter().find(|&&a| a >= self.dim()) {
            return Err(SbllError::InvalidInput(format!("covariate {bad} out of range (d = {})", self.dim())));
        }
        Ok(Self {
            columns: covariates.iter().map(|&a| self.columns[a].clone()).collect(),
            responses: self.responses.clone(),
            names: covariates.iter().map(|&a| self.names[a].clone()).collect(),
        })
    }

    pub fn with_responses(&self, responses: Vec<f64>) -> Result<Self> {
        Self::new(self.columns.clone(), Some(responses), self.names.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn select_keeps_order_and_responses() {
        let f = PopulationFrame::new(
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
            Some(vec![0.5, 0.25]),
            vec!["a".into(), "b".into(), "c".into()],
        )
        .unwrap();
        let g = f.select(&[2, 0]).unwrap();
        assert_eq!(g.names(), &["c".to_string(), "a".to_string()]);
        assert_eq!(g.column(0), &[5.0, 6.0]);
        assert_eq!(g.responses(), Some(&[0.5, 0.25][..]));
        assert_eq!(f.column_total(1), 7.0);
        assert!(f.select(&[3]).is_err());
    }

    #[test]
    fn rejects_ragged_and_nan() {
        assert!(PopulationFrame::new(vec![vec![1.0], vec![1.0, 2.0]], None, vec!["a".into(), "b".into()]).is_err());
        assert!(PopulationFrame::new(vec![vec![f64::NAN]], None, vec!["a".into()]).is_err());
        assert!(PopulationFrame::new(vec![], None, vec![]).is_err());
    }
}
