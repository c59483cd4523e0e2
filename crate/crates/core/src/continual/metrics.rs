//! Accuracy bookkeeping and the average-forgetting metric.

use crate::error::{Error, Result};

/// `acc[t_eval][t_after]`, defined for `t_eval ≤ t_after`. Stored column by
/// column: column `t` holds the accuracies of tasks `0..=t` after training
/// task `t`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AccuracyMatrix {
    columns: Vec<Vec<f64>>,
}

impl AccuracyMatrix {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a `T × T` matrix from full rows; entries above the diagonal
    /// (`t_eval > t_after`) are ignored.
    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let t = rows.len();
        let mut m = Self::new();
        for after in 0..t {
            let mut col = Vec::with_capacity(after + 1);
            for row in rows.iter().take(after + 1) {
                if row.len() != t {
                    return Err(Error::DimMismatch {
                        op: "AccuracyMatrix::from_rows",
                        expected: t,
                        got: row.len(),
                    });
                }
                col.push(row[after]);
            }
            m.push_column(col)?;
        }
        Ok(m)
    }

    /// Appends the column for the next task.
    pub fn push_column(&mut self, column: Vec<f64>) -> Result<()> {
        if column.len() != self.columns.len() + 1 {
            return Err(Error::DimMismatch {
                op: "AccuracyMatrix::push_column",
                expected: self.columns.len() + 1,
                got: column.len(),
            });
        }
        if let Some(bad) = column.iter().find(|a| !(0.0..=1.0).contains(*a)) {
            return Err(Error::InvalidArgument(format!("accuracy {bad} outside [0, 1]")));
        }
        self.columns.push(column);
        Ok(())
    }

    pub fn num_tasks(&self) -> usize {
        self.columns.len()
    }

    pub fn get(&self, t_eval: usize, t_after: usize) -> Option<f64> {
        self.columns.get(t_after).and_then(|c| c.get(t_eval)).copied()
    }

    pub fn column(&self, t_after: usize) -> Option<&[f64]> {
        self.columns.get(t_after).map(|c| c.as_slice())
    }

    /// Mean accuracy over all tasks after the last one.
    pub fn final_average(&self) -> Option<f64> {
        let last = self.columns.last()?;
        Some(last.iter().sum::<f64>() / last.len() as f64)
    }
}

/// `(1/(T−1)) Σ_{t'<T} [max_{t'≤t≤T} acc[t'][t] − acc[t'][T]]`.
pub fn forgetting(m: &AccuracyMatrix) -> Result<f64> {
    let t = m.num_tasks();
    if t < 2 {
        return Err(Error::InvalidArgument(format!(
            "forgetting needs at least 2 tasks, got {t}"
        )));
    }
    let last = t - 1;
    let total: f64 = (0..last)
        .map(|task| {
            let best = (task..t)
                .map(|after| m.columns[after][task])
                .fold(f64::NEG_INFINITY, f64::max);
            best - m.columns[last][task]
        })
        .sum();
    Ok(total / last as f64)
}
