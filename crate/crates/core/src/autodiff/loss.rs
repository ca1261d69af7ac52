use super::{Result, Tape, TensorError, Var};

/// Which columns of a trajectory-major residual enter a loss average.
///
/// The residual has `n_batch · steps` columns; trajectory `k` owns columns
/// `k·steps .. (k+1)·steps`. Time steps `first..=last` (1-based) of every
/// trajectory are averaged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AveragingSpec {
    pub n_batch: usize,
    pub steps: usize,
    pub first: usize,
    pub last: usize,
}

impl AveragingSpec {
    pub fn all(n_batch: usize, steps: usize) -> Self {
        Self {
            n_batch,
            steps,
            first: 1,
            last: steps,
        }
    }

    pub fn columns(&self) -> Vec<usize> {
        (0..self.n_batch)
            .flat_map(|k| (self.first..=self.last).map(move |j| k * self.steps + j - 1))
            .collect()
    }
}

impl Tape {
    /// Sum over parts of the mean per-snapshot 2-norm of each residual,
    /// taken over the columns named by the part's [`AveragingSpec`].
    pub fn reduce_loss(&mut self, parts: &[(Var, AveragingSpec)]) -> Result<Var> {
        let mut total: Option<Var> = None;
        for &(residual, spec) in parts {
            if spec.first == 0 || spec.first > spec.last || spec.last > spec.steps {
                return Err(TensorError::Contract(format!(
                    "reduce_loss: empty or invalid range {}..={} of {} steps",
                    spec.first, spec.last, spec.steps
                )));
            }
            let (_, cols) = self.shape(residual);
            if cols != spec.n_batch * spec.steps {
                return Err(TensorError::Contract(format!(
                    "reduce_loss: residual has {cols} columns, expected {} x {}",
                    spec.n_batch, spec.steps
                )));
            }
            let selected = if spec.first == 1 && spec.last == spec.steps {
                residual
            } else {
                self.select_cols(residual, &spec.columns())?
            };
            let norms = self.col_norms(selected)?;
            let mean = self.mean(norms)?;
            total = Some(match total {
                Some(t) => self.add(t, mean)?,
                None => mean,
            });
        }
        total.ok_or(TensorError::Empty { op: "reduce_loss" })
    }
}
