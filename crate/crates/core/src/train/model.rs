use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Result, TrainError};
use crate::autodiff::{Matrix, Tape, Var};

/// Number of affine maps in each network: input, three hidden, output.
pub const AFFINE_MAPS: usize = 4;

/// One affine map `x ↦ W x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Layer {
    fn init(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Self {
        let a = (6.0 / fan_in as f64).sqrt();
        Self {
            weight: Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-a..a)),
            bias: Matrix::zeros(fan_out, 1),
        }
    }
}

/// Encoder `R^{N_s} → R^{N_e}` and mirrored decoder, ReLU on hidden layers.
#[derive(Debug, Clone, PartialEq)]
pub struct AutoencoderParams {
    pub encoder: Vec<Layer>,
    pub decoder: Vec<Layer>,
}

/// Tape handles for every weight and bias, encoder first.
#[derive(Debug, Clone)]
pub struct ParamVars {
    pub encoder: Vec<(Var, Var)>,
    pub decoder: Vec<(Var, Var)>,
}

impl ParamVars {
    pub fn all(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }

    pub fn weights(&self) -> Vec<Var> {
        self.encoder.iter().chain(&self.decoder).map(|&(w, _)| w).collect()
    }
}

impl AutoencoderParams {
    /// Uniform `±sqrt(6 / fan_in)` weights, zero biases.
    pub fn init(n_s: usize, n_e: usize, hidden: usize, seed: u64) -> Result<Self> {
        if n_e < n_s {
            return Err(TrainError::Config(format!("latent dimension {n_e} below state dimension {n_s}")));
        }
        if n_s == 0 || hidden == 0 {
            return Err(TrainError::Config("widths must be positive".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let widths = [n_s, hidden, hidden, hidden, n_e];
        let encoder = widths.windows(2).map(|w| Layer::init(&mut rng, w[0], w[1])).collect();
        let decoder = widths
            .windows(2)
            .rev()
            .map(|w| Layer::init(&mut rng, w[1], w[0]))
            .collect();
        Ok(Self { encoder, decoder })
    }

    pub fn state_dim(&self) -> usize {
        self.encoder[0].weight.ncols()
    }

    pub fn latent_dim(&self) -> usize {
        self.encoder[AFFINE_MAPS - 1].weight.nrows()
    }

    pub fn hidden(&self) -> usize {
        self.encoder[0].weight.nrows()
    }

    /// Weights and biases in [`ParamVars::all`] order.
    pub fn tensors(&self) -> Vec<&Matrix> {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        self.encoder
            .iter_mut()
            .chain(self.decoder.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    /// Sum of squared weight entries, biases excluded.
    pub fn weight_penalty(&self) -> f64 {
        self.encoder
            .iter()
            .chain(&self.decoder)
            .map(|l| l.weight.norm_squared())
            .sum()
    }

    pub fn check(&self) -> Result<()> {
        let ok = self.encoder.len() == AFFINE_MAPS
            && self.decoder.len() == AFFINE_MAPS
            && self.encoder.iter().chain(&self.decoder).all(|l| l.bias.shape() == (l.weight.nrows(), 1))
            && self.encoder.windows(2).all(|w| w[0].weight.nrows() == w[1].weight.ncols())
            && self.decoder.windows(2).all(|w| w[0].weight.nrows() == w[1].weight.ncols())
            && self.decoder[0].weight.ncols() == self.latent_dim()
            && self.decoder[AFFINE_MAPS - 1].weight.nrows() == self.state_dim();
        if !ok {
            return Err(TrainError::Shape("inconsistent autoencoder layer shapes".into()));
        }
        Ok(())
    }

    pub fn on_tape(&self, tape: &mut Tape) -> Result<ParamVars> {
        let mut put = |ls: &[Layer]| -> Result<Vec<(Var, Var)>> {
            ls.iter()
                .map(|l| Ok((tape.param(l.weight.clone())?, tape.param(l.bias.clone())?)))
                .collect()
        };
        let encoder = put(&self.encoder)?;
        let decoder = put(&self.decoder)?;
        Ok(ParamVars { encoder, decoder })
    }
}

fn forward_values(layers: &[Layer], x: &Matrix) -> Result<Matrix> {
    let mut h = x.clone();
    for (i, l) in layers.iter().enumerate() {
        let mut z = &l.weight * &h;
        for mut c in z.column_iter_mut() {
            c += l.bias.column(0);
        }
        if i + 1 < layers.len() {
            z.apply(|v| *v = v.max(0.0));
        }
        h = z;
    }
    if h.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Divergence("non-finite network activation".into()));
    }
    Ok(h)
}

fn check_input(expected: usize, x: &Matrix, what: &str) -> Result<()> {
    if x.nrows() != expected {
        return Err(TrainError::Shape(format!("{what} input has {} rows, expected {expected}", x.nrows())));
    }
    Ok(())
}

/// Encodes every column of an `N_s × cols` batch.
pub fn encode(params: &AutoencoderParams, batch: &Matrix) -> Result<Matrix> {
    check_input(params.state_dim(), batch, "encoder")?;
    forward_values(&params.encoder, batch)
}

/// Decodes every column of an `N_e × cols` latent batch.
pub fn decode(params: &AutoencoderParams, latent: &Matrix) -> Result<Matrix> {
    check_input(params.latent_dim(), latent, "decoder")?;
    forward_values(&params.decoder, latent)
}

/// Differentiable network application.
pub fn forward_on_tape(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let z = tape.matmul(w, h)?;
        let z = tape.add_bias(z, b)?;
        h = if i + 1 < layers.len() { tape.relu(z)? } else { z };
    }
    if tape.value(h).iter().any(|v| !v.is_finite()) {
        return Err(TrainError::Divergence("non-finite network activation".into()));
    }
    Ok(h)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shapes_and_init_bounds() {
        let p = AutoencoderParams::init(3, 5, 16, 1).unwrap();
        p.check().unwrap();
        assert_eq!((p.state_dim(), p.latent_dim(), p.hidden()), (3, 5, 16));
        assert_eq!(p.encoder.len(), AFFINE_MAPS);
        let bound = (6.0f64 / 3.0).sqrt();
        assert!(p.encoder[0].weight.iter().all(|w| w.abs() <= bound));
        assert!(p.tensors().iter().skip(1).step_by(2).all(|b| b.iter().all(|&x| x == 0.0)));
        assert_eq!(p.decoder[0].weight.shape(), (16, 5));
        assert_eq!(p.decoder[3].weight.shape(), (3, 16));
        let y = Matrix::from_fn(3, 7, |i, j| (i + j) as f64);
        assert_eq!(decode(&p, &encode(&p, &y).unwrap()).unwrap().shape(), y.shape());
        assert!(AutoencoderParams::init(3, 2, 16, 1).is_err());
    }

    #[test]
    fn identity_path_pads_input() {
        // positive inputs pass the ReLUs unchanged on an identity path
        let mut p = AutoencoderParams::init(2, 4, 4, 0).unwrap();
        for l in p.encoder.iter_mut() {
            l.weight = Matrix::identity(l.weight.nrows(), l.weight.ncols());
        }
        let y = Matrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.5, 0.25, 4.0]);
        let z = encode(&p, &y).unwrap();
        assert_eq!(z.rows(0, 2), y);
        assert!(z.rows(2, 2).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_weights_give_output_bias() {
        let mut p = AutoencoderParams::init(3, 3, 8, 2).unwrap();
        for l in p.decoder.iter_mut() {
            l.weight.fill(0.0);
        }
        p.decoder[3].bias = Matrix::from_column_slice(3, 1, &[1.0, -2.0, 0.5]);
        let out = decode(&p, &Matrix::from_fn(3, 4, |i, j| (i * j) as f64 - 1.0)).unwrap();
        for c in out.column_iter() {
            assert_eq!(c.as_slice(), &[1.0, -2.0, 0.5]);
        }
    }

    #[test]
    fn tape_matches_values() {
        let p = AutoencoderParams::init(3, 3, 8, 4).unwrap();
        let y = Matrix::from_fn(3, 6, |i, j| ((i * 7 + j) as f64).sin());
        let mut tape = Tape::new();
        let vars = p.on_tape(&mut tape).unwrap();
        let x = tape.constant(y.clone()).unwrap();
        let z = forward_on_tape(&mut tape, &vars.encoder, x).unwrap();
        assert_eq!(tape.value(z), &encode(&p, &y).unwrap());
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(
            AutoencoderParams::init(3, 3, 8, 11).unwrap(),
            AutoencoderParams::init(3, 3, 8, 11).unwrap()
        );
        assert_ne!(
            AutoencoderParams::init(3, 3, 8, 11).unwrap(),
            AutoencoderParams::init(3, 3, 8, 12).unwrap()
        );
    }
}
