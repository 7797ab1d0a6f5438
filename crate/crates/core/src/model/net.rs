use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::heads::{head_forward, HeadConfig};
use crate::tensor::{Tape, Tensor, Var};

/// Final feature-map count of the default network.
pub const DEFAULT_K: usize = 32;

/// Output channels of the first two conv blocks; the third emits `k`.
pub const CHANNEL_PLAN: [usize; 2] = [16, 32];

pub const NUM_CLASSES: usize = 2;

/// Input geometry and final feature count.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NetShape {
    pub in_channels: usize,
    pub side: usize,
    pub k: usize,
}

impl Default for NetShape {
    fn default() -> Self {
        NetShape {
            in_channels: 1,
            side: 32,
            k: DEFAULT_K,
        }
    }
}

impl NetShape {
    /// Spatial side of the final stack after three 2x pools.
    pub fn stack_side(&self) -> usize {
        self.side / 8
    }

    fn validate(&self) -> Result<()> {
        if self.in_channels == 0 || self.k == 0 || self.side == 0 || !self.side.is_multiple_of(8) {
            return Err(Error::invalid(format!(
                "network needs in_channels, k >= 1 and side a positive multiple of 8, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub tensor: Tensor,
}

/// Three `conv3x3 → relu → maxpool2x2` blocks (`c_in → 16 → 32 → k`), a
/// head from [`crate::heads`], and one fully connected layer.
///
/// No spatial pooling sits between the last block and the head, so the
/// causality engine sees `[k, side/8, side/8]` maps.
#[derive(Clone, Debug, PartialEq)]
pub struct TinyConvNet {
    shape: NetShape,
    head: HeadConfig,
    /// Seeds the random factors/maps of the damaged heads.
    seed: u64,
    params: Vec<Param>,
}

/// Tape handles produced by one forward pass.
pub struct Forward {
    pub params: Vec<Var>,
    pub stack: Var,
    pub logits: Var,
}

impl TinyConvNet {
    /// He-uniform conv kernels, zero conv biases, and a
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))` classifier, all drawn from `seed`.
    pub fn new(shape: NetShape, head: HeadConfig, seed: u64) -> Result<Self> {
        shape.validate()?;
        head.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(0x1417);
        let chans = [shape.in_channels, CHANNEL_PLAN[0], CHANNEL_PLAN[1], shape.k];
        let mut params = Vec::with_capacity(8);
        for b in 0..3 {
            let (c_in, c_out) = (chans[b], chans[b + 1]);
            let bound = (6.0 / (c_in * 9) as f64).sqrt() as f32;
            params.push(Param {
                name: format!("conv{}.weight", b + 1),
                tensor: uniform(&mut rng, &[c_out, c_in, 3, 3], bound),
            });
            params.push(Param {
                name: format!("conv{}.bias", b + 1),
                tensor: Tensor::zeros(&[c_out])?,
            });
        }
        let n = shape.stack_side();
        let fan_in = head.flat_len(shape.k, n);
        let bound = (1.0 / fan_in as f64).sqrt() as f32;
        params.push(Param {
            name: "fc.weight".into(),
            tensor: uniform(&mut rng, &[NUM_CLASSES, fan_in], bound),
        });
        params.push(Param {
            name: "fc.bias".into(),
            tensor: uniform(&mut rng, &[NUM_CLASSES], bound),
        });
        Ok(TinyConvNet {
            shape,
            head,
            seed,
            params,
        })
    }

    /// Rebuilds a network from stored parameters, checking names and shapes.
    pub fn from_params(shape: NetShape, head: HeadConfig, seed: u64, params: Vec<Param>) -> Result<Self> {
        let template = Self::new(shape, head, seed)?;
        if template.params.len() != params.len() {
            return Err(Error::invalid(format!(
                "expected {} parameters, got {}",
                template.params.len(),
                params.len()
            )));
        }
        for (t, p) in template.params.iter().zip(&params) {
            if t.name != p.name || t.tensor.shape() != p.tensor.shape() {
                return Err(Error::shape(
                    "from_params",
                    format!(
                        "expected {} {:?}, got {} {:?}",
                        t.name,
                        t.tensor.shape(),
                        p.name,
                        p.tensor.shape()
                    ),
                ));
            }
        }
        Ok(TinyConvNet {
            shape,
            head,
            seed,
            params,
        })
    }

    pub fn shape(&self) -> NetShape {
        self.shape
    }

    pub fn head(&self) -> &HeadConfig {
        &self.head
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.tensor.numel()).sum()
    }

    /// Input length of the classification layer.
    pub fn classifier_inputs(&self) -> usize {
        self.params[6].tensor.shape()[1]
    }

    /// Pushes every parameter onto `tape`, tracked or constant.
    pub fn push_params(&self, tape: &mut Tape, track: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| {
                if track {
                    tape.leaf(p.tensor.clone().with_requires_grad())
                } else {
                    tape.constant(p.tensor.clone())
                }
            })
            .collect()
    }

    /// Backbone: image `[c, h, w]` to the final `[k, n, n]` stack.
    pub fn features(&self, tape: &mut Tape, image: Var, params: &[Var]) -> Result<Var> {
        let expected = [self.shape.in_channels, self.shape.side, self.shape.side];
        if tape.value(image).shape() != expected {
            return Err(Error::shape(
                "forward",
                format!("image {:?}, network expects {expected:?}", tape.value(image).shape()),
            ));
        }
        let mut x = image;
        for b in 0..3 {
            let conv = tape.conv2d(x, params[2 * b], params[2 * b + 1])?;
            let act = tape.relu(conv);
            x = tape.maxpool2d(act)?;
        }
        Ok(x)
    }

    /// Head and classifier applied to a feature stack.
    pub fn classify(&self, tape: &mut Tape, stack: Var, params: &[Var], draw: u64) -> Result<Var> {
        let flat = head_forward(tape, stack, &self.head, self.seed, draw)?;
        tape.linear(flat, params[6], params[7])
    }

    pub fn forward(&self, tape: &mut Tape, image: &Tensor, draw: u64, track: bool) -> Result<Forward> {
        let params = self.push_params(tape, track);
        let image = tape.constant(image.clone());
        let stack = self.features(tape, image, &params)?;
        let logits = self.classify(tape, stack, &params, draw)?;
        Ok(Forward {
            params,
            stack,
            logits,
        })
    }

    /// Class logits for one image.
    pub fn logits(&self, image: &Tensor, draw: u64) -> Result<Vec<f32>> {
        let mut tape = Tape::new();
        let fwd = self.forward(&mut tape, image, draw, false)?;
        Ok(tape.value(fwd.logits).data().to_vec())
    }
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize], bound: f32) -> Tensor {
    let n = shape.iter().product();
    let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
    Tensor::from_parts(shape.to_vec(), data)
}
