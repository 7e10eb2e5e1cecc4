//! Sequence segmentation network, loss, optimiser, training loop and
//! checkpoint files.

pub mod checkpoint;
pub mod layers;
pub mod loss;
pub mod net;
pub mod optim;
pub mod tensor;
pub mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::reconstruct::ProbSequence;
use crate::sequence::{SliceSequence, SEQ_LEN};
use crate::volume::Slice2D;

pub use checkpoint::{read_checkpoint, write_checkpoint};
pub use layers::ParamBlock;
pub use loss::{loss, LossBreakdown, LossWeights};
pub use net::Net;
pub use optim::Adam;
pub use tensor::Tensor;
pub use train::{
    history_csv, train, validation_dsc, Checkpoint, CheckpointSet, EpochRecord, Predictor, TrainConfig,
    TrainOutcome,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_channels: usize,
    pub seq_len: usize,
    pub base_width: usize,
    /// Channel multiplier per encoder level; 1 keeps every level at
    /// `base_width`.
    pub width_growth: usize,
    pub depth: usize,
    pub recurrent_hidden: usize,
    pub image_size: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn desk() -> Self {
        ModelConfig {
            input_channels: 2,
            seq_len: SEQ_LEN,
            base_width: 8,
            width_growth: 1,
            depth: 3,
            recurrent_hidden: 8,
            image_size: 32,
            seed: 0,
        }
    }

    pub fn full() -> Self {
        ModelConfig {
            base_width: 16,
            width_growth: 2,
            recurrent_hidden: 64,
            image_size: 144,
            ..Self::desk()
        }
    }

    pub fn width(&self, level: usize) -> usize {
        self.base_width * self.width_growth.pow(level as u32)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Parameter(m));
        if self.input_channels != 2 {
            return bad(format!("input_channels must be 2 (CT, PET), got {}", self.input_channels));
        }
        if self.seq_len != SEQ_LEN {
            return bad(format!("seq_len must be {SEQ_LEN}, got {}", self.seq_len));
        }
        if self.depth == 0 || self.base_width == 0 || self.width_growth == 0 || self.recurrent_hidden == 0 {
            return bad("depth, widths and hidden size must be positive".into());
        }
        let f = 1usize << self.depth;
        if self.image_size == 0 || !self.image_size.is_multiple_of(f) {
            return bad(format!("image_size {} not divisible by 2^depth = {f}", self.image_size));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub values: Vec<f64>,
}

impl ModelParams {
    /// Seeded initialisation from `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let net = Net::new(config);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        Ok(ModelParams {
            config: config.clone(),
            values: net.init_params(&mut rng),
        })
    }

    pub fn validate(&self) -> Result<()> {
        self.config.validate()?;
        let n = Net::new(&self.config).n_params;
        if self.values.len() != n {
            return Err(Error::Checkpoint(format!(
                "parameter vector has {} values, configuration needs {n}",
                self.values.len()
            )));
        }
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Checkpoint("non-finite parameter".into()));
        }
        Ok(())
    }

    pub fn blocks(&self) -> Vec<ParamBlock> {
        Net::new(&self.config).blocks
    }
}

/// Network inputs for one sequence: per slice a `[CT, PET]` tensor.
pub fn sequence_inputs(seq: &SliceSequence, image_size: usize) -> Result<Vec<Tensor>> {
    (0..SEQ_LEN)
        .map(|t| {
            let (ct, pet) = (&seq.ct[t], &seq.pet[t]);
            if ct.width != image_size || ct.height != image_size || !ct.same_dims(pet) {
                return Err(Error::Shape(format!(
                    "sequence slice {}x{} does not match image_size {image_size}",
                    ct.width, ct.height
                )));
            }
            let mut data = ct.data.clone();
            data.extend_from_slice(&pet.data);
            Ok(Tensor::from_data(2, image_size, image_size, data))
        })
        .collect()
}

/// Parameters bound to their network structure, ready for inference.
#[derive(Debug, Clone)]
pub struct Model {
    pub params: ModelParams,
    net: Net,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self> {
        params.validate()?;
        let net = Net::new(&params.config);
        Ok(Model { params, net })
    }

    pub fn net(&self) -> &Net {
        &self.net
    }

    pub fn forward(&self, seq: &SliceSequence) -> Result<ProbSequence> {
        let inputs = sequence_inputs(seq, self.params.config.image_size)?;
        let trace = self.net.forward(&self.params.values, &inputs);
        ProbSequence::new(seq.start_k, probabilities(&trace.logits))
    }
}

/// Sigmoid of the head logits, one map per slice.
pub fn probabilities(logits: &[Tensor]) -> [Slice2D; SEQ_LEN] {
    std::array::from_fn(|t| {
        let z = &logits[t];
        Slice2D {
            width: z.w,
            height: z.h,
            data: z.data.iter().map(|&v| tensor::sigmoid(v)).collect(),
        }
    })
}

impl Predictor for Model {
    fn predict(&self, seq: &SliceSequence) -> Result<[Slice2D; SEQ_LEN]> {
        Ok(self.forward(seq)?.maps)
    }
}

/// Convenience wrapper: forward pass of `params` on one sequence.
pub fn forward(params: &ModelParams, seq: &SliceSequence) -> Result<ProbSequence> {
    Model::new(params.clone())?.forward(seq)
}
