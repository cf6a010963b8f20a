//! Fixtures shared by the criterion benchmarks under `benches/`.

use hybridmem::eval::{BenchConfig, BenchOptions};
use hybridmem::stream::{generate_scene, partition_chunks, PartitionPlan, ModelPredictor, MotionModel, SyntheticScene};
use hybridmem::{HybridModel, Result, RngState};

/// A model, scene and chunk plan ready to stream.
pub struct StreamFixture {
    pub model: HybridModel,
    pub scene: SyntheticScene,
    pub plan: PartitionPlan,
}

impl StreamFixture {
    /// Same construction the scaling benchmark uses, so criterion numbers and
    /// `hybridmem bench` numbers describe the same work.
    pub fn new(kind: BenchConfig, length: usize, opts: &BenchOptions) -> Result<Self> {
        let model = HybridModel::new(opts.stack_config(kind), &mut RngState::new(opts.seed))?;
        let scene = generate_scene(length, MotionModel::Straight, opts.seed)?;
        let plan = if kind == BenchConfig::FullAttention {
            partition_chunks(length, length.max(2), 1)?
        } else {
            partition_chunks(length, opts.chunk_size, opts.overlap)?
        };
        Ok(Self { model, scene, plan })
    }

    pub fn predictor(&self) -> ModelPredictor {
        ModelPredictor::new(self.model.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixtures_cover_the_sequence() {
        let opts = BenchOptions::default();
        for kind in BenchConfig::ALL {
            let f = StreamFixture::new(kind, 40, &opts).unwrap();
            assert_eq!(f.scene.len(), 40);
            assert_eq!(f.plan.chunks.last().unwrap().end, 40);
        }
        let full = StreamFixture::new(BenchConfig::FullAttention, 40, &opts).unwrap();
        assert_eq!(full.plan.len(), 1);
    }
}
