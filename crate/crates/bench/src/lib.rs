//! Shared inputs for the pipeline benchmarks.

use dynpatch::model::Sample;
use dynpatch::tokenizer::{sample_mask, TokenLayout};
use dynpatch::train::{make_phantom, prepare_samples};
use dynpatch::{MaskPlan, ModelConfig, ModelParams, PhantomSpec, Volume4D};

/// The default 64³×8 phantom.
pub fn default_phantom() -> Volume4D {
    make_phantom(&PhantomSpec::default()).expect("default spec is valid")
}

/// A toy model, one tokenized toy phantom and a mask at the model's ratio.
pub fn toy_step() -> (ModelParams<f32>, TokenLayout, Sample<f32>, MaskPlan) {
    let cfg = ModelConfig::toy();
    let params = ModelParams::init(&cfg, 0).expect("toy config is valid");
    let (layout, sample) = prepare_samples(&cfg, &[PhantomSpec::toy(0)])
        .expect("toy phantom tokenizes")
        .remove(0);
    let plan = sample_mask(&layout, cfg.mask_ratio, 0);
    (params, layout, sample, plan)
}
