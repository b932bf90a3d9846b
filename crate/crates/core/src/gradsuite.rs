//! Finite-difference checks of every differentiable building block on
//! random instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::datagen::{apply_missing, generate_synthetic, PlaceholderPolicy, Sample, ScenarioConfig, SyntheticTaskSpec};
use crate::diffcore::gradcheck::{self, GradCheck, MAX_REL_ERR};
use crate::diffcore::{Graph, Tensor, Var, LAYERNORM_EPS};
use crate::error::Result;
use crate::model::{bind, forward_graph, Model, ModelConfig, ParamGroup, ParamId, Strategy};
use crate::objective::{pairwise_abs_cosine, ORTHO_EPS};

pub const SUITE_OPS: [&str; 8] = [
    "matmul",
    "softmax",
    "layernorm",
    "gelu",
    "cross_entropy",
    "bce_with_logits",
    "ortho_loss",
    "forward_wrt_prompts",
];

#[derive(Clone, Debug, PartialEq)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_err: f64,
    pub failures: usize,
}

impl OpCheck {
    pub fn passed(&self) -> bool {
        self.failures == 0 && self.max_rel_err < MAX_REL_ERR
    }
}

/// `Σ w ⊙ x` with a fixed random `w`, turning any node into a scalar.
fn project(g: &mut Graph<f64>, x: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let w = Tensor::randn(g.shape(x), 1.0, rng);
    let w = g.constant(w);
    let p = g.mul(x, w)?;
    Ok(g.sum(p))
}

fn dims(rng: &mut ChaCha8Rng) -> (usize, usize) {
    (rng.random_range(1..5), rng.random_range(2..6))
}

fn instance(op: &str, rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    // the projection weights must be identical on every re-evaluation
    let seed: u64 = rng.random();
    let fresh = || ChaCha8Rng::seed_from_u64(seed);
    match op {
        "matmul" => {
            let (m, k) = dims(rng);
            let n = rng.random_range(1..5);
            let a = Tensor::randn(&[m, k], 1.0, rng);
            let b = Tensor::randn(&[k, n], 1.0, rng);
            gradcheck::check(&[a, b], |g, v| {
                let y = g.matmul(v[0], v[1])?;
                project(g, y, &mut fresh())
            })
        }
        "softmax" => {
            let (r, c) = dims(rng);
            let x = Tensor::randn(&[r, c], 2.0, rng);
            gradcheck::check(&[x], |g, v| {
                let y = g.softmax(v[0])?;
                project(g, y, &mut fresh())
            })
        }
        "layernorm" => {
            let (r, c) = dims(rng);
            let x = Tensor::randn(&[r, c], 1.0, rng);
            let gain = Tensor::randn(&[c], 1.0, rng);
            let bias = Tensor::randn(&[c], 1.0, rng);
            gradcheck::check(&[x, gain, bias], |g, v| {
                let y = g.layernorm(v[0], v[1], v[2], LAYERNORM_EPS)?;
                project(g, y, &mut fresh())
            })
        }
        "gelu" => {
            let (r, c) = dims(rng);
            let x = Tensor::randn(&[r, c], 2.0, rng);
            gradcheck::check(&[x], |g, v| {
                let y = g.gelu(v[0]);
                project(g, y, &mut fresh())
            })
        }
        "cross_entropy" => {
            let (b, k) = dims(rng);
            let z = Tensor::randn(&[b, k], 2.0, rng);
            let labels: Vec<usize> = (0..b).map(|_| rng.random_range(0..k)).collect();
            gradcheck::check(&[z], |g, v| g.cross_entropy(v[0], &labels))
        }
        "bce_with_logits" => {
            let (b, k) = dims(rng);
            let z = Tensor::randn(&[b, k], 2.0, rng);
            let t = Tensor::new(vec![b, k], (0..b * k).map(|_| f64::from(rng.random_range(0..2u8))).collect())?;
            gradcheck::check(&[z], |g, v| g.bce_with_logits(v[0], &t))
        }
        "ortho_loss" => {
            let shape = [rng.random_range(1..3), rng.random_range(1..4), rng.random_range(2..5)];
            let n = rng.random_range(2..4);
            let prompts: Vec<Tensor<f64>> = (0..n).map(|_| Tensor::randn(&shape, 1.0, rng)).collect();
            gradcheck::check(&prompts, |g, v| pairwise_abs_cosine(g, v, ORTHO_EPS))
        }
        "forward_wrt_prompts" => forward_instance(rng),
        other => unreachable!("unknown suite op {other}"),
    }
}

/// Logits of a one-layer model on a mixed-pattern batch, differentiated
/// with respect to both modality-specific prompts.
fn forward_instance(rng: &mut ChaCha8Rng) -> Result<GradCheck> {
    let spec = SyntheticTaskSpec {
        a: 2,
        b: 2,
        h: 4,
        w: 4,
        content_len: 2,
        group_size: 2,
        n_distractors: 2,
        n_samples: 4,
        seed: rng.random(),
        ..SyntheticTaskSpec::default()
    };
    let ds = generate_synthetic(&spec)?;
    let ds = apply_missing(&ds, &ScenarioConfig::new(0.5, 0.75, rng.random())?, &PlaceholderPolicy::default())?;
    let cfg = ModelConfig {
        d_model: 8,
        n_layers: 1,
        n_heads: 2,
        patch_size: 2,
        prompt_len: 2,
        ..ModelConfig::for_dataset(&ds)
    };
    let model = Model::<f64>::build(cfg, Strategy::Msp, &ds.registry, rng.random())?;
    let keys: Vec<String> = model.bank.params.names().map(String::from).collect();
    // prompts at unit scale so they visibly move the logits
    let inputs: Vec<Tensor<f64>> = keys
        .iter()
        .map(|k| Tensor::randn(model.bank.params.get(k).expect("bank key").shape(), 0.5, rng))
        .collect();
    let w = Tensor::randn(&[ds.len(), model.cfg.n_classes], 1.0, rng);
    let batch: Vec<&Sample> = ds.samples.iter().collect();
    gradcheck::check(&inputs, |g, vars| {
        let mut binding = bind(g, &model, &[]);
        for (k, &v) in keys.iter().zip(vars) {
            binding = binding.with(ParamId::new(ParamGroup::Prompt, k.clone()), v);
        }
        let z = forward_graph(g, &model, &binding, &batch)?;
        let wv = g.constant(w.clone());
        let zw = g.mul(z, wv)?;
        Ok(g.sum(zw))
    })
}

/// Runs `instances` random checks of every op in [`SUITE_OPS`].
pub fn run_suite(instances: usize, seed: u64) -> Result<Vec<OpCheck>> {
    let mut out = Vec::with_capacity(SUITE_OPS.len());
    for (i, op) in SUITE_OPS.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(31).wrapping_add(i as u64));
        let mut chk = OpCheck {
            op,
            instances,
            max_rel_err: 0.0,
            failures: 0,
        };
        for _ in 0..instances {
            let r = instance(op, &mut rng)?;
            chk.max_rel_err = chk.max_rel_err.max(r.max_rel_err);
            if !r.passed() {
                chk.failures += 1;
            }
        }
        out.push(chk);
    }
    Ok(out)
}
