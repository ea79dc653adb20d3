use std::collections::HashMap;

use rand_chacha::ChaCha8Rng;

use crate::autograd::{Scalar, Tape, TensorId};
use crate::error::{Error, Result};
use crate::rng;

use super::config::ModelConfig;

/// One named parameter tensor.
#[derive(Debug, Clone)]
pub struct Param<S> {
    pub values: Vec<S>,
    pub shape: Vec<usize>,
    /// Whether weight decay applies (off for biases and layer-norm affines).
    pub decay: bool,
}

/// Ordered, name-addressed parameter storage. Iteration order is insertion
/// order, which keeps optimizer traversal and tape binding deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore<S> {
    order: Vec<String>,
    index: HashMap<String, usize>,
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            order: Vec::new(),
            index: HashMap::new(),
            params: Vec::new(),
        }
    }

    pub fn insert(&mut self, name: &str, shape: Vec<usize>, values: Vec<S>, decay: bool) {
        assert_eq!(
            values.len(),
            shape.iter().product::<usize>(),
            "param {name}: {} values for shape {shape:?}",
            values.len()
        );
        assert!(
            !self.index.contains_key(name),
            "duplicate parameter name {name}"
        );
        self.index.insert(name.to_string(), self.params.len());
        self.order.push(name.to_string());
        self.params.push(Param {
            values,
            shape,
            decay,
        });
    }

    pub fn get(&self, name: &str) -> &Param<S> {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &self.params[idx]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Param<S> {
        let idx = *self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"));
        &mut self.params[idx]
    }

    pub fn contains(&self, name: &str) -> bool {
        self.index.contains_key(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.order.iter().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Param<S>)> {
        self.order
            .iter()
            .map(move |n| (n.as_str(), &self.params[self.index[n]]))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn n_values(&self) -> usize {
        self.params.iter().map(|p| p.values.len()).sum()
    }

    /// Total over parameters whose name matches `pred`.
    pub fn n_values_where(&self, pred: impl Fn(&str) -> bool) -> usize {
        self.iter()
            .filter(|(n, _)| pred(n))
            .map(|(_, p)| p.values.len())
            .sum()
    }

    /// Convert element type (used to load f32 checkpoints for f64 checks).
    pub fn convert<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, p) in self.iter() {
            out.insert(
                name,
                p.shape.clone(),
                p.values.iter().map(|v| T::from_f64(v.to_f64())).collect(),
                p.decay,
            );
        }
        out
    }
}

/// Tape bindings for a parameter store: one leaf per parameter, created in
/// store order so node indices (and thus dropout streams) are stable.
pub struct BoundParams {
    ids: HashMap<String, TensorId>,
}

impl BoundParams {
    pub fn id(&self, name: &str) -> TensorId {
        *self
            .ids
            .get(name)
            .unwrap_or_else(|| panic!("parameter {name} not bound"))
    }

    pub fn try_id(&self, name: &str) -> Option<TensorId> {
        self.ids.get(name).copied()
    }
}

/// Copy every parameter onto the tape as a leaf. With `trainable` set the
/// leaves collect gradients during backward.
pub fn bind<S: Scalar>(store: &ParamStore<S>, tape: &mut Tape<S>, trainable: bool) -> BoundParams {
    let mut ids = HashMap::new();
    for (name, p) in store.iter() {
        let id = tape.leaf(p.values.clone(), &p.shape, trainable);
        ids.insert(name.to_string(), id);
    }
    BoundParams { ids }
}

/// Read gradients for every parameter out of a tape after backward.
/// Parameters the loss never touched get `None`.
pub fn collect_grads<S: Scalar>(
    store: &ParamStore<S>,
    bound: &BoundParams,
    tape: &Tape<S>,
) -> HashMap<String, Vec<S>> {
    let mut out = HashMap::new();
    for name in store.names() {
        if let Some(g) = tape.grad(bound.id(name)) {
            out.insert(name.to_string(), g.to_vec());
        }
    }
    out
}

fn truncated_normal<S: Scalar>(rng: &mut ChaCha8Rng, n: usize, std: f64) -> Vec<S> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        // Box-Muller; resample outside two standard deviations
        let u1 = rng::uniform(rng).max(1e-12);
        let u2 = rng::uniform(rng);
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        for z in [r * theta.cos(), r * theta.sin()] {
            if z.abs() <= 2.0 && out.len() < n {
                out.push(S::from_f64(z * std));
            }
        }
    }
    out
}

fn zeros<S: Scalar>(n: usize) -> Vec<S> {
    vec![S::ZERO; n]
}

fn ones<S: Scalar>(n: usize) -> Vec<S> {
    vec![S::ONE; n]
}

const INIT_STD: f64 = 0.02;

fn insert_linear<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
    name: &str,
    d_in: usize,
    d_out: usize,
) {
    store.insert(
        &format!("{name}.w"),
        vec![d_in, d_out],
        truncated_normal(rng, d_in * d_out, INIT_STD),
        true,
    );
    store.insert(&format!("{name}.b"), vec![d_out], zeros(d_out), false);
}

fn insert_layer_norm<S: Scalar>(store: &mut ParamStore<S>, name: &str, d: usize) {
    store.insert(&format!("{name}.g"), vec![d], ones(d), false);
    store.insert(&format!("{name}.b"), vec![d], zeros(d), false);
}

fn insert_encoder_stack<S: Scalar>(
    store: &mut ParamStore<S>,
    rng: &mut ChaCha8Rng,
    prefix: &str,
    layers: usize,
    hidden: usize,
    ffn: usize,
) {
    for l in 0..layers {
        for proj in ["q", "k", "v", "o"] {
            insert_linear(store, rng, &format!("{prefix}.l{l}.attn.{proj}"), hidden, hidden);
        }
        insert_layer_norm(store, &format!("{prefix}.l{l}.ln1"), hidden);
        insert_linear(store, rng, &format!("{prefix}.l{l}.ffn.in"), hidden, ffn);
        insert_linear(store, rng, &format!("{prefix}.l{l}.ffn.out"), ffn, hidden);
        insert_layer_norm(store, &format!("{prefix}.l{l}.ln2"), hidden);
    }
}

/// Shared embeddings (token, position, segment, layer norm): one storage
/// read by both the generator and the discriminator.
fn insert_embeddings<S: Scalar>(store: &mut ParamStore<S>, rng: &mut ChaCha8Rng, config: &ModelConfig) {
    let e = config.embedding;
    store.insert(
        "emb.tok",
        vec![config.vocab_size, e],
        truncated_normal(rng, config.vocab_size * e, INIT_STD),
        true,
    );
    store.insert(
        "emb.pos",
        vec![config.max_positions, e],
        truncated_normal(rng, config.max_positions * e, INIT_STD),
        true,
    );
    store.insert("emb.seg", vec![2, e], truncated_normal(rng, 2 * e, INIT_STD), true);
    insert_layer_norm(store, "emb.ln", e);
}

/// Parameters for the discriminator branch only (fine-tuning layout):
/// embeddings + encoder stack.
pub fn init_encoder_params<S: Scalar>(config: &ModelConfig, seed: u64) -> ParamStore<S> {
    let mut rng = rng::derive(seed, 0x9a7a);
    let mut store = ParamStore::new();
    insert_embeddings(&mut store, &mut rng, config);
    if config.embedding != config.hidden {
        insert_linear(&mut store, &mut rng, "disc.proj", config.embedding, config.hidden);
    }
    insert_encoder_stack(
        &mut store,
        &mut rng,
        "disc",
        config.layers,
        config.hidden,
        config.ffn,
    );
    store
}

/// Full pretraining parameter set: shared embeddings, discriminator stack and
/// replaced-token head, generator stack (scaled width) with its embedding
/// projection and MLM head. The MLM output decoder is weight-tied to
/// `emb.tok` and therefore has no parameters of its own, only a bias.
pub fn init_pretrain_params<S: Scalar>(
    disc: &ModelConfig,
    gen: &ModelConfig,
    seed: u64,
) -> Result<ParamStore<S>> {
    disc.validate()?;
    gen.validate()?;
    if gen.vocab_size != disc.vocab_size || gen.embedding != disc.embedding {
        return Err(Error::Model(
            "generator and discriminator must share vocabulary and embedding width".into(),
        ));
    }
    let mut rng = rng::derive(seed, 0x9a7a);
    let mut store = ParamStore::new();
    insert_embeddings(&mut store, &mut rng, disc);
    if disc.embedding != disc.hidden {
        insert_linear(&mut store, &mut rng, "disc.proj", disc.embedding, disc.hidden);
    }
    insert_encoder_stack(&mut store, &mut rng, "disc", disc.layers, disc.hidden, disc.ffn);
    insert_linear(&mut store, &mut rng, "disc.rtd.dense", disc.hidden, disc.hidden);
    insert_linear(&mut store, &mut rng, "disc.rtd.out", disc.hidden, 1);
    if gen.embedding != gen.hidden {
        insert_linear(&mut store, &mut rng, "gen.proj", gen.embedding, gen.hidden);
    }
    insert_encoder_stack(&mut store, &mut rng, "gen", gen.layers, gen.hidden, gen.ffn);
    insert_linear(&mut store, &mut rng, "gen.mlm.dense", gen.hidden, gen.embedding);
    insert_layer_norm(&mut store, "gen.mlm.ln", gen.embedding);
    store.insert("gen.mlm.out_bias", vec![disc.vocab_size], zeros(disc.vocab_size), false);
    Ok(store)
}
