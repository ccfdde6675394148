//! The contextualized concept learner.
//!
//! Two bi-directional recurrent encoders share context between concepts:
//!
//! * the garment encoder runs over the garment regions of a post, so every
//!   garment state sees its siblings;
//! * the slot encoder runs, per garment, over the concept slots
//!   `[category, attr_1, ..., attr_n]`, each slot input being the garment
//!   state joined with a learned slot embedding.
//!
//! Encoder outputs are appended to their inputs: a garment state is
//! `[input || fwd || bwd]` and a slot state is
//! `[garment state || slot embedding || fwd || bwd]`. The occasion head
//! reads the image feature together with the mean of the garment states;
//! every slot has its own softmax head.
//!
//! [`EncoderMode::PerItem`] drops the recurrent parts, which leaves the
//! per-item identity: the no-context baseline with the same heads.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::gru::{birnn_over_inputs, GateInputs, GruCell};
use super::tape::{ParamId, Tape, Var};
use super::tensor::{ParamStore, Tensor};
use crate::corpus::Post;
use crate::vocab::ConceptVocabulary;

/// Tape group of the model parameters.
pub const MODEL_GROUP: usize = 0;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ModelError {
    #[error("post {0:?} has no garment regions")]
    NoGarments(String),
    #[error("post {post_id:?}: {what} has dimension {found}, model expects {expected}")]
    DimMismatch {
        post_id: String,
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("post {post_id:?}: unknown rough category {category:?}")]
    UnknownCategory { post_id: String, category: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderMode {
    /// Bi-directional recurrent encoders over garments and concept slots.
    Contextual,
    /// Encoders ablated to the per-item identity.
    PerItem,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub image_dim: usize,
    pub region_dim: usize,
    pub garment_hidden: usize,
    pub slot_hidden: usize,
    pub slot_embedding: usize,
}

impl Default for ModelDims {
    fn default() -> Self {
        Self {
            image_dim: 64,
            region_dim: 64,
            garment_hidden: 32,
            slot_hidden: 32,
            slot_embedding: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
struct Layout {
    garment: Option<(GruCell, GruCell)>,
    slot: Option<(GruCell, GruCell)>,
    slot_embeddings: ParamId,
    occasion_image: ParamId,
    occasion_pool: ParamId,
    occasion_bias: ParamId,
    /// Per slot: (weights, bias).
    slot_heads: Vec<(ParamId, ParamId)>,
}

/// Class distributions for one post.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConceptPrediction {
    pub occasion: Vec<f64>,
    /// Per garment, per slot (category first, then attribute types).
    pub garments: Vec<Vec<Vec<f64>>>,
}

/// Hard labels: argmax per slot.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HardLabels {
    pub occasion: usize,
    pub garments: Vec<Vec<usize>>,
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in dist.iter().enumerate() {
        if v > dist[best] {
            best = i;
        }
    }
    best
}

pub fn decode(prediction: &ConceptPrediction) -> HardLabels {
    HardLabels {
        occasion: argmax(&prediction.occasion),
        garments: prediction
            .garments
            .iter()
            .map(|slots| slots.iter().map(|d| argmax(d)).collect())
            .collect(),
    }
}

/// Nodes of one post's forward pass.
#[derive(Debug, Clone)]
pub struct PostGraph {
    pub occasion: Var,
    /// Per garment, per slot: softmax output.
    pub slots: Vec<Vec<Var>>,
}

/// Per-tape cache of slot-embedding projections, shared by all garments.
#[derive(Debug, Default)]
pub struct SlotCache {
    embeddings: Vec<Var>,
    fwd: Vec<[Var; 3]>,
    bwd: Vec<[Var; 3]>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConceptModel {
    vocab: ConceptVocabulary,
    dims: ModelDims,
    mode: EncoderMode,
    params: ParamStore,
    layout: Layout,
}

fn init_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Tensor {
    let bound = (6.0 / (rows + cols) as f64).sqrt();
    let data = (0..rows * cols)
        .map(|_| rng.random_range(-bound..bound))
        .collect();
    Tensor::from_vec(&[rows, cols], data).expect("shape")
}

impl ConceptModel {
    pub fn new(vocab: ConceptVocabulary, dims: ModelDims, mode: EncoderMode, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let n_slots = vocab.slot_count();
        let garment_in = dims.region_dim + vocab.categories().len();

        let (garment, slot) = match mode {
            EncoderMode::Contextual => {
                let g_fwd = GruCell::init(
                    &mut params,
                    MODEL_GROUP,
                    "garment_fwd",
                    &[garment_in],
                    dims.garment_hidden,
                    &mut rng,
                );
                let g_bwd = GruCell::init(
                    &mut params,
                    MODEL_GROUP,
                    "garment_bwd",
                    &[garment_in],
                    dims.garment_hidden,
                    &mut rng,
                );
                let slot_in = [garment_in + 2 * dims.garment_hidden, dims.slot_embedding];
                let s_fwd = GruCell::init(
                    &mut params,
                    MODEL_GROUP,
                    "slot_fwd",
                    &slot_in,
                    dims.slot_hidden,
                    &mut rng,
                );
                let s_bwd = GruCell::init(
                    &mut params,
                    MODEL_GROUP,
                    "slot_bwd",
                    &slot_in,
                    dims.slot_hidden,
                    &mut rng,
                );
                (Some((g_fwd, g_bwd)), Some((s_fwd, s_bwd)))
            }
            EncoderMode::PerItem => (None, None),
        };
        let (garment_state, slot_state) = match mode {
            EncoderMode::Contextual => {
                let g = garment_in + 2 * dims.garment_hidden;
                (g, g + dims.slot_embedding + 2 * dims.slot_hidden)
            }
            EncoderMode::PerItem => (garment_in, garment_in + dims.slot_embedding),
        };

        let push = |params: &mut ParamStore, name: String, t: Tensor| ParamId {
            group: MODEL_GROUP,
            index: params.push(name, t),
        };
        let emb = {
            let data = (0..n_slots * dims.slot_embedding)
                .map(|_| rng.random_range(-0.5..0.5))
                .collect();
            Tensor::from_vec(&[n_slots, dims.slot_embedding], data).expect("shape")
        };
        let slot_embeddings = push(&mut params, "slot_embeddings".into(), emb);
        let n_occ = vocab.occasions().len();
        let occasion_image = push(
            &mut params,
            "occasion.w_image".into(),
            init_matrix(n_occ, dims.image_dim, &mut rng),
        );
        let occasion_pool = push(
            &mut params,
            "occasion.w_pool".into(),
            init_matrix(n_occ, garment_state, &mut rng),
        );
        let occasion_bias = push(&mut params, "occasion.b".into(), Tensor::zeros(&[n_occ]));
        let task_names = vocab.task_names();
        let sizes = vocab.task_sizes();
        let mut slot_heads = Vec::with_capacity(n_slots);
        for (name, &size) in task_names[1..].iter().zip(&sizes[1..]) {
            let w = push(
                &mut params,
                format!("head.{name}.w"),
                init_matrix(size, slot_state, &mut rng),
            );
            let b = push(
                &mut params,
                format!("head.{name}.b"),
                Tensor::zeros(&[size]),
            );
            slot_heads.push((w, b));
        }

        Self {
            vocab,
            dims,
            mode,
            params,
            layout: Layout {
                garment,
                slot,
                slot_embeddings,
                occasion_image,
                occasion_pool,
                occasion_bias,
                slot_heads,
            },
        }
    }

    pub fn vocab(&self) -> &ConceptVocabulary {
        &self.vocab
    }

    pub fn dims(&self) -> ModelDims {
        self.dims
    }

    pub fn mode(&self) -> EncoderMode {
        self.mode
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    /// The garment encoder cells, when contextual.
    pub fn garment_cells(&self) -> Option<(&GruCell, &GruCell)> {
        self.layout.garment.as_ref().map(|(f, b)| (f, b))
    }

    /// The slot encoder cells, when contextual.
    pub fn slot_cells(&self) -> Option<(&GruCell, &GruCell)> {
        self.layout.slot.as_ref().map(|(f, b)| (f, b))
    }

    pub fn slot_embeddings(&self) -> ParamId {
        self.layout.slot_embeddings
    }

    pub fn slot_head(&self, slot: usize) -> (ParamId, ParamId) {
        self.layout.slot_heads[slot]
    }

    pub fn occasion_head(&self) -> (ParamId, ParamId, ParamId) {
        (
            self.layout.occasion_image,
            self.layout.occasion_pool,
            self.layout.occasion_bias,
        )
    }

    pub fn check_post(&self, post: &Post) -> Result<(), ModelError> {
        if post.garments.is_empty() {
            return Err(ModelError::NoGarments(post.post_id.clone()));
        }
        if post.image_feature.len() != self.dims.image_dim {
            return Err(ModelError::DimMismatch {
                post_id: post.post_id.clone(),
                what: "image_feature",
                expected: self.dims.image_dim,
                found: post.image_feature.len(),
            });
        }
        for g in &post.garments {
            if g.feature.len() != self.dims.region_dim {
                return Err(ModelError::DimMismatch {
                    post_id: post.post_id.clone(),
                    what: "region feature",
                    expected: self.dims.region_dim,
                    found: g.feature.len(),
                });
            }
            if let Some(c) = &g.rough_category {
                if self.vocab.category_index(c).is_none() {
                    return Err(ModelError::UnknownCategory {
                        post_id: post.post_id.clone(),
                        category: c.clone(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Region feature followed by a one-hot of the rough category (all
    /// zeros when absent).
    pub fn garment_input(&self, post: &Post, index: usize) -> Vec<f64> {
        let g = &post.garments[index];
        let mut x = g.feature.clone();
        let mut one_hot = vec![0.0; self.vocab.categories().len()];
        if let Some(ci) = g
            .rough_category
            .as_deref()
            .and_then(|c| self.vocab.category_index(c))
        {
            one_hot[ci] = 1.0;
        }
        x.extend(one_hot);
        x
    }

    fn fill_cache(&self, tape: &mut Tape, cache: &mut SlotCache) {
        if !cache.embeddings.is_empty() {
            return;
        }
        let n_slots = self.vocab.slot_count();
        cache.embeddings = (0..n_slots)
            .map(|j| tape.row(self.layout.slot_embeddings, j))
            .collect();
        if let Some((fwd, bwd)) = &self.layout.slot {
            for &e in &cache.embeddings {
                cache.fwd.push(fwd.project(tape, 1, e));
                cache.bwd.push(bwd.project(tape, 1, e));
            }
        }
    }

    /// Records the forward pass of one post on `tape`. The tape's group
    /// [`MODEL_GROUP`] must be this model's parameter store.
    pub fn graph(
        &self,
        tape: &mut Tape,
        post: &Post,
        cache: &mut SlotCache,
    ) -> Result<PostGraph, ModelError> {
        self.check_post(post)?;
        self.fill_cache(tape, cache);
        let inputs: Vec<Var> = (0..post.garments.len())
            .map(|i| tape.constant(self.garment_input(post, i)))
            .collect();

        let garment_states = match &self.layout.garment {
            Some((fwd, bwd)) => {
                let fwd_in: Vec<GateInputs> = inputs
                    .iter()
                    .map(|&x| {
                        let [z, r, n] = fwd.project(tape, 0, x);
                        [vec![z], vec![r], vec![n]]
                    })
                    .collect();
                let bwd_in: Vec<GateInputs> = inputs
                    .iter()
                    .map(|&x| {
                        let [z, r, n] = bwd.project(tape, 0, x);
                        [vec![z], vec![r], vec![n]]
                    })
                    .collect();
                let context = birnn_over_inputs(tape, fwd, bwd, &fwd_in, &bwd_in);
                inputs
                    .iter()
                    .zip(context)
                    .map(|(&x, c)| tape.concat(vec![x, c]))
                    .collect()
            }
            None => inputs,
        };

        let image = tape.constant(post.image_feature.clone());
        let pooled = tape.mean(garment_states.clone());
        let occ_logits = tape.affine(
            vec![
                (self.layout.occasion_image, image),
                (self.layout.occasion_pool, pooled),
            ],
            vec![],
            Some(self.layout.occasion_bias),
        );
        let occasion = tape.softmax(occ_logits);

        let n_slots = self.vocab.slot_count();
        let mut slots = Vec::with_capacity(garment_states.len());
        for &g in &garment_states {
            let slot_states: Vec<Var> = match &self.layout.slot {
                Some((fwd, bwd)) => {
                    let gf = fwd.project(tape, 0, g);
                    let gb = bwd.project(tape, 0, g);
                    let fwd_in: Vec<GateInputs> = (0..n_slots)
                        .map(|j| {
                            let e = cache.fwd[j];
                            [vec![gf[0], e[0]], vec![gf[1], e[1]], vec![gf[2], e[2]]]
                        })
                        .collect();
                    let bwd_in: Vec<GateInputs> = (0..n_slots)
                        .map(|j| {
                            let e = cache.bwd[j];
                            [vec![gb[0], e[0]], vec![gb[1], e[1]], vec![gb[2], e[2]]]
                        })
                        .collect();
                    let context = birnn_over_inputs(tape, fwd, bwd, &fwd_in, &bwd_in);
                    context
                        .into_iter()
                        .enumerate()
                        .map(|(j, c)| tape.concat(vec![g, cache.embeddings[j], c]))
                        .collect()
                }
                None => (0..n_slots)
                    .map(|j| tape.concat(vec![g, cache.embeddings[j]]))
                    .collect(),
            };
            let outputs = slot_states
                .iter()
                .zip(&self.layout.slot_heads)
                .map(|(&s, &(w, b))| {
                    let logits = tape.affine(vec![(w, s)], vec![], Some(b));
                    tape.softmax(logits)
                })
                .collect();
            slots.push(outputs);
        }
        Ok(PostGraph { occasion, slots })
    }

    pub fn forward(&self, post: &Post) -> Result<ConceptPrediction, ModelError> {
        let mut tape = Tape::new(vec![&self.params]);
        let mut cache = SlotCache::default();
        let graph = self.graph(&mut tape, post, &mut cache)?;
        Ok(ConceptPrediction {
            occasion: tape.value(graph.occasion).to_vec(),
            garments: graph
                .slots
                .iter()
                .map(|slots| slots.iter().map(|&s| tape.value(s).to_vec()).collect())
                .collect(),
        })
    }

    /// Replaces every parameter tensor; shapes and count must match.
    pub fn replace_params(&mut self, params: ParamStore) -> Result<(), String> {
        if params.len() != self.params.len() {
            return Err(format!(
                "expected {} parameter tensors, found {}",
                self.params.len(),
                params.len()
            ));
        }
        for (i, ((name, t), (own_name, own))) in params.iter().zip(self.params.iter()).enumerate() {
            if name != own_name || t.shape() != own.shape() {
                return Err(format!(
                    "tensor {i}: expected {own_name} {:?}, found {name} {:?}",
                    own.shape(),
                    t.shape()
                ));
            }
        }
        self.params = params;
        Ok(())
    }
}
