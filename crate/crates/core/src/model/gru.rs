//! Gated recurrent cells and the bi-directional encoder.

use rand::Rng;
use thiserror::Error;

use super::tape::{ParamId, Tape, Var};
use super::tensor::{ParamStore, Tensor};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum EncodeError {
    #[error("cannot encode an empty sequence")]
    EmptySequence,
    #[error("sequence element {index} has dimension {found}, cell expects {expected}")]
    DimMismatch {
        index: usize,
        expected: usize,
        found: usize,
    },
}

/// Gate order used for the `[update, reset, candidate]` triples.
pub const GATES: [&str; 3] = ["z", "r", "n"];

/// A gated recurrent cell:
///
/// ```text
/// z  = sigmoid(Wz x + Uz h + bz)
/// r  = sigmoid(Wr x + Ur h + br)
/// n  = tanh(Wn x + Un (r * h) + bn)
/// h' = z * h + (1 - z) * n
/// ```
///
/// The input may be split into blocks, each with its own input weights, so a
/// block that stays fixed across steps can be projected once.
#[derive(Debug, Clone, PartialEq)]
pub struct GruCell {
    pub input_dims: Vec<usize>,
    pub hidden: usize,
    /// Per input block, the three input weight matrices (hidden x block dim).
    pub w: Vec<[ParamId; 3]>,
    pub u: [ParamId; 3],
    pub b: [ParamId; 3],
}

/// Input-side pre-activations for the three gates of one step.
pub type GateInputs = [Vec<Var>; 3];

impl GruCell {
    /// Registers fresh parameters in `store` (group `group` on the tape).
    pub fn init(
        store: &mut ParamStore,
        group: usize,
        name: &str,
        input_dims: &[usize],
        hidden: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let bound = 1.0 / (hidden as f64).sqrt();
        let mut uniform = |shape: &[usize]| {
            let n = shape.iter().product();
            let data = (0..n).map(|_| rng.random_range(-bound..bound)).collect();
            Tensor::from_vec(shape, data).expect("shape")
        };
        let add = |store: &mut ParamStore, pname: String, t: Tensor| ParamId {
            group,
            index: store.push(pname, t),
        };
        let mut w = Vec::new();
        for (bi, &dim) in input_dims.iter().enumerate() {
            let mut triple = Vec::new();
            for gate in GATES {
                let t = uniform(&[hidden, dim]);
                triple.push(add(store, format!("{name}.w{bi}_{gate}"), t));
            }
            w.push([triple[0], triple[1], triple[2]]);
        }
        let mut u = Vec::new();
        for gate in GATES {
            let t = uniform(&[hidden, hidden]);
            u.push(add(store, format!("{name}.u_{gate}"), t));
        }
        let mut b = Vec::new();
        for gate in GATES {
            b.push(add(
                store,
                format!("{name}.b_{gate}"),
                Tensor::zeros(&[hidden]),
            ));
        }
        Self {
            input_dims: input_dims.to_vec(),
            hidden,
            w,
            u: [u[0], u[1], u[2]],
            b: [b[0], b[1], b[2]],
        }
    }

    /// Projects input block `block` through the three input matrices.
    pub fn project(&self, tape: &mut Tape, block: usize, x: Var) -> [Var; 3] {
        let w = self.w[block];
        [
            tape.affine(vec![(w[0], x)], vec![], None),
            tape.affine(vec![(w[1], x)], vec![], None),
            tape.affine(vec![(w[2], x)], vec![], None),
        ]
    }

    /// One recurrence step given the input-side pre-activations.
    pub fn step(&self, tape: &mut Tape, inputs: &GateInputs, h: Var) -> Var {
        tape.gru_step(self.u, self.b, inputs.clone(), h)
    }

    /// One step on a plain single-block input vector.
    pub fn step_input(&self, tape: &mut Tape, x: Var, h: Var) -> Var {
        let [pz, pr, pn] = self.project(tape, 0, x);
        self.step(tape, &[vec![pz], vec![pr], vec![pn]], h)
    }
}

/// Runs a forward and a backward cell over per-position gate inputs and
/// returns `[fwd_t || bwd_t]` for every position.
pub fn birnn_over_inputs(
    tape: &mut Tape,
    fwd: &GruCell,
    bwd: &GruCell,
    fwd_inputs: &[GateInputs],
    bwd_inputs: &[GateInputs],
) -> Vec<Var> {
    let len = fwd_inputs.len();
    let mut fwd_states = Vec::with_capacity(len);
    let mut h = tape.constant(vec![0.0; fwd.hidden]);
    for inputs in fwd_inputs {
        h = fwd.step(tape, inputs, h);
        fwd_states.push(h);
    }
    let mut bwd_states = vec![h; len];
    let mut h = tape.constant(vec![0.0; bwd.hidden]);
    for t in (0..len).rev() {
        h = bwd.step(tape, &bwd_inputs[t], h);
        bwd_states[t] = h;
    }
    fwd_states
        .into_iter()
        .zip(bwd_states)
        .map(|(f, b)| tape.concat(vec![f, b]))
        .collect()
}

/// Bi-directional encoding of a sequence of single-block inputs. Position
/// `t` carries the forward state over the prefix up to `t` and the backward
/// state over the suffix from `t`.
pub fn birnn_encode(
    tape: &mut Tape,
    fwd: &GruCell,
    bwd: &GruCell,
    sequence: &[Var],
) -> Result<Vec<Var>, EncodeError> {
    if sequence.is_empty() {
        return Err(EncodeError::EmptySequence);
    }
    for (index, &x) in sequence.iter().enumerate() {
        let found = tape.value(x).len();
        for cell in [fwd, bwd] {
            if cell.input_dims.len() != 1 || cell.input_dims[0] != found {
                return Err(EncodeError::DimMismatch {
                    index,
                    expected: cell.input_dims.iter().sum(),
                    found,
                });
            }
        }
    }
    let project = |tape: &mut Tape, cell: &GruCell| -> Vec<GateInputs> {
        sequence
            .iter()
            .map(|&x| {
                let [z, r, n] = cell.project(tape, 0, x);
                [vec![z], vec![r], vec![n]]
            })
            .collect()
    };
    let fwd_inputs = project(tape, fwd);
    let bwd_inputs = project(tape, bwd);
    Ok(birnn_over_inputs(tape, fwd, bwd, &fwd_inputs, &bwd_inputs))
}
