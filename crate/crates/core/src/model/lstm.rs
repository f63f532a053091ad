use crate::autodiff::{AutodiffError, Tensor, Var};
use crate::model::ModelError;
use crate::scalar::Scalar;

/// LSTM parameters with the four gates fused column-wise in the order
/// input, forget, cell candidate, output.
#[derive(Clone, Debug, PartialEq)]
pub struct LstmCell<T> {
    /// `input_size x 4 hidden`.
    pub w_ih: Tensor<T>,
    /// `hidden x 4 hidden`.
    pub w_hh: Tensor<T>,
    /// `1 x 4 hidden`.
    pub bias: Tensor<T>,
}

impl<T: Scalar> LstmCell<T> {
    pub fn input_size(&self) -> usize {
        self.w_ih.rows()
    }

    pub fn hidden_size(&self) -> usize {
        self.w_hh.rows()
    }
}

/// An [`LstmCell`] recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct BoundLstm<'t, T> {
    pub w_ih: Var<'t, T>,
    pub w_hh: Var<'t, T>,
    pub bias: Var<'t, T>,
}

/// Hidden and cell state, one row per sequence.
pub type LstmState<'t, T> = (Var<'t, T>, Var<'t, T>);

impl<'t, T: Scalar> BoundLstm<'t, T> {
    pub fn hidden_size(&self) -> usize {
        self.w_hh.shape()[0]
    }

    /// `x W_ih + b` for a batch of inputs.
    pub fn input_gates(&self, x: Var<'t, T>) -> Result<Var<'t, T>, AutodiffError> {
        let rows = x.shape()[0];
        x.matmul(self.w_ih)?.add(self.bias.tile_rows(rows)?)
    }

    /// One step from precomputed input gates; `None` is the zero state.
    pub fn step(&self, input_gates: Var<'t, T>, state: Option<LstmState<'t, T>>) -> Result<LstmState<'t, T>, AutodiffError> {
        let h = self.hidden_size();
        let gates = match state {
            Some((h_prev, _)) => input_gates.add(h_prev.matmul(self.w_hh)?)?,
            None => input_gates,
        };
        let i = gates.slice(1, 0, h)?.sigmoid();
        let f = gates.slice(1, h, 2 * h)?.sigmoid();
        let g = gates.slice(1, 2 * h, 3 * h)?.tanh();
        let o = gates.slice(1, 3 * h, 4 * h)?.sigmoid();
        let c = match state {
            Some((_, c_prev)) => f.mul(c_prev)?.add(i.mul(g)?)?,
            None => i.mul(g)?,
        };
        Ok((o.mul(c.tanh())?, c))
    }

    /// Runs the cell over a batch of aligned sequences from the zero state
    /// and returns the final hidden state (`batch x hidden`).
    pub fn run(&self, inputs: &[Var<'t, T>]) -> Result<Var<'t, T>, ModelError> {
        let mut state = None;
        for &x in inputs {
            state = Some(self.step(self.input_gates(x)?, state)?);
        }
        state.map(|(h, _)| h).ok_or(ModelError::EmptyTrack)
    }
}

/// Final hidden state (`1 x hidden`) after stepping `cell` over `track`.
pub fn encode_history<'t, T: Scalar>(cell: &BoundLstm<'t, T>, track: &[[T; 2]]) -> Result<Var<'t, T>, ModelError> {
    let tape = cell.w_ih.tape();
    let inputs: Vec<Var<'t, T>> = track.iter().map(|p| tape.constant(Tensor::row(p.to_vec()))).collect();
    cell.run(&inputs)
}
