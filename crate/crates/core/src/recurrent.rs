//! The two LSTM cells.
//!
//! The decoder cell sees the input `x`, the previous hidden state and the
//! previous attention vector `h̃` in every gate. The guiding cell is a plain
//! LSTM whose hidden state is the guiding vector.

use crate::error::Result;
use crate::params::param_struct;
use crate::tape::{Tape, Var};

param_struct! {
    /// One gate of the decoder cell: `W_xh·x + W_hh·h + W_h̃h·h̃ + b`.
    pub struct LstmDGate<T> {
        /// `H×D_x`
        pub w_xh,
        /// `H×H`
        pub w_hh,
        /// `H×H`, applied to the previous attention vector.
        pub w_th,
        /// `H`
        pub b,
    }
}

param_struct! {
    /// One gate of the guiding cell: `W_x·z + W_h·G + b`.
    pub struct LstmGGate<T> {
        /// `D_g×D_z`
        pub w_x,
        /// `D_g×D_g`
        pub w_h,
        /// `D_g`
        pub b,
    }
}

/// Gate parameters for input, forget, output and candidate.
#[derive(Debug, Clone, PartialEq)]
pub struct Gates<G> {
    pub input: G,
    pub forget: G,
    pub output: G,
    pub candidate: G,
}

impl<G> Gates<G> {
    pub(crate) fn each(&self) -> [(&'static str, &G); 4] {
        [
            ("input", &self.input),
            ("forget", &self.forget),
            ("output", &self.output),
            ("candidate", &self.candidate),
        ]
    }

    pub(crate) fn build<E>(mut f: impl FnMut(&'static str) -> Result<G, E>) -> Result<Self, E> {
        Ok(Gates {
            input: f("input")?,
            forget: f("forget")?,
            output: f("output")?,
            candidate: f("candidate")?,
        })
    }
}

macro_rules! gates_tree {
    ($gate:ident) => {
        impl<T> crate::params::ParamTree<T> for Gates<$gate<T>> {
            type Mapped<U> = Gates<$gate<U>>;

            fn visit<'a>(&'a self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &'a T)) {
                for (name, g) in self.each() {
                    g.visit(&crate::params::join(prefix, name), f);
                }
            }

            fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &mut T)) {
                self.input.visit_mut(&crate::params::join(prefix, "input"), f);
                self.forget.visit_mut(&crate::params::join(prefix, "forget"), f);
                self.output.visit_mut(&crate::params::join(prefix, "output"), f);
                self.candidate.visit_mut(&crate::params::join(prefix, "candidate"), f);
            }

            fn map<U>(&self, prefix: &str, f: &mut dyn FnMut(alloc::string::String, &T) -> U) -> Gates<$gate<U>> {
                Gates::build::<()>(|name| {
                    let g = match name {
                        "input" => &self.input,
                        "forget" => &self.forget,
                        "output" => &self.output,
                        _ => &self.candidate,
                    };
                    Ok(g.map(&crate::params::join(prefix, name), f))
                })
                .expect("infallible")
            }
        }
    };
}

gates_tree!(LstmDGate);
gates_tree!(LstmGGate);

pub type LstmDParams<T> = Gates<LstmDGate<T>>;
pub type LstmGParams<T> = Gates<LstmGGate<T>>;

/// Carried decoder state.
#[derive(Debug, Clone, Copy)]
pub struct LstmDState {
    pub h: Var,
    pub m: Var,
    pub h_tilde: Var,
}

/// Carried guiding-cell state; `hidden` is the guiding vector.
#[derive(Debug, Clone, Copy)]
pub struct LstmGState {
    pub hidden: Var,
    pub memory: Var,
}

fn d_preact(tape: &mut Tape, gate: &LstmDGate<Var>, x: Var, prev: &LstmDState) -> Result<Var> {
    let a = tape.matmul(gate.w_xh, x)?;
    let b = tape.matmul(gate.w_hh, prev.h)?;
    let c = tape.matmul(gate.w_th, prev.h_tilde)?;
    let s = tape.add(a, b)?;
    let s = tape.add(s, c)?;
    tape.add(s, gate.b)
}

fn g_preact(tape: &mut Tape, gate: &LstmGGate<Var>, z: Var, prev: &LstmGState) -> Result<Var> {
    let a = tape.matmul(gate.w_x, z)?;
    let b = tape.matmul(gate.w_h, prev.hidden)?;
    let s = tape.add(a, b)?;
    tape.add(s, gate.b)
}

fn cell_update(tape: &mut Tape, i: Var, f: Var, o: Var, g: Var, m_prev: Var) -> Result<(Var, Var)> {
    let keep = tape.hadamard(f, m_prev)?;
    let write = tape.hadamard(i, g)?;
    let m = tape.add(keep, write)?;
    let tm = tape.tanh(m)?;
    let h = tape.hadamard(o, tm)?;
    Ok((h, m))
}

/// One decoder-cell step; returns `(h, m)`.
///
/// With `candidate_tanh == false` the candidate gate uses a sigmoid;
/// `true` gives the usual tanh.
pub fn lstm_d_step(
    tape: &mut Tape,
    x: Var,
    prev: &LstmDState,
    params: &LstmDParams<Var>,
    candidate_tanh: bool,
) -> Result<(Var, Var)> {
    let i = d_preact(tape, &params.input, x, prev)?;
    let i = tape.sigmoid(i)?;
    let f = d_preact(tape, &params.forget, x, prev)?;
    let f = tape.sigmoid(f)?;
    let o = d_preact(tape, &params.output, x, prev)?;
    let o = tape.sigmoid(o)?;
    let g = d_preact(tape, &params.candidate, x, prev)?;
    let g = if candidate_tanh { tape.tanh(g)? } else { tape.sigmoid(g)? };
    cell_update(tape, i, f, o, g, prev.m)
}

/// One guiding-cell step (standard LSTM, tanh candidate).
pub fn lstm_g_step(tape: &mut Tape, z: Var, prev: &LstmGState, params: &LstmGParams<Var>) -> Result<LstmGState> {
    let i = g_preact(tape, &params.input, z, prev)?;
    let i = tape.sigmoid(i)?;
    let f = g_preact(tape, &params.forget, z, prev)?;
    let f = tape.sigmoid(f)?;
    let o = g_preact(tape, &params.output, z, prev)?;
    let o = tape.sigmoid(o)?;
    let g = g_preact(tape, &params.candidate, z, prev)?;
    let g = tape.tanh(g)?;
    let (hidden, memory) = cell_update(tape, i, f, o, g, prev.memory)?;
    Ok(LstmGState { hidden, memory })
}
