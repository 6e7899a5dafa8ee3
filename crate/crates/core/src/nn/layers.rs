//! Fixed network architectures built on the tape: dense stacks, GRU and
//! LSTM cells. Parameter names are derived from a per-network prefix so
//! several networks can share one [`ParamVector`] layout.

use rand::Rng;

use crate::error::Result;
use crate::nn::params::{ParamBuilder, ParamVector};
use crate::nn::tape::{NodeId, Tape};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Linear,
    Tanh,
    Sigmoid,
    Relu,
}

impl Activation {
    pub fn apply(self, tape: &mut Tape, x: NodeId) -> NodeId {
        match self {
            Activation::Linear => x,
            Activation::Tanh => tape.tanh(x),
            Activation::Sigmoid => tape.sigmoid(x),
            Activation::Relu => tape.relu(x),
        }
    }
}

/// Dense feedforward stack. `dims = [in, h1, ..., out]`.
#[derive(Debug, Clone)]
pub struct MlpSpec {
    pub prefix: String,
    pub dims: Vec<usize>,
    pub hidden_act: Activation,
    pub output_act: Activation,
}

impl MlpSpec {
    pub fn new(prefix: &str, dims: &[usize], hidden_act: Activation, output_act: Activation) -> Self {
        assert!(dims.len() >= 2, "an MLP needs at least input and output dims");
        MlpSpec {
            prefix: prefix.to_string(),
            dims: dims.to_vec(),
            hidden_act,
            output_act,
        }
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        for l in 0..self.dims.len() - 1 {
            b.matrix(&format!("{}.w{}", self.prefix, l), self.dims[l + 1], self.dims[l]);
            b.vector(&format!("{}.b{}", self.prefix, l), self.dims[l + 1]);
        }
    }

    pub fn forward(&self, tape: &mut Tape, params: &ParamVector, input: NodeId) -> Result<NodeId> {
        let mut h = input;
        let last = self.dims.len() - 2;
        for l in 0..=last {
            let w = tape.param(params, &format!("{}.w{}", self.prefix, l))?;
            let b = tape.param(params, &format!("{}.b{}", self.prefix, l))?;
            let z = tape.matvec(w, h, self.dims[l + 1], self.dims[l])?;
            let z = tape.add(z, b)?;
            h = if l == last {
                self.output_act.apply(tape, z)
            } else {
                self.hidden_act.apply(tape, z)
            };
        }
        Ok(h)
    }

    pub fn init<R: Rng>(&self, params: &mut ParamVector, rng: &mut R) {
        init_prefix_xavier(params, &self.prefix, rng);
    }

    /// Plain (tape-free) forward pass for inference hot paths.
    pub fn forward_values(&self, params: &ParamVector, input: &[f64]) -> Result<Vec<f64>> {
        let mut h = input.to_vec();
        let last = self.dims.len() - 2;
        for l in 0..=last {
            let w = params.tensor(&format!("{}.w{}", self.prefix, l))?;
            let b = params.tensor(&format!("{}.b{}", self.prefix, l))?;
            let (rows, cols) = (self.dims[l + 1], self.dims[l]);
            if h.len() != cols {
                return Err(crate::error::CoreError::DimMismatch(format!(
                    "mlp layer {l} expects {cols} inputs, got {}",
                    h.len()
                )));
            }
            let mut out = vec![0.0; rows];
            for r in 0..rows {
                let row = &w[r * cols..(r + 1) * cols];
                out[r] = row.iter().zip(&h).map(|(a, b)| a * b).sum::<f64>() + b[r];
            }
            let act = if l == last { self.output_act } else { self.hidden_act };
            for v in &mut out {
                *v = match act {
                    Activation::Linear => *v,
                    Activation::Tanh => v.tanh(),
                    Activation::Sigmoid => {
                        if *v >= 0.0 {
                            1.0 / (1.0 + (-*v).exp())
                        } else {
                            let e = v.exp();
                            e / (1.0 + e)
                        }
                    }
                    Activation::Relu => v.max(0.0),
                };
            }
            h = out;
        }
        Ok(h)
    }
}

/// GRU with the convention `h_t = (1 - z) * h_{t-1} + z * h_cand`:
/// a saturated-low update gate freezes the hidden state.
#[derive(Debug, Clone)]
pub struct GruSpec {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

/// Cached parameter nodes for one GRU, so unrolled steps share leaves.
pub struct GruNodes {
    wz: NodeId,
    uz: NodeId,
    bz: NodeId,
    wr: NodeId,
    ur: NodeId,
    br: NodeId,
    wh: NodeId,
    uh: NodeId,
    bh: NodeId,
}

impl GruSpec {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        GruSpec {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    pub fn register(&self, b: &mut ParamBuilder) {
        for gate in ["z", "r", "h"] {
            b.matrix(&format!("{}.w{}", self.prefix, gate), self.hidden, self.input);
            b.matrix(&format!("{}.u{}", self.prefix, gate), self.hidden, self.hidden);
            b.vector(&format!("{}.b{}", self.prefix, gate), self.hidden);
        }
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamVector) -> Result<GruNodes> {
        Ok(GruNodes {
            wz: tape.param(params, &format!("{}.wz", self.prefix))?,
            uz: tape.param(params, &format!("{}.uz", self.prefix))?,
            bz: tape.param(params, &format!("{}.bz", self.prefix))?,
            wr: tape.param(params, &format!("{}.wr", self.prefix))?,
            ur: tape.param(params, &format!("{}.ur", self.prefix))?,
            br: tape.param(params, &format!("{}.br", self.prefix))?,
            wh: tape.param(params, &format!("{}.wh", self.prefix))?,
            uh: tape.param(params, &format!("{}.uh", self.prefix))?,
            bh: tape.param(params, &format!("{}.bh", self.prefix))?,
        })
    }

    pub fn step(&self, tape: &mut Tape, n: &GruNodes, x: NodeId, h: NodeId) -> Result<NodeId> {
        let (nh, ni) = (self.hidden, self.input);
        let z_in = tape.matvec(n.wz, x, nh, ni)?;
        let z_h = tape.matvec(n.uz, h, nh, nh)?;
        let z = tape.add(z_in, z_h)?;
        let z = tape.add(z, n.bz)?;
        let z = tape.sigmoid(z);

        let r_in = tape.matvec(n.wr, x, nh, ni)?;
        let r_h = tape.matvec(n.ur, h, nh, nh)?;
        let r = tape.add(r_in, r_h)?;
        let r = tape.add(r, n.br)?;
        let r = tape.sigmoid(r);

        let rh = tape.mul(r, h)?;
        let c_in = tape.matvec(n.wh, x, nh, ni)?;
        let c_h = tape.matvec(n.uh, rh, nh, nh)?;
        let c = tape.add(c_in, c_h)?;
        let c = tape.add(c, n.bh)?;
        let cand = tape.tanh(c);

        // h + z*(cand - h) == (1-z)*h + z*cand
        let d = tape.sub(cand, h)?;
        let zd = tape.mul(z, d)?;
        tape.add(h, zd)
    }

    /// Unroll over a sequence, starting from a zero hidden state.
    /// Returns the hidden state after every step.
    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        params: &ParamVector,
        xs: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let nodes = self.bind(tape, params)?;
        let mut h = tape.constant(&vec![0.0; self.hidden]);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            h = self.step(tape, &nodes, x, h)?;
            out.push(h);
        }
        Ok(out)
    }

    pub fn init<R: Rng>(&self, params: &mut ParamVector, rng: &mut R) {
        init_prefix_xavier(params, &self.prefix, rng);
    }
}

/// LSTM with forget/input/output gates and candidate cell; forget-gate bias
/// initializes to 1 so early training keeps memory open.
#[derive(Debug, Clone)]
pub struct LstmSpec {
    pub prefix: String,
    pub input: usize,
    pub hidden: usize,
}

pub struct LstmNodes {
    gates: Vec<(NodeId, NodeId, NodeId)>, // (w, u, b) for f, i, o, c
}

impl LstmSpec {
    pub fn new(prefix: &str, input: usize, hidden: usize) -> Self {
        LstmSpec {
            prefix: prefix.to_string(),
            input,
            hidden,
        }
    }

    const GATES: [&'static str; 4] = ["f", "i", "o", "c"];

    pub fn register(&self, b: &mut ParamBuilder) {
        for gate in Self::GATES {
            b.matrix(&format!("{}.w{}", self.prefix, gate), self.hidden, self.input);
            b.matrix(&format!("{}.u{}", self.prefix, gate), self.hidden, self.hidden);
            b.vector(&format!("{}.b{}", self.prefix, gate), self.hidden);
        }
    }

    pub fn bind(&self, tape: &mut Tape, params: &ParamVector) -> Result<LstmNodes> {
        let mut gates = Vec::with_capacity(4);
        for gate in Self::GATES {
            gates.push((
                tape.param(params, &format!("{}.w{}", self.prefix, gate))?,
                tape.param(params, &format!("{}.u{}", self.prefix, gate))?,
                tape.param(params, &format!("{}.b{}", self.prefix, gate))?,
            ));
        }
        Ok(LstmNodes { gates })
    }

    fn gate(
        &self,
        tape: &mut Tape,
        n: (NodeId, NodeId, NodeId),
        x: NodeId,
        h: NodeId,
    ) -> Result<NodeId> {
        let a = tape.matvec(n.0, x, self.hidden, self.input)?;
        let b = tape.matvec(n.1, h, self.hidden, self.hidden)?;
        let s = tape.add(a, b)?;
        tape.add(s, n.2)
    }

    pub fn step(
        &self,
        tape: &mut Tape,
        n: &LstmNodes,
        x: NodeId,
        h: NodeId,
        c: NodeId,
    ) -> Result<(NodeId, NodeId)> {
        let f = self.gate(tape, n.gates[0], x, h)?;
        let f = tape.sigmoid(f);
        let i = self.gate(tape, n.gates[1], x, h)?;
        let i = tape.sigmoid(i);
        let o = self.gate(tape, n.gates[2], x, h)?;
        let o = tape.sigmoid(o);
        let cand = self.gate(tape, n.gates[3], x, h)?;
        let cand = tape.tanh(cand);

        let fc = tape.mul(f, c)?;
        let ic = tape.mul(i, cand)?;
        let c_next = tape.add(fc, ic)?;
        let tc = tape.tanh(c_next);
        let h_next = tape.mul(o, tc)?;
        Ok((h_next, c_next))
    }

    pub fn forward_sequence(
        &self,
        tape: &mut Tape,
        params: &ParamVector,
        xs: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let nodes = self.bind(tape, params)?;
        let zero = vec![0.0; self.hidden];
        let mut h = tape.constant(&zero);
        let mut c = tape.constant(&zero);
        let mut out = Vec::with_capacity(xs.len());
        for &x in xs {
            let (nh, nc) = self.step(tape, &nodes, x, h, c)?;
            h = nh;
            c = nc;
            out.push(h);
        }
        Ok(out)
    }

    pub fn init<R: Rng>(&self, params: &mut ParamVector, rng: &mut R) {
        init_prefix_xavier(params, &self.prefix, rng);
        params
            .fill_tensor(&format!("{}.bf", self.prefix), 1.0)
            .expect("forget bias registered");
    }
}

fn init_prefix_xavier<R: Rng>(params: &mut ParamVector, prefix: &str, rng: &mut R) {
    let names: Vec<(String, usize, usize)> = params
        .manifest()
        .iter()
        .filter(|t| t.name.starts_with(&format!("{prefix}.")))
        .map(|t| (t.name.clone(), t.rows, t.cols))
        .collect();
    for (name, rows, cols) in names {
        let t = params.tensor_mut(&name).expect("manifest name");
        if cols <= 1 {
            for v in t {
                *v = 0.0;
            }
        } else {
            let bound = (6.0 / (rows + cols) as f64).sqrt();
            for v in t {
                *v = rng.random_range(-bound..bound);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn identity_linear_layer_passes_input_through() {
        let spec = MlpSpec::new("m", &[3, 3], Activation::Tanh, Activation::Linear);
        let mut b = ParamBuilder::new();
        spec.register(&mut b);
        let mut p = b.finish();
        // weights = I, bias = 0
        let w = p.tensor_mut("m.w0").unwrap();
        for i in 0..3 {
            w[i * 3 + i] = 1.0;
        }
        let mut tape = Tape::new(&p);
        let x = tape.constant(&[0.3, -0.7, 1.0]);
        let y = spec.forward(&mut tape, &p, x).unwrap();
        assert_eq!(tape.value(y), &[0.3, -0.7, 1.0]);
    }

    #[test]
    fn gru_update_gate_zero_freezes_state() {
        // Saturate the update gate low via a large negative bias: h_t = h_{t-1}.
        let spec = GruSpec::new("g", 2, 3);
        let mut b = ParamBuilder::new();
        spec.register(&mut b);
        let mut p = b.finish();
        let mut rng = ChaCha12Rng::seed_from_u64(11);
        spec.init(&mut p, &mut rng);
        p.fill_tensor("g.bz", -60.0).unwrap();

        let mut tape = Tape::new(&p);
        let x0 = tape.constant(&[0.5, -0.5]);
        let x1 = tape.constant(&[1.5, 2.5]);
        let hs = spec.forward_sequence(&mut tape, &p, &[x0, x1]).unwrap();
        let h0 = tape.value(hs[0]).to_vec();
        let h1 = tape.value(hs[1]).to_vec();
        for (a, b) in h0.iter().zip(&h1) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn lstm_forget_one_input_zero_preserves_cell() {
        let spec = LstmSpec::new("l", 2, 3);
        let mut b = ParamBuilder::new();
        spec.register(&mut b);
        let mut p = b.finish();
        let mut rng = ChaCha12Rng::seed_from_u64(5);
        spec.init(&mut p, &mut rng);
        // Force f ~ 1 and i ~ 0 regardless of input.
        for g in ["f"] {
            p.fill_tensor(&format!("l.w{g}"), 0.0).unwrap();
            p.fill_tensor(&format!("l.u{g}"), 0.0).unwrap();
            p.fill_tensor(&format!("l.b{g}"), 60.0).unwrap();
        }
        for g in ["i"] {
            p.fill_tensor(&format!("l.w{g}"), 0.0).unwrap();
            p.fill_tensor(&format!("l.u{g}"), 0.0).unwrap();
            p.fill_tensor(&format!("l.b{g}"), -60.0).unwrap();
        }

        let mut tape = Tape::new(&p);
        let nodes = spec.bind(&mut tape, &p).unwrap();
        let c0 = tape.constant(&[0.2, -0.4, 0.9]);
        let h0 = tape.constant(&[0.0, 0.0, 0.0]);
        let x = tape.constant(&[3.0, -2.0]);
        let (_h1, c1) = spec.step(&mut tape, &nodes, x, h0, c0).unwrap();
        let c1v = tape.value(c1);
        for (a, b) in c1v.iter().zip(&[0.2, -0.4, 0.9]) {
            assert!((a - b).abs() < 1e-9, "{a} vs {b}");
        }
    }
}
