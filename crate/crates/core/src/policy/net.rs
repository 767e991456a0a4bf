//! Precision-generic forward and backward passes for the one-hidden-layer
//! network. Inputs are sparse: only nonzero pixels are visited.

use num_traits::Float;

use super::Head;

/// Weights in declaration order. `w1` is input-major (`input × hidden`) so a
/// nonzero pixel touches one contiguous row; `w2` is `hidden × output`.
#[derive(Clone, Debug, PartialEq)]
pub struct Net<F> {
    pub input: usize,
    pub hidden: usize,
    pub output: usize,
    pub w1: Vec<F>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: Vec<F>,
}

/// Nonzero entries of one flattened observation.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseInput<F> {
    pub index: Vec<u32>,
    pub value: Vec<F>,
}

impl<F: Float> SparseInput<F> {
    pub fn from_dense(x: &[f32]) -> Self {
        let mut index = Vec::new();
        let mut value = Vec::new();
        for (i, &v) in x.iter().enumerate() {
            if v != 0.0 {
                index.push(i as u32);
                value.push(F::from(v).expect("finite input"));
            }
        }
        Self { index, value }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Target {
    /// Regression target in normalized units.
    Continuous([f64; 2]),
    Discrete(usize),
}

pub struct Activations<F> {
    pub hidden: Vec<F>,
    pub output: Vec<F>,
}

pub struct Grads<F> {
    pub w1: Vec<F>,
    pub b1: Vec<F>,
    pub w2: Vec<F>,
    pub b2: Vec<F>,
}

impl<F: Float> Net<F> {
    pub fn zeros(input: usize, hidden: usize, output: usize) -> Self {
        Self {
            input,
            hidden,
            output,
            w1: vec![F::zero(); input * hidden],
            b1: vec![F::zero(); hidden],
            w2: vec![F::zero(); hidden * output],
            b2: vec![F::zero(); output],
        }
    }

    pub fn cast<G: Float>(&self) -> Net<G> {
        let c = |v: &[F]| v.iter().map(|x| G::from(*x).expect("finite weight")).collect();
        Net {
            input: self.input,
            hidden: self.hidden,
            output: self.output,
            w1: c(&self.w1),
            b1: c(&self.b1),
            w2: c(&self.w2),
            b2: c(&self.b2),
        }
    }

    pub fn forward(&self, x: &SparseInput<F>) -> Activations<F> {
        let h = self.hidden;
        let mut pre = self.b1.clone();
        for (&i, &v) in x.index.iter().zip(&x.value) {
            let row = &self.w1[i as usize * h..(i as usize + 1) * h];
            for (p, &w) in pre.iter_mut().zip(row) {
                *p = *p + v * w;
            }
        }
        let hidden: Vec<F> = pre.into_iter().map(F::tanh).collect();
        let mut output = self.b2.clone();
        for (j, &a) in hidden.iter().enumerate() {
            let row = &self.w2[j * self.output..(j + 1) * self.output];
            for (o, &w) in output.iter_mut().zip(row) {
                *o = *o + a * w;
            }
        }
        Activations { hidden, output }
    }

    /// Loss and its gradient with respect to the output layer.
    pub fn loss(head: Head, output: &[F], target: Target) -> (F, Vec<F>) {
        match (head, target) {
            (Head::Regression, Target::Continuous(t)) => {
                let n = F::from(output.len()).unwrap();
                let two = F::from(2.0).unwrap();
                let diff: Vec<F> = output.iter().zip(t).map(|(&y, t)| y - F::from(t).unwrap()).collect();
                let loss = diff.iter().fold(F::zero(), |acc, &d| acc + d * d) / n;
                (loss, diff.into_iter().map(|d| two * d / n).collect())
            }
            (Head::Categorical, Target::Discrete(k)) => {
                let max = output.iter().copied().fold(F::neg_infinity(), F::max);
                let exp: Vec<F> = output.iter().map(|&y| (y - max).exp()).collect();
                let z = exp.iter().fold(F::zero(), |a, &e| a + e);
                let loss = z.ln() - (output[k] - max);
                let grad = exp
                    .iter()
                    .enumerate()
                    .map(|(i, &e)| e / z - if i == k { F::one() } else { F::zero() })
                    .collect();
                (loss, grad)
            }
            _ => panic!("target kind does not match the network head"),
        }
    }

    /// Backpropagated error at the hidden pre-activations.
    pub fn hidden_delta(&self, act: &Activations<F>, dy: &[F]) -> Vec<F> {
        act.hidden
            .iter()
            .enumerate()
            .map(|(j, &a)| {
                let row = &self.w2[j * self.output..(j + 1) * self.output];
                let back = row.iter().zip(dy).fold(F::zero(), |acc, (&w, &d)| acc + w * d);
                back * (F::one() - a * a)
            })
            .collect()
    }

    /// Dense gradient of the per-sample loss; used by the gradient check.
    pub fn gradient(&self, head: Head, x: &SparseInput<F>, target: Target) -> (F, Grads<F>) {
        let act = self.forward(x);
        let (loss, dy) = Self::loss(head, &act.output, target);
        let dpre = self.hidden_delta(&act, &dy);
        let mut g = Grads {
            w1: vec![F::zero(); self.w1.len()],
            b1: dpre.clone(),
            w2: vec![F::zero(); self.w2.len()],
            b2: dy.clone(),
        };
        for (&i, &v) in x.index.iter().zip(&x.value) {
            for (j, &d) in dpre.iter().enumerate() {
                g.w1[i as usize * self.hidden + j] = v * d;
            }
        }
        for (j, &a) in act.hidden.iter().enumerate() {
            for (o, &d) in dy.iter().enumerate() {
                g.w2[j * self.output + o] = a * d;
            }
        }
        (loss, g)
    }

    pub fn tensors(&self) -> [&Vec<F>; 4] {
        [&self.w1, &self.b1, &self.w2, &self.b2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<F>; 4] {
        [&mut self.w1, &mut self.b1, &mut self.w2, &mut self.b2]
    }

    pub fn all_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

/// Per-sample quantities needed for a deferred SGD update.
pub struct SampleGrad<F> {
    pub hidden: Vec<F>,
    pub dy: Vec<F>,
    pub dpre: Vec<F>,
}

impl<F: Float> Net<F> {
    pub fn sample_grad(&self, head: Head, x: &SparseInput<F>, target: Target) -> (F, SampleGrad<F>) {
        let act = self.forward(x);
        let (loss, dy) = Self::loss(head, &act.output, target);
        let dpre = self.hidden_delta(&act, &dy);
        (loss, SampleGrad { hidden: act.hidden, dy, dpre })
    }

    /// `params -= step * grad` for one sample, touching only its nonzero rows.
    pub fn apply(&mut self, x: &SparseInput<F>, g: &SampleGrad<F>, step: F) {
        let h = self.hidden;
        for (&i, &v) in x.index.iter().zip(&x.value) {
            let row = &mut self.w1[i as usize * h..(i as usize + 1) * h];
            let s = step * v;
            for (w, &d) in row.iter_mut().zip(&g.dpre) {
                *w = *w - s * d;
            }
        }
        for (b, &d) in self.b1.iter_mut().zip(&g.dpre) {
            *b = *b - step * d;
        }
        for (j, &a) in g.hidden.iter().enumerate() {
            let row = &mut self.w2[j * self.output..(j + 1) * self.output];
            for (w, &d) in row.iter_mut().zip(&g.dy) {
                *w = *w - step * a * d;
            }
        }
        for (b, &d) in self.b2.iter_mut().zip(&g.dy) {
            *b = *b - step * d;
        }
    }
}
