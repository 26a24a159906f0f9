use super::ParamStore;
use rand::Rng;

fn init_uniform<R: Rng + ?Sized>(dst: &mut [f64], bound: f64, rng: &mut R) {
    for v in dst {
        *v = rng.random_range(-bound..bound);
    }
}

pub fn relu_inplace(x: &mut [f64]) {
    for v in x {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Masks `dy` where the post-activation output is zero.
pub fn relu_backward(activated: &[f64], dy: &mut [f64]) {
    for (g, &a) in dy.iter_mut().zip(activated) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fully connected layer, weight `[out × in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub input: usize,
    pub output: usize,
    w: usize,
    b: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Self {
        let w = store.add(&format!("{name}.weight"), &[output, input], true);
        let b = store.add(&format!("{name}.bias"), &[output], false);
        let bound = 1.0 / (input as f64).sqrt();
        init_uniform(&mut store.values_mut()[w..w + input * output], bound, rng);
        init_uniform(&mut store.values_mut()[b..b + output], bound, rng);
        Self { input, output, w, b }
    }

    pub fn forward(&self, p: &[f64], x: &[f64]) -> Vec<f64> {
        let w = &p[self.w..self.w + self.input * self.output];
        (0..self.output)
            .map(|o| {
                let row = &w[o * self.input..(o + 1) * self.input];
                p[self.b + o] + row.iter().zip(x).map(|(a, b)| a * b).sum::<f64>()
            })
            .collect()
    }

    /// Accumulates parameter gradients into `g` and returns `dL/dx` when asked.
    pub fn backward(&self, p: &[f64], x: &[f64], dy: &[f64], g: &mut [f64], want_dx: bool) -> Option<Vec<f64>> {
        for o in 0..self.output {
            let d = dy[o];
            if d == 0.0 {
                continue;
            }
            g[self.b + o] += d;
            let gw = &mut g[self.w + o * self.input..self.w + (o + 1) * self.input];
            for (gi, xi) in gw.iter_mut().zip(x) {
                *gi += d * xi;
            }
        }
        want_dx.then(|| {
            let w = &p[self.w..self.w + self.input * self.output];
            let mut dx = vec![0.0; self.input];
            for o in 0..self.output {
                let d = dy[o];
                if d == 0.0 {
                    continue;
                }
                for (dxi, wi) in dx.iter_mut().zip(&w[o * self.input..(o + 1) * self.input]) {
                    *dxi += d * wi;
                }
            }
            dx
        })
    }
}

/// 1-D convolution over time with zero padding `kernel / 2`.
/// Weight layout `[out][in][kernel]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: usize,
    pub stride: usize,
    pub padding: usize,
    w: usize,
    b: usize,
}

impl Conv1d {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        rng: &mut R,
    ) -> Self {
        let n = out_channels * in_channels * kernel;
        let w = store.add(&format!("{name}.weight"), &[out_channels, in_channels, kernel], true);
        let b = store.add(&format!("{name}.bias"), &[out_channels], false);
        let bound = 1.0 / ((in_channels * kernel) as f64).sqrt();
        init_uniform(&mut store.values_mut()[w..w + n], bound, rng);
        init_uniform(&mut store.values_mut()[b..b + out_channels], bound, rng);
        Self { in_channels, out_channels, kernel, stride, padding: kernel / 2, w, b }
    }

    pub fn out_len(&self, t: usize) -> usize {
        if t + 2 * self.padding < self.kernel {
            0
        } else {
            (t + 2 * self.padding - self.kernel) / self.stride + 1
        }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], t: usize) -> Vec<f64> {
        let (ci, co, k) = (self.in_channels, self.out_channels, self.kernel);
        let t_out = self.out_len(t);
        let w = &p[self.w..self.w + co * ci * k];
        let mut y = vec![0.0; t_out * co];
        for s in 0..t_out {
            let out = &mut y[s * co..(s + 1) * co];
            out.copy_from_slice(&p[self.b..self.b + co]);
            for j in 0..k {
                let pos = (s * self.stride + j) as isize - self.padding as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                let xr = &x[pos as usize * ci..(pos as usize + 1) * ci];
                for (o, acc) in out.iter_mut().enumerate() {
                    let base = o * ci * k + j;
                    let mut sum = 0.0;
                    for (i, xv) in xr.iter().enumerate() {
                        sum += w[base + i * k] * xv;
                    }
                    *acc += sum;
                }
            }
        }
        y
    }

    pub fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        t: usize,
        dy: &[f64],
        g: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (ci, co, k) = (self.in_channels, self.out_channels, self.kernel);
        let t_out = self.out_len(t);
        let w = &p[self.w..self.w + co * ci * k];
        let mut dx = if want_dx { vec![0.0; t * ci] } else { Vec::new() };
        for s in 0..t_out {
            let d = &dy[s * co..(s + 1) * co];
            for (o, &dv) in d.iter().enumerate() {
                g[self.b + o] += dv;
            }
            for j in 0..k {
                let pos = (s * self.stride + j) as isize - self.padding as isize;
                if pos < 0 || pos as usize >= t {
                    continue;
                }
                let pos = pos as usize;
                let xr = &x[pos * ci..(pos + 1) * ci];
                for (o, &dv) in d.iter().enumerate() {
                    if dv == 0.0 {
                        continue;
                    }
                    let base = o * ci * k + j;
                    for (i, xv) in xr.iter().enumerate() {
                        g[self.w + base + i * k] += dv * xv;
                    }
                    if want_dx {
                        let dxr = &mut dx[pos * ci..(pos + 1) * ci];
                        for (i, dxv) in dxr.iter_mut().enumerate() {
                            *dxv += dv * w[base + i * k];
                        }
                    }
                }
            }
        }
        want_dx.then_some(dx)
    }
}

/// Non-overlapping max pooling of width 2 over time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool2;

impl MaxPool2 {
    pub fn out_len(t: usize) -> usize {
        t / 2
    }

    /// Returns pooled values and the flat input index each output came from.
    pub fn forward(x: &[f64], t: usize, c: usize) -> (Vec<f64>, Vec<usize>) {
        let t_out = t / 2;
        let mut y = Vec::with_capacity(t_out * c);
        let mut idx = Vec::with_capacity(t_out * c);
        for s in 0..t_out {
            for ch in 0..c {
                let a = (2 * s) * c + ch;
                let b = (2 * s + 1) * c + ch;
                let pick = if x[b] > x[a] { b } else { a };
                y.push(x[pick]);
                idx.push(pick);
            }
        }
        (y, idx)
    }

    pub fn backward(dy: &[f64], idx: &[usize], input_len: usize) -> Vec<f64> {
        let mut dx = vec![0.0; input_len];
        for (d, &i) in dy.iter().zip(idx) {
            dx[i] += d;
        }
        dx
    }
}

/// Single-layer LSTM, gate order input, forget, cell, output.
#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    pub input: usize,
    pub hidden: usize,
    w_ih: usize,
    w_hh: usize,
    b: usize,
}

/// Per-step activations kept for backpropagation through time.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    pub t: usize,
    /// `[T × 4H]` activated gates.
    gates: Vec<f64>,
    /// `[T × H]`
    cells: Vec<f64>,
    /// `[T × H]` hidden states (the layer output).
    pub hidden: Vec<f64>,
}

impl Lstm {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        input: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let g = 4 * hidden;
        let w_ih = store.add(&format!("{name}.weight_ih"), &[g, input], true);
        let w_hh = store.add(&format!("{name}.weight_hh"), &[g, hidden], true);
        let b = store.add(&format!("{name}.bias"), &[g], false);
        let bound = 1.0 / (hidden as f64).sqrt();
        let v = store.values_mut();
        init_uniform(&mut v[w_ih..w_ih + g * input], bound, rng);
        init_uniform(&mut v[w_hh..w_hh + g * hidden], bound, rng);
        init_uniform(&mut v[b..b + g], bound, rng);
        for k in hidden..2 * hidden {
            v[b + k] += 1.0;
        }
        Self { input, hidden, w_ih, w_hh, b }
    }

    pub fn forward(&self, p: &[f64], x: &[f64], t: usize) -> LstmTrace {
        let (n_in, h) = (self.input, self.hidden);
        let g4 = 4 * h;
        let w_ih = &p[self.w_ih..self.w_ih + g4 * n_in];
        let w_hh = &p[self.w_hh..self.w_hh + g4 * h];
        let bias = &p[self.b..self.b + g4];
        let mut gates = vec![0.0; t * g4];
        let mut cells = vec![0.0; t * h];
        let mut hidden = vec![0.0; t * h];
        let mut pre = vec![0.0; g4];
        for s in 0..t {
            let xt = &x[s * n_in..(s + 1) * n_in];
            for r in 0..g4 {
                let mut acc = bias[r];
                let wr = &w_ih[r * n_in..(r + 1) * n_in];
                for (a, b) in wr.iter().zip(xt) {
                    acc += a * b;
                }
                if s > 0 {
                    let hp = &hidden[(s - 1) * h..s * h];
                    let wr = &w_hh[r * h..(r + 1) * h];
                    for (a, b) in wr.iter().zip(hp) {
                        acc += a * b;
                    }
                }
                pre[r] = acc;
            }
            let gs = &mut gates[s * g4..(s + 1) * g4];
            for k in 0..h {
                let i = sigmoid(pre[k]);
                let f = sigmoid(pre[h + k]);
                let gg = pre[2 * h + k].tanh();
                let o = sigmoid(pre[3 * h + k]);
                gs[k] = i;
                gs[h + k] = f;
                gs[2 * h + k] = gg;
                gs[3 * h + k] = o;
                let c_prev = if s > 0 { cells[(s - 1) * h + k] } else { 0.0 };
                let c = f * c_prev + i * gg;
                cells[s * h + k] = c;
                hidden[s * h + k] = o * c.tanh();
            }
        }
        LstmTrace { t, gates, cells, hidden }
    }

    /// Backpropagation through time given `dL/dh_t` for every step.
    pub fn backward(
        &self,
        p: &[f64],
        x: &[f64],
        trace: &LstmTrace,
        dh_out: &[f64],
        g: &mut [f64],
        want_dx: bool,
    ) -> Option<Vec<f64>> {
        let (n_in, h, t) = (self.input, self.hidden, trace.t);
        let g4 = 4 * h;
        let w_ih = &p[self.w_ih..self.w_ih + g4 * n_in];
        let w_hh = &p[self.w_hh..self.w_hh + g4 * h];
        let mut dx = if want_dx { vec![0.0; t * n_in] } else { Vec::new() };
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut da = vec![0.0; g4];
        for s in (0..t).rev() {
            let gs = &trace.gates[s * g4..(s + 1) * g4];
            for k in 0..h {
                let (i, f, gg, o) = (gs[k], gs[h + k], gs[2 * h + k], gs[3 * h + k]);
                let c = trace.cells[s * h + k];
                let c_prev = if s > 0 { trace.cells[(s - 1) * h + k] } else { 0.0 };
                let tc = c.tanh();
                let dh = dh_out[s * h + k] + dh_next[k];
                let d_o = dh * tc;
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                let di = dc * gg;
                let dg = dc * i;
                let df = dc * c_prev;
                dc_next[k] = dc * f;
                da[k] = di * i * (1.0 - i);
                da[h + k] = df * f * (1.0 - f);
                da[2 * h + k] = dg * (1.0 - gg * gg);
                da[3 * h + k] = d_o * o * (1.0 - o);
            }
            let xt = &x[s * n_in..(s + 1) * n_in];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for r in 0..g4 {
                let d = da[r];
                g[self.b + r] += d;
                let gw = &mut g[self.w_ih + r * n_in..self.w_ih + (r + 1) * n_in];
                for (gi, xi) in gw.iter_mut().zip(xt) {
                    *gi += d * xi;
                }
                if s > 0 {
                    let hp = &trace.hidden[(s - 1) * h..s * h];
                    let gw = &mut g[self.w_hh + r * h..self.w_hh + (r + 1) * h];
                    for (gi, hi) in gw.iter_mut().zip(hp) {
                        *gi += d * hi;
                    }
                    for (dn, wv) in dh_next.iter_mut().zip(&w_hh[r * h..(r + 1) * h]) {
                        *dn += d * wv;
                    }
                }
                if want_dx {
                    let dxr = &mut dx[s * n_in..(s + 1) * n_in];
                    for (dv, wv) in dxr.iter_mut().zip(&w_ih[r * n_in..(r + 1) * n_in]) {
                        *dv += d * wv;
                    }
                }
            }
        }
        want_dx.then_some(dx)
    }
}
