//! Plain-`Vec` re-implementation of the tree network, written without the
//! tape, used as an independent oracle.

#![allow(dead_code)]

use treeqn_autodiff::ParamStore;
use treeqn_model::ModelDims;

pub struct PlainNet<'a> {
    pub store: &'a ParamStore,
    pub dims: ModelDims,
    pub gamma: f64,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &[f64]) -> Vec<f64> {
    let n = dot(v, v).sqrt();
    v.iter().map(|x| x / n).collect()
}

impl<'a> PlainNet<'a> {
    fn p(&self, name: &str) -> &[f64] {
        let id = self
            .store
            .find(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"));
        self.store.value(id).data()
    }

    /// `W x + b` with `W` stored row-major as `[out, in]`.
    fn linear(&self, name: &str, x: &[f64], bias: bool) -> Vec<f64> {
        let w = self.p(&format!("{name}.w"));
        let out = w.len() / x.len();
        (0..out)
            .map(|o| {
                let b = if bias {
                    self.p(&format!("{name}.b"))[o]
                } else {
                    0.0
                };
                b + dot(&w[o * x.len()..(o + 1) * x.len()], x)
            })
            .collect()
    }

    pub fn encode(&self, obs: &[f64]) -> Vec<f64> {
        let (mut c, mut h, mut w) = (self.dims.in_channels, self.dims.height, self.dims.width);
        let mut x = obs.to_vec();
        for (i, spec) in self.dims.convs.iter().enumerate() {
            let k = self.p(&format!("encoder.conv{i}.w"));
            let b = self.p(&format!("encoder.conv{i}.b"));
            let (kk, s, co) = (spec.kernel, spec.stride, spec.out_channels);
            let (oh, ow) = ((h - kk) / s + 1, (w - kk) / s + 1);
            let mut y = vec![0.0; co * oh * ow];
            for o in 0..co {
                for r in 0..oh {
                    for q in 0..ow {
                        let mut acc = b[o];
                        for ci in 0..c {
                            for i2 in 0..kk {
                                for j2 in 0..kk {
                                    acc += k[((o * c + ci) * kk + i2) * kk + j2]
                                        * x[(ci * h + r * s + i2) * w + q * s + j2];
                                }
                            }
                        }
                        y[(o * oh + r) * ow + q] = acc.max(0.0);
                    }
                }
            }
            x = y;
            c = co;
            h = oh;
            w = ow;
        }
        normalize(&self.linear("encoder.fc", &x, true))
    }

    pub fn transition(&self, z: &[f64], a: usize) -> Vec<f64> {
        let pre = self.linear("transition.env", z, true);
        let zhat: Vec<f64> = z.iter().zip(&pre).map(|(z, p)| z + p.tanh()).collect();
        let t = self.linear(&format!("transition.action{a}"), &zhat, false);
        let raw: Vec<f64> = zhat.iter().zip(&t).map(|(h, t)| h + t.tanh()).collect();
        normalize(&raw)
    }

    pub fn rewards(&self, z: &[f64]) -> Vec<f64> {
        let h: Vec<f64> = self
            .linear("reward.fc1", z, true)
            .into_iter()
            .map(|v| v.max(0.0))
            .collect();
        self.linear("reward.fc2", &h, true)
    }

    pub fn value(&self, z: &[f64]) -> f64 {
        self.linear("value", z, true)[0]
    }

    /// Hard-max Bellman backup by exhaustive path enumeration: for each first
    /// action, the best discounted predicted return over every continuation
    /// of length `depth − 1`, ending in the leaf value.
    pub fn q_bruteforce_max(&self, z: &[f64], depth: usize) -> Vec<f64> {
        let n_a = self.dims.actions;
        (0..n_a)
            .map(|a0| {
                let mut best = f64::NEG_INFINITY;
                for code in 0..n_a.pow(depth as u32 - 1) {
                    let mut path = vec![a0];
                    let mut c = code;
                    for _ in 1..depth {
                        path.push(c % n_a);
                        c /= n_a;
                    }
                    let mut node = z.to_vec();
                    let mut ret = 0.0;
                    let mut disc = 1.0;
                    for &a in &path {
                        ret += disc * self.rewards(&node)[a];
                        node = self.transition(&node, a);
                        disc *= self.gamma;
                    }
                    ret += disc * self.value(&node);
                    best = best.max(ret);
                }
                best
            })
            .collect()
    }

    /// λ-mixed backup with the softmax (or hard) backup function, by direct
    /// recursion on individual vectors.
    pub fn q_lambda(&self, z: &[f64], depth: usize, lambda: f64, softmax: bool) -> Vec<f64> {
        let r = self.rewards(z);
        (0..self.dims.actions)
            .map(|a| {
                r[a] + self.gamma
                    * self.v_lambda(&self.transition(z, a), depth - 1, lambda, softmax)
            })
            .collect()
    }

    fn v_lambda(&self, z: &[f64], remaining: usize, lambda: f64, softmax: bool) -> f64 {
        let v = self.value(z);
        if remaining == 0 {
            return v;
        }
        let q = self.q_lambda(z, remaining, lambda, softmax);
        let b = if softmax {
            let m = q.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = q.iter().map(|x| (x - m).exp()).collect();
            let s: f64 = e.iter().sum();
            q.iter().zip(&e).map(|(x, w)| x * w / s).sum()
        } else {
            q.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
        };
        (1.0 - lambda) * v + lambda * b
    }
}
