use std::collections::BTreeMap;

use ndarray::{Array2, Zip};

#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub m: Array2<f64>,
    pub v: Array2<f64>,
    pub t: u64,
}

/// Adam with bias correction; moments are kept per parameter name.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub state: BTreeMap<String, Moments>,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            state: BTreeMap::new(),
        }
    }
}

impl Adam {
    pub fn step(&mut self, name: &str, param: &mut Array2<f64>, grad: &Array2<f64>, lr: f64) {
        assert_eq!(param.dim(), grad.dim(), "gradient shape for {name}");
        let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
            m: Array2::zeros(param.dim()),
            v: Array2::zeros(param.dim()),
            t: 0,
        });
        st.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(st.t as i32);
        let c2 = 1.0 - b2.powi(st.t as i32);
        Zip::from(param)
            .and(&mut st.m)
            .and(&mut st.v)
            .and(grad)
            .for_each(|p, m, v, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / c1;
                let v_hat = *v / c2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            });
    }
}
