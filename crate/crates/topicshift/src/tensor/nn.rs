//! Neural-network ops: row softmax / log-softmax, masked log-sum-exp,
//! layer normalization, GELU, and embedding lookup.
//!
//! Everything that exponentiates subtracts the row maximum first, so large
//! logits stay finite.

use super::{contract, Tensor, TensorError, TensorResult};

impl Tensor {
    /// Row-wise softmax of a matrix.
    pub fn softmax_rows(&self) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("softmax_rows")?;
        if n == 0 {
            return Err(contract("softmax_rows", "rows must be non-empty"));
        }
        let x = self.data_vec();
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            for j in 0..n {
                let e = (row[j] - mx).exp();
                out[i * n + j] = e;
                denom += e;
            }
            for j in 0..n {
                out[i * n + j] /= denom;
            }
        }
        let y = out.clone();
        Ok(Tensor::from_op(vec![m, n], out, vec![self.clone()], move |adj| {
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                let yr = &y[i * n..(i + 1) * n];
                let gr = &adj[i * n..(i + 1) * n];
                let inner: f64 = yr.iter().zip(gr).map(|(v, g)| v * g).sum();
                for j in 0..n {
                    dx[i * n + j] = yr[j] * (gr[j] - inner);
                }
            }
            vec![dx]
        }))
    }

    /// Row-wise log-softmax; the stable path for cross-entropy (`-inf` never
    /// appears for finite logits).
    pub fn log_softmax_rows(&self) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("log_softmax_rows")?;
        if n == 0 {
            return Err(contract("log_softmax_rows", "rows must be non-empty"));
        }
        let x = self.data_vec();
        let mut out = vec![0.0; m * n];
        let mut soft = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mx = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let denom: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            let log_denom = denom.ln();
            for j in 0..n {
                let ls = row[j] - mx - log_denom;
                out[i * n + j] = ls;
                soft[i * n + j] = ls.exp();
            }
        }
        Ok(Tensor::from_op(vec![m, n], out, vec![self.clone()], move |adj| {
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                let yr = &soft[i * n..(i + 1) * n];
                let gr = &adj[i * n..(i + 1) * n];
                let gsum: f64 = gr.iter().sum();
                for j in 0..n {
                    dx[i * n + j] = gr[j] - yr[j] * gsum;
                }
            }
            vec![dx]
        }))
    }

    /// Per-row `log Σ exp` over the entries whose mask bit is set, returning a
    /// length-`rows` vector. Masked-out entries receive exactly zero gradient.
    /// Errors when some row has no entry left.
    pub fn log_sum_exp_rows_masked(&self, mask: &[bool]) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("log_sum_exp_rows_masked")?;
        if mask.len() != m * n {
            return Err(contract(
                "log_sum_exp_rows_masked",
                format!("mask has {} bits for {} entries", mask.len(), m * n),
            ));
        }
        let x = self.data_vec();
        let mut out = vec![0.0; m];
        // Softmax over the kept entries, reused as the backward weights.
        let mut weights = vec![0.0; m * n];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let kept = &mask[i * n..(i + 1) * n];
            let mut mx = f64::NEG_INFINITY;
            for j in 0..n {
                if kept[j] && row[j] > mx {
                    mx = row[j];
                }
            }
            if mx == f64::NEG_INFINITY {
                return Err(contract(
                    "log_sum_exp_rows_masked",
                    format!("row {i} has every entry masked out"),
                ));
            }
            let mut denom = 0.0;
            for j in 0..n {
                if kept[j] {
                    let e = (row[j] - mx).exp();
                    weights[i * n + j] = e;
                    denom += e;
                }
            }
            out[i] = mx + denom.ln();
            for j in 0..n {
                weights[i * n + j] /= denom;
            }
        }
        Ok(Tensor::from_op(vec![m], out, vec![self.clone()], move |adj| {
            let mut dx = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    dx[i * n + j] = adj[i] * weights[i * n + j];
                }
            }
            vec![dx]
        }))
    }

    /// Normalizes each row to zero mean / unit variance, then applies a
    /// learned per-column gain and bias.
    pub fn layer_norm_rows(&self, gain: &Tensor, bias: &Tensor, eps: f64) -> TensorResult<Tensor> {
        let (m, n) = self.dims2("layer_norm_rows")?;
        if gain.shape() != [n] || bias.shape() != [n] {
            return Err(TensorError::IncompatibleShapes {
                op: "layer_norm_rows",
                left: self.shape().to_vec(),
                right: gain.shape().to_vec(),
            });
        }
        let x = self.data_vec();
        let g = gain.data_vec();
        let b = bias.data_vec();
        let mut out = vec![0.0; m * n];
        let mut xhat = vec![0.0; m * n];
        let mut inv_std = vec![0.0; m];
        for i in 0..m {
            let row = &x[i * n..(i + 1) * n];
            let mu: f64 = row.iter().sum::<f64>() / n as f64;
            let var: f64 = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n as f64;
            let inv = 1.0 / (var + eps).sqrt();
            inv_std[i] = inv;
            for j in 0..n {
                let h = (row[j] - mu) * inv;
                xhat[i * n + j] = h;
                out[i * n + j] = g[j] * h + b[j];
            }
        }
        let g_bw = g.clone();
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), gain.clone(), bias.clone()],
            move |adj| {
                let mut dx = vec![0.0; m * n];
                let mut dgain = vec![0.0; n];
                let mut dbias = vec![0.0; n];
                for i in 0..m {
                    let hr = &xhat[i * n..(i + 1) * n];
                    let gr = &adj[i * n..(i + 1) * n];
                    // Adjoint of the normalized values.
                    let dh: Vec<f64> = (0..n).map(|j| gr[j] * g_bw[j]).collect();
                    let mean_dh: f64 = dh.iter().sum::<f64>() / n as f64;
                    let mean_dh_h: f64 =
                        dh.iter().zip(hr).map(|(d, h)| d * h).sum::<f64>() / n as f64;
                    for j in 0..n {
                        dx[i * n + j] = inv_std[i] * (dh[j] - mean_dh - hr[j] * mean_dh_h);
                        dgain[j] += gr[j] * hr[j];
                        dbias[j] += gr[j];
                    }
                }
                vec![dx, dgain, dbias]
            },
        ))
    }

    /// GELU activation (tanh form), applied elementwise.
    pub fn gelu(&self) -> Tensor {
        const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
        const A: f64 = 0.044715;
        let x = self.data_vec();
        let out: Vec<f64> = x
            .iter()
            .map(|&v| {
                let u = C * (v + A * v * v * v);
                0.5 * v * (1.0 + u.tanh())
            })
            .collect();
        Tensor::from_op(self.shape().to_vec(), out, vec![self.clone()], move |adj| {
            vec![adj
                .iter()
                .zip(&x)
                .map(|(g, &v)| {
                    let u = C * (v + A * v * v * v);
                    let t = u.tanh();
                    let du = C * (1.0 + 3.0 * A * v * v);
                    g * (0.5 * (1.0 + t) + 0.5 * v * (1.0 - t * t) * du)
                })
                .collect()]
        })
    }

    /// Gathers rows of an embedding table: `table[V, d]` indexed by `ids`
    /// yields `[len(ids), d]`. Backward scatter-adds into the table, so a
    /// token that appears twice gets both contributions.
    pub fn lookup_rows(&self, ids: &[usize]) -> TensorResult<Tensor> {
        let (v, d) = self.dims2("lookup_rows")?;
        for (pos, &id) in ids.iter().enumerate() {
            if id >= v {
                return Err(contract(
                    "lookup_rows",
                    format!("id {id} at position {pos} out of range for table of {v} rows"),
                ));
            }
        }
        let table = self.data_vec();
        let t = ids.len();
        let mut out = vec![0.0; t * d];
        for (row, &id) in ids.iter().enumerate() {
            out[row * d..(row + 1) * d].copy_from_slice(&table[id * d..(id + 1) * d]);
        }
        let ids_bw = ids.to_vec();
        Ok(Tensor::from_op(vec![t, d], out, vec![self.clone()], move |adj| {
            let mut dt = vec![0.0; v * d];
            for (row, &id) in ids_bw.iter().enumerate() {
                for j in 0..d {
                    dt[id * d + j] += adj[row * d + j];
                }
            }
            vec![dt]
        }))
    }
}
