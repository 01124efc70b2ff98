use super::SimError;
use crate::dataflow::ComputeOp;
use crate::Tensor;

fn expect_len(what: &str, t: &Tensor, want: usize) -> Result<(), SimError> {
    if t.len() != want {
        return Err(SimError::Shape(format!(
            "{what} has shape {:?} ({} elements), expected {want}",
            t.shape(),
            t.len()
        )));
    }
    Ok(())
}

/// Dense GeMM / GeMV / attention decode with a fixed summation order and
/// 64-bit accumulation.
///
/// `operands` holds the weight (`[N, M]`) or the K and V caches
/// (`[B, T, H*C]`); `activation` is `x` (`[S, M]` or `[M]`) or the decode
/// queries (`[B, H, C]`).
pub fn reference_compute(
    op: &ComputeOp,
    operands: &[Tensor],
    activation: &Tensor,
) -> Result<Tensor, SimError> {
    op.validate()?;
    let want = op.phases().len();
    if operands.len() != want {
        return Err(SimError::Shape(format!(
            "{} operands given, {want} expected",
            operands.len()
        )));
    }
    match *op {
        ComputeOp::Gemm { s, n, m } => {
            expect_len("weight", &operands[0], n * m)?;
            expect_len("activation", activation, s * m)?;
            let (w, x) = (operands[0].data(), activation.data());
            let mut out = vec![0f32; s * n];
            for si in 0..s {
                for ni in 0..n {
                    let mut acc = 0f64;
                    for mi in 0..m {
                        acc += f64::from(x[si * m + mi]) * f64::from(w[ni * m + mi]);
                    }
                    out[si * n + ni] = acc as f32;
                }
            }
            Ok(Tensor::new(vec![s, n], out)?)
        }
        ComputeOp::Gemv { n, m } => {
            expect_len("weight", &operands[0], n * m)?;
            expect_len("activation", activation, m)?;
            let (w, x) = (operands[0].data(), activation.data());
            let out = (0..n)
                .map(|ni| {
                    (0..m)
                        .map(|mi| f64::from(w[ni * m + mi]) * f64::from(x[mi]))
                        .sum::<f64>() as f32
                })
                .collect();
            Ok(Tensor::new(vec![n], out)?)
        }
        ComputeOp::AttentionDecode { b, h, t, c } => {
            let width = h * c;
            expect_len("K cache", &operands[0], b * t * width)?;
            expect_len("V cache", &operands[1], b * t * width)?;
            expect_len("queries", activation, b * h * c)?;
            let (k, v, q) = (operands[0].data(), operands[1].data(), activation.data());
            let scale = 1.0 / (c as f64).sqrt();
            let mut out = vec![0f32; b * h * c];
            let mut logits = vec![0f64; t];
            for bi in 0..b {
                for hi in 0..h {
                    let qh = &q[(bi * h + hi) * c..][..c];
                    for (ti, l) in logits.iter_mut().enumerate() {
                        let row = &k[(bi * t + ti) * width + hi * c..][..c];
                        *l = scale
                            * qh.iter()
                                .zip(row)
                                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                                .sum::<f64>();
                    }
                    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let weights: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
                    let total: f64 = weights.iter().sum();
                    for ci in 0..c {
                        let acc: f64 = (0..t)
                            .map(|ti| {
                                weights[ti] * f64::from(v[(bi * t + ti) * width + hi * c + ci])
                            })
                            .sum();
                        out[(bi * h + hi) * c + ci] = (acc / total) as f32;
                    }
                }
            }
            Ok(Tensor::new(vec![b, h, c], out)?)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::random_tensor;

    #[test]
    fn scalar_product() {
        let w = Tensor::new(vec![1, 1], vec![3.0]).unwrap();
        let x = Tensor::new(vec![1], vec![-2.0]).unwrap();
        let out = reference_compute(&ComputeOp::gemv(1, 1), &[w], &x).unwrap();
        assert_eq!(out.data(), &[-6.0]);
    }

    #[test]
    fn single_token_attention_returns_v() {
        let k = random_tensor(vec![1, 1, 8], 1);
        let v = random_tensor(vec![1, 1, 8], 2);
        let q = random_tensor(vec![1, 2, 4], 3);
        let out =
            reference_compute(&ComputeOp::attention(1, 2, 1, 4), &[k, v.clone()], &q).unwrap();
        assert_eq!(out.data(), v.data());
    }

    // Second implementation: attention through explicit matrices and a
    // GeMM built from GeMV calls.
    #[test]
    fn cross_checked_against_second_implementation() {
        let (b, h, t, c) = (2, 3, 5, 4);
        let k = random_tensor(vec![b, t, h * c], 10);
        let v = random_tensor(vec![b, t, h * c], 11);
        let q = random_tensor(vec![b, h, c], 12);
        let out = reference_compute(
            &ComputeOp::attention(b, h, t, c),
            &[k.clone(), v.clone()],
            &q,
        )
        .unwrap();
        for bi in 0..b {
            for hi in 0..h {
                let scores: Vec<f32> = (0..t)
                    .map(|ti| {
                        let mut s = 0f32;
                        for ci in 0..c {
                            s += q.data()[(bi * h + hi) * c + ci]
                                * k.data()[(bi * t + ti) * h * c + hi * c + ci];
                        }
                        s / (c as f32).sqrt()
                    })
                    .collect();
                let e: Vec<f32> = scores.iter().map(|s| s.exp()).collect();
                let z: f32 = e.iter().sum();
                for ci in 0..c {
                    let mut o = 0f32;
                    for (ti, &ei) in e.iter().enumerate() {
                        o += ei / z * v.data()[(bi * t + ti) * h * c + hi * c + ci];
                    }
                    let got = out.data()[(bi * h + hi) * c + ci];
                    assert!((got - o).abs() < 1e-5, "{got} vs {o}");
                }
            }
        }

        let (s, n, m) = (3, 4, 6);
        let w = random_tensor(vec![n, m], 20);
        let x = random_tensor(vec![s, m], 21);
        let gemm =
            reference_compute(&ComputeOp::gemm(s, n, m), std::slice::from_ref(&w), &x).unwrap();
        for si in 0..s {
            let row = Tensor::new(vec![m], x.row(si).to_vec()).unwrap();
            let gemv =
                reference_compute(&ComputeOp::gemv(n, m), std::slice::from_ref(&w), &row).unwrap();
            assert_eq!(&gemm.data()[si * n..(si + 1) * n], gemv.data());
        }
    }

    #[test]
    fn shape_mismatch() {
        let w = Tensor::zeros(vec![2, 3]);
        let x = Tensor::zeros(vec![4]);
        assert!(reference_compute(&ComputeOp::gemv(2, 3), &[w], &x).is_err());
    }
}
