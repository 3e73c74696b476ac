use ndarray::{Array2, ArrayView2};

use crate::Scalar;

/// Width of the encoding of a `d`-vector at `levels` frequencies.
pub fn encoded_width(d: usize, levels: usize) -> usize {
    d * (2 * levels + 1)
}

/// Frequency encoding `[x, sin(2⁰πx), cos(2⁰πx), …, sin(2^{L−1}πx), cos(2^{L−1}πx)]`.
pub fn positional_encode<T: Scalar>(x: &[T], levels: usize) -> Vec<T> {
    let d = x.len();
    let mut out = Vec::with_capacity(encoded_width(d, levels));
    out.extend_from_slice(x);
    let pi = T::lit(std::f64::consts::PI);
    let mut freq = pi;
    for _ in 0..levels {
        out.extend(x.iter().map(|&v| (freq * v).sin()));
        out.extend(x.iter().map(|&v| (freq * v).cos()));
        freq = freq + freq;
    }
    out
}

/// Row-wise [`positional_encode`] of an `n × d` batch.
pub fn encode_batch<T: Scalar>(x: ArrayView2<T>, levels: usize) -> Array2<T> {
    let (n, d) = x.dim();
    let mut out = Array2::zeros((n, encoded_width(d, levels)));
    for (row, mut dst) in x.outer_iter().zip(out.outer_iter_mut()) {
        let row = row.to_vec();
        for (o, v) in dst.iter_mut().zip(positional_encode(&row, levels)) {
            *o = v;
        }
    }
    out
}

/// Pulls gradients with respect to the encoding back to the raw inputs.
pub fn encode_batch_backward<T: Scalar>(x: ArrayView2<T>, levels: usize, grad: ArrayView2<T>) -> Array2<T> {
    let (n, d) = x.dim();
    assert_eq!(grad.dim(), (n, encoded_width(d, levels)));
    let mut out = Array2::zeros((n, d));
    let pi = T::lit(std::f64::consts::PI);
    for r in 0..n {
        for k in 0..d {
            let v = x[[r, k]];
            let mut acc = grad[[r, k]];
            let mut freq = pi;
            for l in 0..levels {
                let base = d + 2 * l * d;
                let (s, c) = (freq * v).sin_cos();
                acc += freq * (grad[[r, base + k]] * c - grad[[r, base + d + k]] * s);
                freq = freq + freq;
            }
            out[[r, k]] = acc;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn zero_levels_is_identity() {
        assert_eq!(positional_encode(&[0.3, -1.0, 2.0], 0), vec![0.3, -1.0, 2.0]);
    }

    #[test]
    fn zero_input() {
        let e = positional_encode(&[0.0f64; 3], 4);
        assert_eq!(e.len(), 27);
        for l in 0..4 {
            let base = 3 + 6 * l;
            assert!(e[base..base + 3].iter().all(|&s| s == 0.0));
            assert!(e[base + 3..base + 6].iter().all(|&c| c == 1.0));
        }
    }

    #[test]
    fn hand_evaluated_case() {
        let e = positional_encode(&[0.5f64], 2);
        let expect = [0.5, 1.0, 0.0, 0.0, -1.0];
        for (a, b) in e.iter().zip(expect) {
            assert!((a - b).abs() < 1e-15, "{e:?}");
        }
    }

    #[test]
    fn backward_matches_finite_differences() {
        let x = array![[0.3f64, -0.7], [1.1, 0.05]];
        let levels = 3;
        let w = encoded_width(2, levels);
        let g = Array2::from_shape_fn((2, w), |(r, c)| ((r * w + c) as f64 * 0.37).sin());
        let analytic = encode_batch_backward(x.view(), levels, g.view());
        let h = 1e-6;
        for r in 0..2 {
            for k in 0..2 {
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[[r, k]] += h;
                xm[[r, k]] -= h;
                let fp = (&encode_batch(xp.view(), levels) * &g).sum();
                let fm = (&encode_batch(xm.view(), levels) * &g).sum();
                let fd = (fp - fm) / (2.0 * h);
                assert!((fd - analytic[[r, k]]).abs() < 1e-7 * (1.0 + fd.abs()));
            }
        }
    }
}
