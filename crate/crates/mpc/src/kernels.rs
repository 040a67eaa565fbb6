//! Dense ring kernels shared by the dealer and the parties.

use crate::ring::RingElement;

/// `a (m×k) · b (k×n)` in the ring, row-major.
pub fn ring_matmul(a: &[RingElement], b: &[RingElement], m: usize, k: usize, n: usize) -> Vec<RingElement> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0u64; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for (l, av) in a[i * k..(i + 1) * k].iter().enumerate() {
            let av = av.0;
            if av == 0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[l * n..(l + 1) * n]) {
                *o = o.wrapping_add(av.wrapping_mul(bv.0));
            }
        }
    }
    out.into_iter().map(RingElement).collect()
}

/// Adds `src` into `dst` elementwise.
pub fn add_into(dst: &mut [RingElement], src: &[RingElement]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += *s;
    }
}

pub fn sub_vec(a: &[RingElement], b: &[RingElement]) -> Vec<RingElement> {
    a.iter().zip(b).map(|(x, y)| *x - *y).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let r = |v: &[i64]| v.iter().map(|x| RingElement::from_signed(*x)).collect::<Vec<_>>();
        let a = r(&[1, 2, 3, 4, 5, 6]);
        let b = r(&[1, 0, -1, 2, 0, 1]);
        // [[1,2,3],[4,5,6]] · [[1,0],[-1,2],[0,1]]
        assert_eq!(ring_matmul(&a, &b, 2, 3, 2), r(&[-1, 7, -1, 16]));
    }
}
