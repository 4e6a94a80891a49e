//! Owen-scrambled Sobol points in up to 64 base dimensions.
//!
//! Points are produced in Gray-code order, so the first `2^m` points of every
//! dimension form a (scrambled) base-2 net. Scrambling is a hash-based nested
//! uniform scramble applied to the bit-reversed integer, seeded per dimension.
//! The point index itself goes through a random unit upper-triangular binary
//! map (Faure-Tezuka style) per stream, so two streams are not paired point by
//! point; every block `[0, 2^m)` maps onto itself and stays a net.
//! Dimensions beyond the table are padded by re-using the base dimensions with
//! a fresh scramble seed and a fresh index map.

use super::joe_kuo::JOE_KUO;
use std::sync::OnceLock;

pub(crate) const BASE_DIMENSIONS: usize = JOE_KUO.len();
const BITS: usize = 32;

fn direction_table() -> &'static [[u32; BITS]; BASE_DIMENSIONS] {
    static TABLE: OnceLock<[[u32; BITS]; BASE_DIMENSIONS]> = OnceLock::new();
    TABLE.get_or_init(|| {
        let mut table = [[0u32; BITS]; BASE_DIMENSIONS];
        for (dim, (poly, init)) in JOE_KUO.iter().enumerate() {
            table[dim] = directions(*poly, init);
        }
        table
    })
}

fn directions(poly: u32, init: &[u32]) -> [u32; BITS] {
    let mut v = [0u32; BITS];
    if poly == 1 {
        for (k, slot) in v.iter_mut().enumerate() {
            *slot = 1u32 << (BITS - 1 - k);
        }
        return v;
    }
    let degree = (32 - poly.leading_zeros() - 1) as usize;
    // m_k for k = 1..=BITS, stored zero-based.
    let mut m = [0u64; BITS];
    m[..degree].copy_from_slice(&init.iter().map(|&x| x as u64).collect::<Vec<_>>());
    for k in degree..BITS {
        let mut value = m[k - degree] ^ (m[k - degree] << degree);
        for i in 1..degree {
            if (poly >> (degree - i)) & 1 == 1 {
                value ^= m[k - i] << i;
            }
        }
        m[k] = value;
    }
    for k in 0..BITS {
        v[k] = (m[k] << (BITS - 1 - k)) as u32;
    }
    v
}

/// Unscrambled Sobol integer for point `index` in base dimension `dim`.
pub(crate) fn sobol_u32(index: u64, dim: usize) -> u32 {
    let table = &direction_table()[dim];
    let mut gray = index ^ (index >> 1);
    let mut out = 0u32;
    let mut bit = 0;
    while gray != 0 && bit < BITS {
        if gray & 1 == 1 {
            out ^= table[bit];
        }
        gray >>= 1;
        bit += 1;
    }
    out
}

// Every bit of the result depends only on lower bits of the input, which is
// what makes the reversed application a nested (Owen) scramble.
fn lk_hash(mut x: u32, seed: u32) -> u32 {
    x ^= x.wrapping_mul(0x3d20adea);
    x = x.wrapping_add(seed);
    x = x.wrapping_mul((seed >> 16) | 1);
    x ^= x.wrapping_mul(0x05526c56);
    x ^= x.wrapping_mul(0x53a22864);
    x
}

pub(crate) fn owen_scramble(x: u32, seed: u32) -> u32 {
    lk_hash(x.reverse_bits(), seed).reverse_bits()
}

/// Random unit upper-triangular map on the low 32 index bits: output bit `k`
/// is input bit `k` xor a random parity of the bits above it.
#[derive(Clone, Copy, Debug)]
pub(crate) struct IndexScramble {
    masks: [u32; BITS],
}

impl IndexScramble {
    pub(crate) fn new(seed: u64) -> Self {
        let mut masks = [0u32; BITS];
        for (k, m) in masks.iter_mut().enumerate() {
            let r = super::splitmix64(seed ^ super::splitmix64(k as u64 + 0x51)) as u32;
            let above = !((2u64 << k) - 1) as u32;
            *m = (1u32 << k) | (r & above);
        }
        Self { masks }
    }

    pub(crate) fn apply(&self, index: u64) -> u64 {
        let lo = index as u32;
        let mut out = 0u32;
        for (k, m) in self.masks.iter().enumerate() {
            out |= ((lo & m).count_ones() & 1) << k;
        }
        (index & !0xffff_ffff) | out as u64
    }
}

fn level_seed(seed: u64, pad: u64) -> u64 {
    super::splitmix64(seed ^ super::splitmix64(pad.wrapping_add(1)))
}

fn coordinate(index: u64, dim: usize, seed: u64) -> f64 {
    let base = dim % BASE_DIMENSIONS;
    let pad = (dim / BASE_DIMENSIONS) as u64;
    let dim_seed = level_seed(seed, pad)
        .wrapping_add(base as u64)
        .wrapping_mul(0x9e37_79b9_7f4a_7c15);
    let dim_seed = (super::splitmix64(dim_seed) >> 32) as u32;
    let x = owen_scramble(sobol_u32(index, base), dim_seed);
    (x as f64 + 0.5) * (1.0 / 4_294_967_296.0)
}

/// Fills `out` with the scrambled point `index` of the stream `seed`.
pub(crate) fn fill_point(index: u64, seed: u64, out: &mut [f64]) {
    let mut level = usize::MAX;
    let mut idx = index;
    for (dim, slot) in out.iter_mut().enumerate() {
        let pad = dim / BASE_DIMENSIONS;
        if pad != level {
            idx = IndexScramble::new(level_seed(seed, pad as u64) ^ 0x7a3c_55e1).apply(index);
            level = pad;
        }
        *slot = coordinate(idx, dim, seed);
    }
}

/// Scrambled coordinate in the open unit interval.
#[cfg(test)]
pub(crate) fn scrambled(index: u64, dim: usize, seed: u64) -> f64 {
    let pad = (dim / BASE_DIMENSIONS) as u64;
    let idx = IndexScramble::new(level_seed(seed, pad) ^ 0x7a3c_55e1).apply(index);
    coordinate(idx, dim, seed)
}

#[cfg(test)]
mod tests {
    use super::*;

    // Reference integers (value * 2^32) from an independent Joe-Kuo
    // implementation, unscrambled, Gray-code order.
    const REFERENCE: [(u64, [u32; 10]); 6] = [
        (1, [2147483648; 10]),
        (
            2,
            [
                3221225472, 1073741824, 1073741824, 1073741824, 3221225472, 3221225472,
                1073741824, 3221225472, 3221225472, 3221225472,
            ],
        ),
        (
            3,
            [
                1073741824, 3221225472, 3221225472, 3221225472, 1073741824, 1073741824,
                3221225472, 1073741824, 1073741824, 1073741824,
            ],
        ),
        (
            5,
            [
                3758096384, 3758096384, 536870912, 1610612736, 3758096384, 2684354560,
                3758096384, 1610612736, 1610612736, 536870912,
            ],
        ),
        (
            13,
            [
                3489660928, 2952790016, 3489660928, 268435456, 1879048192, 4026531840,
                2415919104, 2415919104, 2415919104, 1879048192,
            ],
        ),
        (
            15,
            [
                268435456, 4026531840, 2415919104, 1342177280, 2952790016, 805306368,
                3489660928, 1342177280, 1342177280, 2952790016,
            ],
        ),
    ];

    #[test]
    fn matches_reference_points() {
        for (index, expected) in REFERENCE {
            for (dim, &want) in expected.iter().enumerate() {
                assert_eq!(sobol_u32(index, dim), want, "index {index} dim {dim}");
            }
        }
    }

    #[test]
    fn first_power_of_two_points_are_stratified() {
        for dim in 0..BASE_DIMENSIONS {
            let mut seen = [false; 64];
            for i in 0..64 {
                let cell = (sobol_u32(i, dim) >> 26) as usize;
                assert!(!seen[cell], "dim {dim} repeats cell {cell}");
                seen[cell] = true;
            }
        }
    }

    #[test]
    fn scrambling_preserves_stratification() {
        for dim in [0, 3, 17, 63, 64, 130] {
            let mut seen = [false; 32];
            for i in 0..32 {
                let u = scrambled(i, dim, 42);
                assert!(u > 0.0 && u < 1.0);
                let cell = (u * 32.0) as usize;
                assert!(!seen[cell]);
                seen[cell] = true;
            }
        }
    }

    #[test]
    fn index_map_permutes_each_block() {
        let t = IndexScramble::new(9);
        for m in [1u32, 4, 7] {
            let mut seen = vec![false; 1 << m];
            for i in 0..(1u64 << m) {
                let j = t.apply(i) as usize;
                assert!(j < seen.len() && !seen[j]);
                seen[j] = true;
            }
        }
        assert_eq!(t.apply(5 + (1 << 40)) >> 32, 1 << 8);
    }

    #[test]
    fn streams_are_not_paired_by_index() {
        // With a shared index the top bits of two streams would be a fixed
        // function of each other; here all four combinations occur evenly.
        let n = 4096;
        let mut a = vec![0.0];
        let mut b = vec![0.0];
        let mut counts = [0usize; 4];
        for i in 0..n {
            fill_point(i, 11, &mut a);
            fill_point(i, 12, &mut b);
            counts[(a[0] < 0.5) as usize * 2 + (b[0] < 0.5) as usize] += 1;
        }
        for c in counts {
            assert!((c as f64 - 1024.0).abs() < 150.0, "{counts:?}");
        }
    }

    #[test]
    fn scramble_depends_on_seed() {
        let a: Vec<f64> = (0..8).map(|i| scrambled(i, 2, 1)).collect();
        let b: Vec<f64> = (0..8).map(|i| scrambled(i, 2, 2)).collect();
        assert_ne!(a, b);
    }
}
