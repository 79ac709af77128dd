//! Analytical multiply-add counts for a DAC layer.
//!
//! All counts are per input sample. Spatial sizes are voxel counts
//! (`d * h * w`), so the 2D `H * W` of the usual formulation becomes a volume.

use super::attention_hidden_dim;

/// Attention branch: pooling `spatial * c_in`, then `c_in^2 / 4` and
/// `c_in * K / 4` for the two affine maps (integer division).
pub fn attention_cost(spatial_elems: u64, c_in: u64, num_kernels: u64) -> u64 {
    spatial_elems * c_in + c_in * c_in / 4 + c_in * num_kernels / 4
}

/// Aggregating `K` kernels and biases: `K c_in c_out vol + K c_out`.
pub fn aggregation_cost(c_in: u64, c_out: u64, kernel_volume: u64, num_kernels: u64) -> u64 {
    num_kernels * c_in * c_out * kernel_volume + num_kernels * c_out
}

/// The convolution itself: `out_spatial c_in c_out vol`.
pub fn conv_cost(out_spatial_elems: u64, c_in: u64, c_out: u64, kernel_volume: u64) -> u64 {
    out_spatial_elems * c_in * c_out * kernel_volume
}

/// The convolution must strictly dominate the attention and aggregation
/// overhead.
pub fn satisfies_cost_constraint(conv: u64, attention: u64, aggregation: u64) -> bool {
    conv > attention + aggregation
}

/// Trainable parameters of a DAC layer: `K` kernels (and biases) plus the
/// two attention maps.
pub fn dac_param_count(c_in: u64, c_out: u64, kernel_volume: u64, num_kernels: u64, with_bias: bool) -> u64 {
    let hidden = attention_hidden_dim(c_in as usize) as u64;
    let kernel = c_out * c_in * kernel_volume + if with_bias { c_out } else { 0 };
    num_kernels * kernel + (c_in * hidden + hidden) + (hidden * num_kernels + num_kernels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn attention_examples() {
        assert_eq!(attention_cost(121, 64, 4), 8832);
        assert_eq!(attention_cost(1, 4, 4), 12);
    }

    #[test]
    fn aggregation_and_conv_examples() {
        assert_eq!(aggregation_cost(8, 8, 27, 4), 6944);
        assert_eq!(conv_cost(1000, 8, 8, 27), 1_728_000);
    }

    #[test]
    fn constraint_is_strict() {
        assert!(satisfies_cost_constraint(11, 5, 5));
        assert!(!satisfies_cost_constraint(10, 5, 5));
    }

    proptest! {
        #[test]
        fn attention_cost_is_monotone(s in 1u64..5000, c in 1u64..512, k in 1u64..16, which in 0usize..3) {
            let base = attention_cost(s, c, k);
            let bumped = match which {
                0 => attention_cost(s + 1, c, k),
                1 => attention_cost(s, c + 1, k),
                _ => attention_cost(s, c, k + 1),
            };
            prop_assert!(bumped >= base);
        }
    }
}
