//! Z-order keys. Within each bit triplet x is the high bit and z the low bit,
//! matching the octree child index `(x << 2) | (y << 1) | z`.

use crate::pointcloud::Voxel;

/// Interleaves three 32-bit values, most significant bits first.
pub fn interleave(x: u32, y: u32, z: u32) -> u128 {
    let mut key = 0u128;
    for bit in (0..32).rev() {
        let triplet = ((x >> bit) & 1) << 2 | ((y >> bit) & 1) << 1 | ((z >> bit) & 1);
        key = key << 3 | u128::from(triplet);
    }
    key
}

/// Total order over signed voxels. Flipping the sign bit maps `i32` onto
/// `u32` monotonically, so for non-negative voxels this is plain Morton order.
pub fn signed_key(v: Voxel) -> u128 {
    let f = |c: i32| (c as u32) ^ 0x8000_0000;
    interleave(f(v[0]), f(v[1]), f(v[2]))
}

/// Octree child index of a non-negative voxel at tree `level` (0 = root) for a
/// tree of `depth` levels.
pub fn child_index(v: Voxel, level: u32, depth: u32) -> u8 {
    let bit = depth - 1 - level;
    let b = |c: i32| ((c as u32 >> bit) & 1) as u8;
    b(v[0]) << 2 | b(v[1]) << 1 | b(v[2])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interleave_orders_x_highest() {
        assert_eq!(interleave(0, 0, 1), 1);
        assert_eq!(interleave(0, 1, 0), 2);
        assert_eq!(interleave(1, 0, 0), 4);
        assert_eq!(interleave(1, 1, 1), 7);
        assert_eq!(interleave(2, 0, 0), 32);
    }

    #[test]
    fn signed_order_matches_unsigned_for_non_negative() {
        let a = [3, 1, 4];
        let b = [1, 5, 9];
        assert_eq!(
            signed_key(a) < signed_key(b),
            interleave(3, 1, 4) < interleave(1, 5, 9)
        );
        assert!(signed_key([-1, 0, 0]) < signed_key([0, 0, 0]));
    }

    #[test]
    fn child_index_msb_first() {
        assert_eq!(child_index([1, 1, 1], 0, 1), 7);
        assert_eq!(child_index([2, 0, 1], 0, 2), 4);
        assert_eq!(child_index([2, 0, 1], 1, 2), 1);
    }
}
