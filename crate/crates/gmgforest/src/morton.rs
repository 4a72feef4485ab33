//! Morton (z-order) arithmetic on refinement-tree paths.
//!
//! A cell at `level` is identified by its path from the root, `d` bits per
//! level with the deepest level in the least significant bits. The child
//! order within one level is lexicographic with x fastest: bit 0 of a child
//! index is the x offset, bit 1 the y offset, bit 2 the z offset. With this
//! layout the Morton key is exactly the bit interleaving of the cell's
//! integer coordinates at its level.

/// Extracts the integer coordinates of a cell from its Morton key.
pub fn decode(morton: u64, level: usize, dim: usize) -> [u32; 3] {
    let mut coords = [0u32; 3];
    for bit in 0..level {
        for (axis, c) in coords.iter_mut().enumerate().take(dim) {
            *c |= (((morton >> (dim * bit + axis)) & 1) as u32) << bit;
        }
    }
    coords
}

/// Interleaves integer coordinates into a Morton key.
pub fn encode(coords: [u32; 3], level: usize, dim: usize) -> u64 {
    let mut morton = 0u64;
    for bit in 0..level {
        for (axis, c) in coords.iter().enumerate().take(dim) {
            morton |= (((*c >> bit) & 1) as u64) << (dim * bit + axis);
        }
    }
    morton
}
