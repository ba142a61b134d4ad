//! Morton keys, cell anchors and the sorted order they induce.

use m3::cloud::LabeledPointCloud;
use m3::morton::{morton_decode, morton_encode, morton_sort, point_key};

fn main() -> m3::Result<()> {
    let lattice = [5u32, 3, 1];
    let key = morton_encode(lattice)?;
    println!("{lattice:?} -> {:#b}", key.0);
    assert_eq!(morton_decode(key), lattice);

    // a 4x4x4 lattice of points in reverse order
    let mut positions = Vec::new();
    for i in (0..64).rev() {
        positions.push([(i % 4) as f64, ((i / 4) % 4) as f64, (i / 16) as f64]);
    }
    let cloud = LabeledPointCloud::new(positions, vec![], vec![], None)?;
    let cube = cloud.compute_bounds()?;
    let sorted = morton_sort(&cloud, &cube)?;
    println!("cube origin {:?}, edge {:.6}", cube.origin, cube.edge);
    for (rank, &i) in sorted.perm.iter().enumerate().take(10) {
        let p = cloud.positions[i];
        let k = point_key(&p, &cube)?;
        println!("{rank:>3}: point {i:>2} at {p:?}  depth-1 octant {}  depth-2 anchor {:#x}", k.octant(1), k.cell_anchor(2).0);
    }
    Ok(())
}
