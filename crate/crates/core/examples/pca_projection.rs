//! Projects a handful of 3-D points onto their two principal components.

use lasas::harness::pca_project;
use lasas::numerics::Matrix;

fn main() -> lasas::Result<()> {
    let x = Matrix::from_rows(&[
        [2.0, 0.0, 1.0],
        [0.0, 1.0, -1.0],
        [-1.0, -1.0, 0.5],
        [3.0, 2.0, 0.0],
        [-4.0, -2.0, -0.5],
    ])?;
    let pca = pca_project(&x, 2)?;
    println!("eigenvalues: {:?}", pca.eigenvalues);
    for (i, c) in pca.components.iter().enumerate() {
        println!("component {}: {c:?}", i + 1);
    }
    for r in 0..x.rows() {
        println!("{:?} -> {:?}", x.row(r), pca.coordinates.row(r));
    }
    Ok(())
}
