//! Quadrilinear lookup and its gradients on a tiny hand-made table.
//!
//! ```text
//! cargo run --example lookup_interpolation
//! ```

use mmlut::lut::{corner_weights, lookup, lookup_backward, LutGrid4D};

fn main() -> mmlut::Result<()> {
    // an affine table is reproduced exactly between grid points
    let grid = LutGrid4D::<f64>::from_fn(17, 17.0, |k, l, m, n| (2 * k + 3 * l + m + n) as f64)?;
    let values = [40.0, 100.0, 12.5, 200.0];
    let c = grid.coord(values[0], values[1], values[2], values[3]);
    let exact = (2.0 * values[0] + 3.0 * values[1] + values[2] + values[3]) / 17.0;
    println!("cell {:?}, fractions {:.4?}", c.floor, c.frac);
    println!("lookup {:.9}, affine value {:.9}", lookup(&grid, &c), exact);

    let w = corner_weights(&c.frac);
    println!("16 corner weights sum to {:.15}", w.iter().sum::<f64>());

    let g = lookup_backward(&grid, &c, 1.0);
    println!("d out / d s = {:.6} per level (table slope 1/17 = {:.6})", g.d_s_coord / 17.0, 1.0 / 17.0);

    // the average-fusion start table
    let init = LutGrid4D::<f64>::average_init(17, 17.0)?;
    for (v, i) in [(0.0, 0.0), (34.0, 68.0), (255.0, 0.0), (255.0, 255.0)] {
        println!("init table at v={v:5.1} i={i:5.1}: {:6.2}", lookup(&init, &init.coord(v, i, 0.0, 128.0)));
    }
    Ok(())
}
