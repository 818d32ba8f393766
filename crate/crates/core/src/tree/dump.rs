use std::io::Write;

use crate::error::Result;

use super::TreeProcess;

/// CSV with columns `level,path_bits,B0,X0,Y0,Z0`; `path_bits` lists the
/// moves from the root (`1` = up). `Z0` is empty at the leaves.
pub fn write_tree_csv<W: Write>(
    mut w: W,
    x0: &TreeProcess<f64>,
    y0: &TreeProcess<f64>,
    z0: &TreeProcess<f64>,
) -> Result<()> {
    let tree = x0.tree();
    writeln!(w, "level,path_bits,B0,X0,Y0,Z0")?;
    for id in 0..tree.node_count() {
        let k = tree.level_of(id);
        let p = tree.path_of(id);
        let bits: String = (0..k)
            .rev()
            .map(|b| if (p >> b) & 1 == 1 { '1' } else { '0' })
            .collect();
        let z = if tree.is_leaf(id) {
            String::new()
        } else {
            format!("{:.17e}", z0.get(id))
        };
        writeln!(
            w,
            "{k},{bits},{:.17e},{:.17e},{:.17e},{z}",
            tree.b0(id),
            x0.get(id),
            y0.get(id)
        )?;
    }
    Ok(())
}
