//! Legacy ASCII VTK output of the leaf mesh as an unstructured grid of
//! quads/hexahedra with per-cell data.

use crate::forest::Forest;
use crate::fvsolver::cell_box;
use std::io::{self, Write};
use std::path::Path;

/// One per-cell scalar array, indexed like the global leaf sequence.
pub enum CellScalars {
    Int(&'static str, Vec<i64>),
    Float(&'static str, Vec<f64>),
}

impl CellScalars {
    fn name(&self) -> &'static str {
        match self {
            CellScalars::Int(n, _) => n,
            CellScalars::Float(n, _) => n,
        }
    }

    fn len(&self) -> usize {
        match self {
            CellScalars::Int(_, v) => v.len(),
            CellScalars::Float(_, v) => v.len(),
        }
    }
}

/// Write the global leaf mesh with the given cell arrays.
pub fn write_forest<const D: usize, W: Write>(
    out: &mut W,
    forest: &Forest<D>,
    scalars: &[CellScalars],
) -> io::Result<()> {
    let n = forest.num_global() as usize;
    for s in scalars {
        assert_eq!(s.len(), n, "cell array {} is misaligned", s.name());
    }
    let corners = 1usize << D;
    writeln!(out, "# vtk DataFile Version 3.0")?;
    writeln!(out, "leaf mesh")?;
    writeln!(out, "ASCII")?;
    writeln!(out, "DATASET UNSTRUCTURED_GRID")?;

    writeln!(out, "POINTS {} double", n * corners)?;
    let conn = forest.connectivity();
    for rank in 0..forest.num_ranks() {
        for leaf in forest.rank_leaves(rank) {
            let geo = cell_box(conn, leaf.tree, &leaf.quad);
            for c in 0..corners {
                let mut p = [0.0f64; 3];
                for a in 0..D {
                    p[a] = if c >> a & 1 == 1 { geo.hi[a] } else { geo.lo[a] };
                }
                writeln!(out, "{} {} {}", p[0], p[1], p[2])?;
            }
        }
    }

    writeln!(out, "CELLS {} {}", n, n * (corners + 1))?;
    // VTK corner order for quads and hexahedra (counterclockwise loops).
    let order: &[usize] = if D == 2 {
        &[0, 1, 3, 2]
    } else {
        &[0, 1, 3, 2, 4, 5, 7, 6]
    };
    for cell in 0..n {
        write!(out, "{corners}")?;
        for &c in order {
            write!(out, " {}", cell * corners + c)?;
        }
        writeln!(out)?;
    }
    writeln!(out, "CELL_TYPES {n}")?;
    let vtk_type = if D == 2 { 9 } else { 12 };
    for _ in 0..n {
        writeln!(out, "{vtk_type}")?;
    }

    if !scalars.is_empty() {
        writeln!(out, "CELL_DATA {n}")?;
        for s in scalars {
            match s {
                CellScalars::Int(name, values) => {
                    writeln!(out, "SCALARS {name} int 1")?;
                    writeln!(out, "LOOKUP_TABLE default")?;
                    for v in values {
                        writeln!(out, "{v}")?;
                    }
                }
                CellScalars::Float(name, values) => {
                    writeln!(out, "SCALARS {name} double 1")?;
                    writeln!(out, "LOOKUP_TABLE default")?;
                    for v in values {
                        writeln!(out, "{v}")?;
                    }
                }
            }
        }
    }
    Ok(())
}

/// Write the mesh to a file path.
pub fn write_forest_file<const D: usize>(
    path: &Path,
    forest: &Forest<D>,
    scalars: &[CellScalars],
) -> io::Result<()> {
    let mut file = io::BufWriter::new(std::fs::File::create(path)?);
    write_forest(&mut file, forest, scalars)
}

/// The per-cell owner ranks of the global leaf sequence (partition coloring).
pub fn rank_colors<const D: usize>(forest: &Forest<D>) -> Vec<i64> {
    let mut colors = Vec::with_capacity(forest.num_global() as usize);
    for rank in 0..forest.num_ranks() {
        colors.extend(std::iter::repeat_n(rank as i64, forest.rank_leaves(rank).len()));
    }
    colors
}

/// The per-cell refinement levels of the global leaf sequence.
pub fn level_colors<const D: usize>(forest: &Forest<D>) -> Vec<i64> {
    let mut levels = Vec::with_capacity(forest.num_global() as usize);
    for rank in 0..forest.num_ranks() {
        levels.extend(forest.rank_leaves(rank).iter().map(|l| l.quad.level as i64));
    }
    levels
}
