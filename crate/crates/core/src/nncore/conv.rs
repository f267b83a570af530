/// Shape of a dense N-dimensional grid with a 3-wide stencil on every axis.
///
/// Cells are numbered row-major (last axis fastest). Taps enumerate the offsets
/// `{-1, 0, 1}^D` in the same row-major order, so tap `(3^D - 1) / 2` is the center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridShape {
    dims: Vec<usize>,
    strides: Vec<usize>,
    taps: Vec<Vec<i64>>,
}

impl GridShape {
    /// Panics for more than 8 axes.
    pub fn new(dims: &[usize]) -> Self {
        let d = dims.len();
        assert!(d <= 8, "grids support at most 8 axes");
        let mut strides = vec![1usize; d];
        for a in (0..d.saturating_sub(1)).rev() {
            strides[a] = strides[a + 1] * dims[a + 1];
        }
        let mut taps = vec![Vec::new()];
        for _ in 0..d {
            taps = taps
                .into_iter()
                .flat_map(|t: Vec<i64>| {
                    (-1..=1).map(move |o| {
                        let mut t = t.clone();
                        t.push(o);
                        t
                    })
                })
                .collect();
        }
        Self { dims: dims.to_vec(), strides, taps }
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn taps(&self) -> &[Vec<i64>] {
        &self.taps
    }

    pub fn coords(&self, cell: usize) -> Vec<usize> {
        self.strides.iter().zip(&self.dims).map(|(s, d)| (cell / s) % d).collect()
    }

    pub fn index(&self, coords: &[usize]) -> usize {
        coords.iter().zip(&self.strides).map(|(c, s)| c * s).sum()
    }

    /// Cell at `cell + offset`, or `None` when it falls outside the grid.
    pub fn offset(&self, cell: usize, offset: &[i64]) -> Option<usize> {
        let mut out = 0usize;
        for a in 0..self.dims.len() {
            let c = ((cell / self.strides[a]) % self.dims[a]) as i64 + offset[a];
            if c < 0 || c >= self.dims[a] as i64 {
                return None;
            }
            out += c as usize * self.strides[a];
        }
        Some(out)
    }

    pub fn neighbor(&self, cell: usize, tap: usize) -> Option<usize> {
        self.offset(cell, &self.taps[tap])
    }

    /// `neighbor(cell, tap)` for every tap, written into `out`.
    pub fn neighbors(&self, cell: usize, out: &mut Vec<Option<usize>>) {
        let d = self.dims.len();
        let mut c = [0i64; 8];
        for a in 0..d {
            c[a] = ((cell / self.strides[a]) % self.dims[a]) as i64;
        }
        out.clear();
        out.extend(self.taps.iter().map(|off| {
            let mut idx = 0usize;
            for a in 0..d {
                let x = c[a] + off[a];
                if x < 0 || x >= self.dims[a] as i64 {
                    return None;
                }
                idx += x as usize * self.strides[a];
            }
            Some(idx)
        }));
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taps_and_neighbors() {
        let g = GridShape::new(&[3, 4, 5]);
        assert_eq!(g.cells(), 60);
        assert_eq!(g.taps().len(), 27);
        assert_eq!(g.taps()[13], vec![0, 0, 0]);
        let c = g.index(&[1, 2, 3]);
        assert_eq!(g.coords(c), vec![1, 2, 3]);
        assert_eq!(g.neighbor(c, 13), Some(c));
        assert_eq!(g.offset(c, &[1, 1, 1]), Some(g.index(&[2, 3, 4])));
        assert_eq!(g.offset(g.index(&[0, 0, 0]), &[-1, 0, 0]), None);
        assert_eq!(GridShape::new(&[2, 2, 2, 2]).taps().len(), 81);
        let mut out = Vec::new();
        for cell in 0..g.cells() {
            g.neighbors(cell, &mut out);
            let one: Vec<_> = (0..27).map(|t| g.neighbor(cell, t)).collect();
            assert_eq!(out, one);
        }
    }
}
