//! Rigid transforms and grid resampling shared by the geometric kinds.

/// Rigid motion: output voxel p samples the input at R(p - c) + c + t.
#[derive(Debug, Clone)]
pub(crate) struct Rigid {
    pub rot: [[f64; 3]; 3],
    pub trans: [f64; 3],
    pub center: [f64; 3],
}

impl Rigid {
    /// Compose from per-axis rotation angles (radians) and a translation.
    pub fn new(angles: [f64; 3], trans: [f64; 3], shape: &[usize]) -> Rigid {
        let rx = axis_rotation(0, angles[0]);
        let ry = axis_rotation(1, angles[1]);
        let rz = axis_rotation(2, angles[2]);
        let rot = matmul(&rz, &matmul(&ry, &rx));
        let center = [
            (shape[0] as f64 - 1.0) / 2.0,
            (shape[1] as f64 - 1.0) / 2.0,
            (shape[2] as f64 - 1.0) / 2.0,
        ];
        Rigid { rot, trans, center }
    }

    #[inline]
    pub fn map(&self, p: [f64; 3]) -> [f64; 3] {
        let d = [
            p[0] - self.center[0],
            p[1] - self.center[1],
            p[2] - self.center[2],
        ];
        let mut q = [0.0; 3];
        for i in 0..3 {
            q[i] = self.rot[i][0] * d[0] + self.rot[i][1] * d[1] + self.rot[i][2] * d[2]
                + self.center[i]
                + self.trans[i];
        }
        q
    }
}

fn axis_rotation(axis: usize, angle: f64) -> [[f64; 3]; 3] {
    let (s, c) = angle.sin_cos();
    let mut m = [[0.0; 3]; 3];
    let (a, b) = match axis {
        0 => (1, 2),
        1 => (2, 0),
        _ => (0, 1),
    };
    m[axis][axis] = 1.0;
    m[a][a] = c;
    m[b][b] = c;
    m[a][b] = -s;
    m[b][a] = s;
    m
}

fn matmul(a: &[[f64; 3]; 3], b: &[[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                out[i][j] += a[i][k] * b[k][j];
            }
        }
    }
    out
}

#[inline]
fn voxel(grid: &[f64], shape: &[usize], h: i64, w: i64, d: i64) -> f64 {
    if h < 0
        || w < 0
        || d < 0
        || h >= shape[0] as i64
        || w >= shape[1] as i64
        || d >= shape[2] as i64
    {
        return 0.0;
    }
    grid[(h as usize * shape[1] + w as usize) * shape[2] + d as usize]
}

/// Trilinear sample with zero padding outside the grid. Exact when the
/// coordinate lands on a voxel center.
pub(crate) fn trilinear(grid: &[f64], shape: &[usize], q: [f64; 3]) -> f64 {
    let base = [q[0].floor(), q[1].floor(), q[2].floor()];
    let f = [q[0] - base[0], q[1] - base[1], q[2] - base[2]];
    let (h0, w0, d0) = (base[0] as i64, base[1] as i64, base[2] as i64);
    let mut acc = 0.0;
    for (dh, wh) in [(0i64, 1.0 - f[0]), (1, f[0])] {
        if wh == 0.0 {
            continue;
        }
        for (dw, ww) in [(0i64, 1.0 - f[1]), (1, f[1])] {
            if ww == 0.0 {
                continue;
            }
            for (dd, wd) in [(0i64, 1.0 - f[2]), (1, f[2])] {
                if wd == 0.0 {
                    continue;
                }
                acc += wh * ww * wd * voxel(grid, shape, h0 + dh, w0 + dw, d0 + dd);
            }
        }
    }
    acc
}

/// Nearest-neighbor sample with zero padding outside; used for masks so
/// the label set is preserved.
pub(crate) fn nearest(grid: &[f64], shape: &[usize], q: [f64; 3]) -> f64 {
    voxel(
        grid,
        shape,
        q[0].round() as i64,
        q[1].round() as i64,
        q[2].round() as i64,
    )
}

pub(crate) fn resample(
    grid: &[f64],
    shape: &[usize],
    map: impl Fn([f64; 3]) -> [f64; 3],
    use_trilinear: bool,
) -> Vec<f64> {
    let mut out = Vec::with_capacity(grid.len());
    for h in 0..shape[0] {
        for w in 0..shape[1] {
            for d in 0..shape[2] {
                let q = map([h as f64, w as f64, d as f64]);
                out.push(if use_trilinear {
                    trilinear(grid, shape, q)
                } else {
                    nearest(grid, shape, q)
                });
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_rigid_is_exact() {
        let shape = [4usize, 4, 4];
        let grid: Vec<f64> = (0..64).map(|x| x as f64 * 0.37).collect();
        let rigid = Rigid::new([0.0; 3], [0.0; 3], &shape);
        let out = resample(&grid, &shape, |p| rigid.map(p), true);
        assert_eq!(out, grid);
    }

    #[test]
    fn translation_by_one_voxel_shifts() {
        let shape = [4usize, 4, 4];
        let mut grid = vec![0.0; 64];
        grid[(1 * 4 + 1) * 4 + 1] = 1.0;
        // sampling coordinate shifted by +1 along h pulls the value down
        let rigid = Rigid::new([0.0; 3], [1.0, 0.0, 0.0], &shape);
        let out = resample(&grid, &shape, |p| rigid.map(p), true);
        assert_eq!(out[(0 * 4 + 1) * 4 + 1], 1.0);
        assert_eq!(out[(1 * 4 + 1) * 4 + 1], 0.0);
    }

    #[test]
    fn nearest_keeps_label_set() {
        let shape = [4usize, 4, 4];
        let grid: Vec<f64> = (0..64).map(|i| if i % 7 == 0 { 1.0 } else { 0.0 }).collect();
        let rigid = Rigid::new([0.1, -0.05, 0.2], [0.3, -0.6, 0.2], &shape);
        let out = resample(&grid, &shape, |p| rigid.map(p), false);
        assert!(out.iter().all(|&x| x == 0.0 || x == 1.0));
    }
}
