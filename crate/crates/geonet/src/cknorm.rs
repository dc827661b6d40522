//! C^k norms of gridded scalar/tensor fields by centered finite differences.
//!
//! The norm is the max over interior grid points of the absolute value of
//! every partial derivative of order <= k, in the declared coordinates of the
//! grid. Stencils up to fourth order per axis are supported (enough for
//! C^{k+2} with k = 2); mixed partials compose the per-axis stencils.

use crate::error::{GeonetError, Result};

/// A sampled field on a regular box grid. Data layout: C-order over the axes
/// (last axis fastest), `components` values per grid point.
#[derive(Debug, Clone)]
pub struct GridField {
    pub shape: Vec<usize>,
    pub spacing: Vec<f64>,
    pub components: usize,
    pub data: Vec<f64>,
}

impl GridField {
    pub fn new(
        shape: Vec<usize>,
        spacing: Vec<f64>,
        components: usize,
        data: Vec<f64>,
    ) -> Result<Self> {
        let points: usize = shape.iter().product();
        if data.len() != points * components {
            return Err(GeonetError::Input(format!(
                "grid data length {} does not match shape {:?} x {} components",
                data.len(),
                shape,
                components
            )));
        }
        if shape.len() != spacing.len() {
            return Err(GeonetError::Input("shape/spacing rank mismatch".into()));
        }
        if spacing.iter().any(|&h| !(h > 0.0)) {
            return Err(GeonetError::Input("grid spacing must be positive".into()));
        }
        Ok(GridField {
            shape,
            spacing,
            components,
            data,
        })
    }

    /// Sample a closure on the grid `origin + i*spacing`.
    pub fn sample(
        origin: &[f64],
        spacing: &[f64],
        shape: &[usize],
        components: usize,
        mut f: impl FnMut(&[f64], &mut [f64]),
    ) -> Result<Self> {
        let rank = shape.len();
        let points: usize = shape.iter().product();
        let mut data = vec![0.0; points * components];
        let mut idx = vec![0usize; rank];
        let mut coords = vec![0.0; rank];
        for p in 0..points {
            let mut rem = p;
            for ax in (0..rank).rev() {
                idx[ax] = rem % shape[ax];
                rem /= shape[ax];
            }
            for ax in 0..rank {
                coords[ax] = origin[ax] + idx[ax] as f64 * spacing[ax];
            }
            f(&coords, &mut data[p * components..(p + 1) * components]);
        }
        GridField::new(shape.to_vec(), spacing.to_vec(), components, data)
    }

    fn flat_index(&self, idx: &[usize]) -> usize {
        let mut f = 0usize;
        for (ax, &i) in idx.iter().enumerate() {
            f = f * self.shape[ax] + i;
        }
        f
    }

    pub fn value(&self, idx: &[usize], component: usize) -> f64 {
        self.data[self.flat_index(idx) * self.components + component]
    }
}

/// Centered stencil (offsets, weights) for d^order/dx^order; weights are to
/// be divided by h^order.
fn stencil(order: usize) -> Result<(Vec<isize>, Vec<f64>)> {
    Ok(match order {
        0 => (vec![0], vec![1.0]),
        1 => (vec![-1, 1], vec![-0.5, 0.5]),
        2 => (vec![-1, 0, 1], vec![1.0, -2.0, 1.0]),
        3 => (vec![-2, -1, 1, 2], vec![-0.5, 1.0, -1.0, 0.5]),
        4 => (vec![-2, -1, 0, 1, 2], vec![1.0, -4.0, 6.0, -4.0, 1.0]),
        _ => {
            return Err(GeonetError::Resolution(format!(
                "finite differences of order {order} exceed the supported stencils (max 4)"
            )))
        }
    })
}

fn stencil_radius(order: usize) -> usize {
    match order {
        0 => 0,
        1 | 2 => 1,
        _ => 2,
    }
}

/// Enumerate all multi-indices with total order <= k over `rank` axes.
fn multi_indices(rank: usize, k: usize) -> Vec<Vec<usize>> {
    let mut out = vec![vec![0usize; rank]];
    for total in 1..=k {
        let mut stack = vec![(vec![0usize; rank], 0usize, total)];
        while let Some((mut cur, ax, remaining)) = stack.pop() {
            if ax == rank - 1 {
                cur[ax] = remaining;
                out.push(cur);
                continue;
            }
            for take in 0..=remaining {
                let mut next = cur.clone();
                next[ax] = take;
                stack.push((next, ax + 1, remaining - take));
            }
            cur.clear();
        }
    }
    out
}

/// Max over the interior grid of |D^κ f| for all |κ| <= k, over all
/// components. Grid spacings are recorded by the caller in reports; this
/// routine only checks that the grid supports the stencils.
pub fn ck_norm(field: &GridField, k: usize) -> Result<f64> {
    let rank = field.shape.len();
    // Validate resolution for the largest per-axis order that can occur.
    for ax in 0..rank {
        let max_order = k.min(4);
        let need = 2 * stencil_radius(max_order) + 1;
        if field.shape[ax] < need {
            return Err(GeonetError::Resolution(format!(
                "axis {ax} has {} points; order-{max_order} differences need {need}",
                field.shape[ax]
            )));
        }
    }
    let mut worst: f64 = 0.0;
    let mut acc = vec![0.0; field.components];
    let mut offsets = vec![0isize; rank];
    let mut idx = vec![0usize; rank];
    for kappa in multi_indices(rank, k) {
        let mut stencils = Vec::with_capacity(rank);
        let mut scale = 1.0;
        let mut margins = Vec::with_capacity(rank);
        for ax in 0..rank {
            let (off, w) = stencil(kappa[ax])?;
            scale *= field.spacing[ax].powi(kappa[ax] as i32);
            margins.push(stencil_radius(kappa[ax]));
            stencils.push((off, w));
        }
        let interior: Vec<usize> = (0..rank)
            .map(|ax| field.shape[ax] - 2 * margins[ax])
            .collect();
        let total: usize = interior.iter().product();
        for p in 0..total {
            let mut rem = p;
            for ax in (0..rank).rev() {
                idx[ax] = margins[ax] + rem % interior[ax];
                rem /= interior[ax];
            }
            acc.iter_mut().for_each(|a| *a = 0.0);
            compose_stencil(field, &stencils, &idx, 0, 1.0, &mut offsets, &mut acc);
            for a in &acc {
                worst = worst.max((a / scale).abs());
            }
        }
    }
    Ok(worst)
}

fn compose_stencil(
    field: &GridField,
    stencils: &[(Vec<isize>, Vec<f64>)],
    center: &[usize],
    axis: usize,
    weight: f64,
    offsets: &mut Vec<isize>,
    acc: &mut [f64],
) {
    if axis == stencils.len() {
        let idx: Vec<usize> = center
            .iter()
            .zip(offsets.iter())
            .map(|(&c, &o)| (c as isize + o) as usize)
            .collect();
        for comp in 0..field.components {
            acc[comp] += weight * field.value(&idx, comp);
        }
        return;
    }
    let (off, w) = &stencils[axis];
    for (o, wt) in off.iter().zip(w.iter()) {
        offsets[axis] = *o;
        compose_stencil(field, stencils, center, axis + 1, weight * wt, offsets, acc);
    }
    offsets[axis] = 0;
}

/// Convenience for 1-D sampled functions.
pub fn ck_norm_1d(values: &[f64], spacing: f64, k: usize) -> Result<f64> {
    let field = GridField::new(vec![values.len()], vec![spacing], 1, values.to_vec())?;
    ck_norm(&field, k)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_field_has_zero_norm() {
        let f = GridField::new(vec![64], vec![0.01], 1, vec![0.0; 64]).unwrap();
        assert_eq!(ck_norm(&f, 3).unwrap(), 0.0);
    }

    #[test]
    fn linear_field_c1_norm_is_slope() {
        let a = -2.5f64;
        let n = 101;
        let h = 1.0 / (n - 1) as f64;
        let vals: Vec<f64> = (0..n).map(|i| a * i as f64 * h).collect();
        let norm = ck_norm_1d(&vals, h, 1).unwrap();
        assert!((norm - a.abs()).abs() < 1e-12, "norm {norm}");
    }

    #[test]
    fn sine_c2_norm() {
        let n = 513;
        let h = 1.0 / (n - 1) as f64;
        let vals: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * i as f64 * h).sin())
            .collect();
        let norm = ck_norm_1d(&vals, h, 2).unwrap();
        let expected = std::f64::consts::TAU.powi(2);
        assert!(
            (norm - expected).abs() / expected < 1e-3,
            "norm {norm} vs {expected}"
        );
    }

    #[test]
    fn mixed_partials_of_product_field() {
        // f(x, y) = sin(x) * y: d²f/dxdy = cos(x), sup = 1 near x = 0.
        let shape = vec![65, 65];
        let spacing = vec![0.02, 0.02];
        let f = GridField::sample(
            &[-0.64, -0.64],
            &spacing,
            &shape,
            1,
            |c, out| {
                out[0] = c[0].sin() * c[1];
            },
        )
        .unwrap();
        let norm = ck_norm(&f, 2).unwrap();
        // The largest order-<=2 derivative on this box is d²f/dxdy = cos(x),
        // with sup 1 at x = 0 (|y| <= 0.64 keeps the others smaller).
        assert!((norm - 1.0).abs() < 1e-4, "norm {norm}");
    }

    #[test]
    fn too_coarse_grid_is_a_resolution_error() {
        let f = GridField::new(vec![3], vec![0.1], 1, vec![0.0; 3]).unwrap();
        let err = ck_norm(&f, 3).unwrap_err();
        assert!(matches!(err, GeonetError::Resolution(_)));
    }

    #[test]
    fn order_beyond_stencils_rejected() {
        let f = GridField::new(vec![32], vec![0.1], 1, vec![0.0; 32]).unwrap();
        let err = ck_norm(&f, 5).unwrap_err();
        assert!(matches!(err, GeonetError::Resolution(_)));
    }
}
