//! Central finite differences over parameter sets.

use maser_core::nn::{GradBundle, ParamSet, Tensor};

/// One scalar inside a [`ParamSet`]: online group, array within the group,
/// flat index within the array.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Coord {
    pub group: usize,
    pub array: usize,
    pub index: usize,
}

impl Coord {
    pub fn read(self, params: &ParamSet) -> f64 {
        params.online_groups()[self.group].tensors()[self.array].data()[self.index]
    }

    pub fn write(self, params: &mut ParamSet, v: f64) {
        params.online_groups_mut()[self.group].tensors_mut()[self.array].data_mut()[self.index] = v;
    }

    pub fn read_grad(self, g: &GradBundle) -> f64 {
        g.groups[self.group][self.array].data()[self.index]
    }
}

/// Every coordinate of the online arrays, in canonical order.
pub fn all_coords(params: &ParamSet) -> Vec<Coord> {
    let mut out = Vec::new();
    for (group, g) in params.online_groups().iter().enumerate() {
        for (array, t) in g.tensors().iter().enumerate() {
            out.extend((0..t.len()).map(|index| Coord { group, array, index }));
        }
    }
    out
}

/// `(f(x + h e_k) - f(x - h e_k)) / 2h` for every `k`.
pub fn finite_diff_scalar(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], step: f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|k| {
            let orig = x[k];
            x[k] = orig + step;
            let up = f(&x);
            x[k] = orig - step;
            let down = f(&x);
            x[k] = orig;
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Central differences at the given coordinates.
pub fn finite_diff_at(mut loss: impl FnMut(&ParamSet) -> f64, params: &ParamSet, coords: &[Coord], step: f64) -> Vec<f64> {
    let mut p = params.clone();
    coords
        .iter()
        .map(|&c| {
            let orig = c.read(&p);
            c.write(&mut p, orig + step);
            let up = loss(&p);
            c.write(&mut p, orig - step);
            let down = loss(&p);
            c.write(&mut p, orig);
            (up - down) / (2.0 * step)
        })
        .collect()
}

/// Central differences at every online coordinate.
pub fn finite_diff_grad(loss: impl FnMut(&ParamSet) -> f64, params: &ParamSet, step: f64) -> GradBundle {
    let coords = all_coords(params);
    let values = finite_diff_at(loss, params, &coords, step);
    let mut g = GradBundle {
        groups: params
            .online_groups()
            .iter()
            .map(|grp| grp.tensors().iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect())
            .collect(),
    };
    for (c, v) in coords.iter().zip(values) {
        g.groups[c.group][c.array].data_mut()[c.index] = v;
    }
    g
}

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn square_at_three() {
        let g = finite_diff_scalar(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
    }

    #[test]
    fn relative_error_floor() {
        assert_eq!(relative_error(1.0, 1.0, 1e-6), 0.0);
        assert!((relative_error(2.0, 1.0, 1e-6) - 0.5).abs() < 1e-15);
        assert!((relative_error(1e-9, 0.0, 1e-6) - 1e-3).abs() < 1e-15);
    }
}
