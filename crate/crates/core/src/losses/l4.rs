use ndarray::{Array2, ArrayView2};

use super::Rows;
use crate::error::{MoeError, Result};
use crate::model::{dot, Dataset, RegularizationConfig};
use crate::transforms::{q2, q4, t1, t2, t3, NonlinearityProfile};

/// Profile, regularization and the per-sample output transforms of one dataset.
#[derive(Debug, Clone)]
pub struct L4Context {
    pub profile: NonlinearityProfile,
    pub reg: RegularizationConfig,
    pub q4: Vec<f64>,
    pub q2: Vec<f64>,
}

impl L4Context {
    pub fn new(profile: NonlinearityProfile, reg: RegularizationConfig, data: &Dataset) -> Self {
        let c = &profile.coeffs;
        Self {
            q4: data.outputs.iter().map(|&y| q4(y, c)).collect(),
            q2: data.outputs.iter().map(|&y| q2(y, c)).collect(),
            profile,
            reg,
        }
    }

    fn check(&self, a: ArrayView2<f64>, data: &Dataset, rows: &Rows) -> Result<()> {
        if self.q4.len() != data.len() || self.q2.len() != data.len() {
            return Err(MoeError::DimensionMismatch(format!(
                "transform cache has {} entries for {} samples",
                self.q4.len(),
                data.len()
            )));
        }
        if a.ncols() != data.dim() {
            return Err(MoeError::DimensionMismatch(format!(
                "regressors have {} columns, inputs have {}",
                a.ncols(),
                data.dim()
            )));
        }
        if rows.count(data.len()) == 0 {
            return Err(MoeError::EmptyDataset);
        }
        Ok(())
    }
}

pub fn l4_value(a: ArrayView2<f64>, data: &Dataset, ctx: &L4Context) -> Result<f64> {
    l4_value_on(a, data, ctx, Rows::All)
}

/// Batch value evaluated term by term through the input transforms.
pub fn l4_value_on(a: ArrayView2<f64>, data: &Dataset, ctx: &L4Context, rows: Rows) -> Result<f64> {
    ctx.check(a, data, &rows)?;
    let a = a.as_standard_layout();
    let k = a.nrows();
    let c4 = ctx.profile.constants.c4;
    let c2 = ctx.profile.constants.c2;
    let row = |i: usize| a.row(i).to_slice().expect("standard layout");
    let mut linear = 0.0;
    let mut t3_sums = vec![0.0; k];
    rows.for_each(data.len(), |n| {
        let x = data.x(n);
        let q = ctx.q4[n];
        let mut cross = 0.0;
        let mut quartic = 0.0;
        for i in 0..k {
            for j in 0..k {
                if i != j {
                    cross += t1(row(i), row(j), x, c4);
                }
            }
            quartic += t2(row(i), x, c4);
            t3_sums[i] += ctx.q2[n] * t3(row(i), x, c2);
        }
        linear += q * (cross - ctx.reg.mu * quartic);
    });
    let count = rows.count(data.len()) as f64;
    let penalty: f64 = t3_sums.iter().map(|s| (s / count - 1.0).powi(2)).sum();
    let frob: f64 = a.iter().map(|v| v * v).sum();
    Ok(linear / count + ctx.reg.lambda * penalty + 0.5 * ctx.reg.delta_reg * frob)
}

pub fn l4_gradient(a: ArrayView2<f64>, data: &Dataset, ctx: &L4Context) -> Result<Array2<f64>> {
    l4_gradient_on(a, data, ctx, Rows::All)
}

pub fn l4_gradient_on(a: ArrayView2<f64>, data: &Dataset, ctx: &L4Context, rows: Rows) -> Result<Array2<f64>> {
    Ok(l4_value_and_gradient_on(a, data, ctx, rows)?.1)
}

/// Value and gradient from batch moments of the projections `s_i = a_i . x`.
///
/// Every transform is a polynomial in `s_i`, `|a_i|^2` and `a_i . a_j`, so the
/// batch only needs `mean[q4 s_i s_j]`, `mean[q4]`, `mean[q2 s_i^2]`,
/// `mean[q2]` and the x-weighted sums below; the Gram matrix terms are added
/// once per batch. The lambda term squares the batch mean of `q2 t3`.
pub fn l4_value_and_gradient_on(
    a: ArrayView2<f64>,
    data: &Dataset,
    ctx: &L4Context,
    rows: Rows,
) -> Result<(f64, Array2<f64>)> {
    ctx.check(a, data, &rows)?;
    let a = a.as_standard_layout();
    let (k, d) = a.dim();
    let c4 = ctx.profile.constants.c4;
    let c2 = ctx.profile.constants.c2;
    let mu = ctx.reg.mu;
    let gram = a.dot(&a.t());

    let mut sum_q = 0.0;
    let mut sum_r = 0.0;
    let mut m = vec![0.0; k * k];
    let mut pair4 = 0.0;
    let mut quart = vec![0.0; k];
    let mut r_s2 = vec![0.0; k];
    let mut grad_x = Array2::<f64>::zeros((k, d));
    let mut r_sx = Array2::<f64>::zeros((k, d));
    let mut s = vec![0.0; k];
    let mut s2 = vec![0.0; k];
    let mut coef = vec![0.0; k];

    rows.for_each(data.len(), |n| {
        let x = data.x(n);
        let q = ctx.q4[n];
        let r = ctx.q2[n];
        for i in 0..k {
            s[i] = dot(a.row(i).to_slice().expect("standard layout"), x);
            s2[i] = s[i] * s[i];
        }
        sum_q += q;
        sum_r += r;
        for i in 0..k {
            for j in 0..k {
                m[i * k + j] += q * s[i] * s[j];
            }
            quart[i] += q * s2[i] * s2[i];
            r_s2[i] += r * s2[i];
            let mut cross = 0.0;
            for j in 0..k {
                if j != i {
                    pair4 += q * s2[i] * s2[j];
                    cross += 2.0 * s[i] * s2[j] - 4.0 * s[j] * gram[[i, j]] - 2.0 * gram[[j, j]] * s[i];
                }
            }
            let quartic = 4.0 * s2[i] * s[i] - 12.0 * gram[[i, i]] * s[i];
            // d/da_i over ordered pairs (i,j) and (j,i) doubles the cross term
            coef[i] = q * (2.0 * cross - mu * quartic) / c4;
        }
        for i in 0..k {
            let mut gx = grad_x.row_mut(i);
            let gx = gx.as_slice_mut().expect("standard layout");
            let mut rx = r_sx.row_mut(i);
            let rx = rx.as_slice_mut().expect("standard layout");
            let rs = r * s[i];
            for c in 0..d {
                gx[c] += coef[i] * x[c];
                rx[c] += rs * x[c];
            }
        }
    });

    let count = rows.count(data.len()) as f64;
    let inv = 1.0 / count;
    let q_mean = sum_q * inv;
    let r_mean = sum_r * inv;
    let mm = |i: usize, j: usize| m[i * k + j] * inv;

    let mut value = pair4 * inv;
    for i in 0..k {
        for j in 0..k {
            if i != j {
                let g_ij = gram[[i, j]];
                value -= gram[[i, i]] * mm(j, j) + 4.0 * g_ij * mm(i, j) + gram[[j, j]] * mm(i, i);
                value += q_mean * (gram[[i, i]] * gram[[j, j]] + 2.0 * g_ij * g_ij);
            }
        }
    }
    value /= c4;
    let mut t3_mean = vec![0.0; k];
    for i in 0..k {
        let g_ii = gram[[i, i]];
        value -= mu * (quart[i] * inv - 6.0 * g_ii * mm(i, i) + 3.0 * q_mean * g_ii * g_ii) / c4;
        t3_mean[i] = (r_s2[i] * inv - g_ii * r_mean) / c2;
        value += ctx.reg.lambda * (t3_mean[i] - 1.0).powi(2);
    }
    let frob: f64 = a.iter().map(|v| v * v).sum();
    value += 0.5 * ctx.reg.delta_reg * frob;

    let mut grad = grad_x * inv;
    for i in 0..k {
        let a_i = a.row(i);
        let g_ii = gram[[i, i]];
        let mut scale_i = 0.0;
        let mut gi = grad.row_mut(i);
        for j in 0..k {
            if j == i {
                continue;
            }
            let g_ij = gram[[i, j]];
            scale_i += 2.0 * (-2.0 * mm(j, j) + 2.0 * q_mean * gram[[j, j]]) / c4;
            let coef_j = 2.0 * (-4.0 * mm(i, j) + 4.0 * q_mean * g_ij) / c4;
            gi.scaled_add(coef_j, &a.row(j));
        }
        scale_i -= mu * (-12.0 * mm(i, i) + 12.0 * q_mean * g_ii) / c4;
        let lam = 2.0 * ctx.reg.lambda * (t3_mean[i] - 1.0) / c2;
        scale_i += -2.0 * lam * r_mean + ctx.reg.delta_reg;
        gi.scaled_add(scale_i, &a_i);
        gi.scaled_add(2.0 * lam * inv, &r_sx.row(i));
    }
    Ok((value, grad))
}

/// Full-data value with a delete-one-group jackknife standard error over
/// `groups` contiguous groups.
pub fn l4_value_jackknife(a: ArrayView2<f64>, data: &Dataset, ctx: &L4Context, groups: usize) -> Result<(f64, f64)> {
    ctx.check(a, data, &Rows::All)?;
    let n = data.len();
    if groups < 2 || groups > n {
        return Err(MoeError::InvalidArgument(format!("need 2 <= groups <= n, got {groups}")));
    }
    let a = a.as_standard_layout();
    let k = a.nrows();
    let c4 = ctx.profile.constants.c4;
    let c2 = ctx.profile.constants.c2;
    let gram = a.dot(&a.t());
    // per group: sum of the linear part and of q2 t3 per row
    let mut lin = vec![0.0; groups];
    let mut t3s = vec![vec![0.0; k]; groups];
    let mut sizes = vec![0usize; groups];
    let mut s = vec![0.0; k];
    for idx in 0..n {
        let g = idx * groups / n;
        let x = data.x(idx);
        for (i, si) in s.iter_mut().enumerate() {
            *si = dot(a.row(i).to_slice().expect("standard layout"), x);
        }
        let mut cross = 0.0;
        let mut quartic = 0.0;
        for i in 0..k {
            let (si2, nii) = (s[i] * s[i], gram[[i, i]]);
            for j in 0..k {
                if i != j {
                    let (sj2, njj, nij) = (s[j] * s[j], gram[[j, j]], gram[[i, j]]);
                    cross += si2 * sj2 - nii * sj2 - 4.0 * s[i] * s[j] * nij - njj * si2 + nii * njj + 2.0 * nij * nij;
                }
            }
            quartic += si2 * si2 - 6.0 * nii * si2 + 3.0 * nii * nii;
            t3s[g][i] += ctx.q2[idx] * (si2 - nii) / c2;
        }
        lin[g] += ctx.q4[idx] * (cross - ctx.reg.mu * quartic) / c4;
        sizes[g] += 1;
    }
    let frob: f64 = a.iter().map(|v| v * v).sum();
    let fixed = 0.5 * ctx.reg.delta_reg * frob;
    let total_lin: f64 = lin.iter().sum();
    let total_t3: Vec<f64> = (0..k).map(|i| t3s.iter().map(|g| g[i]).sum()).collect();
    let eval = |lin_sum: f64, t3_sum: &[f64], count: f64| -> f64 {
        let pen: f64 = t3_sum.iter().map(|s| (s / count - 1.0).powi(2)).sum();
        lin_sum / count + ctx.reg.lambda * pen + fixed
    };
    let full = eval(total_lin, &total_t3, n as f64);
    let leave_out: Vec<f64> = (0..groups)
        .map(|g| {
            let t3_rest: Vec<f64> = (0..k).map(|i| total_t3[i] - t3s[g][i]).collect();
            eval(total_lin - lin[g], &t3_rest, (n - sizes[g]) as f64)
        })
        .collect();
    let mean_lo = leave_out.iter().sum::<f64>() / groups as f64;
    let var = leave_out.iter().map(|v| (v - mean_lo).powi(2)).sum::<f64>() * (groups as f64 - 1.0) / groups as f64;
    Ok((full, var.sqrt()))
}
