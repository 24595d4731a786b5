use ndarray::{Array2, ArrayView2};

use super::Rows;
use crate::datagen::gating_probs_into;
use crate::error::{MoeError, Result};
use crate::model::{dot, Dataset, NonlinearityKind};

pub fn l2_value(a: ArrayView2<f64>, w: ArrayView2<f64>, data: &Dataset, kind: NonlinearityKind) -> Result<f64> {
    l2_value_on(a, w, data, kind, Rows::All)
}

/// Mean squared error of the mixture mean `sum_i p_i(x) g(a_i.x)`.
pub fn l2_value_on(a: ArrayView2<f64>, w: ArrayView2<f64>, data: &Dataset, kind: NonlinearityKind, rows: Rows) -> Result<f64> {
    Ok(pass(a, w, data, kind, rows, false)?.0)
}

pub fn l2_gradients(
    a: ArrayView2<f64>,
    w: ArrayView2<f64>,
    data: &Dataset,
    kind: NonlinearityKind,
) -> Result<(Array2<f64>, Array2<f64>)> {
    l2_gradients_on(a, w, data, kind, Rows::All)
}

pub fn l2_gradients_on(
    a: ArrayView2<f64>,
    w: ArrayView2<f64>,
    data: &Dataset,
    kind: NonlinearityKind,
    rows: Rows,
) -> Result<(Array2<f64>, Array2<f64>)> {
    let (_, ga, gw) = pass(a, w, data, kind, rows, true)?;
    Ok((ga, gw))
}

fn pass(
    a: ArrayView2<f64>,
    w: ArrayView2<f64>,
    data: &Dataset,
    kind: NonlinearityKind,
    rows: Rows,
    grad: bool,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    let k = a.nrows();
    let d = data.dim();
    if k == 0 || a.ncols() != d || w.nrows() + 1 != k || (w.nrows() > 0 && w.ncols() != d) {
        return Err(MoeError::DimensionMismatch(format!(
            "regressors {}x{} and gating {}x{} do not fit d={d}",
            a.nrows(),
            a.ncols(),
            w.nrows(),
            w.ncols()
        )));
    }
    let m = rows.count(data.len());
    if m == 0 {
        return Err(MoeError::EmptyDataset);
    }
    let a = a.as_standard_layout();
    let w = w.as_standard_layout();
    let mut p = vec![0.0; k];
    let mut gv = vec![0.0; k];
    let mut dv = vec![0.0; k];
    let mut ga = Array2::<f64>::zeros((k, d));
    let mut gw = Array2::<f64>::zeros((k - 1, d));
    let mut sse = 0.0;
    rows.for_each(data.len(), |n| {
        let x = data.x(n);
        gating_probs_into(w.view(), x, &mut p);
        let mut yhat = 0.0;
        for i in 0..k {
            let s = dot(a.row(i).to_slice().expect("standard layout"), x);
            gv[i] = kind.eval(s);
            dv[i] = kind.derivative(s);
            yhat += p[i] * gv[i];
        }
        let r = yhat - data.y(n);
        sse += r * r;
        if grad {
            for i in 0..k {
                let ca = 2.0 * r * p[i] * dv[i];
                if ca != 0.0 {
                    let mut row = ga.row_mut(i);
                    for (g, xv) in row.as_slice_mut().expect("standard layout").iter_mut().zip(x) {
                        *g += ca * xv;
                    }
                }
                if i + 1 < k {
                    let cw = 2.0 * r * p[i] * (gv[i] - yhat);
                    let mut row = gw.row_mut(i);
                    for (g, xv) in row.as_slice_mut().expect("standard layout").iter_mut().zip(x) {
                        *g += cw * xv;
                    }
                }
            }
        }
    });
    let inv = 1.0 / m as f64;
    Ok((sse * inv, ga * inv, gw * inv))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::datagen::{generate_dataset, InputDistribution};
    use crate::model::{ground_truth_paper_instance, init_random, MoEParameters};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn perfect_fit_is_zero() {
        let a = array![[0.6, -0.8, 0.0]];
        let truth = MoEParameters::new(a.clone(), Array2::zeros((0, 3)), 0.0).unwrap();
        let data = generate_dataset(&truth, NonlinearityKind::Relu, &InputDistribution::StandardGaussian, 200, 1, false, 1).unwrap();
        let w = Array2::zeros((0, 3));
        assert!(l2_value(a.view(), w.view(), &data, NonlinearityKind::Relu).unwrap() < 1e-28);
    }

    #[test]
    fn identical_experts_have_no_gating_gradient() {
        let a = array![[0.3, 0.1], [0.3, 0.1], [0.3, 0.1]];
        let w = array![[1.0, -1.0], [0.2, 0.5]];
        let data = Dataset::new(array![[1.0, 2.0], [-0.5, 0.3], [0.7, -1.1]], array![0.2, -0.4, 1.0], None).unwrap();
        let (_, gw) = l2_gradients(a.view(), w.view(), &data, NonlinearityKind::Identity).unwrap();
        assert!(gw.iter().all(|v| v.abs() < 1e-15));
    }

    fn fd_check(kind: NonlinearityKind, seed: u64) {
        let truth = ground_truth_paper_instance(3, 10).unwrap();
        let data = generate_dataset(&truth, kind, &InputDistribution::StandardGaussian, 256, seed, false, 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = init_random(3, 10, 1.0, &mut rng).unwrap();
        let (a, w) = (p.regressors, p.gating);
        let (ga, gw) = l2_gradients(a.view(), w.view(), &data, kind).unwrap();
        let h = 1e-5;
        let f = |a: &Array2<f64>, w: &Array2<f64>| l2_value(a.view(), w.view(), &data, kind).unwrap();
        let scale_a = ga.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for idx in 0..a.len() {
            let (mut ap, mut am) = (a.clone(), a.clone());
            ap.as_slice_mut().unwrap()[idx] += h;
            am.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&ap, &w) - f(&am, &w)) / (2.0 * h);
            assert!((fd - ga.as_slice().unwrap()[idx]).abs() / scale_a <= 1e-5, "{kind} a[{idx}]");
        }
        let scale_w = gw.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for idx in 0..w.len() {
            let (mut wp, mut wm) = (w.clone(), w.clone());
            wp.as_slice_mut().unwrap()[idx] += h;
            wm.as_slice_mut().unwrap()[idx] -= h;
            let fd = (f(&a, &wp) - f(&a, &wm)) / (2.0 * h);
            assert!((fd - gw.as_slice().unwrap()[idx]).abs() / scale_w <= 1e-5, "{kind} w[{idx}]");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        fd_check(NonlinearityKind::Identity, 1);
        fd_check(NonlinearityKind::Sigmoid, 2);
        fd_check(NonlinearityKind::Relu, 3);
    }

    #[test]
    fn shape_errors() {
        let data = Dataset::new(array![[1.0, 2.0]], array![0.0], None).unwrap();
        let a = array![[1.0, 0.0], [0.0, 1.0]];
        assert!(l2_value(a.view(), Array2::zeros((2, 2)).view(), &data, NonlinearityKind::Identity).is_err());
        let empty: [usize; 0] = [];
        assert_eq!(
            l2_value_on(a.view(), Array2::zeros((1, 2)).view(), &data, NonlinearityKind::Identity, Rows::Indices(&empty)),
            Err(MoeError::EmptyDataset)
        );
    }
}
