//! Distribution distances and per-class fidelity on flattened samples.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::harness::data::ToyDataset;
use crate::tensor::{Element, RngStream, Tensor};

/// Eigenvalues below `-PSD_TOL * scale` are rejected; the rest are clamped at 0.
const PSD_TOL: f64 = 1e-9;

fn psd_sqrt(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let sym = (m + m.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let scale = eig.eigenvalues.iter().fold(1.0f64, |a, &v| a.max(v.abs()));
    let mut roots = eig.eigenvalues.clone();
    for v in roots.iter_mut() {
        if *v < -PSD_TOL * scale {
            return Err(Error::NotPsd(*v));
        }
        *v = v.max(0.0).sqrt();
    }
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&roots) * eig.eigenvectors.transpose())
}

fn w2_one_way(m1: &DVector<f64>, c1: &DMatrix<f64>, m2: &DVector<f64>, c2: &DMatrix<f64>) -> Result<f64> {
    let r2 = psd_sqrt(c2)?;
    let cross = psd_sqrt(&(&r2 * c1 * &r2))?;
    Ok((m1 - m2).norm_squared() + c1.trace() + c2.trace() - 2.0 * cross.trace())
}

/// Squared 2-Wasserstein (Fréchet) distance between two Gaussians.
///
/// Evaluated in both argument orders and averaged, so the result is exactly
/// symmetric. Tiny negative round-off is clamped to zero.
pub fn gaussian_w2(m1: &DVector<f64>, cov1: &DMatrix<f64>, m2: &DVector<f64>, cov2: &DMatrix<f64>) -> Result<f64> {
    let d = m1.len();
    if m2.len() != d || cov1.shape() != (d, d) || cov2.shape() != (d, d) {
        return Err(Error::shape(&[d, cov1.nrows(), cov1.ncols()], &[m2.len(), cov2.nrows(), cov2.ncols()]));
    }
    psd_sqrt(cov1)?;
    if m1 == m2 && cov1 == cov2 {
        return Ok(0.0);
    }
    let a = w2_one_way(m1, cov1, m2, cov2)?;
    let b = w2_one_way(m2, cov2, m1, cov1)?;
    Ok(((a + b) * 0.5).max(0.0))
}

/// Mean and unbiased covariance of the rows of `samples` (`[n × ...]`, flattened per item).
pub fn moments<T: Element>(samples: &Tensor<T>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = samples.shape().first().copied().unwrap_or(0);
    if n < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 samples, got {n}")));
    }
    let d = samples.numel() / n;
    let x = DMatrix::from_row_iterator(n, d, samples.data().iter().map(|v| v.as_f64()));
    let mean = x.row_mean().transpose();
    let mut centered = x;
    for mut row in centered.row_iter_mut() {
        row -= mean.transpose();
    }
    let cov = centered.transpose() * &centered / (n as f64 - 1.0);
    Ok((mean, cov))
}

/// Fréchet distance between Gaussian fits of two sample sets.
pub fn empirical_frechet<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<f64> {
    let item = |t: &Tensor<T>| t.shape()[1..].iter().product::<usize>();
    if a.shape().is_empty() || b.shape().is_empty() || item(a) != item(b) {
        return Err(Error::shape(a.shape(), b.shape()));
    }
    let (m1, c1) = moments(a)?;
    let (m2, c2) = moments(b)?;
    gaussian_w2(&m1, &c1, &m2, &c2)
}

/// Mean Euclidean distance from each sample to the template of its class.
pub fn per_class_fidelity<T: Element>(samples: &Tensor<T>, labels: &[usize], dataset: ToyDataset) -> Result<f64> {
    let d = dataset.item_len();
    if samples.numel() != labels.len() * d {
        return Err(Error::shape(samples.shape(), &[labels.len(), d]));
    }
    if labels.is_empty() {
        return Err(Error::InvalidArgument("no samples".into()));
    }
    let templates = (0..dataset.num_classes())
        .map(|c| dataset.template(c))
        .collect::<Result<Vec<_>>>()?;
    let mut total = 0.0;
    for (row, &c) in samples.data().chunks(d).zip(labels) {
        let tpl = templates.get(c).ok_or(Error::UnknownClass(c))?;
        total += row
            .iter()
            .zip(tpl)
            .map(|(x, y)| (x.as_f64() - y).powi(2))
            .sum::<f64>()
            .sqrt();
    }
    Ok(total / labels.len() as f64)
}

/// Mean Fréchet distance between `pairs` pairs of independent `count`-sample
/// draws from the dataset.
pub fn noise_floor(dataset: ToyDataset, count: usize, pairs: usize, stream: &mut RngStream) -> Result<f64> {
    if pairs == 0 {
        return Err(Error::InvalidArgument("need at least one pair".into()));
    }
    let mut total = 0.0;
    for _ in 0..pairs {
        let (a, _) = dataset.draw::<f64>(count, stream)?;
        let (b, _) = dataset.draw::<f64>(count, stream)?;
        total += empirical_frechet(&a, &b)?;
    }
    Ok(total / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(x)
    }

    #[test]
    fn closed_form_cases() {
        let i2 = DMatrix::<f64>::identity(2, 2);
        assert_eq!(gaussian_w2(&v(&[0.0, 0.0]), &i2, &v(&[0.0, 0.0]), &i2).unwrap(), 0.0);
        let shift = gaussian_w2(&v(&[0.0, 0.0]), &i2, &v(&[1.0, 0.0]), &i2).unwrap();
        assert!((shift - 1.0).abs() < 1e-12);
        let (s1, s2) = (0.3, 1.7);
        let iso = gaussian_w2(&v(&[0.2, 0.2]), &(&i2 * (s1 * s1)), &v(&[0.2, 0.2]), &(&i2 * (s2 * s2))).unwrap();
        assert!((iso - 2.0 * (s1 - s2) * (s1 - s2)).abs() < 1e-12);
    }

    #[test]
    fn non_commuting_covariances_match_direct_formula() {
        // 2×2 matrix square roots by the closed form √A = (A + √det·I)/√(tr A + 2√det)
        let sqrt2 = |a: &DMatrix<f64>| {
            let s = a.determinant().sqrt();
            (a + DMatrix::identity(2, 2) * s) / (a.trace() + 2.0 * s).sqrt()
        };
        let c1 = DMatrix::from_row_slice(2, 2, &[2.0, 0.6, 0.6, 0.5]);
        let c2 = DMatrix::from_row_slice(2, 2, &[0.7, -0.2, -0.2, 1.3]);
        let r2 = sqrt2(&c2);
        let expected = 0.25 + c1.trace() + c2.trace() - 2.0 * sqrt2(&(&r2 * &c1 * &r2)).trace();
        let got = gaussian_w2(&v(&[0.5, 0.0]), &c1, &v(&[0.0, 0.0]), &c2).unwrap();
        assert!((got - expected).abs() < 1e-10, "{got} vs {expected}");
        assert_eq!(got, gaussian_w2(&v(&[0.0, 0.0]), &c2, &v(&[0.5, 0.0]), &c1).unwrap());
    }

    #[test]
    fn rejects_indefinite_covariance() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, -0.5]);
        let i2 = DMatrix::identity(2, 2);
        assert!(matches!(gaussian_w2(&v(&[0.0, 0.0]), &bad, &v(&[0.0, 0.0]), &i2), Err(Error::NotPsd(_))));
    }

    #[test]
    fn empirical_noise_floor_and_mode_collapse() {
        let ds = ToyDataset::Rings2d;
        let mut s = RngStream::new(11);
        let (a, _) = ds.draw::<f64>(2000, &mut s).unwrap();
        let (b, _) = ds.draw::<f64>(2000, &mut s).unwrap();
        assert_eq!(empirical_frechet(&a, &a).unwrap(), 0.0);
        let floor = empirical_frechet(&a, &b).unwrap();
        assert_eq!(floor, empirical_frechet(&b, &a).unwrap());
        let single = ds.generate_for::<f64>(&vec![3; 2000], &mut s).unwrap();
        assert!(empirical_frechet(&a, &single).unwrap() > floor);
    }

    #[test]
    fn fidelity_of_true_conditionals_is_rayleigh_mean() {
        let ds = ToyDataset::Rings2d;
        let mut s = RngStream::new(12);
        let (x, labels) = ds.draw::<f64>(2000, &mut s).unwrap();
        let fid = per_class_fidelity(&x, &labels, ds).unwrap();
        let rayleigh = 0.1 * (std::f64::consts::PI / 2.0).sqrt();
        assert!((fid - rayleigh).abs() < 0.1 * rayleigh, "{fid}");

        let centres: Vec<f64> = labels.iter().flat_map(|&c| ds.template(c).unwrap()).collect();
        let at = Tensor::<f64>::from_f64(&centres, &[2000, 1, 2]).unwrap();
        assert_eq!(per_class_fidelity(&at, &labels, ds).unwrap(), 0.0);

        // labels ignored: distance to a random other centre
        let shuffled: Vec<usize> = s.integers(0, 7, 2000);
        let mean_inter: f64 = (0..8)
            .map(|k| 2.0 * (std::f64::consts::PI * k as f64 / 8.0).sin())
            .sum::<f64>()
            / 8.0;
        let ignored = per_class_fidelity(&x, &shuffled, ds).unwrap();
        assert!(ignored > fid);
        assert!((ignored - mean_inter).abs() < 0.05 * mean_inter, "{ignored} vs {mean_inter}");
        assert!(matches!(per_class_fidelity(&x, &vec![9; 2000], ds), Err(Error::UnknownClass(9))));
    }
}
