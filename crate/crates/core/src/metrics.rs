//! Diagnostics over trained runs: prediction-correlation between members,
//! per-class sample-weight summaries, a two-dimensional loss-surface
//! projection, prior-rescaled prediction, and plain error rates.

use ndarray::ArrayView2;
use thiserror::Error;

use crate::boost::SampleWeights;
use crate::data::Dataset;
use crate::learner::{self, MlpParams};
use crate::numeric::{argmax, linspace};

#[derive(Debug, Error)]
pub enum MetricsError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("correlation undefined: an input has zero variance")]
    UndefinedCorrelation,
    #[error("degenerate projection basis: {0}")]
    DegenerateBasis(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error(transparent)]
    Learner(#[from] crate::learner::LearnerError),
}

/// Pearson correlation between two equally shaped softmax-output matrices,
/// computed over all `n * k` entries flattened.
pub fn pairwise_correlation(
    a: ArrayView2<f64>,
    b: ArrayView2<f64>,
) -> Result<f64, MetricsError> {
    if a.dim() != b.dim() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    if a.is_empty() {
        return Err(MetricsError::InvalidArgument("empty matrices".into()));
    }
    let n = a.len() as f64;
    let mean_a = a.iter().sum::<f64>() / n;
    let mean_b = b.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_a = 0.0;
    let mut var_b = 0.0;
    for (&x, &y) in a.iter().zip(b.iter()) {
        let dx = x - mean_a;
        let dy = y - mean_b;
        cov += dx * dy;
        var_a += dx * dx;
        var_b += dy * dy;
    }
    if var_a == 0.0 || var_b == 0.0 {
        return Err(MetricsError::UndefinedCorrelation);
    }
    Ok((cov / (var_a * var_b).sqrt()).clamp(-1.0, 1.0))
}

/// Full correlation matrix between member outputs; symmetric with a unit
/// diagonal.
pub fn correlation_matrix(outputs: &[ndarray::Array2<f64>]) -> Result<Vec<Vec<f64>>, MetricsError> {
    let m = outputs.len();
    if m == 0 {
        return Err(MetricsError::InvalidArgument("no member outputs".into()));
    }
    let mut matrix = vec![vec![1.0; m]; m];
    for i in 0..m {
        for j in (i + 1)..m {
            let r = pairwise_correlation(outputs[i].view(), outputs[j].view())?;
            matrix[i][j] = r;
            matrix[j][i] = r;
        }
    }
    Ok(matrix)
}

/// Mean of the off-diagonal entries of a square matrix.
pub fn off_diagonal_mean(matrix: &[Vec<f64>]) -> Result<f64, MetricsError> {
    let m = matrix.len();
    if m < 2 {
        return Err(MetricsError::InvalidArgument(
            "need at least two members for off-diagonal statistics".into(),
        ));
    }
    let mut total = 0.0;
    for (i, row) in matrix.iter().enumerate() {
        if row.len() != m {
            return Err(MetricsError::ShapeMismatch("matrix is not square".into()));
        }
        for (j, &v) in row.iter().enumerate() {
            if i != j {
                total += v;
            }
        }
    }
    Ok(total / (m * (m - 1)) as f64)
}

/// Mean sample weight per class. Classes with no samples are reported as
/// `None` rather than zero.
pub fn per_class_avg_weights(
    weights: &SampleWeights,
    labels: &[usize],
    k: usize,
) -> Vec<Option<f64>> {
    assert_eq!(
        weights.len(),
        labels.len(),
        "weights and labels must align"
    );
    let mut totals = vec![0.0f64; k];
    let mut counts = vec![0usize; k];
    for (&w, &l) in weights.values().iter().zip(labels) {
        assert!(l < k, "label {l} out of range for {k} classes");
        totals[l] += w;
        counts[l] += 1;
    }
    totals
        .into_iter()
        .zip(counts)
        .map(|(t, c)| if c == 0 { None } else { Some(t / c as f64) })
        .collect()
}

/// Rescales each row of predicted probabilities by the inverse class priors
/// and takes the argmax (lowest index on ties). Returns one-hot rows.
pub fn threshold_with_priors(
    probabilities: ArrayView2<f64>,
    class_priors: &[f64],
) -> Result<Vec<Vec<f64>>, MetricsError> {
    if probabilities.ncols() != class_priors.len() {
        return Err(MetricsError::ShapeMismatch(format!(
            "{} probability columns vs {} priors",
            probabilities.ncols(),
            class_priors.len()
        )));
    }
    if let Some(&p) = class_priors.iter().find(|&&p| p.is_nan() || p <= 0.0) {
        return Err(MetricsError::InvalidArgument(format!(
            "class prior {p} must be strictly positive"
        )));
    }
    let k = class_priors.len();
    Ok(probabilities
        .rows()
        .into_iter()
        .map(|row| {
            let rescaled: Vec<f64> = row
                .iter()
                .zip(class_priors)
                .map(|(&p, &prior)| p / prior)
                .collect();
            let mut onehot = vec![0.0; k];
            onehot[argmax(&rescaled)] = 1.0;
            onehot
        })
        .collect())
}

/// Fraction of rows whose argmax differs from the label. Accepts one-hot or
/// probability rows.
pub fn error_rate(predictions: ArrayView2<f64>, labels: &[usize]) -> f64 {
    assert_eq!(
        predictions.nrows(),
        labels.len(),
        "predictions and labels must align"
    );
    let wrong = predictions
        .rows()
        .into_iter()
        .zip(labels)
        .filter(|(row, &label)| argmax(row.as_slice().expect("contiguous rows")) != label)
        .count();
    wrong as f64 / labels.len() as f64
}

/// Error rate from predicted class indices.
pub fn error_rate_classes(predicted: &[usize], labels: &[usize]) -> f64 {
    assert_eq!(predicted.len(), labels.len());
    let wrong = predicted
        .iter()
        .zip(labels)
        .filter(|(p, l)| p != l)
        .count();
    wrong as f64 / labels.len() as f64
}

/// Rectangular window, in units of the orthonormal projection basis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SurfaceExtent {
    pub x: (f64, f64),
    pub y: (f64, f64),
}

/// Loss values of an affine two-dimensional slice through parameter space.
///
/// The basis comes from three anchor parameter vectors: the first direction
/// is `p3 - p2`, the second is `p1 - p2` with its component along the first
/// removed. `p2` sits at the origin and `p3` at `(|p3 - p2|, 0)`.
#[derive(Debug, Clone)]
pub struct SurfaceGrid {
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    /// Loss values indexed `[y][x]`.
    pub values: Vec<Vec<f64>>,
    pub anchor_p1: (f64, f64),
    pub anchor_p2: (f64, f64),
    pub anchor_p3: (f64, f64),
}

/// Mean cross-entropy over the full dataset plus the L2 penalty, the
/// quantity the surface is drawn from.
pub fn full_set_loss(params: &MlpParams, dataset: &Dataset) -> Result<f64, MetricsError> {
    let n = dataset.len();
    let uniform = vec![1.0 / n as f64; n];
    let batch = learner::Batch {
        features: dataset.features().view(),
        labels: dataset.labels(),
        weights: &uniform,
    };
    Ok(learner::weighted_batch_loss(params, &batch, n)?)
}

struct ProjectionBasis {
    unit_u: Vec<f64>,
    unit_v: Vec<f64>,
    norm_u: f64,
    norm_v: f64,
    /// First anchor's coordinate along the first basis direction.
    x1: f64,
}

fn projection_basis(
    p1: &MlpParams,
    p2: &MlpParams,
    p3: &MlpParams,
) -> Result<ProjectionBasis, MetricsError> {
    let sizes = p2.layer_sizes();
    if p1.layer_sizes() != sizes || p3.layer_sizes() != sizes {
        return Err(MetricsError::ShapeMismatch(
            "anchor parameter snapshots differ in architecture".into(),
        ));
    }
    let base = p2.to_flat();
    let f1 = p1.to_flat();
    let f3 = p3.to_flat();
    let u: Vec<f64> = f3.iter().zip(&base).map(|(a, b)| a - b).collect();
    let norm_u = u.iter().map(|v| v * v).sum::<f64>().sqrt();
    if norm_u == 0.0 {
        return Err(MetricsError::DegenerateBasis(
            "first and second anchors coincide".into(),
        ));
    }
    let w: Vec<f64> = f1.iter().zip(&base).map(|(a, b)| a - b).collect();
    let norm_w = w.iter().map(|s| s * s).sum::<f64>().sqrt();
    let proj = w.iter().zip(&u).map(|(a, b)| a * b).sum::<f64>() / (norm_u * norm_u);
    let v: Vec<f64> = w.iter().zip(&u).map(|(a, b)| a - proj * b).collect();
    let norm_v = v.iter().map(|s| s * s).sum::<f64>().sqrt();
    // Collinear up to rounding noise counts as degenerate.
    if norm_v <= 1e-9 * norm_w {
        return Err(MetricsError::DegenerateBasis("anchors are collinear".into()));
    }
    let unit_u: Vec<f64> = u.iter().map(|s| s / norm_u).collect();
    let unit_v: Vec<f64> = v.iter().map(|s| s / norm_v).collect();
    let x1 = w.iter().zip(&unit_u).map(|(a, b)| a * b).sum::<f64>();
    Ok(ProjectionBasis {
        unit_u,
        unit_v,
        norm_u,
        norm_v,
        x1,
    })
}

/// Plane coordinates of the three anchors, in the order they were given.
pub fn projection_anchors(
    p1: &MlpParams,
    p2: &MlpParams,
    p3: &MlpParams,
) -> Result<[(f64, f64); 3], MetricsError> {
    let basis = projection_basis(p1, p2, p3)?;
    Ok([(basis.x1, basis.norm_v), (0.0, 0.0), (basis.norm_u, 0.0)])
}

/// Evaluates the regularized loss on a grid over the plane spanned by three
/// anchor parameter snapshots.
pub fn surface_grid(
    p1: &MlpParams,
    p2: &MlpParams,
    p3: &MlpParams,
    dataset: &Dataset,
    extent: SurfaceExtent,
    resolution: (usize, usize),
) -> Result<SurfaceGrid, MetricsError> {
    let (nx, ny) = resolution;
    if nx == 0 || ny == 0 {
        return Err(MetricsError::InvalidArgument(
            "grid resolution must be positive".into(),
        ));
    }
    for (lo, hi) in [extent.x, extent.y] {
        if !lo.is_finite() || !hi.is_finite() || lo > hi {
            return Err(MetricsError::InvalidArgument(format!(
                "bad extent ({lo}, {hi})"
            )));
        }
    }
    let basis = projection_basis(p1, p2, p3)?;
    let sizes = p2.layer_sizes();
    let base = p2.to_flat();

    let xs = linspace(extent.x.0, extent.x.1, nx);
    let ys = linspace(extent.y.0, extent.y.1, ny);
    let mut values = Vec::with_capacity(ny);
    let mut point = vec![0.0f64; base.len()];
    for &y in &ys {
        let mut row = Vec::with_capacity(nx);
        for &x in &xs {
            for (((p, &b), &a), &c) in point
                .iter_mut()
                .zip(&base)
                .zip(&basis.unit_u)
                .zip(&basis.unit_v)
            {
                *p = b + x * a + y * c;
            }
            let params = MlpParams::from_flat(&sizes, p2.l2(), &point)?;
            row.push(full_set_loss(&params, dataset)?);
        }
        values.push(row);
    }

    Ok(SurfaceGrid {
        xs,
        ys,
        values,
        anchor_p1: (basis.x1, basis.norm_v),
        anchor_p2: (0.0, 0.0),
        anchor_p3: (basis.norm_u, 0.0),
    })
}

/// Softmax outputs of every ensemble member over a dataset, in member order.
pub fn member_softmax_outputs(
    ensemble: &crate::boost::EnsembleModel,
    dataset: &Dataset,
) -> Result<Vec<ndarray::Array2<f64>>, MetricsError> {
    ensemble
        .members()
        .iter()
        .map(|record| {
            learner::forward_batch(&record.params, dataset.features().view())
                .map_err(MetricsError::from)
        })
        .collect()
}
