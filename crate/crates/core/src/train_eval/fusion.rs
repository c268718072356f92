//! Score fusion across input branches.

use ndarray::Array2;

use crate::preprocess::Branch;
use crate::{Error, Result};

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Weighted element-wise sum of `(N, classes)` score matrices.
pub fn fuse_logits(scores: &[&Array2<f64>], weights: Option<&[f64]>) -> Result<Array2<f64>> {
    let first = scores.first().ok_or_else(|| Error::ShapeMismatch("nothing to fuse".into()))?;
    if let Some(w) = weights {
        if w.len() != scores.len() {
            return Err(Error::ShapeMismatch(format!("{} weights for {} score sets", w.len(), scores.len())));
        }
    }
    let mut out = Array2::zeros(first.raw_dim());
    for (i, s) in scores.iter().enumerate() {
        if s.dim() != first.dim() {
            return Err(Error::ShapeMismatch(format!("score shapes {:?} and {:?}", first.dim(), s.dim())));
        }
        out.scaled_add(weights.map_or(1.0, |w| w[i]), *s);
    }
    Ok(out)
}

/// Predicted class per row of the summed scores.
pub fn fuse_scores(scores: &[&Array2<f64>], weights: Option<&[f64]>) -> Result<Vec<usize>> {
    Ok(predictions(&fuse_logits(scores, weights)?))
}

pub fn predictions(scores: &Array2<f64>) -> Vec<usize> {
    scores.rows().into_iter().map(|r| argmax(r.as_slice().expect("standard layout"))).collect()
}

pub fn accuracy(predicted: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predicted.iter().zip(labels).filter(|(p, l)| p == l).count();
    correct as f64 / labels.len() as f64
}

/// Accuracy of every non-empty combination of the available branches, singles first,
/// in joint, velocity, bone order.
pub fn subset_grid(branch_scores: &[(Branch, Array2<f64>)], labels: &[usize]) -> Result<Vec<(Vec<Branch>, f64)>> {
    let n = branch_scores.len();
    let mut masks: Vec<usize> = (1..1usize << n).collect();
    masks.sort_by_key(|m| (m.count_ones(), *m));
    masks
        .into_iter()
        .map(|mask| {
            let picked: Vec<&(Branch, Array2<f64>)> =
                branch_scores.iter().enumerate().filter(|(i, _)| mask & (1 << i) != 0).map(|(_, b)| b).collect();
            let scores: Vec<&Array2<f64>> = picked.iter().map(|(_, s)| s).collect();
            let acc = accuracy(&fuse_scores(&scores, None)?, labels);
            Ok((picked.iter().map(|(b, _)| *b).collect(), acc))
        })
        .collect()
}

pub fn subset_label(branches: &[Branch]) -> String {
    branches
        .iter()
        .map(|b| {
            let name = b.name();
            name[..1].to_uppercase() + &name[1..]
        })
        .collect::<Vec<_>>()
        .join("+")
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn ties_go_to_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
    }

    #[test]
    fn majority_by_sum() {
        let a = array![[1.0, 0.0]];
        let b = array![[0.0, 1.0]];
        assert_eq!(fuse_scores(&[&a, &a, &b], None).unwrap(), vec![0]);
    }

    #[test]
    fn grid_order() {
        let s = array![[1.0, 0.0]];
        let scores = vec![(Branch::Joint, s.clone()), (Branch::Velocity, s.clone()), (Branch::Bone, s)];
        let grid = subset_grid(&scores, &[0]).unwrap();
        let labels: Vec<String> = grid.iter().map(|(b, _)| subset_label(b)).collect();
        assert_eq!(
            labels,
            ["Joint", "Velocity", "Bone", "Joint+Velocity", "Joint+Bone", "Velocity+Bone", "Joint+Velocity+Bone"]
        );
    }
}
