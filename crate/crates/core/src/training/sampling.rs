use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SamplingMethod {
    Normal,
    Undersample,
    Oversample,
}

fn classes(y: &[u8]) -> (Vec<usize>, Vec<usize>) {
    let pos = (0..y.len()).filter(|&i| y[i] == 1).collect();
    let neg = (0..y.len()).filter(|&i| y[i] != 1).collect();
    (pos, neg)
}

fn minority_majority(y: &[u8]) -> Result<(Vec<usize>, Vec<usize>)> {
    let (pos, neg) = classes(y);
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::InvalidInput("resampling needs both classes present".into()));
    }
    Ok(if pos.len() <= neg.len() { (pos, neg) } else { (neg, pos) })
}

/// Row indices after resampling a labelled set. Oversampling duplicates
/// minority rows (drawn with replacement); use [`smote`] for tabular data.
/// The result is sorted so row order stays meaningful.
pub fn resample_indices<R: Rng + ?Sized>(y: &[u8], method: SamplingMethod, rng: &mut R) -> Result<Vec<usize>> {
    if method == SamplingMethod::Normal {
        return Ok((0..y.len()).collect());
    }
    let (minority, mut majority) = minority_majority(y)?;
    let mut out = minority.clone();
    match method {
        SamplingMethod::Undersample => {
            majority.shuffle(rng);
            out.extend(&majority[..minority.len()]);
        }
        SamplingMethod::Oversample => {
            out.extend(&majority);
            for _ in 0..majority.len() - minority.len() {
                out.push(minority[rng.random_range(0..minority.len())]);
            }
        }
        SamplingMethod::Normal => unreachable!(),
    }
    out.sort_unstable();
    Ok(out)
}

/// SMOTE: synthetic minority rows `x + u·(neighbour − x)`, `u ~ U(0,1)`, with
/// the neighbour drawn from the `k` nearest minority rows (Euclidean), until
/// both classes have equal counts. Original rows come first.
pub fn smote<R: Rng + ?Sized>(x: &Array2<f64>, y: &[u8], k: usize, rng: &mut R) -> Result<(Array2<f64>, Vec<u8>)> {
    if x.nrows() != y.len() {
        return Err(Error::shape("smote labels", &[x.nrows()], &[y.len()]));
    }
    let (minority, majority) = minority_majority(y)?;
    let label = y[minority[0]];
    let need = majority.len() - minority.len();
    let k = k.min(minority.len() - 1);
    let mut rows: Vec<f64> = x.iter().copied().collect();
    let mut labels = y.to_vec();
    if need > 0 && k == 0 {
        // A single minority row: every synthetic point is that row.
        for _ in 0..need {
            rows.extend(x.row(minority[0]).iter());
            labels.push(label);
        }
    } else if need > 0 {
        let neighbours: Vec<Vec<usize>> = minority
            .iter()
            .map(|&i| {
                let mut d: Vec<(f64, usize)> = minority
                    .iter()
                    .filter(|&&j| j != i)
                    .map(|&j| {
                        let dist = x.row(i).iter().zip(x.row(j)).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
                        (dist, j)
                    })
                    .collect();
                d.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
                d.into_iter().take(k).map(|(_, j)| j).collect()
            })
            .collect();
        for _ in 0..need {
            let a = rng.random_range(0..minority.len());
            let b = neighbours[a][rng.random_range(0..k)];
            let u: f64 = rng.random();
            let (ra, rb) = (x.row(minority[a]), x.row(b));
            rows.extend(ra.iter().zip(rb).map(|(p, q)| p + u * (q - p)));
            labels.push(label);
        }
    }
    let n = labels.len();
    Ok((Array2::from_shape_vec((n, x.ncols()), rows).expect("row-major fill"), labels))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn counts(y: &[u8]) -> (usize, usize) {
        let p = y.iter().filter(|&&v| v == 1).count();
        (y.len() - p, p)
    }

    #[test]
    fn under_and_over() {
        let y: Vec<u8> = [vec![0; 10], vec![1; 5]].concat();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let idx = resample_indices(&y, SamplingMethod::Undersample, &mut rng).unwrap();
        let yy: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        assert_eq!(counts(&yy), (5, 5));
        let idx = resample_indices(&y, SamplingMethod::Oversample, &mut rng).unwrap();
        let yy: Vec<u8> = idx.iter().map(|&i| y[i]).collect();
        assert_eq!(counts(&yy), (10, 10));
        assert!(idx.iter().filter(|&&i| y[i] == 1).all(|&i| (10..15).contains(&i)));
        assert!(resample_indices(&[0, 0], SamplingMethod::Oversample, &mut rng).is_err());
        assert_eq!(resample_indices(&[0, 0], SamplingMethod::Normal, &mut rng).unwrap(), vec![0, 1]);
    }

    #[test]
    fn smote_points_lie_on_segment() {
        let x = array![[0.0, 0.0], [1.0, 1.0], [5.0, 2.0], [6.0, 1.0], [7.0, 3.0], [8.0, 0.0]];
        let y = [1, 1, 0, 0, 0, 0];
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let (xs, ys) = smote(&x, &y, 1, &mut rng).unwrap();
        assert_eq!(counts(&ys), (4, 4));
        for r in 6..8 {
            let (a, b) = (xs[[r, 0]], xs[[r, 1]]);
            assert!((a - b).abs() < 1e-15 && (0.0..=1.0).contains(&a));
        }
    }
}
