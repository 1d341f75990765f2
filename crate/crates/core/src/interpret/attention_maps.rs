use super::{Heatmap, Provenance};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::bilinear_plane;

/// One heatmap per decoded token: its attention row laid out on the `grid`,
/// upsampled to `size×size` and display-normalised.
pub fn attention_heatmaps<T: Scalar>(step_attention: &[Vec<T>], grid: (usize, usize), size: usize) -> Result<Vec<Heatmap>> {
    let (h, w) = grid;
    step_attention
        .iter()
        .enumerate()
        .map(|(t, row)| {
            if row.len() != h * w {
                return Err(Error::Shape(format!("attention row {t} has {} cells, grid is {h}×{w}", row.len())));
            }
            let vals: Vec<f64> = row.iter().map(|v| v.as_f64()).collect();
            let total: f64 = vals.iter().sum();
            if (total - 1.0).abs() > 1e-3 || vals.iter().any(|&v| v < 0.0) {
                return Err(Error::Contract(format!("attention row {t} is not a distribution (sum {total})")));
            }
            Heatmap::from_raw(size, size, bilinear_plane(&vals, h, w, size, size), Provenance::Attention, t)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_and_one_hot_rows() {
        let uniform = vec![vec![1.0 / 16.0; 16]];
        let maps = attention_heatmaps(&uniform, (4, 4), 16).unwrap();
        assert!(maps[0].values.iter().all(|&v| (v - 1.0).abs() < 1e-12));

        let mut hot = vec![0.0f64; 16];
        hot[6] = 1.0; // cell (1, 2)
        let maps = attention_heatmaps(&[hot.clone(), hot], (4, 4), 16).unwrap();
        assert_eq!(maps.len(), 2);
        let (y, x) = maps[0].argmax();
        assert_eq!((y / 4, x / 4), (1, 2));
        assert_eq!(maps[1].target, 1);
    }

    #[test]
    fn rows_must_be_distributions() {
        assert!(matches!(attention_heatmaps(&[vec![0.5f64; 4]], (2, 2), 4), Err(Error::Contract(_))));
        assert!(matches!(attention_heatmaps(&[vec![1.0f64]], (2, 2), 4), Err(Error::Shape(_))));
    }
}
