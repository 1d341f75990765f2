//! Class activation maps from gradients of a class logit.

use serde::{Deserialize, Serialize};

use super::{Heatmap, Provenance};
use crate::autograd::Graph;
use crate::data::render::region_covers;
use crate::data::scene::Region;
use crate::error::{Error, Result};
use crate::models::Network;
use crate::scalar::Scalar;
use crate::tensor::{bilinear_plane, Tensor};

/// Activation stack the maps are computed on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CamLayer {
    /// Last shared backbone block.
    Backbone,
    /// The classifier's own conv stack, the last convolution before pooling.
    #[default]
    ClassifierHead,
}

fn check_stack<T: Scalar>(acts: &Tensor<T>, grads: &Tensor<T>) -> Result<(usize, usize)> {
    let &[k, h, w] = acts.shape() else {
        return Err(Error::Contract(format!("CAM needs a [K,h,w] activation stack, got {:?}", acts.shape())));
    };
    if grads.shape() != acts.shape() {
        return Err(Error::Shape(format!("gradient shape {:?} differs from activations {:?}", grads.shape(), acts.shape())));
    }
    Ok((k, h * w))
}

/// `ReLU(Σ_k α_k A^k)` with `α_k` the spatial mean of `∂y/∂A^k`, on the
/// activation grid.
pub fn grad_cam_map<T: Scalar>(acts: &Tensor<T>, grads: &Tensor<T>) -> Result<Vec<f64>> {
    let (_, n) = check_stack(acts, grads)?;
    let mut out = vec![0.0; n];
    for (a, g) in acts.data().chunks(n).zip(grads.data().chunks(n)) {
        let alpha = g.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;
        for (o, v) in out.iter_mut().zip(a) {
            *o += alpha * v.as_f64();
        }
    }
    Ok(out.into_iter().map(|v| v.max(0.0)).collect())
}

/// Grad-CAM++: channel weights `Σ_ij a_ij ReLU(g_ij)` with
/// `a_ij = g² / (2g² + Σ_ab A_ab · g³)`, the closed form for an exponential
/// of the class score.
pub fn grad_cam_pp_map<T: Scalar>(acts: &Tensor<T>, grads: &Tensor<T>) -> Result<Vec<f64>> {
    let (_, n) = check_stack(acts, grads)?;
    let mut out = vec![0.0; n];
    for (a, g) in acts.data().chunks(n).zip(grads.data().chunks(n)) {
        let sum_a: f64 = a.iter().map(|v| v.as_f64()).sum();
        let mut weight = 0.0;
        for &gv in g {
            let g = gv.as_f64();
            let (g2, g3) = (g * g, g * g * g);
            let denom = 2.0 * g2 + sum_a * g3;
            if denom != 0.0 {
                weight += g2 / denom * g.max(0.0);
            }
        }
        for (o, v) in out.iter_mut().zip(a) {
            *o += weight * v.as_f64();
        }
    }
    Ok(out.into_iter().map(|v| v.max(0.0)).collect())
}

/// Activations of `layer` and the gradient of class `class`'s logit w.r.t.
/// them.
fn stack_and_gradient<T: Scalar>(net: &Network<T>, image: &Tensor<T>, class: usize, layer: CamLayer) -> Result<(Tensor<T>, Tensor<T>)> {
    let n_classes = net.arch().n_classes;
    if class >= n_classes {
        return Err(Error::Domain(format!("class {class} out of range for {n_classes} classes")));
    }
    let mut g = Graph::new();
    let x = net.image_input(&mut g, image)?;
    let acts = net.backbone_forward(&mut g, x)?;
    let stack = match layer {
        CamLayer::Backbone => acts,
        CamLayer::ClassifierHead => net.class_features(&mut g, acts)?,
    };
    let feats = match layer {
        CamLayer::Backbone => net.class_features(&mut g, acts)?,
        CamLayer::ClassifierHead => stack,
    };
    let z = net.class_logits_from_features(&mut g, feats)?;
    let mut seed = vec![T::zero(); n_classes];
    seed[class] = T::one();
    let value = g.value(z).data()[class];
    let root = g.loss(z, value, seed)?;
    let grads = g.backward(root);
    let a = g.value(stack).clone();
    let d = grads.get(stack).cloned().unwrap_or_else(|| Tensor::zeros(a.shape()));
    Ok((a, d))
}

fn to_image(grid: Vec<f64>, h: usize, w: usize, size: usize, provenance: Provenance, class: usize) -> Result<Heatmap> {
    let up = bilinear_plane(&grid, h, w, size, size);
    Heatmap::from_raw(size, size, up, provenance, class)
}

fn cam_with<T: Scalar>(
    net: &Network<T>,
    image: &Tensor<T>,
    class: usize,
    layer: CamLayer,
    provenance: Provenance,
    map: fn(&Tensor<T>, &Tensor<T>) -> Result<Vec<f64>>,
) -> Result<Heatmap> {
    let (a, d) = stack_and_gradient(net, image, class, layer)?;
    let grid = map(&a, &d)?;
    let (h, w) = (a.shape()[1], a.shape()[2]);
    to_image(grid, h, w, net.arch().image_size, provenance, class)
}

/// Grad-CAM of class `class`, upsampled to the image and display-normalised.
pub fn grad_cam<T: Scalar>(net: &Network<T>, image: &Tensor<T>, class: usize, layer: CamLayer) -> Result<Heatmap> {
    cam_with(net, image, class, layer, Provenance::GradCam, grad_cam_map)
}

pub fn grad_cam_pp<T: Scalar>(net: &Network<T>, image: &Tensor<T>, class: usize, layer: CamLayer) -> Result<Heatmap> {
    cam_with(net, image, class, layer, Provenance::GradCamPp, grad_cam_pp_map)
}

/// Whether pixel `point` lies within `margin` pixels (Euclidean, between
/// pixel centres) of a pixel covered by `region`.
pub fn near_region(region: &Region, size: usize, point: (usize, usize), margin: f64) -> bool {
    let (py, px) = (point.0 as f64, point.1 as f64);
    (0..size).any(|y| {
        (0..size).any(|x| {
            let (dy, dx) = (y as f64 - py, x as f64 - px);
            dy * dy + dx * dx <= margin * margin && region_covers(region, y, x, size)
        })
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(shape: &[usize], v: Vec<f64>) -> Tensor<f64> {
        Tensor::from_vec(shape, v).unwrap()
    }

    #[test]
    fn hand_computed_two_by_two() {
        let a = t(&[2, 2, 2], vec![1.0, 0.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0]);
        let g = t(&[2, 2, 2], vec![0.5, 0.5, 0.5, 0.5, -0.25, -0.25, -0.25, -0.25]);
        let m = grad_cam_map(&a, &g).unwrap();
        let want = [0.5, 0.0, 0.0, 0.0];
        for (x, y) in m.iter().zip(want) {
            assert!((x - y).abs() <= 1e-12);
        }
    }

    #[test]
    fn degenerate_cases() {
        let zeros = Tensor::<f64>::zeros(&[3, 4, 4]);
        let g = t(&[3, 4, 4], (0..48).map(|i| (i as f64).sin()).collect());
        assert!(grad_cam_map(&zeros, &g).unwrap().iter().all(|&v| v == 0.0));
        assert!(grad_cam_pp_map(&zeros, &g).unwrap().iter().all(|&v| v == 0.0));

        let a = t(&[1, 2, 3], vec![0.1, 0.4, 0.0, 0.9, 0.2, 0.3]);
        let ones = Tensor::filled(&[1, 2, 3], 1.0);
        assert_eq!(grad_cam_map(&a, &ones).unwrap(), a.data().to_vec());
        let neg = Tensor::filled(&[1, 2, 3], -1.0);
        assert!(grad_cam_map(&a, &neg).unwrap().iter().all(|&v| v == 0.0));

        let pp = grad_cam_pp_map(&a, &Tensor::filled(&[1, 2, 3], 0.7)).unwrap();
        let plain = grad_cam_map(&a, &Tensor::filled(&[1, 2, 3], 0.7)).unwrap();
        assert_eq!(crate::tensor::argmax(&pp), crate::tensor::argmax(&plain));
        assert!(pp.iter().all(|&v| v >= 0.0));
    }

    #[test]
    fn dilated_region_membership() {
        let r = Region::Ellipse(crate::data::scene::Ellipse { cx: 0.25, cy: 0.25, rx: 0.1, ry: 0.1 });
        assert!(near_region(&r, 32, (8, 8), 0.0));
        assert!(!near_region(&r, 32, (24, 24), 8.0));
        assert!(near_region(&r, 32, (8, 16), 8.0));
    }

    #[test]
    fn non_spatial_layer_is_a_contract_error() {
        let flat = Tensor::<f64>::zeros(&[4, 4]);
        assert!(matches!(grad_cam_map(&flat, &flat), Err(Error::Contract(_))));
        let a = Tensor::<f64>::zeros(&[1, 2, 2]);
        let b = Tensor::<f64>::zeros(&[1, 2, 3]);
        assert!(matches!(grad_cam_pp_map(&a, &b), Err(Error::Shape(_))));
    }
}
