//! Instance features: boxes projected onto the fused feature map and
//! RoI-aligned onto a fixed bin grid.

use crate::backbone::FeatureMap;
use crate::geom::BoundingBox;
use crate::graph::{Graph, RoiBox, Var};
use crate::nn::ParamStore;
use crate::{Error, Result};
use ndarray::Array2;

/// Project image-coordinate boxes into feature coordinates.
pub fn project_boxes(
    boxes: &[BoundingBox],
    frame_w: usize,
    frame_h: usize,
    feat_w: usize,
    feat_h: usize,
) -> Result<Vec<RoiBox>> {
    let sx = feat_w as f64 / frame_w as f64;
    let sy = feat_h as f64 / frame_h as f64;
    boxes
        .iter()
        .map(|b| {
            let rb = RoiBox {
                x: b.x * sx,
                y: b.y * sy,
                w: b.w * sx,
                h: b.h * sy,
            };
            if rb.w <= 1e-9 || rb.h <= 1e-9 {
                return Err(Error::invalid(format!(
                    "box {b:?} projects to zero area on the {feat_w}x{feat_h} map"
                )));
            }
            Ok(rb)
        })
        .collect()
}

/// Graph-level instance features over an already-built fused map node.
pub fn instance_features_graph(
    g: &mut Graph,
    fused: Var,
    boxes: &[BoundingBox],
    frame_w: usize,
    frame_h: usize,
    bins: usize,
) -> Result<Var> {
    let (fh, fw) = (g.shape(fused)[1], g.shape(fused)[2]);
    let projected = project_boxes(boxes, frame_w, frame_h, fw, fh)?;
    Ok(g.roi_align(fused, &projected, bins))
}

/// Value-level instance features: one `bins*bins*C` row per box.
pub fn roi_instance_features(
    fused: &FeatureMap,
    boxes: &[BoundingBox],
    frame_w: usize,
    frame_h: usize,
    bins: usize,
) -> Result<Array2<f64>> {
    let store = ParamStore::new();
    let mut g = Graph::new(&store);
    let x = g.input(fused.data.clone().into_dyn());
    let out = instance_features_graph(&mut g, x, boxes, frame_w, frame_h, bins)?;
    Ok(g.value(out).clone().into_dimensionality().unwrap())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array3;

    #[test]
    fn constant_map_gives_constant_vector() {
        let fmap = FeatureMap::new(Array3::from_elem((4, 6, 6), 0.25));
        let boxes = vec![BoundingBox::new(0.0, 0.0, 48.0, 48.0)];
        let feats = roi_instance_features(&fmap, &boxes, 48, 48, 3).unwrap();
        assert_eq!(feats.dim(), (1, 4 * 9));
        for v in feats.iter() {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn output_length_is_bin_grid_times_channels() {
        let fmap = FeatureMap::new(Array3::zeros((1024, 12, 12)));
        let boxes = vec![BoundingBox::new(10.0, 10.0, 30.0, 30.0)];
        let feats = roi_instance_features(&fmap, &boxes, 96, 96, 3).unwrap();
        assert_eq!(feats.dim().1, 3 * 3 * 1024);
    }

    #[test]
    fn bilinear_samples_match_hand_interpolation() {
        // 1-channel 2x2 map; a box whose bin centers land at known fractional
        // positions. Feature values: [[1, 3], [5, 7]].
        let mut data = Array3::zeros((1, 2, 2));
        data[[0, 0, 0]] = 1.0;
        data[[0, 0, 1]] = 3.0;
        data[[0, 1, 0]] = 5.0;
        data[[0, 1, 1]] = 7.0;
        let fmap = FeatureMap::new(data);

        // Frame 16x16, map 2x2 -> scale 1/8. Box (0,0,16,16) covers the whole
        // map; with 2x2 bins the sample centers sit at map coords
        // (0.5,0.5), (0.5,1.5), (1.5,0.5), (1.5,1.5), i.e. pixel-center
        // positions 0.0/1.0 after the half-pixel shift.
        let boxes = vec![BoundingBox::new(0.0, 0.0, 16.0, 16.0)];
        let feats = roi_instance_features(&fmap, &boxes, 16, 16, 2).unwrap();
        let expect = [1.0, 3.0, 5.0, 7.0];
        for (got, want) in feats.row(0).iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12);
        }

        // Quarter-pixel probe: box (0,0,8,8) covers the top-left map pixel
        // only; 2x2 bin centers at map positions 0.25/0.75 -> pixel-center
        // coords -0.25 (clamped to 0) and 0.25.
        let boxes = vec![BoundingBox::new(0.0, 0.0, 8.0, 8.0)];
        let feats = roi_instance_features(&fmap, &boxes, 16, 16, 2).unwrap();
        // positions (y,x) in pixel-center space after clamping:
        // (0,0), (0,0.25), (0.25,0), (0.25,0.25)
        let expect = [
            1.0,
            1.0 * 0.75 + 3.0 * 0.25,
            1.0 * 0.75 + 5.0 * 0.25,
            1.0 * 0.75 * 0.75 + 3.0 * 0.75 * 0.25 + 5.0 * 0.25 * 0.75 + 7.0 * 0.25 * 0.25,
        ];
        for (got, want) in feats.row(0).iter().zip(expect.iter()) {
            assert!((got - want).abs() < 1e-12, "{got} vs {want}");
        }
    }

    #[test]
    fn zero_area_projection_is_error() {
        let fmap = FeatureMap::new(Array3::zeros((2, 4, 4)));
        // A genuinely degenerate projection can only come from a zero-size
        // feature scale; emulate with an enormous frame.
        let boxes = vec![BoundingBox::new(0.0, 0.0, 1e-12, 1e-12)];
        let feats = project_boxes(&boxes, 32, 32, 4, 4);
        assert!(feats.is_err());
    }
}
