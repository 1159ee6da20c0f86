//! Ground-truth focus from Köhler z-stacks maximized with the Brenner gradient.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimator::parabolic_offset;
use crate::model::TileIndex;
use crate::optics::{render_kohler_stack, stack_positions, Frame, OpticsParams};
use crate::slide::SlideModel;

pub const DEFAULT_STACK_PLANES: usize = 11;
pub const DEFAULT_STACK_STEP_UM: f64 = 0.5;

/// `sum (I(x + 2, y) - I(x, y))^2` over all rows, without wrap-around.
pub fn brenner_score(frame: &Frame) -> Result<f64> {
    let px = frame.pixels();
    if px.ncols() < 3 {
        return Err(Error::Argument(format!(
            "Brenner score needs >= 3 columns, got {}",
            px.ncols()
        )));
    }
    Ok(px
        .rows()
        .into_iter()
        .map(|row| {
            row.iter()
                .zip(row.iter().skip(2))
                .map(|(a, b)| (b - a) * (b - a))
                .sum::<f64>()
        })
        .sum())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BrennerResult {
    /// Best plane, or the parabolic vertex when `refined`, um.
    pub z_best: f64,
    /// The best plane itself, um.
    pub z_best_plane: f64,
    pub scores: Vec<(f64, f64)>,
    pub refined: bool,
}

/// Pick the best plane of a scored stack. Ties go to the plane closest to
/// the stack centre; the refined vertex uses the two neighbouring planes.
pub fn best_plane(scores: &[(f64, f64)], refine: bool) -> Result<BrennerResult> {
    if scores.is_empty() || scores.len().is_multiple_of(2) {
        return Err(Error::Argument(
            "stack must have an odd number of planes".into(),
        ));
    }
    let mid = scores.len() / 2;
    let mut best = mid;
    for (i, &(_, s)) in scores.iter().enumerate() {
        let better = s > scores[best].1;
        let tie_closer = s == scores[best].1 && i.abs_diff(mid) < best.abs_diff(mid);
        if better || tie_closer {
            best = i;
        }
    }
    let plane = scores[best].0;
    let interior = best > 0 && best + 1 < scores.len();
    let (z_best, refined) = if refine && interior {
        let step = scores[best + 1].0 - scores[best].0;
        let delta = parabolic_offset(scores[best - 1].1, scores[best].1, scores[best + 1].1);
        (plane + delta * step, true)
    } else {
        (plane, false)
    };
    Ok(BrennerResult {
        z_best,
        z_best_plane: plane,
        scores: scores.to_vec(),
        refined,
    })
}

/// Render an `n`-plane Köhler stack around `z_center` and maximize the
/// Brenner score over it.
#[allow(clippy::too_many_arguments)]
pub fn find_focus_brenner(
    model: &SlideModel,
    params: &OpticsParams,
    tile: TileIndex,
    z_center: f64,
    n: usize,
    step: f64,
    refine: bool,
    seed: u64,
) -> Result<BrennerResult> {
    let positions = stack_positions(z_center, n, step)?;
    let frames = render_kohler_stack(model, params, tile, z_center, n, step, seed)?;
    let scores = positions
        .iter()
        .zip(&frames)
        .map(|(&z, f)| Ok((z, brenner_score(f)?)))
        .collect::<Result<Vec<_>>>()?;
    best_plane(&scores, refine)
}

/// One row of the oracle export.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OracleRecord {
    pub row: usize,
    pub col: usize,
    pub z_best: f64,
    pub z_best_refined: f64,
}

pub const ORACLE_CSV_HEADER: [&str; 4] = ["row", "col", "z_best", "z_best_refined"];

pub fn write_oracle_csv<W: Write>(records: &[OracleRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(ORACLE_CSV_HEADER)?;
    for r in records {
        w.write_record([
            r.row.to_string(),
            r.col.to_string(),
            r.z_best.to_string(),
            r.z_best_refined.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use ndarray::Array2;

    use super::*;
    use crate::model::ContrastMode;
    use crate::optics::render_kohler;
    use crate::slide::{generate_slide, SlideSpec};

    fn slide(z: f64) -> SlideModel {
        let spec = SlideSpec {
            tile_px: 128,
            topo_offset: z,
            ..SlideSpec::flat(1, 2)
        };
        generate_slide(&spec, 8).unwrap()
    }

    #[test]
    fn constant_frame_scores_zero() {
        let f = Frame::from_pixels(Array2::from_elem((4, 8), 0.3)).unwrap();
        assert_eq!(brenner_score(&f).unwrap(), 0.0);
    }

    #[test]
    fn dc_offset_does_not_change_score() {
        let px = Array2::from_shape_fn((5, 9), |(r, c)| ((r * 3 + c * 5) % 7) as f64);
        let a = brenner_score(&Frame::from_pixels(px.clone()).unwrap()).unwrap();
        let b = brenner_score(&Frame::from_pixels(px.mapv(|v| v + 2.5)).unwrap()).unwrap();
        assert!((a - b).abs() < 1e-9 * a);
    }

    #[test]
    fn difference_is_not_circular() {
        // Only columns 0 -> 2 contribute for a 3-column frame.
        let px = Array2::from_shape_vec((1, 3), vec![1.0, 5.0, 4.0]).unwrap();
        assert_eq!(
            brenner_score(&Frame::from_pixels(px).unwrap()).unwrap(),
            9.0
        );
        let narrow = Frame::from_pixels(Array2::zeros((2, 2))).unwrap();
        assert!(brenner_score(&narrow).is_err());
    }

    #[test]
    fn sharper_frame_scores_higher() {
        let m = slide(0.0);
        let p = OpticsParams::default();
        let t = TileIndex::new(0, 0);
        let s0 = brenner_score(&render_kohler(&m, &p, t, 0.0, 1).unwrap()).unwrap();
        let s1 = brenner_score(&render_kohler(&m, &p, t, 1.0, 1).unwrap()).unwrap();
        let s2 = brenner_score(&render_kohler(&m, &p, t, 2.0, 1).unwrap()).unwrap();
        let s3 = brenner_score(&render_kohler(&m, &p, t, 3.0, 1).unwrap()).unwrap();
        assert!(s0 > s2 && s1 > s3);
    }

    #[test]
    fn centred_stack_picks_the_middle_plane() {
        let m = slide(1.25);
        let r = find_focus_brenner(
            &m,
            &OpticsParams::noiseless(),
            TileIndex::new(0, 1),
            1.25,
            11,
            0.5,
            true,
            3,
        )
        .unwrap();
        assert_eq!(r.z_best_plane, 1.25);
        assert!((r.z_best - 1.25).abs() < 1e-9);
        assert_eq!(r.scores.len(), 11);
    }

    #[test]
    fn offset_focus_is_quantized_then_refined() {
        let m = slide(0.7);
        let r = find_focus_brenner(
            &m,
            &OpticsParams::default(),
            TileIndex::new(0, 0),
            0.0,
            11,
            0.5,
            true,
            3,
        )
        .unwrap();
        assert_eq!(r.z_best_plane, 0.5);
        assert!(r.refined);
        assert!((r.z_best - 0.7).abs() <= 0.25, "refined {}", r.z_best);
    }

    #[test]
    fn scores_are_unimodal_around_focus() {
        for mode in [ContrastMode::Stained, ContrastMode::Transparent] {
            let spec = SlideSpec {
                tile_px: 128,
                topo_offset: -0.3,
                contrast_mode: mode,
                ..SlideSpec::flat(1, 1)
            };
            let m = generate_slide(&spec, 2).unwrap();
            let r = find_focus_brenner(
                &m,
                &OpticsParams::default(),
                TileIndex::new(0, 0),
                0.0,
                11,
                0.5,
                false,
                5,
            )
            .unwrap();
            let peak = r
                .scores
                .iter()
                .enumerate()
                .max_by(|a, b| a.1 .1.total_cmp(&b.1 .1))
                .unwrap()
                .0;
            for i in 1..r.scores.len() {
                if i <= peak {
                    assert!(r.scores[i].1 > r.scores[i - 1].1, "{mode:?} rising at {i}");
                } else {
                    assert!(r.scores[i].1 < r.scores[i - 1].1, "{mode:?} falling at {i}");
                }
            }
            assert!((r.z_best - -0.3).abs() <= 0.25 + 1e-12);
        }
    }

    #[test]
    fn ties_break_toward_centre() {
        let scores = [(-1.0, 5.0), (-0.5, 1.0), (0.0, 1.0), (0.5, 1.0), (1.0, 5.0)];
        let r = best_plane(&scores, false).unwrap();
        assert_eq!(r.z_best_plane, -1.0);
        let flat = [(-0.5, 2.0), (0.0, 2.0), (0.5, 2.0)];
        assert_eq!(best_plane(&flat, true).unwrap().z_best, 0.0);
    }

    #[test]
    fn oracle_csv_header() {
        let mut buf = Vec::new();
        write_oracle_csv(
            &[OracleRecord {
                row: 1,
                col: 2,
                z_best: 0.5,
                z_best_refined: 0.62,
            }],
            &mut buf,
        )
        .unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "row,col,z_best,z_best_refined\n1,2,0.5,0.62\n"
        );
    }
}
