//! Inference and evaluation reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::data::{average_baseline, side_by_side, write_frame, Dataset, Frame, ImageFormat};
use crate::error::Result;
use crate::loss::{mse_pixel, psnr_from_mse, to_paper_scale};
use crate::nn::Network;
use crate::train::model_input;

pub const METRICS_FILE: &str = "metrics.csv";
pub const METRICS_HEADER: &str = "triplet,mse_internal,mse_paper,psnr_db";

/// Eval-mode forward pass on a frame pair; output clamped to `[0, 1]`.
pub fn interpolate(network: &Network<f32>, a: &Frame, b: &Frame) -> Result<Frame> {
    let out = network.predict(&model_input(a, b)?)?;
    Frame::from_clamped(&out, (a.source_index + b.source_index) / 2)
}

/// What produces the middle-frame prediction.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    Model(&'a Network<f32>),
    /// Returns the ground truth itself (sanity mode).
    GroundTruth,
    /// Per-pixel mean of the outer frames.
    AverageBaseline,
}

impl Predictor<'_> {
    pub fn predict(&self, triplet: &crate::data::FrameTriplet) -> Result<Frame> {
        match self {
            Predictor::Model(net) => interpolate(net, &triplet.frame_a, &triplet.frame_b),
            Predictor::GroundTruth => Ok(triplet.frame_mid.clone()),
            Predictor::AverageBaseline => Ok(average_baseline(triplet)),
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    /// Side-by-side images for the first `compare_images` triplets.
    pub compare_images: usize,
    /// White separator width between the halves; 0 disables it.
    pub separator: usize,
    pub image_format: ImageFormat,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions { compare_images: 4, separator: 2, image_format: ImageFormat::Png }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalRow {
    pub triplet: usize,
    pub mse_internal: f64,
    pub mse_paper: f64,
    pub psnr_db: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<EvalRow>,
    /// Mean of the per-triplet values; PSNR is the mean of per-triplet PSNR.
    pub mean: EvalRow,
}

impl EvalReport {
    /// Per-triplet rows followed by a `mean` row.
    pub fn to_csv(&self) -> String {
        let mut out = format!("{METRICS_HEADER}\n");
        for r in &self.rows {
            writeln!(out, "{},{},{},{}", r.triplet, r.mse_internal, r.mse_paper, r.psnr_db).unwrap();
        }
        let m = &self.mean;
        writeln!(out, "mean,{},{},{}", m.mse_internal, m.mse_paper, m.psnr_db).unwrap();
        out
    }
}

/// Scores every triplet of `dataset`. When `out_dir` is given, writes
/// `metrics.csv` and `compare_NNNNNN.<ext>` images (prediction left, ground
/// truth right) there.
pub fn evaluate(
    predictor: Predictor<'_>,
    dataset: &Dataset,
    out_dir: Option<&Path>,
    options: &EvalOptions,
) -> Result<EvalReport> {
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::with_capacity(dataset.len());
    for (i, t) in dataset.triplets().iter().enumerate() {
        let pred = predictor.predict(t)?;
        let mse = mse_pixel(pred.pixels(), t.frame_mid.pixels())?.value;
        rows.push(EvalRow { triplet: i, mse_internal: mse, mse_paper: to_paper_scale(mse), psnr_db: psnr_from_mse(mse) });
        if let Some(dir) = out_dir.filter(|_| i < options.compare_images) {
            let image = side_by_side(&pred, &t.frame_mid, options.separator)?;
            let name = format!("compare_{i:06}.{}", options.image_format.extension());
            write_frame(&image, dir.join(name), options.image_format)?;
        }
    }
    let n = rows.len() as f64;
    let mean_of = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let mean = EvalRow {
        triplet: rows.len(),
        mse_internal: mean_of(|r| r.mse_internal),
        mse_paper: mean_of(|r| r.mse_paper),
        psnr_db: mean_of(|r| r.psnr_db),
    };
    let report = EvalReport { rows, mean };
    if let Some(dir) = out_dir {
        fs::write(dir.join(METRICS_FILE), report.to_csv())?;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{read_frame, synth_motion_dataset};
    use crate::nn::build_interpolator;
    use crate::tensor::Rng;

    fn data() -> Dataset {
        synth_motion_dataset(3, (16, 20), &Rng::new(4)).unwrap()
    }

    #[test]
    fn interpolate_shape_and_determinism() {
        let net = Network::init(build_interpolator(6, 4, 0.1, 0.1).unwrap(), &Rng::new(2)).unwrap();
        let d = data();
        let t = &d.triplets()[0];
        let a = interpolate(&net, &t.frame_a, &t.frame_b).unwrap();
        let b = interpolate(&net, &t.frame_a, &t.frame_b).unwrap();
        assert_eq!(a.dims(), (16, 20));
        assert_eq!(a, b);
        assert!(a.pixels().as_slice().iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn ground_truth_sanity_mode() {
        let d = data();
        let r = evaluate(Predictor::GroundTruth, &d, None, &EvalOptions::default()).unwrap();
        assert!(r.rows.iter().all(|row| row.mse_paper == 0.0 && row.psnr_db == 99.0));
        assert_eq!(r.mean.psnr_db, 99.0);
    }

    #[test]
    fn report_files_and_mean() {
        let d = data();
        let dir = tempfile::tempdir().unwrap();
        let opts = EvalOptions { compare_images: 2, separator: 3, image_format: ImageFormat::Ppm };
        let r = evaluate(Predictor::AverageBaseline, &d, Some(dir.path()), &opts).unwrap();
        let text = fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 1 + 3 + 1);
        let per: Vec<f64> = lines[1..4].iter().map(|l| l.split(',').nth(2).unwrap().parse().unwrap()).collect();
        let mean: f64 = lines[4].split(',').nth(2).unwrap().parse().unwrap();
        assert!((per.iter().sum::<f64>() / 3.0 - mean).abs() < 1e-6);
        assert_eq!(mean, r.mean.mse_paper);

        let img = read_frame(dir.path().join("compare_000000.ppm")).unwrap();
        assert_eq!(img.dims(), (16, 2 * 20 + 3));
        assert!(dir.path().join("compare_000001.ppm").exists());
        assert!(!dir.path().join("compare_000002.ppm").exists());
    }
}
