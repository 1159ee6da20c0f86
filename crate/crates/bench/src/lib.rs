//! Shared fixtures for the criterion benches.

use dualfocus_core::{
    bench, generate_slide, render_dual_led, AppConfig, CalibrationCurve, CaptureRequest, Frame,
    SlideModel, SlideSpec, TileIndex,
};

pub struct Fixture {
    pub app: AppConfig,
    pub model: SlideModel,
    pub curve: CalibrationCurve,
    pub frame: Frame,
}

impl Fixture {
    /// Default config on a `rows` x `cols` slide with one rendered frame.
    pub fn new(rows: usize, cols: usize) -> Self {
        let app = AppConfig {
            slide: SlideSpec {
                rows,
                cols,
                ..SlideSpec::default()
            },
            ..AppConfig::default()
        };
        let model = generate_slide(&app.slide, app.slide_seed()).expect("slide");
        let curve = bench::calibrate(&app).expect("calibration");
        let frame = render_dual_led(&model, &app.geometry, &app.optics, &capture(&app, 0.0))
            .expect("render");
        Self {
            app,
            model,
            curve,
            frame,
        }
    }
}

/// Capture request for tile (0, 0) at the survey offset.
pub fn capture(app: &AppConfig, blur_px: f64) -> CaptureRequest {
    CaptureRequest::dual_led(
        TileIndex::new(0, 0),
        app.survey.z_offset,
        app.optics.noise_sigma,
        7,
    )
    .with_blur(blur_px, app.survey.scan_axis)
}
