//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use common::{
    analytic_slope, calibrated, direct_autocorrelation, frame, noiseless, oracle_separation,
    residuals, slide, small_app, survey_cfg, two_copy_frame,
};
use dualfocus_core::bench::{write_bench_table_csv, BenchRun};
use dualfocus_core::report::{compare_with_brenner, DEPTH_OF_FIELD_UM};
use dualfocus_core::survey::{capture_tile, estimate_frames};
use dualfocus_core::{
    autocorrelate_1d, bench, estimate_shift_with, generate_slide, run_bench, survey, AppConfig,
    ContrastMode, EstimatorConfig, LagWindow, ScanAxis, SlideSpec, SurveyConfig, TileIndex,
};
use ndarray::Array2;
use rand::Rng;

type Outcome = Result<String, String>;

fn pool<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .expect("thread pool")
        .install(f)
}

fn check(cond: bool, detail: String) -> Outcome {
    if cond {
        Ok(detail)
    } else {
        Err(detail)
    }
}

/// Default bench, single worker, oracle off.
fn default_bench() -> Result<BenchRun, String> {
    pool(1, || run_bench(&AppConfig::default())).map_err(|e| e.to_string())
}

fn c1_bench_errors(run: &BenchRun) -> Outcome {
    let plan = AppConfig::default().bench;
    let primary = run.report.primary().ok_or("no results")?;
    let means: Vec<f64> = primary.summary.cells.iter().map(|c| c.mean_um).collect();
    let static_mean = means[0];
    let blur110 = primary
        .summary
        .cell(110.0)
        .ok_or("no 110 px column")?
        .mean_um;
    let monotone = means.windows(2).all(|w| w[0] <= w[1]);
    let tiles = primary.summary.n_tiles;
    let detail = format!(
        "{} slides, {tiles} tiles; means {:?} um; wall {:.1} s",
        primary.rows.len(),
        means.iter().map(|m| format!("{m:.3}")).collect::<Vec<_>>(),
        run.wall_s
    );
    check(
        primary.rows.len() == 10
            && tiles == 600
            && plan.blur_levels == [0.0, 50.0, 90.0, 110.0]
            && static_mean <= 0.15
            && blur110 <= 0.25
            && monotone
            && run.wall_s < 300.0,
        detail,
    )
}

fn c2_detection_range() -> Outcome {
    let app = AppConfig::default();
    let curve = calibrated(&app);
    let mut worst: f64 = 0.0;
    for z_true in [-30.0, -20.0, -10.0, 0.0, 10.0, 20.0, 30.0] {
        let spec = SlideSpec {
            topo_offset: z_true,
            ..SlideSpec::flat(2, 2)
        };
        let model = generate_slide(&spec, 17).map_err(|e| e.to_string())?;
        let r = survey(
            &model,
            &app.geometry,
            &app.optics,
            &curve,
            &survey_cfg(&app, 0.0),
        )
        .map_err(|e| format!("z_true {z_true}: {e}"))?;
        worst = residuals(&model, &r.map).into_iter().fold(worst, f64::max);
    }
    check(
        worst <= 0.3,
        format!("worst error {worst:.3} um over z_true -30..30"),
    )
}

fn c3_dof(run: &BenchRun) -> Outcome {
    let s = &run.report.primary().ok_or("no results")?.summary;
    let fixed = s.cells[0].in_dof_fraction;
    let blurred = s.cell(110.0).ok_or("no 110 px column")?.in_dof_fraction;
    check(
        fixed >= 0.99 && blurred >= 0.95,
        format!("within {DEPTH_OF_FIELD_UM} um: static {fixed:.3}, 110 px {blurred:.3}"),
    )
}

fn c4_estimator() -> Outcome {
    let mut worst_rel: f64 = 0.0;
    for seed in 0..4u64 {
        let mut rng = dualfocus_core::seed::rng(seed);
        let px = Array2::from_shape_simple_fn((32, 128), || rng.random::<f64>());
        let direct = direct_autocorrelation(&px);
        let fast = autocorrelate_1d(&frame(px)).map_err(|e| e.to_string())?;
        for (lag, v) in fast.pairs() {
            let d = direct[lag.rem_euclid(128) as usize];
            worst_rel = worst_rel.max((v - d).abs() / d.abs().max(1.0));
        }
    }
    let cfg = EstimatorConfig::default();
    let mut rms = Vec::new();
    for s in [20.0, 40.5, 120.25] {
        let window = LagWindow::new(s - 10.0, s + 40.0);
        let mut sq = 0.0;
        for seed in 0..8u64 {
            let px = two_copy_frame(32, 512, s, 2.0, 1000 + seed);
            let oracle = oracle_separation(&px, window);
            let est = estimate_shift_with(&frame(px), window, &cfg).map_err(|e| e.to_string())?;
            sq += (est.separation_px - oracle).powi(2);
        }
        rms.push((sq / 8.0).sqrt());
    }
    let worst_rms = rms.iter().copied().fold(0.0, f64::max);
    check(
        worst_rms <= 0.05 && worst_rel <= 1e-8,
        format!("rms vs oracle {rms:.4?} px; fft vs direct {worst_rel:.1e}"),
    )
}

fn c5_orthogonality() -> Outcome {
    let app = noiseless(&small_app(5, 10));
    let curve = calibrated(&app);
    let model = slide(&app);
    let z = |blur| -> Result<Vec<f64>, String> {
        let r = survey(
            &model,
            &app.geometry,
            &app.optics,
            &curve,
            &survey_cfg(&app, blur),
        )
        .map_err(|e| e.to_string())?;
        Ok(r.map
            .entries
            .iter()
            .map(|e| e.z_focus_um.unwrap_or(f64::NAN))
            .collect())
    };
    let (still, moving) = (z(0.0)?, z(110.0)?);
    let worst = still
        .iter()
        .zip(&moving)
        .map(|(a, b)| (a - b).abs())
        .fold(
            0.0,
            |m: f64, v| if v.is_nan() { f64::INFINITY } else { m.max(v) },
        );

    let est = |cfg: &SurveyConfig, tile| {
        capture_tile(&model, &app.geometry, &app.optics, cfg, cfg.z_offset, tile)
            .and_then(|f| estimate_frames(&f, &curve, &app.estimator))
            .map_err(|e| e.to_string())
    };
    let still_cfg = survey_cfg(&app, 0.0);
    let smear_cfg = SurveyConfig {
        scan_axis: ScanAxis::X,
        allow_degraded: true,
        ..survey_cfg(&app, 30.0)
    };
    let tiles: Vec<TileIndex> = model.grid().tiles().collect();
    let mut spoiled = 0;
    for &t in &tiles {
        let (a, b) = (est(&still_cfg, t)?, est(&smear_cfg, t)?);
        if !b.accepted || (a.separation_px - b.separation_px).abs() > 1.0 {
            spoiled += 1;
        }
    }
    let frac = spoiled as f64 / tiles.len() as f64;
    check(
        worst <= 0.15 && frac >= 0.9,
        format!(
            "max |z(110 px y) - z(static)| {worst:.4} um over {} tiles; x-blur control spoils {:.0}%",
            tiles.len(),
            100.0 * frac
        ),
    )
}

fn c6_oracle(run: &BenchRun) -> Outcome {
    let app = AppConfig::default();
    let plan = &app.bench;
    let mut agree = 0.0;
    let mut total = 0usize;
    for m in run
        .maps
        .iter()
        .filter(|m| m.blur_px == 0.0 && m.z_offset == plan.z_offsets[0])
    {
        let spec = plan.slides[m.slide_index].spec(&app.slide);
        let model = generate_slide(&spec, plan.slide_seed(app.seed, m.slide_index))
            .map_err(|e| e.to_string())?;
        let cmp = compare_with_brenner(
            &model,
            &app.optics,
            &m.map,
            plan.oracle_planes,
            plan.oracle_step_um,
            app.oracle_seed(),
        )
        .map_err(|e| e.to_string())?;
        let n = m.map.entries.len();
        agree += cmp.agreement_fraction * n as f64;
        total += n;
    }
    let frac = agree / total as f64;
    check(
        total == 600 && frac >= 0.95,
        format!(
            "{:.1}% of {total} static tiles within 0.5 um of refined Brenner",
            100.0 * frac
        ),
    )
}

fn c7_transparent(run: &BenchRun) -> Outcome {
    let primary = run.report.primary().ok_or("no results")?;
    let rows: Vec<_> = primary
        .rows
        .iter()
        .filter(|r| r.contrast_mode == Some(ContrastMode::Transparent))
        .collect();
    if rows.is_empty() {
        return Err("no transparent slides in the roster".into());
    }
    let mut ok = true;
    let mut parts = Vec::new();
    for r in rows {
        let c = &r.cells[0];
        let passed = c.measured_tiles as f64 / c.n_tiles as f64;
        ok &= passed >= 0.95 && c.mean_um <= 0.3;
        parts.push(format!(
            "{}: {:.0}% measured, {:.3} um",
            r.label,
            100.0 * passed,
            c.mean_um
        ));
    }
    check(ok, parts.join("; "))
}

fn c8_calibration() -> Outcome {
    let app = noiseless(&AppConfig::default());
    let curve = bench::calibrate(&app).map_err(|e| e.to_string())?;
    let slope = analytic_slope(&app.geometry);
    let slope_err = (curve.slope_px_per_um / slope - 1.0).abs();
    let mut worst_rms: f64 = 0.0;
    for seed in 0..20 {
        let c = bench::calibrate(&AppConfig {
            seed,
            ..AppConfig::default()
        })
        .map_err(|e| e.to_string())?;
        worst_rms = worst_rms.max(c.rms_residual_px);
    }
    check(
        slope_err <= 0.01 && curve.intercept_px.abs() <= 0.5 && worst_rms <= 0.5,
        format!(
            "slope {:.5} vs {slope:.5} px/um, intercept {:.4} px, worst rms {worst_rms:.4} px over 20 seeds",
            curve.slope_px_per_um, curve.intercept_px
        ),
    )
}

fn c9_determinism() -> Outcome {
    let mut app = small_app(3, 4);
    app.seed = 42;
    app.bench.slides.truncate(2);
    for s in &mut app.bench.slides {
        s.rows = 2;
        s.cols = 3;
    }
    let outputs = |workers| -> Result<Vec<Vec<u8>>, String> {
        pool(workers, || {
            let curve = calibrated(&app);
            let model = slide(&app);
            let r = survey(
                &model,
                &app.geometry,
                &app.optics,
                &curve,
                &survey_cfg(&app, 90.0),
            )
            .map_err(|e| e.to_string())?;
            let mut map_csv = Vec::new();
            r.map.write_csv(&mut map_csv).map_err(|e| e.to_string())?;
            let b = run_bench(&app).map_err(|e| e.to_string())?;
            let mut table = Vec::new();
            write_bench_table_csv(
                b.report.primary().unwrap(),
                &b.report.blur_levels,
                &mut table,
            )
            .map_err(|e| e.to_string())?;
            Ok(vec![
                map_csv,
                r.map.to_json().map_err(|e| e.to_string())?.into_bytes(),
                table,
                b.report.to_json().map_err(|e| e.to_string())?.into_bytes(),
            ])
        })
    };
    let (one, two) = (outputs(1)?, outputs(2)?);
    let bytes: usize = one.iter().map(Vec::len).sum();
    check(
        one == two,
        format!("4 artifacts, {bytes} bytes, 1 vs 2 workers"),
    )
}

fn c10_throughput() -> Outcome {
    let app = AppConfig {
        slide: SlideSpec {
            rows: 20,
            cols: 20,
            ..SlideSpec::default()
        },
        ..AppConfig::default()
    };
    let curve = calibrated(&app);
    let model = slide(&app);
    let r = pool(1, || {
        survey(
            &model,
            &app.geometry,
            &app.optics,
            &curve,
            &survey_cfg(&app, 110.0),
        )
    })
    .map_err(|e| e.to_string())?;
    let t = r.timings.estimate_s;
    check(
        t < 10.0 && r.map.entries.len() == 400,
        format!(
            "estimation {t:.2} s for 400 tiles (render {:.1} s)",
            r.timings.render_s
        ),
    )
}

fn main() -> ExitCode {
    let started = Instant::now();
    let bench = default_bench();
    let with_bench = |f: fn(&BenchRun) -> Outcome| match &bench {
        Ok(run) => f(run),
        Err(e) => Err(format!("bench failed: {e}")),
    };
    let results: Vec<(&str, Outcome)> = vec![
        ("C1 bench focusing error", with_bench(c1_bench_errors)),
        ("C2 detection range", c2_detection_range()),
        ("C3 depth-of-field coverage", with_bench(c3_dof)),
        ("C4 estimator precision", c4_estimator()),
        ("C5 blur orthogonality", c5_orthogonality()),
        ("C6 oracle agreement", with_bench(c6_oracle)),
        ("C7 transparent samples", with_bench(c7_transparent)),
        ("C8 calibration fidelity", c8_calibration()),
        ("C9 determinism", c9_determinism()),
        ("C10 throughput", c10_throughput()),
    ];
    let mut failed = 0;
    for (name, outcome) in &results {
        match outcome {
            Ok(detail) => println!("PASS {name}: {detail}"),
            Err(detail) => {
                failed += 1;
                println!("FAIL {name}: {detail}");
            }
        }
    }
    println!(
        "{} of {} criteria passed in {:.0} s",
        results.len() - failed,
        results.len(),
        started.elapsed().as_secs_f64()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
