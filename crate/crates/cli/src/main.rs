//! `dualfocus`: calibrate, survey, validate and benchmark dual-LED focus
//! map surveying on synthetic slides.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use dualfocus_core::bench::{self, format_comparison, write_bench_table_csv, write_timings_csv};
use dualfocus_core::brenner::write_oracle_csv;
use dualfocus_core::model::{from_json, to_json_with_units};
use dualfocus_core::pgm::{read_pgm, write_pgm16};
use dualfocus_core::report::{compare_with_brenner, verify_acquisition};
use dualfocus_core::{
    autocorrelate_1d, find_separation_with, generate_slide, render_dual_led, render_kohler_stack,
    separation_from_defocus, survey, AppConfig, CalibrationCurve, CaptureRequest, DefocusGeometry,
    Error, FocusMap, Frame, LagWindow, ScanAxis, SlideModel, TileIndex,
};

/// Intensity mapped to the top PGM code value.
const PGM_FULL_SCALE: f64 = 2.0;

#[derive(Debug, Parser)]
#[command(
    name = "dualfocus",
    version,
    about = "Dual-LED focus map surveying on synthetic slides"
)]
struct Cli {
    /// JSON config; absent sections and fields use defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Top-level seed (overrides the config).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit the defocus-to-separation curve on a flat target.
    Calibrate,
    /// Survey the configured slide and write its focus map.
    Survey(SurveyArgs),
    /// Survey statically, then validate every tile with a Brenner z-stack.
    Oracle(OracleArgs),
    /// Run the focusing-error benchmark over the slide roster.
    Bench(BenchArgs),
    /// Render one frame as a 16-bit PGM.
    DumpFrame(FrameArgs),
    /// Write the row-averaged autocorrelation of a frame as CSV.
    DumpProfile(ProfileArgs),
}

#[derive(Debug, Args)]
struct SurveyArgs {
    /// Motion blur per frame, px.
    #[arg(long)]
    blur: Option<f64>,
    #[arg(long, value_parser = parse_axis)]
    scan_axis: Option<ScanAxis>,
    /// Allow blur along the two-copy axis.
    #[arg(long)]
    allow_degraded: bool,
    /// Stage offset, um.
    #[arg(long)]
    z_offset: Option<f64>,
    /// Measure only every n-th tile.
    #[arg(long)]
    skip_every: Option<usize>,
    /// Calibration JSON from `calibrate`; calibrates on the fly if absent.
    #[arg(long)]
    calib: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct OracleArgs {
    /// Focus map JSON to centre the stacks on; surveys statically if absent.
    #[arg(long)]
    map: Option<PathBuf>,
    #[arg(long)]
    calib: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Also run the Brenner oracle on every static survey.
    #[arg(long)]
    oracle: bool,
}

#[derive(Debug, Args, Clone)]
struct FrameArgs {
    /// Stage height, um (default: the survey offset).
    #[arg(long)]
    z: Option<f64>,
    /// Tile as `row,col`.
    #[arg(long, value_parser = parse_tile, default_value = "0,0")]
    tile: TileIndex,
    #[arg(long, default_value_t = 0.0)]
    blur: f64,
    #[arg(long, value_parser = parse_axis, default_value = "y")]
    scan_axis: ScanAxis,
    /// Köhler illumination instead of the dual LEDs.
    #[arg(long)]
    kohler: bool,
}

#[derive(Debug, Args)]
struct ProfileArgs {
    /// PGM frame to analyse; renders one from the frame options if absent.
    #[arg(long)]
    input: Option<PathBuf>,
    #[command(flatten)]
    frame: FrameArgs,
    /// Calibration JSON whose search window is used.
    #[arg(long)]
    calib: Option<PathBuf>,
}

fn parse_axis(s: &str) -> Result<ScanAxis, String> {
    s.parse()
}

fn parse_tile(s: &str) -> Result<TileIndex, String> {
    let (r, c) = s
        .split_once(',')
        .ok_or_else(|| format!("expected row,col, got `{s}`"))?;
    let parse = |v: &str| {
        v.trim()
            .parse::<usize>()
            .map_err(|e| format!("bad tile index `{v}`: {e}"))
    };
    Ok(TileIndex::new(parse(r)?, parse(c)?))
}

/// Bad invocation detected after argument parsing.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.downcast_ref::<UsageError>().is_some() {
        return 2;
    }
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_)) => 2,
        _ => 1,
    }
}

fn load_config(cli: &Cli) -> anyhow::Result<AppConfig> {
    let mut app = match &cli.config {
        Some(path) => AppConfig::load(path)?,
        None => AppConfig::default(),
    };
    if let Some(seed) = cli.seed {
        app.seed = seed;
    }
    app.survey.seed = app.survey_seed();
    Ok(app)
}

fn create(dir: &Path, name: &str) -> anyhow::Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(f))
}

fn write_text(dir: &Path, name: &str, text: &str) -> anyhow::Result<()> {
    let mut w = create(dir, name)?;
    w.write_all(text.as_bytes())?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn load_curve(path: &Path) -> anyhow::Result<CalibrationCurve> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read calibration {}", path.display()))?;
    from_json(&text).with_context(|| format!("invalid calibration {}", path.display()))
}

fn curve_for(app: &AppConfig, calib: Option<&Path>) -> anyhow::Result<CalibrationCurve> {
    match calib {
        Some(p) => load_curve(p),
        None => Ok(bench::calibrate(app)?),
    }
}

fn slide(app: &AppConfig) -> anyhow::Result<SlideModel> {
    Ok(generate_slide(&app.slide, app.slide_seed())?)
}

fn cmd_calibrate(app: &AppConfig, out: &Path) -> anyhow::Result<()> {
    let curve = bench::calibrate(app)?;
    write_text(out, "calibration.json", &to_json_with_units(&curve)?)?;
    println!(
        "calibration {}: slope {:.6} px/um, intercept {:.4} px, rms {:.4} px",
        curve.id(),
        curve.slope_px_per_um,
        curve.intercept_px,
        curve.rms_residual_px
    );
    Ok(())
}

fn cmd_survey(mut app: AppConfig, args: &SurveyArgs, out: &Path) -> anyhow::Result<()> {
    if let Some(b) = args.blur {
        app.survey.blur_px = b;
    }
    if let Some(a) = args.scan_axis {
        app.survey.scan_axis = a;
    }
    if let Some(z) = args.z_offset {
        app.survey.z_offset = z;
    }
    if args.skip_every.is_some() {
        app.survey.skip_every = args.skip_every;
    }
    app.survey.allow_degraded |= args.allow_degraded;
    app.validate()?;
    let model = slide(&app)?;
    let curve = curve_for(&app, args.calib.as_deref())?;
    let run = survey(&model, &app.geometry, &app.optics, &curve, &app.survey)?;
    run.map.write_csv(create(out, "focus_map.csv")?)?;
    write_text(out, "focus_map.json", &run.map.to_json()?)?;
    let report = verify_acquisition(&model, &run.map)?;
    write_text(
        out,
        "survey_report.json",
        &serde_json::to_string_pretty(&report)?,
    )?;
    println!(
        "surveyed {} tiles ({} measured, {} interpolated): error {:.3} ± {:.3} um, {:.1}% within DOF",
        report.n_tiles,
        report.measured_tiles,
        report.interpolated_tiles,
        report.mean_error_um,
        report.std_error_um,
        100.0 * report.in_dof_fraction
    );
    eprintln!(
        "timings: render {:.2} s, estimate {:.2} s, total {:.2} s",
        run.timings.render_s, run.timings.estimate_s, run.timings.total_s
    );
    Ok(())
}

fn cmd_oracle(mut app: AppConfig, args: &OracleArgs, out: &Path) -> anyhow::Result<()> {
    app.survey.blur_px = 0.0;
    app.validate()?;
    let model = slide(&app)?;
    let map: FocusMap = match &args.map {
        Some(p) => {
            let text = fs::read_to_string(p)
                .with_context(|| format!("cannot read focus map {}", p.display()))?;
            serde_json::from_str(&text)
                .with_context(|| format!("invalid focus map {}", p.display()))?
        }
        None => {
            let curve = curve_for(&app, args.calib.as_deref())?;
            survey(&model, &app.geometry, &app.optics, &curve, &app.survey)?.map
        }
    };
    let cmp = compare_with_brenner(
        &model,
        &app.optics,
        &map,
        app.bench.oracle_planes,
        app.bench.oracle_step_um,
        app.oracle_seed(),
    )?;
    write_oracle_csv(&cmp.records, create(out, "oracle.csv")?)?;
    write_text(
        out,
        "oracle_report.json",
        &serde_json::to_string_pretty(&cmp)?,
    )?;
    println!(
        "oracle: {:.1}% of tiles within {} um of the Brenner focus (mean |diff| {:.3} um)",
        100.0 * cmp.agreement_fraction,
        cmp.tolerance_um,
        cmp.mean_abs_difference_um
    );
    Ok(())
}

fn cmd_bench(mut app: AppConfig, args: &BenchArgs, out: &Path) -> anyhow::Result<()> {
    app.bench.oracle |= args.oracle;
    let run = match bench::run_bench(&app) {
        Ok(run) => run,
        Err(Error::BenchFailed {
            slide,
            reason,
            partial,
        }) => {
            write_text(out, "bench_report.partial.json", &partial.to_json()?)?;
            return Err(anyhow!(
                "bench aborted on slide {slide}: {reason} (partial report written)"
            ));
        }
        Err(e) => return Err(e.into()),
    };
    let report = &run.report;
    let primary = report
        .primary()
        .ok_or_else(|| anyhow!("bench produced no results"))?;
    write_bench_table_csv(
        primary,
        &report.blur_levels,
        create(out, "bench_table.csv")?,
    )?;
    write_text(out, "bench_report.json", &report.to_json()?)?;
    write_timings_csv(&run.timings, create(out, "timings.csv")?)?;
    print!("{}", format_comparison(primary, &report.blur_levels));
    for extra in &report.offsets[1..] {
        println!("\nz_offset = {} um", extra.z_offset);
        print!("{}", format_comparison(extra, &report.blur_levels));
    }
    eprintln!("bench wall time {:.1} s", run.wall_s);
    Ok(())
}

fn render_frame(app: &AppConfig, args: &FrameArgs) -> anyhow::Result<Frame> {
    let model = slide(app)?;
    let z = args.z.unwrap_or(app.survey.z_offset);
    let seed = dualfocus_core::seed::derive(app.seed, dualfocus_core::seed::Stream::Capture, &[]);
    if args.kohler {
        let mut stack = render_kohler_stack(&model, &app.optics, args.tile, z, 1, 1.0, seed)?;
        return Ok(stack.pop().expect("one plane"));
    }
    let req = CaptureRequest::dual_led(args.tile, z, app.optics.noise_sigma, seed)
        .with_blur(args.blur, args.scan_axis);
    Ok(render_dual_led(&model, &app.geometry, &app.optics, &req)?)
}

fn cmd_dump_frame(app: &AppConfig, args: &FrameArgs, out: &Path) -> anyhow::Result<()> {
    app.validate()?;
    let frame = render_frame(app, args)?;
    let mut w = create(out, "frame.pgm")?;
    write_pgm16(frame.pixels(), PGM_FULL_SCALE, &mut w)?;
    w.flush()?;
    println!(
        "wrote {}x{} frame at z = {} um",
        frame.rows(),
        frame.cols(),
        frame.z_stage
    );
    Ok(())
}

/// Lag window spanning the geometry's detection range, clipped to the profile.
fn geometry_window(geom: &DefocusGeometry, len: usize) -> anyhow::Result<LagWindow> {
    const GUARD_PX: f64 = 3.0;
    let lo = separation_from_defocus(geom, geom.detection_z_min)? - GUARD_PX;
    let hi = separation_from_defocus(geom, geom.detection_z_max)? + GUARD_PX;
    Ok(LagWindow::new(lo.max(1.0), hi.min((len / 2) as f64 - 1.0)))
}

fn cmd_dump_profile(app: &AppConfig, args: &ProfileArgs, out: &Path) -> anyhow::Result<()> {
    app.validate()?;
    let frame = match &args.input {
        Some(p) => {
            let f = File::open(p).with_context(|| format!("cannot open {}", p.display()))?;
            Frame::from_pixels(read_pgm(BufReader::new(f), PGM_FULL_SCALE)?)?
        }
        None => render_frame(app, &args.frame)?,
    };
    let profile = autocorrelate_1d(&frame)?;
    let window = match &args.calib {
        Some(p) => load_curve(p)?.search_window(),
        None => geometry_window(&app.geometry, profile.len())?,
    };
    let mut w = create(out, "profile.csv")?;
    writeln!(w, "lag,value")?;
    for (lag, v) in profile.pairs() {
        writeln!(w, "{lag},{v}")?;
    }
    w.flush()?;
    let est = find_separation_with(&profile, window, &app.estimator)?;
    println!(
        "separation {:.3} px, quality {:.2}, sharpness {:.3}, accepted {}",
        est.separation_px, est.quality, est.sharpness, est.accepted
    );
    Ok(())
}

fn run(cli: &Cli) -> anyhow::Result<()> {
    let app = load_config(cli)?;
    fs::create_dir_all(&cli.out).with_context(|| format!("cannot create {}", cli.out.display()))?;
    let out = cli.out.as_path();
    match &cli.command {
        Command::Calibrate => cmd_calibrate(&app, out),
        Command::Survey(a) => cmd_survey(app, a, out),
        Command::Oracle(a) => cmd_oracle(app, a, out),
        Command::Bench(a) => cmd_bench(app, a, out),
        Command::DumpFrame(a) => cmd_dump_frame(&app, a, out),
        Command::DumpProfile(a) => cmd_dump_profile(&app, a, out),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.workers {
        Some(0) => Err(UsageError("--workers must be >= 1".into()).into()),
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(anyhow::Error::from)
            .and_then(|pool| pool.install(|| run(&cli))),
        None => run(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
